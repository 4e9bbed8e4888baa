// SPDX-License-Identifier: Apache-2.0
//
// A miniature multimodal LM: frozen patch-projection vision stub, trainable
// two-layer MLP projector, and a causal decoder whose linear layers are
// ScaledQuantLinear. Only the per-group scales and the projector train.
// Backward passes are written by hand; there is no autograd.

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "qslaw/data.hpp"
#include "qslaw/numerics.hpp"
#include "qslaw/scale_learn.hpp"

namespace qslaw {

struct ToyConfig {
    Index d_model = 64;
    Index n_layers = 2;
    Index n_heads = 4;
    Index vocab = 64;
    Index max_seq = 64;
    Index patches = 16;
    Index image_side = 8;
    Index d_vision = 32;
    Index proj_hidden = 64;
    Index group_size = 16;
    int bits = 4;
    std::uint64_t seed = 0;

    Index patch_side() const;
    Index patch_dim() const { return patch_side() * patch_side() * 3; }
    Index mlp_hidden() const { return 4 * d_model; }
    void validate() const;
};

struct Projector {
    GradPair w1;  // hidden x d_vision
    GradPair b1;  // 1 x hidden
    GradPair w2;  // d_model x hidden
    GradPair b2;  // 1 x d_model

    void zero_grads();
    Index param_count() const;
};

struct Block {
    Vec ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // frozen
    ScaledQuantLinear wq, wk, wv, wo;            // d x d
    ScaledQuantLinear mlp1;                      // 4d x d
    ScaledQuantLinear mlp2;                      // d x 4d
};

struct ModelState {
    ToyConfig cfg;
    Mat vision_proj;  // frozen, d_vision x patch_dim
    Projector proj;   // trainable
    Mat tok_emb;      // frozen, vocab x d_model; head is tied to this
    Mat pos_emb;      // frozen, max_seq x d_model
    std::vector<Block> blocks;
    Vec lnf_gain, lnf_bias;  // frozen

    std::vector<ScaledQuantLinear*> quant_layers();
    std::vector<const ScaledQuantLinear*> quant_layers() const;
    std::int64_t trainable_param_count() const;
    std::vector<std::pair<Index, Index>> backbone_shapes() const;
};

ModelState init_model(const ToyConfig& cfg);

// Per-block materialized effective weights; computed once per step or batch.
struct BlockEff {
    EffectiveWeightX<double> q, k, v, o, m1, m2;
};
std::vector<BlockEff> materialize_blocks(const ModelState& state);

// ---------------------------------------------------------------------------
// Forward caches

struct ProjCache {
    Mat f_i;     // vision features, patches x d_vision
    Mat h_pre;   // pre-activation hidden
    Mat h_act;
};

struct BlockCache {
    Mat x_in;                 // block input (residual stream)
    LayerNormCache<double> ln1;
    Mat a;                    // ln1 output
    Mat q, k, v;              // T x d
    std::vector<Mat> attn;    // per head, T x T (masked rows zeroed)
    Mat ctx;                  // T x d
    Mat x_mid;                // after attention residual
    LayerNormCache<double> ln2;
    Mat b;                    // ln2 output
    Mat h_pre;                // T x 4d
    Mat h_act;
    Mat x_out;                // block output
};

struct SeqCache {
    Index visual_rows = 0;
    std::vector<int> text_tokens;
    Mat x0;
    std::vector<BlockCache> blocks;
    LayerNormCache<double> lnf;
    Mat final_h;
    Mat logits;
    Mat probs;
};

// ---------------------------------------------------------------------------
// Ops

// Non-overlapping patches flattened and projected by the frozen stub.
Mat vision_encode(const Mat& image, const ModelState& state);

// Two-layer MLP into the word-embedding space.
Mat project(const Mat& f_i, const ModelState& state, ProjCache* cache = nullptr);

// Causal decoder over [visual tokens; text embeddings]; returns row-softmax
// probabilities, one row per position. `visual` may have zero rows.
Mat llm_forward(const Mat& visual, const std::vector<int>& text, const ModelState& state,
                const std::vector<BlockEff>& effs, SeqCache* cache = nullptr);

// Accumulates gradients for the projector and every layer's log-scales.
// `dlogits` is dL/d(pre-softmax logits). `proj_cache` may be null for
// text-only sequences.
void backward_sample(ModelState& state, const std::vector<BlockEff>& effs, const SeqCache& cache,
                     const ProjCache* proj_cache, const Mat& dlogits);

struct Sgd {
    double lr = 0.05;
    double momentum = 0.9;
    std::vector<Vec> velocity;

    void step(ModelState& state);
};

void zero_grads(ModelState& state);

// One optimizer step over a homogeneous batch; returns the pre-update loss.
// Throws StateError if the loss is not finite.
double train_step(const ModalityBatch& batch, ModelState& state, Sgd& opt);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalData {
    std::vector<MultimodalSample> mm;
    std::vector<std::vector<int>> lm_windows;
};

struct EvalMetrics {
    double accuracy = 0.0;
    double lm_perplexity = 0.0;
};

// Greedy answer prediction for one sample (answer token not fed as input).
int predict_answer(const ModelState& state, const std::vector<BlockEff>& effs,
                   const MultimodalSample& sample);

double exact_match_accuracy(const std::vector<MultimodalSample>& samples,
                            const std::function<int(const MultimodalSample&)>& predict);

EvalMetrics evaluate(const EvalData& data, const ModelState& state);

}  // namespace qslaw
