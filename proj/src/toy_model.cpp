// SPDX-License-Identifier: Apache-2.0

#include "qslaw/toy_model.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "qslaw/rng.hpp"

namespace qslaw {

namespace {

Mat random_matrix(Rng& rng, Index rows, Index cols, double sigma) {
    Mat m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = sigma * rng.next_normal();
    return m;
}

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

Index ToyConfig::patch_side() const {
    Index side = 1;
    while (side * side < patches) ++side;
    if (side * side != patches) throw ConfigError("ToyConfig: patch count must be a square");
    if (image_side % side != 0)
        throw ConfigError("ToyConfig: image side must be divisible by the patch grid");
    return image_side / side;
}

void ToyConfig::validate() const {
    if (d_model % n_heads != 0) throw ConfigError("ToyConfig: d_model must divide by n_heads");
    if (vocab < vocab::kSize)
        throw ConfigError("ToyConfig: vocab must cover the tokenizer's " +
                          std::to_string(vocab::kSize) + " ids");
    if (group_size <= 0 || d_model % group_size != 0 || mlp_hidden() % group_size != 0)
        throw ConfigError("ToyConfig: group size must divide every linear input dim");
    if (bits < 2) throw ConfigError("ToyConfig: bit width must be >= 2");
    if (max_seq < patches + 2) throw ConfigError("ToyConfig: max_seq too small for visual prefix");
    patch_side();  // validates the patch grid
}

void Projector::zero_grads() {
    w1.zero_grad();
    b1.zero_grad();
    w2.zero_grad();
    b2.zero_grad();
}

Index Projector::param_count() const {
    return w1.value.size() + b1.value.size() + w2.value.size() + b2.value.size();
}

std::vector<ScaledQuantLinear*> ModelState::quant_layers() {
    std::vector<ScaledQuantLinear*> out;
    for (Block& b : blocks)
        for (ScaledQuantLinear* l : {&b.wq, &b.wk, &b.wv, &b.wo, &b.mlp1, &b.mlp2})
            out.push_back(l);
    return out;
}

std::vector<const ScaledQuantLinear*> ModelState::quant_layers() const {
    std::vector<const ScaledQuantLinear*> out;
    for (const Block& b : blocks)
        for (const ScaledQuantLinear* l : {&b.wq, &b.wk, &b.wv, &b.wo, &b.mlp1, &b.mlp2})
            out.push_back(l);
    return out;
}

std::int64_t ModelState::trainable_param_count() const {
    std::int64_t n = proj.param_count();
    for (const ScaledQuantLinear* l : quant_layers()) n += l->n_groups();
    return n;
}

std::vector<std::pair<Index, Index>> ModelState::backbone_shapes() const {
    std::vector<std::pair<Index, Index>> shapes;
    for (const Block& b : blocks)
        for (const ScaledQuantLinear* l : {&b.wq, &b.wk, &b.wv, &b.wo, &b.mlp1, &b.mlp2})
            shapes.emplace_back(l->out_dim(), l->in_dim());
    return shapes;
}

ModelState init_model(const ToyConfig& cfg) {
    cfg.validate();
    ModelState st;
    st.cfg = cfg;

    const std::vector<double> grid = default_clip_grid();
    const auto sql = [&](Rng& rng, Index out, Index in) {
        const double sigma = 1.0 / std::sqrt(static_cast<double>(in));
        return ScaledQuantLinear(random_matrix(rng, out, in, sigma), cfg.group_size, cfg.bits,
                                 grid);
    };

    {
        Rng rng(stream_seed(cfg.seed, "vision_proj"));
        st.vision_proj =
            random_matrix(rng, cfg.d_vision, cfg.patch_dim(), 1.0 / std::sqrt(12.0));
    }
    {
        Rng rng(stream_seed(cfg.seed, "projector"));
        const double s1 = std::sqrt(2.0 / static_cast<double>(cfg.d_vision + cfg.proj_hidden));
        const double s2 = std::sqrt(2.0 / static_cast<double>(cfg.proj_hidden + cfg.d_model));
        st.proj.w1 = GradPair(random_matrix(rng, cfg.proj_hidden, cfg.d_vision, s1));
        st.proj.b1 = GradPair(Mat::Zero(1, cfg.proj_hidden));
        st.proj.w2 = GradPair(random_matrix(rng, cfg.d_model, cfg.proj_hidden, s2));
        st.proj.b2 = GradPair(Mat::Zero(1, cfg.d_model));
    }
    {
        Rng rng(stream_seed(cfg.seed, "embeddings"));
        st.tok_emb = random_matrix(rng, cfg.vocab, cfg.d_model, 1.0);
        st.pos_emb = random_matrix(rng, cfg.max_seq, cfg.d_model, 0.1);
    }
    for (Index l = 0; l < cfg.n_layers; ++l) {
        Rng rng(stream_seed(cfg.seed, "block", static_cast<std::uint64_t>(l)));
        Block b;
        b.ln1_gain = Vec::Ones(cfg.d_model);
        b.ln1_bias = Vec::Zero(cfg.d_model);
        b.ln2_gain = Vec::Ones(cfg.d_model);
        b.ln2_bias = Vec::Zero(cfg.d_model);
        b.wq = sql(rng, cfg.d_model, cfg.d_model);
        b.wk = sql(rng, cfg.d_model, cfg.d_model);
        b.wv = sql(rng, cfg.d_model, cfg.d_model);
        b.wo = sql(rng, cfg.d_model, cfg.d_model);
        b.mlp1 = sql(rng, cfg.mlp_hidden(), cfg.d_model);
        b.mlp2 = sql(rng, cfg.d_model, cfg.mlp_hidden());
        st.blocks.push_back(std::move(b));
    }
    st.lnf_gain = Vec::Ones(cfg.d_model);
    st.lnf_bias = Vec::Zero(cfg.d_model);
    return st;
}

std::vector<BlockEff> materialize_blocks(const ModelState& state) {
    std::vector<BlockEff> out;
    out.reserve(state.blocks.size());
    for (const Block& b : state.blocks)
        out.push_back(BlockEff{materialize(b.wq), materialize(b.wk), materialize(b.wv),
                               materialize(b.wo), materialize(b.mlp1), materialize(b.mlp2)});
    return out;
}

// ---------------------------------------------------------------------------
// Vision stub and projector

Mat vision_encode(const Mat& image, const ModelState& state) {
    const ToyConfig& cfg = state.cfg;
    if (image.rows() != cfg.image_side * cfg.image_side || image.cols() != 3)
        throw DimensionError("vision_encode: expected " +
                             std::to_string(cfg.image_side * cfg.image_side) + "x3 image");
    const Index ps = cfg.patch_side();
    const Index grid = cfg.image_side / ps;
    Mat patches(cfg.patches, cfg.patch_dim());
    for (Index p = 0; p < cfg.patches; ++p) {
        const Index pr = (p / grid) * ps, pc = (p % grid) * ps;
        Index out = 0;
        for (Index r = 0; r < ps; ++r)
            for (Index c = 0; c < ps; ++c)
                for (Index ch = 0; ch < 3; ++ch)
                    patches(p, out++) = image((pr + r) * cfg.image_side + (pc + c), ch);
    }
    return patches * state.vision_proj.transpose();
}

Mat project(const Mat& f_i, const ModelState& state, ProjCache* cache) {
    if (f_i.cols() != state.cfg.d_vision)
        throw DimensionError("project: expected " + std::to_string(state.cfg.d_vision) +
                             " feature columns");
    Mat h_pre = f_i * state.proj.w1.value.transpose();
    h_pre.rowwise() += state.proj.b1.value.row(0);
    Mat h_act = gelu(h_pre);
    Mat out = h_act * state.proj.w2.value.transpose();
    out.rowwise() += state.proj.b2.value.row(0);
    if (cache) {
        cache->f_i = f_i;
        cache->h_pre = std::move(h_pre);
        cache->h_act = std::move(h_act);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Decoder forward
//
// Attention scores and contexts are computed strictly over each row's causal
// prefix, so positions never read data to their right.

namespace {

void attention_forward(const ModelState& state, const BlockEff& eff, const Block& blk,
                       BlockCache& c) {
    const Index T = c.a.rows();
    const Index nh = state.cfg.n_heads;
    const Index dh = state.cfg.d_model / nh;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    c.q = forward(blk.wq, c.a, eff.q);
    c.k = forward(blk.wk, c.a, eff.k);
    c.v = forward(blk.wv, c.a, eff.v);
    c.ctx.resize(T, state.cfg.d_model);
    c.attn.assign(static_cast<std::size_t>(nh), Mat());
    for (Index h = 0; h < nh; ++h) {
        auto qh = c.q.middleCols(h * dh, dh);
        auto kh = c.k.middleCols(h * dh, dh);
        auto vh = c.v.middleCols(h * dh, dh);
        Mat a = Mat::Zero(T, T);
        for (Index i = 0; i < T; ++i) {
            Eigen::RowVectorXd row = (qh.row(i) * kh.topRows(i + 1).transpose()) * inv_sqrt_dh;
            const double m = row.maxCoeff();
            Eigen::ArrayXXd e = (row.array() - m).exp();
            a.row(i).head(i + 1) = (e / e.sum()).matrix();
        }
        c.attn[static_cast<std::size_t>(h)] = a;
        for (Index i = 0; i < T; ++i)
            c.ctx.row(i).segment(h * dh, dh) = a.row(i).head(i + 1) * vh.topRows(i + 1);
    }
}

struct AttnGrads {
    Mat d_a;  // gradient w.r.t. the attention input (ln1 output)
};

AttnGrads attention_backward(ModelState& state, const BlockEff& eff, Block& blk,
                             const BlockCache& c, const Mat& d_attn_out) {
    const Index T = c.a.rows();
    const Index nh = state.cfg.n_heads;
    const Index dh = state.cfg.d_model / nh;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    const Mat d_ctx = backward_input(blk.wo, d_attn_out, eff.o);
    {
        const Vec gs = backward_scale(blk.wo, c.ctx, d_attn_out, eff.o);
        blk.wo.grad_log_scales() += gs.cwiseProduct(blk.wo.scales());
    }

    Mat dq = Mat::Zero(T, state.cfg.d_model);
    Mat dk = Mat::Zero(T, state.cfg.d_model);
    Mat dv = Mat::Zero(T, state.cfg.d_model);
    for (Index h = 0; h < nh; ++h) {
        const Mat& a = c.attn[static_cast<std::size_t>(h)];
        auto qh = c.q.middleCols(h * dh, dh);
        auto kh = c.k.middleCols(h * dh, dh);
        auto vh = c.v.middleCols(h * dh, dh);
        auto d_ctx_h = d_ctx.middleCols(h * dh, dh);

        dv.middleCols(h * dh, dh) += a.transpose() * d_ctx_h;

        Mat d_scores = Mat::Zero(T, T);
        for (Index i = 0; i < T; ++i) {
            auto da_row = (d_ctx_h.row(i) * vh.topRows(i + 1).transpose()).eval();
            const auto a_row = a.row(i).head(i + 1);
            const double dot = da_row.cwiseProduct(a_row).sum();
            d_scores.row(i).head(i + 1) =
                ((da_row.array() - dot) * a_row.array()).matrix() * inv_sqrt_dh;
        }
        dq.middleCols(h * dh, dh) += d_scores * kh;
        dk.middleCols(h * dh, dh) += d_scores.transpose() * qh;
    }

    AttnGrads g;
    g.d_a = backward_input(blk.wq, dq, eff.q) + backward_input(blk.wk, dk, eff.k) +
            backward_input(blk.wv, dv, eff.v);
    blk.wq.grad_log_scales() += backward_scale(blk.wq, c.a, dq, eff.q).cwiseProduct(blk.wq.scales());
    blk.wk.grad_log_scales() += backward_scale(blk.wk, c.a, dk, eff.k).cwiseProduct(blk.wk.scales());
    blk.wv.grad_log_scales() += backward_scale(blk.wv, c.a, dv, eff.v).cwiseProduct(blk.wv.scales());
    return g;
}

constexpr double kLnEps = 1e-5;

}  // namespace

Mat llm_forward(const Mat& visual, const std::vector<int>& text, const ModelState& state,
                const std::vector<BlockEff>& effs, SeqCache* cache) {
    const ToyConfig& cfg = state.cfg;
    const Index P = visual.rows();
    const Index T = P + static_cast<Index>(text.size());
    if (T > cfg.max_seq)
        throw SequenceError("llm_forward: sequence length " + std::to_string(T) +
                            " exceeds max " + std::to_string(cfg.max_seq));
    if (T == 0) throw SequenceError("llm_forward: empty sequence");
    if (P > 0 && visual.cols() != cfg.d_model)
        throw DimensionError("llm_forward: visual tokens must be d_model wide");

    Mat x(T, cfg.d_model);
    if (P > 0) x.topRows(P) = visual;
    for (Index t = 0; t < static_cast<Index>(text.size()); ++t) {
        const int id = text[static_cast<std::size_t>(t)];
        if (id < 0 || id >= cfg.vocab) throw IndexError("llm_forward: token id out of range");
        x.row(P + t) = state.tok_emb.row(id);
    }
    x += state.pos_emb.topRows(T);

    SeqCache local;
    SeqCache& sc = cache ? *cache : local;
    sc.visual_rows = P;
    sc.text_tokens = text;
    sc.x0 = x;
    sc.blocks.assign(state.blocks.size(), BlockCache());

    for (std::size_t l = 0; l < state.blocks.size(); ++l) {
        const Block& blk = state.blocks[l];
        BlockCache& bc = sc.blocks[l];
        bc.x_in = x;
        bc.a = layer_norm(x, blk.ln1_gain, blk.ln1_bias, kLnEps, &bc.ln1);
        attention_forward(state, effs[l], blk, bc);
        const Mat attn_out = forward(blk.wo, bc.ctx, effs[l].o);
        bc.x_mid = x + attn_out;
        bc.b = layer_norm(bc.x_mid, blk.ln2_gain, blk.ln2_bias, kLnEps, &bc.ln2);
        bc.h_pre = forward(blk.mlp1, bc.b, effs[l].m1);
        bc.h_act = gelu(bc.h_pre);
        const Mat mlp_out = forward(blk.mlp2, bc.h_act, effs[l].m2);
        bc.x_out = bc.x_mid + mlp_out;
        x = bc.x_out;
    }

    sc.final_h = layer_norm(x, state.lnf_gain, state.lnf_bias, kLnEps, &sc.lnf);
    const double head_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    sc.logits = (sc.final_h * state.tok_emb.transpose()) * head_scale;
    sc.probs = row_softmax(sc.logits);
    return sc.probs;
}

void backward_sample(ModelState& state, const std::vector<BlockEff>& effs, const SeqCache& cache,
                     const ProjCache* proj_cache, const Mat& dlogits) {
    // Head (tied embedding with 1/sqrt(d) scaling, frozen) and final norm.
    Mat dx = [&] {
        const double head_scale = 1.0 / std::sqrt(static_cast<double>(state.cfg.d_model));
        const Mat d_final = (dlogits * state.tok_emb) * head_scale;
        return layer_norm_backward(d_final, state.lnf_gain, cache.lnf).x;
    }();

    for (std::size_t li = state.blocks.size(); li-- > 0;) {
        Block& blk = state.blocks[li];
        const BlockCache& bc = cache.blocks[li];
        const BlockEff& eff = effs[li];

        // MLP branch: x_out = x_mid + mlp2(gelu(mlp1(ln2(x_mid)))).
        const Mat& d_x_out = dx;
        Mat d_h_act = backward_input(blk.mlp2, d_x_out, eff.m2);
        blk.mlp2.grad_log_scales() +=
            backward_scale(blk.mlp2, bc.h_act, d_x_out, eff.m2).cwiseProduct(blk.mlp2.scales());
        const Mat d_h_pre = d_h_act.cwiseProduct(gelu_grad(bc.h_pre));
        const Mat d_b = backward_input(blk.mlp1, d_h_pre, eff.m1);
        blk.mlp1.grad_log_scales() +=
            backward_scale(blk.mlp1, bc.b, d_h_pre, eff.m1).cwiseProduct(blk.mlp1.scales());
        Mat d_x_mid = d_x_out + layer_norm_backward(d_b, blk.ln2_gain, bc.ln2).x;

        // Attention branch: x_mid = x_in + wo(attention(ln1(x_in))).
        const AttnGrads ag = attention_backward(state, eff, blk, bc, d_x_mid);
        dx = d_x_mid + layer_norm_backward(ag.d_a, blk.ln1_gain, bc.ln1).x;
    }

    // Visual rows flow back through the projector; text rows stop at the
    // frozen embedding table.
    if (cache.visual_rows > 0) {
        if (!proj_cache) throw StateError("backward_sample: projector cache missing");
        const Mat d_proj_out = dx.topRows(cache.visual_rows);
        state.proj.w2.grad += d_proj_out.transpose() * proj_cache->h_act;
        state.proj.b2.grad.row(0) += d_proj_out.colwise().sum();
        Mat d_h_act = d_proj_out * state.proj.w2.value;
        const Mat d_h_pre = d_h_act.cwiseProduct(gelu_grad(proj_cache->h_pre));
        state.proj.w1.grad += d_h_pre.transpose() * proj_cache->f_i;
        state.proj.b1.grad.row(0) += d_h_pre.colwise().sum();
    }
}

void zero_grads(ModelState& state) {
    state.proj.zero_grads();
    for (ScaledQuantLinear* l : state.quant_layers()) l->grad_log_scales().setZero();
}

// ---------------------------------------------------------------------------
// Optimizer

namespace {

struct ParamRef {
    double* value;
    const double* grad;
    Index n;
};

std::vector<ParamRef> collect_params(ModelState& state) {
    std::vector<ParamRef> out;
    for (GradPair* gp : {&state.proj.w1, &state.proj.b1, &state.proj.w2, &state.proj.b2})
        out.push_back(ParamRef{gp->value.data(), gp->grad.data(), gp->value.size()});
    for (ScaledQuantLinear* l : state.quant_layers())
        out.push_back(
            ParamRef{l->log_scales().data(), l->grad_log_scales().data(), l->n_groups()});
    return out;
}

}  // namespace

void Sgd::step(ModelState& state) {
    std::vector<ParamRef> params = collect_params(state);
    if (velocity.empty()) {
        velocity.reserve(params.size());
        for (const ParamRef& p : params) velocity.push_back(Vec::Zero(p.n));
    }
    if (velocity.size() != params.size()) throw StateError("Sgd: parameter set changed");
    for (std::size_t i = 0; i < params.size(); ++i) {
        ParamRef& p = params[i];
        Vec& v = velocity[i];
        for (Index j = 0; j < p.n; ++j) {
            v[j] = momentum * v[j] + p.grad[j];
            p.value[j] -= lr * v[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Training and evaluation

double train_step(const ModalityBatch& batch, ModelState& state, Sgd& opt) {
    if (batch.batch_size() == 0) throw ConfigError("train_step: empty batch");
    const std::vector<BlockEff> effs = materialize_blocks(state);
    zero_grads(state);

    Index total_targets = 0;
    for (const auto& tgt : batch.targets)
        for (const std::int64_t t : tgt)
            if (t >= 0) ++total_targets;
    if (total_targets == 0) throw ConfigError("train_step: batch has no target positions");

    double loss_sum = 0.0;
    for (Index i = 0; i < batch.batch_size(); ++i) {
        const auto& tokens = batch.token_ids[static_cast<std::size_t>(i)];
        const auto& targets = batch.targets[static_cast<std::size_t>(i)];

        SeqCache sc;
        ProjCache pc;
        const ProjCache* pc_ptr = nullptr;
        Mat visual(0, state.cfg.d_model);
        if (batch.modality == Modality::Multimodal) {
            const Mat f_i = vision_encode(batch.images[static_cast<std::size_t>(i)], state);
            visual = project(f_i, state, &pc);
            pc_ptr = &pc;
        }
        const Mat probs = llm_forward(visual, tokens, state, effs, &sc);
        if (static_cast<Index>(targets.size()) != probs.rows())
            throw DimensionError("train_step: target row count mismatch");

        for (Index r = 0; r < probs.rows(); ++r) {
            const std::int64_t t = targets[static_cast<std::size_t>(r)];
            if (t >= 0) loss_sum -= std::log(probs(r, t));
        }
        const Mat dlogits = cross_entropy_backward(probs, targets, total_targets);
        backward_sample(state, effs, sc, pc_ptr, dlogits);
    }

    const double loss = loss_sum / static_cast<double>(total_targets);
    if (!std::isfinite(loss))
        throw StateError("training aborted: non-finite loss " + std::to_string(loss));
    opt.step(state);
    return loss;
}

int predict_answer(const ModelState& state, const std::vector<BlockEff>& effs,
                   const MultimodalSample& sample) {
    const Mat f_i = vision_encode(sample.image, state);
    const Mat visual = project(f_i, state);
    std::vector<int> prompt(sample.tokens.begin(), sample.tokens.end() - 1);
    const Mat probs = llm_forward(visual, prompt, state, effs);
    Index best = 0;
    probs.row(probs.rows() - 1).maxCoeff(&best);
    return static_cast<int>(best);
}

double exact_match_accuracy(const std::vector<MultimodalSample>& samples,
                            const std::function<int(const MultimodalSample&)>& predict) {
    if (samples.empty()) throw ConfigError("exact_match_accuracy: empty dataset");
    Index hits = 0;
    for (const MultimodalSample& s : samples)
        if (predict(s) == s.answer_token) ++hits;
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

EvalMetrics evaluate(const EvalData& data, const ModelState& state) {
    if (data.mm.empty() || data.lm_windows.empty())
        throw ConfigError("evaluate: both evaluation sets must be non-empty");
    const std::vector<BlockEff> effs = materialize_blocks(state);

    EvalMetrics m;
    m.accuracy = exact_match_accuracy(
        data.mm, [&](const MultimodalSample& s) { return predict_answer(state, effs, s); });

    double nll = 0.0;
    Index count = 0;
    const Mat no_visual(0, state.cfg.d_model);
    for (const std::vector<int>& w : data.lm_windows) {
        const Mat probs = llm_forward(no_visual, w, state, effs);
        for (std::size_t t = 0; t + 1 < w.size(); ++t) {
            nll -= std::log(probs(static_cast<Index>(t), w[t + 1]));
            ++count;
        }
    }
    m.lm_perplexity = std::exp(nll / static_cast<double>(count));
    return m;
}

}  // namespace qslaw
