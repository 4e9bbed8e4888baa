// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multimodal instruction data, a linguistic corpus stream, the
// byte-level tokenizer, and the modality-aware warmup scheduler.

#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "qslaw/numerics.hpp"

namespace qslaw {

enum class Modality { Multimodal, Linguistic };

inline const char* modality_name(Modality m) {
    return m == Modality::Multimodal ? "multimodal" : "linguistic";
}

// ---------------------------------------------------------------------------
// Tokenizer: fixed vocabulary of 64 ids.
//   0..3   specials: pad, bos, img (reserved image placeholder), unk
//   4..11  single-token answers: 4 colors then 4 shapes
//   12..63 byte-level characters (kCharset)

namespace vocab {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kImg = 2;
inline constexpr int kUnk = 3;
inline constexpr int kAnswerBase = 4;
inline constexpr int kNumAnswers = 8;
inline constexpr int kCharBase = 12;
inline constexpr int kSize = 64;

inline constexpr const char* kCharset = "abcdefghijklmnopqrstuvwxyz \n0123456789.,?!'-:;()\"/=+";
inline constexpr const char* kAnswerWords[kNumAnswers] = {"red",    "green",    "blue",   "yellow",
                                                          "square", "triangle", "circle", "cross"};
}  // namespace vocab

std::vector<int> tokenize(const std::string& text);
std::string detokenize(const std::vector<int>& ids);

// ---------------------------------------------------------------------------
// Multimodal samples: an 8x8 RGB grid holding one colored shape, a question
// asking for the shape or the color, and a one-token answer. Fully
// determined by (seed, idx).

struct MultimodalSample {
    Mat image;               // (side*side) x 3, row-major pixels, values in [0, 1]
    std::vector<int> tokens; // bos + question chars + answer token
    int answer_token = 0;
    bool asks_shape = false;
    int color = 0;  // 0..3
    int shape = 0;  // 0..3
};

inline constexpr int kImageSide = 8;

MultimodalSample gen_multimodal_sample(std::uint64_t seed, std::uint64_t idx);

// Reads the answer back out of a rendered image; used to confirm labels.
int classify_image(const Mat& image, bool asks_shape);

// ---------------------------------------------------------------------------
// Linguistic corpus

// Built-in corpus: words drawn i.i.d. from a fixed distribution, joined by
// single spaces. The unigram character entropy has a closed form.
std::string builtin_corpus(std::uint64_t seed, std::size_t approx_chars);
double builtin_corpus_unigram_entropy();  // nats per token

// Token stream chunked into fixed windows (stride == window, no overlap),
// cycling when exhausted.
class CorpusStream {
public:
    explicit CorpusStream(std::vector<int> tokens);

    std::vector<int> next_window(Index window);
    Index size() const { return static_cast<Index>(tokens_.size()); }
    void reset() { cursor_ = 0; }

private:
    std::vector<int> tokens_;
    std::size_t cursor_ = 0;
};

std::vector<int> load_corpus_tokens(const std::string& path);

// ---------------------------------------------------------------------------
// Batches

struct ModalityBatch {
    Modality modality = Modality::Multimodal;
    std::vector<Mat> images;                     // one per sample; empty for linguistic
    std::vector<std::vector<int>> token_ids;     // text tokens per sample
    std::vector<std::vector<std::int64_t>> targets;  // aligned to full-sequence logit rows
    Index batch_size() const { return static_cast<Index>(token_ids.size()); }
};

// Assembles a multimodal batch; targets cover only the answer position and
// account for the `patches` visual rows prepended by the model.
ModalityBatch collate_multimodal(const std::vector<MultimodalSample>& samples, Index patches);

// Next-token batch over corpus windows; every position is a target.
ModalityBatch collate_linguistic(CorpusStream& stream, Index window, Index batch_size);

// ---------------------------------------------------------------------------
// Warmup schedule: the first eta steps are multimodal only; afterwards a
// deterministic interleave with ratio mm:lang (reduced to coprime form).

struct WarmupSchedule {
    std::uint64_t eta = 0;
    std::uint32_t mm = 1;
    std::uint32_t lang = 1;

    WarmupSchedule() = default;
    WarmupSchedule(std::uint64_t eta_, std::uint32_t mm_, std::uint32_t lang_)
        : eta(eta_), mm(mm_), lang(lang_) {
        if (mm == 0 || lang == 0) throw ConfigError("WarmupSchedule: mix ratio parts must be > 0");
        const std::uint32_t d = std::gcd(mm, lang);
        mm /= d;
        lang /= d;
    }

    static WarmupSchedule multimodal_only() {
        WarmupSchedule s;
        s.eta = UINT64_MAX;
        return s;
    }
};

inline Modality schedule_modality(std::uint64_t step, const WarmupSchedule& sched) {
    if (step < sched.eta) return Modality::Multimodal;
    const std::uint64_t pos = (step - sched.eta) % (sched.mm + sched.lang);
    return pos < sched.mm ? Modality::Multimodal : Modality::Linguistic;
}

}  // namespace qslaw
