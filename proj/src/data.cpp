// SPDX-License-Identifier: Apache-2.0

#include "qslaw/data.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "qslaw/rng.hpp"

namespace qslaw {

namespace {

std::array<int, 256> build_char_to_id() {
    std::array<int, 256> map{};
    map.fill(vocab::kUnk);
    const char* cs = vocab::kCharset;
    for (int i = 0; cs[i]; ++i)
        map[static_cast<unsigned char>(cs[i])] = vocab::kCharBase + i;
    return map;
}

const std::array<int, 256>& char_to_id() {
    static const std::array<int, 256> map = build_char_to_id();
    return map;
}

}  // namespace

std::vector<int> tokenize(const std::string& text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (const char c : text) ids.push_back(char_to_id()[static_cast<unsigned char>(c)]);
    return ids;
}

std::string detokenize(const std::vector<int>& ids) {
    static const char* specials[] = {"<pad>", "<bos>", "<img>", "<unk>"};
    std::string out;
    for (const int id : ids) {
        if (id < 0 || id >= vocab::kSize) throw IndexError("detokenize: id out of range");
        if (id < vocab::kAnswerBase) {
            out += specials[id];
        } else if (id < vocab::kCharBase) {
            out += '<';
            out += vocab::kAnswerWords[id - vocab::kAnswerBase];
            out += '>';
        } else {
            out += vocab::kCharset[id - vocab::kCharBase];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Multimodal samples

namespace {

// 8x8 occupancy masks for the four shapes.
bool shape_mask(int shape, int r, int c) {
    switch (shape) {
        case 0:  // square: filled 4x4 block
            return r >= 2 && r <= 5 && c >= 2 && c <= 5;
        case 1:  // triangle: staircase widening downwards
            return r >= 2 && r <= 6 && c >= 2 && c <= r;
        case 2: {  // circle: ring around the center
            const double dr = r - 3.5, dc = c - 3.5;
            const double d2 = dr * dr + dc * dc;
            return d2 >= 2.0 && d2 <= 6.5;
        }
        case 3:  // cross: centered plus sign
            return (r >= 3 && r <= 4 && c >= 1 && c <= 6) || (c >= 3 && c <= 4 && r >= 1 && r <= 6);
        default:
            return false;
    }
}

constexpr double kColorChannels[4][3] = {
    {1.0, 0.0, 0.0},  // red
    {0.0, 1.0, 0.0},  // green
    {0.0, 0.0, 1.0},  // blue
    {1.0, 1.0, 0.0},  // yellow
};

constexpr double kNoiseSigma = 0.05;

}  // namespace

MultimodalSample gen_multimodal_sample(std::uint64_t seed, std::uint64_t idx) {
    Rng rng(stream_seed(seed, "mm_sample", idx));
    MultimodalSample s;
    s.shape = static_cast<int>(rng.next_below(4));
    s.color = static_cast<int>(rng.next_below(4));
    s.asks_shape = rng.next_below(2) == 0;
    const int dr = static_cast<int>(rng.next_below(3)) - 1;  // jitter in {-1, 0, 1}
    const int dc = static_cast<int>(rng.next_below(3)) - 1;

    s.image = Mat::Zero(kImageSide * kImageSide, 3);
    for (int r = 0; r < kImageSide; ++r)
        for (int c = 0; c < kImageSide; ++c) {
            const int sr = r - dr, sc = c - dc;
            const bool on = sr >= 0 && sr < kImageSide && sc >= 0 && sc < kImageSide &&
                            shape_mask(s.shape, sr, sc);
            for (int ch = 0; ch < 3; ++ch) {
                double v = on ? kColorChannels[s.color][ch] : 0.0;
                v += kNoiseSigma * rng.next_normal();
                s.image(r * kImageSide + c, ch) = std::clamp(v, 0.0, 1.0);
            }
        }

    // Questions share a length so multimodal batches stay rectangular.
    const std::string question = s.asks_shape ? "what shape?" : "what color?";
    s.answer_token = vocab::kAnswerBase + (s.asks_shape ? 4 + s.shape : s.color);
    s.tokens.push_back(vocab::kBos);
    for (const int id : tokenize(question)) s.tokens.push_back(id);
    s.tokens.push_back(s.answer_token);
    return s;
}

int classify_image(const Mat& image, bool asks_shape) {
    // Threshold channel energy to find lit pixels, then match the mean lit
    // color against the palette and the occupancy against each shape mask.
    Vec intensity(kImageSide * kImageSide);
    for (Index p = 0; p < image.rows(); ++p) intensity[p] = image.row(p).maxCoeff();
    const double thresh = 0.5;

    double mean_ch[3] = {0, 0, 0};
    int lit = 0;
    for (Index p = 0; p < image.rows(); ++p) {
        if (intensity[p] < thresh) continue;
        ++lit;
        for (int ch = 0; ch < 3; ++ch) mean_ch[ch] += image(p, ch);
    }
    if (lit > 0)
        for (double& v : mean_ch) v /= lit;
    int best_color = 0;
    double best_dist = 1e300;
    for (int color = 0; color < 4; ++color) {
        double d = 0.0;
        for (int ch = 0; ch < 3; ++ch)
            d += (mean_ch[ch] - kColorChannels[color][ch]) * (mean_ch[ch] - kColorChannels[color][ch]);
        if (d < best_dist) {
            best_dist = d;
            best_color = color;
        }
    }

    // Try every jitter offset; score = agreement between mask and occupancy.
    int best_shape = 0;
    double best = -1e9;
    for (int shape = 0; shape < 4; ++shape)
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
                double sc = 0.0;
                for (int r = 0; r < kImageSide; ++r)
                    for (int c = 0; c < kImageSide; ++c) {
                        const int sr = r - dr, sc2 = c - dc;
                        const bool on = sr >= 0 && sr < kImageSide && sc2 >= 0 &&
                                        sc2 < kImageSide && shape_mask(shape, sr, sc2);
                        const bool lit = intensity[r * kImageSide + c] >= thresh;
                        sc += (on == lit) ? 1.0 : -1.0;
                    }
                if (sc > best) {
                    best = sc;
                    best_shape = shape;
                }
            }
    return vocab::kAnswerBase + (asks_shape ? 4 + best_shape : best_color);
}

// ---------------------------------------------------------------------------
// Corpus

namespace {

struct WordEntry {
    const char* word;
    double prob;
};

// Probabilities sum to 1; the unigram character distribution (including the
// separating space) is computable in closed form from this table.
constexpr WordEntry kWordTable[] = {
    {"the", 0.20}, {"cat", 0.10},  {"dog", 0.10},  {"runs", 0.10},
    {"sees", 0.10}, {"a", 0.10},   {"red", 0.05},  {"blue", 0.05},
    {"bird", 0.05}, {"fox", 0.05}, {"jumps", 0.05}, {"over", 0.05},
};

}  // namespace

std::string builtin_corpus(std::uint64_t seed, std::size_t approx_chars) {
    Rng rng(stream_seed(seed, "corpus"));
    std::string out;
    out.reserve(approx_chars + 8);
    while (out.size() < approx_chars) {
        const double u = rng.next_unit();
        double acc = 0.0;
        const char* word = kWordTable[0].word;
        for (const WordEntry& e : kWordTable) {
            acc += e.prob;
            if (u < acc) {
                word = e.word;
                break;
            }
        }
        out += word;
        out += ' ';
    }
    return out;
}

double builtin_corpus_unigram_entropy() {
    // Each emitted word contributes its characters plus one space.
    double expected_len = 0.0;
    for (const WordEntry& e : kWordTable) expected_len += e.prob * (std::strlen(e.word) + 1.0);

    std::array<double, 256> char_mass{};
    for (const WordEntry& e : kWordTable) {
        for (const char* p = e.word; *p; ++p)
            char_mass[static_cast<unsigned char>(*p)] += e.prob;
        char_mass[static_cast<unsigned char>(' ')] += e.prob;
    }
    double h = 0.0;
    for (const double m : char_mass) {
        if (m <= 0.0) continue;
        const double p = m / expected_len;
        h -= p * std::log(p);
    }
    return h;
}

CorpusStream::CorpusStream(std::vector<int> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.empty()) throw ConfigError("CorpusStream: empty corpus");
}

std::vector<int> CorpusStream::next_window(Index window) {
    if (window <= 0) throw ConfigError("CorpusStream: window must be positive");
    std::vector<int> out(static_cast<std::size_t>(window));
    for (Index i = 0; i < window; ++i) {
        out[static_cast<std::size_t>(i)] = tokens_[cursor_];
        cursor_ = (cursor_ + 1) % tokens_.size();
    }
    return out;
}

std::vector<int> load_corpus_tokens(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FileError("cannot open corpus file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (text.empty()) throw ConfigError("corpus file is empty: " + path);
    return tokenize(text);
}

// ---------------------------------------------------------------------------
// Batches

ModalityBatch collate_multimodal(const std::vector<MultimodalSample>& samples, Index patches) {
    if (samples.empty()) throw ConfigError("collate_multimodal: empty batch");
    ModalityBatch b;
    b.modality = Modality::Multimodal;
    for (const MultimodalSample& s : samples) {
        b.images.push_back(s.image);
        b.token_ids.push_back(s.tokens);
        // Logit row t predicts input position t+1; only the answer is scored.
        const Index total = patches + static_cast<Index>(s.tokens.size());
        std::vector<std::int64_t> tgt(static_cast<std::size_t>(total), -1);
        tgt[static_cast<std::size_t>(total - 2)] = s.answer_token;
        b.targets.push_back(std::move(tgt));
    }
    return b;
}

ModalityBatch collate_linguistic(CorpusStream& stream, Index window, Index batch_size) {
    if (batch_size <= 0) throw ConfigError("collate_linguistic: batch size must be positive");
    ModalityBatch b;
    b.modality = Modality::Linguistic;
    for (Index i = 0; i < batch_size; ++i) {
        std::vector<int> w = stream.next_window(window);
        std::vector<std::int64_t> tgt(w.size(), -1);
        for (std::size_t t = 0; t + 1 < w.size(); ++t) tgt[t] = w[t + 1];
        b.token_ids.push_back(std::move(w));
        b.targets.push_back(std::move(tgt));
    }
    return b;
}

}  // namespace qslaw
