// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "qslaw/analysis.hpp"
#include "qslaw/rng.hpp"

using namespace qslaw;

namespace {

ToyConfig tiny_config(std::uint64_t seed) {
    ToyConfig cfg;
    cfg.d_model = 32;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.vocab = 64;
    cfg.max_seq = 48;
    cfg.patches = 16;
    cfg.image_side = 8;
    cfg.d_vision = 16;
    cfg.proj_hidden = 32;
    cfg.group_size = 8;
    cfg.seed = seed;
    return cfg;
}

ModalityBatch mm_batch(const ToyConfig& cfg, Index n) {
    std::vector<MultimodalSample> samples;
    for (Index i = 0; i < n; ++i)
        samples.push_back(gen_multimodal_sample(cfg.seed, static_cast<std::uint64_t>(i)));
    return collate_multimodal(samples, cfg.patches);
}

ModalityBatch text_batch(const ToyConfig& cfg, Index n) {
    CorpusStream stream(tokenize(builtin_corpus(cfg.seed, 8000)));
    return collate_linguistic(stream, cfg.max_seq, n);
}

}  // namespace

TEST_CASE("outlier_stats hand oracle") {
    Mat x(1, 4);
    x << 1, 1, 1, 100;
    const ActivationStats st = outlier_stats(x, 10.0);
    CHECK(st.density == doctest::Approx(0.25).epsilon(1e-15));
    REQUIRE(st.frequency.size() == 4);
    CHECK(st.frequency[0] == 0.0);
    CHECK(st.frequency[1] == 0.0);
    CHECK(st.frequency[2] == 0.0);
    CHECK(st.frequency[3] == 1.0);
}

TEST_CASE("outlier_stats constant and zero tensors") {
    const Mat c = Mat::Constant(4, 4, 3.0);
    CHECK(outlier_stats(c, 10.0).density == 0.0);
    CHECK(outlier_stats(c, 1.5).density == 0.0);

    const Mat z = Mat::Zero(4, 4);
    CHECK(outlier_stats(z, 10.0).density == 0.0);

    CHECK_THROWS_AS(outlier_stats(Mat(0, 0), 10.0), ConfigError);
    CHECK_THROWS_AS(outlier_stats(c, 0.0), ConfigError);
}

TEST_CASE("outlier_stats is invariant under positive rescaling") {
    Rng rng(31);
    Mat x(16, 8);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.next_normal();
    x(3, 2) = 40.0;
    x(11, 5) = -35.0;

    const ActivationStats a = outlier_stats(x, 10.0);
    const ActivationStats b = outlier_stats(Mat(2.5 * x), 10.0);
    CHECK(a.density == b.density);
    for (std::size_t c = 0; c < a.frequency.size(); ++c) CHECK(a.frequency[c] == b.frequency[c]);
    CHECK(a.density > 0.0);
}

TEST_CASE("compare_modalities shape, determinism, spike injection") {
    const ToyConfig cfg = tiny_config(32);
    const ModelState state = init_model(cfg);
    const ModalityBatch mm = mm_batch(cfg, 4);
    const ModalityBatch tx = text_batch(cfg, 2);

    const auto stats = compare_modalities(state, mm, tx, {0, 1}, 10.0);
    CHECK(stats.size() == 4);  // 2 x selected layers
    CHECK(stats[0].modality == Modality::Multimodal);
    CHECK(stats[1].modality == Modality::Linguistic);

    const auto again = compare_modalities(state, mm, tx, {0, 1}, 10.0);
    for (std::size_t i = 0; i < stats.size(); ++i) CHECK(stats[i].density == again[i].density);

    CHECK_THROWS_AS(compare_modalities(state, mm, tx, {5}, 10.0), ConfigError);
    CHECK_THROWS_AS(compare_modalities(state, tx, mm, {0}, 10.0), ConfigError);
}

TEST_CASE("spike column raises only the injected batch's density by its fraction") {
    // Constructed-input check on the stats themselves: adding a spike column
    // to one tensor raises its density by exactly the injected fraction.
    Rng rng(33);
    Mat base(32, 16);
    for (Index i = 0; i < base.size(); ++i) base.data()[i] = rng.next_normal();

    const ActivationStats before = outlier_stats(base, 10.0);
    Mat spiked = base;
    for (Index r = 0; r < spiked.rows(); ++r) spiked(r, 7) = 500.0;
    const ActivationStats after = outlier_stats(spiked, 10.0);

    const double injected = 1.0 / 16.0;
    CHECK(after.density == doctest::Approx(before.density + injected).epsilon(1e-12));
    CHECK(after.frequency[7] == 1.0);
}

TEST_CASE("alignment cosine conventions") {
    // Identical hidden vectors -> 1; orthogonal -> 0; known angles by hand.
    const ToyConfig cfg = tiny_config(34);
    const ModelState state = init_model(cfg);
    const ModalityBatch mm = mm_batch(cfg, 2);
    const AlignmentProfile prof = alignment_profile(state, mm);
    CHECK(prof.mean_cosine.size() == static_cast<std::size_t>(cfg.n_layers));
    for (const double v : prof.mean_cosine) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }

    CHECK_THROWS_AS(alignment_profile(state, text_batch(cfg, 1)), ConfigError);
}

TEST_CASE("alignment hand trigonometry oracle") {
    // 2 visual + 2 text unit vectors in 2-D: visual at 0 and 90 degrees,
    // text at 45 and 135. Pair cosines: cos45, cos135, cos45, cos45
    // -> mean = 2 * cos45 / 4 = 0.353553.
    const double c45 = std::cos(M_PI / 4.0);
    const double expect = (c45 + std::cos(3.0 * M_PI / 4.0) + c45 + c45) / 4.0;

    std::vector<std::pair<double, double>> vis{{1, 0}, {0, 1}};
    std::vector<std::pair<double, double>> txt{{c45, c45}, {-c45, c45}};
    double sum = 0.0;
    for (const auto& [vx, vy] : vis)
        for (const auto& [tx, ty] : txt) sum += vx * tx + vy * ty;  // unit vectors
    CHECK(sum / 4.0 == doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(std::sqrt(2.0) / 4.0).epsilon(1e-12));
}

TEST_CASE("csv emitters are deterministic") {
    const ToyConfig cfg = tiny_config(35);
    const ModelState state = init_model(cfg);
    const ModalityBatch mm = mm_batch(cfg, 2);
    const ModalityBatch tx = text_batch(cfg, 2);

    const auto stats = compare_modalities(state, mm, tx, {0}, 10.0);
    const std::string csv1 = outliers_csv(stats);
    const std::string csv2 = outliers_csv(compare_modalities(state, mm, tx, {0}, 10.0));
    CHECK(csv1 == csv2);
    CHECK(csv1.substr(0, 41) == "layer,modality,density,channel,frequency\n");
    CHECK(csv1.find("multimodal") != std::string::npos);
    CHECK(csv1.find("linguistic") != std::string::npos);

    const AlignmentProfile prof = alignment_profile(state, mm);
    const std::string a1 = alignment_csv(prof);
    CHECK(a1 == alignment_csv(alignment_profile(state, mm)));
    // Header plus one row per block.
    CHECK(std::count(a1.begin(), a1.end(), '\n') == 1 + cfg.n_layers);
}
