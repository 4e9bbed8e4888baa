// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "qslaw/numerics.hpp"
#include "qslaw/rng.hpp"

using namespace qslaw;

namespace {

Mat random_mat(Rng& rng, Index rows, Index cols, double sigma = 1.0) {
    Mat m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = sigma * rng.next_normal();
    return m;
}

}  // namespace

TEST_CASE("matmul identity and zero") {
    Rng rng(1);
    const Mat m = random_mat(rng, 2, 3);
    const Mat eye = Mat::Identity(2, 2);
    CHECK(matmul(eye, m) == m);
    const Mat zero = Mat::Zero(3, 2);
    CHECK(matmul(m, zero).isZero(0.0));
}

TEST_CASE("matmul hand arithmetic") {
    Mat a(2, 2), b(2, 1);
    a << 1, 2, 3, 4;
    b << 5, 6;
    const Mat c = matmul(a, b);
    CHECK(c(0, 0) == doctest::Approx(17.0).epsilon(1e-15));
    CHECK(c(1, 0) == doctest::Approx(39.0).epsilon(1e-15));
}

TEST_CASE("matmul shape mismatch throws") {
    const Mat a = Mat::Zero(2, 3), b = Mat::Zero(2, 2);
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("matmul agrees with naive loops and distributes") {
    Rng rng(2);
    for (int t = 0; t < 5; ++t) {
        const Mat a = random_mat(rng, 4, 4), b = random_mat(rng, 4, 4), c = random_mat(rng, 4, 4);
        CHECK((matmul(a, b) - oracle::naive_matmul(a, b)).cwiseAbs().maxCoeff() < 1e-12);
        const Mat left = matmul(a, Mat(b + c));
        const Mat right = matmul(a, b) + matmul(a, c);
        CHECK((left - right).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("layer_norm constant row maps to bias") {
    Mat x(1, 4);
    x << 3, 3, 3, 3;
    const Vec gain = Vec::Ones(4), bias = Vec::Zero(4);
    const Mat out = layer_norm(x, gain, bias, 1e-5);
    CHECK(out.cwiseAbs().maxCoeff() < 1e-9);

    const Vec b2 = Vec::Constant(4, 0.7);
    const Mat out2 = layer_norm(x, Vec::Zero(4).eval(), b2, 1e-5);
    for (Index c = 0; c < 4; ++c) CHECK(out2(0, c) == doctest::Approx(0.7));
}

TEST_CASE("layer_norm closed form on [1,-1]") {
    Mat x(1, 2);
    x << 1, -1;
    const Mat out = layer_norm(x, Vec::Ones(2).eval(), Vec::Zero(2).eval(), 1e-12);
    CHECK(out(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(out(0, 1) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("layer_norm rows are standardized") {
    Rng rng(3);
    const Mat x = random_mat(rng, 6, 16, 2.5);
    const Mat out = layer_norm(x, Vec::Ones(16).eval(), Vec::Zero(16).eval(), 1e-10);
    for (Index r = 0; r < out.rows(); ++r) {
        CHECK(std::abs(out.row(r).mean()) < 1e-6);
        const double var = (out.row(r).array() - out.row(r).mean()).square().mean();
        CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("layer_norm length mismatch throws") {
    const Mat x = Mat::Zero(2, 4);
    CHECK_THROWS_AS(layer_norm(x, Vec::Ones(3).eval(), Vec::Zero(4).eval(), 1e-5),
                    DimensionError);
}

TEST_CASE("layer_norm backward matches finite differences") {
    Rng rng(4);
    const Index R = 3, C = 8;
    const Mat x = random_mat(rng, R, C);
    const Vec gain = Vec::Ones(C) + 0.1 * random_mat(rng, C, 1).col(0);
    const Vec bias = 0.1 * random_mat(rng, C, 1).col(0);
    const Mat up = random_mat(rng, R, C);
    const double eps = 1e-5;

    LayerNormCache<double> cache;
    layer_norm(x, gain, bias, eps, &cache);
    const LayerNormGrads<double> g = layer_norm_backward(up, gain, cache);

    const auto loss_for = [&](const Mat& xv, const Vec& gv, const Vec& bv) {
        return (layer_norm(xv, gv, bv, eps).cwiseProduct(up)).sum();
    };
    const double h = 1e-6;
    for (const auto& [r, c] : {std::pair<Index, Index>{0, 0}, {1, 3}, {2, 7}}) {
        const double fd = oracle::central_diff(
            [&](double v) {
                Mat xp = x;
                xp(r, c) = v;
                return loss_for(xp, gain, bias);
            },
            x(r, c), h);
        CHECK(oracle::rel_err(fd, g.x(r, c), 1e-8) < 1e-5);
    }
    for (const Index c : {Index(0), Index(5)}) {
        const double fd_g = oracle::central_diff(
            [&](double v) {
                Vec gv = gain;
                gv[c] = v;
                return loss_for(x, gv, bias);
            },
            gain[c], h);
        CHECK(oracle::rel_err(fd_g, g.gain[c], 1e-8) < 1e-5);
        const double fd_b = oracle::central_diff(
            [&](double v) {
                Vec bv = bias;
                bv[c] = v;
                return loss_for(x, gain, bv);
            },
            bias[c], h);
        CHECK(oracle::rel_err(fd_b, g.bias[c], 1e-8) < 1e-5);
    }
}

TEST_CASE("row_softmax uniform and stabilized") {
    const Mat zeros = Mat::Zero(1, 5);
    const Mat u = row_softmax(zeros);
    for (Index c = 0; c < 5; ++c) CHECK(u(0, c) == doctest::Approx(0.2).epsilon(1e-12));

    Mat big(1, 2);
    big << 1000.0, 0.0;
    const Mat s = row_softmax(big);
    CHECK(s.allFinite());
    CHECK(s(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("row_softmax exponent ratio") {
    Mat x(1, 2);
    x << std::log(1.0), std::log(3.0);
    const Mat s = row_softmax(x);
    CHECK(s(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(s(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("row_softmax rows sum to one and shift invariance") {
    Rng rng(5);
    const Mat x = random_mat(rng, 8, 12, 3.0);
    const Mat s = row_softmax(x);
    for (Index r = 0; r < s.rows(); ++r) CHECK(std::abs(s.row(r).sum() - 1.0) < 1e-9);

    Mat shifted = x;
    shifted.array() += 7.25;  // same constant per row
    CHECK((row_softmax(shifted) - s).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("row_softmax rejects non-finite input") {
    Mat x(1, 2);
    x << 1.0, std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(row_softmax(x), StateError);
}

TEST_CASE("row_softmax backward matches finite differences") {
    Rng rng(6);
    const Mat x = random_mat(rng, 2, 6);
    const Mat up = random_mat(rng, 2, 6);
    const Mat y = row_softmax(x);
    const Mat gx = row_softmax_backward(up, y);
    for (const auto& [r, c] : {std::pair<Index, Index>{0, 0}, {1, 2}, {1, 5}}) {
        const double fd = oracle::central_diff(
            [&](double v) {
                Mat xp = x;
                xp(r, c) = v;
                return row_softmax(xp).cwiseProduct(up).sum();
            },
            x(r, c), 1e-6);
        CHECK(oracle::rel_err(fd, gx(r, c), 1e-8) < 1e-5);
    }
}

TEST_CASE("cross_entropy trivial values") {
    // One-hot correct rows -> 0 loss (up to numerical floor of log(1)).
    Mat p = Mat::Zero(2, 4);
    p(0, 1) = 1.0;
    p(1, 3) = 1.0;
    CHECK(cross_entropy_loss(p, {1, 3}) == doctest::Approx(0.0).epsilon(1e-15));

    // Uniform rows, N = 4 -> ln 4.
    const Mat u = Mat::Constant(3, 4, 0.25);
    CHECK(cross_entropy_loss(u, {0, 1, 2}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // Scalar case: P = [0.25, 0.75], target 1 -> -ln 0.75.
    Mat q(1, 2);
    q << 0.25, 0.75;
    CHECK(cross_entropy_loss(q, {1}) == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
}

TEST_CASE("cross_entropy masking and index errors") {
    const Mat u = Mat::Constant(2, 4, 0.25);
    CHECK(cross_entropy_loss(u, {2, -1}) == doctest::Approx(std::log(4.0)));
    CHECK_THROWS_AS(cross_entropy_loss(u, {4, 0}), IndexError);
    CHECK_THROWS_AS(cross_entropy_loss(u, {0}), DimensionError);
}

TEST_CASE("fused softmax + cross entropy gradient matches finite differences") {
    Rng rng(7);
    const Mat logits = random_mat(rng, 3, 6);
    const std::vector<std::int64_t> targets{2, -1, 4};

    const Mat probs = row_softmax(logits);
    const Mat grad = cross_entropy_backward(probs, targets);

    for (const auto& [r, c] : {std::pair<Index, Index>{0, 2}, {0, 0}, {2, 4}, {2, 1}, {1, 3}}) {
        const double fd = oracle::central_diff(
            [&](double v) {
                Mat lp = logits;
                lp(r, c) = v;
                return cross_entropy_loss(row_softmax(lp), targets);
            },
            logits(r, c), 1e-6);
        CHECK(oracle::rel_err(fd, grad(r, c), 1e-9) < 1e-5);
    }
    // Masked rows get no gradient.
    CHECK(grad.row(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gelu gradient matches finite differences") {
    Rng rng(8);
    const Mat x = random_mat(rng, 2, 5);
    const Mat g = gelu_grad(x);
    for (Index i = 0; i < x.size(); ++i) {
        const double fd = oracle::central_diff(
            [&](double v) {
                Mat xp = Mat::Constant(1, 1, v);
                return gelu(xp)(0, 0);
            },
            x.data()[i], 1e-6);
        CHECK(oracle::rel_err(fd, g.data()[i], 1e-8) < 1e-5);
    }
}

TEST_CASE("float instantiation works") {
    MatX<float> a(2, 2), b(2, 2);
    a << 1.f, 2.f, 3.f, 4.f;
    b.setIdentity();
    CHECK(matmul(a, b) == a);
    const MatX<float> s = row_softmax(MatX<float>::Zero(1, 4).eval());
    CHECK(s(0, 0) == doctest::Approx(0.25f));
}
