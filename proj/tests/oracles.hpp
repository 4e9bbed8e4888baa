// SPDX-License-Identifier: Apache-2.0
//
// Test-only reference implementations, kept independent of the library code
// paths they check.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "qslaw/numerics.hpp"
#include "qslaw/quant.hpp"

namespace qslaw::oracle {

// Standard normal CDF via erf, and its inverse by bisection. This is the
// reference route for the quantile codebook; the library uses a rational
// approximation instead.
inline double normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double inv_normal_cdf_bisect(double p) {
    double lo = -12.0, hi = 12.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (normal_cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Central finite difference of a scalar function.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Relative error with an absolute floor for near-zero pairs.
inline double rel_err(double a, double b, double floor = 1e-12) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Independent elementwise evaluation of the piecewise straight-through
// formula, computed from raw weights and quant params with scalar loops.
inline Vec ste_grad_s(const Mat& w, const std::vector<QuantParams>& params, const Vec& s,
                      Index g, const Mat& grad_w_eff) {
    const Index gpr = w.cols() / g;
    Vec grad = Vec::Zero(w.rows() * gpr);
    for (Index r = 0; r < w.rows(); ++r)
        for (Index c = 0; c < w.cols(); ++c) {
            const Index gid = r * gpr + c / g;
            const QuantParams& p = params[static_cast<std::size_t>(gid)];
            const double w_hat = w(r, c) / s[gid];
            const double q = std::floor(std::abs(w_hat / p.delta) + 0.5) *
                             (w_hat / p.delta < 0 ? -1.0 : 1.0);
            const long raw = static_cast<long>(q) + p.zp;
            const bool in = raw >= 0 && raw <= p.max_code();
            const long code = std::clamp<long>(raw, 0, p.max_code());
            const double w_tilde = p.delta * static_cast<double>(code - p.zp);
            grad[gid] += grad_w_eff(r, c) * (w_tilde - (in ? w_hat : 0.0));
        }
    return grad;
}

// Naive scalar-loop matrix product.
inline Mat naive_matmul(const Mat& a, const Mat& b) {
    Mat out = Mat::Zero(a.rows(), b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < b.cols(); ++j)
            for (Index k = 0; k < a.cols(); ++k) out(i, j) += a(i, k) * b(k, j);
    return out;
}

// Scalar-loop causal transformer reference for one block, one head. Takes
// pre-materialized dense weight matrices so it stays independent of the
// quantized layer implementation.
struct DenseBlockWeights {
    Mat wq, wk, wv, wo;  // d x d
    Mat w1;              // h x d
    Mat w2;              // d x h
    Vec ln1_g, ln1_b, ln2_g, ln2_b;
};

inline Mat ref_layer_norm(const Mat& x, const Vec& g, const Vec& b, double eps) {
    Mat out(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        double mean = 0;
        for (Index c = 0; c < x.cols(); ++c) mean += x(r, c);
        mean /= static_cast<double>(x.cols());
        double var = 0;
        for (Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
        var /= static_cast<double>(x.cols());
        for (Index c = 0; c < x.cols(); ++c)
            out(r, c) = (x(r, c) - mean) / std::sqrt(var + eps) * g[c] + b[c];
    }
    return out;
}

inline double ref_gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

inline Mat ref_block_forward(const Mat& x_in, const DenseBlockWeights& w, double eps) {
    const Index T = x_in.rows(), d = x_in.cols();
    const Mat a = ref_layer_norm(x_in, w.ln1_g, w.ln1_b, eps);
    const Mat q = naive_matmul(a, Mat(w.wq.transpose()));
    const Mat k = naive_matmul(a, Mat(w.wk.transpose()));
    const Mat v = naive_matmul(a, Mat(w.wv.transpose()));

    Mat ctx = Mat::Zero(T, d);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (Index i = 0; i < T; ++i) {
        std::vector<double> scores(static_cast<std::size_t>(i + 1));
        double mx = -1e300;
        for (Index j = 0; j <= i; ++j) {
            double s = 0;
            for (Index c = 0; c < d; ++c) s += q(i, c) * k(j, c);
            scores[static_cast<std::size_t>(j)] = s * inv_sqrt_d;
            mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
        }
        double denom = 0;
        for (Index j = 0; j <= i; ++j) denom += std::exp(scores[static_cast<std::size_t>(j)] - mx);
        for (Index j = 0; j <= i; ++j) {
            const double aij = std::exp(scores[static_cast<std::size_t>(j)] - mx) / denom;
            for (Index c = 0; c < d; ++c) ctx(i, c) += aij * v(j, c);
        }
    }
    const Mat x_mid = x_in + naive_matmul(ctx, Mat(w.wo.transpose()));

    const Mat b = ref_layer_norm(x_mid, w.ln2_g, w.ln2_b, eps);
    Mat h = naive_matmul(b, Mat(w.w1.transpose()));
    for (Index i = 0; i < h.size(); ++i) h.data()[i] = ref_gelu(h.data()[i]);
    return x_mid + naive_matmul(h, Mat(w.w2.transpose()));
}

}  // namespace qslaw::oracle
