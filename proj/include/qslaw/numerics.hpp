// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense kernels with explicit forward/backward pairs. There is no
// autograd graph; callers wire gradients by hand. All reductions run in a
// fixed order so repeated runs are bit-identical.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "qslaw/errors.hpp"

namespace qslaw {

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Mat = MatX<double>;
using Vec = VecX<double>;
using Index = Eigen::Index;

// Value plus accumulated gradient of the same shape. Gradients are zeroed at
// the start of every optimizer step.
template <typename Scalar>
struct GradPairX {
    MatX<Scalar> value;
    MatX<Scalar> grad;

    GradPairX() = default;
    explicit GradPairX(MatX<Scalar> v)
        : value(std::move(v)), grad(MatX<Scalar>::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(); }
};

using GradPair = GradPairX<double>;

template <typename Scalar>
inline void check_finite(const MatX<Scalar>& m, const char* what) {
    if (!m.allFinite()) throw StateError(std::string(what) + ": non-finite values");
}

// ---------------------------------------------------------------------------
// matmul

template <typename Scalar>
MatX<Scalar> matmul(const MatX<Scalar>& a, const MatX<Scalar>& b) {
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                             std::to_string(b.rows()));
    MatX<Scalar> out = a * b;
    check_finite(out, "matmul");
    return out;
}

// ---------------------------------------------------------------------------
// layer_norm

template <typename Scalar>
struct LayerNormCache {
    MatX<Scalar> x;
    MatX<Scalar> normalized;  // (x - mean) / std, before gain/bias
    VecX<Scalar> inv_std;     // per row
};

template <typename Scalar>
MatX<Scalar> layer_norm(const MatX<Scalar>& x, const VecX<Scalar>& gain, const VecX<Scalar>& bias,
                        Scalar eps = Scalar(1e-5), LayerNormCache<Scalar>* cache = nullptr) {
    if (gain.size() != x.cols() || bias.size() != x.cols())
        throw DimensionError("layer_norm: gain/bias length must equal column count");
    if (!(eps > Scalar(0))) throw ConfigError("layer_norm: eps must be positive");

    const Index rows = x.rows(), cols = x.cols();
    MatX<Scalar> out(rows, cols);
    MatX<Scalar> normalized(rows, cols);
    VecX<Scalar> inv_std(rows);
    for (Index r = 0; r < rows; ++r) {
        const Scalar mean = x.row(r).mean();
        const Scalar var = (x.row(r).array() - mean).square().sum() / Scalar(cols);
        const Scalar is = Scalar(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        normalized.row(r) = (x.row(r).array() - mean) * is;
        out.row(r) = normalized.row(r).cwiseProduct(gain.transpose()) + bias.transpose();
    }
    check_finite(out, "layer_norm");
    if (cache) {
        cache->x = x;
        cache->normalized = normalized;
        cache->inv_std = inv_std;
    }
    return out;
}

template <typename Scalar>
struct LayerNormGrads {
    MatX<Scalar> x;
    VecX<Scalar> gain;
    VecX<Scalar> bias;
};

template <typename Scalar>
LayerNormGrads<Scalar> layer_norm_backward(const MatX<Scalar>& grad_out,
                                           const VecX<Scalar>& gain,
                                           const LayerNormCache<Scalar>& cache) {
    const Index rows = grad_out.rows(), cols = grad_out.cols();
    if (rows != cache.x.rows() || cols != cache.x.cols())
        throw DimensionError("layer_norm_backward: shape mismatch with cached forward");

    LayerNormGrads<Scalar> g;
    g.x.resize(rows, cols);
    g.gain = VecX<Scalar>::Zero(cols);
    g.bias = VecX<Scalar>::Zero(cols);
    for (Index r = 0; r < rows; ++r) {
        auto n = cache.normalized.row(r).array();
        auto dy = grad_out.row(r).array();
        const auto dn = (dy * gain.transpose().array()).eval();
        const Scalar mean_dn = dn.mean();
        const Scalar mean_dn_n = (dn * n).mean();
        g.x.row(r) = ((dn - mean_dn - n * mean_dn_n) * cache.inv_std[r]).matrix();
        g.gain.array() += dy.transpose() * n.transpose();
        g.bias.array() += dy.transpose();
    }
    return g;
}

// ---------------------------------------------------------------------------
// row_softmax

template <typename Scalar>
MatX<Scalar> row_softmax(const MatX<Scalar>& x) {
    check_finite(x, "row_softmax input");
    MatX<Scalar> out(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        const Scalar m = x.row(r).maxCoeff();
        auto e = (x.row(r).array() - m).exp().eval();
        out.row(r) = e / e.sum();
    }
    return out;
}

// grad_x given the softmax output y and upstream grad_y.
template <typename Scalar>
MatX<Scalar> row_softmax_backward(const MatX<Scalar>& grad_y, const MatX<Scalar>& y) {
    if (grad_y.rows() != y.rows() || grad_y.cols() != y.cols())
        throw DimensionError("row_softmax_backward: shape mismatch");
    MatX<Scalar> out(y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
        const Scalar dot = grad_y.row(r).cwiseProduct(y.row(r)).sum();
        out.row(r) = (grad_y.row(r).array() - dot) * y.row(r).array();
    }
    return out;
}

// ---------------------------------------------------------------------------
// cross-entropy over already-softmaxed probabilities
//
// targets[i] is the expected column of row i; a negative target marks a
// masked (padding) row that contributes neither loss nor gradient. The
// gradient is defined with respect to pre-softmax logits, which pairs with
// row_softmax as the usual fused backward.

template <typename Scalar>
Scalar cross_entropy_loss(const MatX<Scalar>& probs, const std::vector<std::int64_t>& targets) {
    if (static_cast<Index>(targets.size()) != probs.rows())
        throw DimensionError("cross_entropy_loss: one target per row required");
    Scalar sum = 0;
    Index active = 0;
    for (Index r = 0; r < probs.rows(); ++r) {
        const std::int64_t t = targets[static_cast<std::size_t>(r)];
        if (t < 0) continue;
        if (t >= probs.cols())
            throw IndexError("cross_entropy_loss: target " + std::to_string(t) +
                             " out of range for vocab " + std::to_string(probs.cols()));
        sum -= std::log(probs(r, t));
        ++active;
    }
    if (active == 0) return Scalar(0);
    return sum / Scalar(active);
}

// d(loss)/d(logits) for the mean NLL above. `active_override` lets a caller
// average over a larger batch than this probability matrix covers.
template <typename Scalar>
MatX<Scalar> cross_entropy_backward(const MatX<Scalar>& probs,
                                    const std::vector<std::int64_t>& targets,
                                    Index active_override = -1) {
    if (static_cast<Index>(targets.size()) != probs.rows())
        throw DimensionError("cross_entropy_backward: one target per row required");
    Index active = 0;
    for (std::int64_t t : targets)
        if (t >= 0) ++active;
    if (active_override >= 0) active = active_override;
    MatX<Scalar> grad = MatX<Scalar>::Zero(probs.rows(), probs.cols());
    if (active == 0) return grad;
    const Scalar inv = Scalar(1) / Scalar(active);
    for (Index r = 0; r < probs.rows(); ++r) {
        const std::int64_t t = targets[static_cast<std::size_t>(r)];
        if (t < 0) continue;
        if (t >= probs.cols()) throw IndexError("cross_entropy_backward: target out of range");
        grad.row(r) = probs.row(r) * inv;
        grad(r, t) -= inv;
    }
    return grad;
}

// ---------------------------------------------------------------------------
// gelu (erf form), used by the toy model's MLP and projector

template <typename Scalar>
MatX<Scalar> gelu(const MatX<Scalar>& x) {
    const Scalar inv_sqrt2 = Scalar(0.70710678118654752440084436210485L);
    return x.unaryExpr([inv_sqrt2](Scalar v) {
        return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2));
    });
}

template <typename Scalar>
MatX<Scalar> gelu_grad(const MatX<Scalar>& x) {
    const Scalar inv_sqrt2 = Scalar(0.70710678118654752440084436210485L);
    const Scalar inv_sqrt2pi = Scalar(0.39894228040143267793994605993438L);
    return x.unaryExpr([=](Scalar v) {
        const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2));
        const Scalar pdf = inv_sqrt2pi * std::exp(Scalar(-0.5) * v * v);
        return cdf + v * pdf;
    });
}

}  // namespace qslaw
