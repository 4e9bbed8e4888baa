// SPDX-License-Identifier: Apache-2.0
//
// Linear layer with frozen group-quantized weights and learnable per-group
// scale factors. The forward path divides each weight group by its scale,
// fake-quantizes, then multiplies the scale back; training moves only the
// scales, through a straight-through estimator.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "qslaw/numerics.hpp"
#include "qslaw/quant.hpp"

namespace qslaw {

template <typename Scalar>
class ScaledQuantLinearX {
public:
    ScaledQuantLinearX() = default;

    // Quant params are fit per group on the raw weights (scales start at 1).
    ScaledQuantLinearX(MatX<Scalar> weight, Index group_size, int bits,
                       std::span<const Scalar> clip_grid, VecX<Scalar> bias = VecX<Scalar>())
        : w_(std::move(weight)), g_(group_size), bias_(std::move(bias)) {
        if (w_.cols() % g_ != 0)
            throw ConfigError("ScaledQuantLinear: group size " + std::to_string(g_) +
                              " does not divide input dim " + std::to_string(w_.cols()));
        if (bias_.size() != 0 && bias_.size() != w_.rows())
            throw DimensionError("ScaledQuantLinear: bias length must equal output dim");
        const Index n_groups = w_.rows() * (w_.cols() / g_);
        log_s_ = VecX<Scalar>::Zero(n_groups);
        grad_log_s_ = VecX<Scalar>::Zero(n_groups);
        params_.reserve(static_cast<std::size_t>(n_groups));
        for (const GroupView& gv : partition_groups(w_, g_)) {
            std::span<const Scalar> slice(w_.row(gv.row).data() + gv.col_begin,
                                          static_cast<std::size_t>(gv.length));
            params_.push_back(init_uniform_params(slice, bits, clip_grid));
        }
    }

    Index out_dim() const { return w_.rows(); }
    Index in_dim() const { return w_.cols(); }
    Index group_size() const { return g_; }
    Index n_groups() const { return log_s_.size(); }
    Index groups_per_row() const { return w_.cols() / g_; }
    bool has_bias() const { return bias_.size() != 0; }

    const MatX<Scalar>& weight() const { return w_; }
    const VecX<Scalar>& bias_vec() const { return bias_; }
    const std::vector<QuantParamsX<Scalar>>& quant_params() const { return params_; }

    // Scales are stored as log_s so positivity holds by construction.
    VecX<Scalar>& log_scales() { return log_s_; }
    const VecX<Scalar>& log_scales() const { return log_s_; }
    VecX<Scalar>& grad_log_scales() { return grad_log_s_; }

    VecX<Scalar> scales() const { return log_s_.array().exp(); }

    void set_scales(const VecX<Scalar>& s) {
        if (s.size() != log_s_.size())
            throw DimensionError("set_scales: expected one scale per group");
        for (Index i = 0; i < s.size(); ++i)
            if (!(s[i] > Scalar(0)))
                throw StateError("set_scales: scale factors must be positive");
        log_s_ = s.array().log();
    }

    Index group_of(Index row, Index col) const { return row * groups_per_row() + col / g_; }

    // Serialization hooks for checkpointing; quant params stay frozen.
    void restore(MatX<Scalar> w, Index g, std::vector<QuantParamsX<Scalar>> params,
                 VecX<Scalar> log_s, VecX<Scalar> bias) {
        w_ = std::move(w);
        g_ = g;
        params_ = std::move(params);
        log_s_ = std::move(log_s);
        grad_log_s_ = VecX<Scalar>::Zero(log_s_.size());
        bias_ = std::move(bias);
    }

private:
    MatX<Scalar> w_;  // frozen, out x in
    Index g_ = 1;
    std::vector<QuantParamsX<Scalar>> params_;  // frozen after init
    VecX<Scalar> log_s_;
    VecX<Scalar> grad_log_s_;
    VecX<Scalar> bias_;  // frozen, optional
};

using ScaledQuantLinear = ScaledQuantLinearX<double>;

// Materialized pseudo-quantized weight plus the per-element pieces the STE
// backward needs. One materialization per layer per step is shared between
// forward and backward.
template <typename Scalar>
struct EffectiveWeightX {
    MatX<Scalar> w_eff;  // s * fakequant(w / s)
    MatX<Scalar> ste;    // d(w_eff)/d(s) per element: w_tilde - [in_range] * w_hat
};

template <typename Scalar>
EffectiveWeightX<Scalar> materialize(const ScaledQuantLinearX<Scalar>& layer) {
    const VecX<Scalar> s = layer.scales();
    for (Index i = 0; i < s.size(); ++i)
        if (!(s[i] > Scalar(0))) throw StateError("effective_weight: scale must be positive");

    const MatX<Scalar>& w = layer.weight();
    EffectiveWeightX<Scalar> out;
    out.w_eff.resize(w.rows(), w.cols());
    out.ste.resize(w.rows(), w.cols());
    const Index gpr = layer.groups_per_row();
    const Index g = layer.group_size();
    for (Index r = 0; r < w.rows(); ++r) {
        for (Index j = 0; j < gpr; ++j) {
            const Index gid = r * gpr + j;
            const Scalar sg = s[gid];
            const QuantParamsX<Scalar>& p = layer.quant_params()[static_cast<std::size_t>(gid)];
            const int hi = p.max_code();
            for (Index c = j * g; c < (j + 1) * g; ++c) {
                const Scalar w_hat = w(r, c) / sg;
                const Scalar q = round_half_away(w_hat / p.delta);
                const long raw = static_cast<long>(q) + p.zp;
                const bool in = (raw >= 0 && raw <= hi);
                const int code = static_cast<int>(std::clamp<long>(raw, 0, hi));
                const Scalar w_tilde = p.delta * Scalar(code - p.zp);
                out.w_eff(r, c) = sg * w_tilde;
                out.ste(r, c) = w_tilde - (in ? w_hat : Scalar(0));
            }
        }
    }
    return out;
}

template <typename Scalar>
MatX<Scalar> effective_weight(const ScaledQuantLinearX<Scalar>& layer) {
    return materialize(layer).w_eff;
}

// y = x * w_eff^T + bias
template <typename Scalar>
MatX<Scalar> forward(const ScaledQuantLinearX<Scalar>& layer, const MatX<Scalar>& x,
                     const EffectiveWeightX<Scalar>& eff) {
    if (x.cols() != layer.in_dim())
        throw DimensionError("ScaledQuantLinear forward: expected " +
                             std::to_string(layer.in_dim()) + " input columns, got " +
                             std::to_string(x.cols()));
    MatX<Scalar> y = x * eff.w_eff.transpose();
    if (layer.has_bias()) y.rowwise() += layer.bias_vec().transpose();
    return y;
}

template <typename Scalar>
MatX<Scalar> forward(const ScaledQuantLinearX<Scalar>& layer, const MatX<Scalar>& x) {
    return forward(layer, x, materialize(layer));
}

// grad_s[group] = sum over the group of dL/dw_eff * (w_tilde - [in_range] w_hat),
// with dL/dw_eff = grad_out^T x.
template <typename Scalar>
VecX<Scalar> backward_scale(const ScaledQuantLinearX<Scalar>& layer, const MatX<Scalar>& x,
                            const MatX<Scalar>& grad_out, const EffectiveWeightX<Scalar>& eff) {
    if (x.cols() != layer.in_dim() || grad_out.cols() != layer.out_dim() ||
        x.rows() != grad_out.rows())
        throw DimensionError("backward_scale: shapes inconsistent with forward");
    const MatX<Scalar> grad_w = grad_out.transpose() * x;  // out x in
    VecX<Scalar> grad_s = VecX<Scalar>::Zero(layer.n_groups());
    const Index gpr = layer.groups_per_row();
    const Index g = layer.group_size();
    for (Index r = 0; r < grad_w.rows(); ++r)
        for (Index j = 0; j < gpr; ++j) {
            Scalar acc = 0;
            for (Index c = j * g; c < (j + 1) * g; ++c) acc += grad_w(r, c) * eff.ste(r, c);
            grad_s[r * gpr + j] = acc;
        }
    return grad_s;
}

template <typename Scalar>
VecX<Scalar> backward_scale(const ScaledQuantLinearX<Scalar>& layer, const MatX<Scalar>& x,
                            const MatX<Scalar>& grad_out) {
    return backward_scale(layer, x, grad_out, materialize(layer));
}

// grad_x = grad_out * w_eff; the effective weight is a constant w.r.t. x.
template <typename Scalar>
MatX<Scalar> backward_input(const ScaledQuantLinearX<Scalar>& layer, const MatX<Scalar>& grad_out,
                            const EffectiveWeightX<Scalar>& eff) {
    if (grad_out.cols() != layer.out_dim())
        throw DimensionError("backward_input: grad columns must equal output dim");
    return grad_out * eff.w_eff;
}

template <typename Scalar>
MatX<Scalar> backward_input(const ScaledQuantLinearX<Scalar>& layer, const MatX<Scalar>& grad_out) {
    return backward_input(layer, grad_out, materialize(layer));
}

// ---------------------------------------------------------------------------
// Parameter accounting: learnable scales vs a LoRA adapter on the same shapes.

struct ParamBudget {
    std::int64_t scale_params = 0;
    std::int64_t lora_params = 0;
    double ratio = 0.0;
};

inline ParamBudget count_params(const std::vector<std::pair<Index, Index>>& shapes, Index g,
                                Index lora_rank) {
    if (g <= 0) throw ConfigError("count_params: group size must be positive");
    if (lora_rank < 1) throw ConfigError("count_params: lora rank must be >= 1");
    ParamBudget b;
    for (const auto& [out, in] : shapes) {
        if (in % g != 0)
            throw ConfigError("count_params: group size " + std::to_string(g) +
                              " does not divide input dim " + std::to_string(in));
        b.scale_params += static_cast<std::int64_t>(out) * in / g;
        b.lora_params += static_cast<std::int64_t>(lora_rank) * (out + in);
    }
    if (b.lora_params > 0)
        b.ratio = static_cast<double>(b.scale_params) / static_cast<double>(b.lora_params);
    return b;
}

}  // namespace qslaw
