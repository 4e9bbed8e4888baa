// SPDX-License-Identifier: Apache-2.0
//
// Group-wise weight quantization: NF4 quantile codebook, clipped uniform
// affine quantization with grid-searched clipping, and 4-bit nibble packing.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qslaw/errors.hpp"
#include "qslaw/numerics.hpp"

namespace qslaw {

// Rounds half away from zero. The single tie rule used everywhere.
template <typename Scalar>
inline Scalar round_half_away(Scalar x) {
    return std::floor(std::abs(x) + Scalar(0.5)) * (x < Scalar(0) ? Scalar(-1) : Scalar(1));
}

// ---------------------------------------------------------------------------
// Group partitioning
//
// Groups run along the input-channel (column) dimension: each row of an
// out x in weight matrix splits into in/g contiguous slices.

struct GroupView {
    int layer = 0;  // caller-assigned layer id
    Index row = 0;
    Index group = 0;      // group index within the row
    Index col_begin = 0;  // first column of the slice
    Index length = 0;     // == g
};

inline std::vector<GroupView> partition_groups(Index rows, Index cols, Index g, int layer = 0) {
    if (g <= 0 || cols % g != 0)
        throw ConfigError("partition_groups: group size " + std::to_string(g) +
                          " does not divide input dimension " + std::to_string(cols));
    std::vector<GroupView> out;
    out.reserve(static_cast<std::size_t>(rows * (cols / g)));
    for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < cols / g; ++j)
            out.push_back(GroupView{layer, r, j, j * g, g});
    return out;
}

template <typename Scalar>
std::vector<GroupView> partition_groups(const MatX<Scalar>& weight, Index g, int layer = 0) {
    return partition_groups(weight.rows(), weight.cols(), g, layer);
}

// ---------------------------------------------------------------------------
// Uniform affine quantization (step size delta, zero point zp, bit width k)

template <typename Scalar>
struct QuantParamsX {
    Scalar delta = Scalar(1);  // > 0
    int zp = 0;                // in [0, 2^k - 1]
    int k = 4;                 // >= 2

    int max_code() const { return (1 << k) - 1; }
};

using QuantParams = QuantParamsX<double>;

template <typename Scalar>
struct FakeQuantResult {
    std::vector<Scalar> values;  // dequantized
    std::vector<int> codes;
    std::vector<bool> in_range;  // pre-clamp code landed inside [0, 2^k - 1]
};

// code = clamp(round(w/delta) + zp, 0, 2^k - 1); dequant = delta * (code - zp).
template <typename Scalar>
FakeQuantResult<Scalar> uniform_fakequant(std::span<const Scalar> group,
                                          const QuantParamsX<Scalar>& p) {
    if (!(p.delta > Scalar(0))) throw StateError("uniform_fakequant: delta must be positive");
    const int hi = p.max_code();
    FakeQuantResult<Scalar> out;
    out.values.resize(group.size());
    out.codes.resize(group.size());
    out.in_range.resize(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
        const Scalar q = round_half_away(group[i] / p.delta);
        const long raw = static_cast<long>(q) + p.zp;
        const int code = static_cast<int>(std::clamp<long>(raw, 0, hi));
        out.codes[i] = code;
        out.in_range[i] = (raw >= 0 && raw <= hi);
        out.values[i] = p.delta * Scalar(code - p.zp);
    }
    return out;
}

// Clipped min/max initialization: for each clip ratio alpha in the grid,
// delta = alpha*(max-min)/(2^k-1), zp = clamp(round(-alpha*min/delta)), and
// the (delta, zp) with the lowest mean squared dequantization error wins.
// Ties go to the larger alpha.
template <typename Scalar>
QuantParamsX<Scalar> init_uniform_params(std::span<const Scalar> group, int k,
                                         std::span<const Scalar> clip_grid) {
    if (group.empty()) throw ConfigError("init_uniform_params: empty group");
    if (clip_grid.empty()) throw ConfigError("init_uniform_params: empty clip grid");
    if (k < 2) throw ConfigError("init_uniform_params: bit width must be >= 2");

    const auto [mn_it, mx_it] = std::minmax_element(group.begin(), group.end());
    const Scalar mn = *mn_it, mx = *mx_it;
    if (mx == mn) return QuantParamsX<Scalar>{Scalar(1e-8), 0, k};

    const int hi = (1 << k) - 1;
    QuantParamsX<Scalar> best{Scalar(1), 0, k};
    Scalar best_mse = std::numeric_limits<Scalar>::infinity();
    Scalar best_alpha = Scalar(-1);
    for (const Scalar alpha : clip_grid) {
        if (!(alpha > Scalar(0)) || alpha > Scalar(1))
            throw ConfigError("init_uniform_params: clip ratios must lie in (0, 1]");
        QuantParamsX<Scalar> p;
        p.k = k;
        p.delta = alpha * (mx - mn) / Scalar(hi);
        p.zp = static_cast<int>(
            std::clamp<Scalar>(round_half_away(-alpha * mn / p.delta), Scalar(0), Scalar(hi)));
        const auto fq = uniform_fakequant(group, p);
        Scalar mse = 0;
        for (std::size_t i = 0; i < group.size(); ++i) {
            const Scalar e = fq.values[i] - group[i];
            mse += e * e;
        }
        mse /= Scalar(group.size());
        if (mse < best_mse || (mse == best_mse && alpha > best_alpha)) {
            best_mse = mse;
            best = p;
            best_alpha = alpha;
        }
    }
    return best;
}

inline std::vector<double> default_clip_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 10; ++i) g.push_back(1.0 - 0.05 * i);  // 1.00 .. 0.50
    return g;
}

// ---------------------------------------------------------------------------
// NF4 codebook
//
// 16 levels built from the standard Gaussian quantile function: 17 evenly
// spaced probability points spanning [offset_eps, 1 - offset_eps] (the i/17
// grid shifted into the clamped range; Q(0) and Q(1) diverge), with each
// level the midpoint of two consecutive quantiles. Levels are rescaled so
// max |level| = 1, and the positive half is mirrored so the symmetry is
// exact in floating point.

inline double inverse_normal_cdf(double p);  // defined below

template <typename Scalar>
struct Nf4CodebookX {
    std::vector<Scalar> levels;       // 16, sorted ascending, max |level| = 1
    std::vector<Scalar> bin_edges;    // 17 Gaussian-scale quantile edges Q(p_i)
    Scalar gauss_scale = Scalar(1);   // max |level| before rescaling
    Scalar offset_eps = Scalar(0);

    static constexpr Scalar default_offset() { return Scalar(1) / Scalar(34); }
};

using Nf4Codebook = Nf4CodebookX<double>;

template <typename Scalar = double>
Nf4CodebookX<Scalar> nf4_levels(Scalar offset_eps = Nf4CodebookX<Scalar>::default_offset()) {
    if (!(offset_eps > Scalar(0)) || offset_eps > Scalar(1) / Scalar(34))
        throw ConfigError("nf4_levels: offset_eps must lie in (0, 1/34]");

    const double eps = static_cast<double>(offset_eps);
    const double h = (1.0 - 2.0 * eps) / 16.0;
    std::vector<double> q(17);
    for (int i = 0; i < 17; ++i) q[static_cast<std::size_t>(i)] = inverse_normal_cdf(eps + i * h);

    std::vector<double> raw(16);
    for (int i = 8; i < 16; ++i) {
        raw[static_cast<std::size_t>(i)] =
            0.5 * (q[static_cast<std::size_t>(i)] + q[static_cast<std::size_t>(i + 1)]);
        raw[static_cast<std::size_t>(15 - i)] = -raw[static_cast<std::size_t>(i)];
    }
    const double scale = raw[15];

    Nf4CodebookX<Scalar> cb;
    cb.offset_eps = offset_eps;
    cb.gauss_scale = Scalar(scale);
    cb.levels.resize(16);
    for (int i = 0; i < 16; ++i)
        cb.levels[static_cast<std::size_t>(i)] = Scalar(raw[static_cast<std::size_t>(i)] / scale);
    cb.bin_edges.assign(q.begin(), q.end());
    return cb;
}

// Nearest level by absolute distance; ties take the lower index.
template <typename Scalar>
int nearest_level(Scalar x, const std::vector<Scalar>& levels) {
    int best = 0;
    Scalar best_d = std::abs(x - levels[0]);
    for (int i = 1; i < static_cast<int>(levels.size()); ++i) {
        const Scalar d = std::abs(x - levels[static_cast<std::size_t>(i)]);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

template <typename Scalar>
struct Nf4Quantized {
    std::vector<std::uint8_t> codes;
    Scalar absmax = Scalar(1);
};

// Normalizes by the group's absolute maximum and maps each value to the
// nearest codebook level. An all-zero group keeps absmax = 1 so the codes
// fall on the level nearest zero.
template <typename Scalar>
Nf4Quantized<Scalar> nf4_quantize(std::span<const Scalar> group, const Nf4CodebookX<Scalar>& cb) {
    if (group.empty()) throw ConfigError("nf4_quantize: empty group");
    Scalar absmax = 0;
    for (const Scalar v : group) absmax = std::max(absmax, std::abs(v));
    if (absmax == Scalar(0)) absmax = Scalar(1);
    Nf4Quantized<Scalar> out;
    out.absmax = absmax;
    out.codes.resize(group.size());
    for (std::size_t i = 0; i < group.size(); ++i)
        out.codes[i] = static_cast<std::uint8_t>(nearest_level(group[i] / absmax, cb.levels));
    return out;
}

template <typename Scalar>
std::vector<Scalar> nf4_dequantize(std::span<const std::uint8_t> codes, Scalar absmax,
                                   const Nf4CodebookX<Scalar>& cb) {
    std::vector<Scalar> out(codes.size());
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (codes[i] >= cb.levels.size()) throw EncodingError("nf4_dequantize: code out of range");
        out[i] = cb.levels[codes[i]] * absmax;
    }
    return out;
}

// ---------------------------------------------------------------------------
// 4-bit packing: element 2i in the low nibble, element 2i+1 in the high
// nibble of byte i; odd counts pad the final high nibble with zero.

inline std::vector<std::uint8_t> pack_nibbles(std::span<const int> codes) {
    std::vector<std::uint8_t> out((codes.size() + 1) / 2, 0);
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (codes[i] < 0 || codes[i] > 15)
            throw EncodingError("pack_nibbles: code " + std::to_string(codes[i]) +
                                " does not fit in 4 bits");
        const auto v = static_cast<std::uint8_t>(codes[i]);
        if (i % 2 == 0)
            out[i / 2] = v;
        else
            out[i / 2] = static_cast<std::uint8_t>(out[i / 2] | (v << 4));
    }
    return out;
}

inline std::vector<int> unpack_nibbles(std::span<const std::uint8_t> bytes, std::size_t count) {
    if (count > bytes.size() * 2)
        throw EncodingError("unpack_nibbles: count exceeds packed capacity");
    std::vector<int> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint8_t b = bytes[i / 2];
        out[i] = (i % 2 == 0) ? (b & 0x0f) : (b >> 4);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Inverse standard-normal CDF (Wichura's AS241, double precision).

inline double inverse_normal_cdf(double p) {
    if (!(p > 0.0) || !(p < 1.0)) throw ConfigError("inverse_normal_cdf: p must lie in (0, 1)");
    const double q = p - 0.5;
    double r, num, den;
    if (std::abs(q) <= 0.425) {
        r = 0.180625 - q * q;
        num = q * (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                        6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                      1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
                    1.3314166789178437745e2) * r + 3.3871328727963666080e0);
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                    3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
                  5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
                4.2313330701600911252e1) * r + 1.0);
        return num / den;
    }
    r = (q < 0.0) ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    if (r <= 5.0) {
        r -= 1.6;
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                    2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                  3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
                4.63033784615654529590e0) * r + 1.42343711074968357734e0);
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                    1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                  6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
                2.05319162663775882187e0) * r + 1.0);
    } else {
        r -= 5.0;
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                    1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                  2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
                5.46378491116411436990e0) * r + 6.65790464350110377720e0);
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                    1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                  1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                5.99832206555887937690e-1) * r + 1.0);
    }
    const double val = num / den;
    return (q < 0.0) ? -val : val;
}

}  // namespace qslaw
