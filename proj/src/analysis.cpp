// SPDX-License-Identifier: Apache-2.0

#include "qslaw/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace qslaw {

namespace {

double median_abs(const Mat& x) {
    std::vector<double> v(static_cast<std::size_t>(x.size()));
    for (Index i = 0; i < x.size(); ++i) v[static_cast<std::size_t>(i)] = std::abs(x.data()[i]);
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

ActivationStats outlier_stats(const Mat& x, double kappa) {
    if (x.size() == 0) throw ConfigError("outlier_stats: empty tensor");
    if (!(kappa > 0.0)) throw ConfigError("outlier_stats: kappa must be positive");

    ActivationStats st;
    st.kappa = kappa;
    st.frequency.assign(static_cast<std::size_t>(x.cols()), 0.0);

    double m = median_abs(x);
    if (m == 0.0) m = x.cwiseAbs().mean();
    if (m == 0.0) return st;  // all-zero tensor

    const double thresh = kappa * m;
    Index total = 0;
    for (Index r = 0; r < x.rows(); ++r)
        for (Index c = 0; c < x.cols(); ++c)
            if (std::abs(x(r, c)) >= thresh) {
                ++total;
                st.frequency[static_cast<std::size_t>(c)] += 1.0;
            }
    st.density = static_cast<double>(total) / static_cast<double>(x.size());
    for (double& f : st.frequency) f /= static_cast<double>(x.rows());
    return st;
}

namespace {

// Runs the batch forward once, returning per-block stacked matrices of either
// block inputs or block outputs.
std::vector<Mat> capture_blocks(const ModelState& state, const ModalityBatch& batch, bool outputs,
                                std::vector<Index>* visual_rows_per_sample) {
    if (batch.batch_size() == 0) throw ConfigError("capture_blocks: empty batch");
    const std::vector<BlockEff> effs = materialize_blocks(state);
    const std::size_t n_blocks = state.blocks.size();

    std::vector<std::vector<Mat>> rows(n_blocks);
    for (Index i = 0; i < batch.batch_size(); ++i) {
        Mat visual(0, state.cfg.d_model);
        if (batch.modality == Modality::Multimodal) {
            const Mat f_i = vision_encode(batch.images[static_cast<std::size_t>(i)], state);
            visual = project(f_i, state);
        }
        SeqCache sc;
        llm_forward(visual, batch.token_ids[static_cast<std::size_t>(i)], state, effs, &sc);
        if (visual_rows_per_sample) visual_rows_per_sample->push_back(sc.visual_rows);
        for (std::size_t b = 0; b < n_blocks; ++b)
            rows[b].push_back(outputs ? sc.blocks[b].x_out : sc.blocks[b].x_in);
    }

    std::vector<Mat> out(n_blocks);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        Index total = 0;
        for (const Mat& m : rows[b]) total += m.rows();
        Mat stacked(total, state.cfg.d_model);
        Index at = 0;
        for (const Mat& m : rows[b]) {
            stacked.middleRows(at, m.rows()) = m;
            at += m.rows();
        }
        out[b] = std::move(stacked);
    }
    return out;
}

}  // namespace

std::vector<Mat> capture_block_inputs(const ModelState& state, const ModalityBatch& batch) {
    return capture_blocks(state, batch, false, nullptr);
}

std::vector<Mat> capture_block_outputs(const ModelState& state, const ModalityBatch& batch,
                                       std::vector<Index>* visual_rows_per_sample) {
    return capture_blocks(state, batch, true, visual_rows_per_sample);
}

std::vector<ActivationStats> compare_modalities(const ModelState& state,
                                                const ModalityBatch& multimodal,
                                                const ModalityBatch& text_only,
                                                const std::vector<Index>& layers, double kappa) {
    if (multimodal.modality != Modality::Multimodal || text_only.modality != Modality::Linguistic)
        throw ConfigError("compare_modalities: batches must be one multimodal, one linguistic");
    for (const Index l : layers)
        if (l < 0 || l >= static_cast<Index>(state.blocks.size()))
            throw ConfigError("compare_modalities: invalid layer id " + std::to_string(l));

    const std::vector<Mat> mm_acts = capture_block_inputs(state, multimodal);
    const std::vector<Mat> tx_acts = capture_block_inputs(state, text_only);

    std::vector<ActivationStats> out;
    for (const Index l : layers) {
        for (const Modality mod : {Modality::Multimodal, Modality::Linguistic}) {
            const Mat& acts = (mod == Modality::Multimodal) ? mm_acts[static_cast<std::size_t>(l)]
                                                            : tx_acts[static_cast<std::size_t>(l)];
            ActivationStats st = outlier_stats(acts, kappa);
            st.tensor_id = "block" + std::to_string(l) + ".input";
            st.modality = mod;
            out.push_back(std::move(st));
        }
    }
    return out;
}

double AlignmentProfile::mean() const {
    if (mean_cosine.empty()) return 0.0;
    double s = 0.0;
    for (const double v : mean_cosine) s += v;
    return s / static_cast<double>(mean_cosine.size());
}

AlignmentProfile alignment_profile(const ModelState& state, const ModalityBatch& batch) {
    if (batch.modality != Modality::Multimodal)
        throw ConfigError("alignment_profile: batch must be multimodal");

    std::vector<Index> visual_rows;
    const std::vector<Mat> outs = capture_block_outputs(state, batch, &visual_rows);

    // Per block, cosine over all (visual, text) pairs within each sample.
    AlignmentProfile profile;
    for (const Mat& stacked : outs) {
        double sum = 0.0;
        std::int64_t pairs = 0;
        Index at = 0;
        for (Index i = 0; i < batch.batch_size(); ++i) {
            const Index P = visual_rows[static_cast<std::size_t>(i)];
            const Index T =
                P + static_cast<Index>(batch.token_ids[static_cast<std::size_t>(i)].size());
            if (P == 0 || T == P)
                throw ConfigError("alignment_profile: sample lacks one modality's tokens");
            for (Index v = 0; v < P; ++v)
                for (Index t = P; t < T; ++t) {
                    const auto& hv = stacked.row(at + v);
                    const auto& ht = stacked.row(at + t);
                    const double nv = hv.norm(), nt = ht.norm();
                    sum += (nv == 0.0 || nt == 0.0) ? 0.0 : hv.dot(ht) / (nv * nt);
                    ++pairs;
                }
            at += T;
        }
        profile.mean_cosine.push_back(sum / static_cast<double>(pairs));
    }
    return profile;
}

std::string outliers_csv(const std::vector<ActivationStats>& stats) {
    std::string out = "layer,modality,density,channel,frequency\n";
    for (const ActivationStats& st : stats)
        for (std::size_t c = 0; c < st.frequency.size(); ++c) {
            out += st.tensor_id;
            out += ',';
            out += modality_name(st.modality);
            out += ',';
            out += format_double(st.density);
            out += ',';
            out += std::to_string(c);
            out += ',';
            out += format_double(st.frequency[c]);
            out += '\n';
        }
    return out;
}

std::string alignment_csv(const AlignmentProfile& profile) {
    std::string out = "block,mean_cosine\n";
    for (std::size_t b = 0; b < profile.mean_cosine.size(); ++b) {
        out += std::to_string(b);
        out += ',';
        out += format_double(profile.mean_cosine[b]);
        out += '\n';
    }
    return out;
}

}  // namespace qslaw
