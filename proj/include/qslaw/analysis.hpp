// SPDX-License-Identifier: Apache-2.0
//
// Activation-outlier statistics, block-wise visual/text alignment, and the
// CSV emitters behind the analyze subcommand.

#pragma once

#include <string>
#include <vector>

#include "qslaw/data.hpp"
#include "qslaw/numerics.hpp"
#include "qslaw/toy_model.hpp"

namespace qslaw {

struct ActivationStats {
    std::string tensor_id;
    Modality modality = Modality::Multimodal;
    double kappa = 10.0;
    double density = 0.0;             // fraction of outlier elements
    std::vector<double> frequency;    // per channel: fraction of outlier tokens
};

// An element is an outlier when |x| >= kappa * median(|X|); a zero median
// falls back to the mean of |X|, and an all-zero tensor has no outliers.
ActivationStats outlier_stats(const Mat& x, double kappa);

// Captured block inputs (residual stream entering each block) for every
// sample of a batch, stacked into one matrix per block.
std::vector<Mat> capture_block_inputs(const ModelState& state, const ModalityBatch& batch);
std::vector<Mat> capture_block_outputs(const ModelState& state, const ModalityBatch& batch,
                                       std::vector<Index>* visual_rows_per_sample = nullptr);

// Paired per-modality stats for the selected blocks; two rows per block.
std::vector<ActivationStats> compare_modalities(const ModelState& state,
                                                const ModalityBatch& multimodal,
                                                const ModalityBatch& text_only,
                                                const std::vector<Index>& layers, double kappa);

struct AlignmentProfile {
    std::vector<double> mean_cosine;  // one entry per block

    double mean() const;
};

// Mean cosine similarity between visual-token and text-token hidden states
// at each block output. Zero vectors contribute cosine 0.
AlignmentProfile alignment_profile(const ModelState& state, const ModalityBatch& batch);

// CSV writers (schemas documented in the README). Deterministic bytes.
std::string outliers_csv(const std::vector<ActivationStats>& stats);
std::string alignment_csv(const AlignmentProfile& profile);

}  // namespace qslaw
