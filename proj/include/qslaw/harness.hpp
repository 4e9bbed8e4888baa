// SPDX-License-Identifier: Apache-2.0
//
// Run configuration, checkpointing, and the experiment driver behind the
// train / analyze / report subcommands.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qslaw/analysis.hpp"
#include "qslaw/containers.hpp"
#include "qslaw/data.hpp"
#include "qslaw/toy_model.hpp"

namespace qslaw {

// Flat key=value configuration; unknown keys are rejected.
struct RunConfig {
    ToyConfig model;

    std::string arm = "warmup";  // multimodal_only | hybrid | warmup
    std::optional<std::uint64_t> eta;  // warmup length; defaults to steps/4
    std::uint32_t mix_mm = 1;
    std::uint32_t mix_lang = 1;
    std::uint64_t steps = 1000;
    std::uint64_t eval_interval = 100;
    Index batch_size = 8;
    double lr = 0.05;
    double momentum = 0.9;
    std::string corpus_path;  // empty -> built-in corpus
    std::string out_dir = ".";

    std::uint64_t resolved_eta() const;
    WarmupSchedule schedule() const;
    void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);  // applies QSLAW_SEED override
std::string canonical_config_text(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoints: magic "QSCK", version, canonical config echo, step counter,
// then every model tensor (frozen and trainable) by name. A checkpoint
// saved, loaded, and saved again is byte-identical.

void save_checkpoint(const std::string& path, const RunConfig& cfg, const ModelState& state,
                     std::uint64_t step);

struct LoadedCheckpoint {
    RunConfig cfg;
    ModelState state;
    std::uint64_t step = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Training driver

struct MetricsRow {
    std::uint64_t step = 0;
    std::string arm;
    double train_loss = 0.0;
    double eval_accuracy = 0.0;
    double lm_perplexity = 0.0;
};

struct RunResult {
    std::vector<MetricsRow> rows;
    ModelState state;  // final
};

// Deterministic train/eval split of the corpus plus fixed held-out samples.
struct RunData {
    std::vector<int> train_tokens;
    EvalData eval;
};

RunData prepare_run_data(const RunConfig& cfg);

RunResult run_experiment(const RunConfig& cfg);

std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);

// Runs training and writes metrics.csv + checkpoint.qsck into cfg.out_dir.
void cli_train(const RunConfig& cfg);

struct AnalyzeOptions {
    double kappa = 10.0;
    std::vector<Index> layers;  // empty -> all blocks
    Index mm_samples = 16;
    Index text_samples = 8;
};

// Writes outliers.csv, alignment.csv and their SVG renderings. Idempotent.
void cli_analyze(const std::string& checkpoint_path, const std::string& out_dir,
                 const AnalyzeOptions& opt);

// Combines metrics CSVs from several runs into comparison SVG charts.
void cli_report(const std::vector<std::string>& metrics_paths, const std::string& out_dir);

}  // namespace qslaw
