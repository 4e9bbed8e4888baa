// SPDX-License-Identifier: Apache-2.0
//
// qslaw command line: train, quantize, analyze, report.
// Exit codes: 0 ok, 2 usage/config error, 3 runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "qslaw/containers.hpp"
#include "qslaw/harness.hpp"

namespace {

using namespace qslaw;

int cmd_train(const std::string& config_path, const std::string& arm_override,
              const std::string& out_override, long long steps_override) {
    RunConfig cfg = load_run_config(config_path);
    if (!arm_override.empty()) cfg.arm = arm_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (steps_override >= 0) cfg.steps = static_cast<std::uint64_t>(steps_override);
    cfg.validate();
    cli_train(cfg);
    std::printf("wrote %s/metrics.csv and %s/checkpoint.qsck\n", cfg.out_dir.c_str(),
                cfg.out_dir.c_str());
    return 0;
}

int cmd_quantize(const std::string& input, const std::string& output, long long g, int k,
                 const std::string& codebook, bool compare) {
    const Mat w = read_weights_file(input);
    const Nf4Codebook cb = nf4_levels();
    const std::vector<double> grid = default_clip_grid();
    const CodebookKind kind =
        codebook == "nf4" ? CodebookKind::Nf4 : CodebookKind::Uniform;
    if (codebook != "nf4" && codebook != "uniform")
        throw ConfigError("codebook must be 'uniform' or 'nf4', got '" + codebook + "'");

    const PackedMatrix pm = quantize_matrix(w, g, k, kind, grid, cb);
    write_packed_file(output, pm);

    if (compare) {
        const PackedMatrix uni = quantize_matrix(w, g, k, CodebookKind::Uniform, grid, cb);
        const PackedMatrix nf = quantize_matrix(w, g, 4, CodebookKind::Nf4, grid, cb);
        const Mat du = dequantize_packed(uni, cb);
        const Mat dn = dequantize_packed(nf, cb);
        const double mse_u = (du - w).squaredNorm() / static_cast<double>(w.size());
        const double mse_n = (dn - w).squaredNorm() / static_cast<double>(w.size());
        std::fprintf(stderr, "layer %s: uniform_mse=%.10g nf4_mse=%.10g\n", input.c_str(), mse_u,
                     mse_n);
    }
    std::printf("wrote %s (%lldx%lld, g=%lld, k=%d, %s)\n", output.c_str(),
                static_cast<long long>(pm.rows), static_cast<long long>(pm.cols),
                static_cast<long long>(pm.g), pm.k, codebook.c_str());
    return 0;
}

std::vector<Index> parse_layer_list(const std::string& s) {
    std::vector<Index> out;
    std::size_t at = 0;
    while (at < s.size()) {
        std::size_t comma = s.find(',', at);
        if (comma == std::string::npos) comma = s.size();
        out.push_back(static_cast<Index>(std::stoll(s.substr(at, comma - at))));
        at = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qslaw: quantization-aware scale learning toolkit"};
    app.require_subcommand(1);

    std::string config_path, arm_override, out_dir, codebook = "uniform";
    std::string input, output, checkpoint, layers_str;
    long long steps_override = -1, g = 128;
    int k = 4;
    bool compare = false;
    AnalyzeOptions aopt;
    std::vector<std::string> metrics_paths;

    CLI::App* train = app.add_subcommand("train", "train the toy model");
    train->add_option("--config", config_path, "run configuration file")->required();
    train->add_option("--arm", arm_override, "multimodal_only | hybrid | warmup");
    train->add_option("--out", out_dir, "output directory override");
    train->add_option("--steps", steps_override, "step count override");

    CLI::App* quantize = app.add_subcommand("quantize", "quantize a QSLF weights file");
    quantize->add_option("input", input, "QSLF weights file")->required();
    quantize->add_option("--out", output, "output QSLW file")->required();
    quantize->add_option("--group-size", g, "group size (default 128)");
    quantize->add_option("--bits", k, "bit width (default 4)");
    quantize->add_option("--codebook", codebook, "uniform | nf4");
    quantize->add_flag("--compare", compare, "print per-layer MSE for both codebooks to stderr");

    CLI::App* analyze = app.add_subcommand("analyze", "emit outlier/alignment reports");
    analyze->add_option("checkpoint", checkpoint, "QSCK checkpoint")->required();
    analyze->add_option("--out", out_dir, "output directory")->required();
    analyze->add_option("--kappa", aopt.kappa, "outlier threshold multiplier (default 10)");
    analyze->add_option("--layers", layers_str, "comma-separated block ids (default all)");
    analyze->add_option("--mm", aopt.mm_samples, "multimodal probe batch size");
    analyze->add_option("--text", aopt.text_samples, "text probe batch size");

    CLI::App* report = app.add_subcommand("report", "render comparison charts from metrics CSVs");
    report->add_option("metrics", metrics_paths, "metrics.csv files")->required();
    report->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (train->parsed())
            return cmd_train(config_path, arm_override, out_dir, steps_override);
        if (quantize->parsed()) return cmd_quantize(input, output, g, k, codebook, compare);
        if (analyze->parsed()) {
            if (!layers_str.empty()) aopt.layers = parse_layer_list(layers_str);
            cli_analyze(checkpoint, out_dir, aopt);
            std::printf("wrote outlier/alignment reports to %s\n", out_dir.c_str());
            return 0;
        }
        if (report->parsed()) {
            cli_report(metrics_paths, out_dir);
            std::printf("wrote comparison charts to %s\n", out_dir.c_str());
            return 0;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 2;
}
