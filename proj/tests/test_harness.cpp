// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "qslaw/harness.hpp"
#include "qslaw/rng.hpp"

using namespace qslaw;

namespace {

std::string tmp_dir() {
    static int counter = 0;
    const std::string dir =
        (std::filesystem::temp_directory_path() / ("qslaw_test_" + std::to_string(::getpid()) +
                                                   "_" + std::to_string(counter++)))
            .string();
    std::filesystem::create_directories(dir);
    return dir;
}

// A configuration small enough for sub-second runs.
std::string tiny_config_text(const std::string& extra = "") {
    return "d_model = 32\nn_layers = 2\nn_heads = 2\nd_vision = 16\nproj_hidden = 32\n"
           "group_size = 8\nmax_seq = 48\nsteps = 4\neval_interval = 2\nbatch_size = 2\n"
           "lr = 0.05\nseed = 11\narm = warmup\neta = 1\n" +
           extra;
}

}  // namespace

TEST_CASE("config parsing, defaults and rejection of unknown keys") {
    const RunConfig cfg = parse_run_config(tiny_config_text("# comment line\n"));
    CHECK(cfg.model.d_model == 32);
    CHECK(cfg.steps == 4);
    CHECK(cfg.arm == "warmup");
    CHECK(cfg.resolved_eta() == 1);

    CHECK_THROWS_AS(parse_run_config("bogus_key = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("steps\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(tiny_config_text("arm = nonsense\n")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(tiny_config_text("steps = x\n")), ConfigError);
    // warmup arm needs steps > eta.
    CHECK_THROWS_AS(parse_run_config(tiny_config_text("eta = 4\n")), ConfigError);
}

TEST_CASE("arm to schedule mapping") {
    RunConfig cfg = parse_run_config(tiny_config_text());
    cfg.arm = "multimodal_only";
    CHECK(schedule_modality(1000000, cfg.schedule()) == Modality::Multimodal);
    cfg.arm = "hybrid";
    CHECK(cfg.resolved_eta() == 0);
    cfg.arm = "warmup";
    cfg.eta.reset();
    cfg.steps = 100;
    CHECK(cfg.resolved_eta() == 25);  // defaults to steps / 4
}

TEST_CASE("QSLAW_SEED environment override") {
    const std::string dir = tmp_dir();
    atomic_write_file(dir + "/run.cfg", tiny_config_text());
    ::setenv("QSLAW_SEED", "777", 1);
    const RunConfig cfg = load_run_config(dir + "/run.cfg");
    ::unsetenv("QSLAW_SEED");
    CHECK(cfg.model.seed == 777);

    const RunConfig plain = load_run_config(dir + "/run.cfg");
    CHECK(plain.model.seed == 11);
}

TEST_CASE("canonical config text roundtrips") {
    const RunConfig cfg = parse_run_config(tiny_config_text("mix = 2:3\n"));
    const std::string text = canonical_config_text(cfg);
    const RunConfig again = parse_run_config(text);
    CHECK(canonical_config_text(again) == text);
    CHECK(again.mix_mm == 2);
    CHECK(again.mix_lang == 3);
}

TEST_CASE("weights file and packed container roundtrip") {
    const std::string dir = tmp_dir();
    Rng rng(41);
    Mat w(8, 32);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.next_normal();

    write_weights_file(dir + "/w.qslf", w);
    const Mat back = read_weights_file(dir + "/w.qslf");
    CHECK(back == w);

    const Nf4Codebook cb = nf4_levels();
    const std::vector<double> grid = default_clip_grid();
    for (const CodebookKind kind : {CodebookKind::Uniform, CodebookKind::Nf4}) {
        const PackedMatrix pm = quantize_matrix(w, 8, 4, kind, grid, cb);
        write_packed_file(dir + "/w.qslw", pm);
        const PackedMatrix rd = read_packed_file(dir + "/w.qslw");
        CHECK(rd.codebook == pm.codebook);
        CHECK(rd.delta == pm.delta);
        CHECK(rd.zp == pm.zp);
        CHECK(rd.packed == pm.packed);
        CHECK(dequantize_packed(rd, cb) == dequantize_packed(pm, cb));
    }

    // In-range elements of the uniform container obey the half-step bound.
    const PackedMatrix pm = quantize_matrix(w, 8, 4, CodebookKind::Uniform, grid, cb);
    const Mat deq = dequantize_packed(pm, cb);
    const Index gpr = w.cols() / pm.g;
    for (Index r = 0; r < w.rows(); ++r)
        for (Index c = 0; c < w.cols(); ++c) {
            const std::size_t gid = static_cast<std::size_t>(r * gpr + c / pm.g);
            const double delta = pm.delta[gid];
            const double ref = std::floor(std::abs(w(r, c) / delta) + 0.5) *
                               (w(r, c) < 0 ? -1.0 : 1.0);
            if (ref + pm.zp[gid] >= 0 && ref + pm.zp[gid] <= 15)
                CHECK(std::abs(deq(r, c) - w(r, c)) <= 0.5 * delta);
        }
}

TEST_CASE("nf4 beats plain min/max uniform on most gaussian groups") {
    Rng rng(42);
    Mat w(64, 2048);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.next_normal();
    const Index g = 256;

    const Nf4Codebook cb = nf4_levels();
    const std::vector<double> alpha_one{1.0};  // no clipping search on the uniform side
    const PackedMatrix uni = quantize_matrix(w, g, 4, CodebookKind::Uniform, alpha_one, cb);
    const PackedMatrix nf = quantize_matrix(w, g, 4, CodebookKind::Nf4, alpha_one, cb);
    const Mat du = dequantize_packed(uni, cb);
    const Mat dn = dequantize_packed(nf, cb);

    Index wins = 0, groups = 0;
    for (const GroupView& gv : partition_groups(w, g)) {
        double mse_u = 0.0, mse_n = 0.0;
        for (Index i = 0; i < gv.length; ++i) {
            const Index c = gv.col_begin + i;
            mse_u += (du(gv.row, c) - w(gv.row, c)) * (du(gv.row, c) - w(gv.row, c));
            mse_n += (dn(gv.row, c) - w(gv.row, c)) * (dn(gv.row, c) - w(gv.row, c));
        }
        if (mse_n < mse_u) ++wins;
        ++groups;
    }
    CHECK(groups == 512);
    CHECK(static_cast<double>(wins) / static_cast<double>(groups) >= 0.8);
}

TEST_CASE("checkpoint save/load/save is byte-identical and reproduces outputs") {
    const std::string dir = tmp_dir();
    RunConfig cfg = parse_run_config(tiny_config_text());
    cfg.out_dir = dir;

    ModelState state = init_model(cfg.model);
    Sgd opt{cfg.lr, cfg.momentum, {}};
    std::vector<MultimodalSample> samples;
    for (std::uint64_t i = 0; i < 2; ++i)
        samples.push_back(gen_multimodal_sample(cfg.model.seed, i));
    train_step(collate_multimodal(samples, cfg.model.patches), state, opt);

    save_checkpoint(dir + "/a.qsck", cfg, state, 1);
    LoadedCheckpoint loaded = load_checkpoint(dir + "/a.qsck");
    save_checkpoint(dir + "/b.qsck", loaded.cfg, loaded.state, loaded.step);
    CHECK(read_file(dir + "/a.qsck") == read_file(dir + "/b.qsck"));

    // Forward outputs reproduce bit-identically after a load roundtrip.
    const auto effs1 = materialize_blocks(state);
    const auto effs2 = materialize_blocks(loaded.state);
    const std::vector<int> text = tokenize("the dog sees");
    const Mat p1 = llm_forward(Mat(0, cfg.model.d_model), text, state, effs1);
    const Mat p2 = llm_forward(Mat(0, cfg.model.d_model), text, loaded.state, effs2);
    CHECK(p1 == p2);

    CHECK_THROWS_AS(load_checkpoint(dir + "/missing.qsck"), FileError);
}

TEST_CASE("run_experiment step grid and determinism") {
    RunConfig cfg = parse_run_config(tiny_config_text());
    const RunResult r1 = run_experiment(cfg);
    REQUIRE(r1.rows.size() == 3);  // steps 0, 2, 4
    CHECK(r1.rows[0].step == 0);
    CHECK(r1.rows[1].step == 2);
    CHECK(r1.rows[2].step == 4);

    const RunResult r2 = run_experiment(cfg);
    for (std::size_t i = 0; i < r1.rows.size(); ++i) {
        CHECK(r1.rows[i].train_loss == r2.rows[i].train_loss);
        CHECK(r1.rows[i].eval_accuracy == r2.rows[i].eval_accuracy);
        CHECK(r1.rows[i].lm_perplexity == r2.rows[i].lm_perplexity);
    }
    CHECK(r1.state.proj.w1.value == r2.state.proj.w1.value);
}

TEST_CASE("three arms share the step grid") {
    std::vector<std::vector<MetricsRow>> grids;
    for (const std::string arm : {"multimodal_only", "hybrid", "warmup"}) {
        RunConfig cfg = parse_run_config(tiny_config_text());
        cfg.arm = arm;
        if (arm != "warmup") cfg.eta.reset();
        grids.push_back(run_experiment(cfg).rows);
    }
    for (const auto& rows : grids) {
        REQUIRE(rows.size() == grids[0].size());
        for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].step == grids[0][i].step);
    }
}

TEST_CASE("cli_train writes metrics and checkpoint; zero steps equals init") {
    const std::string dir = tmp_dir();
    RunConfig cfg = parse_run_config(tiny_config_text());
    cfg.out_dir = dir;
    cfg.steps = 0;
    cfg.arm = "hybrid";  // steps=0 is invalid for warmup (needs steps > eta)
    cfg.eta.reset();
    cli_train(cfg);

    CHECK(std::filesystem::exists(dir + "/metrics.csv"));
    CHECK(std::filesystem::exists(dir + "/checkpoint.qsck"));

    const LoadedCheckpoint ck = load_checkpoint(dir + "/checkpoint.qsck");
    const ModelState fresh = init_model(cfg.model);
    CHECK(ck.state.proj.w1.value == fresh.proj.w1.value);
    CHECK(ck.state.blocks[0].wq.log_scales() == fresh.blocks[0].wq.log_scales());
    CHECK(ck.step == 0);

    const auto rows = parse_metrics_csv(read_file(dir + "/metrics.csv"));
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].step == 0);
}

TEST_CASE("metrics csv roundtrip") {
    std::vector<MetricsRow> rows{{0, "warmup", 4.125, 0.25, 61.5}, {10, "warmup", 3.5, 0.5, 40.0}};
    const std::string csv = metrics_csv(rows);
    const auto back = parse_metrics_csv(csv);
    REQUIRE(back.size() == 2);
    CHECK(back[1].step == 10);
    CHECK(back[1].arm == "warmup");
    CHECK(back[0].train_loss == 4.125);
    CHECK(back[1].lm_perplexity == 40.0);
}

TEST_CASE("cli_analyze is idempotent and emits all files") {
    const std::string dir = tmp_dir();
    RunConfig cfg = parse_run_config(tiny_config_text());
    cfg.out_dir = dir;
    cli_train(cfg);

    AnalyzeOptions opt;
    opt.mm_samples = 4;
    opt.text_samples = 2;
    cli_analyze(dir + "/checkpoint.qsck", dir + "/analysis", opt);
    const std::string outliers1 = read_file(dir + "/analysis/outliers.csv");
    const std::string alignment1 = read_file(dir + "/analysis/alignment.csv");
    CHECK(std::filesystem::exists(dir + "/analysis/outliers.svg"));
    CHECK(std::filesystem::exists(dir + "/analysis/alignment.svg"));

    cli_analyze(dir + "/checkpoint.qsck", dir + "/analysis", opt);
    CHECK(read_file(dir + "/analysis/outliers.csv") == outliers1);
    CHECK(read_file(dir + "/analysis/alignment.csv") == alignment1);

    // alignment.csv rows = n_layers (+ header).
    CHECK(std::count(alignment1.begin(), alignment1.end(), '\n') == 1 + cfg.model.n_layers);

    CHECK_THROWS_AS(cli_analyze(dir + "/nope.qsck", dir + "/analysis", opt), FileError);
}

TEST_CASE("cli_report renders charts from metrics files") {
    const std::string dir = tmp_dir();
    atomic_write_file(dir + "/m1.csv", metrics_csv({{0, "hybrid", 4.0, 0.2, 60.0},
                                                    {5, "hybrid", 3.0, 0.4, 50.0}}));
    atomic_write_file(dir + "/m2.csv", metrics_csv({{0, "warmup", 4.0, 0.3, 58.0},
                                                    {5, "warmup", 2.5, 0.6, 52.0}}));
    cli_report({dir + "/m1.csv", dir + "/m2.csv"}, dir + "/report");
    CHECK(std::filesystem::exists(dir + "/report/train_loss.svg"));
    CHECK(std::filesystem::exists(dir + "/report/eval_accuracy.svg"));
    CHECK(std::filesystem::exists(dir + "/report/lm_perplexity.svg"));
    const std::string svg = read_file(dir + "/report/train_loss.svg");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("hybrid") != std::string::npos);
    CHECK(svg.find("warmup") != std::string::npos);
}
