// SPDX-License-Identifier: Apache-2.0

#include "qslaw/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>

#include "qslaw/rng.hpp"
#include "qslaw/svg.hpp"

namespace qslaw {

namespace {

constexpr std::size_t kBuiltinCorpusChars = 300000;
constexpr Index kEvalMmSamples = 64;
constexpr Index kEvalLmWindows = 16;
constexpr std::uint64_t kEvalIdxBase = 1ull << 30;

std::string format_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string format_double_exact(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    std::size_t e = s.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const unsigned long long r = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
    }
}

double parse_f64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

}  // namespace

std::uint64_t RunConfig::resolved_eta() const {
    if (arm == "multimodal_only") return UINT64_MAX;
    if (arm == "hybrid") return 0;
    if (eta.has_value()) return *eta;
    return steps / 4;
}

WarmupSchedule RunConfig::schedule() const {
    if (arm == "multimodal_only") return WarmupSchedule::multimodal_only();
    return WarmupSchedule(resolved_eta(), mix_mm, mix_lang);
}

void RunConfig::validate() const {
    model.validate();
    if (arm != "multimodal_only" && arm != "hybrid" && arm != "warmup")
        throw ConfigError("arm must be multimodal_only, hybrid or warmup, got '" + arm + "'");
    if (arm == "warmup" && steps <= resolved_eta())
        throw ConfigError("warmup arm requires steps > eta");
    if (mix_mm == 0 || mix_lang == 0) throw ConfigError("mix ratio parts must be positive");
    if (eval_interval == 0) throw ConfigError("eval_interval must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));

        if (key == "seed") cfg.model.seed = parse_u64(key, val);
        else if (key == "steps") cfg.steps = parse_u64(key, val);
        else if (key == "eval_interval") cfg.eval_interval = parse_u64(key, val);
        else if (key == "batch_size") cfg.batch_size = static_cast<Index>(parse_u64(key, val));
        else if (key == "lr") cfg.lr = parse_f64(key, val);
        else if (key == "momentum") cfg.momentum = parse_f64(key, val);
        else if (key == "arm") cfg.arm = val;
        else if (key == "eta") cfg.eta = parse_u64(key, val);
        else if (key == "mix") {
            const std::size_t colon = val.find(':');
            if (colon == std::string::npos)
                throw ConfigError("config key 'mix': expected a:b, got '" + val + "'");
            cfg.mix_mm = static_cast<std::uint32_t>(parse_u64(key, trim(val.substr(0, colon))));
            cfg.mix_lang = static_cast<std::uint32_t>(parse_u64(key, trim(val.substr(colon + 1))));
        } else if (key == "corpus") cfg.corpus_path = val;
        else if (key == "out_dir") cfg.out_dir = val;
        else if (key == "d_model") cfg.model.d_model = static_cast<Index>(parse_u64(key, val));
        else if (key == "n_layers") cfg.model.n_layers = static_cast<Index>(parse_u64(key, val));
        else if (key == "n_heads") cfg.model.n_heads = static_cast<Index>(parse_u64(key, val));
        else if (key == "vocab") cfg.model.vocab = static_cast<Index>(parse_u64(key, val));
        else if (key == "max_seq") cfg.model.max_seq = static_cast<Index>(parse_u64(key, val));
        else if (key == "patches") cfg.model.patches = static_cast<Index>(parse_u64(key, val));
        else if (key == "image_side") cfg.model.image_side = static_cast<Index>(parse_u64(key, val));
        else if (key == "d_vision") cfg.model.d_vision = static_cast<Index>(parse_u64(key, val));
        else if (key == "proj_hidden") cfg.model.proj_hidden = static_cast<Index>(parse_u64(key, val));
        else if (key == "group_size") cfg.model.group_size = static_cast<Index>(parse_u64(key, val));
        else if (key == "bits") cfg.model.bits = static_cast<int>(parse_u64(key, val));
        else throw ConfigError("unknown config key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg = parse_run_config(read_file(path));
    if (const char* env = std::getenv("QSLAW_SEED")) {
        cfg.model.seed = parse_u64("QSLAW_SEED", env);
    }
    return cfg;
}

std::string canonical_config_text(const RunConfig& cfg) {
    std::string s;
    s += "arm = " + cfg.arm + "\n";
    s += "batch_size = " + std::to_string(cfg.batch_size) + "\n";
    s += "bits = " + std::to_string(cfg.model.bits) + "\n";
    if (!cfg.corpus_path.empty()) s += "corpus = " + cfg.corpus_path + "\n";
    s += "d_model = " + std::to_string(cfg.model.d_model) + "\n";
    s += "d_vision = " + std::to_string(cfg.model.d_vision) + "\n";
    if (cfg.eta.has_value()) s += "eta = " + std::to_string(*cfg.eta) + "\n";
    s += "eval_interval = " + std::to_string(cfg.eval_interval) + "\n";
    s += "group_size = " + std::to_string(cfg.model.group_size) + "\n";
    s += "image_side = " + std::to_string(cfg.model.image_side) + "\n";
    s += "lr = " + format_double_exact(cfg.lr) + "\n";
    s += "max_seq = " + std::to_string(cfg.model.max_seq) + "\n";
    s += "mix = " + std::to_string(cfg.mix_mm) + ":" + std::to_string(cfg.mix_lang) + "\n";
    s += "momentum = " + format_double_exact(cfg.momentum) + "\n";
    s += "n_heads = " + std::to_string(cfg.model.n_heads) + "\n";
    s += "n_layers = " + std::to_string(cfg.model.n_layers) + "\n";
    s += "out_dir = " + cfg.out_dir + "\n";
    s += "patches = " + std::to_string(cfg.model.patches) + "\n";
    s += "proj_hidden = " + std::to_string(cfg.model.proj_hidden) + "\n";
    s += "seed = " + std::to_string(cfg.model.seed) + "\n";
    s += "steps = " + std::to_string(cfg.steps) + "\n";
    s += "vocab = " + std::to_string(cfg.model.vocab) + "\n";
    return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void write_tensor(ByteWriter& bw, const std::string& name, const Mat& m) {
    bw.str(name);
    bw.u32(static_cast<std::uint32_t>(m.rows()));
    bw.u32(static_cast<std::uint32_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) bw.f64(m.data()[i]);
}

const char* kLayerNames[] = {"wq", "wk", "wv", "wo", "mlp1", "mlp2"};

// Fixed tensor enumeration; the checkpoint layout depends on this order.
void for_each_tensor(const ModelState& state,
                     const std::function<void(const std::string&, Mat)>& emit) {
    emit("vision_proj", state.vision_proj);
    emit("proj.w1", state.proj.w1.value);
    emit("proj.b1", state.proj.b1.value);
    emit("proj.w2", state.proj.w2.value);
    emit("proj.b2", state.proj.b2.value);
    emit("tok_emb", state.tok_emb);
    emit("pos_emb", state.pos_emb);
    for (std::size_t b = 0; b < state.blocks.size(); ++b) {
        const Block& blk = state.blocks[b];
        const std::string prefix = "blk" + std::to_string(b) + ".";
        emit(prefix + "ln1_gain", blk.ln1_gain.transpose());
        emit(prefix + "ln1_bias", blk.ln1_bias.transpose());
        emit(prefix + "ln2_gain", blk.ln2_gain.transpose());
        emit(prefix + "ln2_bias", blk.ln2_bias.transpose());
        const ScaledQuantLinear* layers[] = {&blk.wq, &blk.wk, &blk.wv, &blk.wo, &blk.mlp1,
                                             &blk.mlp2};
        for (int li = 0; li < 6; ++li) {
            const ScaledQuantLinear& l = *layers[li];
            const std::string lp = prefix + kLayerNames[li] + ".";
            emit(lp + "weight", l.weight());
            emit(lp + "log_s", l.log_scales().transpose());
            Vec delta(l.n_groups()), zp(l.n_groups());
            for (Index gi = 0; gi < l.n_groups(); ++gi) {
                delta[gi] = l.quant_params()[static_cast<std::size_t>(gi)].delta;
                zp[gi] = l.quant_params()[static_cast<std::size_t>(gi)].zp;
            }
            emit(lp + "delta", delta.transpose());
            emit(lp + "zp", zp.transpose());
        }
    }
    emit("lnf_gain", state.lnf_gain.transpose());
    emit("lnf_bias", state.lnf_bias.transpose());
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& cfg, const ModelState& state,
                     std::uint64_t step) {
    ByteWriter bw;
    bw.bytes("QSCK", 4);
    bw.u16(1);
    const std::string cfg_text = canonical_config_text(cfg);
    bw.u32(static_cast<std::uint32_t>(cfg_text.size()));
    bw.bytes(cfg_text.data(), cfg_text.size());
    bw.u64(step);

    std::uint32_t count = 0;
    for_each_tensor(state, [&](const std::string&, Mat) { ++count; });
    bw.u32(count);
    for_each_tensor(state, [&](const std::string& name, Mat m) { write_tensor(bw, name, m); });
    atomic_write_file(path, bw.data());
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    ByteReader br(read_file(path));
    char magic[4];
    br.bytes(magic, 4);
    if (std::memcmp(magic, "QSCK", 4) != 0) throw FileError("not a QSCK checkpoint: " + path);
    if (br.u16() != 1) throw FileError("unsupported checkpoint version: " + path);
    const std::uint32_t cfg_len = br.u32();
    std::string cfg_text(cfg_len, '\0');
    br.bytes(cfg_text.data(), cfg_len);

    LoadedCheckpoint out;
    out.cfg = parse_run_config(cfg_text);
    out.step = br.u64();

    std::map<std::string, Mat> tensors;
    const std::uint32_t count = br.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = br.str();
        const Index rows = static_cast<Index>(br.u32());
        const Index cols = static_cast<Index>(br.u32());
        Mat m(rows, cols);
        for (Index j = 0; j < m.size(); ++j) m.data()[j] = br.f64();
        tensors.emplace(name, std::move(m));
    }

    const auto take = [&](const std::string& name) {
        const auto it = tensors.find(name);
        if (it == tensors.end()) throw FileError("checkpoint missing tensor: " + name);
        return it->second;
    };
    const auto take_vec = [&](const std::string& name) { return Vec(take(name).row(0).transpose()); };

    // Rebuild the structure from the config, then overwrite every tensor.
    out.state = init_model(out.cfg.model);
    ModelState& st = out.state;
    st.vision_proj = take("vision_proj");
    st.proj.w1 = GradPair(take("proj.w1"));
    st.proj.b1 = GradPair(take("proj.b1"));
    st.proj.w2 = GradPair(take("proj.w2"));
    st.proj.b2 = GradPair(take("proj.b2"));
    st.tok_emb = take("tok_emb");
    st.pos_emb = take("pos_emb");
    for (std::size_t b = 0; b < st.blocks.size(); ++b) {
        Block& blk = st.blocks[b];
        const std::string prefix = "blk" + std::to_string(b) + ".";
        blk.ln1_gain = take_vec(prefix + "ln1_gain");
        blk.ln1_bias = take_vec(prefix + "ln1_bias");
        blk.ln2_gain = take_vec(prefix + "ln2_gain");
        blk.ln2_bias = take_vec(prefix + "ln2_bias");
        ScaledQuantLinear* layers[] = {&blk.wq, &blk.wk, &blk.wv, &blk.wo, &blk.mlp1, &blk.mlp2};
        for (int li = 0; li < 6; ++li) {
            const std::string lp = prefix + kLayerNames[li] + ".";
            const Mat w = take(lp + "weight");
            const Vec log_s = take_vec(lp + "log_s");
            const Vec delta = take_vec(lp + "delta");
            const Vec zp = take_vec(lp + "zp");
            std::vector<QuantParams> params(static_cast<std::size_t>(delta.size()));
            for (Index gi = 0; gi < delta.size(); ++gi)
                params[static_cast<std::size_t>(gi)] =
                    QuantParams{delta[gi], static_cast<int>(zp[gi]), out.cfg.model.bits};
            layers[li]->restore(w, out.cfg.model.group_size, std::move(params), log_s, Vec());
        }
    }
    st.lnf_gain = take_vec("lnf_gain");
    st.lnf_bias = take_vec("lnf_bias");
    return out;
}

// ---------------------------------------------------------------------------
// Driver

RunData prepare_run_data(const RunConfig& cfg) {
    std::vector<int> tokens = cfg.corpus_path.empty()
                                  ? tokenize(builtin_corpus(cfg.model.seed, kBuiltinCorpusChars))
                                  : load_corpus_tokens(cfg.corpus_path);
    const Index window = cfg.model.max_seq;
    if (static_cast<Index>(tokens.size()) < window * (kEvalLmWindows + 1))
        throw ConfigError("corpus too small: need at least " +
                          std::to_string(window * (kEvalLmWindows + 1)) + " tokens");

    RunData data;
    const std::size_t eval_tokens = static_cast<std::size_t>(window * kEvalLmWindows);
    const std::size_t split = tokens.size() - eval_tokens;
    data.train_tokens.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(split));
    for (Index w = 0; w < kEvalLmWindows; ++w) {
        const std::size_t at = split + static_cast<std::size_t>(w * window);
        data.eval.lm_windows.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(at),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(at + window));
    }
    for (Index i = 0; i < kEvalMmSamples; ++i)
        data.eval.mm.push_back(gen_multimodal_sample(cfg.model.seed, kEvalIdxBase + i));
    return data;
}

namespace {

// Forward-only batch loss, used for the step-0 metrics row.
double batch_loss(const ModalityBatch& batch, const ModelState& state) {
    const std::vector<BlockEff> effs = materialize_blocks(state);
    double loss_sum = 0.0;
    Index total = 0;
    for (Index i = 0; i < batch.batch_size(); ++i) {
        Mat visual(0, state.cfg.d_model);
        if (batch.modality == Modality::Multimodal) {
            const Mat f_i = vision_encode(batch.images[static_cast<std::size_t>(i)], state);
            visual = project(f_i, state);
        }
        const Mat probs =
            llm_forward(visual, batch.token_ids[static_cast<std::size_t>(i)], state, effs);
        const auto& targets = batch.targets[static_cast<std::size_t>(i)];
        for (Index r = 0; r < probs.rows(); ++r) {
            const std::int64_t t = targets[static_cast<std::size_t>(r)];
            if (t >= 0) {
                loss_sum -= std::log(probs(r, t));
                ++total;
            }
        }
    }
    return loss_sum / static_cast<double>(total);
}

struct BatchSource {
    const RunConfig& cfg;
    std::vector<int> train_tokens;
    CorpusStream lm_stream;
    std::uint64_t mm_idx = 0;

    explicit BatchSource(const RunConfig& cfg_, std::vector<int> tokens)
        : cfg(cfg_), train_tokens(tokens), lm_stream(std::move(tokens)) {}

    ModalityBatch next(Modality m) {
        if (m == Modality::Multimodal) {
            std::vector<MultimodalSample> samples;
            for (Index i = 0; i < cfg.batch_size; ++i)
                samples.push_back(gen_multimodal_sample(cfg.model.seed, mm_idx++));
            return collate_multimodal(samples, cfg.model.patches);
        }
        return collate_linguistic(lm_stream, cfg.model.max_seq, cfg.batch_size);
    }

    // The batch step 0 will see, built without advancing any stream.
    ModalityBatch peek_first() {
        const Modality m0 = schedule_modality(0, cfg.schedule());
        if (m0 == Modality::Multimodal) {
            std::vector<MultimodalSample> samples;
            for (Index i = 0; i < cfg.batch_size; ++i)
                samples.push_back(
                    gen_multimodal_sample(cfg.model.seed, static_cast<std::uint64_t>(i)));
            return collate_multimodal(samples, cfg.model.patches);
        }
        CorpusStream fresh(train_tokens);
        return collate_linguistic(fresh, cfg.model.max_seq, cfg.batch_size);
    }
};

}  // namespace

RunResult run_experiment(const RunConfig& cfg) {
    cfg.validate();
    RunData data = prepare_run_data(cfg);
    const WarmupSchedule sched = cfg.schedule();

    RunResult result;
    result.state = init_model(cfg.model);
    Sgd opt{cfg.lr, cfg.momentum, {}};
    BatchSource source(cfg, std::move(data.train_tokens));

    const auto emit_row = [&](std::uint64_t step, double train_loss) {
        const EvalMetrics m = evaluate(data.eval, result.state);
        result.rows.push_back(MetricsRow{step, cfg.arm, train_loss, m.accuracy, m.lm_perplexity});
    };

    // Step-0 row probes the first scheduled batch forward-only, without
    // advancing the training streams.
    emit_row(0, batch_loss(source.peek_first(), result.state));

    double interval_loss = 0.0;
    std::uint64_t interval_count = 0;
    for (std::uint64_t step = 0; step < cfg.steps; ++step) {
        const Modality m = schedule_modality(step, sched);
        const ModalityBatch batch = source.next(m);
        const double loss = train_step(batch, result.state, opt);
        interval_loss += loss;
        ++interval_count;
        const std::uint64_t done = step + 1;
        if (done % cfg.eval_interval == 0 || done == cfg.steps) {
            emit_row(done, interval_loss / static_cast<double>(interval_count));
            interval_loss = 0.0;
            interval_count = 0;
        }
    }
    return result;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string out = "step,arm,train_loss,eval_accuracy,lm_perplexity\n";
    for (const MetricsRow& r : rows) {
        out += std::to_string(r.step);
        out += ',';
        out += r.arm;
        out += ',';
        out += format_double(r.train_loss);
        out += ',';
        out += format_double(r.eval_accuracy);
        out += ',';
        out += format_double(r.lm_perplexity);
        out += '\n';
    }
    return out;
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
    std::vector<MetricsRow> rows;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first) {
            first = false;
            continue;
        }
        if (trim(line).empty()) continue;
        MetricsRow r;
        std::istringstream ls(line);
        std::string field;
        std::getline(ls, field, ',');
        r.step = parse_u64("step", field);
        std::getline(ls, r.arm, ',');
        std::getline(ls, field, ',');
        r.train_loss = parse_f64("train_loss", field);
        std::getline(ls, field, ',');
        r.eval_accuracy = parse_f64("eval_accuracy", field);
        std::getline(ls, field, ',');
        r.lm_perplexity = parse_f64("lm_perplexity", field);
        rows.push_back(std::move(r));
    }
    return rows;
}

void cli_train(const RunConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    RunResult result = run_experiment(cfg);
    atomic_write_file(cfg.out_dir + "/metrics.csv", metrics_csv(result.rows));
    save_checkpoint(cfg.out_dir + "/checkpoint.qsck", cfg, result.state, cfg.steps);
}

void cli_analyze(const std::string& checkpoint_path, const std::string& out_dir,
                 const AnalyzeOptions& opt) {
    LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
    std::filesystem::create_directories(out_dir);

    std::vector<Index> layers = opt.layers;
    if (layers.empty())
        for (Index l = 0; l < ck.cfg.model.n_layers; ++l) layers.push_back(l);

    std::vector<MultimodalSample> mm_samples;
    for (Index i = 0; i < opt.mm_samples; ++i)
        mm_samples.push_back(
            gen_multimodal_sample(ck.cfg.model.seed, (1ull << 31) + static_cast<std::uint64_t>(i)));
    const ModalityBatch mm = collate_multimodal(mm_samples, ck.cfg.model.patches);

    RunData data = prepare_run_data(ck.cfg);
    CorpusStream text_stream(std::move(data.train_tokens));
    const ModalityBatch text =
        collate_linguistic(text_stream, ck.cfg.model.max_seq, opt.text_samples);

    const std::vector<ActivationStats> stats =
        compare_modalities(ck.state, mm, text, layers, opt.kappa);
    atomic_write_file(out_dir + "/outliers.csv", outliers_csv(stats));

    const AlignmentProfile profile = alignment_profile(ck.state, mm);
    atomic_write_file(out_dir + "/alignment.csv", alignment_csv(profile));

    // Outlier density bars per block, one bar pair per modality.
    {
        std::vector<std::string> cats;
        BarSeries mm_s{"multimodal", {}}, tx_s{"linguistic", {}};
        for (std::size_t i = 0; i < stats.size(); i += 2) {
            cats.push_back(stats[i].tensor_id);
            mm_s.values.push_back(stats[i].density);
            tx_s.values.push_back(stats[i + 1].density);
        }
        atomic_write_file(out_dir + "/outliers.svg",
                          bar_chart_svg("activation outlier density (kappa=" +
                                            format_double(opt.kappa) + ")",
                                        cats, {mm_s, tx_s}));
    }
    {
        LineSeries s{"mean cosine", {}, {}};
        for (std::size_t b = 0; b < profile.mean_cosine.size(); ++b) {
            s.x.push_back(static_cast<double>(b));
            s.y.push_back(profile.mean_cosine[b]);
        }
        atomic_write_file(out_dir + "/alignment.svg",
                          line_chart_svg("visual/text alignment by block", "block",
                                         "mean cosine", {s}));
    }
}

void cli_report(const std::vector<std::string>& metrics_paths, const std::string& out_dir) {
    if (metrics_paths.empty()) throw ConfigError("report: no metrics files given");
    std::filesystem::create_directories(out_dir);

    std::vector<LineSeries> loss, acc, ppl;
    for (const std::string& path : metrics_paths) {
        const std::vector<MetricsRow> rows = parse_metrics_csv(read_file(path));
        if (rows.empty()) throw FileError("report: no rows in " + path);
        LineSeries l{rows[0].arm, {}, {}}, a{rows[0].arm, {}, {}}, p{rows[0].arm, {}, {}};
        for (const MetricsRow& r : rows) {
            const double s = static_cast<double>(r.step);
            l.x.push_back(s);
            l.y.push_back(r.train_loss);
            a.x.push_back(s);
            a.y.push_back(r.eval_accuracy);
            p.x.push_back(s);
            p.y.push_back(r.lm_perplexity);
        }
        loss.push_back(std::move(l));
        acc.push_back(std::move(a));
        ppl.push_back(std::move(p));
    }
    atomic_write_file(out_dir + "/train_loss.svg",
                      line_chart_svg("training loss", "step", "loss", loss));
    atomic_write_file(out_dir + "/eval_accuracy.svg",
                      line_chart_svg("multimodal eval accuracy", "step", "accuracy", acc));
    atomic_write_file(out_dir + "/lm_perplexity.svg",
                      line_chart_svg("held-out linguistic perplexity", "step", "perplexity", ppl));
}

}  // namespace qslaw
