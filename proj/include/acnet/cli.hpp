#pragma once

#include <acnet/config.hpp>
#include <acnet/datasets.hpp>
#include <acnet/evalstats.hpp>
#include <acnet/persist.hpp>
#include <acnet/pipeline.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#ifndef ACNET_GIT_DESCRIBE
#define ACNET_GIT_DESCRIBE "unknown"
#endif

namespace acnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Flags shared by commands that build a model from a config.
struct ModelFlags {
    std::string config;
    std::uint64_t seed = 42;
    std::optional<std::size_t> lookback, horizon;
    std::optional<std::string> mode, ablation, denoise;
    std::optional<double> degrade;

    ModelConfig resolve() const {
        ModelConfig cfg = config.empty() ? ModelConfig{} : load_config(config);
        cfg.seed = seed;
        if (lookback) cfg.lookback = *lookback;
        if (horizon) cfg.horizon = *horizon;
        if (mode) cfg.train.mode = parse_train_mode(*mode);
        if (ablation) cfg.ablation = parse_ablation(*ablation);
        if (denoise) cfg.denoise = *denoise == "on";
        if (degrade) cfg.update.degradation_frac = *degrade;
        cfg.validate();
        return cfg;
    }
};

struct Options {
    ModelFlags model;
    std::string data, model_path, out = "out";
    std::optional<std::size_t> val_rows;
    std::vector<std::size_t> horizons;
    bool raw_units = false;
    std::optional<std::size_t> history, chunk, buffer;
    bool feature_maps = false, phase_space = false;
    std::optional<std::size_t> window, tau;
    std::size_t dim = 2, column = 0;
    std::vector<std::size_t> lookbacks;
    std::optional<std::string> ttest;
};

/// key=value lines written to out/manifest.txt.
class Manifest {
public:
    Manifest(std::string command, const Options& o) : command_(std::move(command)), started_(now_utc()) {
        add("config", o.model.config.empty() ? "(defaults)" : o.model.config);
        add("data", o.data);
        if (!o.model_path.empty()) add("model", o.model_path);
        add("seed", std::to_string(o.model.seed));
        add("git", ACNET_GIT_DESCRIBE);
        add("out", o.out);
    }

    void add(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }

    void write(const std::filesystem::path& dir) const {
        std::ofstream os(dir / "manifest.txt");
        if (!os) throw ConfigError("cannot write manifest in '" + dir.string() + "'");
        os << "command=" << command_ << '\n';
        for (const auto& [k, v] : entries_) os << k << '=' << v << '\n';
        os << "started=" << started_ << '\n' << "finished=" << now_utc() << '\n';
    }

    static std::string now_utc() {
        const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&t, &tm);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

private:
    std::string command_, started_;
    std::vector<std::pair<std::string, std::string>> entries_;
};

namespace detail {

inline std::filesystem::path prepare_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
    return dir;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write '" + path.string() + "'");
    return os;
}

inline SeriesFrame load_data(const std::string& path) {
    if (path.empty()) throw UsageError("--data is required");
    SeriesFrame f = load_csv(path);
    f.validate();
    return f;
}

inline Model load_model_arg(const Options& o) {
    return load_model(o.model_path.empty() ? (std::filesystem::path(o.out) / "model.acn1").string() : o.model_path);
}

inline Tensor normalized_for(const Model& m, const SeriesFrame& f, const std::string& path) {
    if (f.variables() != m.variables) {
        throw ConfigError("'" + path + "' has " + std::to_string(f.variables()) + " variables, the model expects " +
                          std::to_string(m.variables));
    }
    return normalize_rows(f.values, m.stats());
}

/// Validation tail for cmd_train: T/8 rows when they hold a full horizon and
/// the rest still yields a training window, otherwise none.
inline std::size_t default_val_rows(std::size_t rows, const ModelConfig& cfg) {
    const std::size_t tail = rows / 8;
    if (tail >= cfg.horizon && rows - tail >= cfg.lookback + cfg.horizon) return tail;
    return 0;
}

}  // namespace detail

inline int cmd_train(const Options& o, std::ostream& out) {
    Manifest manifest("train", o);
    const ModelConfig cfg = o.model.resolve();
    const SeriesFrame frame = detail::load_data(o.data);
    const std::size_t rows = frame.steps();
    const std::size_t val = o.val_rows.value_or(detail::default_val_rows(rows, cfg));
    if (val >= rows) throw ConfigError("--val-rows leaves no training rows");
    const std::size_t train_rows = rows - val;
    if (train_rows < cfg.lookback + cfg.horizon) {
        throw ConfigError("'" + o.data + "' has " + std::to_string(train_rows) + " training rows, need at least " +
                          std::to_string(cfg.lookback + cfg.horizon) + " for one window");
    }

    Model m = Model::init(cfg, frame.variables());
    m.var_names = frame.var_names;
    const NormStats st = fit_stats(frame.values, train_rows);
    m.set_stats(st);
    const Tensor values = normalize_rows(frame.values, st);
    const TrainReport rep = train(m, values, train_rows);
    m.baseline_mse = val > 0 ? range_mse(m, values, train_rows, rows) : rep.train_mse;
    if (!std::isfinite(m.baseline_mse)) m.baseline_mse = rep.train_mse;

    const auto dir = detail::prepare_dir(o.out);
    save_model((dir / "model.acn1").string(), m);
    {
        auto os = detail::open_out(dir / "metrics_train.csv");
        os << "windows,train_mse,zero_mse,baseline_mse,baseline_source,train_rows,val_rows,seconds\n"
           << rep.windows << ',' << format_double(rep.train_mse) << ',' << format_double(rep.zero_mse) << ','
           << format_double(m.baseline_mse) << ',' << (val > 0 ? "validation" : "training") << ',' << train_rows << ','
           << val << ',' << format_double(rep.seconds) << '\n';
        if (!rep.loss_history.empty()) {
            auto ls = detail::open_out(dir / "metrics_train_loss.csv");
            ls << "epoch,loss\n";
            for (std::size_t e = 0; e < rep.loss_history.size(); ++e) ls << e << ',' << format_double(rep.loss_history[e]) << '\n';
        }
    }
    for (const auto& w : st.warnings) out << "warning: " << w << '\n';
    out << "windows: " << rep.windows << '\n'
        << "train_mse: " << rep.train_mse << '\n'
        << "baseline_mse: " << m.baseline_mse << (val > 0 ? " (validation)" : " (training)") << '\n'
        << "parameters: " << m.parameter_count() << '\n'
        << "model: " << (dir / "model.acn1").string() << '\n';
    manifest.add("windows", std::to_string(rep.windows));
    manifest.add("train_rows", std::to_string(train_rows));
    manifest.add("val_rows", std::to_string(val));
    manifest.add("mode", std::string(to_string(cfg.train.mode)));
    manifest.add("ablation", std::string(to_string(cfg.ablation)));
    manifest.write(dir);
    return kExitOk;
}

inline int cmd_eval(const Options& o, std::ostream& out) {
    Manifest manifest("eval", o);
    const Model m = detail::load_model_arg(o);
    const SeriesFrame frame = detail::load_data(o.data);
    const Tensor values = detail::normalized_for(m, frame, o.data);
    std::vector<std::size_t> horizons = o.horizons;
    if (horizons.empty()) horizons.push_back(m.cfg.horizon);
    for (std::size_t h : horizons)
        if (h < 1 || h > m.cfg.horizon) {
            throw ConfigError("horizon " + std::to_string(h) + " is outside the model's forecast length 1.." +
                              std::to_string(m.cfg.horizon));
        }

    const auto dir = detail::prepare_dir(o.out);
    const auto diag = detail::prepare_dir(dir / "diag");
    auto metrics_os = detail::open_out(dir / "metrics_eval.csv");
    write_metrics_header(metrics_os);
    std::size_t windows = 0;
    for (std::size_t h : horizons) {
        const EvalReport r = evaluate(m, values, 0, values.rows(), h, o.raw_units);
        windows = r.windows;
        write_metrics_row(metrics_os, "h" + std::to_string(h), r);
        auto es = detail::open_out(diag / ("window_errors_h" + std::to_string(h) + ".csv"));
        write_window_errors(es, r);
        write_summary(out, "h" + std::to_string(h), r);
    }
    const Forecasts f = forecast_windows(m, windows_for_targets(values, m.cfg.lookback, m.cfg.horizon, 0, values.rows()));
    auto fs = detail::open_out(diag / "forecasts.csv");
    write_forecasts(fs, f, m.cfg.lookback, m.variables);
    out << "windows: " << windows << '\n';
    manifest.add("windows", std::to_string(windows));
    manifest.add("units", o.raw_units ? "raw" : "normalized");
    manifest.write(dir);
    return kExitOk;
}

inline int cmd_dynamic(const Options& o, std::ostream& out) {
    Manifest manifest("dynamic", o);
    Model m = detail::load_model_arg(o);
    const SeriesFrame frame = detail::load_data(o.data);
    const Tensor values = detail::normalized_for(m, frame, o.data);
    if (!std::isfinite(m.baseline_mse)) throw ConfigError("model carries no baseline MSE; retrain it");
    UpdatePolicy policy;
    policy.degradation_frac = o.model.degrade.value_or(m.cfg.update.degradation_frac);
    if (!(policy.degradation_frac >= 0.0)) throw ConfigError("--degrade must be >= 0");
    policy.baseline_mse = m.baseline_mse;
    policy.buffer_rows = o.buffer.value_or(m.cfg.update.buffer ? m.cfg.update.buffer : m.train_rows);
    policy.chunk_rows = o.chunk.value_or(m.cfg.update.chunk);
    const std::size_t history = o.history.value_or(policy.buffer_rows);
    if (history > values.rows()) {
        throw ConfigError("'" + o.data + "' has " + std::to_string(values.rows()) + " rows, fewer than the " +
                          std::to_string(history) + " history rows");
    }
    const DynamicResult r = dynamic_predict(m, values, history, policy);

    const auto dir = detail::prepare_dir(o.out);
    const auto diag = detail::prepare_dir(dir / "diag");
    {
        auto es = detail::open_out(dir / "events.csv");
        es << "chunk,row_begin,row_end,buffer_begin,buffer_end,mse_before,mse_after\n";
        for (const auto& e : r.events) {
            es << e.chunk << ',' << e.row_begin << ',' << e.row_end << ',' << e.buffer_begin << ',' << e.buffer_end
               << ',' << format_double(e.mse_before) << ',' << format_double(e.mse_after) << '\n';
        }
        auto cs = detail::open_out(dir / "metrics_dynamic.csv");
        cs << "chunk,row_begin,row_end,windows,mse,updated\n";
        for (const auto& c : r.chunks) {
            cs << c.chunk << ',' << c.row_begin << ',' << c.row_end << ',' << c.windows << ',' << format_double(c.mse)
               << ',' << (c.updated ? 1 : 0) << '\n';
        }
        auto fs = detail::open_out(diag / "dynamic_forecasts.csv");
        if (r.forecasts.windows()) write_forecasts(fs, r.forecasts, m.cfg.lookback, m.variables);
    }
    for (const auto& w : r.warnings) out << "warning: " << w << '\n';
    out << "chunks: " << r.chunks.size() << '\n'
        << "windows: " << r.forecasts.windows() << '\n'
        << "events: " << r.events.size() << '\n'
        << "buffer_rows: " << r.buffer_rows << '\n';
    manifest.add("chunks", std::to_string(r.chunks.size()));
    manifest.add("events", std::to_string(r.events.size()));
    manifest.add("buffer_rows", std::to_string(r.buffer_rows));
    manifest.add("degradation_frac", format_double(policy.degradation_frac));
    manifest.write(dir);
    return kExitOk;
}

namespace detail {

inline void dump_map(const std::filesystem::path& path, const Tensor& map) {
    auto os = open_out(path);
    write_feature_map_csv(os, map);
}

inline std::size_t write_feature_maps(const Model& m, const Tensor& values, std::optional<std::size_t> window,
                                      const std::filesystem::path& diag) {
    const std::size_t lookback = m.cfg.lookback;
    if (values.rows() < lookback) throw ConfigError("data has fewer rows than one lookback window");
    const std::size_t origin = window.value_or(values.rows() - lookback);
    if (origin + lookback > values.rows()) throw ConfigError("--window starts past the last full input window");
    const Tensor input = prepare_window(slice_rows(values, origin, lookback), m.cfg);
    GradTape tape(false);
    const BoundVars b = bind(tape, m, false);
    const FeatureOutput f = feature_forward(tape.constant(input), m, b.tv(), b.dv());
    dump_map(diag / "feature_input.csv", input);
    dump_map(diag / "feature_g.csv", f.g.value());
    if (m.cfg.ablation != Ablation::no_all) {
        dump_map(diag / "feature_xc.csv", f.xc.value());
        dump_map(diag / "feature_xs.csv", f.xs.value());
        for (std::size_t i = 0; i < f.branches.size(); ++i)
            dump_map(diag / ("feature_branch" + std::to_string(i) + ".csv"), f.branches[i].value());
    }
    if (f.nfae) {
        const auto deformed = unstack_branches(f.nfae->deform.gated.value());
        for (std::size_t s = 0; s < deformed.size(); ++s)
            dump_map(diag / ("feature_gdc_scale" + std::to_string(s) + ".csv"), deformed[s]);
        const Tensor& gate = f.nfae->deform.gate.value();  // S x L x 1
        auto gs = open_out(diag / "feature_gate.csv");
        gs << "t";
        for (std::size_t s = 0; s < gate.dim(0); ++s) gs << ",s" << s;
        gs << '\n';
        for (std::size_t t = 0; t < gate.dim(1); ++t) {
            gs << t;
            for (std::size_t s = 0; s < gate.dim(0); ++s) gs << ',' << format_double(gate(s, t, 0));
            gs << '\n';
        }
    }
    return origin;
}

}  // namespace detail

inline int cmd_diag(const Options& o, std::ostream& out) {
    Manifest manifest("diag", o);
    if (!o.feature_maps && !o.phase_space && o.lookbacks.empty() && !o.ttest) {
        throw UsageError("diag needs at least one of --feature-maps, --phase-space, --lookbacks, --ttest");
    }
    const SeriesFrame frame = detail::load_data(o.data);
    const auto dir = detail::prepare_dir(o.out);
    const auto diag = detail::prepare_dir(dir / "diag");

    if (o.feature_maps) {
        const Model m = detail::load_model_arg(o);
        const std::size_t origin =
            detail::write_feature_maps(m, detail::normalized_for(m, frame, o.data), o.window, diag);
        out << "feature maps: window at row " << origin << '\n';
        manifest.add("feature_window", std::to_string(origin));
    }
    if (o.phase_space) {
        if (o.column >= frame.variables()) throw ConfigError("--column is out of range");
        std::vector<double> x(frame.steps());
        for (std::size_t t = 0; t < x.size(); ++t) x[t] = frame.values(t, o.column);
        const std::size_t tau = o.tau.value_or(default_tau(x));
        const Tensor pts = phase_space(x, tau, o.dim);
        auto os = detail::open_out(diag / "phase_space.csv");
        write_phase_csv(os, pts);
        out << "phase space: " << pts.rows() << " points, tau " << tau << ", dim " << o.dim << '\n';
        manifest.add("tau", std::to_string(tau));
    }
    const SplitSizes split = split_sizes(frame.steps());
    if (!o.lookbacks.empty()) {
        const auto rows = lookback_study(frame.values, o.lookbacks, o.model.resolve(), split);
        auto os = detail::open_out(diag / "lookback.csv");
        write_lookback_csv(os, rows);
        for (const auto& r : rows) out << "lookback " << r.lookback << ": test MSE " << r.report.mse << '\n';
    }
    if (o.ttest) {
        const ModelConfig base = o.model.resolve();
        ModelConfig other = base;
        other.ablation = parse_ablation(*o.ttest);
        const RunResult a = fit_and_evaluate(base, frame.values, split);
        const RunResult b = fit_and_evaluate(other, frame.values, split);
        const TTestResult t = paired_ttest(a.test.per_window_errors, b.test.per_window_errors);
        auto os = detail::open_out(diag / "ttest.csv");
        os << "a,b,mse_a,mse_b,t,p,dof,t_critical,significant,degenerate\n"
           << to_string(base.ablation) << ',' << to_string(other.ablation) << ',' << format_double(a.test.mse) << ','
           << format_double(b.test.mse) << ',' << format_double(t.t_stat) << ',' << format_double(t.p_value) << ','
           << format_double(t.dof) << ',' << format_double(t_critical(t.dof)) << ',' << t.significant << ','
           << t.degenerate << '\n';
        out << "t-test " << to_string(base.ablation) << " vs " << to_string(other.ablation) << ": t " << t.t_stat
            << ", p " << t.p_value << ", dof " << t.dof << '\n';
    }
    manifest.write(dir);
    return kExitOk;
}

/// Parses argv and runs one subcommand. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"acnet: wavelet-denoised dilated/deformable features with a closed-form readout"};
    app.require_subcommand(1);
    Options o;

    auto model_flags = [&](CLI::App* c) {
        c->add_option("--config", o.model.config, "key = value config file");
        c->add_option("--seed", o.model.seed, "root seed (default 42)");
        c->add_option("--lookback", o.model.lookback, "input window length L");
        c->add_option("--horizon", o.model.horizon, "forecast length L_y");
        c->add_option("--mode", o.model.mode, "random_feature or gradient")->check(CLI::IsMember({"random_feature", "gradient"}));
        c->add_option("--ablation", o.model.ablation, "full, no_gdc, no_temporal or no_all")
            ->check(CLI::IsMember({"full", "no_gdc", "no_temporal", "no_all"}));
        c->add_option("--denoise", o.model.denoise, "wavelet denoising of inputs: on or off")->check(CLI::IsMember({"on", "off"}));
        c->add_option("--degrade", o.model.degrade, "relative MSE degradation that triggers a refit");
    };
    auto io_flags = [&](CLI::App* c) {
        c->add_option("--data", o.data, "CSV file")->required();
        c->add_option("--out", o.out, "output directory (default out)");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "fit a model and write out/model.acn1");
    model_flags(train_cmd);
    io_flags(train_cmd);
    train_cmd->add_option("--val-rows", o.val_rows, "validation tail rows (default T/8 when it fits)");

    CLI::App* eval_cmd = app.add_subcommand("eval", "score a model on every window of a CSV");
    io_flags(eval_cmd);
    eval_cmd->add_option("--model", o.model_path, "model file (default <out>/model.acn1)");
    eval_cmd->add_option("--horizons", o.horizons, "comma-separated horizons, each at most the model's")->delimiter(',');
    eval_cmd->add_flag("--raw-units", o.raw_units, "report metrics in the data's original units");
    eval_cmd->add_option("--seed", o.model.seed, "recorded in the manifest");

    CLI::App* dyn_cmd = app.add_subcommand("dynamic", "stream a CSV with monitored readout refits");
    io_flags(dyn_cmd);
    dyn_cmd->add_option("--model", o.model_path, "model file (default <out>/model.acn1)");
    dyn_cmd->add_option("--degrade", o.model.degrade, "relative MSE degradation that triggers a refit");
    dyn_cmd->add_option("--history", o.history, "leading rows treated as history (default: buffer size)");
    dyn_cmd->add_option("--chunk", o.chunk, "rows per monitoring chunk");
    dyn_cmd->add_option("--buffer", o.buffer, "rows kept for refits (default: training rows)");
    dyn_cmd->add_option("--seed", o.model.seed, "recorded in the manifest");

    CLI::App* diag_cmd = app.add_subcommand("diag", "feature maps, phase space, lookback study, t-test");
    model_flags(diag_cmd);
    io_flags(diag_cmd);
    diag_cmd->add_option("--model", o.model_path, "model file for --feature-maps (default <out>/model.acn1)");
    diag_cmd->add_flag("--feature-maps", o.feature_maps, "dump intermediate feature maps of one window");
    diag_cmd->add_option("--window", o.window, "origin row of the window (default: last)");
    diag_cmd->add_flag("--phase-space", o.phase_space, "delay embedding of one column");
    diag_cmd->add_option("--tau", o.tau, "embedding lag (default: first ACF < 1/e)");
    diag_cmd->add_option("--dim", o.dim, "embedding dimension 2 or 3");
    diag_cmd->add_option("--column", o.column, "variable index for --phase-space");
    diag_cmd->add_option("--lookbacks", o.lookbacks, "lookback study, e.g. 24,48,96")->delimiter(',');
    diag_cmd->add_option("--ttest", o.ttest, "paired t-test against another ablation")
        ->check(CLI::IsMember({"full", "no_gdc", "no_temporal", "no_all"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*train_cmd) return cmd_train(o, out);
        if (*eval_cmd) return cmd_eval(o, out);
        if (*dyn_cmd) return cmd_dynamic(o, out);
        return cmd_diag(o, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DimensionError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace acnet::cli
