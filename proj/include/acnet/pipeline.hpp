#pragma once

#include <acnet/autodiff.hpp>
#include <acnet/deform.hpp>
#include <acnet/linalg.hpp>
#include <acnet/parallel.hpp>
#include <acnet/preprocess.hpp>
#include <acnet/readout.hpp>
#include <acnet/rng.hpp>
#include <acnet/temporal.hpp>
#include <acnet/tensor.hpp>

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace acnet {

enum class TrainMode { random_feature, gradient };
enum class Ablation { full, no_gdc, no_temporal, no_all };

inline std::string_view to_string(TrainMode m) { return m == TrainMode::gradient ? "gradient" : "random_feature"; }

inline TrainMode parse_train_mode(std::string_view s) {
    if (s == "random_feature") return TrainMode::random_feature;
    if (s == "gradient") return TrainMode::gradient;
    throw ConfigError("unknown training mode '" + std::string(s) + "' (expected random_feature or gradient)");
}

inline std::string_view to_string(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_gdc: return "no_gdc";
        case Ablation::no_temporal: return "no_temporal";
        case Ablation::no_all: return "no_all";
    }
    return "full";
}

inline Ablation parse_ablation(std::string_view s) {
    for (auto a : {Ablation::full, Ablation::no_gdc, Ablation::no_temporal, Ablation::no_all})
        if (s == to_string(a)) return a;
    throw ConfigError("unknown ablation '" + std::string(s) + "' (expected full, no_gdc, no_temporal or no_all)");
}

inline bool uses_temporal(Ablation a) { return a == Ablation::full || a == Ablation::no_gdc; }
inline bool uses_deform(Ablation a) { return a == Ablation::full || a == Ablation::no_temporal; }

struct TrainConfig {
    TrainMode mode = TrainMode::random_feature;
    std::size_t epochs = 10;
    double lr = 1e-3;
    std::size_t stride = 1;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct UpdateConfig {
    double degradation_frac = 0.05;
    std::size_t chunk = 0;   // rows per monitoring chunk; 0 selects default_chunk_rows
    std::size_t buffer = 0;  // rows kept for refits; 0 selects the rows seen in training
    friend bool operator==(const UpdateConfig&, const UpdateConfig&) = default;
};

struct ModelConfig {
    std::size_t lookback = 96;
    std::size_t horizon = 24;
    bool denoise = true;
    WaveletConfig wavelet;
    TemporalConfig temporal;
    DeformConfig deform;
    ReadoutConfig readout;
    TrainConfig train;
    UpdateConfig update;
    Ablation ablation = Ablation::full;
    std::uint64_t seed = 42;

    void validate() const {
        if (lookback < 1) throw ConfigError("model.lookback must be at least 1");
        if (horizon < 1) throw ConfigError("model.horizon must be at least 1");
        if (train.stride < 1) throw ConfigError("train.stride must be at least 1");
        if (!(train.lr > 0.0) || !std::isfinite(train.lr)) throw ConfigError("train.lr must be positive");
        if (!(update.degradation_frac >= 0.0)) throw ConfigError("update.degradation_frac must be >= 0");
        wavelet.validate();
        temporal.validate();
        deform.validate();
        readout.validate();
    }
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Everything a trained model needs at inference time.
struct Model {
    ModelConfig cfg;
    std::size_t variables = 0;
    TemporalParams temporal;  // populated when the ablation uses it
    DeformParams deform;      // populated when the ablation uses it
    ReadoutParams readout;
    Tensor norm_mu;     // N, training statistics
    Tensor norm_sigma;  // N
    double baseline_mse = std::numeric_limits<double>::quiet_NaN();
    std::size_t train_rows = 0;  // rows used by the last Phase I fit
    std::vector<std::string> var_names;

    static Model init(const ModelConfig& cfg, std::size_t variables) {
        cfg.validate();
        if (variables < 1) throw ConfigError("model needs at least one variable");
        Model m;
        m.cfg = cfg;
        m.variables = variables;
        const Rng root(cfg.seed);
        if (uses_temporal(cfg.ablation))
            m.temporal = TemporalParams::init(variables, cfg.lookback, cfg.temporal, root.split("temporal"));
        if (uses_deform(cfg.ablation)) m.deform = DeformParams::init(cfg.temporal.channels, cfg.deform, root.split("deform"));
        m.readout = ReadoutParams::init(m.feature_dim(), cfg.horizon, variables, cfg.readout, root.split("readout"));
        m.norm_mu = Tensor::zeros({variables});
        m.norm_sigma = Tensor::ones({variables});
        return m;
    }

    std::size_t channels() const { return cfg.ablation == Ablation::no_all ? variables : cfg.temporal.channels; }
    std::size_t feature_dim() const { return cfg.lookback * channels(); }
    std::size_t outputs() const { return cfg.horizon * variables; }

    std::size_t scales() const {
        return cfg.ablation == Ablation::no_temporal ? 1 : cfg.temporal.dilations.size() + 1;
    }

    NormStats stats() const {
        NormStats st;
        st.mu.assign(norm_mu.data().begin(), norm_mu.data().end());
        st.sigma.assign(norm_sigma.data().begin(), norm_sigma.data().end());
        return st;
    }

    void set_stats(const NormStats& st) {
        if (st.mu.size() != variables) throw DimensionError("normalization statistics do not match variable count");
        norm_mu = Tensor::vector(st.mu);
        norm_sigma = Tensor::vector(st.sigma);
    }

    /// Trainable feature tensors (excludes the readout).
    std::vector<std::pair<std::string, Tensor*>> feature_tensors() {
        std::vector<std::pair<std::string, Tensor*>> out;
        if (uses_temporal(cfg.ablation))
            for (auto& e : temporal.named_tensors()) out.push_back(e);
        if (uses_deform(cfg.ablation))
            for (auto& e : deform.named_tensors()) out.push_back(e);
        return out;
    }

    /// Every persisted tensor in declared order.
    std::vector<std::pair<std::string, Tensor*>> named_tensors() {
        auto out = feature_tensors();
        for (auto& e : readout.named_tensors()) out.push_back(e);
        out.emplace_back("norm.mu", &norm_mu);
        out.emplace_back("norm.sigma", &norm_sigma);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = readout.parameter_count();
        if (uses_temporal(cfg.ablation)) n += temporal.parameter_count();
        if (uses_deform(cfg.ablation)) n += deform.parameter_count();
        return n;
    }

    /// Analytic multiply-accumulate count of one forward pass, times two.
    /// Wavelet denoising is excluded.
    std::size_t flops() const {
        const std::size_t len = cfg.lookback, c = channels();
        std::size_t macs = readout.macs();
        if (uses_temporal(cfg.ablation)) macs += temporal.macs(len) + len * c;
        if (cfg.ablation == Ablation::no_temporal) macs += len * variables * c + len * c;
        if (uses_deform(cfg.ablation)) macs += deform.macs(scales(), len);
        if (cfg.ablation == Ablation::no_gdc) macs += scales() * len * c;
        return 2 * macs;
    }
};

/// Applies the configured per-window preprocessing (wavelet denoising of the
/// input only; targets are never touched).
inline Tensor prepare_window(const Tensor& input, const ModelConfig& cfg) {
    return cfg.denoise ? denoise_columns(input, cfg.wavelet) : input;
}

/// N x C selection that copies variable (c mod N) into channel c.
inline Tensor channel_projection(std::size_t variables, std::size_t channels) {
    Tensor p({variables, channels});
    for (std::size_t c = 0; c < channels; ++c) p(c % variables, c) = 1.0;
    return p;
}

struct FeatureOutput {
    Var g;                      // L x C (L x N for no_all)
    Var xc;                     // temporal fusion (or projection)
    Var xs;                     // scale-reduced deform output (or branch mean)
    std::vector<Var> branches;  // inputs to the stack
    std::optional<NfaeOutput> nfae;
};

/// Feature graph for one prepared window; tv / dv must be bound for the
/// modules the ablation uses.
inline FeatureOutput feature_forward(Var x, const Model& m, const TemporalVars* tv, const DeformVars* dv) {
    FeatureOutput out;
    GradTape& tape = *x.tape();
    switch (m.cfg.ablation) {
        case Ablation::no_all:
            out.g = x;
            return out;
        case Ablation::no_temporal: {
            out.xc = matmul(x, tape.constant(channel_projection(m.variables, m.channels())));
            out.branches = {out.xc};
            break;
        }
        case Ablation::full:
        case Ablation::no_gdc: {
            TfeOutput t = tfe_forward(x, *tv, m.temporal);
            out.xc = t.fused;
            out.branches = std::move(t.branches);
            break;
        }
    }
    if (m.cfg.ablation == Ablation::no_gdc) {
        out.xs = mean_axis0(stack(out.branches));
    } else {
        out.nfae = nfae_forward(out.branches, *dv);
        out.xs = out.nfae->reduced;
    }
    out.g = add(out.xc, out.xs);
    return out;
}

struct BoundVars {
    std::optional<TemporalVars> temporal;
    std::optional<DeformVars> deform;
    const TemporalVars* tv() const { return temporal ? &*temporal : nullptr; }
    const DeformVars* dv() const { return deform ? &*deform : nullptr; }
};

inline BoundVars bind(GradTape& tape, const Model& m, bool trainable) {
    BoundVars b;
    if (uses_temporal(m.cfg.ablation)) b.temporal = bind(tape, m.temporal, trainable);
    if (uses_deform(m.cfg.ablation)) b.deform = bind(tape, m.deform, trainable);
    return b;
}

inline void check_window(const Model& m, const Tensor& input) {
    if (input.rank() != 2 || input.rows() != m.cfg.lookback || input.cols() != m.variables) {
        throw UsageError("model expects a " + std::to_string(m.cfg.lookback) + " x " + std::to_string(m.variables) +
                         " window, got " + shape_string(input.shape()));
    }
}

/// Flattened G (length D) for one normalized input window.
inline Tensor window_features(const Model& m, const Tensor& input) {
    check_window(m, input);
    GradTape tape(false);
    const BoundVars b = bind(tape, m, false);
    const FeatureOutput f = feature_forward(tape.constant(prepare_window(input, m.cfg)), m, b.tv(), b.dv());
    return f.g.value().reshaped({m.feature_dim()});
}

/// M x D feature rows, computed in parallel; row i belongs to window i.
inline Tensor feature_matrix(const Model& m, std::span<const WindowPair> windows) {
    if (windows.empty()) throw ConfigError("no windows to featurize");
    Tensor g({windows.size(), m.feature_dim()});
    parallel_for(windows.size(), [&](std::size_t i) {
        const Tensor row = window_features(m, windows[i].input);
        std::copy(row.data().begin(), row.data().end(), g.row(i).begin());
    });
    return g;
}

inline Tensor target_matrix(std::span<const WindowPair> windows) {
    if (windows.empty()) throw ConfigError("no windows");
    const std::size_t k = windows.front().target.size();
    Tensor y({windows.size(), k});
    for (std::size_t i = 0; i < windows.size(); ++i)
        std::copy(windows[i].target.data().begin(), windows[i].target.data().end(), y.row(i).begin());
    return y;
}

/// L_y x N forecast for one normalized window.
inline Tensor forward(const Model& m, const Tensor& input) {
    return predict(window_features(m, input), m.readout);
}

/// Windows whose targets fall inside rows [target_begin, target_end); inputs
/// may reach back before target_begin but never past their own targets.
inline std::vector<WindowPair> windows_for_targets(const Tensor& values, std::size_t lookback, std::size_t horizon,
                                                   std::size_t target_begin, std::size_t target_end,
                                                   std::size_t stride = 1) {
    std::vector<WindowPair> out;
    target_end = std::min(target_end, values.rows());
    std::size_t origin = target_begin >= lookback ? target_begin - lookback : 0;
    for (; origin + lookback + horizon <= target_end; origin += stride)
        out.push_back({slice_rows(values, origin, lookback), slice_rows(values, origin + lookback, horizon), origin});
    return out;
}

struct Forecasts {
    Tensor pred;   // M x (L_y N), normalized units
    Tensor truth;  // M x (L_y N)
    std::vector<std::size_t> origins;

    std::size_t windows() const { return origins.size(); }
};

inline Forecasts forecast_windows(const Model& m, std::span<const WindowPair> windows) {
    Forecasts f;
    f.pred = predict_rows(hidden_matrix(feature_matrix(m, windows), m.readout), m.readout);
    f.truth = target_matrix(windows);
    for (const auto& w : windows) f.origins.push_back(w.origin_index);
    return f;
}

inline double mean_squared(const Tensor& a, const Tensor& b) {
    a.require_same_shape(b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

struct TrainReport {
    std::size_t windows = 0;
    double train_mse = 0.0;
    double zero_mse = 0.0;  // MSE of the all-zero forecast on the same windows
    std::vector<double> loss_history;  // gradient mode: loss before each epoch's step
    double seconds = 0.0;
};

namespace detail {

inline void fit_readout(Model& m, const Tensor& g, const Tensor& y, TrainReport& report) {
    const Tensor h = hidden_matrix(g, m.readout);
    m.readout.beta = fit_beta(h, y, m.readout.ridge);
    report.train_mse = mean_squared(matmul(h, m.readout.beta), y);
    report.zero_mse = mean_squared(Tensor::zeros(y.shape()), y);
}

/// Full-batch gradient descent on the feature tensors through a temporary
/// linear head D x (L_y N) that starts at its least-squares fit.
inline std::vector<double> gradient_phase(Model& m, std::span<const WindowPair> windows, const Tensor& y) {
    const std::size_t count = windows.size(), d = m.feature_dim(), k = m.outputs();
    std::vector<Tensor> prepared;
    prepared.reserve(count);
    for (const auto& w : windows) prepared.push_back(prepare_window(w.input, m.cfg));

    Tensor head = fit_beta(feature_matrix(m, windows), y, m.readout.ridge);
    auto params = m.feature_tensors();
    constexpr std::size_t kBlock = 16;  // fixed blocks keep the summation order independent of thread count
    const std::size_t blocks = (count + kBlock - 1) / kBlock;
    const double loss_scale = 1.0 / static_cast<double>(count);

    std::vector<double> history;
    for (std::size_t epoch = 0; epoch < m.cfg.train.epochs; ++epoch) {
        std::vector<std::vector<Tensor>> partial(blocks);
        std::vector<double> block_loss(blocks, 0.0);
        Tensor g({count, d});
        parallel_for(blocks, [&](std::size_t b) {
            std::vector<Tensor>& acc = partial[b];
            for (const auto& p : params) acc.emplace_back(p.second->shape());
            for (std::size_t i = b * kBlock; i < std::min(count, (b + 1) * kBlock); ++i) {
                GradTape tape;
                const BoundVars bv = bind(tape, m, true);
                const FeatureOutput f = feature_forward(tape.constant(prepared[i]), m, bv.tv(), bv.dv());
                Var row = reshape(f.g, {1, d});
                Var pred = matmul(row, tape.constant(head));
                Var loss = scale(mse(pred, tape.constant(slice_rows(y, i, 1))), loss_scale);
                tape.backward(loss);
                block_loss[b] += loss.value()[0];
                std::copy(row.value().data().begin(), row.value().data().end(), g.row(i).begin());
                std::vector<Var> leaves;
                if (bv.temporal) {
                    const TemporalVars& t = *bv.temporal;
                    leaves.insert(leaves.end(), {t.kernel, t.bias, t.ln_scale, t.ln_shift, t.pool_kernel, t.pool_bias});
                }
                if (bv.deform) {
                    const DeformVars& v = *bv.deform;
                    leaves.insert(leaves.end(), {v.def_kernel, v.offset_w, v.offset_b, v.gate_w, v.gate_b, v.mix_w});
                }
                for (std::size_t j = 0; j < leaves.size(); ++j) acc[j] += tape.grad(leaves[j]);
            }
        });
        double loss = 0.0;
        for (double l : block_loss) loss += l;
        history.push_back(loss);

        std::vector<Tensor> grads;
        for (const auto& p : params) grads.emplace_back(p.second->shape());
        for (const auto& part : partial)
            for (std::size_t j = 0; j < grads.size(); ++j) grads[j] += part[j];
        // d/dW of mean_i mean_k (g_i W - y_i)^2
        Tensor resid = matmul(g, head) - y;
        Tensor ghead = matmul_tn(g, resid) * (2.0 * loss_scale / static_cast<double>(k));
        for (std::size_t j = 0; j < params.size(); ++j) *params[j].second -= grads[j] * m.cfg.train.lr;
        head -= ghead * m.cfg.train.lr;
    }
    return history;
}

}  // namespace detail

/// Phase I on rows [0, train_end) of a normalized series.
inline TrainReport train(Model& m, const Tensor& values, std::size_t train_end) {
    const auto start = std::chrono::steady_clock::now();
    if (values.rank() != 2 || values.cols() != m.variables) {
        throw UsageError("training data has " + shape_string(values.shape()) + " but the model expects " +
                         std::to_string(m.variables) + " variables");
    }
    const auto windows = make_windows(slice_rows(values, 0, std::min(train_end, values.rows())), m.cfg.lookback,
                                      m.cfg.horizon, m.cfg.train.stride);
    const Tensor y = target_matrix(windows);
    m.train_rows = std::min(train_end, values.rows());
    TrainReport report;
    report.windows = windows.size();
    if (m.cfg.train.mode == TrainMode::gradient) report.loss_history = detail::gradient_phase(m, windows, y);
    detail::fit_readout(m, feature_matrix(m, windows), y, report);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

/// MSE over windows whose targets lie in [begin, end).
inline double range_mse(const Model& m, const Tensor& values, std::size_t begin, std::size_t end) {
    const auto windows = windows_for_targets(values, m.cfg.lookback, m.cfg.horizon, begin, end);
    if (windows.empty()) return std::numeric_limits<double>::quiet_NaN();
    const Forecasts f = forecast_windows(m, windows);
    return mean_squared(f.pred, f.truth);
}

// ---------------------------------------------------------------------------
// Phase II: monitored forecasting with buffered refits of the output weights.

/// Four horizons, but never less than two lookbacks: after a refit the next
/// chunk then holds windows whose inputs lie wholly past the refit point.
inline std::size_t default_chunk_rows(std::size_t lookback, std::size_t horizon) {
    return std::max(4 * horizon, 2 * lookback);
}

struct UpdatePolicy {
    double degradation_frac = 0.05;
    double baseline_mse = 0.0;
    std::size_t buffer_rows = 0;  // M
    std::size_t chunk_rows = 0;
};

struct UpdateEvent {
    std::size_t chunk = 0;
    std::size_t row_begin = 0, row_end = 0;  // chunk rows that triggered the refit
    std::size_t buffer_begin = 0, buffer_end = 0;
    double mse_before = 0.0;  // chunk MSE with the old output weights
    double mse_after = 0.0;   // same chunk re-scored after the refit
};

struct ChunkRecord {
    std::size_t chunk = 0;
    std::size_t row_begin = 0, row_end = 0;
    std::size_t windows = 0;
    double mse = 0.0;
    bool updated = false;
};

struct DynamicResult {
    std::vector<ChunkRecord> chunks;
    std::vector<UpdateEvent> events;
    Forecasts forecasts;  // every forecast issued, before any refit it triggered
    std::vector<std::string> warnings;
    std::size_t buffer_rows = 0;
};

/// Streams rows [stream_begin, T) of a normalized series in chunks. Rows
/// before stream_begin are history: the initial buffer is its last M rows.
/// Each chunk is forecast with the current output weights; when its MSE
/// exceeds baseline * (1 + frac) the buffer slides forward to end at the
/// chunk (evicting as many old rows as it gains) and beta is refit on it.
inline DynamicResult dynamic_predict(Model& m, const Tensor& values, std::size_t stream_begin,
                                     const UpdatePolicy& policy) {
    const std::size_t lookback = m.cfg.lookback, horizon = m.cfg.horizon;
    if (values.rank() != 2 || values.cols() != m.variables) throw UsageError("stream does not match the model's variables");
    if (!m.readout.fitted()) throw UsageError("dynamic prediction needs a trained model");
    const std::size_t buffer = policy.buffer_rows;
    const std::size_t chunk = policy.chunk_rows ? policy.chunk_rows : default_chunk_rows(lookback, horizon);
    if (buffer < lookback + horizon) {
        throw ConfigError("update buffer of " + std::to_string(buffer) + " rows cannot hold one window of " +
                          std::to_string(lookback + horizon) + " rows");
    }
    if (buffer > stream_begin) {
        throw ConfigError("update buffer of " + std::to_string(buffer) + " rows exceeds the " +
                          std::to_string(stream_begin) + " history rows");
    }
    if (chunk < horizon) throw ConfigError("update chunk must cover at least one horizon");

    DynamicResult out;
    out.buffer_rows = buffer;
    const std::size_t total = values.rows();
    if (stream_begin >= total || total - stream_begin < horizon) {
        out.warnings.push_back("stream has fewer rows than one forecast horizon; nothing to do");
        return out;
    }
    const double threshold = policy.baseline_mse * (1.0 + policy.degradation_frac);
    std::vector<double> pred_rows, truth_rows;
    for (std::size_t c = 0, begin = stream_begin; begin < total; ++c, begin += chunk) {
        const std::size_t end = std::min(total, begin + chunk);
        const auto windows = windows_for_targets(values, lookback, horizon, begin, end);
        if (windows.empty()) {
            out.warnings.push_back("trailing chunk at row " + std::to_string(begin) + " is shorter than the horizon");
            break;
        }
        const Forecasts f = forecast_windows(m, windows);
        pred_rows.insert(pred_rows.end(), f.pred.data().begin(), f.pred.data().end());
        truth_rows.insert(truth_rows.end(), f.truth.data().begin(), f.truth.data().end());
        out.forecasts.origins.insert(out.forecasts.origins.end(), f.origins.begin(), f.origins.end());

        ChunkRecord rec{c, begin, end, windows.size(), mean_squared(f.pred, f.truth), false};
        if (rec.mse > threshold) {
            UpdateEvent ev{c, begin, end, end - buffer, end, rec.mse, 0.0};
            const auto train = make_windows(slice_rows(values, end - buffer, buffer), lookback, horizon,
                                            m.cfg.train.stride, end - buffer);
            const Tensor h = hidden_matrix(feature_matrix(m, train), m.readout);
            m.readout.beta = fit_beta(h, target_matrix(train), m.readout.ridge);
            const Forecasts again = forecast_windows(m, windows);
            ev.mse_after = mean_squared(again.pred, again.truth);
            out.events.push_back(ev);
            rec.updated = true;
        }
        out.chunks.push_back(rec);
    }
    const std::size_t k = m.outputs(), rows = out.forecasts.origins.size();
    if (rows) {
        out.forecasts.pred = Tensor({rows, k}, std::move(pred_rows));
        out.forecasts.truth = Tensor({rows, k}, std::move(truth_rows));
    }
    return out;
}

}  // namespace acnet
