#pragma once

#include <acnet/datasets.hpp>
#include <acnet/pipeline.hpp>
#include <acnet/preprocess.hpp>
#include <acnet/tensor.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace acnet {

inline constexpr double kMapeFloor = 1e-4;

struct EvalReport {
    double mse = 0.0, mae = 0.0, mape = 0.0, rmse = 0.0;
    std::vector<double> per_window_errors;  // mean squared error of each window
    std::size_t horizon = 0;
    std::size_t windows = 0;
    std::size_t mape_count = 0;  // targets with |y| above the floor
    double elapsed_train_s = 0.0, elapsed_infer_s = 0.0;
    std::size_t flops_estimate = 0, param_count = 0;
};

/// Metrics over M x K prediction/truth rows (one row per window).
/// MAPE skips targets with |y| <= kMapeFloor and is NaN when none remain.
inline EvalReport metrics(const Tensor& pred, const Tensor& truth, std::size_t horizon = 0) {
    if (pred.empty() || truth.empty()) throw UsageError("metrics: no forecasts to score");
    if (pred.rank() != 2) throw DimensionError("metrics: expected M x K rows");
    pred.require_same_shape(truth, "metrics");
    EvalReport r;
    r.horizon = horizon;
    r.windows = pred.rows();
    double se = 0.0, ae = 0.0, pe = 0.0;
    for (std::size_t i = 0; i < pred.rows(); ++i) {
        double row = 0.0;
        for (std::size_t k = 0; k < pred.cols(); ++k) {
            const double d = pred(i, k) - truth(i, k);
            row += d * d;
            ae += std::abs(d);
            if (std::abs(truth(i, k)) > kMapeFloor) {
                pe += std::abs(d / truth(i, k));
                ++r.mape_count;
            }
        }
        se += row;
        r.per_window_errors.push_back(row / static_cast<double>(pred.cols()));
    }
    const double n = static_cast<double>(pred.size());
    r.mse = se / n;
    r.mae = ae / n;
    r.rmse = std::sqrt(r.mse);
    r.mape = r.mape_count ? pe / static_cast<double>(r.mape_count) : std::numeric_limits<double>::quiet_NaN();
    return r;
}

/// First `steps` forecast steps of M x (L_y N) rows.
inline Tensor leading_steps(const Tensor& rows, std::size_t variables, std::size_t steps) {
    const std::size_t k = steps * variables;
    if (k > rows.cols()) throw ConfigError("requested horizon exceeds the model's forecast length");
    Tensor out({rows.rows(), k});
    for (std::size_t i = 0; i < rows.rows(); ++i)
        for (std::size_t j = 0; j < k; ++j) out(i, j) = rows(i, j);
    return out;
}

// ---------------------------------------------------------------------------
// Student t distribution.

namespace detail {

// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double beta_cf(double a, double b, double x) {
    constexpr double tiny = 1e-300, eps = 1e-15;
    double c = 1.0, d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < eps) return h;
    }
    throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
    if (!(x >= 0.0 && x <= 1.0)) throw NumericError("incomplete_beta: x outside [0, 1]");
    if (x == 0.0 || x == 1.0) return x;
    const double front =
        std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
    return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

/// P(|T| >= |t|) for Student t with `dof` degrees of freedom.
inline double t_two_sided_p(double t, double dof) {
    if (std::isinf(t)) return 0.0;
    return incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
}

/// One-sided critical value: P(T > t) = alpha.
inline double t_critical(double dof, double alpha = 0.05) {
    double lo = 0.0, hi = 1.0;
    while (0.5 * t_two_sided_p(hi, dof) > alpha) hi *= 2.0;
    for (int i = 0; i < 200 && hi - lo > 1e-13; ++i) {
        const double mid = 0.5 * (lo + hi);
        (0.5 * t_two_sided_p(mid, dof) > alpha ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct TTestResult {
    double t_stat = 0.0;
    double p_value = 1.0;  // two-sided
    double dof = 0.0;
    double mean_diff = 0.0;  // mean of a - b
    bool significant = false;  // p_value < 0.05
    bool degenerate = false;   // differences have zero variance
};

/// Paired t-test on per-window errors; positive t means a has larger errors.
inline TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("paired_ttest: vectors differ in length");
    if (a.size() < 2) throw UsageError("paired_ttest: needs at least two pairs");
    const double n = static_cast<double>(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= n;
    double ss = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
        scale = std::max(scale, std::abs(a[i] - b[i]));
    }
    TTestResult r;
    r.dof = n - 1.0;
    r.mean_diff = mean;
    const double sd = std::sqrt(ss / r.dof), se = sd / std::sqrt(n);
    // Spread at rounding level counts as zero variance.
    if (sd <= 1e-12 * scale || scale == 0.0) {
        r.degenerate = true;
        r.t_stat = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
        r.p_value = mean == 0.0 ? 1.0 : 0.0;
    } else {
        r.t_stat = mean / se;
        r.p_value = t_two_sided_p(r.t_stat, r.dof);
    }
    r.significant = r.p_value < 0.05;
    return r;
}

// ---------------------------------------------------------------------------
// Phase-space reconstruction.

inline double autocorrelation(std::span<const double> x, std::size_t lag) {
    const std::size_t n = x.size();
    if (lag >= n) return 0.0;
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0, cov = 0.0;
    for (std::size_t t = 0; t < n; ++t) var += (x[t] - mean) * (x[t] - mean);
    for (std::size_t t = 0; t + lag < n; ++t) cov += (x[t] - mean) * (x[t + lag] - mean);
    return var > 0.0 ? cov / var : 0.0;
}

/// First lag whose autocorrelation drops below 1/e; 1 when the series is
/// constant or never decorrelates within half its length.
inline std::size_t default_tau(std::span<const double> x) {
    for (std::size_t lag = 1; lag <= x.size() / 2; ++lag)
        if (autocorrelation(x, lag) < std::exp(-1.0)) return lag;
    return 1;
}

/// Delay embedding: row t is (x(t), x(t+tau)[, x(t+2 tau)]).
inline Tensor phase_space(std::span<const double> x, std::size_t tau, std::size_t dim) {
    if (tau < 1) throw ConfigError("phase space lag tau must be at least 1");
    if (dim != 2 && dim != 3) throw ConfigError("phase space dimension must be 2 or 3");
    if (x.size() <= tau * (dim - 1)) throw ConfigError("series too short for the requested delay embedding");
    const std::size_t points = x.size() - tau * (dim - 1);
    Tensor out({points, dim});
    for (std::size_t t = 0; t < points; ++t)
        for (std::size_t k = 0; k < dim; ++k) out(t, k) = x[t + k * tau];
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation runs.

/// Scores windows whose targets lie in [begin, end). `raw_units` maps
/// predictions and truth back through the model's normalization first.
inline EvalReport evaluate(const Model& m, const Tensor& values, std::size_t begin, std::size_t end,
                           std::size_t horizon = 0, bool raw_units = false) {
    const std::size_t steps = horizon ? horizon : m.cfg.horizon;
    if (steps > m.cfg.horizon) {
        throw ConfigError("evaluation horizon " + std::to_string(steps) + " exceeds the model horizon " +
                          std::to_string(m.cfg.horizon));
    }
    const auto windows = windows_for_targets(values, m.cfg.lookback, m.cfg.horizon, begin, end);
    if (windows.empty()) throw ConfigError("no complete windows in the evaluation range");
    const auto start = std::chrono::steady_clock::now();
    const Forecasts f = forecast_windows(m, windows);
    const double infer = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    Tensor pred = leading_steps(f.pred, m.variables, steps), truth = leading_steps(f.truth, m.variables, steps);
    if (raw_units) {
        const NormStats st = m.stats();
        auto undo = [&](Tensor& rows) {
            for (std::size_t i = 0; i < rows.rows(); ++i)
                for (std::size_t k = 0; k < rows.cols(); ++k) {
                    const std::size_t j = k % m.variables;
                    rows(i, k) = rows(i, k) * st.sigma[j] + st.mu[j];
                }
        };
        undo(pred);
        undo(truth);
    }
    EvalReport r = metrics(pred, truth, steps);
    r.elapsed_infer_s = infer;
    r.flops_estimate = m.flops();
    r.param_count = m.parameter_count();
    return r;
}

struct RunResult {
    Model model;
    TrainReport train;
    EvalReport test;
    double val_mse = std::numeric_limits<double>::quiet_NaN();
};

/// Normalizes raw values with training statistics, trains on the training
/// split, records the validation MSE as the update baseline and scores the
/// test split.
inline RunResult fit_and_evaluate(const ModelConfig& cfg, const Tensor& raw, const SplitSizes& split) {
    RunResult r;
    r.model = Model::init(cfg, raw.cols());
    const NormStats st = fit_stats(raw, split.train);
    r.model.set_stats(st);
    const Tensor values = normalize_rows(raw, st);
    r.train = train(r.model, values, split.train);
    if (split.val > 0) r.val_mse = range_mse(r.model, values, split.val_begin(), split.test_begin());
    r.model.baseline_mse = r.val_mse;
    r.test = evaluate(r.model, values, split.test_begin(), raw.rows());
    r.test.elapsed_train_s = r.train.seconds;
    return r;
}

struct LookbackRow {
    std::size_t lookback = 0;
    EvalReport report;
};

/// One model per lookback with identical seeds; every row scores the same
/// test targets.
inline std::vector<LookbackRow> lookback_study(const Tensor& raw, std::span<const std::size_t> lookbacks,
                                               const ModelConfig& base, const SplitSizes& split) {
    std::vector<LookbackRow> rows;
    for (std::size_t lookback : lookbacks) {
        ModelConfig cfg = base;
        cfg.lookback = lookback;
        rows.push_back({lookback, fit_and_evaluate(cfg, raw, split).test});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Report writers.

inline void write_metrics_header(std::ostream& os) {
    os << "label,horizon,windows,mse,mae,mape,rmse,train_s,infer_s,flops,params\n";
}

inline void write_metrics_row(std::ostream& os, const std::string& label, const EvalReport& r) {
    os << label << ',' << r.horizon << ',' << r.windows << ',' << format_double(r.mse) << ','
       << format_double(r.mae) << ',' << format_double(r.mape) << ',' << format_double(r.rmse) << ','
       << format_double(r.elapsed_train_s) << ',' << format_double(r.elapsed_infer_s) << ',' << r.flops_estimate
       << ',' << r.param_count << '\n';
}

inline void write_window_errors(std::ostream& os, const EvalReport& r) {
    os << "window,mse\n";
    for (std::size_t i = 0; i < r.per_window_errors.size(); ++i) os << i << ',' << format_double(r.per_window_errors[i]) << '\n';
}

/// Forecast-vs-truth rows: one line per (window, step, variable).
inline void write_forecasts(std::ostream& os, const Forecasts& f, std::size_t lookback, std::size_t variables) {
    os << "origin,target_row,step,variable,pred,truth\n";
    for (std::size_t i = 0; i < f.windows(); ++i)
        for (std::size_t k = 0; k < f.pred.cols(); ++k) {
            const std::size_t step = k / variables, j = k % variables;
            os << f.origins[i] << ',' << f.origins[i] + lookback + step << ',' << step << ',' << j << ','
               << format_double(f.pred(i, k)) << ',' << format_double(f.truth(i, k)) << '\n';
        }
}

inline void write_lookback_csv(std::ostream& os, std::span<const LookbackRow> rows) {
    os << "lookback,mse,mae,rmse,windows\n";
    for (const auto& r : rows)
        os << r.lookback << ',' << format_double(r.report.mse) << ',' << format_double(r.report.mae) << ','
           << format_double(r.report.rmse) << ',' << r.report.windows << '\n';
}

inline void write_phase_csv(std::ostream& os, const Tensor& points) {
    os << (points.cols() == 3 ? "x0,x1,x2\n" : "x0,x1\n");
    for (std::size_t i = 0; i < points.rows(); ++i) {
        for (std::size_t k = 0; k < points.cols(); ++k) os << (k ? "," : "") << format_double(points(i, k));
        os << '\n';
    }
}

inline void write_summary(std::ostream& os, const std::string& label, const EvalReport& r) {
    os << label << ": horizon " << r.horizon << ", " << r.windows << " windows, MSE " << r.mse << ", MAE " << r.mae
       << ", RMSE " << r.rmse << ", MAPE " << r.mape << '\n';
}

}  // namespace acnet
