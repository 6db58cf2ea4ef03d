#pragma once

#include <acnet/tensor.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace acnet {

// ---------------------------------------------------------------------------
// Series container and per-variable standardization.

inline constexpr double kSigmaFloor = 1e-8;

struct NormStats {
    std::vector<double> mu;
    std::vector<double> sigma;
    std::vector<std::string> warnings;
};

/// T x N multivariate series plus the statistics used to standardize it.
struct SeriesFrame {
    Tensor values;  // T x N
    std::vector<std::string> var_names;
    std::vector<std::string> timestamps;  // empty when the source had none
    std::optional<NormStats> stats;
    bool normalized = false;

    std::size_t steps() const { return values.empty() ? 0 : values.rows(); }
    std::size_t variables() const { return values.empty() ? 0 : values.cols(); }

    void validate() const {
        if (values.rank() != 2) throw DimensionError("series values must be a T x N matrix");
        if (steps() < 2) throw ConfigError("series needs at least 2 timesteps, got " + std::to_string(steps()));
        if (!var_names.empty() && var_names.size() != variables()) {
            throw DimensionError("series has " + std::to_string(variables()) + " columns but " +
                                 std::to_string(var_names.size()) + " names");
        }
        for (std::size_t i = 0; i < steps(); ++i)
            for (std::size_t j = 0; j < variables(); ++j)
                if (!std::isfinite(values(i, j))) {
                    throw NumericError("non-finite value at row " + std::to_string(i) + ", column " +
                                       std::to_string(j));
                }
    }
};

/// Mean and population standard deviation over the first train_rows rows.
inline NormStats fit_stats(const Tensor& values, std::size_t train_rows, double sigma_floor = kSigmaFloor,
                           std::span<const std::string> names = {}) {
    if (values.rank() != 2) throw DimensionError("fit_stats: expected a T x N matrix");
    if (train_rows < 1 || train_rows > values.rows()) {
        throw ConfigError("fit_stats: train_rows " + std::to_string(train_rows) + " outside [1, " +
                          std::to_string(values.rows()) + "]");
    }
    const std::size_t n = values.cols();
    NormStats st;
    st.mu.resize(n);
    st.sigma.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        // Shifted accumulation: a constant column yields its value exactly.
        const double x0 = values(0, j);
        double s = 0.0;
        for (std::size_t i = 0; i < train_rows; ++i) s += values(i, j) - x0;
        const double mu = x0 + s / static_cast<double>(train_rows);
        double v = 0.0;
        for (std::size_t i = 0; i < train_rows; ++i) v += (values(i, j) - mu) * (values(i, j) - mu);
        double sd = std::sqrt(v / static_cast<double>(train_rows));
        const std::string name = j < names.size() ? names[j] : "#" + std::to_string(j);
        if (!std::isfinite(mu) || !std::isfinite(sd)) {
            throw NumericError("variable " + name + ": mean or std overflows double precision");
        }
        if (!(sd >= sigma_floor)) {
            st.warnings.push_back("variable " + name + ": std " + std::to_string(sd) + " below floor, clamped");
            sd = sigma_floor;
        }
        st.mu[j] = mu;
        st.sigma[j] = sd;
    }
    return st;
}

inline SeriesFrame with_stats(SeriesFrame frame, std::size_t train_rows, double sigma_floor = kSigmaFloor) {
    frame.stats = fit_stats(frame.values, train_rows, sigma_floor, frame.var_names);
    return frame;
}

inline Tensor normalize_rows(const Tensor& rows, const NormStats& st) {
    if (rows.rank() != 2 || rows.cols() != st.mu.size()) throw DimensionError("normalize: column count mismatch");
    Tensor out = rows;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = (rows(i, j) - st.mu[j]) / st.sigma[j];
    return out;
}

inline Tensor denormalize_rows(const Tensor& rows, const NormStats& st) {
    if (rows.rank() != 2 || rows.cols() != st.mu.size()) throw DimensionError("denormalize: column count mismatch");
    Tensor out = rows;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = rows(i, j) * st.sigma[j] + st.mu[j];
    return out;
}

inline SeriesFrame normalize(const SeriesFrame& frame) {
    if (!frame.stats) throw UsageError("normalize: frame has no statistics; call with_stats first");
    if (frame.normalized) throw UsageError("normalize: frame is already normalized");
    SeriesFrame out = frame;
    out.values = normalize_rows(frame.values, *frame.stats);
    out.normalized = true;
    return out;
}

inline SeriesFrame denormalize(const SeriesFrame& frame) {
    if (!frame.stats) throw UsageError("denormalize: frame has no statistics");
    if (!frame.normalized) throw UsageError("denormalize: frame is not normalized");
    SeriesFrame out = frame;
    out.values = denormalize_rows(frame.values, *frame.stats);
    out.normalized = false;
    return out;
}

// ---------------------------------------------------------------------------
// Orthogonal discrete wavelet transform with symmetric (half-sample) extension.

enum class WaveletFamily { haar, db2, db4 };

inline std::string_view to_string(WaveletFamily f) {
    switch (f) {
        case WaveletFamily::haar: return "haar";
        case WaveletFamily::db2: return "db2";
        case WaveletFamily::db4: return "db4";
    }
    return "?";
}

inline WaveletFamily parse_wavelet_family(std::string_view s) {
    if (s == "haar") return WaveletFamily::haar;
    if (s == "db2") return WaveletFamily::db2;
    if (s == "db4") return WaveletFamily::db4;
    throw ConfigError("unknown wavelet family '" + std::string(s) + "' (expected haar, db2 or db4)");
}

/// Decomposition low-pass filter, ordered as applied to x[2o+1-j].
inline std::span<const double> wavelet_lowpass(WaveletFamily f) {
    static constexpr std::array<double, 2> haar{0.7071067811865476, 0.7071067811865476};
    static constexpr std::array<double, 4> db2{-0.12940952255126037, 0.2241438680420134, 0.8365163037378079,
                                               0.48296291314453416};
    static constexpr std::array<double, 8> db4{-0.010597401785069032, 0.0328830116668852, 0.030841381835560764,
                                               -0.18703481171909309,  -0.027983769416859854, 0.6308807679298589,
                                               0.7148465705529157,    0.2303778133088965};
    switch (f) {
        case WaveletFamily::haar: return haar;
        case WaveletFamily::db2: return db2;
        case WaveletFamily::db4: return db4;
    }
    return haar;
}

/// Quadrature-mirror high-pass: g[j] = (-1)^(j+1) h[F-1-j].
inline std::vector<double> wavelet_highpass(WaveletFamily f) {
    const auto h = wavelet_lowpass(f);
    const std::size_t n = h.size();
    std::vector<double> g(n);
    for (std::size_t j = 0; j < n; ++j) g[j] = (j % 2 == 0 ? -1.0 : 1.0) * h[n - 1 - j];
    return g;
}

struct WaveletPyramid {
    WaveletFamily family = WaveletFamily::db4;
    std::vector<std::vector<double>> details;  // details[0] is the finest level
    std::vector<double> approx;                // coarsest approximation
    std::vector<std::size_t> lengths;          // lengths[j] = signal length entering level j+1
};

namespace detail {

inline std::size_t symmetric_index(std::ptrdiff_t i, std::size_t n) {
    const auto period = static_cast<std::ptrdiff_t>(2 * n);
    std::ptrdiff_t k = i % period;
    if (k < 0) k += period;
    return static_cast<std::size_t>(k < static_cast<std::ptrdiff_t>(n) ? k : period - 1 - k);
}

inline void analysis_step(std::span<const double> x, std::span<const double> h, std::span<const double> g,
                          std::vector<double>& approx, std::vector<double>& detail) {
    const std::size_t n = x.size(), taps = h.size();
    const std::size_t out = (n + taps - 1) / 2;
    approx.assign(out, 0.0);
    detail.assign(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
        double a = 0.0, d = 0.0;
        for (std::size_t j = 0; j < taps; ++j) {
            const double v = x[symmetric_index(static_cast<std::ptrdiff_t>(2 * o + 1) - static_cast<std::ptrdiff_t>(j), n)];
            a += h[j] * v;
            d += g[j] * v;
        }
        approx[o] = a;
        detail[o] = d;
    }
}

// Adjoint of analysis_step restricted to the original support.
inline std::vector<double> synthesis_step(std::span<const double> approx, std::span<const double> detail,
                                          std::span<const double> h, std::span<const double> g, std::size_t n) {
    const std::size_t taps = h.size();
    std::vector<double> x(n, 0.0);
    for (std::size_t o = 0; o < approx.size(); ++o) {
        for (std::size_t j = 0; j < taps; ++j) {
            const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(2 * o + 1) - static_cast<std::ptrdiff_t>(j);
            if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(n)) continue;
            x[static_cast<std::size_t>(idx)] += h[j] * approx[o] + g[j] * detail[o];
        }
    }
    return x;
}

}  // namespace detail

inline std::size_t max_wavelet_levels(std::size_t length) {
    std::size_t levels = 0;
    while ((std::size_t{2} << levels) <= length) ++levels;
    return levels;  // floor(log2(length))
}

inline WaveletPyramid dwt(std::span<const double> signal, WaveletFamily family, std::size_t levels) {
    if (levels < 1) throw ConfigError("dwt: levels must be at least 1");
    if (levels >= 63 || signal.size() < (std::size_t{1} << levels)) {
        throw ConfigError("dwt: signal of length " + std::to_string(signal.size()) + " too short for " +
                          std::to_string(levels) + " levels");
    }
    const auto h = wavelet_lowpass(family);
    const auto g = wavelet_highpass(family);
    WaveletPyramid p;
    p.family = family;
    std::vector<double> current(signal.begin(), signal.end());
    for (std::size_t j = 0; j < levels; ++j) {
        p.lengths.push_back(current.size());
        std::vector<double> a, d;
        detail::analysis_step(current, h, g, a, d);
        p.details.push_back(std::move(d));
        current = std::move(a);
    }
    p.approx = std::move(current);
    return p;
}

inline std::vector<double> idwt(const WaveletPyramid& p) {
    const auto h = wavelet_lowpass(p.family);
    const auto g = wavelet_highpass(p.family);
    std::vector<double> current = p.approx;
    for (std::size_t j = p.details.size(); j-- > 0;) {
        if (p.details[j].size() != current.size()) throw DimensionError("idwt: coefficient lengths disagree");
        current = detail::synthesis_step(current, p.details[j], h, g, p.lengths[j]);
    }
    return current;
}

/// Soft/hard compromise shrinkage: a = 0 is hard thresholding, a = 1 soft.
inline double compromise_threshold(double coeff, double gamma, double a) {
    const double mag = std::abs(coeff);
    if (mag < gamma) return 0.0;
    return std::copysign(mag - a * gamma, coeff);
}

inline void compromise_threshold(WaveletPyramid& p, double gamma, double a) {
    if (!(gamma >= 0.0)) throw ConfigError("threshold gamma must be nonnegative");
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("compromise coefficient a must lie in [0, 1]");
    for (auto& level : p.details)
        for (double& c : level) c = compromise_threshold(c, gamma, a);
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

/// VisuShrink: sigma from the median absolute finest detail, times sqrt(2 ln T).
inline double universal_threshold(const WaveletPyramid& p, std::size_t length) {
    if (p.details.empty()) return 0.0;
    std::vector<double> mags;
    mags.reserve(p.details.front().size());
    for (double c : p.details.front()) mags.push_back(std::abs(c));
    const double sigma = median(std::move(mags)) / 0.6745;
    return sigma * std::sqrt(2.0 * std::log(static_cast<double>(std::max<std::size_t>(length, 2))));
}

struct GammaRule {
    enum class Kind { universal, fixed } kind = Kind::universal;
    double value = 0.0;

    static GammaRule universal() { return {}; }
    static GammaRule fixed(double gamma) { return {Kind::fixed, gamma}; }
    friend bool operator==(const GammaRule&, const GammaRule&) = default;
};

struct WaveletConfig {
    WaveletFamily family = WaveletFamily::db4;
    std::size_t levels = 3;
    double a = 0.5;
    GammaRule gamma = GammaRule::universal();

    void validate() const {
        if (levels < 1) throw ConfigError("wavelet levels must be at least 1");
        if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("wavelet compromise coefficient a must lie in [0, 1]");
        if (gamma.kind == GammaRule::Kind::fixed && !(gamma.value >= 0.0)) {
            throw ConfigError("fixed wavelet threshold must be nonnegative");
        }
    }
    friend bool operator==(const WaveletConfig&, const WaveletConfig&) = default;
};

/// Decompose, shrink every detail level, reconstruct. Depth is capped at
/// floor(log2(T)); signals shorter than 2 samples are returned unchanged.
inline std::vector<double> denoise_signal(std::span<const double> signal, const WaveletConfig& cfg) {
    cfg.validate();
    const std::size_t levels = std::min(cfg.levels, max_wavelet_levels(signal.size()));
    if (levels == 0) return {signal.begin(), signal.end()};
    WaveletPyramid p = dwt(signal, cfg.family, levels);
    const double gamma =
        cfg.gamma.kind == GammaRule::Kind::fixed ? cfg.gamma.value : universal_threshold(p, signal.size());
    compromise_threshold(p, gamma, cfg.a);
    return idwt(p);
}

/// Column-wise denoising of a T x N block.
inline Tensor denoise_columns(const Tensor& values, const WaveletConfig& cfg) {
    if (values.rank() != 2) throw DimensionError("denoise: expected a T x N matrix");
    Tensor out = values;
    std::vector<double> column(values.rows());
    for (std::size_t j = 0; j < values.cols(); ++j) {
        for (std::size_t i = 0; i < values.rows(); ++i) column[i] = values(i, j);
        const auto clean = denoise_signal(column, cfg);
        for (std::size_t i = 0; i < values.rows(); ++i) out(i, j) = clean[i];
    }
    return out;
}

inline SeriesFrame denoise(const SeriesFrame& frame, const WaveletConfig& cfg) {
    if (!frame.normalized) throw UsageError("denoise: expects a normalized frame");
    SeriesFrame out = frame;
    out.values = denoise_columns(frame.values, cfg);
    return out;
}

// ---------------------------------------------------------------------------
// Rolling supervised windows.

struct WindowPair {
    Tensor input;   // L x N
    Tensor target;  // L_y x N
    std::size_t origin_index = 0;
};

inline std::size_t window_count(std::size_t steps, std::size_t lookback, std::size_t horizon, std::size_t stride) {
    if (stride < 1) throw ConfigError("window stride must be at least 1");
    if (lookback < 1 || horizon < 1) throw ConfigError("lookback and horizon must be at least 1");
    if (steps < lookback + horizon) return 0;
    return (steps - lookback - horizon) / stride + 1;
}

inline Tensor slice_rows(const Tensor& values, std::size_t begin, std::size_t count) {
    const std::size_t n = values.cols();
    std::vector<double> data(values.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                             values.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
    return Tensor(Shape{count, n}, std::move(data));
}

/// Windows over rows [0, T) of values; origin_index is reported relative to
/// row_offset so callers can slice a split and keep absolute row numbers.
inline std::vector<WindowPair> make_windows(const Tensor& values, std::size_t lookback, std::size_t horizon,
                                            std::size_t stride, std::size_t row_offset = 0) {
    if (values.rank() != 2) throw DimensionError("make_windows: expected a T x N matrix");
    const std::size_t count = window_count(values.rows(), lookback, horizon, stride);
    if (count == 0) {
        throw ConfigError("series of " + std::to_string(values.rows()) + " rows is shorter than lookback " +
                          std::to_string(lookback) + " + horizon " + std::to_string(horizon));
    }
    std::vector<WindowPair> out;
    out.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        const std::size_t origin = w * stride;
        out.push_back(WindowPair{slice_rows(values, origin, lookback), slice_rows(values, origin + lookback, horizon),
                                 row_offset + origin});
    }
    return out;
}

inline std::vector<WindowPair> make_windows(const SeriesFrame& frame, std::size_t lookback, std::size_t horizon,
                                            std::size_t stride) {
    return make_windows(frame.values, lookback, horizon, stride);
}

}  // namespace acnet
