#pragma once

#include <acnet/preprocess.hpp>
#include <acnet/rng.hpp>
#include <acnet/tensor.hpp>

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace acnet {

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

/// Whole-field decimal parse ('.' separator); nullopt when the text is not a number.
inline std::optional<double> parse_number(std::string_view s) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

}  // namespace detail

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Parses CSV text: header row required; the first column is treated as a
/// timestamp when the first data row's first field is not numeric.
/// `source` names the input in error messages.
inline SeriesFrame parse_csv(std::istream& in, const std::string& source) {
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](std::size_t col, const std::string& what) -> ConfigError {
        return ConfigError(source + ":" + std::to_string(line_no) + (col ? ":" + std::to_string(col) : "") + ": " + what);
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!detail::trim(line).empty()) break;
    }
    if (line_no == 0 || detail::trim(line).empty()) throw ConfigError(source + ": empty file, header row required");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    std::vector<std::string> header;
    for (auto field : detail::split_fields(line)) header.emplace_back(field);

    SeriesFrame frame;
    std::optional<bool> has_time;
    std::vector<double> data;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_fields(line);
        if (fields.size() != header.size()) {
            throw fail(0, "row has " + std::to_string(fields.size()) + " fields, header has " +
                              std::to_string(header.size()));
        }
        // A lone column is always data, never a timestamp.
        if (!has_time) has_time = header.size() > 1 && !detail::parse_number(fields[0]).has_value();
        const std::size_t first = *has_time ? 1 : 0;
        if (*has_time) frame.timestamps.emplace_back(fields[0]);
        for (std::size_t j = first; j < fields.size(); ++j) {
            const auto v = detail::parse_number(fields[j]);
            if (!v) throw fail(j + 1, "cannot parse '" + std::string(fields[j]) + "' as a number");
            if (!std::isfinite(*v)) throw fail(j + 1, "non-finite value in data row " + std::to_string(rows + 1));
            data.push_back(*v);
        }
        ++rows;
    }
    if (rows == 0) throw ConfigError(source + ": no data rows after the header");
    const std::size_t first = *has_time ? 1 : 0;
    for (std::size_t j = first; j < header.size(); ++j) frame.var_names.push_back(header[j]);
    frame.values = Tensor({rows, header.size() - first}, std::move(data));
    return frame;
}

inline SeriesFrame load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open data file '" + path + "'");
    return parse_csv(in, path);
}

inline void write_csv(std::ostream& os, const SeriesFrame& frame) {
    const bool time = !frame.timestamps.empty();
    if (time) os << "timestamp,";
    for (std::size_t j = 0; j < frame.variables(); ++j) {
        if (j) os << ',';
        os << (j < frame.var_names.size() ? frame.var_names[j] : "x" + std::to_string(j));
    }
    os << '\n';
    for (std::size_t i = 0; i < frame.steps(); ++i) {
        if (time) os << frame.timestamps[i] << ',';
        for (std::size_t j = 0; j < frame.variables(); ++j) {
            if (j) os << ',';
            os << format_double(frame.values(i, j));
        }
        os << '\n';
    }
}

inline void save_csv(const std::string& path, const SeriesFrame& frame) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    write_csv(out, frame);
}

/// Chronological 7:1:2 split by row count.
struct SplitSizes {
    std::size_t train = 0, val = 0, test = 0;
    std::size_t val_begin() const { return train; }
    std::size_t test_begin() const { return train + val; }
};

inline SplitSizes split_sizes(std::size_t steps) {
    SplitSizes s;
    s.train = steps * 7 / 10;
    s.test = steps * 2 / 10;
    s.val = steps - s.train - s.test;
    return s;
}

// ---------------------------------------------------------------------------
// Synthetic generators.

enum class Generator { sine_mix, ar_long_memory, logistic_map, mean_shift };

inline std::string_view to_string(Generator g) {
    switch (g) {
        case Generator::sine_mix: return "sine_mix";
        case Generator::ar_long_memory: return "ar_long_memory";
        case Generator::logistic_map: return "logistic_map";
        case Generator::mean_shift: return "mean_shift";
    }
    return "sine_mix";
}

inline Generator parse_generator(std::string_view s) {
    for (auto g : {Generator::sine_mix, Generator::ar_long_memory, Generator::logistic_map, Generator::mean_shift})
        if (s == to_string(g)) return g;
    throw ConfigError("unknown generator '" + std::string(s) + "'");
}

struct SyntheticSpec {
    Generator generator = Generator::sine_mix;
    std::size_t steps = 2000;
    std::size_t variables = 4;
    std::uint64_t seed = 42;
    double noise_sigma = 0.1;
    std::optional<std::size_t> shift_at;  // mean_shift only; defaults to steps / 2
};

/// Periods mixed by sine_mix; every component repeats after kSinePeriod steps.
inline constexpr std::size_t kSinePeriods[] = {12, 24, 48};
inline constexpr std::size_t kSinePeriod = 48;

/// Coefficients of the long-memory autoregression x(t) = a x(t-1) + b x(t-60) + e.
inline constexpr double kArShort = 0.2;
inline constexpr double kArLong = 0.7;
inline constexpr std::size_t kArLag = 60;
inline constexpr double kLogisticR = 3.9;

namespace detail {

inline Tensor sine_mix_values(std::size_t steps, std::size_t vars, Rng rng, double noise) {
    Tensor v({steps, vars});
    for (std::size_t j = 0; j < vars; ++j) {
        double amp[3], phase[3];
        for (int k = 0; k < 3; ++k) {
            amp[k] = rng.uniform(0.5, 1.5);
            phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        }
        for (std::size_t t = 0; t < steps; ++t) {
            double x = 0.0;
            for (int k = 0; k < 3; ++k) {
                // Reduce the phase argument exactly so periodicity holds to rounding.
                const double cycle = static_cast<double>(t % kSinePeriods[k]) / static_cast<double>(kSinePeriods[k]);
                x += amp[k] * std::sin(2.0 * std::numbers::pi * cycle + phase[k]);
            }
            v(t, j) = x;
        }
    }
    if (noise > 0.0)
        for (double& x : v.data()) x += noise * rng.normal();
    return v;
}

inline Tensor ar_values(std::size_t steps, std::size_t vars, Rng rng, double noise) {
    const std::size_t burn = 10 * kArLag;
    Tensor v({steps, vars});
    const double sd = noise > 0.0 ? noise : 1.0;
    for (std::size_t j = 0; j < vars; ++j) {
        std::vector<double> x(steps + burn, 0.0);
        for (std::size_t t = 0; t < x.size(); ++t) {
            double next = sd * rng.normal();
            if (t >= 1) next += kArShort * x[t - 1];
            if (t >= kArLag) next += kArLong * x[t - kArLag];
            x[t] = next;
        }
        for (std::size_t t = 0; t < steps; ++t) v(t, j) = x[t + burn];
    }
    return v;
}

inline Tensor logistic_values(std::size_t steps, std::size_t vars, Rng rng, double noise) {
    Tensor v({steps, vars});
    for (std::size_t j = 0; j < vars; ++j) {
        double x = rng.uniform(0.1, 0.9);
        for (int k = 0; k < 100; ++k) x = kLogisticR * x * (1.0 - x);
        for (std::size_t t = 0; t < steps; ++t) {
            v(t, j) = x;
            x = kLogisticR * x * (1.0 - x);
        }
    }
    if (noise > 0.0)
        for (double& x : v.data()) x += noise * rng.normal();
    return v;
}

}  // namespace detail

/// Deterministic series for a spec. mean_shift is a noisy sine mix with a
/// step of +3 sigma (sigma of the pre-shift segment, per variable) from shift_at on.
inline SeriesFrame generate(const SyntheticSpec& spec) {
    if (spec.steps < 2) throw ConfigError("generator needs at least 2 steps");
    if (spec.variables < 1) throw ConfigError("generator needs at least 1 variable");
    if (!(spec.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    const Rng rng = Rng(spec.seed).split(to_string(spec.generator));
    SeriesFrame f;
    switch (spec.generator) {
        case Generator::sine_mix: f.values = detail::sine_mix_values(spec.steps, spec.variables, rng, spec.noise_sigma); break;
        case Generator::ar_long_memory: f.values = detail::ar_values(spec.steps, spec.variables, rng, spec.noise_sigma); break;
        case Generator::logistic_map: f.values = detail::logistic_values(spec.steps, spec.variables, rng, spec.noise_sigma); break;
        case Generator::mean_shift: {
            f.values = detail::sine_mix_values(spec.steps, spec.variables, rng, spec.noise_sigma);
            const std::size_t at = spec.shift_at.value_or(spec.steps / 2);
            if (at < 2 || at >= spec.steps) throw ConfigError("shift_at must fall inside the series");
            const NormStats st = fit_stats(f.values, at);
            for (std::size_t t = at; t < spec.steps; ++t)
                for (std::size_t j = 0; j < spec.variables; ++j) f.values(t, j) += 3.0 * st.sigma[j];
            break;
        }
    }
    for (std::size_t j = 0; j < spec.variables; ++j) f.var_names.push_back("x" + std::to_string(j));
    return f;
}

}  // namespace acnet
