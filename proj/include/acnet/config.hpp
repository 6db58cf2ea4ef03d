#pragma once

#include <acnet/datasets.hpp>
#include <acnet/pipeline.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace acnet {

namespace detail {

inline std::size_t parse_count(std::string_view s) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("expected a non-negative integer, got '" + std::string(s) + "'");
    return v;
}

inline std::uint64_t parse_u64(std::string_view s) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("expected an unsigned integer, got '" + std::string(s) + "'");
    return v;
}

inline double parse_real(std::string_view s) {
    const auto v = parse_number(s);
    if (!v || !std::isfinite(*v)) throw ConfigError("expected a finite number, got '" + std::string(s) + "'");
    return *v;
}

inline bool parse_switch(std::string_view s) {
    if (s == "on" || s == "true" || s == "1") return true;
    if (s == "off" || s == "false" || s == "0") return false;
    throw ConfigError("expected on or off, got '" + std::string(s) + "'");
}

inline std::vector<std::size_t> parse_count_list(std::string_view s) {
    std::vector<std::size_t> out;
    for (auto field : split_fields(s)) out.push_back(parse_count(field));
    return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

using Setter = std::function<void(ModelConfig&, std::string_view)>;

inline const std::map<std::string, Setter, std::less<>>& config_setters() {
    static const std::map<std::string, Setter, std::less<>> table = {
        {"model.lookback", [](ModelConfig& c, std::string_view v) { c.lookback = parse_count(v); }},
        {"model.horizon", [](ModelConfig& c, std::string_view v) { c.horizon = parse_count(v); }},
        {"model.seed", [](ModelConfig& c, std::string_view v) { c.seed = parse_u64(v); }},
        {"model.ablation", [](ModelConfig& c, std::string_view v) { c.ablation = parse_ablation(v); }},
        {"model.denoise", [](ModelConfig& c, std::string_view v) { c.denoise = parse_switch(v); }},
        {"wavelet.family", [](ModelConfig& c, std::string_view v) { c.wavelet.family = parse_wavelet_family(v); }},
        {"wavelet.levels", [](ModelConfig& c, std::string_view v) { c.wavelet.levels = parse_count(v); }},
        {"wavelet.a", [](ModelConfig& c, std::string_view v) { c.wavelet.a = parse_real(v); }},
        {"wavelet.gamma",
         [](ModelConfig& c, std::string_view v) {
             c.wavelet.gamma = v == "universal" ? GammaRule::universal() : GammaRule::fixed(parse_real(v));
         }},
        {"tfe.channels", [](ModelConfig& c, std::string_view v) { c.temporal.channels = parse_count(v); }},
        {"tfe.kernel", [](ModelConfig& c, std::string_view v) { c.temporal.kernel = parse_count(v); }},
        {"tfe.dilations", [](ModelConfig& c, std::string_view v) { c.temporal.dilations = parse_count_list(v); }},
        {"tfe.pool_len", [](ModelConfig& c, std::string_view v) { c.temporal.pool_len = parse_count(v); }},
        {"deform.grid",
         [](ModelConfig& c, std::string_view v) {
             const auto x = v.find('x');
             if (x == std::string_view::npos) {
                 c.deform.kernel_h = c.deform.kernel_w = parse_count(v);
             } else {
                 c.deform.kernel_h = parse_count(trim(v.substr(0, x)));
                 c.deform.kernel_w = parse_count(trim(v.substr(x + 1)));
             }
         }},
        {"readout.hidden", [](ModelConfig& c, std::string_view v) { c.readout.hidden = parse_count(v); }},
        {"readout.ridge", [](ModelConfig& c, std::string_view v) { c.readout.ridge = parse_real(v); }},
        {"readout.fan_in_scale", [](ModelConfig& c, std::string_view v) { c.readout.fan_in_scale = parse_switch(v); }},
        {"train.mode", [](ModelConfig& c, std::string_view v) { c.train.mode = parse_train_mode(v); }},
        {"train.epochs", [](ModelConfig& c, std::string_view v) { c.train.epochs = parse_count(v); }},
        {"train.lr", [](ModelConfig& c, std::string_view v) { c.train.lr = parse_real(v); }},
        {"train.stride", [](ModelConfig& c, std::string_view v) { c.train.stride = parse_count(v); }},
        {"update.degradation_frac", [](ModelConfig& c, std::string_view v) { c.update.degradation_frac = parse_real(v); }},
        {"update.chunk", [](ModelConfig& c, std::string_view v) { c.update.chunk = parse_count(v); }},
        {"update.buffer", [](ModelConfig& c, std::string_view v) { c.update.buffer = parse_count(v); }},
    };
    return table;
}

}  // namespace detail

/// Applies `key = value` lines on top of cfg. '#' starts a comment; keys are
/// namespaced; unknown or repeated keys are errors. Errors cite source:line.
inline void apply_config(ModelConfig& cfg, std::istream& in, const std::string& source) {
    std::string line;
    std::size_t line_no = 0;
    std::set<std::string, std::less<>> seen;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view text = detail::trim(std::string_view(line).substr(0, line.find('#')));
        if (text.empty()) continue;
        const std::string where = source + ":" + std::to_string(line_no) + ": ";
        const auto eq = text.find('=');
        if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
        const std::string_view key = detail::trim(text.substr(0, eq)), value = detail::trim(text.substr(eq + 1));
        const auto& setters = detail::config_setters();
        const auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError(where + "unknown key '" + std::string(key) + "'");
        if (!seen.insert(std::string(key)).second) throw ConfigError(where + "key '" + std::string(key) + "' set twice");
        try {
            it->second(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + std::string(key) + ": " + e.what());
        }
    }
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
}

inline ModelConfig parse_config(const std::string& text, const std::string& source = "config") {
    ModelConfig cfg;
    std::istringstream in(text);
    apply_config(cfg, in, source);
    return cfg;
}

inline ModelConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    ModelConfig cfg;
    apply_config(cfg, in, path);
    return cfg;
}

/// Every key with its current value; parse_config(to_text(c)) == c.
inline std::string to_text(const ModelConfig& c) {
    std::ostringstream os;
    os << "model.lookback = " << c.lookback << '\n'
       << "model.horizon = " << c.horizon << '\n'
       << "model.seed = " << c.seed << '\n'
       << "model.ablation = " << to_string(c.ablation) << '\n'
       << "model.denoise = " << (c.denoise ? "on" : "off") << '\n'
       << "wavelet.family = " << to_string(c.wavelet.family) << '\n'
       << "wavelet.levels = " << c.wavelet.levels << '\n'
       << "wavelet.a = " << format_double(c.wavelet.a) << '\n'
       << "wavelet.gamma = "
       << (c.wavelet.gamma.kind == GammaRule::Kind::universal ? "universal" : format_double(c.wavelet.gamma.value))
       << '\n'
       << "tfe.channels = " << c.temporal.channels << '\n'
       << "tfe.kernel = " << c.temporal.kernel << '\n'
       << "tfe.dilations = " << detail::join(c.temporal.dilations) << '\n'
       << "tfe.pool_len = " << c.temporal.pool_len << '\n'
       << "deform.grid = " << c.deform.kernel_h << 'x' << c.deform.kernel_w << '\n'
       << "readout.hidden = " << c.readout.hidden << '\n'
       << "readout.ridge = " << format_double(c.readout.ridge) << '\n'
       << "readout.fan_in_scale = " << (c.readout.fan_in_scale ? "on" : "off") << '\n'
       << "train.mode = " << to_string(c.train.mode) << '\n'
       << "train.epochs = " << c.train.epochs << '\n'
       << "train.lr = " << format_double(c.train.lr) << '\n'
       << "train.stride = " << c.train.stride << '\n'
       << "update.degradation_frac = " << format_double(c.update.degradation_frac) << '\n'
       << "update.chunk = " << c.update.chunk << '\n'
       << "update.buffer = " << c.update.buffer << '\n';
    return os.str();
}

}  // namespace acnet
