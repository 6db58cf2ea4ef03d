#pragma once

#include <acnet/autodiff.hpp>
#include <acnet/rng.hpp>
#include <acnet/tensor.hpp>

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace acnet {

/// Tap placement for dilated_conv1d.
///  centered: out(t) = sum_i w_i x(t + d (i - (k+1)/2)), i = 1..k, k odd
///  causal:   out(t) = sum_i w_i x(t - d i),             i = 1..k
/// Samples outside [0, L) read as zero, so the output keeps length L.
enum class Alignment { centered, causal };

namespace detail {

inline std::ptrdiff_t tap_offset(std::size_t tap, std::size_t taps, std::size_t dilation, Alignment align) {
    const auto d = static_cast<std::ptrdiff_t>(dilation);
    const auto i = static_cast<std::ptrdiff_t>(tap);
    if (align == Alignment::causal) return -d * (i + 1);
    return d * (i - static_cast<std::ptrdiff_t>(taps - 1) / 2);
}

inline void check_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t dilation,
                         Alignment align) {
    if (x.rank() != 2) throw DimensionError("conv1d: input must be L x C_in, got " + shape_string(x.shape()));
    if (kernel.rank() != 3) throw DimensionError("conv1d: kernel must be C_out x C_in x k");
    if (kernel.dim(1) != x.cols()) {
        throw DimensionError("conv1d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, got " +
                             std::to_string(x.cols()));
    }
    if (bias.size() != kernel.dim(0)) throw DimensionError("conv1d: bias length must equal C_out");
    if (dilation < 1) throw ConfigError("conv1d: dilation must be at least 1");
    if (align == Alignment::centered && kernel.dim(2) % 2 == 0) {
        throw ConfigError("conv1d: centered alignment needs an odd kernel length");
    }
}

}  // namespace detail

inline Tensor dilated_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t dilation,
                             Alignment align = Alignment::centered) {
    detail::check_conv1d(x, kernel, bias, dilation, align);
    const std::size_t len = x.rows(), cin = x.cols(), cout = kernel.dim(0), taps = kernel.dim(2);
    Tensor out(Shape{len, cout});
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t co = 0; co < cout; ++co) out(t, co) = bias[co];
        for (std::size_t i = 0; i < taps; ++i) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + detail::tap_offset(i, taps, dilation, align);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
            const double* xs = &x(static_cast<std::size_t>(src), 0);
            for (std::size_t co = 0; co < cout; ++co) {
                double acc = 0.0;
                for (std::size_t ci = 0; ci < cin; ++ci) acc += kernel(co, ci, i) * xs[ci];
                out(t, co) += acc;
            }
        }
    }
    return out;
}

inline Var dilated_conv1d(Var x, Var kernel, Var bias, std::size_t dilation, Alignment align = Alignment::centered) {
    Tensor out = dilated_conv1d(x.value(), kernel.value(), bias.value(), dilation, align);
    return x.tape()->record(std::move(out), {x, kernel, bias},
                            [x, kernel, bias, dilation, align](GradTape& tape, const Tensor& g, const Tensor&) {
        const Tensor& xv = x.value();
        const Tensor& kv = kernel.value();
        const std::size_t len = xv.rows(), cin = xv.cols(), cout = kv.dim(0), taps = kv.dim(2);
        const bool need_x = tape.requires_grad(x), need_k = tape.requires_grad(kernel);
        Tensor gx(xv.shape()), gk(kv.shape()), gb(bias.value().shape());
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t co = 0; co < cout; ++co) gb[co] += g(t, co);
            for (std::size_t i = 0; i < taps; ++i) {
                const std::ptrdiff_t src =
                    static_cast<std::ptrdiff_t>(t) + detail::tap_offset(i, taps, dilation, align);
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                const auto s = static_cast<std::size_t>(src);
                for (std::size_t co = 0; co < cout; ++co) {
                    const double go = g(t, co);
                    if (go == 0.0) continue;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        if (need_x) gx(s, ci) += go * kv(co, ci, i);
                        if (need_k) gk(co, ci, i) += go * xv(s, ci);
                    }
                }
            }
        }
        tape.accumulate(x, std::move(gx));
        tape.accumulate(kernel, std::move(gk));
        tape.accumulate(bias, std::move(gb));
    });
}

/// P x L averaging operator with bins [floor(p L / P), floor((p + 1) L / P)).
inline Tensor adaptive_avg_pool_matrix(std::size_t length, std::size_t bins) {
    if (bins < 1) throw ConfigError("adaptive pooling needs at least one output bin");
    if (bins > length) throw ConfigError("adaptive pooling: " + std::to_string(bins) + " bins exceed length " +
                                         std::to_string(length));
    Tensor a(Shape{bins, length});
    for (std::size_t p = 0; p < bins; ++p) {
        const std::size_t lo = p * length / bins, hi = (p + 1) * length / bins;
        for (std::size_t t = lo; t < hi; ++t) a(p, t) = 1.0 / static_cast<double>(hi - lo);
    }
    return a;
}

/// L x P linear interpolation operator (half-sample centers, edge clamped).
/// Rows sum to one, so constants survive.
inline Tensor linear_upsample_matrix(std::size_t bins, std::size_t length) {
    if (bins < 1 || length < 1) throw ConfigError("upsample: extents must be positive");
    Tensor u(Shape{length, bins});
    const double ratio = static_cast<double>(bins) / static_cast<double>(length);
    for (std::size_t t = 0; t < length; ++t) {
        double src = (static_cast<double>(t) + 0.5) * ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(bins - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(src));
        const std::size_t i1 = std::min(i0 + 1, bins - 1);
        const double frac = src - static_cast<double>(i0);
        u(t, i0) += 1.0 - frac;
        u(t, i1) += frac;
    }
    return u;
}

struct TemporalConfig {
    std::size_t channels = 16;
    std::size_t kernel = 3;
    std::vector<std::size_t> dilations{1, 2, 5};
    std::size_t pool_len = 0;  // 0 selects ceil(L / 4)

    void validate() const {
        if (channels < 1) throw ConfigError("tfe.channels must be at least 1");
        if (kernel < 1 || kernel % 2 == 0) throw ConfigError("tfe.kernel must be odd");
        if (dilations.empty()) throw ConfigError("tfe.dilations must not be empty");
        for (std::size_t d : dilations)
            if (d < 1) throw ConfigError("tfe.dilations entries must be at least 1");
    }
    friend bool operator==(const TemporalConfig&, const TemporalConfig&) = default;
};

/// Weights of the temporal feature extractor. One kernel serves every
/// dilation branch; the pooled branch has its own kernel.
struct TemporalParams {
    Tensor kernel;       // C x N x k
    Tensor bias;         // C
    Tensor ln_scale;     // C
    Tensor ln_shift;     // C
    Tensor pool_kernel;  // C x N x k
    Tensor pool_bias;    // C
    std::vector<std::size_t> dilations;
    std::size_t pool_out_len = 1;

    static TemporalParams init(std::size_t inputs, std::size_t lookback, const TemporalConfig& cfg, Rng rng) {
        cfg.validate();
        TemporalParams p;
        const std::size_t c = cfg.channels, k = cfg.kernel;
        const double bound = 1.0 / std::sqrt(static_cast<double>(inputs * k));
        auto uniform = [&](Shape shape) {
            Tensor t(std::move(shape));
            for (double& v : t.data()) v = rng.uniform(-bound, bound);
            return t;
        };
        p.kernel = uniform({c, inputs, k});
        p.bias = uniform({c});
        p.ln_scale = Tensor::ones({c});
        p.ln_shift = Tensor::zeros({c});
        p.pool_kernel = uniform({c, inputs, k});
        p.pool_bias = uniform({c});
        p.dilations = cfg.dilations;
        p.pool_out_len = cfg.pool_len ? cfg.pool_len : (lookback + 3) / 4;
        if (p.pool_out_len > lookback) throw ConfigError("tfe.pool_len exceeds the lookback window");
        return p;
    }

    std::size_t channels() const { return kernel.dim(0); }
    std::size_t inputs() const { return kernel.dim(1); }
    std::size_t taps() const { return kernel.dim(2); }

    std::vector<std::pair<std::string, Tensor*>> named_tensors() {
        return {{"tfe.kernel", &kernel},           {"tfe.bias", &bias},           {"tfe.ln_scale", &ln_scale},
                {"tfe.ln_shift", &ln_shift},       {"tfe.pool_kernel", &pool_kernel}, {"tfe.pool_bias", &pool_bias}};
    }

    std::size_t parameter_count() const {
        return kernel.size() + bias.size() + ln_scale.size() + ln_shift.size() + pool_kernel.size() +
               pool_bias.size();
    }

    /// Multiply-accumulates for one forward pass over an L-step window.
    std::size_t macs(std::size_t lookback) const {
        const std::size_t per_branch = lookback * channels() * inputs() * taps();
        return dilations.size() * per_branch + lookback * inputs() +
               pool_out_len * channels() * inputs() * taps() + lookback * channels() * 2;
    }
};

/// Tape handles for TemporalParams.
struct TemporalVars {
    Var kernel, bias, ln_scale, ln_shift, pool_kernel, pool_bias;
};

inline TemporalVars bind(GradTape& tape, const TemporalParams& p, bool trainable) {
    auto put = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
    return {put(p.kernel), put(p.bias), put(p.ln_scale), put(p.ln_shift), put(p.pool_kernel), put(p.pool_bias)};
}

/// ReLU(LN(conv_d(x))) with per-timestep layer norm over channels.
inline Var tfe_branch(Var x, const TemporalVars& v, std::size_t dilation) {
    Var conv = dilated_conv1d(x, v.kernel, v.bias, dilation);
    return relu(add_last(mul_last(layer_norm_last(conv), v.ln_scale), v.ln_shift));
}

/// Upsample(Conv1d(AdaptiveAvgPool(x))).
inline Var pool_branch(Var x, const TemporalVars& v, std::size_t pool_out_len) {
    GradTape& tape = *x.tape();
    const std::size_t len = x.value().rows();
    Var pool = tape.constant(adaptive_avg_pool_matrix(len, pool_out_len));
    Var up = tape.constant(linear_upsample_matrix(pool_out_len, len));
    Var pooled = matmul(pool, x);
    return matmul(up, dilated_conv1d(pooled, v.pool_kernel, v.pool_bias, 1));
}

struct TfeOutput {
    Var fused;                  // X_c
    std::vector<Var> branches;  // dilated branches in declared order, then the pooled branch
};

inline TfeOutput tfe_forward(Var x, const TemporalVars& v, const TemporalParams& p) {
    if (x.value().rank() != 2 || x.value().cols() != p.inputs()) {
        throw DimensionError("tfe_forward: window must be L x " + std::to_string(p.inputs()) + ", got " +
                             shape_string(x.value().shape()));
    }
    TfeOutput out;
    for (std::size_t d : p.dilations) out.branches.push_back(tfe_branch(x, v, d));
    out.branches.push_back(pool_branch(x, v, p.pool_out_len));
    out.fused = out.branches.front();
    for (std::size_t i = 1; i < out.branches.size(); ++i) out.fused = add(out.fused, out.branches[i]);
    return out;
}

struct TfeResult {
    Tensor fused;
    std::vector<Tensor> branches;
};

inline TfeResult tfe_forward(const Tensor& x, const TemporalParams& p) {
    GradTape tape(false);
    const TemporalVars v = bind(tape, p, false);
    const TfeOutput o = tfe_forward(tape.constant(x), v, p);
    TfeResult r{o.fused.value(), {}};
    for (Var b : o.branches) r.branches.push_back(b.value());
    return r;
}

}  // namespace acnet
