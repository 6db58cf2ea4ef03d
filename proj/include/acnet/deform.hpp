#pragma once

#include <acnet/autodiff.hpp>
#include <acnet/linalg.hpp>
#include <acnet/rng.hpp>
#include <acnet/tensor.hpp>

#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace acnet {

// Feature maps here are S x L x C: scale (one slice per temporal branch),
// time, channel. 2D kernels are C_out x C_in x kh x kw over the (scale, time)
// plane.

inline Tensor stack_branches(std::span<const Tensor> branches) {
    if (branches.empty()) throw DimensionError("stack_branches: no branches");
    const Shape& inner = branches.front().shape();
    if (inner.size() != 2) throw DimensionError("stack_branches: branches must be L x C");
    Shape shape{branches.size(), inner[0], inner[1]};
    Tensor out(shape);
    const std::size_t block = branches.front().size();
    for (std::size_t s = 0; s < branches.size(); ++s) {
        if (branches[s].shape() != inner) {
            throw DimensionError("stack_branches: branch " + std::to_string(s) + " has shape " +
                                 shape_string(branches[s].shape()) + ", expected " + shape_string(inner));
        }
        std::copy(branches[s].data().begin(), branches[s].data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(s * block));
    }
    return out;
}

inline std::vector<Tensor> unstack_branches(const Tensor& x) {
    if (x.rank() != 3) throw DimensionError("unstack_branches: expected S x L x C");
    std::vector<Tensor> out;
    const std::size_t block = x.dim(1) * x.dim(2);
    for (std::size_t s = 0; s < x.dim(0); ++s) {
        const auto first = x.data().begin() + static_cast<std::ptrdiff_t>(s * block);
        out.emplace_back(Shape{x.dim(1), x.dim(2)}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(block)));
    }
    return out;
}

/// One corner of a bilinear read: flat (scale, time) pixel, weight, and the
/// weight's derivatives along the two sampling coordinates.
struct BilinearCorner {
    std::size_t pixel;
    double w, dw_ds, dw_dt;
};

/// Up to four in-range corners for sampling at (ps, pt). Coordinates are
/// clamped to [-1, S] x [-1, L]; pixels outside the map read as zero. A
/// clamped coordinate contributes no derivative.
struct BilinearRead {
    std::array<BilinearCorner, 4> corners{};
    std::size_t count = 0;
};

inline BilinearRead bilinear_read(double ps, double pt, std::size_t rows, std::size_t cols) {
    const double hi_s = static_cast<double>(rows), hi_t = static_cast<double>(cols);
    const bool clamp_s = !(ps >= -1.0 && ps <= hi_s);
    const bool clamp_t = !(pt >= -1.0 && pt <= hi_t);
    if (clamp_s) ps = std::isnan(ps) ? -1.0 : std::clamp(ps, -1.0, hi_s);
    if (clamp_t) pt = std::isnan(pt) ? -1.0 : std::clamp(pt, -1.0, hi_t);
    const double s0 = std::floor(ps), t0 = std::floor(pt);
    const double fs = ps - s0, ft = pt - t0;
    const double gs = clamp_s ? 0.0 : 1.0, gt = clamp_t ? 0.0 : 1.0;

    BilinearRead r;
    auto put = [&](double s, double t, double w, double dws, double dwt) {
        if (s < 0.0 || t < 0.0 || s >= hi_s || t >= hi_t) return;
        const std::size_t pixel = static_cast<std::size_t>(s) * cols + static_cast<std::size_t>(t);
        r.corners[r.count++] = {pixel, w, gs * dws, gt * dwt};
    };
    put(s0, t0, (1 - fs) * (1 - ft), -(1 - ft), -(1 - fs));
    put(s0, t0 + 1, (1 - fs) * ft, -ft, 1 - fs);
    put(s0 + 1, t0, fs * (1 - ft), 1 - ft, -fs);
    put(s0 + 1, t0 + 1, fs * ft, ft, fs);
    return r;
}

/// Bilinear value of channel c of an S x L x C map at (ps, pt).
inline double bilinear_sample(const Tensor& x, double ps, double pt, std::size_t c) {
    const std::size_t ch = x.dim(2);
    const BilinearRead r = bilinear_read(ps, pt, x.dim(0), x.dim(1));
    double v = 0.0;
    for (std::size_t k = 0; k < r.count; ++k) v += r.corners[k].w * x[r.corners[k].pixel * ch + c];
    return v;
}

namespace detail {

/// Reads for every (location, tap) of a kh x kw grid centred on each
/// location, optionally displaced by per-location offsets laid out as
/// S x L x 2|R| with (scale, time) pairs per tap.
struct SamplingPlan {
    std::size_t rows = 0, cols = 0, taps = 0;
    std::vector<BilinearRead> reads;  // (location * taps + tap)
};

inline SamplingPlan make_plan(std::size_t rows, std::size_t cols, std::size_t kh, std::size_t kw,
                              const Tensor* offsets) {
    SamplingPlan plan{rows, cols, kh * kw, {}};
    plan.reads.resize(rows * cols * plan.taps);
    const double ch = static_cast<double>(kh - 1) / 2.0, cw = static_cast<double>(kw - 1) / 2.0;
    for (std::size_t s = 0; s < rows; ++s) {
        for (std::size_t t = 0; t < cols; ++t) {
            const std::size_t loc = s * cols + t;
            for (std::size_t r = 0; r < plan.taps; ++r) {
                double ps = static_cast<double>(s) + static_cast<double>(r / kw) - ch;
                double pt = static_cast<double>(t) + static_cast<double>(r % kw) - cw;
                if (offsets) {
                    ps += (*offsets)[loc * 2 * plan.taps + 2 * r];
                    pt += (*offsets)[loc * 2 * plan.taps + 2 * r + 1];
                }
                plan.reads[loc * plan.taps + r] = bilinear_read(ps, pt, rows, cols);
            }
        }
    }
    return plan;
}

/// (S*L) x (C*|R|) patch matrix, column index c * |R| + tap.
inline Tensor im2col(const Tensor& x, const SamplingPlan& plan) {
    const std::size_t ch = x.dim(2), taps = plan.taps, locs = plan.rows * plan.cols;
    Tensor cols(Shape{locs, ch * taps});
    for (std::size_t loc = 0; loc < locs; ++loc) {
        double* row = &cols(loc, 0);
        for (std::size_t r = 0; r < taps; ++r) {
            const BilinearRead& rd = plan.reads[loc * taps + r];
            for (std::size_t k = 0; k < rd.count; ++k) {
                const double w = rd.corners[k].w;
                if (w == 0.0) continue;
                const double* px = &x[rd.corners[k].pixel * ch];
                for (std::size_t c = 0; c < ch; ++c) row[c * taps + r] += w * px[c];
            }
        }
    }
    return cols;
}

/// Adjoint of im2col with respect to the input map.
inline Tensor col2im(const Tensor& gcols, const SamplingPlan& plan, const Shape& x_shape) {
    Tensor gx(x_shape);
    const std::size_t ch = x_shape[2], taps = plan.taps, locs = plan.rows * plan.cols;
    for (std::size_t loc = 0; loc < locs; ++loc) {
        const double* row = &gcols(loc, 0);
        for (std::size_t r = 0; r < taps; ++r) {
            const BilinearRead& rd = plan.reads[loc * taps + r];
            for (std::size_t k = 0; k < rd.count; ++k) {
                const double w = rd.corners[k].w;
                if (w == 0.0) continue;
                double* px = &gx[rd.corners[k].pixel * ch];
                for (std::size_t c = 0; c < ch; ++c) px[c] += w * row[c * taps + r];
            }
        }
    }
    return gx;
}

inline void check_conv2d(const Tensor& x, const Tensor& w) {
    if (x.rank() != 3) throw DimensionError("conv2d: input must be S x L x C, got " + shape_string(x.shape()));
    if (w.rank() != 4) throw DimensionError("conv2d: kernel must be C_out x C_in x kh x kw");
    if (w.dim(1) != x.dim(2)) {
        throw DimensionError("conv2d: kernel expects " + std::to_string(w.dim(1)) + " channels, input has " +
                             std::to_string(x.dim(2)));
    }
    if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0) throw ConfigError("conv2d: kernel extents must be odd");
}

inline Tensor flat_kernel(const Tensor& w) { return w.reshaped({w.dim(0), w.size() / w.dim(0)}); }

}  // namespace detail

/// Same-size 2D convolution with zero padding over the (scale, time) plane.
inline Var conv2d(Var x, Var w, Var b) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    detail::check_conv2d(xv, wv);
    if (b.value().size() != wv.dim(0)) throw DimensionError("conv2d: bias length must equal C_out");
    auto plan = std::make_shared<detail::SamplingPlan>(
        detail::make_plan(xv.dim(0), xv.dim(1), wv.dim(2), wv.dim(3), nullptr));
    const Tensor cols = detail::im2col(xv, *plan);
    Tensor out = matmul_nt(cols, detail::flat_kernel(wv));
    const std::size_t cout = wv.dim(0);
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t c = 0; c < cout; ++c) out(i, c) += b.value()[c];
    const Shape out_shape{xv.dim(0), xv.dim(1), cout};
    return x.tape()->record(out.reshaped(out_shape), {x, w, b},
                            [x, w, b, plan, cols](GradTape& tape, const Tensor& g, const Tensor&) {
        const Tensor& wv = w.value();
        const Tensor g2 = g.reshaped({cols.rows(), wv.dim(0)});
        if (tape.requires_grad(w)) tape.accumulate(w, matmul_tn(g2, cols).reshaped(wv.shape()));
        if (tape.requires_grad(b)) {
            Tensor gb(b.value().shape());
            for (std::size_t i = 0; i < g2.rows(); ++i)
                for (std::size_t c = 0; c < g2.cols(); ++c) gb[c] += g2(i, c);
            tape.accumulate(b, std::move(gb));
        }
        if (tape.requires_grad(x)) {
            tape.accumulate(x, detail::col2im(matmul(g2, detail::flat_kernel(wv)), *plan, x.value().shape()));
        }
    });
}

/// out(p0) = sum_{pn in R} W(pn) x(p0 + pn + dp_n(p0)), bilinear sampling.
/// offsets: S x L x 2|R|, (scale, time) displacement per tap.
inline Var deform_conv2d(Var x, Var offsets, Var w) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    detail::check_conv2d(xv, wv);
    const std::size_t taps = wv.dim(2) * wv.dim(3);
    const Shape off_shape{xv.dim(0), xv.dim(1), 2 * taps};
    if (offsets.value().shape() != off_shape) {
        throw DimensionError("deform_conv2d: offsets must be " + shape_string(off_shape) + ", got " +
                             shape_string(offsets.value().shape()));
    }
    auto plan = std::make_shared<detail::SamplingPlan>(
        detail::make_plan(xv.dim(0), xv.dim(1), wv.dim(2), wv.dim(3), &offsets.value()));
    const Tensor cols = detail::im2col(xv, *plan);
    const Tensor out = matmul_nt(cols, detail::flat_kernel(wv));
    const Shape out_shape{xv.dim(0), xv.dim(1), wv.dim(0)};
    return x.tape()->record(out.reshaped(out_shape), {x, offsets, w},
                            [x, offsets, w, plan, cols](GradTape& tape, const Tensor& g, const Tensor&) {
        const Tensor& wv = w.value();
        const Tensor g2 = g.reshaped({cols.rows(), wv.dim(0)});
        if (tape.requires_grad(w)) tape.accumulate(w, matmul_tn(g2, cols).reshaped(wv.shape()));
        const bool need_x = tape.requires_grad(x), need_off = tape.requires_grad(offsets);
        if (!need_x && !need_off) return;
        const Tensor gcols = matmul(g2, detail::flat_kernel(wv));
        if (need_x) tape.accumulate(x, detail::col2im(gcols, *plan, x.value().shape()));
        if (need_off) {
            const Tensor& xv = x.value();
            const std::size_t ch = xv.dim(2), taps = plan->taps, locs = plan->rows * plan->cols;
            Tensor goff(offsets.value().shape());
            for (std::size_t loc = 0; loc < locs; ++loc) {
                const double* row = &gcols(loc, 0);
                for (std::size_t r = 0; r < taps; ++r) {
                    const BilinearRead& rd = plan->reads[loc * taps + r];
                    double ds = 0.0, dt = 0.0;
                    for (std::size_t k = 0; k < rd.count; ++k) {
                        const BilinearCorner& cn = rd.corners[k];
                        if (cn.dw_ds == 0.0 && cn.dw_dt == 0.0) continue;
                        const double* px = &xv[cn.pixel * ch];
                        double dot = 0.0;
                        for (std::size_t c = 0; c < ch; ++c) dot += px[c] * row[c * taps + r];
                        ds += cn.dw_ds * dot;
                        dt += cn.dw_dt * dot;
                    }
                    goff[loc * 2 * taps + 2 * r] = ds;
                    goff[loc * 2 * taps + 2 * r + 1] = dt;
                }
            }
            tape.accumulate(offsets, std::move(goff));
        }
    });
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
    GradTape tape(false);
    return conv2d(tape.constant(x), tape.constant(w), tape.constant(b)).value();
}

inline Tensor deform_conv2d(const Tensor& x, const Tensor& offsets, const Tensor& w) {
    GradTape tape(false);
    return deform_conv2d(tape.constant(x), tape.constant(offsets), tape.constant(w)).value();
}

struct DeformConfig {
    std::size_t kernel_h = 3;
    std::size_t kernel_w = 3;

    void validate() const {
        if (kernel_h % 2 == 0 || kernel_w % 2 == 0) throw ConfigError("nfae grid extents must be odd");
    }
    friend bool operator==(const DeformConfig&, const DeformConfig&) = default;
};

struct DeformParams {
    Tensor def_kernel;  // C x C x kh x kw
    Tensor offset_w;    // 2|R| x C x kh x kw, zero at init
    Tensor offset_b;    // 2|R|
    Tensor gate_w;      // 1 x C x kh x kw
    Tensor gate_b;      // 1
    Tensor mix_w;       // C x C, applied as X_dc * mix_w

    static DeformParams init(std::size_t channels, const DeformConfig& cfg, Rng rng) {
        cfg.validate();
        const std::size_t c = channels, kh = cfg.kernel_h, kw = cfg.kernel_w, taps = kh * kw;
        auto uniform = [&](Shape shape, double bound) {
            Tensor t(std::move(shape));
            for (double& v : t.data()) v = rng.uniform(-bound, bound);
            return t;
        };
        const double conv_bound = 1.0 / std::sqrt(static_cast<double>(c * taps));
        DeformParams p;
        p.def_kernel = uniform({c, c, kh, kw}, conv_bound);
        p.offset_w = Tensor::zeros({2 * taps, c, kh, kw});
        p.offset_b = Tensor::zeros({2 * taps});
        p.gate_w = uniform({1, c, kh, kw}, conv_bound);
        p.gate_b = Tensor::zeros({1});
        p.mix_w = uniform({c, c}, 1.0 / std::sqrt(static_cast<double>(c)));
        return p;
    }

    std::size_t channels() const { return def_kernel.dim(0); }
    std::size_t taps() const { return def_kernel.dim(2) * def_kernel.dim(3); }

    std::vector<std::pair<std::string, Tensor*>> named_tensors() {
        return {{"nfae.def_kernel", &def_kernel}, {"nfae.offset_w", &offset_w}, {"nfae.offset_b", &offset_b},
                {"nfae.gate_w", &gate_w},         {"nfae.gate_b", &gate_b},     {"nfae.mix_w", &mix_w}};
    }

    std::size_t parameter_count() const {
        return def_kernel.size() + offset_w.size() + offset_b.size() + gate_w.size() + gate_b.size() + mix_w.size();
    }

    /// Multiply-accumulates for one S x L stacked map.
    std::size_t macs(std::size_t scales, std::size_t lookback) const {
        const std::size_t locs = scales * lookback, c = channels(), r = taps();
        return locs * (2 * r * c * r + c * r + 4 * r * c + c * c * r + c * c + c) + locs * c;
    }
};

struct DeformVars {
    Var def_kernel, offset_w, offset_b, gate_w, gate_b, mix_w;
};

inline DeformVars bind(GradTape& tape, const DeformParams& p, bool trainable) {
    auto put = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
    return {put(p.def_kernel), put(p.offset_w), put(p.offset_b), put(p.gate_w), put(p.gate_b), put(p.mix_w)};
}

struct GatedOutput {
    Var offsets;  // S x L x 2|R|
    Var gate;     // S x L x 1, in (0, 1)
    Var defconv;  // S x L x C
    Var gated;    // X_dc
};

inline GatedOutput gated_deform(Var xsd, const DeformVars& v) {
    GatedOutput o;
    o.offsets = conv2d(xsd, v.offset_w, v.offset_b);
    o.gate = sigmoid(conv2d(xsd, v.gate_w, v.gate_b));
    o.defconv = deform_conv2d(xsd, o.offsets, v.def_kernel);
    o.gated = mul_broadcast_last(o.defconv, o.gate);
    return o;
}

struct NfaeOutput {
    Var xsd;    // S x L x C
    GatedOutput deform;
    Var mixed;  // X_fm
    Var xs;     // X_sd + X_fm
    Var reduced;  // scale mean, L x C
};

inline NfaeOutput nfae_forward(std::span<const Var> branches, const DeformVars& v) {
    if (branches.empty()) throw DimensionError("nfae_forward: no branches");
    NfaeOutput o;
    o.xsd = stack(branches);
    const Shape& shape = o.xsd.value().shape();
    const std::size_t s = shape[0], len = shape[1], c = shape[2];
    if (v.mix_w.value().shape() != Shape{c, c}) throw DimensionError("nfae_forward: mix weights must be C x C");
    o.deform = gated_deform(o.xsd, v);
    o.mixed = reshape(matmul(reshape(o.deform.gated, {s * len, c}), v.mix_w), {s, len, c});
    o.xs = add(o.xsd, o.mixed);
    o.reduced = mean_axis0(o.xs);
    return o;
}

inline Tensor nfae_forward(std::span<const Tensor> branches, const DeformParams& p) {
    GradTape tape(false);
    std::vector<Var> vars;
    for (const auto& b : branches) vars.push_back(tape.constant(b));
    return nfae_forward(vars, bind(tape, p, false)).reduced.value();
}

/// Writes an L x C map as CSV, one row per time step, first `max_channels` channels.
inline void write_feature_map_csv(std::ostream& os, const Tensor& map, std::size_t max_channels = 8) {
    if (map.rank() != 2) throw DimensionError("feature map dump expects L x C");
    const std::size_t c = std::min(max_channels, map.cols());
    os << "t";
    for (std::size_t j = 0; j < c; ++j) os << ",c" << j;
    os << '\n';
    for (std::size_t t = 0; t < map.rows(); ++t) {
        os << t;
        for (std::size_t j = 0; j < c; ++j) os << ',' << map(t, j);
        os << '\n';
    }
}

}  // namespace acnet
