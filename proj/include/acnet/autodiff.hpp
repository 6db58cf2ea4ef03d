#pragma once

#include <acnet/linalg.hpp>
#include <acnet/tensor.hpp>

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace acnet {

class GradTape;

/// Handle to a value recorded on a GradTape.
class Var {
public:
    Var() = default;

    GradTape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

    inline const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }

private:
    friend class GradTape;
    Var(GradTape* tape, std::size_t id) : tape_(tape), id_(id) {}

    GradTape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Records tensor-level ops so adjoints can be replayed in reverse order.
/// A tape constructed with recording == false only evaluates values; it is
/// the inference path and keeps no closures. One tape per thread.
class GradTape {
public:
    using BackwardFn = std::function<void(GradTape&, const Tensor& out_grad, const Tensor& out_value)>;

    explicit GradTape(bool recording = true) : recording_(recording) {}

    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    bool recording() const noexcept { return recording_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Trainable input.
    Var leaf(Tensor value) { return push(std::move(value), recording_, {}); }

    /// Input whose gradient is identically zero.
    Var constant(Tensor value) { return push(std::move(value), false, {}); }

    Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
        return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
    }

    Var record(Tensor value, std::span<const Var> parents, BackwardFn fn) {
        bool needs = false;
        if (recording_) {
            for (const Var& p : parents) {
                owns_or_throw(p);
                needs = needs || nodes_[p.id_].requires_grad;
            }
        }
        return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
    }

    bool requires_grad(Var v) const { return node(v).requires_grad; }

    const Tensor& value(Var v) const { return node(v).value; }

    /// Adjoint of v after backward(); zeros when v received no gradient.
    Tensor grad(Var v) const {
        const Node& n = node(v);
        return n.grad.empty() ? Tensor::zeros(n.value.shape()) : n.grad;
    }

    void accumulate(Var target, const Tensor& g) {
        Node& n = node(target);
        if (!n.requires_grad) return;
        n.value.require_same_shape(g, "gradient accumulation");
        if (n.grad.empty()) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    void accumulate(Var target, Tensor&& g) {
        Node& n = node(target);
        if (!n.requires_grad) return;
        n.value.require_same_shape(g, "gradient accumulation");
        if (n.grad.empty()) {
            n.grad = std::move(g);
        } else {
            n.grad += g;
        }
    }

    /// Seeds d(loss)/d(loss) = 1 and replays every recorded op newest-first.
    void backward(Var loss) {
        if (loss.tape_ != this || loss.id_ >= nodes_.size()) throw UsageError("backward: loss is not on this tape");
        if (!recording_) throw UsageError("backward: tape was created without recording");
        if (nodes_[loss.id_].value.size() != 1) {
            throw UsageError("backward: loss must be a scalar, got shape " +
                             shape_string(nodes_[loss.id_].value.shape()));
        }
        for (auto& n : nodes_) n.grad = Tensor();
        if (!nodes_[loss.id_].requires_grad) return;
        nodes_[loss.id_].grad = Tensor::ones(nodes_[loss.id_].value.shape());
        for (std::size_t i = loss.id_ + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.backward || n.grad.empty()) continue;
            n.backward(*this, n.grad, n.value);
        }
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var push(Tensor value, bool requires_grad, BackwardFn fn) {
        nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(fn)});
        return Var(this, nodes_.size() - 1);
    }

    void owns_or_throw(Var v) const {
        if (v.tape_ != this || v.id_ >= nodes_.size()) throw UsageError("variable belongs to a different tape");
    }

    const Node& node(Var v) const {
        owns_or_throw(v);
        return nodes_[v.id_];
    }
    Node& node(Var v) {
        owns_or_throw(v);
        return nodes_[v.id_];
    }

    bool recording_;
    std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const {
    if (!tape_) throw UsageError("empty variable");
    return tape_->value(*this);
}

// ---------------------------------------------------------------------------
// Primitive differentiable ops.

inline Var matmul(Var a, Var b) {
    GradTape& t = *a.tape();
    return t.record(matmul(a.value(), b.value()), {a, b}, [a, b](GradTape& tape, const Tensor& g, const Tensor&) {
        if (tape.requires_grad(a)) tape.accumulate(a, matmul_nt(g, b.value()));
        if (tape.requires_grad(b)) tape.accumulate(b, matmul_tn(a.value(), g));
    });
}

inline Var add(Var a, Var b) {
    return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](GradTape& tape, const Tensor& g, const Tensor&) {
        tape.accumulate(a, g);
        tape.accumulate(b, g);
    });
}

inline Var sub(Var a, Var b) {
    return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](GradTape& tape, const Tensor& g, const Tensor&) {
        tape.accumulate(a, g);
        tape.accumulate(b, g * -1.0);
    });
}

inline Var mul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    av.require_same_shape(bv, "mul");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return a.tape()->record(std::move(out), {a, b}, [a, b](GradTape& tape, const Tensor& g, const Tensor&) {
        if (tape.requires_grad(a)) {
            Tensor ga = g;
            const Tensor& bv = b.value();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= bv[i];
            tape.accumulate(a, std::move(ga));
        }
        if (tape.requires_grad(b)) {
            Tensor gb = g;
            const Tensor& av = a.value();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= av[i];
            tape.accumulate(b, std::move(gb));
        }
    });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

inline Var scale(Var a, double s) {
    return a.tape()->record(a.value() * s, {a}, [a, s](GradTape& tape, const Tensor& g, const Tensor&) { tape.accumulate(a, g * s); });
}

inline Var relu(Var a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return a.tape()->record(std::move(out), {a}, [a](GradTape& tape, const Tensor& g, const Tensor&) {
        Tensor ga = g;
        const Tensor& av = a.value();
        for (std::size_t i = 0; i < ga.size(); ++i)
            if (!(av[i] > 0.0)) ga[i] = 0.0;
        tape.accumulate(a, std::move(ga));
    });
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = sigmoid(v);
    return a.tape()->record(std::move(out), {a}, [a](GradTape& tape, const Tensor& g, const Tensor& y) {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= y[i] * (1.0 - y[i]);
        tape.accumulate(a, std::move(ga));
    });
}

inline Var sum(Var a) {
    return a.tape()->record(Tensor::scalar(a.value().sum()), {a}, [a](GradTape& tape, const Tensor& g, const Tensor&) {
        tape.accumulate(a, Tensor(a.value().shape(), g[0]));
    });
}

inline Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

inline Var mse(Var pred, Var target) {
    Var d = sub(pred, target);
    return mean(mul(d, d));
}

inline Var reshape(Var a, Shape shape) {
    return a.tape()->record(a.value().reshaped(std::move(shape)), {a}, [a](GradTape& tape, const Tensor& g, const Tensor&) {
        tape.accumulate(a, g.reshaped(a.value().shape()));
    });
}

namespace detail {
inline std::size_t last_extent(const Tensor& a) { return a.shape().back(); }
}  // namespace detail

/// a[..., c] + b[c]
inline Var add_last(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t c = detail::last_extent(av);
    if (bv.size() != c) throw DimensionError("add_last: bias length mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % c];
    return a.tape()->record(std::move(out), {a, b}, [a, b, c](GradTape& tape, const Tensor& g, const Tensor&) {
        tape.accumulate(a, g);
        if (tape.requires_grad(b)) {
            Tensor gb(b.value().shape());
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
            tape.accumulate(b, std::move(gb));
        }
    });
}

/// a[..., c] * s[c]
inline Var mul_last(Var a, Var s) {
    const Tensor& av = a.value();
    const Tensor& sv = s.value();
    const std::size_t c = detail::last_extent(av);
    if (sv.size() != c) throw DimensionError("mul_last: scale length mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= sv[i % c];
    return a.tape()->record(std::move(out), {a, s}, [a, s, c](GradTape& tape, const Tensor& g, const Tensor&) {
        const Tensor& av = a.value();
        const Tensor& sv = s.value();
        if (tape.requires_grad(a)) {
            Tensor ga = g;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= sv[i % c];
            tape.accumulate(a, std::move(ga));
        }
        if (tape.requires_grad(s)) {
            Tensor gs(sv.shape());
            for (std::size_t i = 0; i < g.size(); ++i) gs[i % c] += g[i] * av[i];
            tape.accumulate(s, std::move(gs));
        }
    });
}

/// a[..., c] * g[..., 0]: one factor per location, broadcast across the last axis.
inline Var mul_broadcast_last(Var a, Var gate) {
    const Tensor& av = a.value();
    const Tensor& gv = gate.value();
    const std::size_t c = detail::last_extent(av);
    if (gv.size() * c != av.size() || gv.shape().back() != 1) {
        throw DimensionError("mul_broadcast_last: gate shape " + shape_string(gv.shape()) + " vs " +
                             shape_string(av.shape()));
    }
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= gv[i / c];
    return a.tape()->record(std::move(out), {a, gate}, [a, gate, c](GradTape& tape, const Tensor& g, const Tensor&) {
        const Tensor& av = a.value();
        const Tensor& gv = gate.value();
        if (tape.requires_grad(a)) {
            Tensor ga = g;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= gv[i / c];
            tape.accumulate(a, std::move(ga));
        }
        if (tape.requires_grad(gate)) {
            Tensor gg(gv.shape());
            for (std::size_t i = 0; i < g.size(); ++i) gg[i / c] += g[i] * av[i];
            tape.accumulate(gate, std::move(gg));
        }
    });
}

/// Normalizes every slice along the last axis to zero mean and unit variance
/// (population form). No affine part; combine with mul_last/add_last.
inline Var layer_norm_last(Var a, double eps = 1e-10) {
    const Tensor& av = a.value();
    const std::size_t c = detail::last_extent(av);
    const std::size_t rows = av.size() / c;
    Tensor out(av.shape());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = &av[r * c];
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += x[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(c);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] = (x[j] - mu) * inv_std[r];
    }
    return a.tape()->record(std::move(out), {a},
                            [a, c, rows, inv_std = std::move(inv_std)](GradTape& tape, const Tensor& g, const Tensor& yv) {
        Tensor ga(a.value().shape());
        const double n = static_cast<double>(c);
        for (std::size_t r = 0; r < rows; ++r) {
            double gmean = 0.0, gy = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                gmean += g[r * c + j];
                gy += g[r * c + j] * yv[r * c + j];
            }
            gmean /= n;
            gy /= n;
            for (std::size_t j = 0; j < c; ++j) {
                ga[r * c + j] = inv_std[r] * (g[r * c + j] - gmean - yv[r * c + j] * gy);
            }
        }
        tape.accumulate(a, std::move(ga));
    });
}

/// Stacks equally shaped values along a new leading axis.
inline Var stack(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("stack: no inputs");
    const Shape& inner = parts.front().value().shape();
    Shape shape{parts.size()};
    shape.insert(shape.end(), inner.begin(), inner.end());
    Tensor out(shape);
    const std::size_t block = parts.front().value().size();
    for (std::size_t s = 0; s < parts.size(); ++s) {
        const Tensor& p = parts[s].value();
        if (p.shape() != inner) {
            throw DimensionError("stack: part " + std::to_string(s) + " has shape " + shape_string(p.shape()) +
                                 ", expected " + shape_string(inner));
        }
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(s * block));
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return parts.front().tape()->record(std::move(out), parts, [ps, block, inner](GradTape& tape, const Tensor& g, const Tensor&) {
        for (std::size_t s = 0; s < ps.size(); ++s) {
            if (!tape.requires_grad(ps[s])) continue;
            std::vector<double> slice(g.data().begin() + static_cast<std::ptrdiff_t>(s * block),
                                      g.data().begin() + static_cast<std::ptrdiff_t>((s + 1) * block));
            tape.accumulate(ps[s], Tensor(inner, std::move(slice)));
        }
    });
}

/// Mean over the leading axis: (S, ...) -> (...).
inline Var mean_axis0(Var a) {
    const Tensor& av = a.value();
    if (av.rank() < 2) throw DimensionError("mean_axis0: rank must be at least 2");
    const std::size_t s = av.dim(0);
    const std::size_t block = av.size() / s;
    Shape inner(av.shape().begin() + 1, av.shape().end());
    Tensor out(inner);
    for (std::size_t k = 0; k < s; ++k)
        for (std::size_t i = 0; i < block; ++i) out[i] += av[k * block + i];
    out *= 1.0 / static_cast<double>(s);
    return a.tape()->record(std::move(out), {a}, [a, s, block](GradTape& tape, const Tensor& g, const Tensor&) {
        Tensor ga(a.value().shape());
        const double w = 1.0 / static_cast<double>(s);
        for (std::size_t k = 0; k < s; ++k)
            for (std::size_t i = 0; i < block; ++i) ga[k * block + i] = g[i] * w;
        tape.accumulate(a, std::move(ga));
    });
}

}  // namespace acnet
