#pragma once

#include <acnet/autodiff.hpp>
#include <acnet/linalg.hpp>
#include <acnet/rng.hpp>
#include <acnet/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace acnet {

struct ReadoutConfig {
    std::size_t hidden = 0;  // 0 selects min(256, 4 D)
    double ridge = 1e-6;
    bool fan_in_scale = true;  // omega ~ U(-1/sqrt(D), 1/sqrt(D)); false gives U(-1, 1)

    void validate() const {
        if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw ConfigError("readout.ridge must be finite and >= 0");
    }
    friend bool operator==(const ReadoutConfig&, const ReadoutConfig&) = default;
};

/// Random hidden layer (frozen) plus closed-form output weights.
struct ReadoutParams {
    Tensor omega;  // L_h x D
    Tensor bias;   // L_h
    Tensor beta;   // L_h x (L_y N); empty until fitted
    double ridge = 1e-6;
    std::size_t horizon = 0;
    std::size_t variables = 0;

    static ReadoutParams init(std::size_t features, std::size_t horizon, std::size_t variables,
                              const ReadoutConfig& cfg, Rng rng) {
        cfg.validate();
        if (features < 1 || horizon < 1 || variables < 1) throw ConfigError("readout: extents must be positive");
        const std::size_t lh = cfg.hidden ? cfg.hidden : std::min<std::size_t>(256, 4 * features);
        const double bound = cfg.fan_in_scale ? 1.0 / std::sqrt(static_cast<double>(features)) : 1.0;
        ReadoutParams p;
        p.omega = Tensor({lh, features});
        for (double& v : p.omega.data()) v = rng.uniform(-bound, bound);
        p.bias = Tensor({lh});
        for (double& v : p.bias.data()) v = rng.uniform(-1.0, 1.0);
        p.ridge = cfg.ridge;
        p.horizon = horizon;
        p.variables = variables;
        return p;
    }

    std::size_t hidden_nodes() const { return omega.rows(); }
    std::size_t features() const { return omega.cols(); }
    std::size_t outputs() const { return horizon * variables; }
    bool fitted() const { return !beta.empty(); }

    std::vector<std::pair<std::string, Tensor*>> named_tensors() {
        return {{"readout.omega", &omega}, {"readout.bias", &bias}, {"readout.beta", &beta}};
    }

    std::size_t parameter_count() const { return omega.size() + bias.size() + hidden_nodes() * outputs(); }

    std::size_t macs() const { return hidden_nodes() * features() + hidden_nodes() * outputs(); }
};

/// H = sigmoid(G omega^T + b), one row per sample of G (M x D).
inline Tensor hidden_matrix(const Tensor& g, const ReadoutParams& p) {
    if (g.rank() != 2 || g.cols() != p.features()) {
        throw DimensionError("readout: feature rows must have length " + std::to_string(p.features()) + ", got " +
                             shape_string(g.shape()));
    }
    Tensor h = matmul_nt(g, p.omega);
    for (std::size_t i = 0; i < h.rows(); ++i)
        for (std::size_t j = 0; j < h.cols(); ++j) h(i, j) = sigmoid(h(i, j) + p.bias[j]);
    return h;
}

inline Tensor hidden(const Tensor& g_flat, const ReadoutParams& p) {
    return hidden_matrix(g_flat.reshaped({1, g_flat.size()}), p).reshaped({p.hidden_nodes()});
}

inline Tensor fit_beta(const Tensor& h, const Tensor& y, double ridge) {
    try {
        return lstsq(h, y, ridge);
    } catch (const DimensionError&) {
        throw;
    } catch (const NumericError& e) {
        throw FitError(std::string("fitting output weights failed: ") + e.what());
    }
}

/// Forecast rows (M x L_y N) for hidden activations H.
inline Tensor predict_rows(const Tensor& h, const ReadoutParams& p) {
    if (!p.fitted()) throw UsageError("readout: output weights are not fitted");
    return matmul(h, p.beta);
}

/// L_y x N forecast in the units of the training targets.
inline Tensor predict(const Tensor& g_flat, const ReadoutParams& p) {
    return predict_rows(hidden(g_flat, p).reshaped({1, p.hidden_nodes()}), p).reshaped({p.horizon, p.variables});
}

}  // namespace acnet
