#include <acnet/datasets.hpp>
#include <acnet/pipeline.hpp>

#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <numbers>

using namespace acnet;
using acnet::testing::random_tensor;

namespace {

ModelConfig small_config(Ablation ablation, std::uint64_t seed = 42) {
    ModelConfig cfg;
    cfg.lookback = 16;
    cfg.horizon = 4;
    cfg.temporal.channels = 4;
    cfg.temporal.dilations = {1, 2};
    cfg.ablation = ablation;
    cfg.seed = seed;
    return cfg;
}

Model with_random_beta(Model m, Rng rng) {
    m.readout.beta = random_tensor({m.readout.hidden_nodes(), m.outputs()}, rng);
    return m;
}

// Independent composition: module-level tensor calls, no tape shared with the pipeline.
Tensor composed_forward(const Model& m, const Tensor& window) {
    const Tensor x = denoise_columns(window, m.cfg.wavelet);
    Tensor g;
    switch (m.cfg.ablation) {
        case Ablation::no_all: g = x; break;
        case Ablation::no_temporal: {
            const Tensor xc = matmul(x, channel_projection(m.variables, m.channels()));
            const Tensor branches[] = {xc};
            g = xc + nfae_forward(branches, m.deform);
            break;
        }
        case Ablation::full: {
            const TfeResult t = tfe_forward(x, m.temporal);
            g = t.fused + nfae_forward(t.branches, m.deform);
            break;
        }
        case Ablation::no_gdc: {
            const TfeResult t = tfe_forward(x, m.temporal);
            Tensor mean(t.fused.shape());
            for (const Tensor& b : t.branches) mean += b;
            g = t.fused + mean * (1.0 / static_cast<double>(t.branches.size()));
            break;
        }
    }
    const Tensor h = hidden(g.reshaped({g.size()}), m.readout);
    Tensor y({m.outputs()});
    for (std::size_t k = 0; k < m.outputs(); ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < h.size(); ++j) s += h[j] * m.readout.beta(j, k);
        y[k] = s;
    }
    return y.reshaped({m.cfg.horizon, m.variables});
}

struct ThreadsEnv {
    explicit ThreadsEnv(const char* value) { ::setenv("ACNET_THREADS", value, 1); }
    ~ThreadsEnv() { ::unsetenv("ACNET_THREADS"); }
};

Tensor normalized(const Tensor& v, std::size_t train_rows) { return normalize_rows(v, fit_stats(v, train_rows)); }

}  // namespace

TEST(Enums, RoundTripAndRejectUnknown) {
    for (auto a : {Ablation::full, Ablation::no_gdc, Ablation::no_temporal, Ablation::no_all})
        EXPECT_EQ(parse_ablation(to_string(a)), a);
    EXPECT_EQ(parse_train_mode("gradient"), TrainMode::gradient);
    EXPECT_EQ(parse_train_mode("random_feature"), TrainMode::random_feature);
    EXPECT_THROW(parse_ablation("no_gcd"), ConfigError);
    EXPECT_THROW(parse_train_mode("adam"), ConfigError);
}

TEST(Forward, MatchesModuleComposition) {
    Rng rng(71);
    for (auto a : {Ablation::full, Ablation::no_gdc, Ablation::no_temporal, Ablation::no_all}) {
        const Model m = with_random_beta(Model::init(small_config(a), 3), rng.split(to_string(a)));
        for (int trial = 0; trial < 3; ++trial) {
            const Tensor w = random_tensor({16, 3}, rng);
            EXPECT_LE(max_abs_diff(forward(m, w), composed_forward(m, w)), 1e-12) << to_string(a);
        }
    }
}

TEST(Forward, NoAllIsReadoutOnFlattenedWindow) {
    Rng rng(72);
    ModelConfig cfg = small_config(Ablation::no_all);
    cfg.denoise = false;
    const Model m = with_random_beta(Model::init(cfg, 2), rng);
    EXPECT_EQ(m.feature_dim(), 32u);
    const Tensor w = random_tensor({16, 2}, rng);
    EXPECT_EQ(forward(m, w), predict(w.reshaped({32}), m.readout));
}

TEST(Forward, DeterministicUnderSeed) {
    Rng rng(73);
    const Tensor w = random_tensor({16, 3}, rng);
    const Model a = with_random_beta(Model::init(small_config(Ablation::full, 5), 3), Rng(1));
    const Model b = with_random_beta(Model::init(small_config(Ablation::full, 5), 3), Rng(1));
    const Model c = with_random_beta(Model::init(small_config(Ablation::full, 6), 3), Rng(1));
    EXPECT_EQ(forward(a, w), forward(b, w));
    EXPECT_NE(forward(a, w), forward(c, w));
}

TEST(Forward, WrongWindowShapeIsUsageError) {
    const Model m = with_random_beta(Model::init(small_config(Ablation::full), 3), Rng(2));
    EXPECT_THROW(forward(m, Tensor({15, 3})), UsageError);
    EXPECT_THROW(forward(m, Tensor({16, 2})), UsageError);
    Model unfitted = Model::init(small_config(Ablation::full), 3);
    EXPECT_THROW(forward(unfitted, Tensor({16, 3})), UsageError);
}

TEST(Forward, FeatureRowsIndependentOfThreadCount) {
    Rng rng(74);
    const Model m = Model::init(small_config(Ablation::full), 3);
    const auto windows = make_windows(random_tensor({60, 3}, rng), 16, 4, 1);
    Tensor one, three;
    {
        ThreadsEnv env("1");
        one = feature_matrix(m, windows);
    }
    {
        ThreadsEnv env("3");
        three = feature_matrix(m, windows);
    }
    EXPECT_EQ(one, three);
}

TEST(Model, AblationParameterLattice) {
    auto count = [](Ablation a) { return Model::init(small_config(a), 3).parameter_count(); };
    EXPECT_LT(count(Ablation::no_all), count(Ablation::no_gdc));
    EXPECT_LT(count(Ablation::no_all), count(Ablation::no_temporal));
    EXPECT_LT(count(Ablation::no_gdc), count(Ablation::full));
    EXPECT_LT(count(Ablation::no_temporal), count(Ablation::full));
}

TEST(Model, ScalesAndFeatureWidth) {
    EXPECT_EQ(Model::init(small_config(Ablation::full), 3).scales(), 3u);
    EXPECT_EQ(Model::init(small_config(Ablation::no_temporal), 3).scales(), 1u);
    EXPECT_EQ(Model::init(small_config(Ablation::full), 3).feature_dim(), 64u);
    EXPECT_EQ(Model::init(small_config(Ablation::no_all), 3).feature_dim(), 48u);
}

TEST(Train, NoWorseThanZeroForecastOnTrainingWindows) {
    Rng rng(75);
    for (auto a : {Ablation::full, Ablation::no_all}) {
        Model m = Model::init(small_config(a), 3);
        const TrainReport r = train(m, random_tensor({120, 3}, rng), 120);
        EXPECT_EQ(r.windows, 101u);
        EXPECT_LE(r.train_mse, r.zero_mse);
    }
}

TEST(Train, PlantedLinearSystemIsFitExactly) {
    // x(t) = R x(t-1) with R a rotation: every target is a linear map of its window.
    const double th = 0.3;
    Tensor v({30, 2});
    v(0, 0) = 1.0;
    for (std::size_t t = 1; t < 30; ++t) {
        v(t, 0) = std::cos(th) * v(t - 1, 0) - std::sin(th) * v(t - 1, 1);
        v(t, 1) = std::sin(th) * v(t - 1, 0) + std::cos(th) * v(t - 1, 1);
    }
    ModelConfig cfg = small_config(Ablation::no_all);
    cfg.lookback = 4;
    cfg.horizon = 1;
    cfg.denoise = false;
    cfg.readout.hidden = 64;
    cfg.readout.ridge = 0.0;
    Model m = Model::init(cfg, 2);
    const TrainReport r = train(m, v, 30);
    EXPECT_EQ(r.windows, 26u);
    EXPECT_LE(r.train_mse, 1e-6);
}

TEST(Train, RandomFeatureModeOnlyChangesBeta) {
    Rng rng(76);
    Model m = Model::init(small_config(Ablation::full), 3);
    std::vector<Tensor> before;
    for (auto& [name, t] : m.feature_tensors()) before.push_back(*t);
    const Tensor omega = m.readout.omega, bias = m.readout.bias;
    train(m, random_tensor({80, 3}, rng), 80);
    std::size_t i = 0;
    for (auto& [name, t] : m.feature_tensors()) EXPECT_EQ(*t, before[i++]) << name;
    EXPECT_EQ(m.readout.omega, omega);
    EXPECT_EQ(m.readout.bias, bias);
    EXPECT_TRUE(m.readout.fitted());
}

TEST(Train, GradientModeLossNonIncreasing) {
    Rng rng(77);
    Tensor v({80, 2});
    for (std::size_t t = 0; t < 80; ++t) {
        v(t, 0) = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 12.0) + 0.1 * rng.normal();
        v(t, 1) = std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / 8.0) + 0.1 * rng.normal();
    }
    ModelConfig cfg = small_config(Ablation::full);
    cfg.train.mode = TrainMode::gradient;
    cfg.train.epochs = 5;
    Model m = Model::init(cfg, 2);
    const Tensor kernel0 = m.temporal.kernel;
    const TrainReport r = train(m, v, 80);
    ASSERT_EQ(r.loss_history.size(), 5u);
    for (std::size_t e = 1; e < r.loss_history.size(); ++e) EXPECT_LE(r.loss_history[e], r.loss_history[e - 1]);
    EXPECT_LT(r.loss_history.back(), r.loss_history.front());
    EXPECT_NE(m.temporal.kernel, kernel0);
}

TEST(Train, GradientModeIndependentOfThreadCount) {
    Rng rng(78);
    const Tensor v = random_tensor({60, 2}, rng);
    ModelConfig cfg = small_config(Ablation::full);
    cfg.train.mode = TrainMode::gradient;
    cfg.train.epochs = 2;
    auto run = [&](const char* threads) {
        ThreadsEnv env(threads);
        Model m = Model::init(cfg, 2);
        train(m, v, 60);
        return m;
    };
    const Model a = run("1"), b = run("4");
    EXPECT_EQ(a.temporal.kernel, b.temporal.kernel);
    EXPECT_EQ(a.deform.offset_w, b.deform.offset_w);
    EXPECT_EQ(a.readout.beta, b.readout.beta);
}

TEST(Windows, TargetsStayInsideRequestedRange) {
    Tensor v({50, 1});
    for (std::size_t t = 0; t < 50; ++t) v(t, 0) = static_cast<double>(t);
    const auto w = windows_for_targets(v, 10, 3, 30, 40);
    ASSERT_EQ(w.size(), 8u);
    EXPECT_EQ(w.front().origin_index, 20u);
    EXPECT_EQ(w.front().target(0, 0), 30.0);
    EXPECT_EQ(w.back().target(2, 0), 39.0);
}

namespace {

struct StreamSetup {
    Model model;
    Tensor values;
    std::size_t train_rows = 0, history = 0;
};

StreamSetup stream_setup(const SyntheticSpec& spec, std::size_t train_rows, std::size_t history, std::size_t lookback,
                         std::size_t horizon) {
    StreamSetup s;
    s.values = normalized(generate(spec).values, train_rows);
    ModelConfig cfg;
    cfg.lookback = lookback;
    cfg.horizon = horizon;
    cfg.temporal.channels = 8;
    s.model = Model::init(cfg, spec.variables);
    train(s.model, s.values, train_rows);
    s.model.baseline_mse = range_mse(s.model, s.values, train_rows, history);
    s.train_rows = train_rows;
    s.history = history;
    return s;
}

}  // namespace

TEST(Dynamic, StationaryStreamTriggersNoUpdates) {
    // 480-row chunks average enough windows that sampling noise stays inside the 5% band.
    const std::size_t chunk = 480;
    SyntheticSpec spec{Generator::sine_mix, 1000 + 20 * chunk, 8, 7, 0.1, {}};
    StreamSetup s = stream_setup(spec, 800, 1000, 48, 12);
    const DynamicResult r = dynamic_predict(s.model, s.values, s.history, {0.05, s.model.baseline_mse, 800, chunk});
    EXPECT_EQ(r.chunks.size(), 20u);
    EXPECT_TRUE(r.events.empty());
}

TEST(Dynamic, MeanShiftTriggersHelpfulUpdate) {
    const std::size_t chunk = 96, history = 1000;
    SyntheticSpec spec{Generator::mean_shift, history + 12 * chunk, 4, 7, 0.1, history + 5 * chunk};
    StreamSetup s = stream_setup(spec, 800, history, 48, 12);
    const DynamicResult r = dynamic_predict(s.model, s.values, history, {0.05, s.model.baseline_mse, 800, chunk});
    const UpdateEvent* first = nullptr;
    for (const auto& e : r.events)
        if (e.row_end > *spec.shift_at) {
            first = &e;
            break;
        }
    ASSERT_NE(first, nullptr);
    EXPECT_LT(first->mse_after, first->mse_before);
    ASSERT_LT(first->chunk + 1, r.chunks.size());
    EXPECT_LT(r.chunks[first->chunk + 1].mse, first->mse_before);
    for (const auto& e : r.events) EXPECT_EQ(e.buffer_end - e.buffer_begin, 800u);
    EXPECT_EQ(r.buffer_rows, 800u);
}

TEST(Dynamic, ForecastsNeverReadFutureRows) {
    const std::size_t chunk = 96, history = 1000, cut = history + 250;
    SyntheticSpec spec{Generator::sine_mix, history + 6 * chunk, 4, 9, 0.1, {}};
    StreamSetup clean = stream_setup(spec, 800, history, 48, 12);
    StreamSetup poisoned = clean;
    for (std::size_t t = cut; t < poisoned.values.rows(); ++t)
        for (std::size_t j = 0; j < 4; ++j) poisoned.values(t, j) = 1e6;
    const UpdatePolicy policy{0.05, clean.model.baseline_mse, 800, chunk};
    const DynamicResult a = dynamic_predict(clean.model, clean.values, history, policy);
    const DynamicResult b = dynamic_predict(poisoned.model, poisoned.values, history, policy);
    ASSERT_EQ(a.forecasts.origins, b.forecasts.origins);
    std::size_t compared = 0;
    for (std::size_t i = 0; i < a.forecasts.windows(); ++i) {
        if (a.forecasts.origins[i] + 48 + 12 > cut) continue;
        for (std::size_t k = 0; k < a.forecasts.pred.cols(); ++k)
            ASSERT_EQ(a.forecasts.pred(i, k), b.forecasts.pred(i, k)) << "window " << i;
        ++compared;
    }
    EXPECT_GT(compared, 100u);
    EXPECT_FALSE(b.events.empty());
}

TEST(Dynamic, PolicyErrorsAndShortStream) {
    SyntheticSpec spec{Generator::sine_mix, 400, 2, 3, 0.1, {}};
    const Tensor v = normalized(generate(spec).values, 200);
    ModelConfig cfg = small_config(Ablation::full);
    Model m = Model::init(cfg, 2);
    EXPECT_THROW(dynamic_predict(m, v, 300, {0.05, 1.0, 100, 0}), UsageError);
    train(m, v, 200);
    EXPECT_THROW(dynamic_predict(m, v, 300, {0.05, 1.0, 10, 0}), ConfigError);
    EXPECT_THROW(dynamic_predict(m, v, 300, {0.05, 1.0, 301, 0}), ConfigError);
    EXPECT_THROW(dynamic_predict(m, v, 300, {0.05, 1.0, 100, 2}), ConfigError);
    const DynamicResult r = dynamic_predict(m, v, 398, {0.05, 1.0, 100, 0});
    EXPECT_TRUE(r.chunks.empty());
    EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(Dynamic, DefaultChunkSpansTwoLookbacks) {
    EXPECT_EQ(default_chunk_rows(96, 24), 192u);
    EXPECT_EQ(default_chunk_rows(24, 24), 96u);
}
