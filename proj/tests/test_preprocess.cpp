#include <acnet/preprocess.hpp>
#include <acnet/rng.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace acnet;

namespace {

SeriesFrame frame_of(Tensor values) {
    SeriesFrame f;
    f.values = std::move(values);
    for (std::size_t j = 0; j < f.variables(); ++j) f.var_names.push_back("v" + std::to_string(j));
    return f;
}

std::vector<double> random_signal(std::size_t n, Rng& rng) {
    std::vector<double> x(n);
    for (double& v : x) v = rng.normal();
    return x;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST(Normalize, ConstantColumnBecomesZero) {
    SeriesFrame f = with_stats(frame_of(Tensor::matrix({{0.1, 1}, {0.1, 2}, {0.1, 3}})), 3);
    ASSERT_EQ(f.stats->warnings.size(), 1u);
    EXPECT_EQ(f.stats->sigma[0], kSigmaFloor);
    const SeriesFrame n = normalize(f);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(n.values(i, 0), 0.0);
}

TEST(Normalize, HandArithmetic) {
    const SeriesFrame n = normalize(with_stats(frame_of(Tensor::matrix({{1}, {2}, {3}})), 3));
    EXPECT_NEAR(n.stats->mu[0], 2.0, 1e-15);
    EXPECT_NEAR(n.stats->sigma[0], std::sqrt(2.0 / 3.0), 1e-15);
    EXPECT_NEAR(n.values(0, 0), -std::sqrt(1.5), 1e-12);
    EXPECT_NEAR(n.values(1, 0), 0.0, 1e-12);
    EXPECT_NEAR(n.values(2, 0), std::sqrt(1.5), 1e-12);
}

TEST(Normalize, StatisticsUseTrainingRowsOnly) {
    const SeriesFrame f = with_stats(frame_of(Tensor::matrix({{1}, {3}, {100}})), 2);
    EXPECT_NEAR(f.stats->mu[0], 2.0, 1e-15);
    EXPECT_NEAR(f.stats->sigma[0], 1.0, 1e-15);
}

TEST(Normalize, RoundTripRandomized) {
    Rng rng(21);
    for (int trial = 0; trial < 2; ++trial) {
        Tensor v({50, 3});
        for (double& x : v.data()) x = rng.normal(5.0, 3.0);
        const SeriesFrame f = with_stats(frame_of(v), 35);
        EXPECT_LE(max_abs_diff(denormalize(normalize(f)).values, v), 1e-12);
    }
}

TEST(Normalize, OverflowingStatisticsAreNumericError) {
    EXPECT_THROW(fit_stats(Tensor::matrix({{1e308}, {-1e308}, {1e308}}), 3), NumericError);
}

TEST(Normalize, MissingStatsIsUsageError) {
    SeriesFrame f = frame_of(Tensor::matrix({{1}, {2}}));
    EXPECT_THROW(normalize(f), UsageError);
    EXPECT_THROW(denormalize(f), UsageError);
}

TEST(Wavelet, FiltersAreOrthonormal) {
    for (auto fam : {WaveletFamily::haar, WaveletFamily::db2, WaveletFamily::db4}) {
        const auto h = wavelet_lowpass(fam);
        double s = 0.0;
        for (double v : h) s += v;
        EXPECT_NEAR(s, std::numbers::sqrt2, 1e-12);
        for (std::size_t shift = 0; shift < h.size(); shift += 2) {
            double c = 0.0;
            for (std::size_t i = 0; i + shift < h.size(); ++i) c += h[i] * h[i + shift];
            EXPECT_NEAR(c, shift == 0 ? 1.0 : 0.0, 1e-12) << to_string(fam) << " shift " << shift;
        }
    }
}

TEST(Wavelet, HaarHandArithmetic) {
    const std::vector<double> x{1.0, 3.0};
    const WaveletPyramid p = dwt(x, WaveletFamily::haar, 1);
    ASSERT_EQ(p.approx.size(), 1u);
    EXPECT_NEAR(p.approx[0], 4.0 / std::numbers::sqrt2, 1e-15);
    EXPECT_NEAR(p.details[0][0], -2.0 / std::numbers::sqrt2, 1e-15);
}

TEST(Wavelet, MatchesReferenceSymmetricModeCoefficients) {
    // Reference values from PyWavelets wavedec(x, 'db2', mode='symmetric', level=2), x = arange(7)**1.5.
    std::vector<double> x(7);
    for (std::size_t i = 0; i < 7; ++i) x[i] = std::pow(static_cast<double>(i), 1.5);
    const WaveletPyramid p = dwt(x, WaveletFamily::db2, 2);
    const std::vector<double> ca2{0.6571565699342328, 0.3059457100800678, 17.12300400792934, 30.01866224539807};
    const std::vector<double> cd2{-0.27220316386934257, -2.2115662167519714, 3.3176881200930066, 1.9178173479513343};
    const std::vector<double> cd1{-0.6123724356957945, -0.3676673754709985, -0.23827019885584472, 1.6548716138881256,
                                  0.2926808693600953};
    ASSERT_EQ(p.approx.size(), ca2.size());
    EXPECT_LE(max_diff(p.approx, ca2), 1e-12);
    EXPECT_LE(max_diff(p.details[1], cd2), 1e-12);
    EXPECT_LE(max_diff(p.details[0], cd1), 1e-12);
}

TEST(Wavelet, ConstantSignalHasNoDetail) {
    const std::vector<double> x(40, 2.5);
    for (auto fam : {WaveletFamily::haar, WaveletFamily::db2, WaveletFamily::db4}) {
        const WaveletPyramid p = dwt(x, fam, 3);
        for (const auto& level : p.details)
            for (double c : level) EXPECT_NEAR(c, 0.0, 1e-12);
    }
}

TEST(Wavelet, PerfectReconstruction) {
    Rng rng(22);
    for (auto fam : {WaveletFamily::haar, WaveletFamily::db2, WaveletFamily::db4}) {
        for (std::size_t n : {32u, 64u, 128u, 97u}) {
            const auto x = random_signal(n, rng);
            for (std::size_t levels : {1u, 3u, 5u}) {
                EXPECT_LE(max_diff(idwt(dwt(x, fam, levels)), x), 1e-10) << to_string(fam) << " n=" << n;
            }
        }
    }
}

TEST(Wavelet, TooShortSignalIsConfigError) {
    const std::vector<double> x(7, 1.0);
    EXPECT_THROW(dwt(x, WaveletFamily::haar, 3), ConfigError);
    EXPECT_THROW(dwt(x, WaveletFamily::haar, 0), ConfigError);
}

TEST(Threshold, UnitCases) {
    EXPECT_EQ(compromise_threshold(0.5, 1.0, 0.5), 0.0);
    EXPECT_DOUBLE_EQ(compromise_threshold(2.0, 1.0, 0.5), 1.5);
    EXPECT_DOUBLE_EQ(compromise_threshold(-2.0, 1.0, 0.5), -1.5);
    EXPECT_DOUBLE_EQ(compromise_threshold(2.0, 1.0, 0.0), 2.0);
    EXPECT_DOUBLE_EQ(compromise_threshold(2.0, 1.0, 1.0), 1.0);
}

TEST(Threshold, OddAndMonotone) {
    Rng rng(23);
    for (int trial = 0; trial < 200; ++trial) {
        const double gamma = rng.uniform(0.01, 2.0), a = rng.uniform();
        const double o = rng.uniform(-4.0, 4.0);
        EXPECT_EQ(compromise_threshold(-o, gamma, a), -compromise_threshold(o, gamma, a));
        double prev = -1e300;
        for (double x = -4.0; x <= 4.0; x += 0.01) {
            const double y = compromise_threshold(x, gamma, a);
            EXPECT_GE(y, prev);
            prev = y;
        }
    }
}

TEST(Denoise, ZeroThresholdIsIdentity) {
    Rng rng(24);
    const auto x = random_signal(100, rng);
    WaveletConfig cfg;
    cfg.gamma = GammaRule::fixed(0.0);
    EXPECT_LE(max_diff(denoise_signal(x, cfg), x), 1e-10);
}

TEST(Denoise, ConstantSignalUnchanged) {
    const std::vector<double> x(64, 0.75);
    EXPECT_LE(max_diff(denoise_signal(x, WaveletConfig{}), x), 1e-12);
}

TEST(Denoise, ReducesErrorOnNoisySine) {
    Rng rng(25);
    const std::size_t n = 512;
    std::vector<double> clean(n), noisy(n);
    for (std::size_t i = 0; i < n; ++i) {
        clean[i] = std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / 64.0);
        noisy[i] = clean[i] + 0.3 * rng.normal();
    }
    const auto out = denoise_signal(noisy, WaveletConfig{});
    double before = 0.0, after = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        before += (noisy[i] - clean[i]) * (noisy[i] - clean[i]);
        after += (out[i] - clean[i]) * (out[i] - clean[i]);
    }
    EXPECT_LT(after, before);
}

TEST(Denoise, PreservesShapeAndNeedsNormalizedFrame) {
    Rng rng(26);
    Tensor v({37, 3});
    for (double& x : v.data()) x = rng.normal();
    SeriesFrame f = with_stats(frame_of(v), 37);
    EXPECT_THROW(denoise(f, WaveletConfig{}), UsageError);
    const SeriesFrame d = denoise(normalize(f), WaveletConfig{});
    EXPECT_EQ(d.values.shape(), v.shape());
}

TEST(Windows, CountFormula) {
    const Tensor v({10, 2});
    const auto w = make_windows(v, 4, 2, 1);
    EXPECT_EQ(w.size(), 5u);
    EXPECT_EQ(window_count(10, 4, 2, 1), 5u);
    EXPECT_EQ(make_windows(Tensor({6, 1}), 4, 2, 1).size(), 1u);
    EXPECT_THROW(make_windows(Tensor({5, 1}), 4, 2, 1), ConfigError);
}

TEST(Windows, TargetsFollowInputs) {
    Tensor v({12, 1});
    for (std::size_t i = 0; i < 12; ++i) v(i, 0) = static_cast<double>(i);
    for (const auto& w : make_windows(v, 3, 2, 2, 100)) {
        const double origin = static_cast<double>(w.origin_index - 100);
        for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(w.input(i, 0), origin + static_cast<double>(i));
        for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(w.target(i, 0), origin + 3.0 + static_cast<double>(i));
    }
}

TEST(Windows, StrideEqualToSpanPartitions) {
    Tensor v({18, 1});
    for (std::size_t i = 0; i < 18; ++i) v(i, 0) = static_cast<double>(i);
    const auto w = make_windows(v, 4, 2, 6);
    ASSERT_EQ(w.size(), 3u);
    std::vector<int> seen(18, 0);
    for (const auto& p : w) {
        for (std::size_t i = 0; i < 4; ++i) ++seen[static_cast<std::size_t>(p.input(i, 0))];
        for (std::size_t i = 0; i < 2; ++i) ++seen[static_cast<std::size_t>(p.target(i, 0))];
    }
    for (int s : seen) EXPECT_EQ(s, 1);
}
