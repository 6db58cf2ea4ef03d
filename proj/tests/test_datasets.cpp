#include <acnet/datasets.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace acnet;

namespace {

SeriesFrame parse(const std::string& text) {
    std::istringstream in(text);
    return parse_csv(in, "mem.csv");
}

std::string error_of(const std::string& text) {
    try {
        parse(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Csv, TimestampColumnDetected) {
    const SeriesFrame f = parse("date,a,b\n2020-01-01,1.5,2\n2020-01-02,3,-4e-1\n");
    EXPECT_EQ(f.variables(), 2u);
    EXPECT_EQ(f.steps(), 2u);
    EXPECT_EQ(f.var_names, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(f.timestamps, (std::vector<std::string>{"2020-01-01", "2020-01-02"}));
    EXPECT_EQ(f.values(1, 1), -0.4);
}

TEST(Csv, AllNumericColumnsAreVariables) {
    const SeriesFrame f = parse("x,y,z\r\n1,2,3\r\n4,5,6\r\n");
    EXPECT_EQ(f.variables(), 3u);
    EXPECT_TRUE(f.timestamps.empty());
    EXPECT_EQ(f.values(1, 2), 6.0);
}

TEST(Csv, ByteOrderMarkAndBlankLinesIgnored) {
    const SeriesFrame f = parse("\xEF\xBB\xBFt,v\n\n0,1\n\n1,2\n");
    EXPECT_EQ(f.var_names, (std::vector<std::string>{"t", "v"}));
    EXPECT_EQ(f.steps(), 2u);
}

TEST(Csv, ErrorsCiteLineAndColumn) {
    EXPECT_EQ(error_of("a,b\n1,2\n3\n"), "mem.csv:3: row has 1 fields, header has 2");
    EXPECT_EQ(error_of("a,b\n1,2\n3,x\n"), "mem.csv:3:2: cannot parse 'x' as a number");
    EXPECT_EQ(error_of("a,b\n1,2\n3,4,5\n"), "mem.csv:3: row has 3 fields, header has 2");
    EXPECT_EQ(error_of("a,b\n1,2\n3,1,5\n").substr(0, 9), "mem.csv:3");
    EXPECT_EQ(error_of("a,b\n1,inf\n"), "mem.csv:2:2: non-finite value in data row 1");
    EXPECT_EQ(error_of("a,b\n"), "mem.csv: no data rows after the header");
    EXPECT_EQ(error_of(""), "mem.csv: empty file, header row required");
}

TEST(Csv, CommaDecimalIsRejected) {
    EXPECT_NE(error_of("t,a\n2020,\"1,5\"\n").find("mem.csv:2"), std::string::npos);
    EXPECT_EQ(error_of("a\n1;5\n"), "mem.csv:2:1: cannot parse '1;5' as a number");
}

TEST(Csv, MissingFileIsConfigError) { EXPECT_THROW(load_csv("/nonexistent/dir/data.csv"), ConfigError); }

TEST(Csv, WriteThenParseRoundTripsBits) {
    SeriesFrame f;
    f.values = Tensor::matrix({{0.1, -1.0 / 3.0}, {1e-300, 12345.678901234}});
    f.var_names = {"p", "q"};
    f.timestamps = {"r0", "r1"};
    std::ostringstream out;
    write_csv(out, f);
    const SeriesFrame g = parse(out.str());
    EXPECT_EQ(g.values, f.values);
    EXPECT_EQ(g.var_names, f.var_names);
    EXPECT_EQ(g.timestamps, f.timestamps);
}

TEST(Split, SeventyTenTwenty) {
    const SplitSizes s = split_sizes(2000);
    EXPECT_EQ(s.train, 1400u);
    EXPECT_EQ(s.val, 200u);
    EXPECT_EQ(s.test, 400u);
    EXPECT_EQ(s.test_begin(), 1600u);
    const SplitSizes odd = split_sizes(17);
    EXPECT_EQ(odd.train + odd.val + odd.test, 17u);
    EXPECT_EQ(odd.train, 11u);
    EXPECT_EQ(odd.test, 3u);
}

TEST(Generators, SineMixRepeatsEveryLongestPeriod) {
    const Tensor v = generate({Generator::sine_mix, 300, 3, 5, 0.0, {}}).values;
    for (std::size_t t = 0; t + kSinePeriod < 300; ++t)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(v(t, j), v(t + kSinePeriod, j), 1e-12);
}

TEST(Generators, LogisticStaysInUnitInterval) {
    const Tensor v = generate({Generator::logistic_map, 500, 2, 6, 0.0, {}}).values;
    for (double x : v.data()) {
        EXPECT_GT(x, 0.0);
        EXPECT_LT(x, 1.0);
    }
    for (std::size_t t = 1; t < 500; ++t) EXPECT_NEAR(v(t, 0), kLogisticR * v(t - 1, 0) * (1.0 - v(t - 1, 0)), 1e-12);
}

TEST(Generators, ArFollowsItsRecursionUpToInnovations) {
    // With unit innovations the residual of the recursion has unit variance.
    const Tensor v = generate({Generator::ar_long_memory, 4000, 1, 7, 1.0, {}}).values;
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (std::size_t t = kArLag; t < 4000; ++t) {
        const double e = v(t, 0) - kArShort * v(t - 1, 0) - kArLong * v(t - kArLag, 0);
        s += e;
        s2 += e * e;
        ++n;
    }
    const double mean = s / static_cast<double>(n);
    EXPECT_NEAR(mean, 0.0, 0.1);
    EXPECT_NEAR(s2 / static_cast<double>(n) - mean * mean, 1.0, 0.1);
}

TEST(Generators, MeanShiftAddsThreeSigmaStep) {
    // The sine part repeats every kSinePeriod steps, so a difference across the
    // shift point leaves the step plus noise.
    const Tensor b = generate({Generator::mean_shift, 400, 2, 8, 0.1, 250}).values;
    const NormStats st = fit_stats(b, 250);
    for (std::size_t j = 0; j < 2; ++j) {
        double step = 0.0, flat = 0.0;
        for (std::size_t t = 250 - kSinePeriod; t < 250; ++t) {
            step += b(t + kSinePeriod, j) - b(t, j);
            flat += b(t, j) - b(t - kSinePeriod, j);
        }
        EXPECT_NEAR(step / kSinePeriod, 3.0 * st.sigma[j], 0.1);
        EXPECT_NEAR(flat / kSinePeriod, 0.0, 0.1);
    }
}

TEST(Generators, DeterministicAndSeedSensitive) {
    for (auto g : {Generator::sine_mix, Generator::ar_long_memory, Generator::logistic_map, Generator::mean_shift}) {
        const SyntheticSpec s{g, 200, 2, 11, 0.1, {}};
        SyntheticSpec other = s;
        other.seed = 12;
        EXPECT_EQ(generate(s).values, generate(s).values) << to_string(g);
        EXPECT_NE(generate(s).values, generate(other).values) << to_string(g);
    }
    EXPECT_THROW(parse_generator("random_walk"), ConfigError);
    EXPECT_THROW(generate({Generator::mean_shift, 100, 1, 1, 0.1, 100}), ConfigError);
}
