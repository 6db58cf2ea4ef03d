#include <acnet/autodiff.hpp>
#include <acnet/linalg.hpp>
#include <acnet/rng.hpp>

#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace acnet;
using acnet::testing::check_gradients;
using acnet::testing::random_tensor;
using acnet::testing::weighted_sum;

namespace {

double penrose_residual(const Tensor& a, const Tensor& p) {
    const Tensor apa = matmul(matmul(a, p), a);
    const Tensor pap = matmul(matmul(p, a), p);
    const Tensor ap = matmul(a, p);
    const Tensor pa = matmul(p, a);
    return std::max({max_abs_diff(apa, a), max_abs_diff(pap, p), max_abs_diff(ap, transpose(ap)),
                     max_abs_diff(pa, transpose(pa))});
}

}  // namespace

TEST(Matmul, IdentityLeavesOperandUnchanged) {
    Rng rng(1);
    const Tensor a = random_tensor({3, 4}, rng);
    EXPECT_EQ(matmul(Tensor::identity(3), a), a);
}

TEST(Matmul, HandArithmetic) {
    const Tensor c = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1}, {1}}));
    EXPECT_EQ(c, Tensor::matrix({{3}, {7}}));
}

TEST(Matmul, ZeroOperand) {
    Rng rng(2);
    const Tensor a = random_tensor({3, 4}, rng);
    EXPECT_EQ(matmul(a, Tensor::zeros({4, 2})), Tensor::zeros({3, 2}));
}

TEST(Matmul, ShapeMismatchThrows) {
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Matmul, Associative) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng), c = random_tensor({3, 6}, rng);
        EXPECT_LE(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))), 1e-10);
    }
}

TEST(Svd, ReconstructsRandomMatrices) {
    Rng rng(4);
    for (auto [m, n] : {std::pair<std::size_t, std::size_t>{6, 4}, {4, 6}, {5, 5}, {40, 7}}) {
        const Tensor a = random_tensor({m, n}, rng);
        const Svd f = svd(a);
        Tensor us = f.u;
        for (std::size_t i = 0; i < us.rows(); ++i)
            for (std::size_t k = 0; k < f.s.size(); ++k) us(i, k) *= f.s[k];
        EXPECT_LE(max_abs_diff(matmul_nt(us, f.v), a), 1e-12) << m << "x" << n;
        EXPECT_TRUE(std::is_sorted(f.s.rbegin(), f.s.rend()));
    }
}

TEST(Svd, DeterministicBitwise) {
    Rng rng(5);
    const Tensor a = random_tensor({30, 12}, rng);
    const Svd f1 = svd(a), f2 = svd(a);
    EXPECT_EQ(f1.u, f2.u);
    EXPECT_EQ(f1.v, f2.v);
    EXPECT_EQ(f1.s, f2.s);
}

TEST(Pinv, Identity) { EXPECT_LE(max_abs_diff(pinv(Tensor::identity(4)), Tensor::identity(4)), 1e-15); }

TEST(Pinv, SingularDiagonal) {
    const Tensor p = pinv(Tensor::matrix({{2, 0}, {0, 0}}));
    EXPECT_LE(max_abs_diff(p, Tensor::matrix({{0.5, 0}, {0, 0}})), 1e-15);
}

TEST(Pinv, PenroseAxiomsOnRandomFiveByThree) {
    Rng rng(6);
    const Tensor a = random_tensor({5, 3}, rng);
    const Tensor p = pinv(a);
    EXPECT_EQ(p.shape(), (Shape{3, 5}));
    EXPECT_LE(max_abs_diff(matmul(matmul(p, a), p), p), 1e-9);
}

TEST(Pinv, PenroseAxiomsUpTo32) {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t m = 1 + static_cast<std::size_t>(rng.uniform() * 32);
        const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform() * 32);
        const Tensor a = random_tensor({m, n}, rng);
        EXPECT_LE(penrose_residual(a, pinv(a)), 1e-8) << m << "x" << n;
    }
}

TEST(Pinv, RankDeficientAxioms) {
    Rng rng(8);
    const Tensor b = random_tensor({12, 3}, rng);
    const Tensor a = matmul_nt(b, random_tensor({9, 3}, rng));  // rank 3, 12x9
    EXPECT_LE(penrose_residual(a, pinv(a)), 1e-8);
}

TEST(Pinv, RepeatedRowsFromPeriodicFeatures) {
    // A periodic series gives a tall design with only a handful of distinct rows.
    Rng rng(9);
    const Tensor base = random_tensor({20, 120}, rng, -3.0, 3.0);
    Tensor a({400, 120});
    for (std::size_t i = 0; i < 400; ++i)
        for (std::size_t j = 0; j < 120; ++j) a(i, j) = 1.0 / (1.0 + std::exp(-base(i % 20, j)));
    const Svd f = svd(a);
    Tensor us = f.u;
    for (std::size_t i = 0; i < us.rows(); ++i)
        for (std::size_t k = 0; k < f.s.size(); ++k) us(i, k) *= f.s[k];
    EXPECT_LE(max_abs_diff(matmul_nt(us, f.v), a), 1e-10);
    EXPECT_LE(penrose_residual(a, pinv(a)), 1e-8);
}

TEST(Pinv, RidgeShrinksSpectrum) {
    const Tensor p = pinv(Tensor::matrix({{2, 0}, {0, 1}}), 1.0);
    EXPECT_NEAR(p(0, 0), 2.0 / 5.0, 1e-15);
    EXPECT_NEAR(p(1, 1), 0.5, 1e-15);
}

TEST(Pinv, NonFiniteInputThrows) {
    Tensor a = Tensor::identity(2);
    a(0, 1) = std::nan("");
    EXPECT_THROW(pinv(a), NumericError);
}

TEST(Lstsq, IdentityDesign) {
    Rng rng(9);
    const Tensor y = random_tensor({4, 3}, rng);
    EXPECT_LE(max_abs_diff(lstsq(Tensor::identity(4), y), y), 1e-14);
}

TEST(Lstsq, MeanOfNormalEquations) {
    const Tensor beta = lstsq(Tensor::matrix({{1}, {1}}), Tensor::matrix({{1}, {3}}));
    EXPECT_NEAR(beta(0, 0), 2.0, 1e-14);
}

TEST(Lstsq, ResidualIsMinimalUnderPerturbation) {
    Rng rng(10);
    const Tensor h = random_tensor({20, 5}, rng);
    const Tensor y = random_tensor({20, 2}, rng);
    const Tensor beta = lstsq(h, y);
    const double best = frobenius_norm(matmul(h, beta) - y);
    for (int k = 0; k < 100; ++k) {
        const Tensor other = beta + random_tensor({5, 2}, rng, -1e-3, 1e-3);
        EXPECT_LE(best, frobenius_norm(matmul(h, other) - y));
    }
}

TEST(Lstsq, RowMismatchThrows) { EXPECT_THROW(lstsq(Tensor::ones({3, 2}), Tensor::ones({2, 1})), DimensionError); }

TEST(Tape, SumGradientIsOnes) {
    GradTape tape;
    Var x = tape.leaf(Tensor({2, 3}, 0.7));
    tape.backward(sum(x));
    EXPECT_EQ(tape.grad(x), Tensor::ones({2, 3}));
}

TEST(Tape, SquareGradient) {
    GradTape tape;
    Var x = tape.leaf(Tensor::vector({1, 2}));
    tape.backward(sum(mul(x, x)));
    EXPECT_EQ(tape.grad(x), Tensor::vector({2, 4}));
}

TEST(Tape, ConstantLeafHasZeroGradient) {
    GradTape tape;
    Var x = tape.leaf(Tensor::vector({1, 2}));
    Var c = tape.constant(Tensor::vector({3, 4}));
    tape.backward(sum(mul(x, c)));
    EXPECT_EQ(tape.grad(c), Tensor::zeros({2}));
    EXPECT_EQ(tape.grad(x), Tensor::vector({3, 4}));
}

TEST(Tape, LossFromAnotherTapeIsUsageError) {
    GradTape a, b;
    Var x = a.leaf(Tensor::vector({1}));
    EXPECT_THROW(b.backward(sum(x)), UsageError);
    Var y = a.leaf(Tensor::vector({1, 2}));
    EXPECT_THROW(a.backward(y), UsageError);
}

TEST(Tape, ReplaysInReverseRecordingOrder) {
    GradTape tape;
    std::vector<int> order;
    Var x = tape.leaf(Tensor::scalar(1.0));
    Var a = tape.record(x.value(), {x}, [&](GradTape& t, const Tensor& g, const Tensor&) {
        order.push_back(1);
        t.accumulate(x, g);
    });
    Var b = tape.record(a.value(), {a}, [&](GradTape& t, const Tensor& g, const Tensor&) {
        order.push_back(2);
        t.accumulate(a, g);
    });
    tape.backward(b);
    EXPECT_EQ(order, (std::vector<int>{2, 1}));
}

TEST(FiniteDifference, ElementwiseAndReductionOps) {
    Rng rng(11);
    const auto x = random_tensor({3, 4}, rng);
    const auto y = random_tensor({3, 4}, rng);
    // Keep relu probe points away from the kink.
    Tensor xr = x;
    for (double& v : xr.data())
        if (std::abs(v) < 1e-3) v = 0.5;

    EXPECT_LE(check_gradients([](GradTape&, std::span<const Var> v) { return weighted_sum(v[0] + v[1]); }, {x, y}).worst(), 1e-4);
    EXPECT_LE(check_gradients([](GradTape&, std::span<const Var> v) { return weighted_sum(v[0] - v[1]); }, {x, y}).worst(), 1e-4);
    EXPECT_LE(check_gradients([](GradTape&, std::span<const Var> v) { return weighted_sum(v[0] * v[1]); }, {x, y}).worst(), 1e-4);
    EXPECT_LE(check_gradients([](GradTape&, std::span<const Var> v) { return weighted_sum(scale(v[0], -2.5)); }, {x}).worst(), 1e-4);
    EXPECT_LE(check_gradients([](GradTape&, std::span<const Var> v) { return weighted_sum(relu(v[0])); }, {xr}).worst(), 1e-4);
    EXPECT_LE(check_gradients([](GradTape&, std::span<const Var> v) { return weighted_sum(sigmoid(v[0])); }, {x}).worst(), 1e-4);
    EXPECT_LE(check_gradients([](GradTape&, std::span<const Var> v) { return mean(mul(v[0], v[0])); }, {x}).worst(), 1e-4);
    EXPECT_LE(check_gradients([](GradTape&, std::span<const Var> v) { return mse(v[0], v[1]); }, {x, y}).worst(), 1e-4);
    EXPECT_LE(check_gradients([](GradTape&, std::span<const Var> v) { return weighted_sum(reshape(v[0], {4, 3})); }, {x}).worst(), 1e-4);
}

TEST(FiniteDifference, MatmulAndBroadcastOps) {
    Rng rng(12);
    const auto a = random_tensor({3, 4}, rng);
    const auto b = random_tensor({4, 2}, rng);
    const auto bias = random_tensor({4}, rng);
    const auto gate = random_tensor({3, 1}, rng);
    EXPECT_LE(check_gradients([](GradTape&, std::span<const Var> v) { return weighted_sum(matmul(v[0], v[1])); }, {a, b}).worst(), 1e-4);
    EXPECT_LE(check_gradients([](GradTape&, std::span<const Var> v) { return weighted_sum(add_last(v[0], v[1])); }, {a, bias}).worst(), 1e-4);
    EXPECT_LE(check_gradients([](GradTape&, std::span<const Var> v) { return weighted_sum(mul_last(v[0], v[1])); }, {a, bias}).worst(), 1e-4);
    EXPECT_LE(check_gradients([](GradTape&, std::span<const Var> v) { return weighted_sum(mul_broadcast_last(v[0], v[1])); }, {a, gate}).worst(), 1e-4);
    EXPECT_LE(check_gradients([](GradTape&, std::span<const Var> v) { return weighted_sum(layer_norm_last(v[0])); }, {a}).worst(), 1e-4);
}

TEST(FiniteDifference, StackAndScaleMean) {
    Rng rng(13);
    const auto p = random_tensor({3, 2}, rng), q = random_tensor({3, 2}, rng), r = random_tensor({3, 2}, rng);
    auto f = [](GradTape&, std::span<const Var> v) {
        Var s = stack(v);
        return weighted_sum(mean_axis0(mul(s, s)));
    };
    EXPECT_LE(check_gradients(f, {p, q, r}).worst(), 1e-4);
}
