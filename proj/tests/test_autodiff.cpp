#include <gtest/gtest.h>

#include <cmath>

#include "ccdn/autodiff.hpp"
#include "ccdn/gradcheck.hpp"
#include "ccdn/layers.hpp"
#include "test_util.hpp"

namespace ccdn {
namespace {

using ad::Tape;
using ad::Var;
using testing::max_grad_error;
using testing::random_values;

constexpr Real kPrimitiveTol = 1e-6;

TEST(Tape, LeafRejectsShapeMismatchAndZeroDims) {
  Tape t;
  EXPECT_THROW(t.leaf({2, 2}, {1, 2, 3}, true), ShapeError);
  EXPECT_THROW(t.leaf({0}, {}, true), ShapeError);
}

TEST(Tape, BackwardOfSumOfSquares) {
  Tape t;
  Var x = t.leaf({3}, {1.0, -2.0, 3.0}, true);
  auto g = ad::backward(ad::sum(ad::square(x)), t);
  EXPECT_EQ(g.of(x), (std::vector<Real>{2.0, -4.0, 6.0}));
}

TEST(Tape, SharedSubexpressionAccumulates) {
  Tape t;
  Var x = t.leaf({1}, {3.0}, true);
  Var y = ad::mul(x, x);  // x used twice
  auto g = ad::backward(ad::sum(ad::add(y, x)), t);
  EXPECT_DOUBLE_EQ(g.of(x)[0], 7.0);
}

TEST(Tape, UnreachedLeafGetsZeros) {
  Tape t;
  Var x = t.leaf({2}, {1.0, 2.0}, true);
  Var unused = t.leaf({3}, {1.0, 2.0, 3.0}, true);
  auto g = ad::backward(ad::sum(x), t);
  EXPECT_EQ(g.of(unused), (std::vector<Real>(3, 0.0)));
}

TEST(Tape, BackwardRejectsNonScalarAndForeignLoss) {
  Tape t, other;
  Var x = t.leaf({2}, {1.0, 2.0}, true);
  EXPECT_THROW(ad::backward(x, t), ShapeError);
  Var y = other.leaf({1}, {1.0}, true);
  EXPECT_THROW(ad::backward(y, t), std::invalid_argument);
}

TEST(Tape, DanglingIdThrows) {
  Tape t;
  EXPECT_THROW(t.node(5), std::out_of_range);
}

TEST(Tape, MixingTapesIsRejected) {
  Tape a, b;
  Var x = a.leaf({2}, {1, 2}, true);
  Var y = b.leaf({2}, {1, 2}, true);
  EXPECT_THROW(ad::add(x, y), std::invalid_argument);
}

TEST(Tape, CheckFiniteFlagsOverflow) {
  Tape t;
  t.set_check_finite(true);
  EXPECT_THROW(ad::exp(t.leaf({1}, {1000.0}, true)), NonFiniteError);
  EXPECT_THROW(ad::log(t.leaf({1}, {-1.0}, true)), std::domain_error);
}

TEST(Ops, ShapeMismatchThrows) {
  Tape t;
  Var a = t.leaf({2, 3}, random_values(6, 1), true);
  Var b = t.leaf({3, 2}, random_values(6, 2), true);
  EXPECT_THROW(ad::add(a, b), ShapeError);
  EXPECT_THROW(ad::matmul(a, a), ShapeError);
  EXPECT_THROW(ad::reshape(a, {4}), ShapeError);
  EXPECT_THROW(ad::slice(a, 1, 2, 5), ShapeError);
}

TEST(Ops, ForwardValues) {
  Tape t;
  Var a = t.constant({2, 2}, {1, 2, 3, 4});
  Var b = t.constant({2, 2}, {5, 6, 7, 8});
  auto mm = ad::matmul(a, b).value();
  EXPECT_EQ(std::vector<Real>(mm.begin(), mm.end()), (std::vector<Real>{19, 22, 43, 50}));
  auto tr = ad::transpose(a).value();
  EXPECT_EQ(std::vector<Real>(tr.begin(), tr.end()), (std::vector<Real>{1, 3, 2, 4}));
  auto sm = ad::softmax(t.constant({1, 2}, {0.0, std::log(3.0)})).value();
  EXPECT_NEAR(sm[0], 0.25, 1e-15);
  EXPECT_NEAR(sm[1], 0.75, 1e-15);
  auto cat = ad::concat({a, b}, 1).value();
  EXPECT_EQ(std::vector<Real>(cat.begin(), cat.end()),
            (std::vector<Real>{1, 2, 5, 6, 3, 4, 7, 8}));
  auto p = ad::permute(t.constant({1, 2, 3}, {0, 1, 2, 3, 4, 5}), {2, 0, 1}).value();
  EXPECT_EQ(std::vector<Real>(p.begin(), p.end()), (std::vector<Real>{0, 3, 1, 4, 2, 5}));
  auto ola = ad::overlap_add(t.constant({2, 4}, {1, 1, 1, 1, 2, 2, 2, 2}), 2).value();
  EXPECT_EQ(std::vector<Real>(ola.begin(), ola.end()), (std::vector<Real>{1, 1, 3, 3, 2, 2}));
  EXPECT_DOUBLE_EQ(ad::elu(t.scalar(-1.0)).item(), std::exp(-1.0) - 1.0);
  EXPECT_DOUBLE_EQ(ad::atan2(t.scalar(0.0), t.scalar(0.0)).item(), 0.0);
}

TEST(GradCheck, RejectsBadArguments) {
  auto f = [](Tape&, Var x) { return ad::sum(x); };
  EXPECT_THROW(ad::finite_difference_check(f, {2}, {1.0, 2.0}, 1e-9), std::invalid_argument);
  EXPECT_THROW(ad::finite_difference_check(f, {2}, {1.0, NAN}, 1e-5), std::invalid_argument);
  auto vec = [](Tape&, Var x) { return x; };
  EXPECT_THROW(ad::finite_difference_check(vec, {2}, {1.0, 2.0}, 1e-5), ShapeError);
}

TEST(GradCheck, DetectsAWrongBackwardRule) {
  // A deliberately wrong rule: claims d/dx x^3 = 2x.
  auto f = [](Tape& t, Var x) {
    std::vector<Real> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::pow(x.value()[i], 3);
    Var c = t.record("bad_cube", x.shape(), y, {x}, [](const ad::BackwardContext& c) {
      for (std::size_t i = 0; i < c.grad_out().size(); ++i) {
        c.grad_in(0)[i] += 2.0 * c.in(0)[i] * c.grad_out()[i];
      }
    });
    return ad::sum(c);
  };
  auto r = ad::finite_difference_check(f, {3}, {0.5, 1.5, -2.0}, 1e-5);
  EXPECT_GT(r.max_rel_error, 0.1);
}

struct UnaryCase {
  const char* name;
  Var (*op)(Var);
  Real lo, hi;
};

class UnaryGrad : public ::testing::TestWithParam<UnaryCase> {};

TEST_P(UnaryGrad, MatchesFiniteDifferences) {
  const auto& c = GetParam();
  const auto x = random_values(12, 7, c.lo, c.hi);
  EXPECT_LT(max_grad_error([&](Tape&, Var v) { return c.op(v); }, {3, 4}, x), kPrimitiveTol)
      << c.name;
}

INSTANTIATE_TEST_SUITE_P(
    Ops, UnaryGrad,
    ::testing::Values(UnaryCase{"neg", ad::neg, -2, 2}, UnaryCase{"square", ad::square, -2, 2},
                      UnaryCase{"exp", ad::exp, -2, 2}, UnaryCase{"log", ad::log, 0.2, 3},
                      UnaryCase{"sqrt", ad::sqrt, 0.2, 3}, UnaryCase{"abs", ad::abs, 0.1, 2},
                      UnaryCase{"sigmoid", ad::sigmoid, -4, 4}, UnaryCase{"tanh", ad::tanh, -3, 3},
                      UnaryCase{"elu", ad::elu, -3, 3}, UnaryCase{"cos", ad::cos, -3, 3},
                      UnaryCase{"sin", ad::sin, -3, 3}, UnaryCase{"softmax", ad::softmax, -3, 3},
                      UnaryCase{"transpose", ad::transpose, -1, 1}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(BinaryGrad, ArithmeticAndAtan2) {
  const auto x = random_values(8, 3, 0.5, 2.0);
  auto y = random_values(8, 4, -2.0, 2.0);
  for (auto& v : y) v += v < 0 ? -0.3 : 0.3;
  auto with = [&](auto op) {
    return max_grad_error(
        [&](Tape& t, Var v) { return op(v, t.constant({8}, y)); }, {8}, x);
  };
  auto with_left = [&](auto op) {
    return max_grad_error(
        [&](Tape& t, Var v) { return op(t.constant({8}, y), v); }, {8}, x);
  };
  EXPECT_LT(with(ad::add), kPrimitiveTol);
  EXPECT_LT(with(ad::sub), kPrimitiveTol);
  EXPECT_LT(with(ad::mul), kPrimitiveTol);
  EXPECT_LT(with(ad::div), kPrimitiveTol);
  EXPECT_LT(with_left(ad::div), kPrimitiveTol);
  EXPECT_LT(with(ad::atan2), kPrimitiveTol);
  EXPECT_LT(with_left(ad::atan2), kPrimitiveTol);
}

TEST(StructuralGrad, ReshapePermuteSliceConcat) {
  const auto x = random_values(24, 5);
  EXPECT_LT(max_grad_error([](Tape&, Var v) { return ad::reshape(v, {6, 4}); }, {2, 3, 4}, x),
            kPrimitiveTol);
  EXPECT_LT(max_grad_error([](Tape&, Var v) { return ad::permute(v, {2, 0, 1}); }, {2, 3, 4}, x),
            kPrimitiveTol);
  EXPECT_LT(max_grad_error([](Tape&, Var v) { return ad::slice(v, 1, 1, 3); }, {2, 3, 4}, x),
            kPrimitiveTol);
  EXPECT_LT(max_grad_error(
                [](Tape& t, Var v) {
                  return ad::concat({v, t.constant({2, 1, 4}, random_values(8, 9)), v}, 1);
                },
                {2, 3, 4}, x),
            kPrimitiveTol);
  EXPECT_LT(max_grad_error([](Tape&, Var v) { return ad::overlap_add(v, 2); }, {6, 4}, x),
            kPrimitiveTol);
}

TEST(ReductionGrad, SumMeanScaleScalar) {
  const auto x = random_values(6, 11);
  EXPECT_LT(max_grad_error([](Tape&, Var v) { return ad::sum(v); }, {6}, x), kPrimitiveTol);
  EXPECT_LT(max_grad_error([](Tape&, Var v) { return ad::mean(v); }, {6}, x), kPrimitiveTol);
  EXPECT_LT(max_grad_error([](Tape&, Var v) { return ad::scale(v, -2.5); }, {6}, x),
            kPrimitiveTol);
  EXPECT_LT(max_grad_error([](Tape&, Var v) { return ad::add_scalar(v, 4.0); }, {6}, x),
            kPrimitiveTol);
  // mul_scalar: gradient flows to both the array and the scalar.
  EXPECT_LT(max_grad_error([](Tape&, Var v) { return ad::mul_scalar(v, ad::sum(v)); }, {6}, x),
            kPrimitiveTol);
}

TEST(MatmulGrad, SharedAndBatchedRightOperand) {
  const auto a = random_values(2 * 3 * 4, 12);
  const auto b = random_values(4 * 5, 13);
  const auto bb = random_values(2 * 4 * 5, 14);
  EXPECT_LT(max_grad_error([&](Tape& t, Var v) { return ad::matmul(v, t.constant({4, 5}, b)); },
                           {2, 3, 4}, a),
            kPrimitiveTol);
  EXPECT_LT(max_grad_error([&](Tape& t, Var v) { return ad::matmul(t.constant({2, 3, 4}, a), v); },
                           {4, 5}, b),
            kPrimitiveTol);
  EXPECT_LT(max_grad_error(
                [&](Tape& t, Var v) { return ad::matmul(t.constant({2, 3, 4}, a), v); },
                {2, 4, 5}, bb),
            kPrimitiveTol);
  EXPECT_LT(max_grad_error([&](Tape& t, Var v) { return ad::add_bias(t.constant({2, 3, 4}, a), v); },
                           {4}, random_values(4, 15)),
            kPrimitiveTol);
}

TEST(NormGrad, LayerNorm) {
  const auto x = random_values(3 * 5, 16);
  const auto g = random_values(5, 17, 0.5, 1.5);
  const auto b = random_values(5, 18);
  EXPECT_LT(max_grad_error(
                [&](Tape& t, Var v) {
                  return ad::layer_norm(v, t.constant({5}, g), t.constant({5}, b));
                },
                {3, 5}, x),
            kPrimitiveTol);
  EXPECT_LT(max_grad_error(
                [&](Tape& t, Var v) {
                  return ad::layer_norm(t.constant({3, 5}, x), v, t.constant({5}, b));
                },
                {5}, g),
            kPrimitiveTol);
}

TEST(NormGrad, BatchNormTrainAndInfer) {
  const auto x = random_values(2 * 3 * 4, 19);
  const auto g = random_values(2, 20, 0.5, 1.5);
  const auto b = random_values(2, 21);
  for (auto mode : {ad::NormMode::train, ad::NormMode::infer}) {
    ad::BatchNormStats stats{{0.1, -0.2}, {1.5, 0.7}, 3};
    EXPECT_LT(max_grad_error(
                  [&](Tape& t, Var v) {
                    auto s = stats;
                    return ad::batch_norm(v, t.constant({2}, g), t.constant({2}, b), s, mode);
                  },
                  {2, 3, 4}, x),
              kPrimitiveTol);
  }
}

TEST(NormForward, BatchNormStatisticsUpdate) {
  Tape t;
  ad::BatchNormStats s{{0.0}, {1.0}, 0};
  Var x = t.constant({1, 4}, {1.0, 2.0, 3.0, 4.0});
  auto y = ad::batch_norm(x, t.constant({1}, {1.0}), t.constant({1}, {0.0}), s,
                          ad::NormMode::train);
  // Batch mean 2.5, biased variance 1.25.
  EXPECT_NEAR(y.value()[0], -1.5 / std::sqrt(1.25 + 1e-5), 1e-12);
  EXPECT_NEAR(s.running_mean[0], 0.25, 1e-15);
  EXPECT_NEAR(s.running_var[0], 0.9 + 0.125, 1e-15);
  EXPECT_EQ(s.batches_tracked, 1u);
}

TEST(Tape, SquareAtThreeHasSlopeSix) {
  Tape t;
  Var x = t.leaf({1}, {3.0}, true);
  EXPECT_EQ(ad::backward(ad::sum(ad::mul(x, x)), t).of(x), (std::vector<Real>{6.0}));
}

TEST(Tape, SumHasAllOnesGradient) {
  Tape t;
  Var x = t.leaf({2, 3}, random_values(6, 30), true);
  EXPECT_EQ(ad::backward(ad::sum(x), t).of(x), std::vector<Real>(6, 1.0));
}

TEST(GradCheck, LinearFunctionIsExact) {
  // Dyadic inputs and step keep x +- eps and their sum exact.
  auto f = [](Tape&, Var v) { return ad::sum(v); };
  const std::vector<Real> x{1.0, 2.0, -3.0, 0.5, 4.0};
  EXPECT_EQ(ad::finite_difference_check(f, {5}, x, 0x1.0p-10).max_rel_error, 0.0);
}

TEST(GradCheck, SumOfSquaresIsTight) {
  auto f = [](Tape&, Var v) { return ad::sum(ad::square(v)); };
  EXPECT_LT(ad::finite_difference_check(f, {6}, random_values(6, 32), 1e-5).max_rel_error, 1e-8);
}

TEST(GradCheck, EluOfConv1d) {
  const auto w = random_values(2 * 1 * 3, 33);
  const auto b = random_values(2, 34);
  auto op = [&](Tape& t, Var x) {
    return ad::elu(layers::conv(x, t.constant({2, 1, 3}, w), t.constant({2}, b),
                                layers::ConvSpec::conv1d(1, 2, 3, 1, 1, 1)));
  };
  auto f = [&](Tape& t, Var x) { return ad::sum(op(t, x)); };
  EXPECT_LT(ad::finite_difference_check(f, {1, 8}, random_values(8, 35), 1e-5).max_rel_error,
            kPrimitiveTol);
}

}  // namespace
}  // namespace ccdn
