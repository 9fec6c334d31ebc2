#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "retagnn/numkernel.hpp"
#include "support/oracles.hpp"

namespace nk = retagnn::nk;
using T = nk::Tensor<double>;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> as_vector(const T& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(Softmax, UniformRowWithoutMask) {
  auto x = T::constant({1, 3}, {1, 1, 1});
  std::vector<double> mask{0, 0, 0};
  auto y = nk::softmax_with_mask(x, std::span<const double>(mask));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Softmax, MaskedEntryVanishes) {
  auto x = T::constant({1, 2}, {5, 9});
  std::vector<double> mask{0, -kInf};
  auto y = nk::softmax_with_mask(x, std::span<const double>(mask));
  EXPECT_EQ(as_vector(y), (std::vector<double>{1.0, 0.0}));
}

TEST(Softmax, RowsSumToOneOrZero) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(4 * 5), mask(4 * 5, 0.0);
    for (auto& x : v) x = normal(rng);
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (rng() % 3 == 0) mask[i] = -kInf;
    for (std::size_t c = 0; c < 5; ++c) mask[5 * 3 + c] = -kInf;  // last row fully masked
    auto y = nk::softmax_with_mask(T::constant({4, 5}, v), std::span<const double>(mask));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      bool any = false;
      for (std::size_t c = 0; c < 5; ++c) {
        s += y.at(r, c);
        any = any || mask[r * 5 + c] == 0.0;
      }
      EXPECT_NEAR(s, any ? 1.0 : 0.0, 1e-12);
    }
  }
}

TEST(Activation, LeakyReluSlope) {
  auto y = nk::leaky_relu(T::constant({1, 2}, {-1.0, 2.0}), 0.2);
  EXPECT_DOUBLE_EQ(y.values()[0], -0.2);
  EXPECT_DOUBLE_EQ(y.values()[1], 2.0);
}

TEST(Ops, ShapeMismatchThrows) {
  EXPECT_THROW(nk::matmul(T::zeros({2, 3}), T::zeros({2, 3})), retagnn::ContractViolation);
  EXPECT_THROW(nk::add(T::zeros({2, 3}), T::zeros({3, 2})), retagnn::ContractViolation);
}

TEST(Backward, DotGradientIsTheOtherOperand) {
  auto w = T::parameter({2}, {1, 2}, "w");
  auto x = T::constant({2}, {3, 4});
  nk::backward(nk::dot(w, x));
  EXPECT_EQ(std::vector<double>(w.grad().begin(), w.grad().end()), (std::vector<double>{3, 4}));
}

TEST(Backward, FrobeniusGradientIsTwiceTheMatrix) {
  auto w = T::parameter({2, 2}, {1, -2, 0.5, 3}, "W");
  nk::backward(nk::frobenius_norm_sq(w));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(w.grad()[i], 2 * w.values()[i]);
}

TEST(Backward, RejectsSecondPassOnSameLoss) {
  auto w = T::parameter({1}, {2}, "w");
  auto loss = nk::sum(w);
  nk::backward(loss);
  EXPECT_THROW(nk::backward(loss), retagnn::ContractViolation);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto w = T::parameter({1}, {2}, "w");
  T loss;
  {
    nk::NoGradGuard guard;
    loss = nk::sum(w);
  }
  EXPECT_THROW(nk::backward(loss), retagnn::ContractViolation);
}

TEST(GradientOracle, FiftyRandomKernelGraphs) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto g = oracle::random_kernel_graph(seed);
    auto r = oracle::check_gradients(g.build, g.params);
    EXPECT_LE(r.max_error, 1e-4) << "seed " << seed << ": " << r.worst;
    EXPECT_GT(r.entries, 0u);
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto w = T::parameter({3}, {1, -2, 3}, "w");
  nk::Adam<double> opt({w});
  nk::backward(nk::scale(nk::sum(w), 0.0));
  opt.step();
  EXPECT_EQ(as_vector(w), (std::vector<double>{1, -2, 3}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε) ≈ lr.
  auto w = T::parameter({1}, {0.0}, "w");
  nk::Adam<double> opt({w}, {0.001, 0.9, 0.999, 1e-8});
  nk::backward(nk::sum(w));
  opt.step();
  EXPECT_NEAR(w.values()[0], -0.001 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
  auto w = T::parameter({1}, {0.0}, "w");
  nk::Adam<double> opt({w}, {0.01, 0.9, 0.999, 1e-8});
  double previous = 0.0;
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    nk::backward(nk::scale(nk::sum(w), 5.0));
    opt.step();
    const double now = w.values()[0];
    EXPECT_NEAR(previous - now, 0.01, 1e-6);
    previous = now;
  }
  EXPECT_EQ(opt.step_count(), 200u);
}

TEST(Adam, NonFiniteGradientIsRejectedBeforeAnyUpdate) {
  auto a = T::parameter({1}, {1.0}, "a");
  auto b = T::parameter({1}, {1.0}, "b");
  nk::Adam<double> opt({a, b});
  nk::backward(nk::add(nk::sum(a), nk::scale(nk::sum(b), std::numeric_limits<double>::infinity())));
  EXPECT_THROW(opt.step(), retagnn::NumericError);
  EXPECT_EQ(a.values()[0], 1.0);
  EXPECT_EQ(opt.step_count(), 0u);
}

TEST(Determinism, IdenticalTrajectories) {
  auto run = [] {
    auto g = oracle::random_kernel_graph(11);
    nk::Adam<double> opt(g.params, {0.01});
    std::vector<double> losses;
    for (int i = 0; i < 10; ++i) {
      opt.zero_grad();
      auto loss = g.build();
      losses.push_back(loss.item());
      nk::backward(loss);
      opt.step();
    }
    return losses;
  };
  EXPECT_EQ(run(), run());
}

template <class X>
concept HasValueView = requires(X&& x) { std::forward<X>(x).values(); };
template <class X>
concept HasGradView = requires(X&& x) { std::forward<X>(x).grad(); };

TEST(Tensor, StorageViewsNeedAnLvalue) {
  static_assert(!HasValueView<T>);
  static_assert(!HasGradView<T>);
  static_assert(HasValueView<const T&>);
  static_assert(HasGradView<T&>);
}
