#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "retagnn/ssa.hpp"

namespace nk = retagnn::nk;
namespace ssa = retagnn::ssa;
using T = nk::Tensor<double>;

namespace {

std::vector<double> normal_values(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

std::vector<double> identity(std::size_t d) {
  std::vector<double> m(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) m[i * d + i] = 1.0;
  return m;
}

ssa::SsaParams<double> identity_params(std::size_t d) {
  ssa::SsaParams<double> p;
  p.w_query = T::parameter({d, d}, identity(d), "q");
  p.w_key = T::parameter({d, d}, identity(d), "k");
  p.w_value = T::parameter({d, d}, identity(d), "v");
  return p;
}

}  // namespace

TEST(Ssa, SinglePositionIsValueProjection) {
  std::mt19937_64 rng(1);
  auto p = ssa::SsaParams<double>::init(4, rng, "ssa");
  auto v = T::constant({1, 4}, normal_values(4, rng));
  auto out = ssa::ssa_forward(p, v);
  auto want = nk::matmul(v, p.w_value);
  EXPECT_EQ(out.beta.item(), 1.0);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(out.z.at(0, k), want.at(0, k), 1e-15);
}

TEST(Ssa, FirstRowAttendsOnlyToItself) {
  std::mt19937_64 rng(2);
  auto p = ssa::SsaParams<double>::init(3, rng, "ssa");
  auto out = ssa::ssa_forward(p, T::constant({3, 3}, normal_values(9, rng)));
  EXPECT_EQ(out.beta.at(0, 0), 1.0);
  EXPECT_EQ(out.beta.at(0, 1), 0.0);
  EXPECT_EQ(out.beta.at(0, 2), 0.0);
}

TEST(Ssa, IdenticalPositionsGiveUniformRows) {
  std::mt19937_64 rng(3);
  auto p = ssa::SsaParams<double>::init(4, rng, "ssa");
  auto row = normal_values(4, rng);
  std::vector<double> v;
  for (int i = 0; i < 5; ++i) v.insert(v.end(), row.begin(), row.end());
  auto out = ssa::ssa_forward(p, T::constant({5, 4}, v));
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c <= r; ++c) EXPECT_NEAR(out.beta.at(r, c), 1.0 / double(r + 1), 1e-12);
}

TEST(Ssa, ScaledByRootDimension) {
  // W = I, V = [[1,0],[1,1]]: row 1 logits are 1/√2 and 2/√2.
  auto out = ssa::ssa_forward(identity_params(2), T::constant({2, 2}, {1, 0, 1, 1}));
  const double l0 = 1.0 / std::sqrt(2.0), l1 = 2.0 / std::sqrt(2.0);
  const double b0 = std::exp(l0) / (std::exp(l0) + std::exp(l1));
  EXPECT_NEAR(out.beta.at(1, 0), b0, 1e-12);
  EXPECT_NEAR(out.beta.at(1, 1), 1.0 - b0, 1e-12);
  EXPECT_NEAR(out.z.at(1, 0), 1.0, 1e-12);
  EXPECT_NEAR(out.z.at(1, 1), 1.0 - b0, 1e-12);
}

TEST(Ssa, RowsSumToOneAndUpperTriangleIsZero) {
  std::mt19937_64 rng(4);
  for (std::size_t n = 1; n <= 12; ++n) {
    auto p = ssa::SsaParams<double>::init(6, rng, "ssa");
    auto out = ssa::ssa_forward(p, T::constant({n, 6}, normal_values(n * 6, rng)));
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < n; ++c) {
        s += out.beta.at(r, c);
        if (c > r) EXPECT_EQ(out.beta.at(r, c), 0.0);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Ssa, FuturePositionsDoNotLeakBackwards) {
  std::mt19937_64 rng(5);
  auto p = ssa::SsaParams<double>::init(4, rng, "ssa");
  auto v = normal_values(6 * 4, rng);
  auto base = ssa::ssa_forward(p, T::constant({6, 4}, v));
  for (std::size_t k = 16; k < 24; ++k) v[k] += 3.0;  // rows 4 and 5
  auto moved = ssa::ssa_forward(p, T::constant({6, 4}, v));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(base.z.at(r, k), moved.z.at(r, k));
  bool changed = false;
  for (std::size_t k = 0; k < 4; ++k) changed = changed || base.z.at(5, k) != moved.z.at(5, k);
  EXPECT_TRUE(changed);
}

TEST(Ssa, GradientsReachAllProjections) {
  std::mt19937_64 rng(6);
  auto p = ssa::SsaParams<double>::init(3, rng, "ssa");
  auto out = ssa::ssa_forward(p, T::constant({4, 3}, normal_values(12, rng)));
  nk::backward(nk::frobenius_norm_sq(out.z));
  for (const auto& w : {p.w_query, p.w_key, p.w_value}) {
    double mass = 0;
    for (double g : w.grad()) mass += std::abs(g);
    EXPECT_GT(mass, 0.0) << w.name();
  }
}

TEST(Ssa, DimensionMismatchAndEmptyInputAreRejected) {
  auto p = identity_params(3);
  EXPECT_THROW(ssa::ssa_forward(p, T::zeros({2, 4})), retagnn::ContractViolation);
  EXPECT_THROW(ssa::ssa_forward(p, T::zeros({0, 3})), retagnn::ContractViolation);
}

TEST(MeanAttention, AveragesElementWise) {
  auto m = ssa::mean_attention({{1, 0, 0.5, 0.5}, {1, 0, 0.25, 0.75}}, 2);
  EXPECT_EQ(m, (std::vector<double>{1, 0, 0.375, 0.625}));
  EXPECT_THROW(ssa::mean_attention({}, 2), retagnn::ContractViolation);
  EXPECT_THROW(ssa::mean_attention({{1.0}}, 2), retagnn::ContractViolation);
}

TEST(MeanAttention, KeepsCausalShapeOfInputs) {
  std::mt19937_64 rng(7);
  auto p = ssa::SsaParams<double>::init(4, rng, "ssa");
  std::vector<std::vector<double>> betas;
  for (int s = 0; s < 10; ++s) {
    auto out = ssa::ssa_forward(p, T::constant({5, 4}, normal_values(20, rng)));
    betas.emplace_back(out.beta.values().begin(), out.beta.values().end());
  }
  auto m = ssa::mean_attention(betas, 5);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      s += m[r * 5 + c];
      if (c > r) EXPECT_EQ(m[r * 5 + c], 0.0);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(WriteMatrix, OneRowPerLine) {
  std::ostringstream os;
  ssa::write_matrix(os, {1, 0, 0.25, 0.75}, 2);
  EXPECT_EQ(os.str(), "1 0\n0.25 0.75\n");
}
