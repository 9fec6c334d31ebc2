#pragma once

// Causal scaled dot-product self-attention over a session's item embeddings.
// Row p of β is the attending position, column q the attended one; p may see
// q ≤ p only.

#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "retagnn/numkernel.hpp"
#include "retagnn/ragnn.hpp"

namespace retagnn::ssa {

using nk::Tensor;

template <class T>
struct SsaParams {
  Tensor<T> w_query;  // d×d
  Tensor<T> w_key;
  Tensor<T> w_value;

  std::size_t dim() const { return w_query.rows(); }

  static SsaParams init(std::size_t d, std::mt19937_64& rng, const std::string& prefix) {
    SsaParams p;
    p.w_query = Tensor<T>::parameter({d, d}, ragnn::glorot_uniform<T>(d, d, rng), prefix + ".w_query");
    p.w_key = Tensor<T>::parameter({d, d}, ragnn::glorot_uniform<T>(d, d, rng), prefix + ".w_key");
    p.w_value = Tensor<T>::parameter({d, d}, ragnn::glorot_uniform<T>(d, d, rng), prefix + ".w_value");
    return p;
  }

  void collect(std::vector<Tensor<T>>& out) const {
    out.push_back(w_query);
    out.push_back(w_key);
    out.push_back(w_value);
  }
};

/// T×T row-major: 0 where q ≤ p, -inf elsewhere.
template <class T>
std::vector<T> causal_mask(std::size_t n) {
  std::vector<T> m(n * n, T(0));
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = p + 1; q < n; ++q) m[p * n + q] = -std::numeric_limits<T>::infinity();
  return m;
}

template <class T>
struct SsaOutput {
  Tensor<T> z;     // T×d
  Tensor<T> beta;  // T×T
};

/// Z = softmax((V W_q)(V W_k)ᵀ / √d + mask) (V W_v). Weights act on the
/// right of row vectors, matching the row-per-position layout.
template <class T>
SsaOutput<T> ssa_forward(const SsaParams<T>& params, const Tensor<T>& v_seq) {
  nk::detail::require_matrix("ssa_forward", v_seq);
  const std::size_t n = v_seq.rows();
  if (n == 0) throw ContractViolation("ssa_forward: empty sequence");
  const std::size_t d = params.dim();
  if (v_seq.cols() != d) nk::detail::shape_mismatch("ssa_forward", v_seq.shape(), params.w_query.shape());
  auto q = nk::matmul(v_seq, params.w_query);
  auto k = nk::matmul(v_seq, params.w_key);
  auto v = nk::matmul(v_seq, params.w_value);
  auto logits = nk::scale(nk::matmul_nt(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  const auto mask = causal_mask<T>(n);
  auto beta = nk::softmax_with_mask(logits, std::span<const T>(mask));
  return {nk::matmul(beta, v), beta};
}

/// Element-wise mean of equally sized attention matrices (plain row-major).
inline std::vector<double> mean_attention(const std::vector<std::vector<double>>& betas, std::size_t n) {
  if (betas.empty()) throw ContractViolation("mean_attention: no attention matrices");
  std::vector<double> mean(n * n, 0.0);
  for (const auto& b : betas) {
    if (b.size() != n * n) throw ContractViolation("mean_attention: sessions must all have the same length");
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += b[i];
  }
  for (auto& x : mean) x /= static_cast<double>(betas.size());
  return mean;
}

/// One row per line, space-separated.
inline void write_matrix(std::ostream& os, const std::vector<double>& m, std::size_t n) {
  const auto flags = os.flags();
  const auto precision = os.precision();
  os << std::setprecision(9);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) os << (q ? " " : "") << m[p * n + q];
    os << '\n';
  }
  os.flags(flags);
  os.precision(precision);
}

}  // namespace retagnn::ssa
