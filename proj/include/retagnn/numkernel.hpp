#pragma once

// Dense reverse-mode differentiation over small row-major matrices, plus Adam.
//
// Every op records its parents and a closure that pushes the output gradient
// back into them. Node ids increase monotonically with creation, so sorting the
// reachable set by descending id is a valid reverse topological order; this
// keeps gradient accumulation order deterministic.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "retagnn/errors.hpp"

namespace retagnn::nk {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace detail {

inline std::atomic<std::uint64_t>& node_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::uint64_t id = 0;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != values.size()) {
      throw ContractViolation("tensor: shape " + shape_str(shape) + " does not match " +
                              std::to_string(values.size()) + " values");
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->id = ++detail::node_counter();
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape) {
    auto count = shape_numel(shape);
    return constant(std::move(shape), std::vector<T>(count, T(0)));
  }

  static Tensor scalar(T v) { return constant({}, {v}); }

  /// A learnable leaf. Gradients accumulate into it across backward passes.
  static Tensor parameter(Shape shape, std::vector<T> values, std::string name = {}) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    t.node_->name = std::move(name);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(1); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }

  // Spans alias the node's storage, so they are not handed out from temporaries.
  std::span<const T> values() const& { return node_->value; }
  std::span<const T> values() const&& = delete;
  std::span<T> mutable_values() {
    if (!node_->leaf) throw ContractViolation("tensor: only leaf values may be modified in place");
    return node_->value;
  }
  std::span<const T> grad() const& { return node_->grad; }
  std::span<const T> grad() const&& = delete;
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  T item() const {
    if (numel() != 1) throw ContractViolation("tensor: item() on shape " + shape_str(shape()));
    return node_->value[0];
  }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->leaf = false;
  n->id = ++node_counter();
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

template <class T>
void require_matrix(const char* op, const Tensor<T>& t) {
  if (!t.defined()) throw ContractViolation(std::string(op) + ": undefined tensor");
  if (t.rank() != 2) {
    throw ContractViolation(std::string(op) + ": expected a matrix, got shape " +
                            shape_str(t.shape()));
  }
}

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                          shape_str(b));
}

template <class T>
bool wants(const Node<T>& n, std::size_t parent) {
  return n.parents[parent]->requires_grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward ops
// ---------------------------------------------------------------------------

/// C = A B
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix("matmul", a);
  detail::require_matrix("matmul", b);
  if (a.cols() != b.rows()) detail::shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(m * n, T(0));
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = av[i * k + p];
      if (aip == T(0)) continue;
      const T* brow = &bv[p * n];
      T* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return detail::make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    const auto& g = self.grad;
    auto& A = *self.parents[0];
    auto& B = *self.parents[1];
    if (A.requires_grad) {
      auto& ga = A.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B.value[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (B.requires_grad) {
      auto& gb = B.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = A.value[i * k + p];
          if (aip == T(0)) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

/// C = A Bᵀ
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix("matmul_nt", a);
  detail::require_matrix("matmul_nt", b);
  if (a.cols() != b.cols()) detail::shape_mismatch("matmul_nt", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<T> out(m * n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[j * k + p];
      out[i * n + j] = acc;
    }
  return detail::make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    const auto& g = self.grad;
    auto& A = *self.parents[0];
    auto& B = *self.parents[1];
    if (A.requires_grad) {
      auto& ga = A.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T gij = g[i * n + j];
          if (gij == T(0)) continue;
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * B.value[j * k + p];
        }
    }
    if (B.requires_grad) {
      auto& gb = B.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T gij = g[i * n + j];
          if (gij == T(0)) continue;
          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * A.value[i * k + p];
        }
    }
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_matrix("transpose", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m * n);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return detail::make_result<T>({n, m}, std::move(out), {a}, [m, n](Node<T>& self) {
    auto& ga = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

namespace detail {

template <class T>
Tensor<T> elementwise_binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, T sign_b) {
  if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
  std::vector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + sign_b * bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [sign_b](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!self.parents[p]->requires_grad) continue;
      auto& gp = self.parents[p]->ensure_grad();
      const T s = p == 0 ? T(1) : sign_b;
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += s * self.grad[i];
    }
  });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::elementwise_binary("add", a, b, T(1));
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::elementwise_binary("sub", a, b, T(-1));
}

/// Adds a 1×n row vector to every row of an m×n matrix.
template <class T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  detail::require_matrix("add_bias", a);
  if (bias.numel() != a.cols()) detail::shape_mismatch("add_bias", a.shape(), bias.shape());
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(a.values().begin(), a.values().end());
  auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return detail::make_result<T>(a.shape(), std::move(out), {a, bias}, [m, n](Node<T>& self) {
    if (detail::wants(self, 0)) {
      auto& ga = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (detail::wants(self, 1)) {
      auto& gb = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  return detail::make_result<T>(a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    auto& ga = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * self.grad[i];
  });
}

/// Horizontal concatenation of matrices with equal row counts.
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractViolation("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix("concat_cols", p);
    if (p.rows() != m) detail::shape_mismatch("concat_cols", parts[0].shape(), p.shape());
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<T> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].values();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + offset + j] = pv[i * widths[k] + j];
    offset += widths[k];
  }
  return detail::make_result<T>({m, total}, std::move(out), parts, [m, total, widths](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (self.parents[k]->requires_grad) {
        auto& gp = self.parents[k]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] += self.grad[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

/// Vertical concatenation of matrices with equal column counts.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractViolation("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::vector<std::size_t> sizes;
  std::size_t m = 0;
  for (const auto& p : parts) {
    detail::require_matrix("concat_rows", p);
    if (p.cols() != n) detail::shape_mismatch("concat_rows", parts[0].shape(), p.shape());
    sizes.push_back(p.numel());
    m += p.rows();
  }
  std::vector<T> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return detail::make_result<T>({m, n}, std::move(out), parts, [sizes](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (self.parents[k]->requires_grad) {
        auto& gp = self.parents[k]->ensure_grad();
        for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += self.grad[off + i];
      }
      off += sizes[k];
    }
  });
}

/// Rows [begin, begin + count) of a matrix.
template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t count) {
  detail::require_matrix("slice_rows", a);
  if (begin + count > a.rows()) {
    throw ContractViolation("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                            ") out of range for shape " + shape_str(a.shape()));
  }
  const std::size_t n = a.cols();
  auto av = a.values();
  std::vector<T> out(av.begin() + static_cast<std::ptrdiff_t>(begin * n),
                     av.begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  return detail::make_result<T>({count, n}, std::move(out), {a}, [begin, n](Node<T>& self) {
    auto& ga = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[begin * n + i] += self.grad[i];
  });
}

/// Inner product of two equally shaped tensors; returns a scalar.
template <class T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("dot", a.shape(), b.shape());
  T acc = 0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  return detail::make_result<T>({}, {acc}, {a, b}, [](Node<T>& self) {
    const T g = self.grad[0];
    auto& A = *self.parents[0];
    auto& B = *self.parents[1];
    if (A.requires_grad) {
      auto& ga = A.ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * B.value[i];
    }
    if (B.requires_grad) {
      auto& gb = B.ensure_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * A.value[i];
    }
  });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& v : out)
    if (v < T(0)) v *= slope;
  return detail::make_result<T>(a.shape(), std::move(out), {a}, [slope](Node<T>& self) {
    auto& A = *self.parents[0];
    auto& ga = A.ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (A.value[i] < T(0) ? slope : T(1)) * self.grad[i];
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return leaky_relu(a, T(0));
}

/// Row-wise softmax of (logits + mask). Mask entries are 0 or -inf; a row whose
/// entries are all -inf yields an all-zero row.
template <class T>
Tensor<T> softmax_with_mask(const Tensor<T>& logits, std::span<const T> mask) {
  detail::require_matrix("softmax_with_mask", logits);
  if (mask.size() != logits.numel()) {
    throw ContractViolation("softmax_with_mask: mask has " + std::to_string(mask.size()) +
                            " entries for logits of shape " + shape_str(logits.shape()));
  }
  const std::size_t m = logits.rows(), n = logits.cols();
  auto lv = logits.values();
  std::vector<T> out(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T best = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) best = std::max(best, lv[i * n + j] + mask[i * n + j]);
    if (best == -std::numeric_limits<T>::infinity()) continue;
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const T z = lv[i * n + j] + mask[i * n + j];
      const T e = z == -std::numeric_limits<T>::infinity() ? T(0) : std::exp(z - best);
      out[i * n + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return detail::make_result<T>(logits.shape(), out, {logits}, [m, n, out](Node<T>& self) {
    auto& ga = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      T inner = 0;
      for (std::size_t j = 0; j < n; ++j) inner += self.grad[i * n + j] * out[i * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += out[i * n + j] * (self.grad[i * n + j] - inner);
    }
  });
}

/// Softmax over groups of entries: entry e belongs to group segment[e]. Input and
/// output are E×1 columns. Groups with no entries are simply absent.
template <class T>
Tensor<T> segment_softmax(const Tensor<T>& values, std::vector<std::uint32_t> segment,
                          std::size_t num_segments) {
  if (values.numel() != segment.size()) {
    throw ContractViolation("segment_softmax: " + std::to_string(segment.size()) +
                            " segment ids for shape " + shape_str(values.shape()));
  }
  auto vv = values.values();
  std::vector<T> best(num_segments, -std::numeric_limits<T>::infinity());
  for (std::size_t e = 0; e < vv.size(); ++e) {
    if (segment[e] >= num_segments) throw ContractViolation("segment_softmax: segment id out of range");
    best[segment[e]] = std::max(best[segment[e]], vv[e]);
  }
  std::vector<T> out(vv.size());
  std::vector<T> total(num_segments, T(0));
  for (std::size_t e = 0; e < vv.size(); ++e) {
    out[e] = std::exp(vv[e] - best[segment[e]]);
    total[segment[e]] += out[e];
  }
  for (std::size_t e = 0; e < vv.size(); ++e) out[e] /= total[segment[e]];
  return detail::make_result<T>(values.shape(), out, {values},
                                [out, segment = std::move(segment), num_segments](Node<T>& self) {
                                  std::vector<T> inner(num_segments, T(0));
                                  for (std::size_t e = 0; e < out.size(); ++e) inner[segment[e]] += self.grad[e] * out[e];
                                  auto& gv = self.parents[0]->ensure_grad();
                                  for (std::size_t e = 0; e < out.size(); ++e)
                                    gv[e] += out[e] * (self.grad[e] - inner[segment[e]]);
                                });
}

/// Multiplies row e of an E×d matrix by weights[e] (weights is E×1).
template <class T>
Tensor<T> scale_rows(const Tensor<T>& a, const Tensor<T>& weights) {
  detail::require_matrix("scale_rows", a);
  if (weights.numel() != a.rows()) detail::shape_mismatch("scale_rows", a.shape(), weights.shape());
  const std::size_t m = a.rows(), n = a.cols();
  auto av = a.values();
  auto wv = weights.values();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = wv[i] * av[i * n + j];
  return detail::make_result<T>(a.shape(), std::move(out), {a, weights}, [m, n](Node<T>& self) {
    auto& A = *self.parents[0];
    auto& W = *self.parents[1];
    if (A.requires_grad) {
      auto& ga = A.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += W.value[i] * self.grad[i * n + j];
    }
    if (W.requires_grad) {
      auto& gw = W.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        T acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += A.value[i * n + j] * self.grad[i * n + j];
        gw[i] += acc;
      }
    }
  });
}

/// Row r of the result is row index[r] of the input.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<std::uint32_t> index) {
  detail::require_matrix("gather_rows", a);
  const std::size_t m = a.rows(), n = a.cols();
  auto av = a.values();
  std::vector<T> out(index.size() * n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= m) {
      throw ContractViolation("gather_rows: row " + std::to_string(index[r]) + " out of range for shape " +
                              shape_str(a.shape()));
    }
    std::copy_n(&av[index[r] * n], n, &out[r * n]);
  }
  const std::size_t k = index.size();
  return detail::make_result<T>({k, n}, std::move(out), {a}, [n, index = std::move(index)](Node<T>& self) {
    auto& ga = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < index.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) ga[index[r] * n + j] += self.grad[r * n + j];
  });
}

/// Row index[e] of the num_rows×d result accumulates row e of the input.
template <class T>
Tensor<T> scatter_add_rows(const Tensor<T>& a, std::vector<std::uint32_t> index, std::size_t num_rows) {
  detail::require_matrix("scatter_add_rows", a);
  if (index.size() != a.rows()) {
    throw ContractViolation("scatter_add_rows: " + std::to_string(index.size()) + " targets for shape " +
                            shape_str(a.shape()));
  }
  const std::size_t n = a.cols();
  auto av = a.values();
  std::vector<T> out(num_rows * n, T(0));
  for (std::size_t e = 0; e < index.size(); ++e) {
    if (index[e] >= num_rows) throw ContractViolation("scatter_add_rows: target row out of range");
    for (std::size_t j = 0; j < n; ++j) out[index[e] * n + j] += av[e * n + j];
  }
  return detail::make_result<T>({num_rows, n}, std::move(out), {a}, [n, index = std::move(index)](Node<T>& self) {
    auto& ga = self.parents[0]->ensure_grad();
    for (std::size_t e = 0; e < index.size(); ++e)
      for (std::size_t j = 0; j < n; ++j) ga[e * n + j] += self.grad[index[e] * n + j];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (auto v : a.values()) acc += v;
  return detail::make_result<T>({}, {acc}, {a}, [](Node<T>& self) {
    auto& ga = self.parents[0]->ensure_grad();
    for (auto& g : ga) g += self.grad[0];
  });
}

/// Column sums of an m×n matrix, as a 1×n row.
template <class T>
Tensor<T> sum_rows(const Tensor<T>& a) {
  detail::require_matrix("sum_rows", a);
  const std::size_t m = a.rows(), n = a.cols();
  auto av = a.values();
  std::vector<T> out(n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += av[i * n + j];
  return detail::make_result<T>({1, n}, std::move(out), {a}, [m, n](Node<T>& self) {
    auto& ga = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j];
  });
}

template <class T>
Tensor<T> frobenius_norm_sq(const Tensor<T>& a) {
  T acc = 0;
  for (auto v : a.values()) acc += v * v;
  return detail::make_result<T>({}, {acc}, {a}, [](Node<T>& self) {
    auto& A = *self.parents[0];
    auto& ga = A.ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += T(2) * A.value[i] * self.grad[0];
  });
}

/// Elementwise log σ(x), computed without overflow.
template <class T>
Tensor<T> log_sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av[i];
    out[i] = std::min(x, T(0)) - std::log1p(std::exp(-std::abs(x)));
  }
  return detail::make_result<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    auto& A = *self.parents[0];
    auto& ga = A.ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const T x = A.value[i];
      // d/dx log σ(x) = σ(-x)
      const T s = x >= T(0) ? std::exp(-x) / (T(1) + std::exp(-x)) : T(1) / (T(1) + std::exp(x));
      ga[i] += s * self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

/// Accumulates d(loss)/d(leaf) into every reachable parameter leaf. A given loss
/// tensor can be differentiated once.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw ContractViolation("backward: undefined loss");
  if (loss.numel() != 1) throw ContractViolation("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  auto& root = loss.node();
  if (root->consumed) throw ContractViolation("backward: called twice on the same loss");
  if (!root->requires_grad) throw ContractViolation("backward: loss does not depend on any parameter");

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

  for (Node<T>* n : order)
    if (!n->leaf) n->grad.assign(n->value.size(), T(0));
  root->grad[0] = T(1);
  for (Node<T>* n : order) {
    if (!n->leaf && n->backward) n->backward(*n);
  }
  for (Node<T>* n : order) {
    if (!n->leaf) std::vector<T>().swap(n->grad);
  }
  root->consumed = true;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
class Adam {
 public:
  explicit Adam(std::vector<Tensor<T>> params, AdamOptions options = {})
      : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
      if (!p.requires_grad()) throw ContractViolation("adam: parameter '" + p.name() + "' is not learnable");
      first_.emplace_back(p.numel(), 0.0);
      second_.emplace_back(p.numel(), 0.0);
    }
  }

  /// Applies one bias-corrected update from the accumulated gradients. If any
  /// gradient is non-finite, nothing is modified and NumericError names the
  /// offending parameter.
  void step() {
    for (const auto& p : params_) {
      for (auto g : p.grad()) {
        if (!std::isfinite(static_cast<double>(g))) {
          throw NumericError("adam: non-finite gradient in parameter '" + p.name() + "'");
        }
      }
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.has_grad()) continue;
      auto values = p.mutable_values();
      auto grads = p.grad();
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = static_cast<double>(grads[i]);
        first_[k][i] = options_.beta1 * first_[k][i] + (1.0 - options_.beta1) * g;
        second_[k][i] = options_.beta2 * second_[k][i] + (1.0 - options_.beta2) * g * g;
        const double m_hat = first_[k][i] / c1;
        const double v_hat = second_[k][i] / c2;
        values[i] = static_cast<T>(static_cast<double>(values[i]) -
                                   options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t step_count() const { return steps_; }
  const AdamOptions& options() const { return options_; }
  std::span<const double> first_moment(std::size_t k) const { return first_.at(k); }
  std::span<const double> second_moment(std::size_t k) const { return second_.at(k); }

 private:
  std::vector<Tensor<T>> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::size_t steps_ = 0;
};

}  // namespace retagnn::nk
