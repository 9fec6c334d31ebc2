#pragma once

// Relational attentive message passing over an enclosing subgraph.
//
//   x_i' = W_o x_i + Σ_r Σ_{j ∈ Γ_r(i)} α_ij W_r x_j
//   α_ij = softmax_j( leaky_relu( aᵀ [W_o x_i ⊕ W_r x_j] ) )
//
// The softmax runs over all neighbors of i jointly, across relations.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "retagnn/graph.hpp"
#include "retagnn/numkernel.hpp"
#include "retagnn/subgraph.hpp"

namespace retagnn::ragnn {

using graph::kNumRelations;
using graph::Relation;
using nk::Tensor;

template <class T>
std::vector<T> glorot_uniform(std::size_t fan_out, std::size_t fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<T> out(fan_in * fan_out);
  for (auto& v : out) v = static_cast<T>(dist(rng));
  return out;
}

template <class T>
struct LayerParams {
  Tensor<T> w_self;                           // d×d
  std::array<Tensor<T>, kNumRelations> w_rel;  // d×d each, indexed by Relation
  Tensor<T> attention;                        // 2d×1

  std::size_t dim() const { return w_self.rows(); }

  static LayerParams init(std::size_t d, std::mt19937_64& rng, const std::string& prefix) {
    LayerParams p;
    p.w_self = Tensor<T>::parameter({d, d}, glorot_uniform<T>(d, d, rng), prefix + ".w_self");
    for (auto r : graph::kAllRelations) {
      p.w_rel[static_cast<std::size_t>(r)] =
          Tensor<T>::parameter({d, d}, glorot_uniform<T>(d, d, rng), prefix + ".w_rel." + graph::relation_name(r));
    }
    p.attention = Tensor<T>::parameter({2 * d, 1}, glorot_uniform<T>(1, 2 * d, rng), prefix + ".attention");
    return p;
  }

  void collect(std::vector<Tensor<T>>& out) const {
    out.push_back(w_self);
    for (const auto& w : w_rel) out.push_back(w);
    out.push_back(attention);
  }
};

template <class T>
struct Stack {
  std::vector<LayerParams<T>> layers;

  std::size_t depth() const { return layers.size(); }

  static Stack init(std::size_t depth, std::size_t d, std::mt19937_64& rng, const std::string& prefix) {
    if (depth == 0) throw ContractViolation("ragnn: stack depth must be at least 1");
    Stack s;
    for (std::size_t l = 0; l < depth; ++l) s.layers.push_back(LayerParams<T>::init(d, rng, prefix + ".layer" + std::to_string(l)));
    return s;
  }

  void collect(std::vector<Tensor<T>>& out) const {
    for (const auto& l : layers) l.collect(out);
  }
};

struct ForwardOptions {
  double leaky_slope = 0.2;
  bool relational_attention = true;    // false: α_ij = 1 / |neighbors(i)|
  bool inter_layer_activation = false;  // leaky_relu between layers (not after the last)
};

// ---------------------------------------------------------------------------
// Attention weights for a single node (plain arithmetic, used for inspection)
// ---------------------------------------------------------------------------

/// α for node i over `neighbors` = (relation, x_j) pairs, normalized jointly.
template <class T>
std::vector<T> attention_weights(const LayerParams<T>& layer, std::span<const T> x_i,
                                 const std::vector<std::pair<Relation, std::vector<T>>>& neighbors,
                                 double leaky_slope = 0.2) {
  const std::size_t d = layer.dim();
  auto transform = [d](const Tensor<T>& w, std::span<const T> x) {
    std::vector<T> y(d, T(0));
    auto wv = w.values();
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) y[r] += wv[r * d + c] * x[c];
    return y;
  };
  auto a = layer.attention.values();
  const auto self = transform(layer.w_self, x_i);
  T self_score = 0;
  for (std::size_t k = 0; k < d; ++k) self_score += a[k] * self[k];
  std::vector<T> logits;
  for (const auto& [r, x_j] : neighbors) {
    const auto msg = transform(layer.w_rel[static_cast<std::size_t>(r)], x_j);
    T z = self_score;
    for (std::size_t k = 0; k < d; ++k) z += a[d + k] * msg[k];
    logits.push_back(z < T(0) ? static_cast<T>(leaky_slope) * z : z);
  }
  if (logits.empty()) return {};
  const T best = *std::max_element(logits.begin(), logits.end());
  T total = 0;
  for (auto& z : logits) total += (z = std::exp(z - best));
  for (auto& z : logits) z /= total;
  return logits;
}

// ---------------------------------------------------------------------------
// Propagation plan
// ---------------------------------------------------------------------------

/// Index bookkeeping for one layer: which input rows produce outputs, and the
/// edges grouped by relation.
struct LayerPlan {
  std::vector<std::uint32_t> out_rows;  // positions in the layer input
  bool identity_rows = false;           // out_rows == 0..n-1
  std::array<std::vector<std::uint32_t>, kNumRelations> sources;      // unique neighbor input positions
  std::array<std::vector<std::uint32_t>, kNumRelations> edge_target;  // output position per edge
  std::array<std::vector<std::uint32_t>, kNumRelations> edge_source;  // index into sources[r] per edge
  std::vector<std::uint32_t> degree;                                  // per output row

  std::size_t edge_count() const {
    std::size_t n = 0;
    for (const auto& e : edge_target) n += e.size();
    return n;
  }
};

/// rows[l] lists the subgraph-local nodes whose embeddings exist at layer l;
/// rows[depth] are the requested outputs. Only nodes that can influence the
/// outputs are computed.
struct PropagationPlan {
  std::vector<std::vector<std::uint32_t>> rows;
  std::vector<LayerPlan> layers;

  std::span<const std::uint32_t> inputs() const { return rows.front(); }
  std::span<const std::uint32_t> outputs() const { return rows.back(); }
};

/// `outputs` empty means every subgraph node, in local order.
inline PropagationPlan make_plan(const subgraph::EnclosingSubgraph& sg, std::size_t depth,
                                 std::span<const std::uint32_t> outputs = {}) {
  if (depth == 0) throw ContractViolation("ragnn: plan depth must be at least 1");
  PropagationPlan plan;
  plan.rows.resize(depth + 1);
  auto& last = plan.rows[depth];
  if (outputs.empty()) {
    last.resize(sg.size());
    for (std::uint32_t i = 0; i < sg.size(); ++i) last[i] = i;
  } else {
    last.assign(outputs.begin(), outputs.end());
    std::sort(last.begin(), last.end());
    last.erase(std::unique(last.begin(), last.end()), last.end());
  }
  std::vector<char> mark(sg.size(), 0);
  for (std::size_t l = depth; l > 0; --l) {
    auto& need = plan.rows[l - 1];
    std::fill(mark.begin(), mark.end(), 0);
    for (auto i : plan.rows[l]) {
      mark[i] = 1;
      for (const auto& e : sg.edges_of(i)) mark[e.neighbor] = 1;
    }
    for (std::uint32_t i = 0; i < sg.size(); ++i)
      if (mark[i]) need.push_back(i);
  }

  std::vector<std::uint32_t> pos(sg.size(), 0);
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& in = plan.rows[l];
    const auto& out = plan.rows[l + 1];
    for (std::uint32_t p = 0; p < in.size(); ++p) pos[in[p]] = p;
    LayerPlan lp;
    lp.identity_rows = in.size() == out.size();
    lp.degree.assign(out.size(), 0);
    std::array<std::vector<std::uint32_t>, kNumRelations> source_slot;
    for (auto& s : source_slot) s.assign(in.size(), static_cast<std::uint32_t>(-1));
    for (std::uint32_t o = 0; o < out.size(); ++o) {
      lp.out_rows.push_back(pos[out[o]]);
      for (const auto& e : sg.edges_of(out[o])) {
        const auto r = static_cast<std::size_t>(e.relation);
        const auto src = pos[e.neighbor];
        if (source_slot[r][src] == static_cast<std::uint32_t>(-1)) {
          source_slot[r][src] = static_cast<std::uint32_t>(lp.sources[r].size());
          lp.sources[r].push_back(src);
        }
        lp.edge_target[r].push_back(o);
        lp.edge_source[r].push_back(source_slot[r][src]);
        ++lp.degree[o];
      }
    }
    plan.layers.push_back(std::move(lp));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

/// One layer: `input` rows follow the plan's layer input; the result rows
/// follow its outputs.
template <class T>
Tensor<T> layer_forward(const LayerParams<T>& layer, const LayerPlan& plan, const Tensor<T>& input,
                        const ForwardOptions& options = {}) {
  const std::size_t d = layer.dim();
  const std::size_t n_out = plan.out_rows.size();
  Tensor<T> self_in = plan.identity_rows ? input : nk::gather_rows(input, plan.out_rows);
  Tensor<T> self_tr = nk::matmul_nt(self_in, layer.w_self);
  if (plan.edge_count() == 0) return self_tr;

  Tensor<T> self_score;
  Tensor<T> attn_tail;
  if (options.relational_attention) {
    self_score = nk::matmul(self_tr, nk::slice_rows(layer.attention, 0, d));
    attn_tail = nk::slice_rows(layer.attention, d, d);
  }
  std::vector<Tensor<T>> messages;
  std::vector<Tensor<T>> logits;
  std::vector<std::uint32_t> targets;
  for (std::size_t r = 0; r < kNumRelations; ++r) {
    if (plan.edge_target[r].empty()) continue;
    Tensor<T> transformed = nk::matmul_nt(nk::gather_rows(input, plan.sources[r]), layer.w_rel[r]);
    messages.push_back(nk::gather_rows(transformed, plan.edge_source[r]));
    if (options.relational_attention) {
      Tensor<T> src_score = nk::matmul(transformed, attn_tail);
      logits.push_back(nk::add(nk::gather_rows(self_score, plan.edge_target[r]),
                               nk::gather_rows(src_score, plan.edge_source[r])));
    }
    targets.insert(targets.end(), plan.edge_target[r].begin(), plan.edge_target[r].end());
  }
  Tensor<T> all_messages = messages.size() == 1 ? messages[0] : nk::concat_rows(messages);
  Tensor<T> alpha;
  if (options.relational_attention) {
    Tensor<T> z = nk::leaky_relu(logits.size() == 1 ? logits[0] : nk::concat_rows(logits),
                                 static_cast<T>(options.leaky_slope));
    alpha = nk::segment_softmax(z, targets, n_out);
  } else {
    std::vector<T> w(targets.size());
    for (std::size_t e = 0; e < targets.size(); ++e) w[e] = T(1) / static_cast<T>(plan.degree[targets[e]]);
    alpha = Tensor<T>::constant({targets.size(), 1}, std::move(w));
  }
  Tensor<T> aggregated = nk::scatter_add_rows(nk::scale_rows(all_messages, alpha), std::move(targets), n_out);
  return nk::add(self_tr, aggregated);
}

/// Applies every layer of the stack. `input` rows follow plan.inputs(); the
/// result rows follow plan.outputs().
template <class T>
Tensor<T> stack_forward(const Stack<T>& stack, const PropagationPlan& plan, const Tensor<T>& input,
                        const ForwardOptions& options = {}) {
  if (plan.layers.size() != stack.depth()) {
    throw ContractViolation("ragnn: plan depth " + std::to_string(plan.layers.size()) + " vs stack depth " +
                            std::to_string(stack.depth()));
  }
  if (input.rows() != plan.inputs().size()) {
    throw ContractViolation("ragnn: input has " + std::to_string(input.rows()) + " rows, plan expects " +
                            std::to_string(plan.inputs().size()));
  }
  Tensor<T> h = input;
  for (std::size_t l = 0; l < stack.depth(); ++l) {
    h = layer_forward(stack.layers[l], plan.layers[l], h, options);
    if (options.inter_layer_activation && l + 1 < stack.depth()) h = nk::leaky_relu(h, static_cast<T>(options.leaky_slope));
  }
  return h;
}

/// Full single-layer update of every subgraph node; `x` has one row per local node.
template <class T>
Tensor<T> layer_forward(const LayerParams<T>& layer, const subgraph::EnclosingSubgraph& sg, const Tensor<T>& x,
                        const ForwardOptions& options = {}) {
  auto plan = make_plan(sg, 1);
  return layer_forward(layer, plan.layers[0], x, options);
}

/// Full stack over every subgraph node; `x` has one row per local node.
template <class T>
Tensor<T> stack_forward(const Stack<T>& stack, const subgraph::EnclosingSubgraph& sg, const Tensor<T>& x,
                        const ForwardOptions& options = {}) {
  auto plan = make_plan(sg, stack.depth());
  return stack_forward(stack, plan, x, options);
}

/// Σ_r Σ_l ‖W_r^{l+1} − W_r^l‖²_F over adjacent layers of one stack.
template <class T>
Tensor<T> relation_smoothness(const Stack<T>& stack) {
  std::vector<Tensor<T>> terms;
  for (std::size_t l = 0; l + 1 < stack.depth(); ++l)
    for (std::size_t r = 0; r < kNumRelations; ++r)
      terms.push_back(nk::frobenius_norm_sq(nk::sub(stack.layers[l + 1].w_rel[r], stack.layers[l].w_rel[r])));
  if (terms.empty()) return Tensor<T>::scalar(T(0));
  Tensor<T> total = terms[0];
  for (std::size_t k = 1; k < terms.size(); ++k) total = nk::add(total, terms[k]);
  return total;
}

}  // namespace retagnn::ragnn
