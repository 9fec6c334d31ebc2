#pragma once

// Full model: primitive embeddings → long/short RA-GNN → SSA → fusion FFNs,
// the bilinear scorer, the training objective and checkpoint I/O.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "retagnn/errors.hpp"
#include "retagnn/graph.hpp"
#include "retagnn/ingest.hpp"
#include "retagnn/numkernel.hpp"
#include "retagnn/ragnn.hpp"
#include "retagnn/ssa.hpp"
#include "retagnn/subgraph.hpp"

namespace retagnn::model {

using graph::NodeKind;
using graph::NodeRef;
using ingest::TrainingSample;
using ingest::Window;
using nk::Tensor;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct Ablation {
  bool no_ragnn = false;
  bool no_attrs = false;
  bool no_rar = false;
  bool no_rel_attention = false;
  bool no_ssa = false;
  bool no_short = false;
  bool no_long = false;

  static constexpr std::array<std::string_view, 7> kNames = {"no_ragnn", "no_attrs",  "no_rar",  "no_rel_attention",
                                                             "no_ssa",   "no_short",  "no_long"};

  bool& flag(std::string_view name) {
    bool* flags[] = {&no_ragnn, &no_attrs, &no_rar, &no_rel_attention, &no_ssa, &no_short, &no_long};
    for (std::size_t k = 0; k < kNames.size(); ++k)
      if (kNames[k] == name) return *flags[k];
    throw ConfigError("unknown ablation '" + std::string(name) + "'");
  }
  bool flag(std::string_view name) const { return const_cast<Ablation*>(this)->flag(name); }

  static Ablation only(std::string_view name) {
    Ablation a;
    a.flag(name) = true;
    return a;
  }

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct ModelConfig {
  std::size_t dim = 32;
  std::size_t t = 11;
  std::size_t g = 3;
  std::size_t hops = 2;
  std::size_t tau = 4;
  std::size_t long_layers = 2;
  std::size_t short_layers = 3;
  double lambda = 0.6;
  double eta = 1e-5;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  double leaky_slope = 0.2;
  bool inter_layer_activation = false;
  std::size_t max_nodes_per_hop = 0;
  Ablation ablation;

  std::size_t pi() const { return (t + tau - 1) / tau; }
  double effective_lambda() const { return ablation.no_rar ? 0.0 : lambda; }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(dim, "dim");
    positive(g, "g");
    positive(hops, "h");
    positive(tau, "tau");
    positive(long_layers, "long_layers");
    positive(short_layers, "short_layers");
    positive(batch_size, "batch_size");
    if (t < 2) throw ConfigError("t must be at least 2");
    if (!(lambda >= 0.0) || !(eta >= 0.0)) throw ConfigError("lambda and eta must be non-negative");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must lie in [0, 1)");
    if (ablation.no_short && ablation.no_long) throw ConfigError("no_short and no_long cannot both be set");
  }

  ragnn::ForwardOptions forward_options() const {
    return {leaky_slope, !ablation.no_rel_attention, inter_layer_activation};
  }
};

/// Consecutive τ-length windows over a length-t history; the last may be short.
inline std::vector<Window> subsessions(std::size_t t, std::size_t tau) {
  if (tau == 0) throw ContractViolation("subsessions: tau must be positive");
  std::vector<Window> out;
  for (std::size_t b = 0; b < t; b += tau) out.push_back({b, std::min(b + tau, t)});
  return out;
}

/// Independent stream seeds from one master seed (splitmix64 finalizer).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) {
  std::uint64_t h = mix64(master);
  for (unsigned char c : stream) h = mix64(h ^ c);
  return h;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// x ↦ W2 leaky(W1 x + b1) + b2, applied row-wise.
template <class T>
struct FeedForward {
  Tensor<T> w1, b1, w2, b2;

  static FeedForward init(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng,
                          const std::string& prefix) {
    FeedForward f;
    f.w1 = Tensor<T>::parameter({hidden, in}, ragnn::glorot_uniform<T>(hidden, in, rng), prefix + ".w1");
    f.b1 = Tensor<T>::parameter({1, hidden}, std::vector<T>(hidden, T(0)), prefix + ".b1");
    f.w2 = Tensor<T>::parameter({out, hidden}, ragnn::glorot_uniform<T>(out, hidden, rng), prefix + ".w2");
    f.b2 = Tensor<T>::parameter({1, out}, std::vector<T>(out, T(0)), prefix + ".b2");
    return f;
  }

  Tensor<T> forward(const Tensor<T>& x, double slope) const {
    auto hidden = nk::leaky_relu(nk::add_bias(nk::matmul_nt(x, w1), b1), static_cast<T>(slope));
    return nk::add_bias(nk::matmul_nt(hidden, w2), b2);
  }

  void collect(std::vector<Tensor<T>>& out) const { out.insert(out.end(), {w1, b1, w2, b2}); }
};

/// Θ. No shape here depends on the number of users, items or attributes.
template <class T>
struct ParamSet {
  FeedForward<T> embed_ffn;
  ragnn::Stack<T> long_stack;
  ragnn::Stack<T> short_stack;
  ssa::SsaParams<T> long_ssa;
  ssa::SsaParams<T> short_ssa;
  FeedForward<T> user_ffn;
  FeedForward<T> item_ffn;

  static ParamSet init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const std::size_t d = config.dim;
    const std::size_t fused = d * (1 + config.pi());
    std::mt19937_64 rng(derive_seed(seed, "params"));
    ParamSet p;
    p.embed_ffn = FeedForward<T>::init(d, d, d, rng, "embed_ffn");
    p.long_stack = ragnn::Stack<T>::init(config.long_layers, d, rng, "long_ragnn");
    p.short_stack = ragnn::Stack<T>::init(config.short_layers, d, rng, "short_ragnn");
    p.long_ssa = ssa::SsaParams<T>::init(d, rng, "long_ssa");
    p.short_ssa = ssa::SsaParams<T>::init(d, rng, "short_ssa");
    p.user_ffn = FeedForward<T>::init(fused, d, d, rng, "user_ffn");
    p.item_ffn = FeedForward<T>::init(fused, d, d, rng, "item_ffn");
    return p;
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    embed_ffn.collect(out);
    long_stack.collect(out);
    short_stack.collect(out);
    long_ssa.collect(out);
    short_ssa.collect(out);
    user_ffn.collect(out);
    item_ffn.collect(out);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.numel();
    return n;
  }

  std::vector<std::vector<T>> snapshot() const {
    std::vector<std::vector<T>> out;
    for (const auto& t : tensors()) out.emplace_back(t.values().begin(), t.values().end());
    return out;
  }

  void restore(const std::vector<std::vector<T>>& values) {
    auto all = tensors();
    if (values.size() != all.size()) throw ContractViolation("ParamSet::restore: tensor count mismatch");
    for (std::size_t k = 0; k < all.size(); ++k) {
      if (values[k].size() != all[k].numel()) throw ContractViolation("ParamSet::restore: size mismatch for " + all[k].name());
      std::copy(values[k].begin(), values[k].end(), all[k].mutable_values().begin());
    }
  }

  /// Fresh embed_ffn weights from `seed`, everything else untouched.
  void reinit_embed_ffn(const ModelConfig& config, std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "embed_ffn"));
    auto fresh = FeedForward<T>::init(config.dim, config.dim, config.dim, rng, "embed_ffn");
    std::vector<Tensor<T>> src, dst;
    fresh.collect(src);
    embed_ffn.collect(dst);
    for (std::size_t k = 0; k < src.size(); ++k)
      std::copy(src[k].values().begin(), src[k].values().end(), dst[k].mutable_values().begin());
  }
};

// ---------------------------------------------------------------------------
// Primitive embeddings
// ---------------------------------------------------------------------------

/// Frozen base vectors, one per (kind, index), generated on demand from a seed.
/// Any node, seen or not, gets a vector.
class PrimitiveEmbeddings {
 public:
  /// Entries are uniform in [-half_range, half_range].
  PrimitiveEmbeddings(std::uint64_t seed, std::size_t dim, double half_range = 0.5)
      : seed_(seed), dim_(dim), half_(half_range) {
    if (!(half_range > 0.0)) throw ConfigError("primitive range must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  double half_range() const { return half_; }

  template <class T>
  void fill(NodeRef n, std::span<T> out) const {
    const double half = half_;
    std::uint64_t state = mix64(seed_ ^ mix64((static_cast<std::uint64_t>(n.kind) << 32) | n.index));
    for (std::size_t k = 0; k < dim_; ++k) {
      state = mix64(state);
      const double u = static_cast<double>(state >> 11) * 0x1.0p-53;
      out[k] = static_cast<T>((2.0 * u - 1.0) * half);
    }
  }

  template <class T>
  std::vector<T> base(NodeRef n) const {
    std::vector<T> v(dim_);
    fill<T>(n, v);
    return v;
  }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
  double half_;
};

/// embed_ffn outputs for a fixed node set, one row per node.
template <class T>
struct PrimitiveTable {
  Tensor<T> x;
  std::vector<NodeRef> nodes;
  std::unordered_map<std::uint64_t, std::uint32_t> index;

  std::uint32_t row(NodeRef n) const {
    auto it = index.find(subgraph::node_key(n));
    if (it == index.end()) throw ContractViolation("primitive table has no row for " + graph::to_string(n));
    return it->second;
  }

  std::vector<std::uint32_t> rows(std::span<const NodeRef> ns) const {
    std::vector<std::uint32_t> out;
    out.reserve(ns.size());
    for (auto n : ns) out.push_back(row(n));
    return out;
  }

  std::vector<std::uint32_t> item_rows(std::span<const std::uint32_t> items) const {
    std::vector<std::uint32_t> out;
    out.reserve(items.size());
    for (auto v : items) out.push_back(row(graph::item_node(v)));
    return out;
  }
};

template <class T>
PrimitiveTable<T> make_table(const ParamSet<T>& params, const PrimitiveEmbeddings& prims, std::vector<NodeRef> nodes,
                             double leaky_slope) {
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  const std::size_t d0 = prims.dim();
  std::vector<T> base(nodes.size() * d0);
  PrimitiveTable<T> table;
  for (std::size_t r = 0; r < nodes.size(); ++r) {
    prims.fill<T>(nodes[r], std::span<T>(base).subspan(r * d0, d0));
    table.index.emplace(subgraph::node_key(nodes[r]), static_cast<std::uint32_t>(r));
  }
  table.x = params.embed_ffn.forward(Tensor<T>::constant({nodes.size(), d0}, std::move(base)), leaky_slope);
  table.nodes = std::move(nodes);
  return table;
}

// ---------------------------------------------------------------------------
// Graph context
// ---------------------------------------------------------------------------

/// Everything the RA-GNN needs for one (sample, window slot): the global nodes
/// feeding layer 0, the pruned propagation plan, and where the user and each
/// session item land in the plan outputs.
struct PreparedSession {
  std::uint32_t user = 0;
  Window window;
  std::vector<NodeRef> inputs;
  ragnn::PropagationPlan plan;
  std::uint32_t user_out = 0;
  std::vector<std::uint32_t> item_out;  // one per session position
  std::size_t subgraph_nodes = 0;
  std::size_t subgraph_edges = 0;
};

/// Window graphs and per-sample subgraph plans. Graphs are built from the
/// train-split samples handed in at construction; the scored user's own
/// session edges are injected during extraction. Read-mostly and safe to
/// share between evaluation threads.
class GraphContext {
 public:
  GraphContext(std::vector<TrainingSample> graph_samples, const ingest::Catalog& catalog, const ModelConfig& config,
               bool use_attributes = true, std::ostream* warn = nullptr)
      : samples_(std::move(graph_samples)),
        catalog_(catalog),
        config_(config),
        attributes_(use_attributes && !config.ablation.no_attrs && catalog.has_attributes()),
        warn_(warn) {
    std::erase_if(samples_, [](const TrainingSample& s) { return s.split != ingest::Split::train; });
  }

  const ModelConfig& config() const { return config_; }
  const ingest::Catalog& catalog() const { return catalog_; }
  bool attributes() const { return attributes_; }
  const std::vector<TrainingSample>& graph_samples() const { return samples_; }

  std::shared_ptr<const graph::TripartiteGraph> graph(Window w) {
    {
      std::shared_lock lock(mutex_);
      auto it = graphs_.find(w);
      if (it != graphs_.end()) return it->second;
    }
    auto g = std::make_shared<const graph::TripartiteGraph>(graph::build_graph(samples_, catalog_, w, attributes_, warn_));
    std::unique_lock lock(mutex_);
    return graphs_.try_emplace(w, std::move(g)).first->second;
  }

  /// Slot 0 is the long-term window, slot j ≥ 1 the j-th subsession.
  std::shared_ptr<const PreparedSession> prepare(const TrainingSample& sample, std::size_t slot) {
    const auto key = std::make_pair(sample.id, slot);
    {
      std::shared_lock lock(mutex_);
      auto it = sessions_.find(key);
      if (it != sessions_.end()) {
        check_hit(*it->second, sample, slot);
        return it->second;
      }
    }
    auto built = std::make_shared<const PreparedSession>(build(sample, slot));
    std::unique_lock lock(mutex_);
    return sessions_.try_emplace(key, std::move(built)).first->second;
  }

  Window slot_window(const TrainingSample& sample, std::size_t slot) const {
    if (slot == 0) return sample.window;
    const auto sub = subsessions(sample.history.size(), config_.tau).at(slot - 1);
    return {sample.window.begin + sub.begin, sample.window.begin + sub.end};
  }

  void clear_cache() {
    std::unique_lock lock(mutex_);
    sessions_.clear();
  }

 private:
  void check_hit(const PreparedSession& p, const TrainingSample& s, std::size_t slot) const {
    if (p.user != s.user || p.window != slot_window(s, slot)) {
      throw ContractViolation("graph context: sample id " + std::to_string(s.id) + " reused for a different sample");
    }
  }

  PreparedSession build(const TrainingSample& sample, std::size_t slot) {
    const Window w = slot_window(sample, slot);
    const std::size_t offset = w.begin - sample.window.begin;
    std::span<const std::uint32_t> items(sample.history.data() + offset, w.size());
    auto g = graph(w);
    auto sg = subgraph::extract_for_session(*g, sample.user, items, config_.hops, config_.max_nodes_per_hop);

    std::vector<std::uint32_t> outputs;
    PreparedSession p;
    p.user = sample.user;
    p.window = w;
    p.subgraph_nodes = sg.size();
    p.subgraph_edges = sg.edges.size();
    const std::uint32_t user_local = *sg.local_of(graph::user_node(sample.user));
    outputs.push_back(user_local);
    std::vector<std::uint32_t> item_locals;
    for (auto v : items) {
      item_locals.push_back(*sg.local_of(graph::item_node(v)));
      outputs.push_back(item_locals.back());
    }
    const std::size_t depth = slot == 0 ? config_.long_layers : config_.short_layers;
    p.plan = ragnn::make_plan(sg, depth, outputs);
    const auto& out = p.plan.rows.back();
    auto position = [&out](std::uint32_t local) {
      return static_cast<std::uint32_t>(std::lower_bound(out.begin(), out.end(), local) - out.begin());
    };
    p.user_out = position(user_local);
    for (auto l : item_locals) p.item_out.push_back(position(l));
    for (auto l : p.plan.rows.front()) p.inputs.push_back(sg.local_to_global[l]);
    return p;
  }

  std::vector<TrainingSample> samples_;
  const ingest::Catalog& catalog_;
  ModelConfig config_;
  bool attributes_;
  std::ostream* warn_;
  std::shared_mutex mutex_;
  std::map<Window, std::shared_ptr<const graph::TripartiteGraph>> graphs_;
  std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const PreparedSession>> sessions_;
};

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

template <class T>
struct SampleEmbedding {
  Tensor<T> user;   // 1×d, ũ
  Tensor<T> items;  // t×d, ṽ_1..ṽ_t
  Tensor<T> long_beta;                // t×t, undefined when SSA or the long part is ablated
  std::vector<Tensor<T>> short_betas;  // per subsession

  /// ũ + Σ_i ṽ_i, so that ŷ_v = query · x_v.
  Tensor<T> query() const { return nk::add(user, nk::sum_rows(items)); }
};

/// Global nodes whose primitive rows embed_sample will read.
inline std::vector<NodeRef> required_nodes(GraphContext& ctx, const TrainingSample& sample) {
  const auto& config = ctx.config();
  std::vector<NodeRef> out{graph::user_node(sample.user)};
  for (auto v : sample.history) out.push_back(graph::item_node(v));
  if (config.ablation.no_ragnn) return out;
  const std::size_t slots = 1 + config.pi();
  for (std::size_t slot = 0; slot < slots; ++slot) {
    if (slot == 0 ? config.ablation.no_long : config.ablation.no_short) continue;
    auto p = ctx.prepare(sample, slot);
    out.insert(out.end(), p->inputs.begin(), p->inputs.end());
  }
  return out;
}

template <class T>
SampleEmbedding<T> embed_sample(const ParamSet<T>& params, GraphContext& ctx, const PrimitiveTable<T>& table,
                                const TrainingSample& sample) {
  const auto& config = ctx.config();
  const std::size_t d = config.dim;
  const std::size_t t = sample.history.size();
  if (t != config.t) {
    throw ContractViolation("embed_sample: history length " + std::to_string(t) + " vs t=" + std::to_string(config.t));
  }
  const auto subs = subsessions(t, config.tau);
  const auto options = config.forward_options();
  const auto& ab = config.ablation;

  // (user row, session item rows) after the RA-GNN for one slot.
  auto propagate = [&](std::size_t slot, const ragnn::Stack<T>& stack,
                       std::span<const std::uint32_t> items) -> std::pair<Tensor<T>, Tensor<T>> {
    if (ab.no_ragnn) {
      return {nk::gather_rows(table.x, {table.row(graph::user_node(sample.user))}),
              nk::gather_rows(table.x, table.item_rows(items))};
    }
    auto p = ctx.prepare(sample, slot);
    auto h = ragnn::stack_forward(stack, p->plan, nk::gather_rows(table.x, table.rows(p->inputs)), options);
    return {nk::gather_rows(h, {p->user_out}), nk::gather_rows(h, p->item_out)};
  };
  auto attend = [&](const ssa::SsaParams<T>& sp, const Tensor<T>& seq, Tensor<T>* beta) {
    if (ab.no_ssa) return seq;
    auto out = ssa::ssa_forward(sp, seq);
    if (beta) *beta = out.beta;
    return out.z;
  };

  SampleEmbedding<T> emb;
  std::vector<Tensor<T>> user_parts;
  std::vector<Tensor<T>> item_parts;
  if (ab.no_long) {
    user_parts.push_back(Tensor<T>::zeros({1, d}));
    item_parts.push_back(Tensor<T>::zeros({t, d}));
  } else {
    auto [u, v] = propagate(0, params.long_stack, sample.history);
    user_parts.push_back(u);
    item_parts.push_back(attend(params.long_ssa, v, &emb.long_beta));
  }
  for (std::size_t j = 0; j < subs.size(); ++j) {
    const auto& w = subs[j];
    if (ab.no_short) {
      user_parts.push_back(Tensor<T>::zeros({1, d}));
      item_parts.push_back(Tensor<T>::zeros({t, d}));
      continue;
    }
    std::span<const std::uint32_t> items(sample.history.data() + w.begin, w.size());
    auto [u, v] = propagate(j + 1, params.short_stack, items);
    user_parts.push_back(u);
    Tensor<T> beta;
    auto z = attend(params.short_ssa, v, &beta);
    if (beta.defined()) emb.short_betas.push_back(beta);
    // Items outside subsession j contribute zeros to slot j.
    std::vector<Tensor<T>> column;
    if (w.begin > 0) column.push_back(Tensor<T>::zeros({w.begin, d}));
    column.push_back(z);
    if (w.end < t) column.push_back(Tensor<T>::zeros({t - w.end, d}));
    item_parts.push_back(column.size() == 1 ? column[0] : nk::concat_rows(column));
  }
  emb.user = params.user_ffn.forward(nk::concat_cols(user_parts), config.leaky_slope);
  emb.items = params.item_ffn.forward(nk::concat_cols(item_parts), config.leaky_slope);
  return emb;
}

/// ŷ for each candidate row of the table: 1×|candidates|.
template <class T>
Tensor<T> score(const SampleEmbedding<T>& emb, const PrimitiveTable<T>& table, std::span<const std::uint32_t> items) {
  return nk::matmul_nt(emb.query(), nk::gather_rows(table.x, table.item_rows(items)));
}

/// ŷ = ũ·x + Σ_i ṽ_i·x on plain vectors.
template <class T>
T score_plain(std::span<const T> user, const std::vector<std::vector<T>>& items, std::span<const T> x) {
  T s = 0;
  for (std::size_t k = 0; k < x.size(); ++k) s += user[k] * x[k];
  for (const auto& v : items)
    for (std::size_t k = 0; k < x.size(); ++k) s += v[k] * x[k];
  return s;
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

/// Σ −log σ(pos − neg) over paired entries.
template <class T>
Tensor<T> bpr_term(const Tensor<T>& pos, const Tensor<T>& neg) {
  return nk::scale(nk::sum(nk::log_sigmoid(nk::sub(pos, neg))), T(-1));
}

template <class T>
Tensor<T> rar_term(const ParamSet<T>& params) {
  return nk::add(ragnn::relation_smoothness(params.long_stack), ragnn::relation_smoothness(params.short_stack));
}

template <class T>
Tensor<T> l2_term(const ParamSet<T>& params) {
  auto all = params.tensors();
  Tensor<T> total = nk::frobenius_norm_sq(all[0]);
  for (std::size_t k = 1; k < all.size(); ++k) total = nk::add(total, nk::frobenius_norm_sq(all[k]));
  return total;
}

/// One sample with its positive targets and the negatives paired to them.
struct Triple {
  const TrainingSample* sample = nullptr;
  std::vector<std::uint32_t> positives;
  std::vector<std::uint32_t> negatives;
};

template <class T>
struct LossParts {
  Tensor<T> total;
  Tensor<T> bpr;
  Tensor<T> rar;
  Tensor<T> l2;
};

/// BPR summed over the batch plus λ·RAR + η·‖Θ‖², the regularizers counted
/// once per batch.
template <class T>
LossParts<T> batch_loss(const ParamSet<T>& params, GraphContext& ctx, const PrimitiveEmbeddings& prims,
                        std::span<const Triple> batch) {
  if (batch.empty()) throw ContractViolation("batch_loss: empty batch");
  const auto& config = ctx.config();
  std::vector<NodeRef> nodes;
  for (const auto& tr : batch) {
    if (tr.positives.size() != tr.negatives.size()) throw ContractViolation("batch_loss: unpaired negatives");
    auto need = required_nodes(ctx, *tr.sample);
    nodes.insert(nodes.end(), need.begin(), need.end());
    for (auto v : tr.positives) nodes.push_back(graph::item_node(v));
    for (auto v : tr.negatives) nodes.push_back(graph::item_node(v));
  }
  auto table = make_table(params, prims, std::move(nodes), config.leaky_slope);

  std::vector<Tensor<T>> pos, neg;
  for (const auto& tr : batch) {
    auto emb = embed_sample(params, ctx, table, *tr.sample);
    pos.push_back(score(emb, table, tr.positives));
    neg.push_back(score(emb, table, tr.negatives));
  }
  LossParts<T> parts;
  parts.bpr = bpr_term(nk::concat_cols(pos), nk::concat_cols(neg));
  parts.rar = rar_term(params);
  parts.l2 = l2_term(params);
  parts.total = parts.bpr;
  if (config.effective_lambda() != 0.0) {
    parts.total = nk::add(parts.total, nk::scale(parts.rar, static_cast<T>(config.effective_lambda())));
  }
  if (config.eta != 0.0) parts.total = nk::add(parts.total, nk::scale(parts.l2, static_cast<T>(config.eta)));
  if (!std::isfinite(static_cast<double>(parts.total.item()))) {
    std::ostringstream msg;
    msg << "non-finite loss (bpr=" << parts.bpr.item() << ", rar=" << parts.rar.item() << ", l2=" << parts.l2.item()
        << ") in batch of samples";
    for (const auto& tr : batch) msg << ' ' << tr.sample->id;
    throw NumericError(msg.str());
  }
  return parts;
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'R', 'T', 'G', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class Int>
void put(std::ostream& os, Int v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class Int>
Int get(std::istream& is, const std::string& what) {
  Int v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("checkpoint truncated while reading " + what);
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, const std::string& what) {
  const auto n = get<std::uint32_t>(is, what);
  if (n > (1u << 24)) throw DataError("checkpoint: implausible length for " + what);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw DataError("checkpoint truncated while reading " + what);
  return s;
}

}  // namespace detail

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::uint64_t seed = 0;
};

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ParamSet<T>& params, const std::string& config_text,
                     std::uint64_t seed) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put_string(os, config_text);
  detail::put<std::uint64_t>(os, seed);
  const auto all = params.tensors();
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(all.size()));
  for (const auto& t : all) {
    detail::put_string(os, t.name());
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    for (auto v : t.values()) detail::put<float>(os, static_cast<float>(v));
  }
  if (!os) throw ConfigError("failed writing checkpoint " + path.string());
}

namespace detail {

inline CheckpointHeader read_header(std::istream& is, const std::filesystem::path& path) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataError(path.string() + " is not a checkpoint");
  }
  CheckpointHeader h;
  h.version = get<std::uint32_t>(is, "version");
  if (h.version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(h.version));
  h.config_text = get_string(is, "config");
  h.seed = get<std::uint64_t>(is, "seed");
  return h;
}

}  // namespace detail

inline CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint " + path.string());
  return detail::read_header(is, path);
}

/// Reads a checkpoint into a freshly built ParamSet for `config`; every stored
/// tensor must match by name and shape.
template <class T>
ParamSet<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig& config, CheckpointHeader* header = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint " + path.string());
  CheckpointHeader h = detail::read_header(is, path);
  auto params = ParamSet<T>::init(config, h.seed);
  auto all = params.tensors();
  std::unordered_map<std::string, std::size_t> by_name;
  for (std::size_t k = 0; k < all.size(); ++k) by_name.emplace(all[k].name(), k);
  const auto count = detail::get<std::uint32_t>(is, "tensor count");
  if (count != all.size()) {
    throw DataError("checkpoint has " + std::to_string(count) + " tensors, model expects " + std::to_string(all.size()));
  }
  std::vector<bool> seen(all.size(), false);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = detail::get_string(is, "tensor name");
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint tensor '" + name + "' is not part of the model");
    auto& target = all[it->second];
    const auto rank = detail::get<std::uint32_t>(is, name + " rank");
    nk::Shape shape(rank);
    for (auto& e : shape) e = detail::get<std::uint32_t>(is, name + " extent");
    if (shape != target.shape()) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + nk::shape_str(shape) + ", model expects " +
                      nk::shape_str(target.shape()));
    }
    auto values = target.mutable_values();
    for (auto& v : values) v = static_cast<T>(detail::get<float>(is, name + " values"));
    seen[it->second] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) throw DataError("checkpoint repeats a tensor name");
  if (header) *header = std::move(h);
  return params;
}

}  // namespace retagnn::model
