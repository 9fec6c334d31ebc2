#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "retagnn/errors.hpp"
#include "retagnn/ingest.hpp"

namespace retagnn::graph {

enum class NodeKind : std::uint8_t { user = 0, item = 1, attribute = 2 };

struct NodeRef {
  NodeKind kind = NodeKind::user;
  std::uint32_t index = 0;

  friend auto operator<=>(const NodeRef&, const NodeRef&) = default;
};

inline NodeRef user_node(std::uint32_t i) { return {NodeKind::user, i}; }
inline NodeRef item_node(std::uint32_t i) { return {NodeKind::item, i}; }
inline NodeRef attribute_node(std::uint32_t i) { return {NodeKind::attribute, i}; }

/// The four directed edge types. Each one is defined for exactly one ordered
/// pair of node kinds.
enum class Relation : std::uint8_t {
  user_likes_item = 0,
  item_adopted_by_user = 1,
  item_has_attr = 2,
  attr_possessed_by_item = 3,
};

inline constexpr std::size_t kNumRelations = 4;
inline constexpr std::array<Relation, kNumRelations> kAllRelations = {
    Relation::user_likes_item, Relation::item_adopted_by_user, Relation::item_has_attr,
    Relation::attr_possessed_by_item};

constexpr NodeKind source_kind(Relation r) {
  switch (r) {
    case Relation::user_likes_item: return NodeKind::user;
    case Relation::item_adopted_by_user: return NodeKind::item;
    case Relation::item_has_attr: return NodeKind::item;
    case Relation::attr_possessed_by_item: return NodeKind::attribute;
  }
  return NodeKind::user;
}

constexpr NodeKind target_kind(Relation r) {
  switch (r) {
    case Relation::user_likes_item: return NodeKind::item;
    case Relation::item_adopted_by_user: return NodeKind::user;
    case Relation::item_has_attr: return NodeKind::attribute;
    case Relation::attr_possessed_by_item: return NodeKind::item;
  }
  return NodeKind::user;
}

constexpr Relation reverse(Relation r) {
  switch (r) {
    case Relation::user_likes_item: return Relation::item_adopted_by_user;
    case Relation::item_adopted_by_user: return Relation::user_likes_item;
    case Relation::item_has_attr: return Relation::attr_possessed_by_item;
    case Relation::attr_possessed_by_item: return Relation::item_has_attr;
  }
  return r;
}

/// R(n_i, n_j): the relation of an edge from a `from` node to a `to` node, if any.
constexpr std::optional<Relation> relation_between(NodeKind from, NodeKind to) {
  for (auto r : kAllRelations)
    if (source_kind(r) == from && target_kind(r) == to) return r;
  return std::nullopt;
}

/// Relations whose edges leave a node of the given kind.
inline std::span<const Relation> relations_from(NodeKind kind) {
  static constexpr Relation user_rel[] = {Relation::user_likes_item};
  static constexpr Relation item_rel[] = {Relation::item_adopted_by_user, Relation::item_has_attr};
  static constexpr Relation attr_rel[] = {Relation::attr_possessed_by_item};
  switch (kind) {
    case NodeKind::user: return user_rel;
    case NodeKind::item: return item_rel;
    case NodeKind::attribute: return attr_rel;
  }
  return {};
}

inline const char* kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::user: return "user";
    case NodeKind::item: return "item";
    case NodeKind::attribute: return "attribute";
  }
  return "?";
}

inline const char* relation_name(Relation r) {
  switch (r) {
    case Relation::user_likes_item: return "user_likes_item";
    case Relation::item_adopted_by_user: return "item_adopted_by_user";
    case Relation::item_has_attr: return "item_has_attr";
    case Relation::attr_possessed_by_item: return "attr_possessed_by_item";
  }
  return "?";
}

inline std::string to_string(NodeRef n) { return std::string(kind_name(n.kind)) + ":" + std::to_string(n.index); }

/// Immutable user–item–attribute graph. Adjacency is stored per relation in
/// CSR form with sorted, duplicate-free neighbor lists; every edge is present
/// together with its reverse.
class TripartiteGraph {
 public:
  using Pair = std::pair<std::uint32_t, std::uint32_t>;

  TripartiteGraph() = default;

  /// `user_items` are (user, item) pairs and `item_attrs` (item, attribute)
  /// pairs; duplicates are dropped and reverse edges materialized.
  TripartiteGraph(std::size_t users, std::size_t items, std::size_t attributes, ingest::Window window,
                  std::vector<Pair> user_items, std::vector<Pair> item_attrs)
      : counts_{users, items, attributes}, window_(window) {
    auto normalize = [](std::vector<Pair>& v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    normalize(user_items);
    normalize(item_attrs);
    for (auto [u, v] : user_items)
      if (u >= users || v >= items) throw ContractViolation("graph: user-item pair out of range");
    for (auto [v, a] : item_attrs)
      if (v >= items || a >= attributes) throw ContractViolation("graph: item-attribute pair out of range");
    user_item_pairs_ = user_items.size();
    item_attr_pairs_ = item_attrs.size();
    build(Relation::user_likes_item, users, user_items, false);
    build(Relation::item_adopted_by_user, items, user_items, true);
    build(Relation::item_has_attr, items, item_attrs, false);
    build(Relation::attr_possessed_by_item, attributes, item_attrs, true);
  }

  std::size_t num_nodes(NodeKind k) const { return counts_[static_cast<std::size_t>(k)]; }
  std::size_t total_nodes() const { return counts_[0] + counts_[1] + counts_[2]; }
  const ingest::Window& window() const { return window_; }

  /// Number of directed edges (each undirected pair counts twice).
  std::size_t edge_count() const { return 2 * (user_item_pairs_ + item_attr_pairs_); }
  std::size_t user_item_pairs() const { return user_item_pairs_; }
  std::size_t item_attribute_pairs() const { return item_attr_pairs_; }
  bool empty() const { return user_item_pairs_ == 0; }

  bool contains(NodeRef n) const { return n.index < num_nodes(n.kind); }

  /// Γ_r(n): sorted neighbors of `n` via relation `r`.
  std::span<const std::uint32_t> neighbors(NodeRef n, Relation r) const {
    if (source_kind(r) != n.kind) {
      throw ContractViolation(std::string("graph: relation ") + relation_name(r) + " does not apply to a " +
                              kind_name(n.kind) + " node");
    }
    if (!contains(n)) throw ContractViolation("graph: node " + to_string(n) + " out of range");
    const auto& csr = adjacency_[static_cast<std::size_t>(r)];
    return std::span<const std::uint32_t>(csr.targets).subspan(csr.offsets[n.index],
                                                               csr.offsets[n.index + 1] - csr.offsets[n.index]);
  }

  /// One line per directed edge: `src_kind src_idx relation dst_kind dst_idx`.
  void write_edge_list(std::ostream& os) const {
    for (auto r : kAllRelations) {
      const auto& csr = adjacency_[static_cast<std::size_t>(r)];
      for (std::size_t s = 0; s + 1 < csr.offsets.size(); ++s)
        for (auto k = csr.offsets[s]; k < csr.offsets[s + 1]; ++k)
          os << kind_name(source_kind(r)) << ' ' << s << ' ' << relation_name(r) << ' '
             << kind_name(target_kind(r)) << ' ' << csr.targets[k] << '\n';
    }
  }

  friend bool operator==(const TripartiteGraph& a, const TripartiteGraph& b) {
    return a.counts_ == b.counts_ && a.window_ == b.window_ && a.adjacency_ == b.adjacency_;
  }

 private:
  struct Csr {
    std::vector<std::size_t> offsets;
    std::vector<std::uint32_t> targets;
    friend bool operator==(const Csr&, const Csr&) = default;
  };

  void build(Relation r, std::size_t sources, const std::vector<Pair>& pairs, bool flipped) {
    auto& csr = adjacency_[static_cast<std::size_t>(r)];
    csr.offsets.assign(sources + 1, 0);
    for (auto [a, b] : pairs) ++csr.offsets[(flipped ? b : a) + 1];
    for (std::size_t i = 0; i < sources; ++i) csr.offsets[i + 1] += csr.offsets[i];
    csr.targets.resize(pairs.size());
    auto cursor = csr.offsets;
    // Pairs are sorted by (a, b); flipped lists still come out sorted because
    // they are filled in increasing a for each fixed b.
    for (auto [a, b] : pairs) {
      auto src = flipped ? b : a;
      csr.targets[cursor[src]++] = flipped ? a : b;
    }
  }

  std::array<std::size_t, 3> counts_{0, 0, 0};
  ingest::Window window_;
  std::size_t user_item_pairs_ = 0;
  std::size_t item_attr_pairs_ = 0;
  std::array<Csr, kNumRelations> adjacency_;
};

/// Builds ℋ for a window: every train-split (user, item) interaction whose
/// sequence position lies inside `window`, plus all item–attribute edges of the
/// catalog unless `include_attributes` is false. Samples of other splits are
/// ignored. Emits a warning on `warn` when no user–item edge survives.
inline TripartiteGraph build_graph(const std::vector<ingest::TrainingSample>& samples, const ingest::Catalog& catalog,
                                   ingest::Window window, bool include_attributes = true,
                                   std::ostream* warn = nullptr) {
  std::vector<TripartiteGraph::Pair> user_items;
  for (const auto& s : samples) {
    if (s.split != ingest::Split::train) continue;
    const std::size_t start = s.window.begin;
    const std::size_t span = s.history.size() + s.future.size();
    for (std::size_t k = 0; k < span; ++k) {
      if (!window.contains(start + k)) continue;
      const auto item = k < s.history.size() ? s.history[k] : s.future[k - s.history.size()];
      user_items.emplace_back(s.user, item);
    }
  }
  std::vector<TripartiteGraph::Pair> item_attrs;
  if (include_attributes) {
    for (std::uint32_t v = 0; v < catalog.item_attrs.size(); ++v)
      for (auto a : catalog.item_attrs[v]) item_attrs.emplace_back(v, a);
  }
  TripartiteGraph g(catalog.num_users(), catalog.num_items(), include_attributes ? catalog.num_attributes() : 0, window,
                    std::move(user_items), std::move(item_attrs));
  if (warn && g.empty()) {
    *warn << "warning: graph for window [" << window.begin << ", " << window.end << ") has no user-item edges\n";
  }
  return g;
}

}  // namespace retagnn::graph
