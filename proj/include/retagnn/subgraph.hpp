#pragma once

// h-hop enclosing subgraph extraction around a seed set.
//
// Cumulative layer-by-layer BFS over all four relations, then the
// vertex-induced subgraph on every visited user, item and attribute node.

#include <algorithm>
#include <cstdint>
#include <iterator>
#include <optional>
#include <ostream>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "retagnn/graph.hpp"
#include "retagnn/ingest.hpp"

namespace retagnn::subgraph {

using graph::NodeKind;
using graph::NodeRef;
using graph::Relation;

/// `neighbor` ∈ Γ_relation(`node`), both as local indices.
struct LocalEdge {
  std::uint32_t node = 0;
  std::uint32_t neighbor = 0;
  Relation relation = Relation::user_likes_item;

  friend bool operator==(const LocalEdge&, const LocalEdge&) = default;
};

inline std::uint64_t node_key(NodeRef n) {
  return (static_cast<std::uint64_t>(n.kind) << 32) | n.index;
}

class EnclosingSubgraph {
 public:
  std::vector<NodeRef> local_to_global;
  std::vector<std::uint32_t> seed_locals;
  std::vector<std::uint32_t> hop_of;
  std::vector<LocalEdge> edges;           // grouped by `node` in local order
  std::vector<std::size_t> edge_offsets;  // CSR offsets into `edges`, size() + 1 entries

  std::size_t size() const { return local_to_global.size(); }

  std::optional<std::uint32_t> local_of(NodeRef n) const {
    auto it = global_to_local_.find(node_key(n));
    if (it == global_to_local_.end()) return std::nullopt;
    return it->second;
  }

  std::span<const LocalEdge> edges_of(std::uint32_t local) const {
    return std::span<const LocalEdge>(edges).subspan(edge_offsets[local], edge_offsets[local + 1] - edge_offsets[local]);
  }

  /// Node table with hop annotations followed by the induced edge list.
  void write(std::ostream& os) const {
    os << "# nodes: local kind index hop seed\n";
    std::vector<bool> is_seed(size(), false);
    for (auto s : seed_locals) is_seed[s] = true;
    for (std::uint32_t i = 0; i < size(); ++i) {
      os << "node " << i << ' ' << graph::kind_name(local_to_global[i].kind) << ' ' << local_to_global[i].index
         << ' ' << hop_of[i] << ' ' << (is_seed[i] ? 1 : 0) << '\n';
    }
    os << "# edges: src_kind src_idx relation dst_kind dst_idx\n";
    for (const auto& e : edges) {
      const auto a = local_to_global[e.node];
      const auto b = local_to_global[e.neighbor];
      os << graph::kind_name(a.kind) << ' ' << a.index << ' ' << graph::relation_name(e.relation) << ' '
         << graph::kind_name(b.kind) << ' ' << b.index << '\n';
    }
  }

 private:
  friend class SubgraphAssembler;
  std::unordered_map<std::uint64_t, std::uint32_t> global_to_local_;
};

struct ExtractOptions {
  /// Cap on newly discovered nodes per hop; 0 disables. Truncation keeps the
  /// lowest (kind, index) nodes.
  std::size_t max_nodes_per_hop = 0;
  /// Extra (user, item) interactions overlaid on the parent before the search.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> injected_user_items;
};

/// Parent graph plus an overlay of injected user–item edges.
class GraphView {
 public:
  GraphView(const graph::TripartiteGraph& parent, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& injected)
      : parent_(parent) {
    for (auto [u, v] : injected) {
      user_items_[u].push_back(v);
      item_users_[v].push_back(u);
    }
    for (auto* m : {&user_items_, &item_users_})
      for (auto& [k, list] : *m) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
      }
  }

  /// Sorted, duplicate-free neighbors of `n` via `r`.
  std::vector<std::uint32_t> neighbors(NodeRef n, Relation r) const {
    std::vector<std::uint32_t> out;
    if (parent_.contains(n)) {
      auto base = parent_.neighbors(n, r);
      out.assign(base.begin(), base.end());
    }
    const std::unordered_map<std::uint32_t, std::vector<std::uint32_t>>* extra = nullptr;
    if (r == Relation::user_likes_item) extra = &user_items_;
    if (r == Relation::item_adopted_by_user) extra = &item_users_;
    if (extra) {
      auto it = extra->find(n.index);
      if (it != extra->end()) {
        std::vector<std::uint32_t> merged;
        std::set_union(out.begin(), out.end(), it->second.begin(), it->second.end(), std::back_inserter(merged));
        out = std::move(merged);
      }
    }
    return out;
  }

 private:
  const graph::TripartiteGraph& parent_;
  std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> user_items_;
  std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> item_users_;
};

class SubgraphAssembler {
 public:
  static EnclosingSubgraph run(const GraphView& view, std::span<const NodeRef> seeds, std::size_t hops,
                               std::size_t max_nodes_per_hop) {
    if (seeds.empty()) throw ContractViolation("subgraph: seed set must not be empty");
    EnclosingSubgraph sg;
    auto visit = [&sg](NodeRef n, std::uint32_t hop) {
      auto [it, inserted] = sg.global_to_local_.try_emplace(node_key(n), static_cast<std::uint32_t>(sg.size()));
      if (inserted) {
        sg.local_to_global.push_back(n);
        sg.hop_of.push_back(hop);
      }
      return inserted;
    };

    std::vector<NodeRef> frontier;
    for (auto s : seeds) {
      if (visit(s, 0)) frontier.push_back(s);
      sg.seed_locals.push_back(sg.global_to_local_.at(node_key(s)));
    }
    std::sort(sg.seed_locals.begin(), sg.seed_locals.end());
    sg.seed_locals.erase(std::unique(sg.seed_locals.begin(), sg.seed_locals.end()), sg.seed_locals.end());

    for (std::size_t hop = 1; hop <= hops && !frontier.empty(); ++hop) {
      std::vector<NodeRef> found;
      for (auto n : frontier)
        for (auto r : graph::relations_from(n.kind))
          for (auto j : view.neighbors(n, r)) {
            NodeRef m{graph::target_kind(r), j};
            if (!sg.global_to_local_.contains(node_key(m))) found.push_back(m);
          }
      std::sort(found.begin(), found.end());
      found.erase(std::unique(found.begin(), found.end()), found.end());
      if (max_nodes_per_hop > 0 && found.size() > max_nodes_per_hop) found.resize(max_nodes_per_hop);
      for (auto m : found) visit(m, static_cast<std::uint32_t>(hop));
      frontier = std::move(found);
    }

    sg.edge_offsets.assign(sg.size() + 1, 0);
    for (std::uint32_t i = 0; i < sg.size(); ++i) {
      const NodeRef n = sg.local_to_global[i];
      for (auto r : graph::relations_from(n.kind))
        for (auto j : view.neighbors(n, r)) {
          auto it = sg.global_to_local_.find(node_key({graph::target_kind(r), j}));
          if (it != sg.global_to_local_.end()) sg.edges.push_back({i, it->second, r});
        }
      sg.edge_offsets[i + 1] = sg.edges.size();
    }
    return sg;
  }
};

/// Extracts the h-hop enclosing subgraph of `seeds`. Seeds missing from the
/// parent are kept as isolated nodes.
inline EnclosingSubgraph extract(const graph::TripartiteGraph& parent, std::span<const NodeRef> seeds, std::size_t h,
                                 const ExtractOptions& options = {}) {
  GraphView view(parent, options.injected_user_items);
  return SubgraphAssembler::run(view, seeds, h, options.max_nodes_per_hop);
}

/// Seeds are the user plus every item of the session; the user's own
/// (user, item) session edges are injected if the parent lacks them.
inline EnclosingSubgraph extract_for_session(const graph::TripartiteGraph& parent, std::uint32_t user,
                                             std::span<const std::uint32_t> items, std::size_t h,
                                             std::size_t max_nodes_per_hop = 0) {
  if (items.empty()) throw ContractViolation("subgraph: session must contain at least one item");
  std::vector<NodeRef> seeds{graph::user_node(user)};
  ExtractOptions options;
  options.max_nodes_per_hop = max_nodes_per_hop;
  for (auto v : items) {
    seeds.push_back(graph::item_node(v));
    options.injected_user_items.emplace_back(user, v);
  }
  return extract(parent, seeds, h, options);
}

inline EnclosingSubgraph extract_for_sample(const graph::TripartiteGraph& parent, const ingest::TrainingSample& sample,
                                            std::size_t h, std::size_t max_nodes_per_hop = 0) {
  return extract_for_session(parent, sample.user, sample.history, h, max_nodes_per_hop);
}

}  // namespace retagnn::subgraph
