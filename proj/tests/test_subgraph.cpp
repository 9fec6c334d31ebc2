#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "retagnn/subgraph.hpp"
#include "support/oracles.hpp"

namespace graph = retagnn::graph;
namespace sub = retagnn::subgraph;
using graph::NodeRef;

namespace {

// Two-user toy graph: users u1,u2 → 0,1; items v1..v3 → 0..2; a2 → 0.
graph::TripartiteGraph toy() {
  return {2, 3, 1, {0, 1}, {{0, 0}, {0, 2}, {1, 1}, {1, 2}}, {{0, 0}, {1, 0}, {2, 0}}};
}

std::set<NodeRef> nodes_of(const sub::EnclosingSubgraph& sg) { return {sg.local_to_global.begin(), sg.local_to_global.end()}; }

std::uint32_t hop(const sub::EnclosingSubgraph& sg, NodeRef n) { return sg.hop_of.at(*sg.local_of(n)); }

}  // namespace

TEST(Toy, SeedsU1V2TwoHops) {
  const std::vector<NodeRef> seeds{graph::user_node(0), graph::item_node(1)};
  auto sg = sub::extract(toy(), seeds, 2);
  const std::set<NodeRef> expected{graph::user_node(0), graph::user_node(1), graph::item_node(0),
                                   graph::item_node(1), graph::item_node(2), graph::attribute_node(0)};
  EXPECT_EQ(nodes_of(sg), expected);
  EXPECT_EQ(hop(sg, graph::attribute_node(0)), 1u);
  EXPECT_EQ(hop(sg, graph::user_node(1)), 1u);
  EXPECT_EQ(hop(sg, graph::item_node(0)), 1u);
  EXPECT_EQ(hop(sg, graph::item_node(2)), 1u);
  EXPECT_EQ(sg.edges.size(), 14u);
}

TEST(Toy, ZeroHopsKeepsSeedsAndTheirEdge) {
  const std::vector<NodeRef> seeds{graph::user_node(0), graph::item_node(2)};
  auto sg = sub::extract(toy(), seeds, 0);
  EXPECT_EQ(sg.size(), 2u);
  EXPECT_EQ(sg.edges.size(), 2u);
  const std::vector<NodeRef> apart{graph::user_node(0), graph::item_node(1)};
  EXPECT_TRUE(sub::extract(toy(), apart, 0).edges.empty());
}

TEST(Session, UnseenUserReachesInjectedItemsAtHopZero) {
  // User 5 has no edges in the parent; its session items are seeds and the
  // injected edges tie it to them.
  graph::TripartiteGraph parent(6, 4, 1, {0, 1}, {{0, 0}, {0, 1}}, {{0, 0}, {3, 0}});
  const std::vector<std::uint32_t> items{0, 2};
  auto sg = sub::extract_for_session(parent, 5, items, 2);
  EXPECT_EQ(hop(sg, graph::user_node(5)), 0u);
  EXPECT_EQ(hop(sg, graph::item_node(0)), 0u);
  EXPECT_EQ(hop(sg, graph::item_node(2)), 0u);
  EXPECT_EQ(sg.seed_locals.size(), 3u);
  EXPECT_TRUE(sg.local_of(graph::user_node(0)));      // via v0
  EXPECT_TRUE(sg.local_of(graph::item_node(3)));      // via a0
  auto u = *sg.local_of(graph::user_node(5));
  EXPECT_EQ(sg.edges_of(u).size(), 2u);
}

TEST(Session, SeedsAreUserPlusWindowItems) {
  graph::TripartiteGraph parent(2, 8, 0, {0, 4}, {{0, 0}, {0, 1}, {0, 2}, {0, 3}}, {});
  const std::vector<std::uint32_t> items{0, 1, 2, 3};
  auto sg = sub::extract_for_session(parent, 0, items, 2);
  EXPECT_EQ(sg.seed_locals.size(), 5u);
}

TEST(Caps, TruncationKeepsLowestNodes) {
  graph::TripartiteGraph parent(1, 6, 0, {0, 1}, {{0, 0}, {0, 1}, {0, 2}, {0, 3}, {0, 4}, {0, 5}}, {});
  const std::vector<NodeRef> seeds{graph::user_node(0)};
  sub::ExtractOptions opt;
  opt.max_nodes_per_hop = 2;
  auto sg = sub::extract(parent, seeds, 1, opt);
  EXPECT_EQ(nodes_of(sg), (std::set<NodeRef>{graph::user_node(0), graph::item_node(0), graph::item_node(1)}));
}

TEST(Oracle, RandomGraphsMatchShortestPaths) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    auto g = oracle::random_tripartite(rng);
    auto parent = g.build();
    std::vector<NodeRef> seeds{graph::user_node(static_cast<std::uint32_t>(rng() % g.users))};
    for (std::size_t k = rng() % 4; k > 0; --k) seeds.push_back(graph::item_node(static_cast<std::uint32_t>(rng() % g.items)));
    const auto edges = g.undirected();
    std::set<NodeRef> previous;
    for (std::size_t h = 0; h <= 3; ++h) {
      auto got = oracle::as_sets(sub::extract(parent, seeds, h));
      auto want = oracle::brute_force_subgraph(edges, seeds, h);
      EXPECT_EQ(got.nodes, want.nodes) << "trial " << trial << " h " << h;
      EXPECT_EQ(got.edges, want.edges) << "trial " << trial << " h " << h;
      EXPECT_TRUE(std::includes(got.nodes.begin(), got.nodes.end(), previous.begin(), previous.end()));
      previous = got.nodes;
    }
  }
}

TEST(Oracle, HopAnnotationsAreShortestDistances) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = oracle::random_tripartite(rng);
    auto parent = g.build();
    std::vector<NodeRef> seeds{graph::user_node(0)};
    auto sg = sub::extract(parent, seeds, 3);
    for (std::size_t h = 0; h <= 3; ++h) {
      auto within = oracle::brute_force_subgraph(g.undirected(), seeds, h).nodes;
      for (std::uint32_t i = 0; i < sg.size(); ++i)
        EXPECT_EQ(sg.hop_of[i] <= h, within.contains(sg.local_to_global[i]));
    }
  }
}

TEST(Write, ListsNodesAndEdges) {
  const std::vector<NodeRef> seeds{graph::user_node(0), graph::item_node(1)};
  std::ostringstream os;
  sub::extract(toy(), seeds, 2).write(os);
  const auto text = os.str();
  EXPECT_NE(text.find("node 0 user 0 0 1"), std::string::npos);
  EXPECT_NE(text.find("item 2 item_has_attr attribute 0"), std::string::npos);
}

TEST(Seeds, EmptySeedSetIsRejected) {
  EXPECT_THROW(sub::extract(toy(), std::span<const NodeRef>{}, 1), retagnn::ContractViolation);
}
