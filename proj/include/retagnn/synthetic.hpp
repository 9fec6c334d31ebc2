#pragma once

// Planted-preference interaction data. Each user belongs to one latent
// cluster; a cluster prefers a pair of attribute values, and the user's
// emphasis drifts from the first value of the pair to the second over the
// sequence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "retagnn/errors.hpp"
#include "retagnn/ingest.hpp"

namespace retagnn::synthetic {

struct SyntheticSpec {
  std::size_t users = 300;
  std::size_t items = 200;
  std::size_t attributes = 8;
  std::size_t clusters = 4;
  std::size_t min_length = 20;
  std::size_t max_length = 30;
  double in_bundle = 0.9;        // chance a step follows the cluster's attribute pair
  double secondary_attr = 0.5;   // chance an item carries a second attribute value
  double popularity_skew = 0.5;  // Zipf exponent of item appeal within an attribute group
  bool emit_attributes = true;   // false: catalog without attribute values
  std::uint64_t seed = 1;
};

/// Cluster c prefers attribute values 2c and 2c+1 (mod the attribute count).
inline std::pair<std::uint32_t, std::uint32_t> bundle_of(std::size_t cluster, std::size_t attributes) {
  return {static_cast<std::uint32_t>((2 * cluster) % attributes), static_cast<std::uint32_t>((2 * cluster + 1) % attributes)};
}

struct SyntheticData {
  ingest::PreprocessResult data;
  std::vector<std::uint32_t> user_cluster;
  std::vector<std::uint32_t> item_primary;  // primary attribute value per item
};

inline SyntheticData generate(const SyntheticSpec& spec) {
  if (spec.users == 0 || spec.items == 0 || spec.attributes < 2 || spec.clusters == 0) {
    throw ContractViolation("synthetic: empty universe");
  }
  if (spec.min_length > spec.max_length || spec.max_length > spec.items) {
    throw ContractViolation("synthetic: sequence lengths must fit the catalog");
  }
  std::mt19937_64 rng(spec.seed);
  SyntheticData out;
  auto& cat = out.data.catalog;
  for (std::size_t u = 0; u < spec.users; ++u) cat.users.intern("u" + std::to_string(u));
  for (std::size_t a = 0; a < spec.attributes; ++a) cat.attributes.intern("a" + std::to_string(a));

  // Balanced primary attributes, shuffled over items.
  out.item_primary.resize(spec.items);
  for (std::size_t v = 0; v < spec.items; ++v) out.item_primary[v] = static_cast<std::uint32_t>(v % spec.attributes);
  std::shuffle(out.item_primary.begin(), out.item_primary.end(), rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::uint32_t> any_attr(0, static_cast<std::uint32_t>(spec.attributes - 1));
  for (std::size_t v = 0; v < spec.items; ++v) {
    cat.add_item("i" + std::to_string(v));
    std::vector<std::uint32_t> attrs{out.item_primary[v]};
    if (unit(rng) < spec.secondary_attr) {
      std::uint32_t extra;
      do extra = any_attr(rng);
      while (extra == out.item_primary[v]);
      attrs.push_back(extra);
    }
    std::sort(attrs.begin(), attrs.end());
    if (spec.emit_attributes) cat.item_attrs[v] = std::move(attrs);
  }
  if (!spec.emit_attributes) cat.attributes = ingest::IdIndex{};

  // Item appeal: Zipf over a random order inside each attribute group.
  std::vector<std::vector<std::uint32_t>> group(spec.attributes);
  for (std::uint32_t v = 0; v < spec.items; ++v) group[out.item_primary[v]].push_back(v);
  std::vector<double> appeal(spec.items, 1.0);
  for (auto& members : group) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t r = 0; r < members.size(); ++r)
      appeal[members[r]] = 1.0 / std::pow(static_cast<double>(r + 1), spec.popularity_skew);
  }

  std::uniform_int_distribution<std::size_t> length(spec.min_length, spec.max_length);
  std::uniform_int_distribution<std::uint32_t> any_cluster(0, static_cast<std::uint32_t>(spec.clusters - 1));
  std::size_t total = 0;
  for (std::uint32_t u = 0; u < spec.users; ++u) {
    const auto c = any_cluster(rng);
    out.user_cluster.push_back(c);
    const auto [first, second] = bundle_of(c, spec.attributes);
    const std::size_t len = length(rng);
    std::vector<bool> used(spec.items, false);
    ingest::UserSequence seq;
    seq.user = u;
    for (std::size_t p = 0; p < len; ++p) {
      const double drift = len > 1 ? static_cast<double>(p) / static_cast<double>(len - 1) : 0.0;
      std::vector<double> w(spec.items, 0.0);
      if (unit(rng) < spec.in_bundle) {
        const auto attr = unit(rng) < drift ? second : first;
        for (auto v : group[attr]) w[v] = appeal[v];
      }
      double mass = 0.0;
      for (std::size_t v = 0; v < spec.items; ++v) {
        if (used[v]) w[v] = 0.0;
        mass += w[v];
      }
      if (mass == 0.0) {
        for (std::size_t v = 0; v < spec.items; ++v) w[v] = used[v] ? 0.0 : appeal[v];
      }
      std::discrete_distribution<std::uint32_t> pick(w.begin(), w.end());
      const auto v = pick(rng);
      used[v] = true;
      seq.items.push_back(v);
      seq.timestamps.push_back(static_cast<std::int64_t>(p));
    }
    total += seq.items.size();
    out.data.sequences.push_back(std::move(seq));
  }
  out.data.stats = ingest::make_stats(spec.users, spec.items, total, cat.num_attributes());
  return out;
}

}  // namespace retagnn::synthetic
