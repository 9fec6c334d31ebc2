#pragma once

// Training loop, ranking evaluation under the conventional, inductive and
// transfer protocols, baselines and run reports.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "retagnn/errors.hpp"
#include "retagnn/ingest.hpp"
#include "retagnn/numkernel.hpp"
#include "retagnn/recommender.hpp"

namespace retagnn::harness {

using ingest::TrainingSample;
using model::GraphContext;
using model::ModelConfig;
using model::ParamSet;
using model::PrimitiveEmbeddings;

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double ndcg = 0.0;

  Metrics& operator+=(const Metrics& o) {
    precision += o.precision;
    recall += o.recall;
    ndcg += o.ndcg;
    return *this;
  }
  Metrics operator/(double n) const { return {precision / n, recall / n, ndcg / n}; }
};

inline double discount(std::size_t rank) { return 1.0 / std::log2(static_cast<double>(rank) + 1.0); }

/// Binary-relevance P@k, R@k and NDCG@k of a ranked list; the ideal DCG fills
/// min(|relevant|, k) positions.
inline Metrics metrics_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant,
                            std::size_t k) {
  if (k == 0) throw ContractViolation("metrics_at_k: k must be positive");
  if (relevant.empty()) throw ContractViolation("metrics_at_k: no relevant items");
  std::unordered_set<std::uint32_t> rel(relevant.begin(), relevant.end());
  std::size_t hits = 0;
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    if (rel.contains(ranked[r])) {
      ++hits;
      dcg += discount(r + 1);
    }
  }
  double idcg = 0.0;
  for (std::size_t r = 1; r <= std::min(rel.size(), k); ++r) idcg += discount(r);
  return {static_cast<double>(hits) / static_cast<double>(k), static_cast<double>(hits) / static_cast<double>(rel.size()),
          dcg / idcg};
}

/// Candidates sorted by descending score, ties by ascending item index.
inline std::vector<std::uint32_t> rank_by_score(std::span<const std::uint32_t> candidates, std::span<const double> scores,
                                                std::size_t k = 0) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return candidates[a] < candidates[b];
  };
  const std::size_t keep = k == 0 ? order.size() : std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), better);
  std::vector<std::uint32_t> out(keep);
  for (std::size_t i = 0; i < keep; ++i) out[i] = candidates[order[i]];
  return out;
}

// ---------------------------------------------------------------------------
// Candidate sets
// ---------------------------------------------------------------------------

/// Items each user touched in train-split samples (history and future).
class UserItems {
 public:
  UserItems() = default;
  UserItems(std::span<const TrainingSample> samples, std::size_t num_users) : items_(num_users) {
    for (const auto& s : samples) {
      if (s.split != ingest::Split::train) continue;
      if (s.user >= items_.size()) items_.resize(s.user + 1);
      items_[s.user].insert(s.history.begin(), s.history.end());
      items_[s.user].insert(s.future.begin(), s.future.end());
    }
  }
  const std::set<std::uint32_t>& of(std::uint32_t user) const {
    static const std::set<std::uint32_t> none;
    return user < items_.size() ? items_[user] : none;
  }
  bool contains(std::uint32_t user, std::uint32_t item) const { return of(user).contains(item); }

 private:
  std::vector<std::set<std::uint32_t>> items_;
};

struct CandidatePolicy {
  bool exclude_train_items = true;
  bool exclude_history = true;
  /// When positive, rank the targets against this many sampled negatives instead of the catalog.
  std::size_t num_neg_eval = 0;
  std::uint64_t seed = 0;
};

/// The catalog minus the user's train-split items and the sample's own history.
/// Ground-truth items are never removed.
inline std::vector<std::uint32_t> candidates_for(const TrainingSample& s, std::size_t num_items, const UserItems& seen,
                                                 const CandidatePolicy& policy) {
  std::unordered_set<std::uint32_t> banned;
  if (policy.exclude_train_items) banned.insert(seen.of(s.user).begin(), seen.of(s.user).end());
  if (policy.exclude_history) banned.insert(s.history.begin(), s.history.end());
  for (auto v : s.future) banned.erase(v);
  std::vector<std::uint32_t> pool;
  for (std::uint32_t v = 0; v < num_items; ++v)
    if (!banned.contains(v)) pool.push_back(v);
  if (policy.num_neg_eval == 0) return pool;

  std::unordered_set<std::uint32_t> future(s.future.begin(), s.future.end());
  std::vector<std::uint32_t> negatives;
  for (auto v : pool)
    if (!future.contains(v)) negatives.push_back(v);
  std::mt19937_64 rng(model::mix64(policy.seed ^ model::mix64(s.id)));
  std::shuffle(negatives.begin(), negatives.end(), rng);
  negatives.resize(std::min(negatives.size(), policy.num_neg_eval));
  std::vector<std::uint32_t> out(future.begin(), future.end());
  out.insert(out.end(), negatives.begin(), negatives.end());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Scores items by how many distinct users interacted with them in train-split
/// samples. Unseen items score 0 and fall back to index order.
class PopularityRanker {
 public:
  PopularityRanker(std::span<const TrainingSample> train, std::size_t num_items) : counts_(num_items, 0) {
    std::set<std::pair<std::uint32_t, std::uint32_t>> pairs;
    for (const auto& s : train) {
      if (s.split != ingest::Split::train) continue;
      for (auto v : s.history) pairs.emplace(s.user, v);
      for (auto v : s.future) pairs.emplace(s.user, v);
    }
    for (auto [u, v] : pairs) ++counts_.at(v);
  }

  double score(std::uint32_t item) const { return static_cast<double>(counts_.at(item)); }
  std::size_t count(std::uint32_t item) const { return counts_.at(item); }

  std::vector<std::uint32_t> rank(std::span<const std::uint32_t> candidates, std::size_t k = 0) const {
    std::vector<double> s;
    s.reserve(candidates.size());
    for (auto v : candidates) s.push_back(score(v));
    return rank_by_score(candidates, s, k);
  }

 private:
  std::vector<std::size_t> counts_;
};

/// Expected metrics of a uniformly random ordering of `candidates` items with
/// `relevant` of them relevant.
inline Metrics random_expectation(std::size_t candidates, std::size_t relevant, std::size_t k) {
  if (candidates == 0 || relevant == 0) throw ContractViolation("random_expectation: empty candidate or relevant set");
  const double p_hit = static_cast<double>(relevant) / static_cast<double>(candidates);
  const std::size_t depth = std::min(k, candidates);
  double dcg = 0.0;
  for (std::size_t r = 1; r <= depth; ++r) dcg += p_hit * discount(r);
  double idcg = 0.0;
  for (std::size_t r = 1; r <= std::min(relevant, k); ++r) idcg += discount(r);
  const double hits = p_hit * static_cast<double>(depth);
  return {hits / static_cast<double>(k), hits / static_cast<double>(relevant), dcg / idcg};
}

// ---------------------------------------------------------------------------
// Parallel helper
// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on `workers` threads with gradients disabled.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    nk::NoGradGuard guard;
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      nk::NoGradGuard guard;
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
  std::size_t k = 10;
  std::size_t workers = 1;
  CandidatePolicy policy;
};

struct EvalResult {
  Metrics model;
  Metrics popularity;
  Metrics random;
  std::size_t samples = 0;
  std::vector<Metrics> per_sample;
};

/// Nodes of every kind present in the catalog the context scores against.
inline std::vector<graph::NodeRef> catalog_nodes(const GraphContext& ctx) {
  std::vector<graph::NodeRef> nodes;
  const auto& c = ctx.catalog();
  for (std::uint32_t u = 0; u < c.num_users(); ++u) nodes.push_back(graph::user_node(u));
  for (std::uint32_t v = 0; v < c.num_items(); ++v) nodes.push_back(graph::item_node(v));
  if (ctx.attributes())
    for (std::uint32_t a = 0; a < c.num_attributes(); ++a) nodes.push_back(graph::attribute_node(a));
  return nodes;
}

/// Scores `samples` with read-only parameters; `seen` supplies the candidate
/// exclusions and `popularity` the baseline.
template <class T>
EvalResult evaluate(const ParamSet<T>& params, GraphContext& ctx, const PrimitiveEmbeddings& prims,
                    std::span<const TrainingSample> samples, const UserItems& seen, const PopularityRanker& popularity,
                    const EvalOptions& options) {
  if (samples.empty()) throw ContractViolation("evaluate: no samples");
  model::PrimitiveTable<T> table;
  {
    nk::NoGradGuard guard;
    table = model::make_table(params, prims, catalog_nodes(ctx), ctx.config().leaky_slope);
  }
  const std::size_t num_items = ctx.catalog().num_items();
  std::vector<std::uint32_t> all_items(num_items);
  std::iota(all_items.begin(), all_items.end(), 0u);
  const auto item_rows = table.item_rows(all_items);
  const auto item_x = nk::gather_rows(table.x, item_rows);

  std::vector<Metrics> ours(samples.size()), pop(samples.size()), rnd(samples.size());
  parallel_for(samples.size(), options.workers, [&](std::size_t i) {
    const auto& s = samples[i];
    auto emb = model::embed_sample(params, ctx, table, s);
    const auto scores = nk::matmul_nt(emb.query(), item_x);
    const auto all_scores = scores.values();
    for (auto v : all_scores) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw NumericError("non-finite score for sample " + std::to_string(s.id));
      }
    }
    const auto cands = candidates_for(s, num_items, seen, options.policy);
    std::vector<double> sc;
    sc.reserve(cands.size());
    for (auto v : cands) sc.push_back(static_cast<double>(all_scores[v]));
    ours[i] = metrics_at_k(rank_by_score(cands, sc, options.k), s.future, options.k);
    pop[i] = metrics_at_k(popularity.rank(cands, options.k), s.future, options.k);
    std::unordered_set<std::uint32_t> rel(s.future.begin(), s.future.end());
    rnd[i] = random_expectation(cands.size(), rel.size(), options.k);
  });
  EvalResult r;
  r.samples = samples.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    r.model += ours[i];
    r.popularity += pop[i];
    r.random += rnd[i];
  }
  const auto n = static_cast<double>(samples.size());
  r.model = r.model / n;
  r.popularity = r.popularity / n;
  r.random = r.random / n;
  r.per_sample = std::move(ours);
  return r;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  std::size_t k = 10;
  std::size_t workers = 1;
  std::ostream* log = nullptr;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;            // mean batch objective
  double validation_ndcg = 0.0;  // NaN without a validation set
};

/// Owns Θ and its optimizer. Sequential over batches; every random draw comes
/// from one generator seeded at construction.
template <class T>
class Trainer {
 public:
  Trainer(ParamSet<T> params, GraphContext& ctx, const PrimitiveEmbeddings& prims, std::uint64_t seed,
          TrainOptions options = {})
      : params_(std::move(params)),
        ctx_(ctx),
        prims_(prims),
        optimizer_(params_.tensors(), nk::AdamOptions{ctx.config().learning_rate, 0.9, 0.999, 1e-8}),
        rng_(model::derive_seed(seed, "trainer")),
        options_(options) {}

  const ParamSet<T>& params() const { return params_; }
  ParamSet<T>& params() { return params_; }
  std::size_t step_count() const { return optimizer_.step_count(); }
  const std::vector<EpochRecord>& history() const { return history_; }
  std::size_t best_epoch() const { return best_epoch_; }

  /// One pass over `train` in shuffled mini-batches with fresh negatives.
  /// Returns the mean batch objective.
  double run_epoch(std::span<const TrainingSample> train, const UserItems& seen) {
    if (train.empty()) throw ContractViolation("train: empty training split");
    const auto& config = ctx_.config();
    const std::size_t num_items = ctx_.catalog().num_items();
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(num_items - 1));

    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<model::Triple> batch;
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = train[order[i]];
        model::Triple tr;
        tr.sample = &s;
        tr.positives = s.future;
        const auto& user_items = seen.of(s.user);
        if (user_items.size() >= num_items) throw DataError("user " + std::to_string(s.user) + " has no negative items");
        for (std::size_t p = 0; p < s.future.size(); ++p) {
          std::uint32_t v;
          do v = pick(rng_);
          while (user_items.contains(v));
          tr.negatives.push_back(v);
        }
        batch.push_back(std::move(tr));
      }
      auto loss = model::batch_loss(params_, ctx_, prims_, std::span<const model::Triple>(batch));
      total += static_cast<double>(loss.total.item());
      ++batches;
      nk::backward(loss.total);
      optimizer_.step();
      optimizer_.zero_grad();
    }
    return total / static_cast<double>(batches);
  }

  /// Epoch loop with early stopping on validation NDCG@k; Θ ends at the best
  /// validation epoch (or the last one without validation data).
  void fit(std::span<const TrainingSample> train, std::span<const TrainingSample> validation, const UserItems& seen,
           const PopularityRanker& popularity) {
    EvalOptions eval_options;
    eval_options.k = options_.k;
    eval_options.workers = options_.workers;
    double best = -1.0;
    std::size_t since_best = 0;
    auto best_values = params_.snapshot();
    for (std::size_t epoch = 1; epoch <= options_.max_epochs; ++epoch) {
      EpochRecord rec;
      rec.epoch = epoch;
      rec.loss = run_epoch(train, seen);
      rec.validation_ndcg = std::nan("");
      if (!validation.empty()) {
        rec.validation_ndcg = evaluate(params_, ctx_, prims_, validation, seen, popularity, eval_options).model.ndcg;
      }
      history_.push_back(rec);
      if (options_.log) {
        *options_.log << "epoch " << epoch << " loss " << rec.loss << " val_ndcg@" << options_.k << ' '
                      << rec.validation_ndcg << '\n';
      }
      if (validation.empty()) {
        best_epoch_ = epoch;
        continue;
      }
      if (rec.validation_ndcg > best) {
        best = rec.validation_ndcg;
        best_epoch_ = epoch;
        best_values = params_.snapshot();
        since_best = 0;
      } else if (++since_best >= options_.patience) {
        break;
      }
    }
    if (!validation.empty()) params_.restore(best_values);
  }

 private:
  ParamSet<T> params_;
  GraphContext& ctx_;
  const PrimitiveEmbeddings& prims_;
  nk::Adam<T> optimizer_;
  std::mt19937_64 rng_;
  TrainOptions options_;
  std::vector<EpochRecord> history_;
  std::size_t best_epoch_ = 0;
};

/// Loss curve as two columns: epoch, loss.
inline void write_loss_curve(std::ostream& os, const std::vector<EpochRecord>& history,
                             const std::vector<std::string>& header = {}) {
  for (const auto& h : header) os << "# " << h << '\n';
  char buf[64];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu %.17g\n", r.epoch, r.loss);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct RankingReport {
  std::string setting;  // csr, isr or tsr
  std::size_t k = 10;
  Metrics metrics;
  std::size_t samples = 0;
  Metrics popularity;
  Metrics random;
  std::vector<std::pair<std::string, std::string>> config;
  std::uint64_t seed = 0;

  void validate() const {
    if (samples == 0) throw ContractViolation("report: no samples");
    for (double m : {metrics.precision, metrics.recall, metrics.ndcg})
      if (!(m >= 0.0 && m <= 1.0 + 1e-12)) throw ContractViolation("report: metric outside [0, 1]");
  }

  void write_kv(std::ostream& os) const {
    auto num = [](double v) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    os << "setting=" << setting << '\n' << "k=" << k << '\n' << "samples=" << samples << '\n';
    os << "precision=" << num(metrics.precision) << '\n'
       << "recall=" << num(metrics.recall) << '\n'
       << "ndcg=" << num(metrics.ndcg) << '\n';
    os << "popularity.precision=" << num(popularity.precision) << '\n'
       << "popularity.recall=" << num(popularity.recall) << '\n'
       << "popularity.ndcg=" << num(popularity.ndcg) << '\n';
    os << "random.precision=" << num(random.precision) << '\n'
       << "random.recall=" << num(random.recall) << '\n'
       << "random.ndcg=" << num(random.ndcg) << '\n';
    os << "seed=" << seed << '\n';
    for (const auto& [key, value] : config) os << "config." << key << '=' << value << '\n';
  }

  nlohmann::ordered_json to_json() const {
    auto metric = [](const Metrics& m) {
      return nlohmann::ordered_json{{"precision", m.precision}, {"recall", m.recall}, {"ndcg", m.ndcg}};
    };
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [key, value] : config) cfg[key] = value;
    return {{"setting", setting},
            {"k", k},
            {"samples", samples},
            {"model", metric(metrics)},
            {"popularity", metric(popularity)},
            {"random", metric(random)},
            {"seed", seed},
            {"config", cfg}};
  }
};

inline RankingReport make_report(std::string setting, const EvalResult& r, std::size_t k,
                                 std::vector<std::pair<std::string, std::string>> config, std::uint64_t seed) {
  RankingReport rep{std::move(setting), k, r.model, r.samples, r.popularity, r.random, std::move(config), seed};
  rep.validate();
  return rep;
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

/// Users present in the graph-building samples of `ctx` must not reappear
/// among the scored users.
inline void check_disjoint_users(const GraphContext& ctx, std::span<const TrainingSample> scored) {
  std::unordered_set<std::uint32_t> train_users;
  for (const auto& s : ctx.graph_samples()) train_users.insert(s.user);
  for (const auto& s : scored) {
    if (train_users.contains(s.user)) {
      throw ProtocolError("inductive evaluation: user " + std::to_string(s.user) + " also appears in training data");
    }
  }
}

template <class T>
EvalResult eval_csr(const ParamSet<T>& params, GraphContext& ctx, const PrimitiveEmbeddings& prims,
                    std::span<const TrainingSample> all_samples, const EvalOptions& options) {
  const auto test = ingest::filter_split(std::vector<TrainingSample>(all_samples.begin(), all_samples.end()),
                                         ingest::Split::test);
  UserItems seen(all_samples, ctx.catalog().num_users());
  PopularityRanker pop(all_samples, ctx.catalog().num_items());
  return evaluate(params, ctx, prims, test, seen, pop, options);
}

/// Every window of every held-out user is scored; none of them may appear in
/// the context's graph data.
template <class T>
EvalResult eval_isr(const ParamSet<T>& params, GraphContext& ctx, const PrimitiveEmbeddings& prims,
                    std::span<const TrainingSample> heldout, const EvalOptions& options) {
  check_disjoint_users(ctx, heldout);
  UserItems seen(ctx.graph_samples(), ctx.catalog().num_users());
  PopularityRanker pop(ctx.graph_samples(), ctx.catalog().num_items());
  return evaluate(params, ctx, prims, heldout, seen, pop, options);
}

/// Zero-shot on a target domain: Θ as given, target primitives from their own
/// seed, attributes excluded.
template <class T>
EvalResult eval_tsr(const ParamSet<T>& params, GraphContext& target_ctx, const PrimitiveEmbeddings& target_prims,
                    std::span<const TrainingSample> target_samples, const EvalOptions& options) {
  if (target_ctx.attributes()) throw ProtocolError("transfer evaluation requires attributes to be disabled");
  return eval_csr(params, target_ctx, target_prims, target_samples, options);
}

}  // namespace retagnn::harness
