// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Pass criterion ids (C1 .. C11) to run a subset. RETAGNN_VERBOSE=1 logs
// training progress to stderr.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "retagnn/harness.hpp"
#include "retagnn/ingest.hpp"
#include "retagnn/recommender.hpp"
#include "retagnn/ssa.hpp"
#include "retagnn/subgraph.hpp"
#include "retagnn/synthetic.hpp"
#include "support/oracles.hpp"

namespace graph = retagnn::graph;
namespace harness = retagnn::harness;
namespace ingest = retagnn::ingest;
namespace model = retagnn::model;
namespace nk = retagnn::nk;
namespace ssa = retagnn::ssa;
namespace sub = retagnn::subgraph;
namespace synthetic = retagnn::synthetic;
using Tensor = nk::Tensor<double>;
using graph::NodeRef;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

bool verbose() {
  const char* v = std::getenv("RETAGNN_VERBOSE");
  return v && *v && std::string(v) != "0";
}

std::size_t workers() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---------------------------------------------------------------------------
// Synthetic training runs shared by C7 - C11
// ---------------------------------------------------------------------------

model::ModelConfig synthetic_config() {
  model::ModelConfig c;
  c.dim = 16;
  c.learning_rate = 0.005;
  return c;
}

synthetic::SyntheticSpec domain_a(std::uint64_t seed) {
  synthetic::SyntheticSpec s;  // 300 users, 200 items, 8 attribute values, 4 clusters
  s.seed = model::derive_seed(seed, "synthetic");
  return s;
}

struct RunResult {
  harness::EvalResult eval;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double seconds = 0.0;
};

/// Trains on the train windows of `samples` with early stopping on the
/// validation windows, then scores the test windows.
struct CsrRun {
  synthetic::SyntheticData data;
  std::vector<ingest::TrainingSample> samples;
  model::ModelConfig config;
  std::unique_ptr<model::GraphContext> ctx;
  std::unique_ptr<model::PrimitiveEmbeddings> prims;
  std::unique_ptr<harness::Trainer<double>> trainer;
  RunResult result;
};

std::unique_ptr<CsrRun> run_csr(std::uint64_t seed, model::Ablation ablation, std::size_t max_epochs = 30) {
  const auto start = Clock::now();
  auto run = std::make_unique<CsrRun>();
  run->data = synthetic::generate(domain_a(seed));
  run->config = synthetic_config();
  run->config.ablation = ablation;
  const auto& cat = run->data.data.catalog;
  run->samples = ingest::make_csr_samples(run->data.data.sequences, run->config.t, run->config.g);
  run->ctx = std::make_unique<model::GraphContext>(run->samples, cat, run->config);
  run->prims = std::make_unique<model::PrimitiveEmbeddings>(model::derive_seed(seed, "primitives"), run->config.dim);
  harness::UserItems seen(run->samples, cat.num_users());
  harness::PopularityRanker pop(run->samples, cat.num_items());
  harness::TrainOptions opt;
  opt.max_epochs = max_epochs;
  opt.workers = workers();
  if (verbose()) opt.log = &std::cerr;
  run->trainer = std::make_unique<harness::Trainer<double>>(model::ParamSet<double>::init(run->config, seed), *run->ctx,
                                                             *run->prims, seed, opt);
  run->trainer->fit(ingest::filter_split(run->samples, ingest::Split::train),
                    ingest::filter_split(run->samples, ingest::Split::validation), seen, pop);
  harness::EvalOptions eo;
  eo.workers = workers();
  run->result.eval = harness::eval_csr(run->trainer->params(), *run->ctx, *run->prims, run->samples, eo);
  run->result.epochs = run->trainer->history().size();
  run->result.best_epoch = run->trainer->best_epoch();
  run->result.seconds = seconds_since(start);
  if (verbose()) {
    std::cerr << "run seed=" << seed << " ablation=";
    for (auto n : model::Ablation::kNames)
      if (ablation.flag(n)) std::cerr << n;
    std::cerr << " N@10=" << run->result.eval.model.ndcg << " pop=" << run->result.eval.popularity.ndcg
              << " epochs=" << run->result.epochs << " best=" << run->result.best_epoch << " " << run->result.seconds
              << "s\n";
  }
  return run;
}

/// Test-set N@10 per (seed, ablation name); "" is the full model.
std::map<std::pair<std::uint64_t, std::string>, RunResult>& run_cache() {
  static std::map<std::pair<std::uint64_t, std::string>, RunResult> cache;
  return cache;
}

const RunResult& cached_run(std::uint64_t seed, const std::string& ablation) {
  auto key = std::make_pair(seed, ablation);
  auto& cache = run_cache();
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto run = run_csr(seed, ablation.empty() ? model::Ablation{} : model::Ablation::only(ablation));
  return cache.emplace(key, run->result).first->second;
}

constexpr std::uint64_t kSeeds[] = {1, 2, 3};

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

Verdict c1_gradients() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string where;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto g = oracle::random_kernel_graph(seed);
    auto r = oracle::check_gradients(g.build, g.params);
    if (r.max_error > worst) worst = r.max_error, where = "kernel graph " + std::to_string(seed) + ": " + r.worst;
  }
  auto toy = oracle::make_toy_model();
  const std::size_t toy_nodes = toy->ctx->prepare(toy->samples[0], 0)->subgraph_nodes;
  auto params = model::ParamSet<double>::init(toy->config, 5);
  std::vector<model::Triple> batch{{&toy->samples[0], {2}, {3}}, {&toy->samples[1], {4}, {0}}};
  auto build = [&] { return model::batch_loss(params, *toy->ctx, *toy->prims, std::span<const model::Triple>(batch)).total; };
  auto r = oracle::check_gradients(build, params.tensors());
  if (r.max_error > worst) worst = r.max_error, where = "toy model: " + r.worst;
  const double secs = seconds_since(start);
  const bool pass = worst <= 1e-4 && toy_nodes == 10 && secs < 60.0;
  return {pass, "max rel err " + sci(worst) + " over 50 kernel graphs + toy model (" + std::to_string(toy_nodes) +
                    "-node subgraph, " + std::to_string(r.entries) + " entries), " + fmt(secs, 1) + "s" +
                    (pass ? "" : "; worst at " + where)};
}

Verdict c2_subgraphs() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  std::size_t mismatches = 0, checks = 0, largest = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto g = oracle::random_tripartite(rng);
    largest = std::max(largest, g.users + g.items + g.attributes);
    auto parent = g.build();
    std::vector<NodeRef> seeds{graph::user_node(static_cast<std::uint32_t>(rng() % g.users))};
    for (std::size_t k = rng() % 4; k > 0; --k) seeds.push_back(graph::item_node(static_cast<std::uint32_t>(rng() % g.items)));
    const auto edges = g.undirected();
    for (std::size_t h = 0; h <= 3; ++h) {
      auto got = oracle::as_sets(sub::extract(parent, seeds, h));
      auto want = oracle::brute_force_subgraph(edges, seeds, h);
      ++checks;
      if (got.nodes != want.nodes || got.edges != want.edges) ++mismatches;
    }
  }
  const double secs = seconds_since(start);
  return {mismatches == 0 && largest <= 200 && secs < 60.0,
          std::to_string(checks - mismatches) + "/" + std::to_string(checks) +
              " extractions match the shortest-path oracle (graphs up to " + std::to_string(largest) + " nodes), " +
              fmt(secs, 1) + "s"};
}

Verdict c3_causality() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0, 1);
  auto draw = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal(rng);
    return v;
  };
  bool leak = false, shape_ok = true;
  double worst_row = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 11, d = 8;
    auto p = ssa::SsaParams<double>::init(d, rng, "ssa");
    auto v = draw(n * d);
    auto base = ssa::ssa_forward(p, Tensor::constant({n, d}, v));
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < n; ++c) {
        s += base.beta.at(r, c);
        if (c > r && base.beta.at(r, c) != 0.0) shape_ok = false;
      }
      worst_row = std::max(worst_row, std::abs(s - 1.0));
    }
    const std::size_t cut = 1 + static_cast<std::size_t>(rng() % (n - 1));  // perturb positions >= cut
    for (std::size_t i = cut * d; i < n * d; ++i) v[i] += normal(rng);
    auto moved = ssa::ssa_forward(p, Tensor::constant({n, d}, v));
    for (std::size_t r = 0; r < cut; ++r)
      for (std::size_t k = 0; k < d; ++k) leak = leak || moved.z.at(r, k) != base.z.at(r, k);
  }

  // Users u1,u2 -> 0,1; items v1..v3 -> 0..2; a2 -> 0.
  graph::TripartiteGraph toy(2, 3, 1, {0, 1}, {{0, 0}, {0, 2}, {1, 1}, {1, 2}}, {{0, 0}, {1, 0}, {2, 0}});
  const std::vector<NodeRef> seeds{graph::user_node(0), graph::item_node(1)};
  auto sg = sub::extract(toy, seeds, 2);
  const std::set<NodeRef> got(sg.local_to_global.begin(), sg.local_to_global.end());
  const std::set<NodeRef> want{graph::user_node(0), graph::user_node(1), graph::item_node(0),
                               graph::item_node(1), graph::item_node(2), graph::attribute_node(0)};
  const bool pass = !leak && shape_ok && worst_row <= 1e-9 && got == want;
  return {pass, std::string("upstream outputs ") + (leak ? "changed" : "unchanged") + " under downstream perturbation; " +
                    "upper triangle " + (shape_ok ? "exactly zero" : "NONZERO") + "; max |row sum - 1| " +
                    sci(worst_row) + "; toy subgraph " + (got == want ? "= {u1,u2,v1,v2,v3,a2}" : "differs")};
}

Verdict c4_loss() {
  auto pos = Tensor::constant({1, 4}, {0.3, -2.0, 5.0, 0.0});
  const double per_pair = model::bpr_term(pos, pos).item() / 4.0;
  const double bpr_err = std::abs(per_pair + std::log(0.5));

  auto toy = oracle::make_toy_model();
  auto params = model::ParamSet<double>::init(toy->config, 2);
  for (auto* stack : {&params.long_stack, &params.short_stack})
    for (std::size_t l = 1; l < stack->depth(); ++l)
      for (std::size_t r = 0; r < 4; ++r) {
        auto src = stack->layers[0].w_rel[r].values();
        std::copy(src.begin(), src.end(), stack->layers[l].w_rel[r].mutable_values().begin());
      }
  const double rar = model::rar_term(params).item();

  auto a = oracle::make_toy_model();
  auto b = oracle::make_toy_model();
  a->config.lambda = 0.0;
  b->config.ablation.no_rar = true;
  a->ctx = std::make_unique<model::GraphContext>(a->samples, a->catalog, a->config);
  b->ctx = std::make_unique<model::GraphContext>(b->samples, b->catalog, b->config);
  auto pa = model::ParamSet<double>::init(a->config, 3);
  auto pb = model::ParamSet<double>::init(b->config, 3);
  std::vector<model::Triple> ba{{&a->samples[0], {2}, {3}}, {&a->samples[1], {4}, {0}}};
  std::vector<model::Triple> bb{{&b->samples[0], {2}, {3}}, {&b->samples[1], {4}, {0}}};
  const double la = model::batch_loss(pa, *a->ctx, *a->prims, std::span<const model::Triple>(ba)).total.item();
  const double lb = model::batch_loss(pb, *b->ctx, *b->prims, std::span<const model::Triple>(bb)).total.item();
  const bool pass = bpr_err <= 1e-9 && rar == 0.0 && la == lb;
  return {pass, "per-pair BPR at equal scores off -log 0.5 by " + sci(bpr_err) + "; tied W_r RAR = " + sci(rar) +
                    "; lambda=0 vs no_rar loss " + (la == lb ? "identical" : "differ")};
}

Verdict c5_density() {
  struct Row {
    const char* name;
    std::size_t users, items, interactions, attrs;
    double expected;
  };
  const Row rows[] = {{"ML", 1204, 3952, 125112, 20, 0.0263}, {"IG", 7943, 4687, 215927, 32, 0.0058},
                      {"BC", 52406, 41264, 1856747, 0, 0.0009}};
  bool pass = true;
  std::string detail;
  for (const auto& r : rows) {
    const double d = ingest::make_stats(r.users, r.items, r.interactions, r.attrs).density;
    pass = pass && std::abs(d - r.expected) <= 1e-4;
    detail += std::string(detail.empty() ? "" : ", ") + r.name + " " + fmt(d, 5);
  }
  return {pass, "densities " + detail};
}

Verdict c6_metrics() {
  std::size_t cases = 0, mismatches = 0;
  auto compare = [&](const std::vector<std::uint32_t>& ranked, const std::vector<std::uint32_t>& relevant, std::size_t k) {
    auto got = harness::metrics_at_k(ranked, relevant, k);
    auto want = oracle::reference_metrics(ranked, relevant, k);
    ++cases;
    if (got.precision != want.precision || got.recall != want.recall || got.ndcg != want.ndcg) ++mismatches;
  };
  // Every ordering of 7 items against a spread of relevant sets.
  std::vector<std::uint32_t> ranked(7);
  std::iota(ranked.begin(), ranked.end(), 0u);
  do {
    for (unsigned mask = 1; mask < 128; mask += 9) {
      std::vector<std::uint32_t> rel;
      for (std::uint32_t v = 0; v < 7; ++v)
        if (mask & (1u << v)) rel.push_back(v);
      compare(ranked, rel, 10);
      compare(ranked, rel, 3);
    }
  } while (std::next_permutation(ranked.begin(), ranked.end()));
  // Every relevant subset of a 20-item ranking.
  std::vector<std::uint32_t> twenty(20);
  std::iota(twenty.begin(), twenty.end(), 0u);
  std::shuffle(twenty.begin(), twenty.end(), std::mt19937_64(6));
  for (std::uint32_t mask = 1; mask < (1u << 20); mask += 7) {
    std::vector<std::uint32_t> rel;
    for (std::uint32_t v = 0; v < 20; ++v)
      if (mask & (1u << v)) rel.push_back(v);
    compare(twenty, rel, 10);
  }
  const std::vector<std::uint32_t> top{5, 1, 2, 3, 4, 0, 6, 7, 8, 9};
  const double first = harness::metrics_at_k(top, std::vector<std::uint32_t>{5}, 10).ndcg;
  const double third = harness::metrics_at_k(top, std::vector<std::uint32_t>{2}, 10).ndcg;
  const bool pass = mismatches == 0 && first == 1.0 && std::abs(third - 0.5) <= 1e-15;
  return {pass, std::to_string(cases - mismatches) + "/" + std::to_string(cases) +
                    " cases equal the reference exactly; rank-1 NDCG " + fmt(first) + ", rank-3 NDCG " + fmt(third)};
}

Verdict c7_csr() {
  bool pass = true;
  std::string detail;
  double longest = 0.0;
  for (auto seed : kSeeds) {
    const auto& r = cached_run(seed, "");
    const double ratio = r.eval.model.ndcg / r.eval.popularity.ndcg;
    pass = pass && r.eval.model.ndcg >= 1.2 * r.eval.popularity.ndcg && r.epochs <= 30;
    longest = std::max(longest, r.seconds);
    detail += std::string(detail.empty() ? "" : "; ") + "seed " + std::to_string(seed) + " N@10 " + fmt(r.eval.model.ndcg) +
              " vs popularity " + fmt(r.eval.popularity.ndcg) + " (x" + fmt(ratio, 2) + ", " + std::to_string(r.epochs) +
              " epochs)";
  }
  pass = pass && longest < 20 * 60;
  return {pass, detail + "; need x1.20, slowest run " + fmt(longest, 0) + "s"};
}

Verdict c8_inductive() {
  const std::uint64_t seed = 1;
  auto data = synthetic::generate(domain_a(seed));
  const auto& cat = data.data.catalog;
  auto config = synthetic_config();
  auto split = ingest::make_isr_split(data.data.sequences, 0.7, model::derive_seed(seed, "isr-split"));
  auto train = ingest::make_csr_samples(split.train, config.t, config.g);
  auto heldout = ingest::make_csr_samples(split.test, config.t, config.g, 0, train.size());
  model::GraphContext ctx(train, cat, config);
  model::PrimitiveEmbeddings prims(model::derive_seed(seed, "primitives"), config.dim);
  harness::UserItems seen(train, cat.num_users());
  harness::PopularityRanker pop(train, cat.num_items());
  harness::TrainOptions opt;
  opt.workers = workers();
  if (verbose()) opt.log = &std::cerr;
  harness::Trainer<double> trainer(model::ParamSet<double>::init(config, seed), ctx, prims, seed, opt);
  trainer.fit(ingest::filter_split(train, ingest::Split::train), ingest::filter_split(train, ingest::Split::validation),
              seen, pop);

  const auto steps = trainer.step_count();
  const auto before = trainer.params().snapshot();
  harness::EvalOptions eo;
  eo.workers = workers();
  harness::EvalResult r;
  bool finite = true;
  try {
    r = harness::eval_isr(trainer.params(), ctx, prims, heldout, eo);
  } catch (const retagnn::NumericError&) {
    finite = false;
  }
  const bool frozen = trainer.step_count() == steps && trainer.params().snapshot() == before;
  const bool pass = finite && frozen && r.model.ndcg > r.popularity.ndcg;
  return {pass, std::to_string(split.test.size()) + " held-out users (" + std::to_string(heldout.size()) +
                    " windows): N@10 " + fmt(r.model.ndcg) + " vs popularity " + fmt(r.popularity.ndcg) +
                    "; optimizer steps " + std::to_string(steps) + (frozen ? " unchanged" : " CHANGED") +
                    "; scores " + (finite ? "finite" : "NON-FINITE")};
}

Verdict c9_transfer() {
  namespace fs = std::filesystem;
  const std::uint64_t seed = 1;
  auto config = synthetic_config();

  // Domain A, attributes disabled as in every transfer run.
  auto a = synthetic::generate(domain_a(seed));
  auto a_samples = ingest::make_csr_samples(a.data.sequences, config.t, config.g);
  model::GraphContext a_ctx(a_samples, a.data.catalog, config, false);
  model::PrimitiveEmbeddings a_prims(model::derive_seed(seed, "primitives"), config.dim);
  harness::UserItems seen(a_samples, a.data.catalog.num_users());
  harness::PopularityRanker pop(a_samples, a.data.catalog.num_items());
  harness::TrainOptions opt;
  opt.workers = workers();
  if (verbose()) opt.log = &std::cerr;
  harness::Trainer<double> trainer(model::ParamSet<double>::init(config, seed), a_ctx, a_prims, seed, opt);
  trainer.fit(ingest::filter_split(a_samples, ingest::Split::train),
              ingest::filter_split(a_samples, ingest::Split::validation), seen, pop);
  const auto ckpt = fs::temp_directory_path() / "retagnn_acceptance_transfer.ckpt";
  model::save_checkpoint(ckpt, trainer.params(), "", seed);

  // Domain B: other users, items and attribute vocabulary.
  synthetic::SyntheticSpec spec_b;
  spec_b.users = 240;
  spec_b.items = 150;
  spec_b.attributes = 6;
  spec_b.clusters = 3;
  spec_b.seed = model::derive_seed(seed, "domain-b");
  auto b = synthetic::generate(spec_b);

  bool loaded = true;
  model::ParamSet<double> theta;
  try {
    theta = model::load_checkpoint<double>(ckpt, config);
  } catch (const retagnn::DataError&) {
    loaded = false;
  }
  // No extent of any tensor may be a catalog size of either domain.
  const std::set<std::size_t> sizes{a.data.catalog.num_users(), a.data.catalog.num_items(), a.data.catalog.num_attributes(),
                                    b.data.catalog.num_users(), b.data.catalog.num_items(), b.data.catalog.num_attributes()};
  bool size_free = loaded;
  if (loaded) {
    for (const auto& t : theta.tensors())
      for (auto e : t.shape()) size_free = size_free && !sizes.contains(e);
  }
  harness::EvalResult r;
  if (loaded) {
    auto b_samples = ingest::make_csr_samples(b.data.sequences, config.t, config.g);
    model::GraphContext b_ctx(b_samples, b.data.catalog, config, false);
    model::PrimitiveEmbeddings b_prims(model::derive_seed(seed, "target-primitives"), config.dim);
    harness::EvalOptions eo;
    eo.workers = workers();
    r = harness::eval_tsr(theta, b_ctx, b_prims, b_samples, eo);
  }
  std::filesystem::remove(ckpt);
  const bool pass = loaded && size_free && r.model.ndcg >= 1.5 * r.random.ndcg;
  return {pass, std::string("checkpoint ") + (loaded ? "loaded" : "FAILED to load") + ", shapes " +
                    (size_free ? "catalog-free" : "DEPEND on catalog") + "; target N@10 " + fmt(r.model.ndcg) +
                    " vs random " + fmt(r.random.ndcg) + " (x" + fmt(r.random.ndcg > 0 ? r.model.ndcg / r.random.ndcg : 0, 2) +
                    ", need x1.50)"};
}

Verdict c10_ablations() {
  std::size_t wins = 0;
  std::string detail;
  for (auto seed : kSeeds) {
    const double full = cached_run(seed, "").eval.model.ndcg;
    std::string largest;
    double largest_drop = -1e9;
    std::string drops;
    for (auto name : model::Ablation::kNames) {
      const double drop = full - cached_run(seed, std::string(name)).eval.model.ndcg;
      drops += std::string(drops.empty() ? "" : " ") + std::string(name) + "=" + fmt(drop);
      if (drop > largest_drop) largest_drop = drop, largest = name;
    }
    if (largest == "no_ragnn") ++wins;
    detail += std::string(detail.empty() ? "" : "; ") + "seed " + std::to_string(seed) + " largest drop " + largest +
              " [" + drops + "]";
  }
  return {wins >= 2, "no_ragnn largest in " + std::to_string(wins) + "/3 seeds; " + detail};
}

Verdict c11_determinism() {
  auto report = [] {
    auto run = run_csr(11, {}, 3);
    std::ostringstream os;
    harness::make_report("csr", run->result.eval, 10, {{"dim", "16"}, {"learning_rate", "0.005"}}, 11).write_kv(os);
    return os.str();
  };
  const auto first = report();
  const auto second = report();
  return {first == second && !first.empty(),
          std::string("two runs with seed 11 produced ") + (first == second ? "byte-identical" : "DIFFERENT") +
              " reports (" + std::to_string(first.size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"C1", c1_gradients}, {"C2", c2_subgraphs}, {"C3", c3_causality},  {"C4", c4_loss},
      {"C5", c5_density},   {"C6", c6_metrics},   {"C7", c7_csr},        {"C8", c8_inductive},
      {"C9", c9_transfer},  {"C10", c10_ablations}, {"C11", c11_determinism}};
  std::set<std::string> wanted(argv + 1, argv + argc);
  bool all_pass = true;
  for (const auto& [id, check] : criteria) {
    if (!wanted.empty() && !wanted.contains(id)) continue;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all_pass = all_pass && v.pass;
    std::cout << id << ' ' << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
  }
  return all_pass ? 0 : 1;
}
