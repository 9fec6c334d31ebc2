#pragma once

// Command-line driver: ingest, train, eval, transfer, dump-subgraph and
// export-attention. Exit codes: 0 success, 2 configuration error, 3 data
// error, 4 numeric divergence.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "retagnn/errors.hpp"
#include "retagnn/harness.hpp"
#include "retagnn/ingest.hpp"
#include "retagnn/recommender.hpp"
#include "retagnn/run_config.hpp"
#include "retagnn/ssa.hpp"
#include "retagnn/subgraph.hpp"
#include "retagnn/synthetic.hpp"

namespace retagnn::cli {

namespace fs = std::filesystem;
using config::RunConfig;

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kNumericError = 4 };

inline fs::path out_dir(const RunConfig& c) {
  fs::path p(c.out);
  fs::create_directories(p);
  return p;
}

inline fs::path bundle_dir(const RunConfig& c) { return c.bundle.empty() ? fs::path(c.out) / "bundle" : fs::path(c.bundle); }
inline fs::path checkpoint_path(const RunConfig& c) {
  return c.checkpoint.empty() ? fs::path(c.out) / "model.ckpt" : fs::path(c.checkpoint);
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  return os;
}

inline std::vector<std::string> artifact_header(const RunConfig& c, const std::string& command) {
  auto lines = config::echo_lines(c);
  lines.insert(lines.begin(), "command=" + command);
  return lines;
}

/// Resolved keys plus the fixed protocol choices a report should carry.
inline std::vector<std::pair<std::string, std::string>> report_meta(const RunConfig& c) {
  auto out = config::echo(c);
  out.emplace_back("window_split", "per user, chronological windows, 60/20/20 train/validation/test");
  out.emplace_back("subgraph_seeds", "user plus every session item");
  out.emplace_back("subsession_slots", "one slot per subsession, zeros outside it");
  out.emplace_back("seed_scope", "data split, primitives, init and sampling all derive from seed");
  return out;
}

/// Samples for the configured protocol. For isr, `train` holds the training
/// users' windows and `heldout` every window of the remaining users.
struct ProtocolSamples {
  std::vector<ingest::TrainingSample> train;
  std::vector<ingest::TrainingSample> heldout;
};

inline ProtocolSamples make_samples(const RunConfig& c, const std::vector<ingest::UserSequence>& sequences) {
  ProtocolSamples out;
  if (c.protocol == "csr") {
    out.train = ingest::make_csr_samples(sequences, c.model.t, c.model.g, c.stride);
  } else {
    auto split = ingest::make_isr_split(sequences, c.train_frac, model::derive_seed(c.seed, "isr-split"));
    out.train = ingest::make_csr_samples(split.train, c.model.t, c.model.g, c.stride);
    out.heldout = ingest::make_csr_samples(split.test, c.model.t, c.model.g, c.stride, out.train.size());
  }
  if (out.train.empty()) throw DataError("no sequence is long enough for t + g = " + std::to_string(c.model.t + c.model.g));
  return out;
}

inline void write_report(const RunConfig& c, const harness::RankingReport& report, std::ostream& log) {
  const auto dir = out_dir(c);
  {
    auto os = open_out(dir / "report.txt");
    report.write_kv(os);
  }
  {
    auto os = open_out(dir / "report.json");
    os << report.to_json().dump(2) << '\n';
  }
  log << "setting=" << report.setting << " samples=" << report.samples << " P@" << report.k << '='
      << report.metrics.precision << " R@" << report.k << '=' << report.metrics.recall << " N@" << report.k << '='
      << report.metrics.ndcg << '\n';
}

inline harness::EvalOptions eval_options(const RunConfig& c) {
  harness::EvalOptions o;
  o.k = c.k;
  o.workers = c.workers;
  o.policy.exclude_history = c.exclude_history;
  o.policy.num_neg_eval = c.num_neg_eval;
  o.policy.seed = model::derive_seed(c.seed, "eval-negatives");
  return o;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_ingest(const RunConfig& c, std::ostream& log) {
  ingest::PreprocessResult data;
  if (c.dataset == "synthetic") {
    synthetic::SyntheticSpec spec;
    spec.users = c.synthetic_users;
    spec.items = c.synthetic_items;
    spec.attributes = c.synthetic_attributes;
    spec.clusters = c.synthetic_clusters;
    spec.emit_attributes = c.synthetic_attributes_enabled;
    spec.seed = model::derive_seed(c.seed, "synthetic");
    data = synthetic::generate(spec).data;
  } else if (c.dataset == "movielens" || c.dataset == "bookcrossing") {
    if (c.data_dir.empty()) throw ConfigError("data_dir is required for dataset " + c.dataset);
    const bool ml = c.dataset == "movielens";
    auto raw = ml ? ingest::load_movielens(c.data_dir) : ingest::load_bookcrossing(c.data_dir);
    auto positives = ingest::binarize(raw.interactions, ml ? ingest::kMovieLensThreshold : ingest::kBookCrossingThreshold);
    data = ingest::preprocess(positives, raw.catalog, c.min_interactions);
  } else {
    throw ConfigError("ingest: dataset must be movielens, bookcrossing or synthetic, got '" + c.dataset + "'");
  }
  const auto dir = bundle_dir(c);
  ingest::write_bundle(dir, data, artifact_header(c, "ingest"));
  log << "bundle written to " << dir.string() << '\n';
  ingest::write_stats(log, data.stats);
  return kOk;
}

template <class T>
int cmd_train(const RunConfig& c, std::ostream& log) {
  const auto bundle = ingest::read_bundle(bundle_dir(c));
  const auto samples = make_samples(c, bundle.sequences);
  const auto train = ingest::filter_split(samples.train, ingest::Split::train);
  const auto validation = ingest::filter_split(samples.train, ingest::Split::validation);
  if (train.empty()) throw DataError("training split is empty");

  model::GraphContext ctx(samples.train, bundle.catalog, c.model, true, &log);
  model::PrimitiveEmbeddings prims(model::derive_seed(c.seed, "primitives"), c.model.dim, c.primitive_range);
  harness::UserItems seen(samples.train, bundle.catalog.num_users());
  harness::PopularityRanker pop(samples.train, bundle.catalog.num_items());
  harness::TrainOptions opts;
  opts.max_epochs = c.max_epochs;
  opts.patience = c.patience;
  opts.k = c.k;
  opts.workers = c.workers;
  opts.log = &log;
  harness::Trainer<T> trainer(model::ParamSet<T>::init(c.model, c.seed), ctx, prims, c.seed, opts);
  trainer.fit(train, validation, seen, pop);

  const auto dir = out_dir(c);
  model::save_checkpoint(checkpoint_path(c), trainer.params(), config::echo_text(c), c.seed);
  auto curve = open_out(dir / "loss_curve.txt");
  harness::write_loss_curve(curve, trainer.history(), artifact_header(c, "train"));
  log << "best epoch " << trainer.best_epoch() << ", checkpoint " << checkpoint_path(c).string() << '\n';
  return kOk;
}

/// Structural keys and the seed follow the checkpoint unless the run sets them.
template <class T>
model::ParamSet<T> load_params(RunConfig& c, const fs::path& path, model::CheckpointHeader& header) {
  config::adopt_model_keys(c, model::read_checkpoint_header(path).config_text);
  config::validate(c);
  auto params = model::load_checkpoint<T>(path, c.model, &header);
  // The isr user split and primitives follow the training seed.
  if (!c.is_explicit("seed")) c.seed = header.seed;
  return params;
}

template <class T>
int cmd_eval(RunConfig c, std::ostream& log) {
  model::CheckpointHeader header;
  auto params = load_params<T>(c, checkpoint_path(c), header);
  const auto bundle = ingest::read_bundle(bundle_dir(c));
  const auto samples = make_samples(c, bundle.sequences);
  model::GraphContext ctx(samples.train, bundle.catalog, c.model, true, &log);
  model::PrimitiveEmbeddings prims(model::derive_seed(header.seed, "primitives"), c.model.dim, c.primitive_range);
  harness::EvalResult r;
  if (c.protocol == "csr") {
    r = harness::eval_csr(params, ctx, prims, samples.train, eval_options(c));
  } else {
    if (samples.heldout.empty()) throw DataError("isr: no held-out user has a complete window");
    r = harness::eval_isr(params, ctx, prims, samples.heldout, eval_options(c));
  }
  write_report(c, harness::make_report(c.protocol, r, c.k, report_meta(c), c.seed), log);
  return kOk;
}

template <class T>
int cmd_transfer(RunConfig c, std::ostream& log) {
  if (c.source.empty() || c.target.empty()) throw ConfigError("transfer needs both source and target");
  model::CheckpointHeader header;
  auto params = load_params<T>(c, c.source, header);
  if (c.reinit_embed_ffn) params.reinit_embed_ffn(c.model, model::derive_seed(c.seed, "target-embed"));
  const auto bundle = ingest::read_bundle(c.target);
  auto samples = ingest::make_csr_samples(bundle.sequences, c.model.t, c.model.g, c.stride);
  if (samples.empty()) throw DataError("target: no sequence is long enough");
  model::GraphContext ctx(samples, bundle.catalog, c.model, false, &log);
  model::PrimitiveEmbeddings prims(model::derive_seed(c.seed, "target-primitives"), c.model.dim, c.primitive_range);
  if (c.fine_tune_epochs > 0) {
    harness::UserItems seen(samples, bundle.catalog.num_users());
    harness::PopularityRanker pop(samples, bundle.catalog.num_items());
    harness::TrainOptions opts;
    opts.max_epochs = c.fine_tune_epochs;
    opts.patience = c.patience;
    opts.k = c.k;
    opts.workers = c.workers;
    opts.log = &log;
    harness::Trainer<T> trainer(params, ctx, prims, c.seed, opts);
    trainer.fit(ingest::filter_split(samples, ingest::Split::train),
                ingest::filter_split(samples, ingest::Split::validation), seen, pop);
    params = trainer.params();
  }
  auto r = harness::eval_tsr(params, ctx, prims, samples, eval_options(c));
  write_report(c, harness::make_report("tsr", r, c.k, report_meta(c), c.seed), log);
  return kOk;
}

inline int cmd_dump_subgraph(const RunConfig& c, std::ostream& log) {
  const auto bundle = ingest::read_bundle(bundle_dir(c));
  const auto samples = make_samples(c, bundle.sequences);
  const auto& pool = samples.train;
  const ingest::TrainingSample* found = nullptr;
  for (const auto& s : pool)
    if (s.id == c.sample_id) found = &s;
  for (const auto& s : samples.heldout)
    if (s.id == c.sample_id) found = &s;
  if (!found) throw ConfigError("no sample with id " + std::to_string(c.sample_id));
  if (c.slot > c.model.pi()) throw ConfigError("slot must be at most pi = " + std::to_string(c.model.pi()));

  model::GraphContext ctx(pool, bundle.catalog, c.model, true, &log);
  const auto w = ctx.slot_window(*found, c.slot);
  const std::size_t offset = w.begin - found->window.begin;
  std::span<const std::uint32_t> items(found->history.data() + offset, w.size());
  auto sg = subgraph::extract_for_session(*ctx.graph(w), found->user, items, c.model.hops, c.model.max_nodes_per_hop);
  const auto path = out_dir(c) / ("subgraph_" + std::to_string(c.sample_id) + "_slot" + std::to_string(c.slot) + ".txt");
  auto os = open_out(path);
  for (const auto& h : artifact_header(c, "dump-subgraph")) os << "# " << h << '\n';
  os << "# window " << w.begin << ' ' << w.end << " user " << found->user << '\n';
  sg.write(os);
  log << sg.size() << " nodes, " << sg.edges.size() << " directed edges -> " << path.string() << '\n';
  return kOk;
}

template <class T>
int cmd_export_attention(RunConfig c, std::ostream& log) {
  model::CheckpointHeader header;
  auto params = load_params<T>(c, checkpoint_path(c), header);
  if (c.model.ablation.no_ssa) throw ConfigError("export-attention: the model has no self-attention (no_ssa)");
  const auto bundle = ingest::read_bundle(bundle_dir(c));
  const auto samples = make_samples(c, bundle.sequences);
  model::GraphContext ctx(samples.train, bundle.catalog, c.model, true, &log);
  model::PrimitiveEmbeddings prims(model::derive_seed(header.seed, "primitives"), c.model.dim, c.primitive_range);
  nk::NoGradGuard guard;
  auto table = model::make_table(params, prims, harness::catalog_nodes(ctx), c.model.leaky_slope);
  const auto dir = out_dir(c);
  for (auto split : {ingest::Split::train, ingest::Split::validation}) {
    const auto subset = ingest::filter_split(samples.train, split);
    if (subset.empty()) continue;
    std::vector<std::vector<double>> long_betas, short_betas;
    for (const auto& s : subset) {
      auto emb = model::embed_sample(params, ctx, table, s);
      auto as_double = [](const nk::Tensor<T>& b) { return std::vector<double>(b.values().begin(), b.values().end()); };
      if (emb.long_beta.defined()) long_betas.push_back(as_double(emb.long_beta));
      for (const auto& b : emb.short_betas)
        if (b.rows() == c.model.tau) short_betas.push_back(as_double(b));
    }
    const std::string label = ingest::split_name(split);
    auto emit = [&](const std::string& name, const std::vector<std::vector<double>>& betas, std::size_t n) {
      if (betas.empty()) return;
      auto os = open_out(dir / name);
      for (const auto& h : artifact_header(c, "export-attention")) os << "# " << h << '\n';
      os << "# split=" << label << " sessions=" << betas.size() << '\n';
      ssa::write_matrix(os, ssa::mean_attention(betas, n), n);
      log << "wrote " << (dir / name).string() << '\n';
    };
    emit("attention_long_" + label + ".txt", long_betas, c.model.t);
    emit("attention_short_" + label + ".txt", short_betas, c.model.tau);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int dispatch(const std::string& command, RunConfig& c, std::ostream& log) {
  if (command == "ingest") return cmd_ingest(c, log);
  if (command == "dump-subgraph") return cmd_dump_subgraph(c, log);
  const bool wide = c.precision == 64;
  if (command == "train") return wide ? cmd_train<double>(c, log) : cmd_train<float>(c, log);
  if (command == "eval") return wide ? cmd_eval<double>(c, log) : cmd_eval<float>(c, log);
  if (command == "transfer") return wide ? cmd_transfer<double>(c, log) : cmd_transfer<float>(c, log);
  if (command == "export-attention") return wide ? cmd_export_attention<double>(c, log) : cmd_export_attention<float>(c, log);
  throw ConfigError("unknown command " + command);
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Sequential recommender over user, item and attribute subgraphs"};
  app.require_subcommand(1);
  // "-h" would collide with the hop-count key --h.
  app.set_help_flag("--help", "print this help and exit");
  std::string config_file;
  app.add_option("--config", config_file, "key=value configuration file");

  const auto& defs = config::keys();
  std::vector<std::string> values(defs.size());
  std::vector<CLI::Option*> options(defs.size());
  for (std::size_t i = 0; i < defs.size(); ++i) {
    const auto flag = "--" + config::to_flag(defs[i].name);
    if (defs[i].is_flag) {
      options[i] = app.add_option(flag, values[i], defs[i].help)->expected(0, 1)->default_str("true");
    } else {
      options[i] = app.add_option(flag, values[i], defs[i].help);
    }
  }
  const char* commands[][2] = {{"ingest", "load a raw dataset and write a normalized bundle"},
                               {"train", "train on a bundle and write a checkpoint and loss curve"},
                               {"eval", "evaluate a checkpoint (csr or isr) and write a ranking report"},
                               {"transfer", "evaluate a source checkpoint on a target bundle"},
                               {"dump-subgraph", "write the enclosing subgraph of one sample"},
                               {"export-attention", "write mean self-attention matrices"}};
  for (auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    RunConfig c;
    if (!config_file.empty()) config::apply_file(c, config_file);
    for (std::size_t i = 0; i < defs.size(); ++i) {
      if (options[i]->count() == 0) continue;
      config::set_value(c, defs[i].name, values[i].empty() && defs[i].is_flag ? "true" : values[i]);
    }
    config::validate(c);
    const std::string command = app.get_subcommands().front()->get_name();
    out << "# command=" << command << '\n';
    for (const auto& [k, v] : config::echo(c)) out << "# " << k << '=' << v << '\n';
    return dispatch(command, c, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ProtocolError& e) {
    err << "protocol error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  }
}

}  // namespace retagnn::cli
