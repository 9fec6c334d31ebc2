#pragma once

// Run configuration: every key has a snake_case name usable in a key=value
// file and a kebab-case command-line flag. Later layers override earlier ones:
// defaults, then the file, then the command line.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "retagnn/errors.hpp"
#include "retagnn/recommender.hpp"

namespace retagnn::config {

struct RunConfig {
  model::ModelConfig model;

  // data
  std::string dataset = "bundle";  // movielens, bookcrossing, synthetic or bundle
  std::string data_dir;
  std::string bundle;
  std::size_t min_interactions = 4;
  std::size_t stride = 0;  // 0: stride = g

  // synthetic generator
  std::size_t synthetic_users = 300;
  std::size_t synthetic_items = 200;
  std::size_t synthetic_attributes = 8;
  std::size_t synthetic_clusters = 4;
  bool synthetic_attributes_enabled = true;

  // run
  std::string out = ".";
  std::uint64_t seed = 42;
  std::string protocol = "csr";  // csr or isr
  double train_frac = 0.7;
  std::string checkpoint;
  std::string source;
  std::string target;
  std::size_t fine_tune_epochs = 0;
  bool reinit_embed_ffn = false;
  double primitive_range = 0.5;
  std::size_t workers = 1;
  int precision = 64;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;

  // evaluation
  std::size_t k = 10;
  std::size_t num_neg_eval = 0;
  bool exclude_history = true;

  // debug dumps
  std::size_t sample_id = 0;
  std::size_t slot = 0;

  /// Keys set by a config file or flag rather than left at their default.
  std::set<std::string> explicit_keys;

  bool is_explicit(const std::string& key) const { return explicit_keys.contains(key); }
};

// ---------------------------------------------------------------------------
// Value parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class Int>
Int parse_integer(const std::string& key, const std::string& v) {
  Int out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError("invalid integer for '" + key + "': " + v);
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError("invalid number for '" + key + "': " + v);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("invalid boolean for '" + key + "': " + v);
}

inline std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

struct KeyDef {
  std::string name;
  std::string help;
  bool is_flag = false;  // boolean: a bare command-line flag means true
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// Every recognized key, in echo order.
inline const std::vector<KeyDef>& keys() {
  using detail::format_real;
  using detail::parse_bool;
  using detail::parse_integer;
  using detail::parse_real;
  static const std::vector<KeyDef> table = [] {
    std::vector<KeyDef> t;
    auto size_key = [&t](std::string name, std::string help, std::size_t RunConfig::*member) {
      t.push_back({name, std::move(help), false,
                   [member, name](RunConfig& c, const std::string& v) { c.*member = parse_integer<std::size_t>(name, v); },
                   [member](const RunConfig& c) { return std::to_string(c.*member); }});
    };
    auto model_size = [&t](std::string name, std::string help, std::size_t model::ModelConfig::*member) {
      t.push_back({name, std::move(help), false,
                   [member, name](RunConfig& c, const std::string& v) { c.model.*member = parse_integer<std::size_t>(name, v); },
                   [member](const RunConfig& c) { return std::to_string(c.model.*member); }});
    };
    auto model_real = [&t](std::string name, std::string help, double model::ModelConfig::*member) {
      t.push_back({name, std::move(help), false,
                   [member, name](RunConfig& c, const std::string& v) { c.model.*member = parse_real(name, v); },
                   [member](const RunConfig& c) { return format_real(c.model.*member); }});
    };
    auto text_key = [&t](std::string name, std::string help, std::string RunConfig::*member) {
      t.push_back({name, std::move(help), false, [member](RunConfig& c, const std::string& v) { c.*member = v; },
                   [member](const RunConfig& c) { return c.*member; }});
    };
    auto bool_key = [&t](std::string name, std::string help, bool RunConfig::*member) {
      t.push_back({name, std::move(help), true,
                   [member, name](RunConfig& c, const std::string& v) { c.*member = parse_bool(name, v); },
                   [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }});
    };

    model_size("dim", "embedding dimension d", &model::ModelConfig::dim);
    model_size("t", "history length", &model::ModelConfig::t);
    model_size("g", "number of future targets", &model::ModelConfig::g);
    model_size("h", "subgraph hops", &model::ModelConfig::hops);
    model_size("tau", "short-term subsession length", &model::ModelConfig::tau);
    model_size("long_layers", "long-term RA-GNN depth", &model::ModelConfig::long_layers);
    model_size("short_layers", "short-term RA-GNN depth", &model::ModelConfig::short_layers);
    model_real("lambda", "relation-aware regularization weight", &model::ModelConfig::lambda);
    model_real("eta", "L2 weight", &model::ModelConfig::eta);
    model_real("learning_rate", "Adam learning rate", &model::ModelConfig::learning_rate);
    model_size("batch_size", "mini-batch size", &model::ModelConfig::batch_size);
    model_real("leaky_slope", "LeakyReLU negative slope", &model::ModelConfig::leaky_slope);
    t.push_back({"inter_layer_activation", "LeakyReLU between RA-GNN layers", true,
                 [](RunConfig& c, const std::string& v) { c.model.inter_layer_activation = parse_bool("inter_layer_activation", v); },
                 [](const RunConfig& c) { return std::string(c.model.inter_layer_activation ? "true" : "false"); }});
    model_size("max_nodes_per_hop", "cap on new subgraph nodes per hop (0: none)", &model::ModelConfig::max_nodes_per_hop);
    for (auto name : model::Ablation::kNames) {
      std::string key(name);
      t.push_back({key, "ablation: " + key, true,
                   [key](RunConfig& c, const std::string& v) { c.model.ablation.flag(key) = parse_bool(key, v); },
                   [key](const RunConfig& c) { return std::string(c.model.ablation.flag(key) ? "true" : "false"); }});
    }

    text_key("dataset", "movielens, bookcrossing, synthetic or bundle", &RunConfig::dataset);
    text_key("data_dir", "raw dataset directory", &RunConfig::data_dir);
    text_key("bundle", "normalized bundle directory (default: <out>/bundle)", &RunConfig::bundle);
    size_key("min_interactions", "drop users with fewer interactions", &RunConfig::min_interactions);
    size_key("stride", "window stride (0: g)", &RunConfig::stride);
    size_key("synthetic_users", "synthetic: users", &RunConfig::synthetic_users);
    size_key("synthetic_items", "synthetic: items", &RunConfig::synthetic_items);
    size_key("synthetic_attributes", "synthetic: attribute values", &RunConfig::synthetic_attributes);
    size_key("synthetic_clusters", "synthetic: latent clusters", &RunConfig::synthetic_clusters);
    bool_key("synthetic_attributes_enabled", "synthetic: emit attribute values", &RunConfig::synthetic_attributes_enabled);

    text_key("out", "output directory", &RunConfig::out);
    t.push_back({"seed", "master seed", false,
                 [](RunConfig& c, const std::string& v) { c.seed = parse_integer<std::uint64_t>("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    text_key("protocol", "csr or isr", &RunConfig::protocol);
    t.push_back({"train_frac", "isr: fraction of users used for training", false,
                 [](RunConfig& c, const std::string& v) { c.train_frac = parse_real("train_frac", v); },
                 [](const RunConfig& c) { return format_real(c.train_frac); }});
    text_key("checkpoint", "checkpoint path (default: <out>/model.ckpt)", &RunConfig::checkpoint);
    text_key("source", "transfer: source checkpoint", &RunConfig::source);
    text_key("target", "transfer: target bundle directory", &RunConfig::target);
    size_key("fine_tune_epochs", "transfer: target training epochs (0: zero-shot)", &RunConfig::fine_tune_epochs);
    bool_key("reinit_embed_ffn", "transfer: re-initialize the primitive embedding network", &RunConfig::reinit_embed_ffn);
    t.push_back({"primitive_range", "half-width of the uniform primitive base vectors", false,
                 [](RunConfig& c, const std::string& v) { c.primitive_range = parse_real("primitive_range", v); },
                 [](const RunConfig& c) { return format_real(c.primitive_range); }});
    size_key("workers", "evaluation threads", &RunConfig::workers);
    t.push_back({"precision", "32 or 64", false,
                 [](RunConfig& c, const std::string& v) { c.precision = parse_integer<int>("precision", v); },
                 [](const RunConfig& c) { return std::to_string(c.precision); }});
    size_key("max_epochs", "training epochs upper bound", &RunConfig::max_epochs);
    size_key("patience", "early-stopping patience in epochs", &RunConfig::patience);
    size_key("k", "ranking cutoff", &RunConfig::k);
    size_key("num_neg_eval", "sampled negatives per test case (0: full catalog)", &RunConfig::num_neg_eval);
    bool_key("exclude_history", "drop the session's own items from candidates", &RunConfig::exclude_history);
    size_key("sample_id", "dump-subgraph: sample id", &RunConfig::sample_id);
    size_key("slot", "dump-subgraph: 0 long-term, j short-term subsession j", &RunConfig::slot);
    return t;
  }();
  return table;
}

inline std::string to_flag(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return key;
}

inline const KeyDef& find_key(std::string_view name) {
  for (const auto& k : keys())
    if (k.name == name) return k;
  throw ConfigError("unknown configuration key '" + std::string(name) + "'");
}

inline void set_value(RunConfig& c, std::string_view key, const std::string& value) {
  const auto& def = find_key(key);
  def.set(c, value);
  c.explicit_keys.insert(def.name);
}

/// Applies `key = value` lines; '#' starts a comment.
inline void apply_text(RunConfig& c, std::istream& in, const std::string& origin) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    std::string_view view = detail::trim(std::string_view(line).substr(0, hash));
    if (view.empty()) continue;
    auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value");
    }
    auto key = detail::trim(view.substr(0, eq));
    auto value = detail::trim(view.substr(eq + 1));
    try {
      set_value(c, key, std::string(value));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void apply_file(RunConfig& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  apply_text(c, in, path.string());
}

/// Resolved key/value pairs, in table order.
inline std::vector<std::pair<std::string, std::string>> echo(const RunConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : keys()) out.emplace_back(k.name, k.get(c));
  return out;
}

inline std::string echo_text(const RunConfig& c) {
  std::string s;
  for (const auto& [k, v] : echo(c)) s += k + "=" + v + "\n";
  return s;
}

/// "key=value" lines for artifact headers.
inline std::vector<std::string> echo_lines(const RunConfig& c) {
  std::vector<std::string> out;
  for (const auto& [k, v] : echo(c)) out.push_back(k + "=" + v);
  return out;
}

/// Model-structure keys recorded in a checkpoint apply unless the run set them.
inline void adopt_model_keys(RunConfig& c, const std::string& checkpoint_config) {
  RunConfig stored;
  std::istringstream in(checkpoint_config);
  apply_text(stored, in, "checkpoint config");
  static const char* structural[] = {"dim", "t", "g", "tau", "long_layers", "short_layers", "h", "leaky_slope",
                                     "inter_layer_activation", "primitive_range"};
  for (const char* key : structural) {
    if (c.is_explicit(key) || !stored.is_explicit(key)) continue;
    find_key(key).set(c, find_key(key).get(stored));
  }
  for (auto name : model::Ablation::kNames) {
    const std::string key(name);
    if (!c.is_explicit(key) && stored.is_explicit(key)) c.model.ablation.flag(key) = stored.model.ablation.flag(key);
  }
}

inline void validate(const RunConfig& c) {
  c.model.validate();
  if (c.protocol != "csr" && c.protocol != "isr") throw ConfigError("protocol must be csr or isr, got '" + c.protocol + "'");
  if (c.precision != 32 && c.precision != 64) throw ConfigError("precision must be 32 or 64");
  if (!(c.train_frac > 0.0 && c.train_frac < 1.0)) throw ConfigError("train_frac must lie in (0, 1)");
  if (c.k == 0) throw ConfigError("k must be positive");
  if (c.workers == 0) throw ConfigError("workers must be positive");
  if (!(c.primitive_range > 0.0)) throw ConfigError("primitive_range must be positive");
}

}  // namespace retagnn::config
