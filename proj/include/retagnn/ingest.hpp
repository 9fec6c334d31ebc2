#pragma once

// Dataset loading, implicit-feedback conversion, per-user chronological
// sequences, and sample generation for the CSR / ISR / TSR protocols.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "retagnn/errors.hpp"

namespace retagnn::ingest {

struct Interaction {
  std::string user_id;
  std::string item_id;
  int rating = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Dense string-key ↔ index map. Indices follow insertion order.
class IdIndex {
 public:
  std::uint32_t intern(const std::string& key) {
    auto [it, inserted] = lookup_.try_emplace(key, static_cast<std::uint32_t>(names_.size()));
    if (inserted) names_.push_back(key);
    return it->second;
  }
  std::optional<std::uint32_t> find(const std::string& key) const {
    auto it = lookup_.find(key);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& name(std::uint32_t index) const { return names_.at(index); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> lookup_;
};

struct Catalog {
  IdIndex users;
  IdIndex items;
  IdIndex attributes;
  std::vector<std::vector<std::uint32_t>> item_attrs;  // item index → sorted attribute indices

  std::size_t num_users() const { return users.size(); }
  std::size_t num_items() const { return items.size(); }
  std::size_t num_attributes() const { return attributes.size(); }
  bool has_attributes() const { return attributes.size() > 0; }

  std::uint32_t add_item(const std::string& id) {
    auto idx = items.intern(id);
    if (item_attrs.size() < items.size()) item_attrs.resize(items.size());
    return idx;
  }
};

struct RatingScale {
  int min = 0;
  int max = 0;
};

inline constexpr RatingScale kMovieLensScale{1, 5};
inline constexpr RatingScale kBookCrossingScale{0, 10};
inline constexpr int kMovieLensThreshold = 4;
inline constexpr int kBookCrossingThreshold = 9;

struct RawDataset {
  std::vector<Interaction> interactions;
  Catalog catalog;
  RatingScale scale;
  std::size_t total_lines = 0;
  std::size_t malformed_lines = 0;
};

struct UserSequence {
  std::uint32_t user = 0;
  std::vector<std::uint32_t> items;       // chronological
  std::vector<std::int64_t> timestamps;   // parallel to items

  friend bool operator==(const UserSequence&, const UserSequence&) = default;
};

struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  std::size_t attributes = 0;
  double density = 0.0;
};

/// #interactions / (#users × #items).
inline double interaction_density(std::size_t interactions, std::size_t users, std::size_t items) {
  if (users == 0 || items == 0) return 0.0;
  return static_cast<double>(interactions) / (static_cast<double>(users) * static_cast<double>(items));
}

inline DatasetStats make_stats(std::size_t users, std::size_t items, std::size_t interactions, std::size_t attributes) {
  return {users, items, interactions, attributes, interaction_density(interactions, users, items)};
}

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

/// Both raw datasets are distributed in ISO-8859-1.
inline std::string latin1_to_utf8(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  for (unsigned char c : in) {
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back(static_cast<char>(0xC0 | (c >> 6)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    }
  }
  return out;
}

inline std::vector<std::string_view> split_on(std::string_view line, std::string_view delim) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      parts.push_back(line.substr(start));
      return parts;
    }
    parts.push_back(line.substr(start, pos - start));
    start = pos + delim.size();
  }
}

template <class Int>
std::optional<Int> parse_int(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  Int v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

inline std::string_view unquote(std::string_view s) {
  s = strip_cr(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open input file: " + path.string());
  return in;
}

inline void check_malformed(const RawDataset& raw, const std::filesystem::path& path) {
  if (raw.total_lines > 0 && raw.malformed_lines * 100 > raw.total_lines) {
    throw DataError(path.string() + ": " + std::to_string(raw.malformed_lines) + " of " +
                    std::to_string(raw.total_lines) + " lines are malformed (limit 1%)");
  }
}

// ---------------------------------------------------------------------------
// Loaders
// ---------------------------------------------------------------------------

/// Parses one `UserID::MovieID::Rating::Timestamp` line.
inline std::optional<Interaction> parse_movielens_rating(std::string_view line) {
  auto f = split_on(strip_cr(line), "::");
  if (f.size() != 4 || f[0].empty() || f[1].empty()) return std::nullopt;
  auto rating = parse_int<int>(f[2]);
  auto ts = parse_int<std::int64_t>(f[3]);
  if (!rating || !ts) return std::nullopt;
  if (*rating < kMovieLensScale.min || *rating > kMovieLensScale.max) return std::nullopt;
  return Interaction{latin1_to_utf8(f[0]), latin1_to_utf8(f[1]), *rating, *ts};
}

/// Parses one `MovieID::Title::Genre|Genre` line into (item id, genre tokens).
inline std::optional<std::pair<std::string, std::vector<std::string>>> parse_movielens_movie(std::string_view line) {
  auto f = split_on(strip_cr(line), "::");
  if (f.size() != 3 || f[0].empty()) return std::nullopt;
  std::vector<std::string> genres;
  if (!f[2].empty()) {
    for (auto g : split_on(f[2], "|"))
      if (!g.empty()) genres.push_back(latin1_to_utf8(g));
  }
  return std::make_pair(latin1_to_utf8(f[0]), std::move(genres));
}

/// MovieLens-1M: `ratings.dat` and `movies.dat` inside `dir`. Genres become
/// attribute values.
inline RawDataset load_movielens(const std::filesystem::path& dir) {
  RawDataset raw;
  raw.scale = kMovieLensScale;
  const auto movies_path = dir / "movies.dat";
  const auto ratings_path = dir / "ratings.dat";
  {
    auto in = open_input(movies_path);
    std::string line;
    std::size_t lines = 0, bad = 0;
    while (std::getline(in, line)) {
      if (strip_cr(line).empty()) continue;
      ++lines;
      auto movie = parse_movielens_movie(line);
      if (!movie) {
        ++bad;
        continue;
      }
      auto item = raw.catalog.add_item(movie->first);
      auto& attrs = raw.catalog.item_attrs[item];
      for (const auto& g : movie->second) attrs.push_back(raw.catalog.attributes.intern(g));
      std::sort(attrs.begin(), attrs.end());
      attrs.erase(std::unique(attrs.begin(), attrs.end()), attrs.end());
    }
    if (lines > 0 && bad * 100 > lines) {
      throw DataError(movies_path.string() + ": " + std::to_string(bad) + " of " + std::to_string(lines) +
                      " lines are malformed (limit 1%)");
    }
  }
  auto in = open_input(ratings_path);
  std::string line;
  while (std::getline(in, line)) {
    if (strip_cr(line).empty()) continue;
    ++raw.total_lines;
    auto rec = parse_movielens_rating(line);
    if (!rec) {
      ++raw.malformed_lines;
      continue;
    }
    raw.catalog.users.intern(rec->user_id);
    raw.catalog.add_item(rec->item_id);
    raw.interactions.push_back(std::move(*rec));
  }
  check_malformed(raw, ratings_path);
  return raw;
}

/// Book-Crossing: `BX-Book-Ratings.csv` inside `dir`. There are no timestamps;
/// each user's rows get ordinals 0, 1, 2, ... in file order. No attributes.
inline RawDataset load_bookcrossing(const std::filesystem::path& dir) {
  RawDataset raw;
  raw.scale = kBookCrossingScale;
  const auto path = dir / "BX-Book-Ratings.csv";
  auto in = open_input(path);
  std::unordered_map<std::string, std::int64_t> next_ordinal;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    std::string_view view = strip_cr(line);
    if (view.empty()) continue;
    if (first) {
      first = false;
      if (view.starts_with("\"User-ID\"")) continue;
    }
    ++raw.total_lines;
    auto f = split_on(view, ";");
    if (f.size() != 3) {
      ++raw.malformed_lines;
      continue;
    }
    auto user = unquote(f[0]);
    auto item = unquote(f[1]);
    auto rating = parse_int<int>(unquote(f[2]));
    if (user.empty() || item.empty() || !rating || *rating < kBookCrossingScale.min ||
        *rating > kBookCrossingScale.max) {
      ++raw.malformed_lines;
      continue;
    }
    Interaction rec{latin1_to_utf8(user), latin1_to_utf8(item), *rating, 0};
    rec.timestamp = next_ordinal[rec.user_id]++;
    raw.catalog.users.intern(rec.user_id);
    raw.catalog.add_item(rec.item_id);
    raw.interactions.push_back(std::move(rec));
  }
  check_malformed(raw, path);
  return raw;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Keeps interactions with rating ≥ threshold and sets their rating to 1.
inline std::vector<Interaction> binarize(const std::vector<Interaction>& interactions, int threshold) {
  std::vector<Interaction> out;
  for (const auto& x : interactions) {
    if (x.rating >= threshold) {
      out.push_back(x);
      out.back().rating = 1;
    }
  }
  return out;
}

struct PreprocessResult {
  std::vector<UserSequence> sequences;
  Catalog catalog;
  DatasetStats stats;
};

/// Deduplicates (user, item, timestamp), drops attribute-less items when the
/// dataset has attributes, drops users with fewer than `min_interactions`, and
/// re-densifies every index in original catalog order. Sequences are ordered by
/// timestamp with file order breaking ties.
inline PreprocessResult preprocess(const std::vector<Interaction>& interactions, const Catalog& catalog,
                                   std::size_t min_interactions = 4) {
  const bool attributed = catalog.has_attributes();
  struct Row {
    std::uint32_t user, item;
    std::int64_t ts;
  };
  std::vector<Row> rows;
  rows.reserve(interactions.size());
  std::set<std::tuple<std::uint32_t, std::uint32_t, std::int64_t>> seen;
  for (const auto& x : interactions) {
    auto u = catalog.users.find(x.user_id);
    auto v = catalog.items.find(x.item_id);
    if (!u || !v) throw ContractViolation("preprocess: interaction references an id missing from the catalog");
    if (attributed && catalog.item_attrs[*v].empty()) continue;
    if (!seen.emplace(*u, *v, x.timestamp).second) continue;
    rows.push_back({*u, *v, x.timestamp});
  }

  std::vector<std::size_t> per_user(catalog.num_users(), 0);
  for (const auto& r : rows) ++per_user[r.user];

  constexpr auto kNone = static_cast<std::uint32_t>(-1);
  std::vector<bool> item_kept(catalog.num_items(), false);
  for (const auto& r : rows)
    if (per_user[r.user] >= min_interactions) item_kept[r.item] = true;

  PreprocessResult out;
  std::vector<std::uint32_t> user_map(catalog.num_users(), kNone);
  for (std::uint32_t u = 0; u < catalog.num_users(); ++u) {
    if (per_user[u] >= min_interactions && per_user[u] > 0) user_map[u] = out.catalog.users.intern(catalog.users.name(u));
  }
  std::vector<bool> attr_used(catalog.num_attributes(), false);
  for (std::uint32_t v = 0; v < catalog.num_items(); ++v)
    if (item_kept[v])
      for (auto a : catalog.item_attrs[v]) attr_used[a] = true;
  std::vector<std::uint32_t> attr_map(catalog.num_attributes(), kNone);
  for (std::uint32_t a = 0; a < catalog.num_attributes(); ++a)
    if (attr_used[a]) attr_map[a] = out.catalog.attributes.intern(catalog.attributes.name(a));
  std::vector<std::uint32_t> item_map(catalog.num_items(), kNone);
  for (std::uint32_t v = 0; v < catalog.num_items(); ++v) {
    if (!item_kept[v]) continue;
    item_map[v] = out.catalog.add_item(catalog.items.name(v));
    auto& attrs = out.catalog.item_attrs[item_map[v]];
    for (auto a : catalog.item_attrs[v]) attrs.push_back(attr_map[a]);
    std::sort(attrs.begin(), attrs.end());
  }

  out.sequences.resize(out.catalog.num_users());
  for (std::uint32_t u = 0; u < out.sequences.size(); ++u) out.sequences[u].user = u;
  std::vector<std::vector<Row>> by_user(out.catalog.num_users());
  for (const auto& r : rows)
    if (user_map[r.user] != kNone) by_user[user_map[r.user]].push_back(r);
  std::size_t total = 0;
  for (std::uint32_t u = 0; u < by_user.size(); ++u) {
    auto& list = by_user[u];
    std::stable_sort(list.begin(), list.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
    for (const auto& r : list) {
      out.sequences[u].items.push_back(item_map[r.item]);
      out.sequences[u].timestamps.push_back(r.ts);
    }
    total += list.size();
  }
  if (out.sequences.empty() || total == 0) throw DataError("preprocess: no interactions survive filtering");
  out.stats = make_stats(out.catalog.num_users(), out.catalog.num_items(), total, out.catalog.num_attributes());
  return out;
}

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

enum class Split : std::uint8_t { train, validation, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

/// Half-open range [begin, end) of positions within a user's sequence.
struct Window {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool contains(std::size_t p) const { return p >= begin && p < end; }
  friend auto operator<=>(const Window&, const Window&) = default;
};

struct TrainingSample {
  std::size_t id = 0;
  std::uint32_t user = 0;
  std::vector<std::uint32_t> history;  // length t
  std::vector<std::uint32_t> future;   // length g
  Window window;                       // positions of `history`
  Split split = Split::train;
};

/// Per-user chronological split of `n` windows: earliest ≈60% train, then ≈20%
/// validation, latest ≈20% test. Users with fewer than five windows put all but
/// the last two in train, then one validation and one test when available.
inline std::vector<Split> split_windows(std::size_t n) {
  std::vector<Split> out(n, Split::train);
  if (n < 5) {
    const std::size_t n_train = n >= 2 ? n - 2 : 0;
    if (n > n_train) out[n_train] = Split::validation;
    if (n > n_train + 1) out[n_train + 1] = Split::test;
    return out;
  }
  const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
  const auto n_test = n_val;
  const std::size_t n_train = n - n_val - n_test;
  for (std::size_t i = n_train; i < n_train + n_val; ++i) out[i] = Split::validation;
  for (std::size_t i = n_train + n_val; i < n; ++i) out[i] = Split::test;
  return out;
}

/// Sliding windows of length t+g with the given stride (0 means stride = g).
/// Sample ids are assigned consecutively from `first_id`.
inline std::vector<TrainingSample> make_csr_samples(const std::vector<UserSequence>& sequences, std::size_t t,
                                                    std::size_t g, std::size_t stride = 0, std::size_t first_id = 0) {
  if (t < 2) throw ContractViolation("make_csr_samples: t must be at least 2");
  if (g < 1) throw ContractViolation("make_csr_samples: g must be at least 1");
  if (stride == 0) stride = g;
  std::vector<TrainingSample> out;
  std::size_t id = first_id;
  for (const auto& seq : sequences) {
    const std::size_t len = seq.items.size();
    if (len < t + g) continue;
    const std::size_t windows = (len - (t + g)) / stride + 1;
    auto splits = split_windows(windows);
    for (std::size_t w = 0; w < windows; ++w) {
      const std::size_t start = w * stride;
      TrainingSample s;
      s.id = id++;
      s.user = seq.user;
      s.history.assign(seq.items.begin() + static_cast<std::ptrdiff_t>(start),
                       seq.items.begin() + static_cast<std::ptrdiff_t>(start + t));
      s.future.assign(seq.items.begin() + static_cast<std::ptrdiff_t>(start + t),
                      seq.items.begin() + static_cast<std::ptrdiff_t>(start + t + g));
      s.window = {start, start + t};
      s.split = splits[w];
      out.push_back(std::move(s));
    }
  }
  return out;
}

inline std::vector<TrainingSample> filter_split(const std::vector<TrainingSample>& samples, Split split) {
  std::vector<TrainingSample> out;
  for (const auto& s : samples)
    if (s.split == split) out.push_back(s);
  return out;
}

struct IsrSplit {
  std::vector<UserSequence> train;
  std::vector<UserSequence> test;
};

/// Deterministic user partition: a seeded shuffle, then the first
/// round(fraction × users) users train. Both sides keep input order.
inline IsrSplit make_isr_split(const std::vector<UserSequence>& sequences, double train_user_fraction,
                               std::uint64_t seed) {
  if (!(train_user_fraction > 0.0 && train_user_fraction < 1.0)) {
    throw ContractViolation("make_isr_split: train fraction must lie in (0, 1)");
  }
  const std::size_t n = sequences.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_user_fraction * static_cast<double>(n)));
  if (n >= 2) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  std::vector<bool> is_train(n, false);
  for (std::size_t i = 0; i < n_train && i < n; ++i) is_train[order[i]] = true;
  IsrSplit out;
  for (std::size_t i = 0; i < n; ++i) (is_train[i] ? out.train : out.test).push_back(sequences[i]);
  return out;
}

/// A zero-shot transfer job between two distinct domains. Attribute nodes are
/// always excluded on both sides.
struct TransferJob {
  std::string source;
  std::string target;
  bool use_attributes = false;
};

inline TransferJob make_tsr_pair(const std::string& source_domain, const std::string& target_domain) {
  if (source_domain == target_domain) {
    throw ContractViolation("make_tsr_pair: source and target must be different domains (got '" + source_domain +
                            "' twice)");
  }
  return {source_domain, target_domain, false};
}

/// All ordered (source, target) pairs among the given domains.
inline std::vector<TransferJob> enumerate_transfer_jobs(const std::vector<std::string>& domains) {
  std::vector<TransferJob> jobs;
  for (const auto& s : domains)
    for (const auto& t : domains)
      if (s != t) jobs.push_back(make_tsr_pair(s, t));
  return jobs;
}

// ---------------------------------------------------------------------------
// Normalized bundle
// ---------------------------------------------------------------------------

struct Bundle {
  Catalog catalog;
  std::vector<UserSequence> sequences;
  DatasetStats stats;
};

inline void write_stats(std::ostream& os, const DatasetStats& s) {
  os << "users=" << s.users << '\n'
     << "items=" << s.items << '\n'
     << "interactions=" << s.interactions << '\n'
     << "attributes=" << s.attributes << '\n';
  std::ostringstream d;
  d.precision(6);
  d << std::fixed << s.density;
  os << "density=" << d.str() << '\n';
}

/// Writes interactions.tsv, item_attributes.tsv, id_maps.tsv and stats.txt.
/// `header` lines (e.g. the resolved run configuration) are prefixed with '#'.
inline void write_bundle(const std::filesystem::path& dir, const PreprocessResult& data,
                         const std::vector<std::string>& header = {}) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream os(dir / name);
    if (!os) throw ConfigError("cannot write " + (dir / name).string());
    for (const auto& h : header) os << "# " << h << '\n';
    return os;
  };
  {
    auto os = open("interactions.tsv");
    os << "user\titem\ttimestamp\n";
    for (const auto& seq : data.sequences)
      for (std::size_t p = 0; p < seq.items.size(); ++p)
        os << seq.user << '\t' << seq.items[p] << '\t' << seq.timestamps[p] << '\n';
  }
  {
    auto os = open("item_attributes.tsv");
    os << "item\tattribute\n";
    for (std::size_t v = 0; v < data.catalog.item_attrs.size(); ++v)
      for (auto a : data.catalog.item_attrs[v]) os << v << '\t' << a << '\n';
  }
  {
    auto os = open("id_maps.tsv");
    os << "kind\tindex\tid\n";
    const std::pair<const char*, const IdIndex*> maps[] = {
        {"user", &data.catalog.users}, {"item", &data.catalog.items}, {"attribute", &data.catalog.attributes}};
    for (auto [kind, map] : maps)
      for (std::size_t i = 0; i < map->size(); ++i) os << kind << '\t' << i << '\t' << map->name(static_cast<std::uint32_t>(i)) << '\n';
  }
  {
    auto os = open("stats.txt");
    write_stats(os, data.stats);
  }
}

namespace detail {

inline std::vector<std::vector<std::string_view>> read_table(const std::filesystem::path& path, std::string& storage,
                                                             std::size_t columns) {
  auto in = open_input(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  storage = buf.str();
  std::vector<std::vector<std::string_view>> rows;
  std::string_view all = storage;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (!all.empty()) {
    auto nl = all.find('\n');
    auto line = strip_cr(all.substr(0, nl));
    all = nl == std::string_view::npos ? std::string_view{} : all.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    auto f = split_on(line, "\t");
    if (f.size() != columns) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                      " columns");
    }
    rows.push_back(std::move(f));
  }
  return rows;
}

template <class Int>
Int field(std::string_view s, const std::filesystem::path& path) {
  auto v = parse_int<Int>(s);
  if (!v) throw DataError(path.string() + ": bad integer field '" + std::string(s) + "'");
  return *v;
}

}  // namespace detail

/// Reads a bundle written by write_bundle.
inline Bundle read_bundle(const std::filesystem::path& dir) {
  Bundle b;
  std::string storage;
  {
    const auto path = dir / "id_maps.tsv";
    for (const auto& f : detail::read_table(path, storage, 3)) {
      const auto index = detail::field<std::uint32_t>(f[1], path);
      IdIndex* map = f[0] == "user" ? &b.catalog.users
                     : f[0] == "item" ? &b.catalog.items
                     : f[0] == "attribute" ? &b.catalog.attributes
                                           : nullptr;
      if (!map) throw DataError(path.string() + ": unknown kind '" + std::string(f[0]) + "'");
      if (map->intern(std::string(f[2])) != index) throw DataError(path.string() + ": indices are not dense");
    }
    b.catalog.item_attrs.assign(b.catalog.num_items(), {});
  }
  {
    const auto path = dir / "item_attributes.tsv";
    for (const auto& f : detail::read_table(path, storage, 2)) {
      const auto v = detail::field<std::uint32_t>(f[0], path);
      const auto a = detail::field<std::uint32_t>(f[1], path);
      if (v >= b.catalog.num_items() || a >= b.catalog.num_attributes()) throw DataError(path.string() + ": index out of range");
      b.catalog.item_attrs[v].push_back(a);
    }
    for (auto& attrs : b.catalog.item_attrs) std::sort(attrs.begin(), attrs.end());
  }
  {
    const auto path = dir / "interactions.tsv";
    b.sequences.resize(b.catalog.num_users());
    for (std::uint32_t u = 0; u < b.sequences.size(); ++u) b.sequences[u].user = u;
    std::size_t total = 0;
    for (const auto& f : detail::read_table(path, storage, 3)) {
      const auto u = detail::field<std::uint32_t>(f[0], path);
      const auto v = detail::field<std::uint32_t>(f[1], path);
      const auto ts = detail::field<std::int64_t>(f[2], path);
      if (u >= b.catalog.num_users() || v >= b.catalog.num_items()) throw DataError(path.string() + ": index out of range");
      b.sequences[u].items.push_back(v);
      b.sequences[u].timestamps.push_back(ts);
      ++total;
    }
    b.stats = make_stats(b.catalog.num_users(), b.catalog.num_items(), total, b.catalog.num_attributes());
  }
  return b;
}

}  // namespace retagnn::ingest
