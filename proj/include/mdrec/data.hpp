#pragma once

// Interaction logs -> history/future sequences, vocabulary, splits, and
// on-disk persistence of processed datasets.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "mdrec/random.hpp"
#include "mdrec/tensor.hpp"

namespace mdrec {

class DataError : public Error {
 public:
  using Error::Error;
};

using ItemIndex = std::uint32_t;

/// Bijection between item tokens and dense indices, in insertion order.
class ItemVocabulary {
 public:
  ItemIndex add(const std::string& token) {
    if (token.empty() || token.find_first_of("\t\n\r,") != std::string::npos) {
      throw DataError("vocabulary: invalid item token '" + token + "'");
    }
    auto [it, inserted] = index_.emplace(token, static_cast<ItemIndex>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  std::optional<ItemIndex> find(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  ItemIndex index(const std::string& token) const {
    auto found = find(token);
    if (!found) throw DataError("vocabulary: unknown item '" + token + "'");
    return *found;
  }

  const std::string& token(ItemIndex i) const {
    if (i >= tokens_.size()) {
      throw DataError("vocabulary: index " + std::to_string(i) + " out of range");
    }
    return tokens_[i];
  }

  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const ItemVocabulary& a, const ItemVocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, ItemIndex> index_;
};

/// A user's chronological items split into history (conditioning context)
/// and future (prediction targets).
struct InteractionSequence {
  std::string user;
  std::vector<ItemIndex> history;
  std::vector<ItemIndex> future;

  friend bool operator==(const InteractionSequence&, const InteractionSequence&) = default;
};

/// Same as InteractionSequence but with raw item tokens, before a vocabulary exists.
struct RawSequence {
  std::string user;
  std::vector<std::string> history;
  std::vector<std::string> future;
};

struct Provenance {
  std::string source;
  std::string filters;
  std::uint64_t split_seed = 0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct DropStats {
  std::size_t items_dropped = 0;
  std::size_t sequences_dropped = 0;

  friend bool operator==(const DropStats&, const DropStats&) = default;
};

struct DatasetBundle {
  std::vector<InteractionSequence> train;
  std::vector<InteractionSequence> validation;
  std::vector<InteractionSequence> test;
  ItemVocabulary vocab;
  Provenance provenance;
  DropStats drops;

  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

template <typename T>
struct Splits {
  std::vector<T> train;
  std::vector<T> validation;
  std::vector<T> test;
};

/// Random disjoint split; part sizes are the rounded proportions, test takes
/// the remainder.
template <typename T>
Splits<T> split(std::vector<T> items, const SplitRatios& ratios, std::uint64_t seed) {
  const double total = ratios.train + ratios.validation + ratios.test;
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 ||
      std::abs(total - 1.0) > 1e-9) {
    throw DataError("split: ratios must be non-negative and sum to 1");
  }
  Rng rng(seed);
  std::shuffle(items.begin(), items.end(), rng);
  const std::size_t n = items.size();
  const auto n_train = std::min<std::size_t>(n, std::llround(ratios.train * n));
  const auto n_valid = std::min<std::size_t>(n - n_train, std::llround(ratios.validation * n));
  Splits<T> out;
  auto first = std::make_move_iterator(items.begin());
  out.train.assign(first, first + n_train);
  out.validation.assign(first + n_train, first + n_train + n_valid);
  out.test.assign(first + n_train + n_valid, std::make_move_iterator(items.end()));
  return out;
}

/// Splits raw sequences, builds the vocabulary from the training part only,
/// and drops out-of-vocabulary items (then empty sequences) elsewhere.
inline DatasetBundle build_bundle(std::vector<RawSequence> sequences, const SplitRatios& ratios,
                                  std::uint64_t seed, Provenance provenance) {
  auto parts = split(std::move(sequences), ratios, seed);
  DatasetBundle bundle;
  provenance.split_seed = seed;
  bundle.provenance = std::move(provenance);
  for (const auto& raw : parts.train) {
    for (const auto& tok : raw.history) bundle.vocab.add(tok);
    for (const auto& tok : raw.future) bundle.vocab.add(tok);
  }
  auto map_items = [&](const std::vector<std::string>& tokens) {
    std::vector<ItemIndex> out;
    out.reserve(tokens.size());
    for (const auto& tok : tokens) {
      if (auto idx = bundle.vocab.find(tok)) {
        out.push_back(*idx);
      } else {
        ++bundle.drops.items_dropped;
      }
    }
    return out;
  };
  auto map_part = [&](const std::vector<RawSequence>& raws, std::vector<InteractionSequence>& out) {
    for (const auto& raw : raws) {
      InteractionSequence seq{raw.user, map_items(raw.history), map_items(raw.future)};
      if (seq.history.empty() || seq.future.empty()) {
        ++bundle.drops.sequences_dropped;
        continue;
      }
      out.push_back(std::move(seq));
    }
  };
  map_part(parts.train, bundle.train);
  map_part(parts.validation, bundle.validation);
  map_part(parts.test, bundle.test);
  return bundle;
}

// ---------------------------------------------------------------------------
// Raw delimited input

/// Which columns hold which field. Names are resolved against the header
/// when one is present; otherwise (or when absent from it) they must be
/// zero-based column numbers.
struct ColumnMapping {
  char delimiter = ',';
  bool header = true;
  std::string user = "userId";
  std::string item = "movieId";
  std::string rating = "rating";
  std::string timestamp = "timestamp";

  static ColumnMapping movielens() { return {}; }
  static ColumnMapping recsys() {
    return ColumnMapping{',', true, "session", "item", "", "timestamp"};
  }
};

/// Orders numeric timestamps numerically and everything else (ISO-8601
/// strings) lexicographically.
struct Timestamp {
  std::string text;
  std::optional<double> numeric;

  explicit Timestamp(std::string s = {}) : text(std::move(s)) {
    double v = 0;
    const char* b = text.data();
    const char* e = b + text.size();
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec == std::errc() && ptr == e && !text.empty()) numeric = v;
  }

  friend bool operator<(const Timestamp& a, const Timestamp& b) {
    if (a.numeric && b.numeric) return *a.numeric < *b.numeric;
    return a.text < b.text;
  }
};

struct RatingRow {
  std::string user;
  std::string item;
  double rating = 0;
  Timestamp timestamp;
};

struct ClickRow {
  std::string session;
  std::string item;
  Timestamp timestamp;
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, delim)) fields.push_back(field);
  if (!line.empty() && line.back() == delim) fields.emplace_back();
  for (auto& f : fields) {
    if (!f.empty() && f.back() == '\r') f.pop_back();
  }
  return fields;
}

inline std::size_t resolve_column(const std::string& name, const std::vector<std::string>& header) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it != header.end()) return static_cast<std::size_t>(it - header.begin());
  std::size_t idx = 0;
  auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), idx);
  if (ec != std::errc() || ptr != name.data() + name.size()) {
    throw DataError("input: column '" + name + "' not found in header");
  }
  return idx;
}

/// Calls `emit(fields, line_number)` for each data row.
template <typename Emit>
void read_delimited(std::istream& in, const ColumnMapping& mapping, Emit emit) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  if (mapping.header) {
    if (!std::getline(in, line)) return;
    ++line_no;
    header = split_line(line, mapping.delimiter);
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    emit(split_line(line, mapping.delimiter), header, line_no);
  }
}

inline const std::string& field_at(const std::vector<std::string>& fields, std::size_t col,
                                   std::size_t line_no) {
  if (col >= fields.size() || fields[col].empty()) {
    throw DataError("input line " + std::to_string(line_no) + ": missing column " +
                    std::to_string(col));
  }
  return fields[col];
}

}  // namespace detail

inline std::vector<RatingRow> read_rating_rows(std::istream& in,
                                               const ColumnMapping& mapping = ColumnMapping::movielens()) {
  std::vector<RatingRow> rows;
  std::optional<std::array<std::size_t, 4>> cols;
  detail::read_delimited(in, mapping, [&](const std::vector<std::string>& f,
                                          const std::vector<std::string>& header, std::size_t line) {
    if (!cols) {
      cols = {detail::resolve_column(mapping.user, header), detail::resolve_column(mapping.item, header),
              detail::resolve_column(mapping.rating, header),
              detail::resolve_column(mapping.timestamp, header)};
    }
    RatingRow row;
    row.user = detail::field_at(f, (*cols)[0], line);
    row.item = detail::field_at(f, (*cols)[1], line);
    const std::string& r = detail::field_at(f, (*cols)[2], line);
    auto [ptr, ec] = std::from_chars(r.data(), r.data() + r.size(), row.rating);
    if (ec != std::errc() || ptr != r.data() + r.size()) {
      throw DataError("input line " + std::to_string(line) + ": malformed rating '" + r + "'");
    }
    row.timestamp = Timestamp(detail::field_at(f, (*cols)[3], line));
    rows.push_back(std::move(row));
  });
  return rows;
}

inline std::vector<ClickRow> read_click_rows(std::istream& in,
                                             const ColumnMapping& mapping = ColumnMapping::recsys()) {
  std::vector<ClickRow> rows;
  std::optional<std::array<std::size_t, 3>> cols;
  detail::read_delimited(in, mapping, [&](const std::vector<std::string>& f,
                                          const std::vector<std::string>& header, std::size_t line) {
    if (!cols) {
      cols = {detail::resolve_column(mapping.user, header), detail::resolve_column(mapping.item, header),
              detail::resolve_column(mapping.timestamp, header)};
    }
    rows.push_back(ClickRow{detail::field_at(f, (*cols)[0], line), detail::field_at(f, (*cols)[1], line),
                            Timestamp(detail::field_at(f, (*cols)[2], line))});
  });
  return rows;
}

// ---------------------------------------------------------------------------
// Preprocessing

struct MovieLensOptions {
  double min_rating = 4.0;
  std::size_t min_positives = 15;
  std::size_t history_length = 10;
  std::size_t future_length = 5;
  SplitRatios ratios;
};

struct RecsysOptions {
  std::size_t min_length = 15;
  std::size_t history_length = 13;
  std::size_t future_length = 2;
  SplitRatios ratios;
};

namespace detail {

/// Groups rows by key in first-seen order, each group stably sorted by time.
template <typename Row, typename Key>
std::vector<std::pair<std::string, std::vector<const Row*>>> group_by_time(const std::vector<Row>& rows,
                                                                           Key key) {
  std::vector<std::pair<std::string, std::vector<const Row*>>> groups;
  std::unordered_map<std::string, std::size_t> where;
  for (const auto& row : rows) {
    const std::string& k = key(row);
    auto [it, inserted] = where.emplace(k, groups.size());
    if (inserted) groups.emplace_back(k, std::vector<const Row*>{});
    groups[it->second].second.push_back(&row);
  }
  for (auto& [_, g] : groups) {
    std::stable_sort(g.begin(), g.end(),
                     [](const Row* a, const Row* b) { return a->timestamp < b->timestamp; });
  }
  return groups;
}

}  // namespace detail

/// Ratings >= min_rating become positives; users with at least
/// min_positives keep their last history+future positives in time order.
inline std::vector<RawSequence> movielens_sequences(const std::vector<RatingRow>& rows,
                                                    const MovieLensOptions& opt = {}) {
  const std::size_t window = opt.history_length + opt.future_length;
  std::vector<RatingRow> positives;
  for (const auto& r : rows) {
    if (r.rating >= opt.min_rating) positives.push_back(r);
  }
  std::vector<RawSequence> out;
  for (auto& [user, items] : detail::group_by_time(positives, [](const RatingRow& r) -> const std::string& {
         return r.user;
       })) {
    if (items.size() < std::max(opt.min_positives, window)) continue;
    RawSequence seq{user, {}, {}};
    std::unordered_set<std::string> seen;
    for (std::size_t i = items.size() - window; i < items.size(); ++i) {
      const std::string& item = items[i]->item;
      if (!seen.insert(item).second) {
        throw DataError("movielens: user " + user + " has duplicate item " + item);
      }
      (i < items.size() - opt.future_length ? seq.history : seq.future).push_back(item);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

/// Sessions of at least min_length clicks: first history_length clicks are
/// history, final future_length clicks are future. Duplicates are kept.
inline std::vector<RawSequence> recsys_sequences(const std::vector<ClickRow>& rows,
                                                 const RecsysOptions& opt = {}) {
  std::vector<RawSequence> out;
  const std::size_t need = std::max(opt.min_length, opt.history_length + opt.future_length);
  for (auto& [session, clicks] : detail::group_by_time(rows, [](const ClickRow& r) -> const std::string& {
         return r.session;
       })) {
    if (clicks.size() < need) continue;
    RawSequence seq{session, {}, {}};
    for (std::size_t i = 0; i < opt.history_length; ++i) seq.history.push_back(clicks[i]->item);
    for (std::size_t i = clicks.size() - opt.future_length; i < clicks.size(); ++i) {
      seq.future.push_back(clicks[i]->item);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

inline DatasetBundle preprocess_movielens(const std::vector<RatingRow>& rows, std::uint64_t seed,
                                          const MovieLensOptions& opt = {}) {
  std::ostringstream filters;
  filters << "rating>=" << opt.min_rating << ";min_positives=" << opt.min_positives
          << ";history=" << opt.history_length << ";future=" << opt.future_length;
  return build_bundle(movielens_sequences(rows, opt), opt.ratios, stream_seed(seed, "split"),
                      {"movielens", filters.str(), 0});
}

inline DatasetBundle preprocess_recsys(const std::vector<ClickRow>& rows, std::uint64_t seed,
                                       const RecsysOptions& opt = {}) {
  std::ostringstream filters;
  filters << "min_length=" << opt.min_length << ";history=" << opt.history_length
          << ";future=" << opt.future_length;
  return build_bundle(recsys_sequences(rows, opt), opt.ratios, stream_seed(seed, "split"),
                      {"recsys", filters.str(), 0});
}

// ---------------------------------------------------------------------------
// Persistence: vocab.txt, {train,valid,test}.tsv, meta.json

inline void write_sequences(std::ostream& os, const std::vector<InteractionSequence>& seqs) {
  auto join = [&](const std::vector<ItemIndex>& items) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i) os << ',';
      os << items[i];
    }
  };
  for (const auto& s : seqs) {
    os << s.user << '\t';
    join(s.history);
    os << '\t';
    join(s.future);
    os << '\n';
  }
}

inline std::vector<InteractionSequence> read_sequences(std::istream& is, std::size_t vocab_size) {
  std::vector<InteractionSequence> out;
  std::string line;
  std::size_t line_no = 0;
  auto parse_items = [&](const std::string& field) {
    std::vector<ItemIndex> items;
    for (const auto& tok : detail::split_line(field, ',')) {
      ItemIndex v = 0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size() || v >= vocab_size) {
        throw DataError("sequence line " + std::to_string(line_no) + ": bad item index '" + tok + "'");
      }
      items.push_back(v);
    }
    return items;
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = detail::split_line(line, '\t');
    if (fields.size() != 3) {
      throw DataError("sequence line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    out.push_back({fields[0], parse_items(fields[1]), parse_items(fields[2])});
  }
  return out;
}

inline void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream os(dir / name, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + (dir / name).string());
    return os;
  };
  {
    auto os = open("vocab.txt");
    for (const auto& tok : bundle.vocab.tokens()) os << tok << '\n';
  }
  {
    auto os = open("train.tsv");
    write_sequences(os, bundle.train);
  }
  {
    auto os = open("valid.tsv");
    write_sequences(os, bundle.validation);
  }
  {
    auto os = open("test.tsv");
    write_sequences(os, bundle.test);
  }
  nlohmann::json meta = {{"source", bundle.provenance.source},
                         {"filters", bundle.provenance.filters},
                         {"split_seed", bundle.provenance.split_seed},
                         {"items_dropped", bundle.drops.items_dropped},
                         {"sequences_dropped", bundle.drops.sequences_dropped},
                         {"vocab_size", bundle.vocab.size()},
                         {"train", bundle.train.size()},
                         {"validation", bundle.validation.size()},
                         {"test", bundle.test.size()}};
  auto os = open("meta.json");
  os << meta.dump(2) << '\n';
}

inline DatasetBundle load_bundle(const std::filesystem::path& dir) {
  auto open = [&](const char* name) {
    std::ifstream is(dir / name, std::ios::binary);
    if (!is) throw DataError("missing dataset file " + (dir / name).string());
    return is;
  };
  DatasetBundle bundle;
  {
    auto is = open("vocab.txt");
    std::string line;
    while (std::getline(is, line)) bundle.vocab.add(line);
  }
  {
    auto is = open("train.tsv");
    bundle.train = read_sequences(is, bundle.vocab.size());
  }
  {
    auto is = open("valid.tsv");
    bundle.validation = read_sequences(is, bundle.vocab.size());
  }
  {
    auto is = open("test.tsv");
    bundle.test = read_sequences(is, bundle.vocab.size());
  }
  auto is = open("meta.json");
  const auto meta = nlohmann::json::parse(is);
  bundle.provenance = {meta.at("source").get<std::string>(), meta.at("filters").get<std::string>(),
                       meta.at("split_seed").get<std::uint64_t>()};
  bundle.drops = {meta.at("items_dropped").get<std::size_t>(), meta.at("sequences_dropped").get<std::size_t>()};
  return bundle;
}

}  // namespace mdrec
