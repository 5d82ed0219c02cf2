#pragma once

// Count-based reference recommenders: recently viewed items (RVI) and
// item-to-item co-occurrence (Item-CF).

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mdrec/data.hpp"
#include "mdrec/evaluation.hpp"

namespace mdrec {

/// c(target, seed) over (future item, history item) pairs, plus the seed
/// marginals c(seed) = sum_target c(target, seed).
class CooccurrenceTable {
 public:
  using Count = std::uint64_t;

  void add(ItemIndex target, ItemIndex seed, Count n = 1) {
    if (n == 0) return;
    rows_[seed][target] += n;
    marginals_[seed] += n;
  }

  Count count(ItemIndex target, ItemIndex seed) const {
    auto it = rows_.find(seed);
    if (it == rows_.end()) return 0;
    auto jt = it->second.find(target);
    return jt == it->second.end() ? 0 : jt->second;
  }

  Count marginal(ItemIndex seed) const {
    auto it = marginals_.find(seed);
    return it == marginals_.end() ? 0 : it->second;
  }

  /// P(target | seed) = c(target, seed) / c(seed); nullopt for unseen seeds.
  std::optional<double> conditional(ItemIndex target, ItemIndex seed) const {
    const Count m = marginal(seed);
    if (m == 0) return std::nullopt;
    return static_cast<double>(count(target, seed)) / static_cast<double>(m);
  }

  /// Non-zero counts for one seed, ordered by target.
  const std::map<ItemIndex, Count>* row(ItemIndex seed) const {
    auto it = rows_.find(seed);
    return it == rows_.end() ? nullptr : &it->second;
  }

  bool empty() const { return rows_.empty(); }
  std::size_t pair_count() const {
    std::size_t n = 0;
    for (const auto& [_, r] : rows_) n += r.size();
    return n;
  }

  /// Every (target, seed, count) triple sorted by (target, seed).
  std::vector<std::tuple<ItemIndex, ItemIndex, Count>> triples() const {
    std::map<std::pair<ItemIndex, ItemIndex>, Count> sorted;
    for (const auto& [seed, r] : rows_) {
      for (const auto& [target, n] : r) sorted[{target, seed}] = n;
    }
    std::vector<std::tuple<ItemIndex, ItemIndex, Count>> out;
    out.reserve(sorted.size());
    for (const auto& [key, n] : sorted) out.emplace_back(key.first, key.second, n);
    return out;
  }

  friend bool operator==(const CooccurrenceTable& a, const CooccurrenceTable& b) {
    return a.triples() == b.triples();
  }

 private:
  std::map<ItemIndex, std::map<ItemIndex, Count>> rows_;
  std::unordered_map<ItemIndex, Count> marginals_;
};

/// Counts every (future item, history item) pair per position, so repeated
/// seeds count once per occurrence.
inline CooccurrenceTable build_table(const std::vector<InteractionSequence>& sequences) {
  CooccurrenceTable table;
  for (const auto& s : sequences) {
    for (ItemIndex target : s.future) {
      for (ItemIndex seed : s.history) table.add(target, seed);
    }
  }
  return table;
}

inline void write_table(std::ostream& os, const CooccurrenceTable& table) {
  for (const auto& [target, seed, n] : table.triples()) os << target << ' ' << seed << ' ' << n << '\n';
}

inline CooccurrenceTable read_table(std::istream& is) {
  CooccurrenceTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ItemIndex target = 0, seed = 0;
    CooccurrenceTable::Count n = 0;
    if (!(ss >> target >> seed >> n)) {
      throw DataError("cooccurrence line " + std::to_string(line_no) + ": expected 'target seed count'");
    }
    table.add(target, seed, n);
  }
  return table;
}

/// score(i) = sum over history positions k of P(i | s_k) / |history|.
/// Seeds never seen in training contribute 0.
inline std::vector<double> item_cf_scores(const std::vector<ItemIndex>& history, const CooccurrenceTable& table,
                                          std::size_t vocab_size) {
  std::vector<double> scores(vocab_size, 0.0);
  if (history.empty()) return scores;
  const double n = static_cast<double>(history.size());
  for (ItemIndex seed : history) {
    const auto* r = table.row(seed);
    if (!r) continue;
    const double m = static_cast<double>(table.marginal(seed));
    for (const auto& [target, c] : *r) {
      if (target < vocab_size) scores[target] += static_cast<double>(c) / m / n;
    }
  }
  return scores;
}

inline RankedRecommendations item_cf_rank(const std::vector<ItemIndex>& history, const CooccurrenceTable& table,
                                          std::size_t vocab_size, std::size_t k,
                                          const std::unordered_set<ItemIndex>* exclude = nullptr) {
  return rank_scores(item_cf_scores(history, table, vocab_size), k, exclude);
}

/// Unique history items, most recent occurrence first. Scores are the
/// negated distance from the end of the history.
inline RankedRecommendations rvi_rank(const std::vector<ItemIndex>& history) {
  if (history.empty()) throw Error("rvi_rank: empty history");
  RankedRecommendations out;
  std::unordered_set<ItemIndex> seen;
  for (std::size_t i = history.size(); i-- > 0;) {
    if (seen.insert(history[i]).second) {
      out.items.push_back(history[i]);
      out.scores.push_back(-static_cast<double>(history.size() - 1 - i));
    }
  }
  return out;
}

}  // namespace mdrec
