#pragma once

// Ranking the vocabulary and top-k metrics: Precision, Recall, nDCG, F1.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "mdrec/data.hpp"
#include "mdrec/embeddings.hpp"
#include "mdrec/mdn.hpp"

namespace mdrec {

/// Top-k items with non-increasing scores.
struct RankedRecommendations {
  std::vector<ItemIndex> items;
  std::vector<double> scores;

  std::size_t size() const { return items.size(); }
};

/// Orders items by descending score (ties: ascending index), skips
/// `exclude`, keeps the first k. k larger than the candidate count is
/// clamped with a warning.
inline RankedRecommendations rank_scores(std::span<const double> scores, std::size_t k,
                                         const std::unordered_set<ItemIndex>* exclude = nullptr) {
  if (k == 0) throw Error("rank: k must be >= 1");
  std::vector<ItemIndex> order;
  order.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!exclude || !exclude->count(static_cast<ItemIndex>(i))) order.push_back(static_cast<ItemIndex>(i));
  }
  if (k > order.size()) {
    std::clog << "warning: k=" << k << " exceeds " << order.size() << " candidate items; clamping\n";
    k = order.size();
  }
  auto better = [&](ItemIndex a, ItemIndex b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  order.resize(k);
  RankedRecommendations out;
  out.items = order;
  for (ItemIndex i : order) out.scores.push_back(scores[i]);
  return out;
}

/// Log-density of every vocabulary item under the mixture.
inline std::vector<double> score_items(const MixtureParameters& params, const EmbeddingMatrix& E) {
  std::vector<double> scores(E.vocab_size());
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = log_density(E.row(i), params);
  return scores;
}

inline RankedRecommendations rank_items(const MixtureParameters& params, const EmbeddingMatrix& E, std::size_t k,
                                        const std::unordered_set<ItemIndex>* exclude = nullptr) {
  const auto scores = score_items(params, E);
  return rank_scores(scores, k, exclude);
}

using TargetSet = std::unordered_set<ItemIndex>;

inline TargetSet target_set(const std::vector<ItemIndex>& future) { return {future.begin(), future.end()}; }

inline std::size_t hits_at_k(std::span<const ItemIndex> ranked, const TargetSet& targets, std::size_t k) {
  std::size_t hits = 0;
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t i = 0; i < n; ++i) hits += targets.count(ranked[i]);
  return hits;
}

/// |R_k ∩ T| / k
inline double precision_at_k(std::span<const ItemIndex> ranked, const TargetSet& targets, std::size_t k) {
  if (k == 0) throw Error("precision_at_k: k must be >= 1");
  return static_cast<double>(hits_at_k(ranked, targets, k)) / static_cast<double>(k);
}

/// |R_k ∩ T| / |T|
inline double recall_at_k(std::span<const ItemIndex> ranked, const TargetSet& targets, std::size_t k) {
  if (targets.empty()) throw Error("recall_at_k: empty target set");
  return static_cast<double>(hits_at_k(ranked, targets, k)) / static_cast<double>(targets.size());
}

/// DCG@k over the first k ranks divided by the ideal DCG over |T| ranks.
/// With k < |T| a perfect list scores below 1.
inline double ndcg_at_k(std::span<const ItemIndex> ranked, const TargetSet& targets, std::size_t k) {
  if (targets.empty()) throw Error("ndcg_at_k: empty target set");
  double dcg = 0.0;
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (targets.count(ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  double ideal = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) ideal += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / ideal;
}

/// Harmonic mean; 0 when both inputs are 0.
inline double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

struct CutoffMetrics {
  std::size_t k = 0;
  double precision = 0.0;
  double recall = 0.0;
  double ndcg = 0.0;
  double f1 = 0.0;
};

/// Macro averages over users for each cutoff.
struct MetricReport {
  std::vector<CutoffMetrics> cutoffs;
  std::size_t users = 0;
  std::size_t skipped = 0;

  const CutoffMetrics& at(std::size_t k) const {
    for (const auto& c : cutoffs) {
      if (c.k == k) return c;
    }
    throw Error("metric report: no cutoff " + std::to_string(k));
  }
};

/// Recommender callback: history -> ranked list of at least max(cutoffs).
using Recommender = std::function<RankedRecommendations(const InteractionSequence&, std::size_t)>;

inline MetricReport evaluate(const std::vector<InteractionSequence>& users, const std::vector<std::size_t>& cutoffs,
                             const Recommender& recommend) {
  if (cutoffs.empty()) throw Error("evaluate: no cutoffs");
  const std::size_t kmax = *std::max_element(cutoffs.begin(), cutoffs.end());
  MetricReport report;
  for (std::size_t k : cutoffs) report.cutoffs.push_back({k});
  for (const auto& user : users) {
    const TargetSet targets = target_set(user.future);
    if (targets.empty()) {
      std::clog << "warning: user " << user.user << " has no targets; skipped\n";
      ++report.skipped;
      continue;
    }
    const auto ranked = recommend(user, kmax);
    for (auto& c : report.cutoffs) {
      const double p = precision_at_k(ranked.items, targets, c.k);
      const double r = recall_at_k(ranked.items, targets, c.k);
      c.precision += p;
      c.recall += r;
      c.ndcg += ndcg_at_k(ranked.items, targets, c.k);
      c.f1 += f1_score(p, r);
    }
    ++report.users;
  }
  if (report.users > 0) {
    const double n = static_cast<double>(report.users);
    for (auto& c : report.cutoffs) {
      c.precision /= n;
      c.recall /= n;
      c.ndcg /= n;
      c.f1 /= n;
    }
  }
  return report;
}

/// Header for write_metric_rows.
inline constexpr const char* kMetricHeader = "model,cutoff,precision,recall,ndcg,f1";

/// One "model,cutoff,precision,recall,ndcg,f1" row per cutoff.
inline void write_metric_rows(std::ostream& os, const std::string& model, const MetricReport& report) {
  const auto flags = os.flags();
  os << std::setprecision(6) << std::fixed;
  for (const auto& c : report.cutoffs) {
    os << model << ',' << c.k << ',' << c.precision << ',' << c.recall << ',' << c.ndcg << ',' << c.f1 << '\n';
  }
  os.flags(flags);
}

/// Human-readable table.
inline void write_metric_table(std::ostream& os, const std::string& model, const MetricReport& report) {
  const auto flags = os.flags();
  os << model << " (" << report.users << " users)\n";
  os << "  " << std::left << std::setw(6) << "k" << std::setw(11) << "Precision" << std::setw(11) << "Recall"
     << std::setw(11) << "nDCG" << "F1\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& c : report.cutoffs) {
    os << "  " << std::setw(6) << c.k << std::setw(11) << c.precision << std::setw(11) << c.recall << std::setw(11)
       << c.ndcg << c.f1 << '\n';
  }
  os.flags(flags);
}

/// Header for write_plot_rows: metric value against component count.
inline constexpr const char* kPlotHeader = "model,m,metric,value";

/// Rows "model,m,metric,value" with metric names like "recall@10".
inline void write_plot_rows(std::ostream& os, const std::string& model, std::size_t components,
                            const MetricReport& report) {
  const auto flags = os.flags();
  os << std::setprecision(6) << std::fixed;
  for (const auto& c : report.cutoffs) {
    os << model << ',' << components << ",precision@" << c.k << ',' << c.precision << '\n';
    os << model << ',' << components << ",recall@" << c.k << ',' << c.recall << '\n';
    os << model << ',' << components << ",ndcg@" << c.k << ',' << c.ndcg << '\n';
  }
  os.flags(flags);
}

}  // namespace mdrec
