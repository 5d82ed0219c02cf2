#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "mdrec/evaluation.hpp"

using mdrec::ItemIndex;
using mdrec::TargetSet;

namespace {

constexpr ItemIndex a = 0, b = 1, c = 2, d = 3, x = 7;

struct Instance {
  std::vector<ItemIndex> ranked;
  std::vector<ItemIndex> targets;
  std::size_t k;
};

Instance random_instance(std::mt19937_64& rng) {
  const std::size_t vocab = 12;
  std::vector<ItemIndex> all(vocab);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  const std::size_t k = std::uniform_int_distribution<std::size_t>(1, vocab)(rng);
  Instance in{std::vector<ItemIndex>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k)), {}, k};
  const std::size_t t = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
  std::uniform_int_distribution<ItemIndex> item(0, vocab - 1);
  for (std::size_t i = 0; i < t; ++i) in.targets.push_back(item(rng));
  return in;
}

// Oracles straight from the set definitions.
double oracle_hits(const Instance& in) {
  std::set<ItemIndex> r(in.ranked.begin(), in.ranked.begin() + static_cast<std::ptrdiff_t>(in.k));
  std::set<ItemIndex> t(in.targets.begin(), in.targets.end());
  std::vector<ItemIndex> both;
  std::set_intersection(r.begin(), r.end(), t.begin(), t.end(), std::back_inserter(both));
  return static_cast<double>(both.size());
}

double oracle_ndcg(const Instance& in) {
  std::set<ItemIndex> t(in.targets.begin(), in.targets.end());
  double dcg = 0.0, ideal = 0.0;
  for (std::size_t i = 1; i <= in.k; ++i) dcg += t.count(in.ranked[i - 1]) ? 1.0 / std::log2(i + 1.0) : 0.0;
  for (std::size_t i = 1; i <= t.size(); ++i) ideal += 1.0 / std::log2(i + 1.0);
  return dcg / ideal;
}

}  // namespace

TEST(Precision, HandCases) {
  EXPECT_DOUBLE_EQ(mdrec::precision_at_k(std::vector<ItemIndex>{a, b}, TargetSet{a}, 2), 0.5);
  EXPECT_DOUBLE_EQ(mdrec::precision_at_k(std::vector<ItemIndex>{a, b, c}, TargetSet{c, b, a}, 3), 1.0);
}

TEST(Recall, HandCases) {
  EXPECT_DOUBLE_EQ(mdrec::recall_at_k(std::vector<ItemIndex>{a, b}, TargetSet{a, c, d}, 2), 1.0 / 3.0);
  EXPECT_EQ(mdrec::recall_at_k(std::vector<ItemIndex>{a, b}, TargetSet{c, d}, 2), 0.0);
  EXPECT_THROW(mdrec::recall_at_k(std::vector<ItemIndex>{a}, TargetSet{}, 1), mdrec::Error);
}

TEST(Ndcg, HandCases) {
  EXPECT_NEAR(mdrec::ndcg_at_k(std::vector<ItemIndex>{x, a}, TargetSet{a, b}, 2), 0.3869, 1e-4);
  EXPECT_NEAR(mdrec::ndcg_at_k(std::vector<ItemIndex>{x, a}, TargetSet{a, b}, 2),
              (1.0 / std::log2(3.0)) / (1.0 + 1.0 / std::log2(3.0)), 1e-15);
  EXPECT_DOUBLE_EQ(mdrec::ndcg_at_k(std::vector<ItemIndex>{b, a, x}, TargetSet{a, b}, 3), 1.0);
  EXPECT_EQ(mdrec::ndcg_at_k(std::vector<ItemIndex>{x, c}, TargetSet{a, b}, 2), 0.0);
  EXPECT_THROW(mdrec::ndcg_at_k(std::vector<ItemIndex>{a}, TargetSet{}, 1), mdrec::Error);
}

TEST(Ndcg, PerfectListBelowOneWhenKSmallerThanTargets) {
  EXPECT_LT(mdrec::ndcg_at_k(std::vector<ItemIndex>{a}, TargetSet{a, b}, 1), 1.0);
}

TEST(Ndcg, MonotoneWhenAHitMovesUp) {
  const TargetSet t{a};
  double prev = 0.0;
  for (std::size_t pos = 5; pos-- > 0;) {
    std::vector<ItemIndex> r{x, x + 1, x + 2, x + 3, x + 4};
    r[pos] = a;
    const double v = mdrec::ndcg_at_k(r, t, 5);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(F1, HandCases) {
  EXPECT_DOUBLE_EQ(mdrec::f1_score(0.5, 0.5), 0.5);
  EXPECT_EQ(mdrec::f1_score(0.0, 0.7), 0.0);
  EXPECT_EQ(mdrec::f1_score(0.0, 0.0), 0.0);
  EXPECT_NEAR(mdrec::f1_score(0.03, 0.12), 0.048, 1e-15);
}

TEST(Metrics, RandomInstancesMatchSetOracles) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto in = random_instance(rng);
    const TargetSet t = mdrec::target_set(in.targets);
    const double hits = oracle_hits(in);
    const double p = mdrec::precision_at_k(in.ranked, t, in.k);
    const double r = mdrec::recall_at_k(in.ranked, t, in.k);
    EXPECT_NEAR(p, hits / in.k, 1e-15);
    EXPECT_NEAR(r, hits / t.size(), 1e-15);
    EXPECT_NEAR(p * in.k, r * t.size(), 1e-12);
    EXPECT_NEAR(mdrec::ndcg_at_k(in.ranked, t, in.k), oracle_ndcg(in), 1e-12);
    for (double v : {p, r, mdrec::ndcg_at_k(in.ranked, t, in.k), mdrec::f1_score(p, r)}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Metrics, NdcgInvariantToTargetOrder) {
  std::vector<ItemIndex> future{c, a, d, a};
  const std::vector<ItemIndex> ranked{d, x, a, b};
  const double v = mdrec::ndcg_at_k(ranked, mdrec::target_set(future), 4);
  std::reverse(future.begin(), future.end());
  EXPECT_EQ(mdrec::ndcg_at_k(ranked, mdrec::target_set(future), 4), v);
}

TEST(RankScores, DescendingWithIndexTieBreak) {
  const std::vector<double> scores{0.1, 0.5, 0.5, -1.0, 0.5};
  const auto r = mdrec::rank_scores(scores, 5);
  EXPECT_EQ(r.items, (std::vector<ItemIndex>{1, 2, 4, 0, 3}));
  for (std::size_t i = 1; i < r.size(); ++i) EXPECT_LE(r.scores[i], r.scores[i - 1]);
  const std::vector<double> flat(6, 2.0);
  EXPECT_EQ(mdrec::rank_scores(flat, 6).items, (std::vector<ItemIndex>{0, 1, 2, 3, 4, 5}));
}

TEST(RankScores, ExcludeBeforeTruncateAndClamp) {
  const std::vector<double> scores{3, 2, 1, 0};
  const std::unordered_set<ItemIndex> exclude{0, 2};
  EXPECT_EQ(mdrec::rank_scores(scores, 2, &exclude).items, (std::vector<ItemIndex>{1, 3}));
  EXPECT_EQ(mdrec::rank_scores(scores, 10).size(), 4u);
  EXPECT_THROW(mdrec::rank_scores(scores, 0), mdrec::Error);
}

TEST(RankItems, MeanItemRanksFirst) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  mdrec::EmbeddingMatrix E(30, 5);
  for (std::size_t i = 0; i < 30; ++i)
    for (double& v : E.row(i)) v = g(rng);
  E = mdrec::normalize(E);
  for (ItemIndex target : {0u, 13u, 29u}) {
    mdrec::MixtureParameters p{{1.0}, {std::vector<double>(E.row(target).begin(), E.row(target).end())},
                               {std::vector<double>(5, 0.01)}};
    const auto r = mdrec::rank_items(p, E, 30);
    EXPECT_EQ(r.items.front(), target);
    std::set<ItemIndex> all(r.items.begin(), r.items.end());
    EXPECT_EQ(all.size(), 30u);
    // Brute force: the top item has the largest log-density.
    for (std::size_t i = 0; i < 30; ++i) EXPECT_LE(mdrec::log_density(E.row(i), p), r.scores.front());
  }
}

TEST(Evaluate, MacroAveragesAndSkipsEmptyTargets) {
  std::vector<mdrec::InteractionSequence> users{
      {"u1", {a}, {a, b}},
      {"u2", {b}, {c}},
      {"u3", {c}, {}},
  };
  auto fixed = [](const mdrec::InteractionSequence&, std::size_t k) {
    mdrec::RankedRecommendations r;
    r.items = {a, c, d};
    r.items.resize(std::min<std::size_t>(k, 3));
    r.scores.assign(r.items.size(), 0.0);
    return r;
  };
  const auto report = mdrec::evaluate(users, {1, 2}, fixed);
  EXPECT_EQ(report.users, 2u);
  EXPECT_EQ(report.skipped, 1u);
  // u1: P@1 = 1, R@1 = 0.5; u2: P@1 = 0, R@1 = 0.
  EXPECT_DOUBLE_EQ(report.at(1).precision, 0.5);
  EXPECT_DOUBLE_EQ(report.at(1).recall, 0.25);
  EXPECT_DOUBLE_EQ(report.at(1).f1, (mdrec::f1_score(1.0, 0.5) + 0.0) / 2.0);
  // u1: P@2 = 0.5, R@2 = 0.5; u2: P@2 = 0.5, R@2 = 1.
  EXPECT_DOUBLE_EQ(report.at(2).precision, 0.5);
  EXPECT_DOUBLE_EQ(report.at(2).recall, 0.75);
  EXPECT_DOUBLE_EQ(report.at(2).f1, (0.5 + mdrec::f1_score(0.5, 1.0)) / 2.0);
  EXPECT_THROW(report.at(3), mdrec::Error);
}

TEST(Evaluate, DuplicateFutureItemsCountOnce) {
  std::vector<mdrec::InteractionSequence> users{{"u", {a}, {b, b, b}}};
  auto rec = [](const mdrec::InteractionSequence&, std::size_t) {
    return mdrec::RankedRecommendations{{b}, {0.0}};
  };
  const auto report = mdrec::evaluate(users, {1}, rec);
  EXPECT_DOUBLE_EQ(report.at(1).recall, 1.0);
  EXPECT_DOUBLE_EQ(report.at(1).ndcg, 1.0);
}

TEST(Output, MetricAndPlotRows) {
  mdrec::MetricReport report;
  report.cutoffs.push_back({10, 0.1, 0.2, 0.3, 0.4});
  report.users = 3;
  std::ostringstream rows, plot;
  mdrec::write_metric_rows(rows, "RNN-RNN-2", report);
  EXPECT_EQ(rows.str(), "RNN-RNN-2,10,0.100000,0.200000,0.300000,0.400000\n");
  mdrec::write_plot_rows(plot, "RNN-RNN", 2, report);
  EXPECT_EQ(plot.str(),
            "RNN-RNN,2,precision@10,0.100000\nRNN-RNN,2,recall@10,0.200000\nRNN-RNN,2,ndcg@10,0.300000\n");
}
