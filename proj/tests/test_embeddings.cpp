#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "mdrec/embeddings.hpp"

using mdrec::EmbeddingMatrix;
using mdrec::InteractionSequence;
using mdrec::Tensor;

namespace {

EmbeddingMatrix from_rows(const std::vector<std::vector<double>>& rows) {
  Tensor<double> t({rows.size(), rows.front().size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) t.at(i, j) = rows[i][j];
  return EmbeddingMatrix(std::move(t));
}

double cosine(std::span<const double> a, std::span<const double> b) {
  return mdrec::dot<double>(a, b) / (mdrec::l2_norm<double>(a) * mdrec::l2_norm<double>(b));
}

}  // namespace

TEST(Normalize, ScalesRowToUnitNorm) {
  auto m = mdrec::normalize(from_rows({{3.0, 4.0}}));
  EXPECT_DOUBLE_EQ(m.row(0)[0], 0.6);
  EXPECT_DOUBLE_EQ(m.row(0)[1], 0.8);
}

TEST(Normalize, UnitNormAndIdempotent) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  EmbeddingMatrix m(50, 7);
  for (std::size_t i = 0; i < 50; ++i)
    for (double& v : m.row(i)) v = g(rng);
  const auto once = mdrec::normalize(m);
  const auto twice = mdrec::normalize(once);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_NEAR(mdrec::l2_norm<double>(once.row(i)), 1.0, 1e-12);
    for (std::size_t d = 0; d < 7; ++d) EXPECT_NEAR(once.row(i)[d], twice.row(i)[d], 1e-15);
  }
}

TEST(Normalize, ZeroRowIsAnErrorNamingTheItem) {
  mdrec::ItemVocabulary vocab;
  vocab.add("apple");
  vocab.add("pear");
  auto m = from_rows({{1.0, 0.0}, {0.0, 0.0}});
  try {
    mdrec::normalize(m, &vocab);
    FAIL() << "expected an error";
  } catch (const mdrec::Error& e) {
    EXPECT_NE(std::string(e.what()).find("pear"), std::string::npos);
  }
}

TEST(Lookup, ReturnsRowAndRejectsOutOfRange) {
  auto m = from_rows({{1.0, 2.0}, {3.0, 4.0}});
  EXPECT_EQ(m.lookup(1), Tensor<double>::vector({3.0, 4.0}));
  EXPECT_EQ(m.lookup<float>(0), Tensor<float>::vector({1.0f, 2.0f}));
  EXPECT_THROW(m.lookup(2), mdrec::Error);
}

TEST(Cbow, SingleItemCorpusLeavesInitialization) {
  mdrec::CbowConfig cfg;
  cfg.dim = 8;
  cfg.window = 1;
  cfg.seed = 5;
  std::vector<InteractionSequence> seqs{{"u", {0}, {}}};
  const auto trained = mdrec::train_cbow(seqs, 1, cfg);
  EXPECT_EQ(trained, mdrec::cbow_initialization(1, cfg));
}

TEST(Cbow, EmptyCorpusThrows) {
  mdrec::CbowConfig cfg;
  EXPECT_THROW(mdrec::train_cbow({}, 10, cfg), mdrec::Error);
}

TEST(Cbow, DeterministicForSeed) {
  std::vector<InteractionSequence> seqs{{"a", {0, 1, 2}, {3}}, {"b", {2, 3, 1}, {0}}};
  mdrec::CbowConfig cfg;
  cfg.dim = 6;
  cfg.seed = 9;
  const auto first = mdrec::train_cbow(seqs, 4, cfg);
  EXPECT_EQ(first, mdrec::train_cbow(seqs, 4, cfg));
  cfg.seed = 10;
  EXPECT_NE(first.checksum(), mdrec::train_cbow(seqs, 4, cfg).checksum());
}

TEST(Cbow, CooccurringPairIsCloserThanMedianPair) {
  // One repeated adjacent pair (items 0, 1) inside sequences of near-singleton
  // fillers. Frequent fillers would all look alike and swamp the signal.
  const std::size_t pool = 5000, length = 10, n_seqs = 500;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed + 100);
    std::uniform_int_distribution<mdrec::ItemIndex> filler(2, pool + 1);
    std::uniform_int_distribution<std::size_t> where(0, length - 2);
    std::vector<InteractionSequence> seqs;
    for (std::size_t n = 0; n < n_seqs; ++n) {
      InteractionSequence s{"u", {}, {}};
      for (std::size_t i = 0; i < length; ++i) s.history.push_back(filler(rng));
      const auto p = where(rng);
      s.history[p] = 0;
      s.history[p + 1] = 1;
      seqs.push_back(s);
    }
    mdrec::CbowConfig cfg;
    cfg.dim = 16;
    cfg.window = 5;
    cfg.seed = seed;
    const auto E = mdrec::train_cbow(seqs, pool + 2, cfg);
    std::uniform_int_distribution<std::size_t> pick(2, pool + 1);
    std::vector<double> cosines;
    while (cosines.size() < 5000) {
      const auto i = pick(rng), j = pick(rng);
      if (i != j) cosines.push_back(cosine(E.row(i), E.row(j)));
    }
    std::nth_element(cosines.begin(), cosines.begin() + cosines.size() / 2, cosines.end());
    EXPECT_GT(cosine(E.row(0), E.row(1)), cosines[cosines.size() / 2]) << "seed " << seed;
  }
}

TEST(NegativeSampler, FollowsUnigramToTheThreeQuarters) {
  const std::vector<std::uint64_t> counts{1, 4, 9, 16, 100, 0};
  mdrec::NegativeSampler sampler(counts);
  std::vector<double> expected;
  double z = 0;
  for (auto c : counts) z += std::pow(static_cast<double>(c), 0.75);
  for (auto c : counts) expected.push_back(std::pow(static_cast<double>(c), 0.75) / z);
  const auto probs = sampler.probabilities();
  for (std::size_t i = 0; i < counts.size(); ++i) EXPECT_NEAR(probs[i], expected[i], 1e-12);

  std::mt19937_64 rng(2024);
  const int draws = 1000000;
  std::vector<double> observed(counts.size(), 0.0);
  for (int i = 0; i < draws; ++i) observed[sampler(rng)] += 1.0;
  EXPECT_EQ(observed[5], 0.0);
  double chi2 = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const double e = expected[i] * draws;
    chi2 += (observed[i] - e) * (observed[i] - e) / e;
  }
  // 4 degrees of freedom, p = 0.001 critical value.
  EXPECT_LT(chi2, 18.467);
}

TEST(TextVectors, RoundTripAndReorderByVocabulary) {
  mdrec::ItemVocabulary vocab;
  vocab.add("x");
  vocab.add("y");
  auto m = from_rows({{0.1, 1.0 / 3.0}, {-2.5, 1e-17}});
  std::stringstream buf;
  mdrec::write_text_vectors(buf, m, vocab);
  EXPECT_EQ(mdrec::read_text_vectors(buf, vocab), m);

  mdrec::ItemVocabulary reversed;
  reversed.add("y");
  reversed.add("x");
  std::stringstream again("2 2\nx 1 2\ny 3 4\nextra 5 6\n");
  const auto r = mdrec::read_text_vectors(again, reversed);
  EXPECT_EQ(r.row(0)[0], 3.0);
  EXPECT_EQ(r.row(1)[1], 2.0);
}

TEST(TextVectors, MissingItemOrBadRowFails) {
  mdrec::ItemVocabulary vocab;
  vocab.add("x");
  vocab.add("y");
  std::stringstream missing("1 2\nx 1 2\n");
  EXPECT_THROW(mdrec::read_text_vectors(missing, vocab), mdrec::Error);
  std::stringstream short_row("2 2\nx 1 2\ny 3\n");
  EXPECT_THROW(mdrec::read_text_vectors(short_row, vocab), mdrec::Error);
}

TEST(EmbeddingCheckpoint, RoundTripIsBitExact) {
  auto m = from_rows({{0.1, 0.2, 0.3}, {1.0 / 7.0, -1e-300, 5.0}});
  const auto path = std::filesystem::temp_directory_path() / "mdrec_test_embeddings.ckpt";
  mdrec::save_embeddings(path, m);
  const auto back = mdrec::load_embeddings(path);
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.checksum(), m.checksum());
  std::filesystem::remove(path);
}
