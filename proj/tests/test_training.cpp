#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "mdrec/synthetic.hpp"
#include "mdrec/training.hpp"
#include "support/oracles.hpp"

using mdrec::EmbeddingMatrix;
using mdrec::InteractionSequence;
using mdrec::MdnRecommender;
using mdrec::ModelConfig;

namespace {

EmbeddingMatrix random_embeddings(std::size_t vocab, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  EmbeddingMatrix E(vocab, dim);
  for (std::size_t i = 0; i < vocab; ++i)
    for (double& v : E.row(i)) v = g(rng);
  return mdrec::normalize(E);
}

ModelConfig small(const std::string& name, std::size_t d_emb = 4, std::size_t d_hidden = 6) {
  ModelConfig c;
  c.d_emb = d_emb;
  c.d_hidden = d_hidden;
  c.init_scale = 0.4;
  return c.with_name(name);
}

double tape_loss(const MdnRecommender<double>& model, const InteractionSequence& seq, const EmbeddingMatrix& E) {
  mdrec::ad::Tape<double> tape;
  return model.sequence_loss(tape, seq, E).value()[0];
}

double oracle_loss(const MdnRecommender<double>& model, const InteractionSequence& seq, const EmbeddingMatrix& E) {
  const auto mix = model.mixture(seq.history, E);
  double total = 0.0;
  for (auto item : seq.future) {
    const std::vector<double> v(E.row(item).begin(), E.row(item).end());
    total += std::log(oracle::naive_mixture_density(v, mix.weights, mix.means, mix.variances));
  }
  return -total / static_cast<double>(seq.future.size());
}

mdrec::SyntheticCorpus tiny_corpus(std::uint64_t seed = 3) {
  mdrec::SyntheticConfig cfg;
  cfg.dim = 8;
  cfg.sequences = 120;
  cfg.items_per_cluster = 8;
  cfg.seed = seed;
  return mdrec::generate_synthetic(cfg);
}

const std::vector<std::string> kFamilies{"CBoI-FF-2", "RNN-FF-2", "RNN-RNN-2", "RNN-ATT-RNN-2"};

}  // namespace

TEST(Loss, SingleFutureItemIsNegativeLogDensity) {
  const auto E = random_embeddings(10, 4, 1);
  for (const auto& name : kFamilies) {
    const MdnRecommender<double> model(small(name), 7);
    const InteractionSequence seq{"u", {1, 2, 3}, {5}};
    EXPECT_NEAR(tape_loss(model, seq, E), oracle_loss(model, seq, E), 1e-10) << name;
  }
}

TEST(Loss, LengthNormalizedAndDuplicateInvariant) {
  const auto E = random_embeddings(10, 4, 2);
  const MdnRecommender<double> model(small("RNN-RNN-3"), 8);
  const InteractionSequence once{"u", {0, 4}, {6}};
  const InteractionSequence twice{"u", {0, 4}, {6, 6}};
  EXPECT_NEAR(tape_loss(model, once, E), tape_loss(model, twice, E), 1e-12);
  const InteractionSequence mixed{"u", {0, 4}, {6, 9, 1}};
  EXPECT_NEAR(tape_loss(model, mixed, E), oracle_loss(model, mixed, E), 1e-10);
  EXPECT_NEAR(model.sequence_log_likelihood(mixed, E), -tape_loss(model, mixed, E), 1e-10);
}

TEST(Loss, TwoDimensionalHandOracle) {
  // CBoI-FF-1 with d_emb = 2, d_hidden = 2 and hand-set weights.
  ModelConfig cfg = small("CBoI-FF-1", 2, 2);
  MdnRecommender<double> model(cfg, 1);
  auto& p = model.params();
  for (auto& [name, t] : p) t *= 0.0;
  p["proj.W"].at(0, 0) = 1.0;
  p["proj.W"].at(1, 1) = 1.0;
  EmbeddingMatrix E(2, 2);
  E.row(0)[0] = 1.0;
  E.row(1)[1] = 1.0;
  // All decoder weights zero: mean 0, variance softplus(0) + 1e-4 per dim.
  const double var = std::log(2.0) + 1e-4;
  const double expected = std::log(2.0 * M_PI * var) + 1.0 / (2.0 * var);
  EXPECT_NEAR(tape_loss(model, {"u", {0}, {1}}, E), expected, 1e-12);
}

TEST(Loss, FiniteAtInitialization) {
  const auto corpus = tiny_corpus();
  for (const auto& name : kFamilies) {
    const MdnRecommender<double> model(small(name, 8, 8), 11);
    for (const auto& s : corpus.bundle.train) EXPECT_TRUE(std::isfinite(tape_loss(model, s, corpus.embeddings)));
  }
}

TEST(Gradients, ModelLossMatchesFiniteDifferences) {
  const auto E = random_embeddings(9, 3, 4);
  const InteractionSequence seq{"u", {0, 3, 5, 8}, {2, 7}};
  for (const auto& name : kFamilies) {
    for (std::uint64_t seed : {1u, 2u}) {
      ModelConfig cfg = small(name, 3, 4);
      const MdnRecommender<double> model(cfg, seed);
      mdrec::ad::Tape<double> tape;
      const auto analytic = tape.gradients(model.sequence_loss(tape, seq, E), model.params());
      const auto numeric = oracle::numeric_gradients(model.params(), [&](const mdrec::ParameterStore<double>& p) {
        return tape_loss(MdnRecommender<double>(cfg, p), seq, E);
      });
      EXPECT_LT(oracle::max_relative_error(analytic, numeric), 1e-4) << name << " seed " << seed;
    }
  }
}

TEST(Optimizer, SmallStepDecreasesLoss) {
  const auto E = random_embeddings(12, 4, 5);
  std::vector<InteractionSequence> seqs;
  for (mdrec::ItemIndex i = 0; i < 5; ++i) seqs.push_back({"u" + std::to_string(i), {i, i + 1, i + 2}, {i + 6}});
  for (const auto& name : kFamilies) {
    MdnRecommender<double> model(small(name), 9);
    mdrec::TrainConfig cfg;
    cfg.adam.lr = 1e-3;
    double before = 0.0, after = 0.0;
    for (const auto& s : seqs) before += tape_loss(model, s, E);
    mdrec::AdamState<double> adam(model.params());
    mdrec::train_batch(model, adam, seqs, {0, 1, 2, 3, 4}, E, cfg);
    for (const auto& s : seqs) after += tape_loss(model, s, E);
    EXPECT_LT(after, before) << name;
  }
}

TEST(Optimizer, ThreadedBatchMatchesSerial) {
  const auto corpus = tiny_corpus();
  std::vector<std::size_t> batch;
  for (std::size_t i = 0; i < 16; ++i) batch.push_back(i);
  mdrec::TrainConfig serial, threaded;
  threaded.threads = 4;
  MdnRecommender<double> a(small("RNN-RNN-2", 8, 8), 3), b(small("RNN-RNN-2", 8, 8), 3);
  mdrec::AdamState<double> sa(a.params()), sb(b.params());
  const double la = mdrec::train_batch(a, sa, corpus.bundle.train, batch, corpus.embeddings, serial);
  const double lb = mdrec::train_batch(b, sb, corpus.bundle.train, batch, corpus.embeddings, threaded);
  EXPECT_NEAR(la, lb, 1e-9);
  for (const auto& [name, t] : a.params())
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(t[i], b.params()[name][i], 1e-12) << name;
}

TEST(Batches, OneHistoryLengthPerBatchCoveringAll) {
  std::vector<InteractionSequence> seqs;
  for (std::size_t i = 0; i < 40; ++i) seqs.push_back({"u", std::vector<mdrec::ItemIndex>(1 + i % 4, 0), {0}});
  auto rng = mdrec::make_rng(1, "shuffle");
  std::vector<int> seen(seqs.size(), 0);
  for (const auto& b : mdrec::make_batches(seqs, 3, rng)) {
    EXPECT_LE(b.size(), 3u);
    for (auto i : b) {
      EXPECT_EQ(seqs[i].history.size(), seqs[b[0]].history.size());
      ++seen[i];
    }
  }
  for (int n : seen) EXPECT_EQ(n, 1);
  EXPECT_THROW(mdrec::make_batches(seqs, 0, rng), mdrec::TrainingError);
}

TEST(Train, PatienceZeroStopsAfterFirstNonImprovingEpoch) {
  const auto corpus = tiny_corpus();
  MdnRecommender<double> model(small("RNN-FF-1", 8, 8), 5);
  mdrec::TrainConfig cfg;
  cfg.patience = 0;
  cfg.max_epochs = 30;
  cfg.batch_size = 16;
  cfg.log_wall_time = false;
  const auto result = mdrec::train(model, corpus.bundle, corpus.embeddings, cfg);
  const auto& log = result.log;
  ASSERT_FALSE(log.empty());
  if (log.size() < cfg.max_epochs) {
    // The last epoch is the first one that did not beat the best so far.
    double best = -1.0;
    for (std::size_t i = 0; i + 1 < log.size(); ++i) {
      EXPECT_GT(log[i].valid_f1, best);
      best = log[i].valid_f1;
    }
    EXPECT_LE(log.back().valid_f1, best);
  }
  // Best parameters are restored.
  const auto report = mdrec::evaluate_model(model, corpus.bundle.validation, corpus.embeddings, {cfg.eval_cutoff});
  EXPECT_DOUBLE_EQ(report.at(cfg.eval_cutoff).f1, result.state.best_f1);
}

TEST(Train, DeterministicLogsAndFrozenEmbeddings) {
  const auto corpus = tiny_corpus();
  const auto checksum = corpus.embeddings.checksum();
  mdrec::TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 16;
  cfg.log_wall_time = false;
  cfg.seed = 21;
  std::string logs[2];
  mdrec::ParameterStore<double> params[2];
  for (int run = 0; run < 2; ++run) {
    MdnRecommender<double> model(small("RNN-RNN-2", 8, 8), 21);
    std::ostringstream os;
    mdrec::write_train_log(os, mdrec::train(model, corpus.bundle, corpus.embeddings, cfg).log);
    logs[run] = os.str();
    params[run] = model.params();
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(params[0], params[1]);
  EXPECT_EQ(corpus.embeddings.checksum(), checksum);
  EXPECT_EQ(logs[0].substr(0, logs[0].find('\n')), mdrec::kTrainLogHeader);
}

TEST(Train, RejectsMissingValidation) {
  auto corpus = tiny_corpus();
  corpus.bundle.validation.clear();
  MdnRecommender<double> model(small("RNN-FF-1", 8, 8), 1);
  EXPECT_THROW(mdrec::train(model, corpus.bundle, corpus.embeddings, mdrec::TrainConfig{}), mdrec::TrainingError);
}

TEST(Persistence, SaveLoadRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "mdrec_test_model.ckpt";
  const auto E = random_embeddings(10, 4, 6);
  for (const auto& name : kFamilies) {
    const MdnRecommender<double> model(small(name), 12);
    mdrec::save_model(path, model);
    const auto back = mdrec::load_model<double>(path);
    EXPECT_EQ(back.config().name(), name);
    EXPECT_EQ(back.params(), model.params());
    const auto m1 = model.mixture({1, 2}, E), m2 = back.mixture({1, 2}, E);
    EXPECT_EQ(m1.weights, m2.weights);
    EXPECT_EQ(m1.means, m2.means);
  }
  EXPECT_THROW(mdrec::load_model<float>(path), mdrec::CheckpointError);
  std::filesystem::remove(path);
}

TEST(ModelConfig, NamesParseAndValidate) {
  ModelConfig base;
  EXPECT_EQ(base.with_name("rnn-att-rnn-8").name(), "RNN-ATT-RNN-8");
  EXPECT_EQ(base.with_name("CBoI-RNN-4").name(), "CBoI-RNN-4");
  EXPECT_THROW(base.with_name("RNN-ATT-FF-2"), mdrec::Error);
  EXPECT_THROW(base.with_name("RNN-RNN-0"), mdrec::Error);
  EXPECT_THROW(base.with_name("GRU-FF-1"), mdrec::Error);
  const auto j = small("RNN-ATT-RNN-2").to_json();
  EXPECT_EQ(ModelConfig::from_json(j).name(), "RNN-ATT-RNN-2");
}
