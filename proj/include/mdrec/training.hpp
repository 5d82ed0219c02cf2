#pragma once

// Mini-batch maximum likelihood training with F1@20 early stopping.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "mdrec/adam.hpp"
#include "mdrec/checkpoint.hpp"
#include "mdrec/evaluation.hpp"
#include "mdrec/model.hpp"

namespace mdrec {

class TrainingError : public Error {
 public:
  using Error::Error;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t patience = 5;
  std::size_t max_epochs = 100;
  AdamConfig adam;
  std::uint64_t seed = 0;
  /// Early-stopping cutoff (F1@k on the validation split).
  std::size_t eval_cutoff = 20;
  bool exclude_history = false;
  /// Wall-clock seconds in the log; off makes the log reproducible byte for byte.
  bool log_wall_time = true;
  /// Worker threads per batch. 1 is the deterministic reference mode.
  std::size_t threads = 1;
  /// NaN/Inf checks on every primitive.
  bool checked = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double valid_f1 = 0.0;
  double seconds = 0.0;
};

template <typename Real>
struct TrainState {
  std::size_t epoch = 0;
  double best_f1 = -1.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_since_improvement = 0;
  ParameterStore<Real> best_params;
};

template <typename Real>
struct TrainResult {
  TrainState<Real> state;
  std::vector<EpochRecord> log;
};

inline constexpr const char* kTrainLogHeader = "epoch,train_nll,valid_f1@20,seconds";

inline void write_train_log_row(std::ostream& os, const EpochRecord& r) {
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << r.epoch << ',' << std::setprecision(std::numeric_limits<double>::max_digits10) << r.train_nll << ','
     << r.valid_f1 << ',' << std::fixed << std::setprecision(3) << r.seconds << '\n';
  os.flags(flags);
  os.precision(prec);
}

inline void write_train_log(std::ostream& os, const std::vector<EpochRecord>& log) {
  os << kTrainLogHeader << '\n';
  for (const auto& r : log) write_train_log_row(os, r);
}

/// Ranks the vocabulary for every sequence's history with the model.
template <typename Real>
Recommender model_recommender(const MdnRecommender<Real>& model, const EmbeddingMatrix& E,
                              bool exclude_history = false) {
  return [&model, &E, exclude_history](const InteractionSequence& seq, std::size_t k) {
    const auto mix = model.mixture(seq.history, E);
    if (!exclude_history) return rank_items(mix, E, k);
    const std::unordered_set<ItemIndex> exclude(seq.history.begin(), seq.history.end());
    return rank_items(mix, E, k, &exclude);
  };
}

template <typename Real>
MetricReport evaluate_model(const MdnRecommender<Real>& model, const std::vector<InteractionSequence>& seqs,
                            const EmbeddingMatrix& E, const std::vector<std::size_t>& cutoffs,
                            bool exclude_history = false) {
  return evaluate(seqs, cutoffs, model_recommender(model, E, exclude_history));
}

/// Mean over sequences of the per-item-averaged log-likelihood of the future.
template <typename Real>
double mean_log_likelihood(const MdnRecommender<Real>& model, const std::vector<InteractionSequence>& seqs,
                           const EmbeddingMatrix& E) {
  if (seqs.empty()) throw Error("mean_log_likelihood: no sequences");
  double total = 0.0;
  for (const auto& s : seqs) total += model.sequence_log_likelihood(s, E);
  return total / static_cast<double>(seqs.size());
}

/// Batches of indices into `seqs`, each batch holding one history length.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<InteractionSequence>& seqs,
                                                          std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw TrainingError("batch size must be >= 1");
  std::map<std::size_t, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < seqs.size(); ++i) buckets[seqs[i].history.size()].push_back(i);
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [_, idx] : buckets) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t b = 0; b < idx.size(); b += batch_size) {
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b),
                           idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), b + batch_size)));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

namespace detail {

/// Sum of losses and gradients over seqs[idx[begin..end)].
template <typename Real>
double accumulate_gradients(const MdnRecommender<Real>& model, const std::vector<InteractionSequence>& seqs,
                            const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end,
                            const EmbeddingMatrix& E, bool checked, Gradients<Real>& out) {
  double loss_sum = 0.0;
  for (std::size_t b = begin; b < end; ++b) {
    const auto& seq = seqs[idx[b]];
    ad::Tape<Real> tape(checked);
    auto loss = model.sequence_loss(tape, seq, E);
    const double value = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(value)) {
      throw TrainingError("non-finite loss for sequence '" + seq.user + "' (history length " +
                          std::to_string(seq.history.size()) + ")");
    }
    loss_sum += value;
    out += tape.gradients(loss, model.params());
  }
  return loss_sum;
}

}  // namespace detail

/// One optimizer step on the mean loss of `batch`. Returns the summed loss.
template <typename Real>
double train_batch(MdnRecommender<Real>& model, AdamState<Real>& adam, const std::vector<InteractionSequence>& seqs,
                   const std::vector<std::size_t>& batch, const EmbeddingMatrix& E, const TrainConfig& cfg) {
  Gradients<Real> grads = model.params().zeros_like();
  double loss_sum = 0.0;
  const std::size_t workers = std::min(std::max<std::size_t>(cfg.threads, 1), batch.size());
  if (workers <= 1) {
    loss_sum = detail::accumulate_gradients(model, seqs, batch, 0, batch.size(), E, cfg.checked, grads);
  } else {
    std::vector<Gradients<Real>> partial(workers, grads);
    std::vector<double> losses(workers, 0.0);
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    const std::size_t chunk = (batch.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          const std::size_t b = w * chunk, e = std::min(batch.size(), b + chunk);
          if (b < e) losses[w] = detail::accumulate_gradients(model, seqs, batch, b, e, E, cfg.checked, partial[w]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    for (std::size_t w = 0; w < workers; ++w) {
      grads += partial[w];
      loss_sum += losses[w];
    }
  }
  grads *= Real{1} / static_cast<Real>(batch.size());
  adam_step(model.params(), grads, adam, cfg.adam);
  return loss_sum;
}

/// Trains until validation F1@cutoff fails to improve for more than
/// `patience` epochs (or max_epochs), then restores the best parameters.
/// `on_epoch` sees each log row as soon as it exists.
template <typename Real, typename OnEpoch>
TrainResult<Real> train(MdnRecommender<Real>& model, const DatasetBundle& data, const EmbeddingMatrix& E,
                        const TrainConfig& cfg, OnEpoch on_epoch) {
  if (data.train.empty()) throw TrainingError("no training sequences");
  if (data.validation.empty()) throw TrainingError("no validation sequences for early stopping");
  if (E.vocab_size() != data.vocab.size() && !data.vocab.empty()) {
    throw TrainingError("embedding rows do not match the vocabulary");
  }
  Rng shuffle_rng = make_rng(cfg.seed, "shuffle");
  AdamState<Real> adam(model.params());
  TrainResult<Real> result;
  auto& st = result.state;
  st.best_params = model.params();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    st.epoch = epoch;
    double loss_sum = 0.0;
    for (const auto& batch : make_batches(data.train, cfg.batch_size, shuffle_rng)) {
      loss_sum += train_batch(model, adam, data.train, batch, E, cfg);
    }
    const auto report = evaluate_model(model, data.validation, E, {cfg.eval_cutoff}, cfg.exclude_history);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_nll = loss_sum / static_cast<double>(data.train.size());
    rec.valid_f1 = report.at(cfg.eval_cutoff).f1;
    if (cfg.log_wall_time) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    result.log.push_back(rec);
    on_epoch(rec);

    if (rec.valid_f1 > st.best_f1) {
      st.best_f1 = rec.valid_f1;
      st.best_epoch = epoch;
      st.best_params = model.params();
      st.epochs_since_improvement = 0;
    } else if (++st.epochs_since_improvement > cfg.patience) {
      break;
    }
  }
  model.params() = st.best_params;
  return result;
}

template <typename Real>
TrainResult<Real> train(MdnRecommender<Real>& model, const DatasetBundle& data, const EmbeddingMatrix& E,
                        const TrainConfig& cfg) {
  return train(model, data, E, cfg, [](const EpochRecord&) {});
}

template <typename Real>
void save_model(const std::filesystem::path& path, const MdnRecommender<Real>& model,
                nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json meta = model.config().to_json();
  meta["precision"] = sizeof(Real) * 8;
  for (auto& [k, v] : extra.items()) meta[k] = v;
  save_checkpoint(path, model.params(), meta.dump());
}

template <typename Real>
MdnRecommender<Real> load_model(const std::filesystem::path& path) {
  auto ckpt = load_checkpoint<Real>(path);
  const auto meta = nlohmann::json::parse(ckpt.metadata);
  auto config = ModelConfig::from_json(meta);
  MdnRecommender<Real> reference(config, std::uint64_t{0});
  for (const auto& [name, t] : reference.params()) {
    if (!ckpt.params.contains(name) || ckpt.params.get(name).shape() != t.shape()) {
      throw CheckpointError("checkpoint: parameter '" + name + "' missing or mis-shaped for " + config.name());
    }
  }
  return MdnRecommender<Real>(config, std::move(ckpt.params));
}

}  // namespace mdrec
