#pragma once

// Experiment manifests and the on-disk pipeline behind the CLI.
//
// Output directory layout:
//   data/               preprocessed bundle (vocab.txt, train/valid/test.tsv, meta.json)
//   embeddings.ckpt     frozen item vectors, rows aligned with data/vocab.txt
//   embeddings.txt      the same vectors as text
//   models/NAME.ckpt    trained model, NAME.train.csv its epoch log
//   baseline/cooccurrence.txt
//   metrics.csv, plot.csv

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdrec/baselines.hpp"
#include "mdrec/synthetic.hpp"
#include "mdrec/training.hpp"

namespace mdrec {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct DatasetConfig {
  /// "movielens", "recsys" or "synthetic".
  std::string kind = "synthetic";
  std::string path;
  ColumnMapping columns;
  bool columns_set = false;
  SplitRatios ratios;
};

struct EvaluationConfig {
  std::vector<std::size_t> cutoffs{10, 20};
  /// Checkpoint names plus "RVI" and "Item-CF".
  std::vector<std::string> models;
  /// "test" or "validation".
  std::string split = "test";
  bool exclude_history = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "run";
  DatasetConfig dataset;
  SyntheticConfig synthetic;
  CbowConfig embedding;
  ModelConfig model;
  TrainConfig training;
  EvaluationConfig evaluation;

  /// Seeds every component from the top-level seed.
  void propagate_seed() {
    synthetic.seed = seed;
    embedding.seed = seed;
    training.seed = seed;
  }
};

namespace detail {

inline void allow_keys(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: bad value for " + where + "." + key + ": " + j.at(key).dump());
  }
}

inline char delimiter_from(const std::string& s) {
  if (s == "\\t" || s == "tab" || s == "\t") return '\t';
  if (s.size() != 1) throw ConfigError("config: delimiter must be a single character, got '" + s + "'");
  return s[0];
}

}  // namespace detail

/// Parses a manifest. Unknown keys are rejected at every level and a
/// referenced dataset path must exist.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::allow_keys;
  using detail::read_key;
  ExperimentConfig c;
  allow_keys(j, {"seed", "out", "dataset", "synthetic", "embedding", "model", "training", "evaluation"}, "config");
  read_key(j, "seed", c.seed, "config");
  if (j.contains("out")) c.out = j.at("out").get<std::string>();

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    allow_keys(d, {"kind", "path", "delimiter", "header", "columns", "ratios"}, "dataset");
    read_key(d, "kind", c.dataset.kind, "dataset");
    read_key(d, "path", c.dataset.path, "dataset");
    c.dataset.columns = c.dataset.kind == "recsys" ? ColumnMapping::recsys() : ColumnMapping::movielens();
    if (d.contains("delimiter")) {
      c.dataset.columns.delimiter = detail::delimiter_from(d.at("delimiter").get<std::string>());
      c.dataset.columns_set = true;
    }
    if (d.contains("header")) {
      read_key(d, "header", c.dataset.columns.header, "dataset");
      c.dataset.columns_set = true;
    }
    if (d.contains("columns")) {
      const auto& cols = d.at("columns");
      allow_keys(cols, {"user", "item", "rating", "timestamp"}, "dataset.columns");
      read_key(cols, "user", c.dataset.columns.user, "dataset.columns");
      read_key(cols, "item", c.dataset.columns.item, "dataset.columns");
      read_key(cols, "rating", c.dataset.columns.rating, "dataset.columns");
      read_key(cols, "timestamp", c.dataset.columns.timestamp, "dataset.columns");
      c.dataset.columns_set = true;
    }
    if (d.contains("ratios")) {
      std::vector<double> r;
      read_key(d, "ratios", r, "dataset");
      if (r.size() != 3) throw ConfigError("config: dataset.ratios needs three values");
      c.dataset.ratios = {r[0], r[1], r[2]};
    }
    if (!c.dataset.path.empty() && !std::filesystem::exists(c.dataset.path)) {
      throw ConfigError("config: dataset path does not exist: " + c.dataset.path);
    }
  }

  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    auto& o = c.synthetic;
    allow_keys(s,
               {"dim", "source_clusters", "target_clusters", "items_per_cluster", "sequences", "modality",
                "history_length", "future_length", "order_dependent", "spread", "focus", "min_separation"},
               "synthetic");
    read_key(s, "dim", o.dim, "synthetic");
    read_key(s, "source_clusters", o.source_clusters, "synthetic");
    read_key(s, "target_clusters", o.target_clusters, "synthetic");
    read_key(s, "items_per_cluster", o.items_per_cluster, "synthetic");
    read_key(s, "sequences", o.sequences, "synthetic");
    read_key(s, "modality", o.modality, "synthetic");
    read_key(s, "history_length", o.history_length, "synthetic");
    read_key(s, "future_length", o.future_length, "synthetic");
    read_key(s, "order_dependent", o.order_dependent, "synthetic");
    read_key(s, "spread", o.spread, "synthetic");
    read_key(s, "focus", o.focus, "synthetic");
    read_key(s, "min_separation", o.min_separation, "synthetic");
  }

  if (j.contains("embedding")) {
    const auto& e = j.at("embedding");
    auto& o = c.embedding;
    allow_keys(e, {"dim", "window", "negative_samples", "epochs", "learning_rate", "min_count", "include_future"},
               "embedding");
    read_key(e, "dim", o.dim, "embedding");
    read_key(e, "window", o.window, "embedding");
    read_key(e, "negative_samples", o.negative_samples, "embedding");
    read_key(e, "epochs", o.epochs, "embedding");
    read_key(e, "learning_rate", o.learning_rate, "embedding");
    read_key(e, "min_count", o.min_count, "embedding");
    read_key(e, "include_future", o.include_future, "embedding");
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    allow_keys(m, {"name", "d_hidden", "scorer", "variance_floor", "init_scale"}, "model");
    read_key(m, "d_hidden", c.model.d_hidden, "model");
    read_key(m, "variance_floor", c.model.variance_floor, "model");
    read_key(m, "init_scale", c.model.init_scale, "model");
    if (m.contains("scorer")) {
      const auto s = m.at("scorer").get<std::string>();
      if (s != "dot" && s != "additive") throw ConfigError("config: model.scorer must be 'dot' or 'additive'");
      c.model.scorer = s == "dot" ? ScorerKind::Dot : ScorerKind::Additive;
    }
    if (m.contains("name")) c.model = c.model.with_name(m.at("name").get<std::string>());
  }

  if (j.contains("training")) {
    const auto& t = j.at("training");
    auto& o = c.training;
    allow_keys(t,
               {"batch_size", "patience", "max_epochs", "lr", "beta1", "beta2", "epsilon", "clip_norm",
                "eval_cutoff", "exclude_history", "log_wall_time", "threads", "checked"},
               "training");
    read_key(t, "batch_size", o.batch_size, "training");
    read_key(t, "patience", o.patience, "training");
    read_key(t, "max_epochs", o.max_epochs, "training");
    read_key(t, "lr", o.adam.lr, "training");
    read_key(t, "beta1", o.adam.beta1, "training");
    read_key(t, "beta2", o.adam.beta2, "training");
    read_key(t, "epsilon", o.adam.epsilon, "training");
    read_key(t, "clip_norm", o.adam.clip_norm, "training");
    read_key(t, "eval_cutoff", o.eval_cutoff, "training");
    read_key(t, "exclude_history", o.exclude_history, "training");
    read_key(t, "log_wall_time", o.log_wall_time, "training");
    read_key(t, "threads", o.threads, "training");
    read_key(t, "checked", o.checked, "training");
    o.adam.checked = o.checked;
  }

  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    auto& o = c.evaluation;
    allow_keys(e, {"cutoffs", "models", "split", "exclude_history"}, "evaluation");
    read_key(e, "cutoffs", o.cutoffs, "evaluation");
    read_key(e, "models", o.models, "evaluation");
    read_key(e, "split", o.split, "evaluation");
    read_key(e, "exclude_history", o.exclude_history, "evaluation");
    if (o.split != "test" && o.split != "validation") {
      throw ConfigError("config: evaluation.split must be 'test' or 'validation'");
    }
  }
  c.propagate_seed();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

/// "10,20" -> {10, 20}.
inline std::vector<std::size_t> parse_cutoffs(const std::string& list) {
  std::vector<std::size_t> out;
  for (const auto& field : detail::split_line(list, ',')) {
    std::size_t used = 0;
    std::size_t k = 0;
    try {
      k = std::stoul(field, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != field.size() || k == 0) throw ConfigError("bad cutoff '" + field + "' in --k");
    out.push_back(k);
  }
  if (out.empty()) throw ConfigError("--k needs at least one cutoff");
  return out;
}

// ---------------------------------------------------------------------------
// Output directory

/// Exclusive claim on an output directory for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::filesystem::create_directories(dir);
    if (!std::filesystem::create_directory(path_)) {
      throw Error("output directory " + dir.string() + " is locked by another process (remove " + path_.string() +
                  " if stale)");
    }
  }
  ~OutputLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Writes through a temporary file so a failed run never leaves a partial artifact.
inline void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& fill) {
  std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + tmp.string());
    fill(os);
    if (!os) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void save_bundle_atomic(const DatasetBundle& bundle, const std::filesystem::path& dir) {
  auto tmp = dir;
  tmp += ".tmp";
  std::filesystem::remove_all(tmp);
  save_bundle(bundle, tmp);
  std::filesystem::remove_all(dir);
  std::filesystem::rename(tmp, dir);
}

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path embeddings() const { return root / "embeddings.ckpt"; }
  std::filesystem::path embeddings_text() const { return root / "embeddings.txt"; }
  std::filesystem::path model(const std::string& name) const { return root / "models" / (name + ".ckpt"); }
  std::filesystem::path train_log(const std::string& name) const { return root / "models" / (name + ".train.csv"); }
  std::filesystem::path table() const { return root / "baseline" / "cooccurrence.txt"; }
  std::filesystem::path metrics() const { return root / "metrics.csv"; }
  std::filesystem::path plot() const { return root / "plot.csv"; }
};

inline DatasetBundle require_bundle(const RunPaths& p) {
  if (!std::filesystem::exists(p.data() / "meta.json")) {
    throw Error("no preprocessed dataset in " + p.data().string() + " (run preprocess or synth first)");
  }
  return load_bundle(p.data());
}

inline EmbeddingMatrix require_embeddings(const RunPaths& p, const DatasetBundle& bundle) {
  if (!std::filesystem::exists(p.embeddings())) {
    throw Error("no embeddings at " + p.embeddings().string() + " (run embed or synth first)");
  }
  auto E = load_embeddings(p.embeddings());
  if (E.vocab_size() != bundle.vocab.size()) {
    throw Error("embeddings have " + std::to_string(E.vocab_size()) + " rows but the vocabulary has " +
                std::to_string(bundle.vocab.size()) + " items");
  }
  return E;
}

inline MdnRecommender<double> require_model(const RunPaths& p, const std::string& name) {
  if (!std::filesystem::exists(p.model(name))) {
    throw Error("no checkpoint at " + p.model(name).string() + " (run train --model " + name + " first)");
  }
  return load_model<double>(p.model(name));
}

inline void save_embeddings_pair(const RunPaths& p, const EmbeddingMatrix& E, const ItemVocabulary& vocab) {
  auto tmp = p.embeddings();
  tmp += ".tmp";
  save_embeddings(tmp, E);
  std::filesystem::rename(tmp, p.embeddings());
  write_file_atomic(p.embeddings_text(), [&](std::ostream& os) { write_text_vectors(os, E, vocab); });
}

// ---------------------------------------------------------------------------
// Pipeline steps. Each reads upstream artifacts from `cfg.out` and writes its own.

struct PreprocessSummary {
  std::size_t train = 0, validation = 0, test = 0, vocab = 0;
  DropStats drops;
};

inline PreprocessSummary summarize(const DatasetBundle& b) {
  return {b.train.size(), b.validation.size(), b.test.size(), b.vocab.size(), b.drops};
}

inline PreprocessSummary run_preprocess(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  if (d.kind != "movielens" && d.kind != "recsys") {
    throw ConfigError("unknown dataset kind '" + d.kind + "' (expected movielens or recsys)");
  }
  if (d.path.empty()) throw ConfigError("preprocess needs a dataset path");
  std::ifstream in(d.path, std::ios::binary);
  if (!in) throw DataError("cannot open " + d.path);
  DatasetBundle bundle;
  if (d.kind == "movielens") {
    MovieLensOptions opt;
    opt.ratios = d.ratios;
    const auto columns = d.columns_set ? d.columns : ColumnMapping::movielens();
    bundle = preprocess_movielens(read_rating_rows(in, columns), cfg.seed, opt);
  } else {
    RecsysOptions opt;
    opt.ratios = d.ratios;
    const auto columns = d.columns_set ? d.columns : ColumnMapping::recsys();
    bundle = preprocess_recsys(read_click_rows(in, columns), cfg.seed, opt);
  }
  const RunPaths p{cfg.out};
  OutputLock lock(p.root);
  save_bundle_atomic(bundle, p.data());
  return summarize(bundle);
}

/// Synthetic corpus plus its ground-truth embeddings.
inline PreprocessSummary run_synth(const ExperimentConfig& cfg) {
  auto sc = cfg.synthetic;
  sc.ratios = cfg.dataset.ratios;
  const auto corpus = generate_synthetic(sc);
  const RunPaths p{cfg.out};
  OutputLock lock(p.root);
  save_bundle_atomic(corpus.bundle, p.data());
  save_embeddings_pair(p, corpus.embeddings, corpus.bundle.vocab);
  return summarize(corpus.bundle);
}

/// CBOW over the training split, unit-normalized.
inline EmbeddingMatrix run_embed(const ExperimentConfig& cfg) {
  const RunPaths p{cfg.out};
  const auto bundle = require_bundle(p);
  auto E = normalize(train_cbow(bundle.train, bundle.vocab.size(), cfg.embedding), &bundle.vocab);
  OutputLock lock(p.root);
  save_embeddings_pair(p, E, bundle.vocab);
  return E;
}

inline TrainResult<double> run_train(const ExperimentConfig& cfg, std::ostream* progress = nullptr) {
  const RunPaths p{cfg.out};
  const auto bundle = require_bundle(p);
  const auto E = require_embeddings(p, bundle);
  ModelConfig mc = cfg.model;
  mc.d_emb = E.dim();
  MdnRecommender<double> model(mc, cfg.seed);
  const auto name = mc.name();
  OutputLock lock(p.root);
  auto result = train(model, bundle, E, cfg.training, [&](const EpochRecord& r) {
    if (progress) write_train_log_row(*progress, r), progress->flush();
  });
  write_file_atomic(p.train_log(name), [&](std::ostream& os) { write_train_log(os, result.log); });
  auto tmp = p.model(name);
  tmp += ".tmp";
  save_model(tmp, model,
             {{"seed", cfg.seed}, {"best_epoch", result.state.best_epoch}, {"embeddings", E.checksum()}});
  std::filesystem::rename(tmp, p.model(name));
  return result;
}

/// Recommender for a model name: "RVI", "Item-CF" or a trained checkpoint.
/// `hold` keeps loaded state alive for the returned callback.
struct NamedRecommender {
  std::string name;
  std::size_t components = 0;  // 0 for baselines
  std::shared_ptr<void> hold;
  Recommender recommend;
};

inline NamedRecommender make_recommender(const RunPaths& p, const std::string& name, const DatasetBundle& bundle,
                                         bool exclude_history) {
  NamedRecommender out;
  out.name = name;
  if (name == "RVI") {
    out.recommend = [](const InteractionSequence& s, std::size_t k) {
      auto r = rvi_rank(s.history);
      if (r.size() > k) r.items.resize(k), r.scores.resize(k);
      return r;
    };
    return out;
  }
  if (name == "Item-CF") {
    auto table = std::make_shared<CooccurrenceTable>();
    if (std::filesystem::exists(p.table())) {
      std::ifstream is(p.table());
      *table = read_table(is);
    } else {
      *table = build_table(bundle.train);
    }
    const std::size_t vocab = bundle.vocab.size();
    out.hold = table;
    out.recommend = [table, vocab, exclude_history](const InteractionSequence& s, std::size_t k) {
      if (!exclude_history) return item_cf_rank(s.history, *table, vocab, k);
      const std::unordered_set<ItemIndex> ex(s.history.begin(), s.history.end());
      return item_cf_rank(s.history, *table, vocab, k, &ex);
    };
    return out;
  }
  struct Loaded {
    MdnRecommender<double> model;
    EmbeddingMatrix E;
  };
  auto loaded = std::make_shared<Loaded>(Loaded{require_model(p, name), require_embeddings(p, bundle)});
  if (loaded->model.config().d_emb != loaded->E.dim()) {
    throw Error("model " + name + " expects " + std::to_string(loaded->model.config().d_emb) +
                "-dimensional embeddings, found " + std::to_string(loaded->E.dim()));
  }
  out.name = loaded->model.config().name();
  out.components = loaded->model.config().components;
  out.hold = loaded;
  out.recommend = model_recommender(loaded->model, loaded->E, exclude_history);
  return out;
}

struct EvaluationRow {
  std::string model;
  std::size_t components = 0;
  MetricReport report;
};

/// Evaluates every requested model; writes metrics.csv and plot.csv.
inline std::vector<EvaluationRow> run_evaluate(const ExperimentConfig& cfg) {
  const auto& ev = cfg.evaluation;
  if (ev.models.empty()) throw ConfigError("evaluate needs at least one model (--model or evaluation.models)");
  const RunPaths p{cfg.out};
  const auto bundle = require_bundle(p);
  const auto& users = ev.split == "validation" ? bundle.validation : bundle.test;
  if (users.empty()) throw Error("the " + ev.split + " split is empty");
  std::vector<EvaluationRow> rows;
  for (const auto& name : ev.models) {
    const auto rec = make_recommender(p, name, bundle, ev.exclude_history);
    rows.push_back({rec.name, rec.components, evaluate(users, ev.cutoffs, rec.recommend)});
  }
  OutputLock lock(p.root);
  write_file_atomic(p.metrics(), [&](std::ostream& os) {
    os << kMetricHeader << '\n';
    for (const auto& r : rows) write_metric_rows(os, r.model, r.report);
  });
  write_file_atomic(p.plot(), [&](std::ostream& os) {
    os << kPlotHeader << '\n';
    for (const auto& r : rows) {
      if (r.components == 0) continue;
      // Family name without the component count, e.g. "RNN-ATT-RNN".
      write_plot_rows(os, r.model.substr(0, r.model.rfind('-')), r.components, r.report);
    }
  });
  return rows;
}

/// Builds and saves the co-occurrence table, then evaluates both baselines.
inline std::vector<EvaluationRow> run_baseline(const ExperimentConfig& cfg) {
  const RunPaths p{cfg.out};
  const auto bundle = require_bundle(p);
  const auto table = build_table(bundle.train);
  {
    OutputLock lock(p.root);
    write_file_atomic(p.table(), [&](std::ostream& os) { write_table(os, table); });
  }
  auto ev_cfg = cfg;
  ev_cfg.evaluation.models = {"RVI", "Item-CF"};
  return run_evaluate(ev_cfg);
}

/// Top-k items for an ad-hoc history of item tokens. Unknown tokens are dropped.
inline std::vector<std::pair<std::string, double>> run_recommend(const ExperimentConfig& cfg,
                                                                 const std::string& model_name,
                                                                 const std::vector<std::string>& history,
                                                                 std::size_t k) {
  const RunPaths p{cfg.out};
  const auto bundle = require_bundle(p);
  InteractionSequence seq{"query", {}, {}};
  for (const auto& tok : history) {
    if (auto i = bundle.vocab.find(tok)) seq.history.push_back(*i);
  }
  if (seq.history.empty()) throw Error("none of the history items are in the vocabulary");
  const auto rec = make_recommender(p, model_name, bundle, cfg.evaluation.exclude_history);
  const auto ranked = rec.recommend(seq, k);
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < ranked.size(); ++i) out.emplace_back(bundle.vocab.token(ranked.items[i]), ranked.scores[i]);
  return out;
}

}  // namespace mdrec
