#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "mdrec/experiment.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> models;
  std::string k;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_model, bool with_k) {
  cmd->add_option("--config", f.config, "JSON experiment manifest")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "top-level seed (overrides config)");
  cmd->add_option("--out", f.out, "output directory (overrides config)");
  if (with_model) cmd->add_option("--model", f.models, "model name, e.g. RNN-ATT-RNN-4, RVI, Item-CF")->delimiter(',');
  if (with_k) cmd->add_option("--k", f.k, "comma-separated cutoffs, e.g. 10,20");
}

mdrec::ExperimentConfig resolve(const CommonFlags& f) {
  mdrec::ExperimentConfig cfg = f.config.empty() ? mdrec::ExperimentConfig{} : mdrec::load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out = f.out;
  cfg.propagate_seed();
  return cfg;
}

void print_counts(const mdrec::PreprocessSummary& s) {
  std::cout << "train " << s.train << "\nvalidation " << s.validation << "\ntest " << s.test << "\nvocab " << s.vocab
            << "\nitems_dropped " << s.drops.items_dropped << "\nsequences_dropped " << s.drops.sequences_dropped
            << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture density recommender: preprocessing, training, evaluation"};
  app.require_subcommand(1);

  CommonFlags pre_f, synth_f, embed_f, train_f, eval_f, rec_f, base_f;

  auto* pre = app.add_subcommand("preprocess", "turn a raw log into history/future splits");
  add_common(pre, pre_f, false, false);
  std::string kind, input;
  pre->add_option("--kind", kind, "movielens or recsys (overrides dataset.kind)");
  pre->add_option("--input", input, "raw CSV (overrides dataset.path)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with ground-truth embeddings");
  add_common(synth, synth_f, false, false);
  std::size_t modality = 0;
  bool ordered = false;
  synth->add_option("--modality", modality, "future modes per history type");
  synth->add_flag("--order-dependent", ordered, "future mode depends on the order of the last two items");

  auto* embed = app.add_subcommand("embed", "train CBOW item embeddings on the training split");
  add_common(embed, embed_f, false, false);

  auto* trn = app.add_subcommand("train", "train one model with early stopping");
  add_common(trn, train_f, true, false);
  std::optional<std::size_t> threads;
  trn->add_option("--threads", threads, "worker threads per batch (1 is bit-reproducible)");

  auto* ev = app.add_subcommand("evaluate", "Precision/Recall/nDCG for trained models and baselines");
  add_common(ev, eval_f, true, true);
  std::string split;
  ev->add_option("--split", split, "test or validation");

  auto* rec = app.add_subcommand("recommend", "top-k items for an ad-hoc history");
  add_common(rec, rec_f, true, true);
  std::vector<std::string> history;
  rec->add_option("--history", history, "item ids, oldest first")->delimiter(',')->required();

  auto* base = app.add_subcommand("baseline", "build the co-occurrence table and evaluate RVI and Item-CF");
  add_common(base, base_f, false, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) {
      auto cfg = resolve(pre_f);
      if (!kind.empty()) cfg.dataset.kind = kind;
      if (!input.empty()) cfg.dataset.path = input;
      print_counts(mdrec::run_preprocess(cfg));
    } else if (synth->parsed()) {
      auto cfg = resolve(synth_f);
      if (modality) cfg.synthetic.modality = modality;
      if (ordered) cfg.synthetic.order_dependent = true;
      print_counts(mdrec::run_synth(cfg));
    } else if (embed->parsed()) {
      const auto E = mdrec::run_embed(resolve(embed_f));
      std::cout << "embeddings " << E.vocab_size() << " x " << E.dim() << '\n';
    } else if (trn->parsed()) {
      auto cfg = resolve(train_f);
      if (train_f.models.size() > 1) throw mdrec::ConfigError("train takes a single --model");
      if (!train_f.models.empty()) cfg.model = cfg.model.with_name(train_f.models[0]);
      if (threads) cfg.training.threads = *threads;
      std::cout << mdrec::kTrainLogHeader << '\n';
      const auto result = mdrec::run_train(cfg, &std::cout);
      std::cout << "best epoch " << result.state.best_epoch << " valid F1@" << cfg.training.eval_cutoff << ' '
                << result.state.best_f1 << '\n';
    } else if (ev->parsed() || base->parsed()) {
      const bool is_base = base->parsed();
      auto& f = is_base ? base_f : eval_f;
      auto cfg = resolve(f);
      if (!f.models.empty()) cfg.evaluation.models = f.models;
      if (!f.k.empty()) cfg.evaluation.cutoffs = mdrec::parse_cutoffs(f.k);
      if (!split.empty()) {
        if (split != "test" && split != "validation") throw mdrec::ConfigError("--split must be test or validation");
        cfg.evaluation.split = split;
      }
      const auto rows = is_base ? mdrec::run_baseline(cfg) : mdrec::run_evaluate(cfg);
      for (const auto& r : rows) mdrec::write_metric_table(std::cout, r.model, r.report);
    } else if (rec->parsed()) {
      auto cfg = resolve(rec_f);
      if (rec_f.models.size() != 1) throw mdrec::ConfigError("recommend takes exactly one --model");
      std::size_t k = 10;
      if (!rec_f.k.empty()) {
        const auto ks = mdrec::parse_cutoffs(rec_f.k);
        if (ks.size() != 1) throw mdrec::ConfigError("recommend takes a single --k");
        k = ks[0];
      }
      std::cout << std::setprecision(10);
      for (const auto& [item, score] : mdrec::run_recommend(cfg, rec_f.models[0], history, k)) {
        std::cout << item << '\t' << score << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
