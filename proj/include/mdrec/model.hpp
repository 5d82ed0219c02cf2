#pragma once

// Model assembly: encoder x decoder x component count, e.g. "RNN-ATT-RNN-4".

#include <cstdint>
#include <regex>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdrec/encoders.hpp"
#include "mdrec/mdn.hpp"
#include "mdrec/random.hpp"

namespace mdrec {

enum class EncoderKind { Cboi, Rnn, RnnAtt };
enum class DecoderKind { FF, Rnn };

struct ModelConfig {
  EncoderKind encoder = EncoderKind::Rnn;
  DecoderKind decoder = DecoderKind::Rnn;
  std::size_t components = 1;
  std::size_t d_hidden = 256;
  std::size_t d_emb = 100;
  ScorerKind scorer = ScorerKind::Dot;
  double variance_floor = kDefaultVarianceFloor;
  double init_scale = 0.08;

  /// "CBoI-FF-2", "RNN-RNN-4", "RNN-ATT-RNN-8", ...
  std::string name() const {
    std::string enc = encoder == EncoderKind::Cboi ? "CBoI" : encoder == EncoderKind::Rnn ? "RNN" : "RNN-ATT";
    std::string dec = decoder == DecoderKind::FF ? "FF" : "RNN";
    return enc + "-" + dec + "-" + std::to_string(components);
  }

  /// Parses a model name; dimensions and other settings keep their values.
  ModelConfig with_name(const std::string& model_name) const {
    static const std::regex pattern(R"(^(CBoI|CBOI|RNN|RNN-ATT)-(FF|RNN)-([0-9]+)$)", std::regex::icase);
    std::smatch m;
    if (!std::regex_match(model_name, m, pattern)) {
      throw Error("model: cannot parse model name '" + model_name + "'");
    }
    ModelConfig out = *this;
    std::string enc = m[1].str();
    for (auto& c : enc) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    out.encoder = enc == "CBOI" ? EncoderKind::Cboi : enc == "RNN" ? EncoderKind::Rnn : EncoderKind::RnnAtt;
    std::string dec = m[2].str();
    for (auto& c : dec) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    out.decoder = dec == "FF" ? DecoderKind::FF : DecoderKind::Rnn;
    out.components = std::stoul(m[3].str());
    out.validate();
    return out;
  }

  void validate() const {
    if (components < 1) throw Error("model: at least one mixture component is required");
    if (encoder == EncoderKind::RnnAtt && decoder != DecoderKind::Rnn) {
      throw Error("model: the attention encoder requires the recurrent decoder");
    }
    if (d_hidden < 1 || d_emb < 1) throw Error("model: dimensions must be positive");
    if (encoder == EncoderKind::RnnAtt && d_hidden % 2 != 0) {
      throw Error("model: d_hidden must be even for the bidirectional annotator");
    }
    if (!(variance_floor > 0.0)) throw Error("model: variance floor must be positive");
  }

  nlohmann::json to_json() const {
    return {{"model", name()},
            {"d_hidden", d_hidden},
            {"d_emb", d_emb},
            {"scorer", scorer == ScorerKind::Dot ? "dot" : "additive"},
            {"variance_floor", variance_floor},
            {"init_scale", init_scale}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig base;
    base.d_hidden = j.at("d_hidden").get<std::size_t>();
    base.d_emb = j.at("d_emb").get<std::size_t>();
    base.scorer = j.value("scorer", std::string("dot")) == "additive" ? ScorerKind::Additive : ScorerKind::Dot;
    base.variance_floor = j.value("variance_floor", kDefaultVarianceFloor);
    base.init_scale = j.value("init_scale", 0.08);
    return base.with_name(j.at("model").get<std::string>());
  }
};

/// Encoder + mixture density decoder over fixed item embeddings.
template <typename Real>
class MdnRecommender {
 public:
  MdnRecommender(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng = make_rng(seed, "init");
    const Real scale = static_cast<Real>(config_.init_scale);
    const DecoderShape dec{config_.components, config_.d_emb, config_.d_hidden};
    const std::size_t h = config_.d_hidden;
    switch (config_.encoder) {
      case EncoderKind::Cboi:
        params_.add_uniform("proj.W", {h, config_.d_emb}, scale, rng);
        break;
      case EncoderKind::Rnn:
        add_gru_parameters(params_, "enc.gru.", GruShape{config_.d_emb, h}, scale, rng);
        break;
      case EncoderKind::RnnAtt:
        add_gru_parameters(params_, "enc.gru.", GruShape{config_.d_emb, h}, scale, rng);
        add_gru_parameters(params_, "att.fwd.", GruShape{config_.d_emb, h / 2}, scale, rng);
        add_gru_parameters(params_, "att.bwd.", GruShape{config_.d_emb, h / 2}, scale, rng);
        if (config_.scorer == ScorerKind::Additive) add_additive_scorer_parameters(params_, h, h, h, scale, rng);
        break;
    }
    if (config_.decoder == DecoderKind::FF) {
      add_ff_decoder_parameters(params_, dec, scale, rng);
    } else {
      add_rnn_decoder_parameters(params_, dec, scale, rng);
    }
  }

  MdnRecommender(ModelConfig config, ParameterStore<Real> params)
      : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
  }

  const ModelConfig& config() const { return config_; }
  ParameterStore<Real>& params() { return params_; }
  const ParameterStore<Real>& params() const { return params_; }

  /// Builds encoder and decoder on `tape` for one history.
  MixtureVars<Real> forward(ad::Tape<Real>& tape, const std::vector<ItemIndex>& history,
                            const EmbeddingMatrix& E) const {
    if (history.empty()) throw Error("model: empty history");
    if (E.dim() != config_.d_emb) {
      throw ShapeError("model: embedding dim " + std::to_string(E.dim()) + " vs configured d_emb " +
                       std::to_string(config_.d_emb));
    }
    const std::size_t m = config_.components;
    const double floor = config_.variance_floor;
    if (config_.encoder == EncoderKind::Cboi) {
      auto bag = tape.constant(encode_cboi<Real>(history, E));
      auto p = ad::matmul(tape.param(params_, "proj.W"), bag);
      return config_.decoder == DecoderKind::FF ? decode_ff(p, params_, m, floor) : decode_rnn(p, params_, m, floor);
    }
    auto inputs = embed_history(tape, history, E);
    auto enc = encode_recurrent(inputs, GruCell<Real>::bind(tape, params_, "enc.gru."));
    if (config_.encoder == EncoderKind::Rnn) {
      return config_.decoder == DecoderKind::FF ? decode_ff(enc.pooled, params_, m, floor)
                                                : decode_rnn(enc.pooled, params_, m, floor);
    }
    AttentionMemory<Real> memory{std::move(enc.states),
                                 encode_annotations(inputs, GruCell<Real>::bind(tape, params_, "att.fwd."),
                                                    GruCell<Real>::bind(tape, params_, "att.bwd."))};
    auto scorer = config_.scorer == ScorerKind::Dot ? AttentionScorer<Real>::dot()
                                                    : AttentionScorer<Real>::additive(tape, params_);
    return decode_rnn(memory, scorer, params_, m, floor);
  }

  /// Negative length-normalized log-likelihood of the future items under
  /// the mixture decoded from the history.
  ad::Var<Real> sequence_loss(ad::Tape<Real>& tape, const InteractionSequence& seq, const EmbeddingMatrix& E) const {
    if (seq.future.empty()) throw Error("sequence_loss: empty future");
    const auto mix = forward(tape, seq.history, E);
    ad::Var<Real> total = log_density(tape.constant(E.lookup<Real>(seq.future[0])), mix);
    for (std::size_t i = 1; i < seq.future.size(); ++i) {
      total = ad::add(total, log_density(tape.constant(E.lookup<Real>(seq.future[i])), mix));
    }
    return ad::scale(total, Real{-1} / static_cast<Real>(seq.future.size()));
  }

  /// Mixture for a history, as plain values.
  MixtureParameters mixture(const std::vector<ItemIndex>& history, const EmbeddingMatrix& E) const {
    ad::Tape<Real> tape;
    return forward(tape, history, E).values();
  }

  /// Mean log-likelihood per future item for one sequence (the negated loss).
  double sequence_log_likelihood(const InteractionSequence& seq, const EmbeddingMatrix& E) const {
    const auto mix = mixture(seq.history, E);
    double total = 0.0;
    for (ItemIndex item : seq.future) total += log_density(E.row(item), mix);
    return total / static_cast<double>(seq.future.size());
  }

 private:
  ModelConfig config_;
  ParameterStore<Real> params_;
};

}  // namespace mdrec
