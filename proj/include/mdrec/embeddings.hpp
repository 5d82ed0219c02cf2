#pragma once

// Fixed item embeddings: CBOW pretraining with negative sampling,
// unit-normalization, lookup, and the "vocab_size dim" text format.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mdrec/checkpoint.hpp"
#include "mdrec/data.hpp"
#include "mdrec/random.hpp"
#include "mdrec/tensor.hpp"

namespace mdrec {

/// vocab_size x dim matrix E; row i is the vector of item i.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t vocab_size, std::size_t dim) : rows_({vocab_size, dim}) {}
  explicit EmbeddingMatrix(Tensor<double> rows) : rows_(std::move(rows)) {
    if (rows_.rank() != 2) {
      throw ShapeError("embeddings: expected a matrix, got shape " + shape_string(rows_.shape()));
    }
  }

  std::size_t vocab_size() const { return rows_.rows(); }
  std::size_t dim() const { return rows_.cols(); }

  std::span<const double> row(std::size_t item) const {
    check(item);
    return {rows_.data() + item * dim(), dim()};
  }
  std::span<double> row(std::size_t item) {
    check(item);
    return {rows_.data() + item * dim(), dim()};
  }

  /// Copy of row `item` at the requested precision.
  template <typename Real = double>
  Tensor<Real> lookup(std::size_t item) const {
    auto r = row(item);
    return Tensor<Real>::vector(std::vector<Real>(r.begin(), r.end()));
  }

  const Tensor<double>& tensor() const { return rows_; }
  std::uint64_t checksum() const { return mdrec::checksum<double>(rows_.values()); }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  void check(std::size_t item) const {
    if (item >= vocab_size()) {
      throw Error("embeddings: item index " + std::to_string(item) + " out of range (vocab size " +
                  std::to_string(vocab_size()) + ")");
    }
  }

  Tensor<double> rows_;
};

/// Scales every row to unit L2 norm. A zero row is an error naming the item.
inline EmbeddingMatrix normalize(EmbeddingMatrix matrix, const ItemVocabulary* vocab = nullptr) {
  for (std::size_t i = 0; i < matrix.vocab_size(); ++i) {
    auto r = matrix.row(i);
    const double norm = l2_norm<double>(r);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      std::string name = vocab && i < vocab->size() ? " '" + vocab->token(static_cast<ItemIndex>(i)) + "'" : "";
      throw Error("normalize: item " + std::to_string(i) + name + " has a zero or non-finite row");
    }
    for (double& v : r) v /= norm;
  }
  return matrix;
}

struct CbowConfig {
  std::size_t dim = 100;
  std::size_t window = 5;
  std::size_t negative_samples = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.05;
  std::size_t min_count = 1;
  /// Train on history followed by future; otherwise history only.
  bool include_future = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim < 1 || window < 1 || negative_samples < 1) {
      throw Error("cbow: dim, window and negative_samples must be >= 1");
    }
  }
};

/// Draws items with probability proportional to count^0.75.
class NegativeSampler {
 public:
  explicit NegativeSampler(const std::vector<std::uint64_t>& counts, double power = 0.75) {
    weights_.reserve(counts.size());
    for (auto c : counts) weights_.push_back(std::pow(static_cast<double>(c), power));
    dist_ = std::discrete_distribution<std::size_t>(weights_.begin(), weights_.end());
  }

  template <typename G>
  std::size_t operator()(G& rng) {
    return dist_(rng);
  }

  std::vector<double> probabilities() const { return dist_.probabilities(); }

 private:
  std::vector<double> weights_;
  std::discrete_distribution<std::size_t> dist_;
};

namespace detail {

inline std::vector<std::vector<ItemIndex>> cbow_sentences(const std::vector<InteractionSequence>& seqs,
                                                          bool include_future) {
  std::vector<std::vector<ItemIndex>> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) {
    std::vector<ItemIndex> sentence = s.history;
    if (include_future) sentence.insert(sentence.end(), s.future.begin(), s.future.end());
    out.push_back(std::move(sentence));
  }
  return out;
}

}  // namespace detail

/// Input-vector initialization used by train_cbow: uniform(-0.5/dim, 0.5/dim).
inline EmbeddingMatrix cbow_initialization(std::size_t vocab_size, const CbowConfig& cfg) {
  cfg.validate();
  EmbeddingMatrix m(vocab_size, cfg.dim);
  Rng rng = make_rng(cfg.seed, "embedding");
  const double half = 0.5 / static_cast<double>(cfg.dim);
  std::uniform_real_distribution<double> dist(-half, half);
  for (std::size_t i = 0; i < vocab_size; ++i) {
    for (double& v : m.row(i)) v = dist(rng);
  }
  return m;
}

/// CBOW with negative sampling over the training sequences. Returns the
/// (unnormalized) input vectors.
inline EmbeddingMatrix train_cbow(const std::vector<InteractionSequence>& sequences, std::size_t vocab_size,
                                  const CbowConfig& cfg) {
  cfg.validate();
  if (sequences.empty() || vocab_size == 0) throw Error("cbow: empty corpus");
  const auto sentences = detail::cbow_sentences(sequences, cfg.include_future);

  std::vector<std::uint64_t> counts(vocab_size, 0);
  std::uint64_t total_tokens = 0;
  for (const auto& s : sentences) {
    for (ItemIndex i : s) {
      if (i >= vocab_size) throw Error("cbow: item index out of vocabulary");
      ++counts[i];
      ++total_tokens;
    }
  }

  EmbeddingMatrix input = cbow_initialization(vocab_size, cfg);
  std::vector<double> output(vocab_size * cfg.dim, 0.0);
  std::vector<std::uint64_t> sampler_counts(counts);
  for (auto& c : sampler_counts) {
    if (c < cfg.min_count) c = 0;
  }
  bool any = false;
  for (auto c : sampler_counts) any |= c > 0;
  if (!any) throw Error("cbow: no item reaches min_count");
  NegativeSampler sampler(sampler_counts);

  Rng rng = make_rng(cfg.seed, "embedding.train");
  std::uniform_int_distribution<std::size_t> window_dist(1, cfg.window);
  const std::size_t dim = cfg.dim;
  std::vector<double> hidden(dim), hidden_grad(dim);
  std::vector<std::size_t> context;
  const double total_steps = static_cast<double>(cfg.epochs * total_tokens) + 1.0;
  std::uint64_t processed = 0;

  auto keep = [&](ItemIndex i) { return counts[i] >= cfg.min_count; };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& sentence : sentences) {
      for (std::size_t pos = 0; pos < sentence.size(); ++pos, ++processed) {
        const ItemIndex center = sentence[pos];
        if (!keep(center)) continue;
        const double lr = cfg.learning_rate * std::max(1e-4, 1.0 - processed / total_steps);
        const std::size_t w = window_dist(rng);
        context.clear();
        const std::size_t lo = pos >= w ? pos - w : 0;
        const std::size_t hi = std::min(sentence.size() - 1, pos + w);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j != pos && keep(sentence[j])) context.push_back(sentence[j]);
        }
        if (context.empty()) continue;

        std::fill(hidden.begin(), hidden.end(), 0.0);
        for (auto c : context) {
          auto r = input.row(c);
          for (std::size_t d = 0; d < dim; ++d) hidden[d] += r[d];
        }
        for (double& h : hidden) h /= static_cast<double>(context.size());
        std::fill(hidden_grad.begin(), hidden_grad.end(), 0.0);

        for (std::size_t n = 0; n <= cfg.negative_samples; ++n) {
          std::size_t target = center;
          double label = 1.0;
          if (n > 0) {
            target = sampler(rng);
            if (target == center) continue;
            label = 0.0;
          }
          double* out = output.data() + target * dim;
          double score = 0.0;
          for (std::size_t d = 0; d < dim; ++d) score += hidden[d] * out[d];
          const double g = lr * (label - 1.0 / (1.0 + std::exp(-score)));
          for (std::size_t d = 0; d < dim; ++d) {
            hidden_grad[d] += g * out[d];
            out[d] += g * hidden[d];
          }
        }
        for (auto c : context) {
          auto r = input.row(c);
          for (std::size_t d = 0; d < dim; ++d) r[d] += hidden_grad[d];
        }
      }
    }
  }
  return input;
}

inline void write_text_vectors(std::ostream& os, const EmbeddingMatrix& m, const ItemVocabulary& vocab) {
  if (vocab.size() != m.vocab_size()) throw Error("embeddings: vocabulary size does not match matrix");
  os << m.vocab_size() << ' ' << m.dim() << '\n';
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < m.vocab_size(); ++i) {
    os << vocab.token(static_cast<ItemIndex>(i));
    for (double v : m.row(i)) os << ' ' << v;
    os << '\n';
  }
}

/// Reads the text format and orders rows by `vocab`. Every vocabulary item
/// must be present; extra tokens are ignored.
inline EmbeddingMatrix read_text_vectors(std::istream& is, const ItemVocabulary& vocab) {
  std::size_t n = 0, dim = 0;
  std::string line;
  if (!std::getline(is, line) || !(std::istringstream(line) >> n >> dim) || dim == 0) {
    throw Error("embeddings: bad header line, expected 'vocab_size dim'");
  }
  EmbeddingMatrix m(vocab.size(), dim);
  std::vector<bool> seen(vocab.size(), false);
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (values.size() != dim) {
      throw Error("embeddings line " + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                  " values, got " + std::to_string(values.size()));
    }
    auto idx = vocab.find(token);
    if (!idx) continue;
    std::copy(values.begin(), values.end(), m.row(*idx).begin());
    seen[*idx] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw Error("embeddings: no vector for item '" + vocab.token(static_cast<ItemIndex>(i)) + "'");
  }
  return m;
}

inline void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  ParameterStore<double> store;
  store.add("embeddings", m.tensor());
  save_checkpoint(path, store, R"({"kind":"embeddings"})");
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  auto ckpt = load_checkpoint<double>(path);
  return EmbeddingMatrix(ckpt.params.get("embeddings"));
}

}  // namespace mdrec
