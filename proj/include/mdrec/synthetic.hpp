#pragma once

// Synthetic corpora with known multimodal structure.
//
// Items live in well-separated unit-norm clusters. Source clusters appear in
// histories; each source cluster triggers one target cluster for the future.
// A history type is a set of `modality` source clusters, so its future is
// spread over `modality` target clusters. In order-dependent mode a type is
// an ordered pair of source clusters appended to filler items, and the
// target depends on the order of the pair.
//
// Within a target cluster, items near the cluster centre are drawn more
// often (weight exp(-|v - c|^2 / focus)).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mdrec/data.hpp"
#include "mdrec/embeddings.hpp"
#include "mdrec/random.hpp"

namespace mdrec {

struct SyntheticConfig {
  std::size_t dim = 16;
  std::size_t source_clusters = 5;
  std::size_t target_clusters = 5;
  std::size_t items_per_cluster = 20;
  std::size_t sequences = 2000;
  std::size_t modality = 2;
  std::size_t history_length = 6;
  std::size_t future_length = 3;
  bool order_dependent = false;
  /// Norm of the per-item offset from its cluster centre (before normalizing).
  double spread = 0.35;
  double focus = 0.05;
  /// Minimum cosine distance between cluster centres.
  double min_separation = 0.5;
  SplitRatios ratios;
  std::uint64_t seed = 0;

  std::size_t cluster_count() const { return source_clusters + target_clusters + (order_dependent ? 1 : 0); }
  std::size_t vocab_size() const { return cluster_count() * items_per_cluster; }
};

struct SyntheticCorpus {
  DatasetBundle bundle;
  /// Rows aligned with bundle.vocab.
  EmbeddingMatrix embeddings;
  /// Ground-truth cluster of every vocabulary item.
  std::vector<std::size_t> item_cluster;
  std::vector<std::vector<double>> centers;
  /// Source clusters per history type; target cluster of each source slot.
  std::vector<std::vector<std::size_t>> type_sources;
  std::vector<std::vector<std::size_t>> type_targets;
};

namespace detail {

inline void combinations(std::size_t n, std::size_t k, std::size_t start, std::vector<std::size_t>& cur,
                         std::vector<std::vector<std::size_t>>& out) {
  if (cur.size() == k) {
    out.push_back(cur);
    return;
  }
  for (std::size_t i = start; i < n; ++i) {
    cur.push_back(i);
    combinations(n, k, i + 1, cur, out);
    cur.pop_back();
  }
}

inline std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    for (auto& x : v) x = g(rng);
    norm = l2_norm<double>(v);
  } while (norm < 1e-12);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace detail

inline SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.modality < 1) throw Error("synthetic: modality must be >= 1");
  if (cfg.dim < 1 || cfg.items_per_cluster < 1 || cfg.sequences < 1 || cfg.history_length < 1 ||
      cfg.future_length < 1) {
    throw Error("synthetic: sizes must be positive");
  }
  if (cfg.order_dependent && cfg.history_length < 2) throw Error("synthetic: order-dependent histories need >= 2 items");
  if (!cfg.order_dependent && cfg.modality > cfg.source_clusters) {
    throw Error("synthetic: modality exceeds the number of source clusters");
  }

  Rng rng = make_rng(cfg.seed, "synthetic");
  const std::size_t n_clusters = cfg.cluster_count();

  // Cluster centres by rejection sampling.
  std::vector<std::vector<double>> centers;
  const double max_cos = 1.0 - cfg.min_separation;
  for (std::size_t attempt = 0; centers.size() < n_clusters; ++attempt) {
    if (attempt > 20000 * n_clusters) {
      throw Error("synthetic: cannot place " + std::to_string(n_clusters) + " clusters with cosine distance >= " +
                  std::to_string(cfg.min_separation) + " in " + std::to_string(cfg.dim) + " dimensions");
    }
    auto c = detail::random_unit(cfg.dim, rng);
    bool ok = true;
    for (const auto& other : centers) ok = ok && dot<double>(c, other) <= max_cos;
    if (ok) centers.push_back(std::move(c));
  }

  // Cluster layout: [filler?][sources][targets].
  const std::size_t filler = 0;
  const std::size_t source0 = cfg.order_dependent ? 1 : 0;
  const std::size_t target0 = source0 + cfg.source_clusters;

  std::vector<std::vector<double>> items;
  std::vector<std::size_t> cluster_of;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t c = 0; c < n_clusters; ++c) {
    for (std::size_t i = 0; i < cfg.items_per_cluster; ++i) {
      std::vector<double> v = centers[c];
      const double s = cfg.spread / std::sqrt(static_cast<double>(cfg.dim));
      for (auto& x : v) x += s * gauss(rng);
      const double norm = l2_norm<double>(v);
      for (auto& x : v) x /= norm;
      items.push_back(std::move(v));
      cluster_of.push_back(c);
    }
  }
  auto item_in = [&](std::size_t cluster, std::size_t k) { return cluster * cfg.items_per_cluster + k; };

  // Popularity within a cluster favours items close to the centre.
  std::vector<std::discrete_distribution<std::size_t>> hot(n_clusters);
  for (std::size_t c = 0; c < n_clusters; ++c) {
    std::vector<double> w;
    for (std::size_t k = 0; k < cfg.items_per_cluster; ++k) {
      const auto& v = items[item_in(c, k)];
      double d2 = 0.0;
      for (std::size_t d = 0; d < cfg.dim; ++d) d2 += (v[d] - centers[c][d]) * (v[d] - centers[c][d]);
      w.push_back(std::exp(-d2 / cfg.focus));
    }
    hot[c] = std::discrete_distribution<std::size_t>(w.begin(), w.end());
  }

  // History types.
  SyntheticCorpus corpus;
  if (cfg.order_dependent) {
    for (std::size_t a = 0; a < cfg.source_clusters; ++a) {
      for (std::size_t b = 0; b < cfg.source_clusters; ++b) {
        if (a != b) corpus.type_sources.push_back({source0 + a, source0 + b});
      }
    }
    if (corpus.type_sources.size() * cfg.modality > cfg.target_clusters) {
      throw Error("synthetic: order-dependent mode needs " +
                  std::to_string(corpus.type_sources.size() * cfg.modality) + " target clusters");
    }
    for (std::size_t t = 0; t < corpus.type_sources.size(); ++t) {
      std::vector<std::size_t> targets;
      for (std::size_t j = 0; j < cfg.modality; ++j) targets.push_back(target0 + t * cfg.modality + j);
      corpus.type_targets.push_back(std::move(targets));
    }
  } else {
    std::vector<std::size_t> cur;
    std::vector<std::vector<std::size_t>> subsets;
    detail::combinations(cfg.source_clusters, cfg.modality, 0, cur, subsets);
    for (auto& subset : subsets) {
      std::vector<std::size_t> sources, targets;
      for (std::size_t s : subset) {
        sources.push_back(source0 + s);
        targets.push_back(target0 + s % cfg.target_clusters);
      }
      corpus.type_sources.push_back(std::move(sources));
      corpus.type_targets.push_back(std::move(targets));
    }
  }

  std::uniform_int_distribution<std::size_t> pick_type(0, corpus.type_sources.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_item(0, cfg.items_per_cluster - 1);
  std::uniform_int_distribution<std::size_t> pick_mode(0, cfg.modality - 1);
  std::vector<RawSequence> raw;
  raw.reserve(cfg.sequences);
  auto token = [](std::size_t item) { return "i" + std::to_string(item); };
  for (std::size_t n = 0; n < cfg.sequences; ++n) {
    const std::size_t type = pick_type(rng);
    const auto& sources = corpus.type_sources[type];
    RawSequence seq{"u" + std::to_string(n) + ":t" + std::to_string(type), {}, {}};
    if (cfg.order_dependent) {
      for (std::size_t i = 0; i + 2 < cfg.history_length; ++i) seq.history.push_back(token(item_in(filler, pick_item(rng))));
      for (std::size_t s : sources) seq.history.push_back(token(item_in(s, pick_item(rng))));
    } else {
      std::vector<std::size_t> slots;
      for (std::size_t i = 0; i < cfg.history_length; ++i) slots.push_back(sources[i % sources.size()]);
      std::shuffle(slots.begin(), slots.end(), rng);
      for (std::size_t s : slots) seq.history.push_back(token(item_in(s, pick_item(rng))));
    }
    const auto& targets = corpus.type_targets[type];
    for (std::size_t i = 0; i < cfg.future_length; ++i) {
      const std::size_t c = targets[pick_mode(rng)];
      seq.future.push_back(token(item_in(c, hot[c](rng))));
    }
    raw.push_back(std::move(seq));
  }

  corpus.bundle = build_bundle(std::move(raw), cfg.ratios, stream_seed(cfg.seed, "split"),
                               {"synthetic", cfg.order_dependent ? "order-dependent" : "multimodal", 0});
  corpus.embeddings = EmbeddingMatrix(corpus.bundle.vocab.size(), cfg.dim);
  for (std::size_t i = 0; i < corpus.bundle.vocab.size(); ++i) {
    const std::size_t item = std::stoul(corpus.bundle.vocab.token(static_cast<ItemIndex>(i)).substr(1));
    std::copy(items[item].begin(), items[item].end(), corpus.embeddings.row(i).begin());
    corpus.item_cluster.push_back(cluster_of[item]);
  }
  corpus.centers = std::move(centers);
  return corpus;
}

/// History type encoded in a synthetic user id ("u<n>:t<type>").
inline std::size_t synthetic_type(const std::string& user) {
  const auto pos = user.rfind(":t");
  if (pos == std::string::npos) throw Error("synthetic: user id '" + user + "' carries no type");
  return std::stoul(user.substr(pos + 2));
}

}  // namespace mdrec
