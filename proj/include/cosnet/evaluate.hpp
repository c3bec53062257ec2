#pragma once

// Scoring a model over corpus splits, and the ablation sweep over variants,
// fusion rules, reference strategies and reference counts.

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "cosnet/infer.hpp"
#include "cosnet/metrics.hpp"
#include "cosnet/synthdata.hpp"

namespace cosnet {

struct EmbeddedSequence {
  const Sequence* sequence;
  std::vector<FeatureMap> features;
};

inline std::vector<EmbeddedSequence> embed_split(const ModelParams& params, const Corpus& corpus,
                                                 const std::string& split) {
  std::vector<EmbeddedSequence> out;
  for (const auto* s : corpus.split(split)) out.push_back({s, embed_video(params, s->frames)});
  if (out.empty()) throw UsageError("evaluate: corpus has no '" + split + "' sequences");
  return out;
}

inline std::vector<SequenceScore> score_embedded(const ModelParams& params, std::span<const EmbeddedSequence> seqs,
                                                 const InferenceConfig& config) {
  std::vector<SequenceScore> scores;
  for (const auto& e : seqs) {
    const auto result = infer_video_features(params, e.features, config);
    scores.push_back(score_sequence(result.masks, e.sequence->masks, e.sequence->name));
  }
  return scores;
}

// Mean J over a split, in [0, 1].
inline double mean_j(const ModelParams& params, const Corpus& corpus, const std::string& split,
                     const InferenceConfig& config) {
  const auto seqs = embed_split(params, corpus, split);
  const auto scores = score_embedded(params, seqs, config);
  return mean_over_sequences(scores);
}

struct AblationRow {
  Variant variant;
  Fusion fusion;
  Strategy strategy;
  std::size_t n_refs;
  double mean_j;
};

// One row per (fusion, strategy, N) for a trained model.
inline std::vector<AblationRow> ablation_rows(const ModelParams& params, const Corpus& corpus, const std::string& split,
                                              std::span<const Fusion> fusions, std::span<const Strategy> strategies,
                                              std::span<const std::size_t> n_refs, std::uint64_t seed) {
  const auto seqs = embed_split(params, corpus, split);
  std::vector<AblationRow> rows;
  for (auto f : fusions)
    for (auto s : strategies)
      for (auto n : n_refs) {
        InferenceConfig cfg;
        cfg.n_refs = n;
        cfg.strategy = s;
        cfg.fusion = f;
        cfg.seed = seed;
        const auto scores = score_embedded(params, seqs, cfg);
        rows.push_back({params.config.variant, f, s, n, mean_over_sequences(scores)});
      }
  return rows;
}

// Rows grouped by (variant, fusion, strategy) with one mean-J column per N, in percent.
inline std::string format_ablation_table(std::span<const AblationRow> rows, std::span<const std::size_t> n_refs) {
  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-12s %-11s %-8s", "variant", "fusion", "strategy");
  out += buf;
  for (auto n : n_refs) {
    std::snprintf(buf, sizeof buf, " %7s", ("N=" + std::to_string(n)).c_str());
    out += buf;
  }
  out += "\n";
  std::map<std::tuple<int, int, int>, std::map<std::size_t, double>> grid;
  std::vector<std::tuple<int, int, int>> order;
  for (const auto& r : rows) {
    auto key = std::make_tuple(static_cast<int>(r.variant), static_cast<int>(r.fusion), static_cast<int>(r.strategy));
    if (!grid.count(key)) order.push_back(key);
    grid[key][r.n_refs] = r.mean_j;
  }
  for (const auto& key : order) {
    const auto& [v, f, s] = key;
    std::snprintf(buf, sizeof buf, "%-12s %-11s %-8s", to_string(static_cast<Variant>(v)).c_str(),
                  to_string(static_cast<Fusion>(f)).c_str(), to_string(static_cast<Strategy>(s)).c_str());
    out += buf;
    for (auto n : n_refs) {
      const auto& cols = grid[key];
      auto it = cols.find(n);
      if (it == cols.end()) {
        std::snprintf(buf, sizeof buf, " %7s", "-");
      } else {
        std::snprintf(buf, sizeof buf, " %7.2f", 100.0 * it->second);
      }
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace cosnet
