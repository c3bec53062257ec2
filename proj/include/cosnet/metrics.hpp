#pragma once

// Region similarity J and its per-sequence statistics.

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cosnet/netpbm.hpp"

namespace cosnet {

// |pred & gt| / |pred | gt|, 1.0 when both are empty.
inline double jaccard(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) {
    throw DimensionError("jaccard: mask sizes differ (" + std::to_string(pred.size()) + " vs " +
                         std::to_string(gt.size()) + ")");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    inter += (p && g);
    uni += (p || g);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct SequenceScore {
  std::string name;
  std::vector<double> per_frame_j;
  double mean_j = 0.0;
  double recall_j = 0.0;  // fraction of frames with J > 0.5
  double decay_j = 0.0;   // first-quartile mean minus last-quartile mean
};

inline constexpr double kRecallThreshold = 0.5;

inline SequenceScore score_from_j(std::vector<double> per_frame_j, std::string name = {}) {
  const std::size_t n = per_frame_j.size();
  if (n < 4) throw UsageError("score_sequence: need at least 4 frames, got " + std::to_string(n));
  SequenceScore s;
  s.name = std::move(name);
  double total = 0.0;
  std::size_t hits = 0;
  for (double j : per_frame_j) {
    total += j;
    hits += j > kRecallThreshold;
  }
  s.mean_j = total / static_cast<double>(n);
  s.recall_j = static_cast<double>(hits) / static_cast<double>(n);
  const std::size_t q = n / 4;
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < q; ++i) {
    first += per_frame_j[i];
    last += per_frame_j[n - q + i];
  }
  s.decay_j = (first - last) / static_cast<double>(q);
  s.per_frame_j = std::move(per_frame_j);
  return s;
}

inline SequenceScore score_sequence(std::span<const Mask> preds, std::span<const Mask> gts, std::string name = {}) {
  if (preds.size() != gts.size()) {
    throw DimensionError("score_sequence: " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(gts.size()) + " ground-truth masks");
  }
  std::vector<double> j;
  j.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) j.push_back(jaccard(preds[i], gts[i]));
  return score_from_j(std::move(j), std::move(name));
}

inline nlohmann::json to_json(const SequenceScore& s) {
  return {{"sequence", s.name}, {"mean_j", s.mean_j}, {"recall_j", s.recall_j}, {"decay_j", s.decay_j},
          {"per_frame_j", s.per_frame_j}};
}

// Mean of the per-sequence means.
inline double mean_over_sequences(std::span<const SequenceScore> scores) {
  if (scores.empty()) return 0.0;
  double t = 0.0;
  for (const auto& s : scores) t += s.mean_j;
  return t / static_cast<double>(scores.size());
}

}  // namespace cosnet
