#pragma once

// Video inference: pick reference frames for each query, fuse either the
// gated attention summaries (before decoding) or the decoded predictions.

#include <algorithm>
#include <cstdlib>
#include <span>
#include <string>
#include <vector>

#include "cosnet/net.hpp"
#include "cosnet/netpbm.hpp"

namespace cosnet {

enum class Strategy { GlobalUniform, GlobalRandom, LocalConsecutive };
enum class Fusion { Summary, Prediction };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::GlobalUniform: return "uniform";
    case Strategy::GlobalRandom: return "random";
    case Strategy::LocalConsecutive: return "local";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "uniform" || s == "global_uniform") return Strategy::GlobalUniform;
  if (s == "random" || s == "global_random") return Strategy::GlobalRandom;
  if (s == "local" || s == "local_consecutive") return Strategy::LocalConsecutive;
  throw UsageError("unknown strategy '" + s + "' (expected uniform|random|local)");
}

inline std::string to_string(Fusion f) { return f == Fusion::Summary ? "summary" : "prediction"; }

inline Fusion parse_fusion(const std::string& s) {
  if (s == "summary") return Fusion::Summary;
  if (s == "prediction") return Fusion::Prediction;
  throw UsageError("unknown fusion '" + s + "' (expected summary|prediction)");
}

struct InferenceConfig {
  std::size_t n_refs = 5;  // 0 decodes with a zero summary
  Strategy strategy = Strategy::GlobalUniform;
  Fusion fusion = Fusion::Summary;
  double threshold = 0.5;
  std::uint64_t seed = 0;
};

// The query frame is never its own reference.
inline std::vector<std::size_t> select_references(Strategy strategy, std::size_t T, std::size_t q, std::size_t n,
                                                  Rng& rng) {
  if (q >= T) throw UsageError("select_references: query " + std::to_string(q) + " outside video of " + std::to_string(T));
  if (n > T - 1) {
    throw UsageError("select_references: " + std::to_string(n) + " references requested from a video of " +
                     std::to_string(T) + " frames");
  }
  std::vector<std::size_t> out;
  if (n == 0) return out;
  switch (strategy) {
    case Strategy::GlobalUniform: {
      // Grid round(i (T-1) / (n-1)); a single reference sits mid-video.
      std::vector<bool> used(T, false);
      used[q] = true;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t p = n == 1 ? (T - 1 + 1) / 2 : (2 * i * (T - 1) + (n - 1)) / (2 * (n - 1));
        // Nearest unused index, earlier first on ties.
        for (std::size_t d = 0;; ++d) {
          if (d <= p && !used[p - d]) {
            out.push_back(p - d);
            break;
          }
          if (d > 0 && p + d < T && !used[p + d]) {
            out.push_back(p + d);
            break;
          }
        }
        used[out.back()] = true;
      }
      break;
    }
    case Strategy::GlobalRandom: {
      std::vector<std::size_t> pool;
      for (std::size_t i = 0; i < T; ++i)
        if (i != q) pool.push_back(i);
      for (std::size_t i = 0; i < n; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, pool.size() - i));
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
      }
      break;
    }
    case Strategy::LocalConsecutive: {
      std::vector<std::size_t> pool;
      for (std::size_t i = 0; i < T; ++i)
        if (i != q) pool.push_back(i);
      auto dist = [q](std::size_t i) { return i > q ? i - q : q - i; };
      std::stable_sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) { return dist(a) < dist(b); });
      out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
      break;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline Mask binarize(const Tensor& probabilities, double threshold) {
  Mask m(probabilities.size());
  const auto p = probabilities.data();
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = p[i] > threshold ? 1 : 0;
  return m;
}

// Mean of decoded per-reference predictions.
inline Prediction fuse_predictions(std::span<const Prediction> predictions) {
  if (predictions.empty()) throw UsageError("fuse_predictions: need at least one prediction");
  if (predictions.size() == 1) return predictions.front();
  Tensor acc = predictions[0].Y;
  for (std::size_t i = 1; i < predictions.size(); ++i) acc = add(acc, predictions[i].Y);
  return {scale(acc, 1.0 / static_cast<double>(predictions.size()))};
}

// Segments one query given its reference feature maps.
inline Prediction infer_frame(const ModelParams& params, const FeatureMap& query, std::span<const FeatureMap> refs,
                              Fusion fusion) {
  if (refs.empty()) return decode(params, empty_summary(query), query);
  if (fusion == Fusion::Summary) return forward_query_features(params, query, refs);
  std::vector<Prediction> preds;
  preds.reserve(refs.size());
  for (const auto& r : refs) preds.push_back(decode(params, query_summary(params.coatt, query, r), query));
  return fuse_predictions(preds);
}

struct VideoInference {
  std::vector<Tensor> probabilities;  // H x W per frame
  std::vector<Mask> masks;
  std::vector<std::vector<std::size_t>> references;
};

// Same as infer_video, on frames that are already embedded.
inline VideoInference infer_video_features(const ModelParams& params, std::span<const FeatureMap> features,
                                           const InferenceConfig& config) {
  if (features.empty()) throw UsageError("infer_video: empty video");
  if (!(config.threshold > 0.0 && config.threshold < 1.0)) throw UsageError("infer_video: threshold must lie in (0, 1)");
  NoGradGuard no_grad;
  Rng rng(config.seed);
  VideoInference out;
  const std::size_t T = features.size();
  for (std::size_t q = 0; q < T; ++q) {
    auto idx = select_references(config.strategy, T, q, config.n_refs, rng);
    std::vector<FeatureMap> refs;
    refs.reserve(idx.size());
    for (auto i : idx) refs.push_back(features[i]);
    auto pred = infer_frame(params, features[q], refs, config.fusion);
    out.masks.push_back(binarize(pred.Y, config.threshold));
    out.probabilities.push_back(pred.Y);
    out.references.push_back(std::move(idx));
  }
  return out;
}

inline std::vector<FeatureMap> embed_video(const ModelParams& params, std::span<const Tensor> frames) {
  NoGradGuard no_grad;
  std::vector<FeatureMap> features;
  features.reserve(frames.size());
  for (const auto& f : frames) features.push_back(embed(params, f));
  return features;
}

inline VideoInference infer_video(const ModelParams& params, std::span<const Tensor> frames,
                                  const InferenceConfig& config) {
  if (frames.empty()) throw UsageError("infer_video: empty video");
  const auto features = embed_video(params, frames);
  return infer_video_features(params, features, config);
}

}  // namespace cosnet
