#pragma once

// Losses, frame-pair sampling and the alternating static/video SGD loop.

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cosnet/net.hpp"
#include "cosnet/synthdata.hpp"

namespace cosnet {

struct TrainConfig {
  double learning_rate = 2.5e-4;
  std::size_t batch_size = 8;
  double ortho_lambda = 1e-4;
  std::size_t epochs = 1;
  std::size_t steps = 0;  // when nonzero, overrides the epoch-derived step count
  std::uint64_t seed = 0;
  std::size_t static_ratio = 1;  // static batches per cycle
  std::size_t video_ratio = 1;   // video batches per cycle

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw UsageError("train: learning_rate must be >= 0");
    if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
    if (ortho_lambda < 0.0) throw UsageError("train: ortho_lambda must be >= 0");
    if (video_ratio < 1) throw UsageError("train: alternation ratio needs at least one video batch per cycle");
  }
};

inline constexpr double kEtaClamp = 1e-6;
inline constexpr double kProbClamp = 1e-7;

// Class-balanced BCE summed over pixels:
//   -sum_x (1-eta) o_x log y_x + eta (1-o_x) log(1-y_x)
// eta = foreground fraction of this mask, clamped to [1e-6, 1-1e-6]; y is
// clamped to [1e-7, 1-1e-7] inside the logs (zero gradient where clamped).
inline Tensor weighted_bce(const Prediction& prediction, std::span<const std::uint8_t> mask) {
  const Tensor& Y = prediction.Y;
  if (Y.size() != mask.size()) {
    throw DimensionError("weighted_bce: prediction " + shape_str(Y.shape()) + " vs mask of " +
                         std::to_string(mask.size()) + " pixels");
  }
  std::size_t fg = 0;
  for (auto o : mask) fg += o != 0;
  const double eta = std::clamp(static_cast<double>(fg) / static_cast<double>(mask.size()), kEtaClamp, 1.0 - kEtaClamp);
  const auto y = Y.data();
  long double loss = 0.0;  // extended accumulator: the sum spans every pixel
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double yc = std::clamp(y[i], kProbClamp, 1.0 - kProbClamp);
    loss -= mask[i] ? (1.0 - eta) * std::log(yc) : eta * std::log(1.0 - yc);
  }
  std::vector<std::uint8_t> target(mask.begin(), mask.end());
  return Tensor::make_result({1}, {static_cast<double>(loss)}, {Y}, [eta, target = std::move(target)](detail::Node& self) {
    auto& py = detail::parent(self, 0);
    const double g = self.grad[0];
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double v = py.data[i];
      if (v < kProbClamp || v > 1.0 - kProbClamp) continue;
      py.grad[i] += g * (target[i] ? -(1.0 - eta) / v : eta / (1.0 - v));
    }
  }, "weighted_bce");
}

// Mean of the per-sample losses plus the orthogonality penalty for the
// symmetric variant.
inline Tensor total_loss(std::span<const Tensor> sample_losses, const CoattentionParams& coatt) {
  if (sample_losses.empty()) throw UsageError("total_loss: empty batch");
  Tensor acc = sample_losses[0];
  for (std::size_t i = 1; i < sample_losses.size(); ++i) acc = add(acc, sample_losses[i]);
  Tensor loss = scale(acc, 1.0 / static_cast<double>(sample_losses.size()));
  if (coatt.variant == Variant::Symmetric) loss = add(loss, ortho_penalty(coatt));
  return loss;
}

// Uniform over ordered pairs (a, b), a != b.
inline std::pair<std::size_t, std::size_t> sample_pair(Rng& rng, std::size_t length) {
  if (length < 2) throw UsageError("sample_pair: sequence needs at least 2 frames, got " + std::to_string(length));
  const auto k = uniform_index(rng, static_cast<std::uint64_t>(length) * (length - 1));
  const std::size_t a = static_cast<std::size_t>(k / (length - 1));
  const std::size_t r = static_cast<std::size_t>(k % (length - 1));
  return {a, r < a ? r : r + 1};
}

struct LossRecord {
  std::size_t step = 0;
  std::string phase;  // "static" or "video"
  double loss = 0.0;
  double ortho_penalty = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossRecord> log;
};

inline std::string loss_log_csv(std::span<const LossRecord> log) {
  std::string out = "step,phase,loss,ortho_penalty\n";
  char buf[128];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g\n", r.step, r.phase.c_str(), r.loss, r.ortho_penalty);
    out += buf;
  }
  return out;
}

inline void sgd_step(std::span<const NamedTensor> tensors, double lr) {
  for (const auto& nt : tensors) {
    Tensor t = nt.tensor;
    if (!t.has_grad()) continue;
    auto values = t.mutable_data();
    const auto g = t.grad();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * g[i];
    check_finite(values, "sgd_step");
  }
}

inline double current_ortho_penalty(const CoattentionParams& coatt) {
  if (coatt.variant != Variant::Symmetric) return 0.0;
  NoGradGuard no_grad;
  return ortho_penalty(coatt).item();
}

struct StaticExample {
  const Tensor* image;
  const Mask* mask;
};

class Trainer {
 public:
  Trainer(const Corpus& corpus, TrainConfig config, ModelParams params)
      : config_(config), params_(std::move(params)), rng_(config.seed) {
    config_.validate();
    params_.coatt.ortho_lambda = params_.coatt.variant == Variant::Symmetric ? config_.ortho_lambda : 0.0;
    for (const auto* s : corpus.split("train")) {
      if (s->frames.size() >= 2) videos_.push_back(s);
    }
    for (const auto* s : corpus.split("static")) {
      for (std::size_t i = 0; i < s->frames.size(); ++i) statics_.push_back({&s->frames[i], &s->masks[i]});
    }
    if (videos_.empty() || (statics_.empty() && config_.static_ratio > 0)) {
      throw UsageError("train: corpus needs at least one training video and one static image");
    }
  }

  std::size_t planned_steps() const {
    if (config_.steps > 0) return config_.steps;
    std::size_t frames = 0;
    for (const auto* v : videos_) frames += v->frames.size();
    const std::size_t per_cycle_frames = config_.batch_size * config_.video_ratio;
    const std::size_t cycles = (frames + per_cycle_frames - 1) / per_cycle_frames;
    return config_.epochs * cycles * (config_.static_ratio + config_.video_ratio);
  }

  bool next_is_static() const {
    const std::size_t cycle = config_.static_ratio + config_.video_ratio;
    return (step_ % cycle) < config_.static_ratio;
  }

  LossRecord step() {
    LossRecord rec;
    rec.step = step_;
    rec.ortho_penalty = current_ortho_penalty(params_.coatt);
    params_.zero_grad();
    if (next_is_static()) {
      rec.phase = "static";
      std::vector<Tensor> losses;
      for (std::size_t b = 0; b < config_.batch_size; ++b) {
        const auto& ex = statics_[uniform_index(rng_, statics_.size())];
        losses.push_back(weighted_bce(forward_static(params_, *ex.image), *ex.mask));
      }
      Tensor acc = losses[0];
      for (std::size_t i = 1; i < losses.size(); ++i) acc = add(acc, losses[i]);
      Tensor loss = scale(acc, 1.0 / static_cast<double>(losses.size()));
      loss.backward();
      rec.loss = loss.item();
      auto trainable = params_.embedder_tensors();
      for (auto& t : params_.side_tensors()) trainable.push_back(t);
      sgd_step(trainable, config_.learning_rate);
    } else {
      rec.phase = "video";
      std::vector<Tensor> losses;
      for (std::size_t b = 0; b < config_.batch_size; ++b) {
        const Sequence& seq = *videos_[uniform_index(rng_, videos_.size())];
        const auto [ia, ib] = sample_pair(rng_, seq.frames.size());
        const auto [ya, yb] = forward_pair(params_, seq.frames[ia], seq.frames[ib]);
        losses.push_back(weighted_bce(ya, seq.masks[ia]));
        losses.push_back(weighted_bce(yb, seq.masks[ib]));
      }
      Tensor loss = total_loss(losses, params_.coatt);
      loss.backward();
      rec.loss = loss.item();
      sgd_step(params_.tensors(), config_.learning_rate);
    }
    ++step_;
    return rec;
  }

  const ModelParams& params() const { return params_; }
  std::size_t steps_done() const { return step_; }

 private:
  TrainConfig config_;
  ModelParams params_;
  Rng rng_;
  std::vector<const Sequence*> videos_;
  std::vector<StaticExample> statics_;
  std::size_t step_ = 0;
};

// Runs the planned number of steps. The caller's params are not modified.
inline TrainResult train(const Corpus& corpus, const TrainConfig& config, const ModelParams& initial,
                         const std::function<void(const LossRecord&)>& on_step = {}) {
  Trainer trainer(corpus, config, initial.clone());
  TrainResult result;
  const std::size_t total = trainer.planned_steps();
  result.log.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    result.log.push_back(trainer.step());
    if (on_step) on_step(result.log.back());
  }
  result.params = trainer.params();
  return result;
}

}  // namespace cosnet
