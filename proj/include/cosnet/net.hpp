#pragma once

// Siamese segmentation model: a shared strided-conv embedder, the gated
// co-attention block and a small convolutional segmentation head.

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cosnet/coattention.hpp"
#include "cosnet/serialize.hpp"

namespace cosnet {

struct ModelConfig {
  std::size_t embed1 = 16;
  std::size_t embed2 = 32;
  std::size_t channels = 64;  // C
  std::size_t head_hidden = 32;
  Variant variant = Variant::Symmetric;
  ChannelMode channel_mode = ChannelMode::SE;
  double ortho_lambda = 1e-4;
};

inline constexpr std::size_t kEmbedStride = 8;  // three stride-2 layers

struct ConvLayer {
  Tensor weight;  // kh x kw x Cin x Cout
  Tensor bias;    // [Cout]

  static ConvLayer init(std::size_t k, std::size_t cin, std::size_t cout, Rng& rng, double gain = 2.0) {
    const double fan_in = static_cast<double>(k * k * cin);
    return {random_normal({k, k, cin, cout}, rng, std::sqrt(gain / fan_in), true), Tensor::zeros({cout}, true)};
  }

  Tensor operator()(const Tensor& x, std::size_t stride, std::size_t pad) const {
    return add(conv2d(x, weight, stride, pad), bias);
  }
};

struct ModelParams {
  ModelConfig config;
  ConvLayer embed1, embed2, embed3;
  CoattentionParams coatt;
  ConvLayer head1, head2, head_out;
  ConvLayer side;  // 1x1 side-output used by static-image training

  static ModelParams init(const ModelConfig& cfg, Rng& rng) {
    ModelParams p;
    p.config = cfg;
    p.embed1 = ConvLayer::init(3, 3, cfg.embed1, rng);
    p.embed2 = ConvLayer::init(3, cfg.embed1, cfg.embed2, rng);
    p.embed3 = ConvLayer::init(3, cfg.embed2, cfg.channels, rng);
    p.coatt = CoattentionParams::init(cfg.variant, cfg.channels, rng, cfg.channel_mode, cfg.ortho_lambda);
    p.head1 = ConvLayer::init(3, 2 * cfg.channels, cfg.head_hidden, rng);
    p.head2 = ConvLayer::init(3, cfg.head_hidden, cfg.head_hidden, rng);
    p.head_out = ConvLayer::init(1, cfg.head_hidden, 1, rng, 1.0);
    p.side = ConvLayer::init(1, cfg.channels, 1, rng, 1.0);
    return p;
  }

  std::vector<NamedTensor> embedder_tensors() const {
    return {{"embed1.weight", embed1.weight}, {"embed1.bias", embed1.bias},
            {"embed2.weight", embed2.weight}, {"embed2.bias", embed2.bias},
            {"embed3.weight", embed3.weight}, {"embed3.bias", embed3.bias}};
  }
  std::vector<NamedTensor> head_tensors() const {
    return {{"head1.weight", head1.weight}, {"head1.bias", head1.bias},
            {"head2.weight", head2.weight}, {"head2.bias", head2.bias},
            {"head_out.weight", head_out.weight}, {"head_out.bias", head_out.bias}};
  }
  std::vector<NamedTensor> side_tensors() const { return {{"side.weight", side.weight}, {"side.bias", side.bias}}; }

  // Every learnable tensor, in checkpoint order. The tensors share storage
  // with this object, so edits through the returned handles are visible here.
  std::vector<NamedTensor> tensors() const {
    auto out = embedder_tensors();
    for (auto& t : coatt.tensors()) out.push_back(t);
    for (auto& t : head_tensors()) out.push_back(t);
    for (auto& t : side_tensors()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.tensor.size();
    return n;
  }

  // Deep copy with fresh storage.
  ModelParams clone() const {
    ModelParams c = *this;
    auto copy = [](Tensor& t) {
      if (t.defined()) t = Tensor(t.shape(), t.values(), t.requires_grad());
    };
    for (ConvLayer* l : {&c.embed1, &c.embed2, &c.embed3, &c.head1, &c.head2, &c.head_out, &c.side}) {
      copy(l->weight);
      copy(l->bias);
    }
    for (Tensor* t : {&c.coatt.weight, &c.coatt.d_a, &c.coatt.d_b, &c.coatt.se_a_weight, &c.coatt.se_a_bias,
                      &c.coatt.se_b_weight, &c.coatt.se_b_bias, &c.coatt.gate_kernel, &c.coatt.gate_bias}) {
      copy(*t);
    }
    return c;
  }

  void zero_grad() const {
    for (auto& t : tensors()) {
      Tensor h = t.tensor;
      h.zero_grad();
    }
  }
};

struct Prediction {
  Tensor Y;  // H0 x W0 probabilities
};

// frame: H0 x W0 x 3 in [0, 1], both sides divisible by 8.
inline FeatureMap embed(const ModelParams& params, const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(2) != 3) {
    throw DimensionError("embed: expected an H x W x 3 frame, got " + shape_str(frame.shape()));
  }
  if (frame.dim(0) % kEmbedStride != 0 || frame.dim(1) % kEmbedStride != 0) {
    throw DimensionError("embed: frame " + shape_str(frame.shape()) + " sides must be divisible by 8");
  }
  auto h = relu(params.embed1(frame, 2, 1));
  h = relu(params.embed2(h, 2, 1));
  return FeatureMap(relu(params.embed3(h, 2, 1)));
}

// Segmentation head on X = [Z, V], upsampled to frame resolution.
inline Prediction decode(const ModelParams& params, const AttentionSummary& summary, const FeatureMap& features) {
  auto x = concat_features(summary, features);
  auto h = relu(params.head1(x, 1, 1));
  h = relu(params.head2(h, 1, 1));
  auto prob = sigmoid(params.head_out(h, 1, 0));
  auto up = bilinear_upsample(prob, kEmbedStride);
  return {reshape(up, {up.dim(0), up.dim(1)})};
}

// Zero summary: decoding without co-attention.
inline AttentionSummary empty_summary(const FeatureMap& features) {
  return {Tensor::zeros({features.channels(), features.positions()}),
          Tensor::zeros({features.positions()})};
}

inline std::pair<Prediction, Prediction> forward_pair(const ModelParams& params, const Tensor& frame_a,
                                                      const Tensor& frame_b) {
  if (frame_a.shape() != frame_b.shape()) {
    throw DimensionError("forward_pair: frame shapes differ, " + shape_str(frame_a.shape()) + " vs " +
                         shape_str(frame_b.shape()));
  }
  const FeatureMap Va = embed(params, frame_a);
  const FeatureMap Vb = embed(params, frame_b);
  const AffinityPair S = normalize_affinity(compute_affinity(params.coatt, Va, Vb));
  auto Za_raw = attention_summary(Vb, S.S_c);
  auto Zb_raw = attention_summary(Va, S.S_r);
  const AttentionSummary Za = apply_gate(Za_raw, gate(params.coatt, Za_raw));
  const AttentionSummary Zb = apply_gate(Zb_raw, gate(params.coatt, Zb_raw));
  return {decode(params, Za, Va), decode(params, Zb, Vb)};
}

// Query against already-embedded references, fused per attention summary.
inline Prediction forward_query_features(const ModelParams& params, const FeatureMap& query,
                                         std::span<const FeatureMap> references) {
  if (references.empty()) throw UsageError("forward_query: need at least one reference frame");
  std::vector<AttentionSummary> summaries;
  summaries.reserve(references.size());
  for (const auto& ref : references) summaries.push_back(query_summary(params.coatt, query, ref));
  return decode(params, fuse_summaries(summaries), query);
}

inline Prediction forward_query(const ModelParams& params, const Tensor& query, std::span<const Tensor> references) {
  if (references.empty()) throw UsageError("forward_query: need at least one reference frame");
  const FeatureMap Vq = embed(params, query);
  std::vector<FeatureMap> refs;
  refs.reserve(references.size());
  for (const auto& r : references) {
    if (r.shape() != query.shape()) {
      throw DimensionError("forward_query: reference " + shape_str(r.shape()) + " differs from query " +
                           shape_str(query.shape()));
    }
    refs.push_back(embed(params, r));
  }
  return forward_query_features(params, Vq, refs);
}

// Embedder plus the 1x1 side-output, for static-image training.
inline Prediction forward_static(const ModelParams& params, const Tensor& image) {
  const FeatureMap V = embed(params, image);
  auto prob = sigmoid(params.side(V.tensor(), 1, 0));
  auto up = bilinear_upsample(prob, kEmbedStride);
  return {reshape(up, {up.dim(0), up.dim(1)})};
}

// ---------------------------------------------------------------------------
// Checkpoints: <base>.json manifest + <base>.bin holding every tensor's f64
// values concatenated in manifest order.

inline nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"embed1", c.embed1},
          {"embed2", c.embed2},
          {"channels", c.channels},
          {"head_hidden", c.head_hidden},
          {"variant", to_string(c.variant)},
          {"channel_mode", to_string(c.channel_mode)},
          {"ortho_lambda", c.ortho_lambda}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.embed1 = j.at("embed1").get<std::size_t>();
  c.embed2 = j.at("embed2").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.channel_mode = parse_channel_mode(j.at("channel_mode").get<std::string>());
  c.ortho_lambda = j.at("ortho_lambda").get<double>();
  return c;
}

inline void save_checkpoint(const ModelParams& params, const std::filesystem::path& base,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest = {{"format", "cosnet-checkpoint"},
                             {"dtype", "f64"},
                             {"byte_order", "little"},
                             {"model", model_config_json(params.config)},
                             {"tensors", nlohmann::json::array()}};
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  std::string blob;
  std::size_t offset = 0;
  for (const auto& [name, t] : params.tensors()) {
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
    append_f64_le(blob, t.data());
  }
  write_file(base.string() + ".json", manifest.dump(2) + "\n");
  write_file(base.string() + ".bin", blob);
}

inline ModelParams load_checkpoint(const std::filesystem::path& base, nlohmann::json* manifest_out = nullptr) {
  const std::string manifest_path = base.string() + ".json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(manifest_path + ": " + e.what(), e.byte);
  }
  if (manifest.value("format", "") != "cosnet-checkpoint") throw DataError(manifest_path + ": not a checkpoint manifest");
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(manifest.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path + ": bad model section: " + e.what());
  }
  Rng rng(0);
  ModelParams params = ModelParams::init(cfg, rng);
  const auto values = read_f64_le(read_file(base.string() + ".bin"));
  const auto& entries = manifest.at("tensors");
  auto tensors = params.tensors();
  if (entries.size() != tensors.size()) {
    throw DataError(manifest_path + ": expected " + std::to_string(tensors.size()) + " tensors, manifest lists " +
                    std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& e = entries[i];
    auto& [name, t] = tensors[i];
    if (e.at("name").get<std::string>() != name || e.at("shape").get<Shape>() != t.shape()) {
      throw DataError(manifest_path + ": tensor " + std::to_string(i) + " should be " + name + " " +
                      shape_str(t.shape()));
    }
    const auto offset = e.at("offset").get<std::size_t>();
    if (offset + t.size() > values.size()) throw DataError(base.string() + ".bin: payload too short for " + name);
    auto dst = t.mutable_data();
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), dst.begin());
  }
  if (manifest_out) *manifest_out = manifest;
  return params;
}

}  // namespace cosnet
