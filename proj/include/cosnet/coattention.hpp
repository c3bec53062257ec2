#pragma once

// Co-attention between two frame embeddings.
//
// A FeatureMap V is stored H x W x C. Its matrix view is C x (HW): column i is
// the feature vector at spatial position i, positions enumerated row-major.
// For a query map Va and a reference map Vb the affinity is
//
//   S = Vb^T W Va                      (HW x HW; rows = reference positions)
//
// and column i of softmax_columns(S) weights the reference features that
// summarize query position i.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cosnet/random.hpp"
#include "cosnet/tensor.hpp"

namespace cosnet {

enum class Variant { Vanilla, Symmetric, ChannelWise };
enum class ChannelMode { Static, SE };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::Vanilla: return "vanilla";
    case Variant::Symmetric: return "symmetric";
    case Variant::ChannelWise: return "channelwise";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "vanilla") return Variant::Vanilla;
  if (s == "symmetric") return Variant::Symmetric;
  if (s == "channelwise") return Variant::ChannelWise;
  throw UsageError("unknown variant '" + s + "' (expected vanilla|symmetric|channelwise)");
}

inline std::string to_string(ChannelMode m) { return m == ChannelMode::Static ? "static" : "se"; }

inline ChannelMode parse_channel_mode(const std::string& s) {
  if (s == "static") return ChannelMode::Static;
  if (s == "se") return ChannelMode::SE;
  throw UsageError("unknown channel_mode '" + s + "' (expected static|se)");
}

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct CoattentionParams {
  Variant variant = Variant::Symmetric;
  ChannelMode channel_mode = ChannelMode::SE;
  double ortho_lambda = 0.0;

  Tensor weight;  // C x C, Vanilla and Symmetric

  Tensor d_a, d_b;  // [C], ChannelWise static; d_a scales the reference, d_b the query

  // ChannelWise se: branch a's weights come from the pooled query and scale
  // the reference; branch b's come from the pooled reference and scale the query.
  Tensor se_a_weight, se_a_bias;
  Tensor se_b_weight, se_b_bias;

  Tensor gate_kernel;  // 1 x 1 x C x 1, shared by both streams
  Tensor gate_bias;    // [1]

  std::size_t channels() const { return gate_kernel.dim(2); }

  // Learnable tensors in a fixed order.
  std::vector<NamedTensor> tensors() const {
    std::vector<NamedTensor> out;
    if (variant == Variant::ChannelWise) {
      if (channel_mode == ChannelMode::Static) {
        out.push_back({"coatt.d_a", d_a});
        out.push_back({"coatt.d_b", d_b});
      } else {
        out.push_back({"coatt.se_a.weight", se_a_weight});
        out.push_back({"coatt.se_a.bias", se_a_bias});
        out.push_back({"coatt.se_b.weight", se_b_weight});
        out.push_back({"coatt.se_b.bias", se_b_bias});
      }
    } else {
      out.push_back({"coatt.weight", weight});
    }
    out.push_back({"coatt.gate.weight", gate_kernel});
    out.push_back({"coatt.gate.bias", gate_bias});
    return out;
  }

  // Weight matrix near identity (+-0.01 uniform noise), gate bias 0, static
  // diagonals 1, SE weights small Gaussian with zero bias.
  static CoattentionParams init(Variant variant, std::size_t channels, Rng& rng,
                                ChannelMode mode = ChannelMode::SE, double ortho_lambda = 1e-4) {
    CoattentionParams p;
    p.variant = variant;
    p.channel_mode = mode;
    p.ortho_lambda = variant == Variant::Symmetric ? ortho_lambda : 0.0;
    const std::size_t C = channels;
    if (variant == Variant::ChannelWise) {
      if (mode == ChannelMode::Static) {
        p.d_a = Tensor::full({C}, 1.0, true);
        p.d_b = Tensor::full({C}, 1.0, true);
      } else {
        const double s = 1.0 / std::sqrt(static_cast<double>(C));
        p.se_a_weight = random_normal({C, C}, rng, s, true);
        p.se_a_bias = Tensor::zeros({C}, true);
        p.se_b_weight = random_normal({C, C}, rng, s, true);
        p.se_b_bias = Tensor::zeros({C}, true);
      }
    } else {
      auto w = random_uniform({C, C}, rng, -0.01, 0.01, true);
      auto v = w.mutable_data();
      for (std::size_t i = 0; i < C; ++i) v[i * C + i] += 1.0;
      p.weight = w;
    }
    p.gate_kernel = random_normal({1, 1, C, 1}, rng, 1.0 / std::sqrt(static_cast<double>(C)), true);
    p.gate_bias = Tensor::zeros({1}, true);
    return p;
  }
};

class FeatureMap {
 public:
  FeatureMap() = default;
  explicit FeatureMap(Tensor v) : v_(std::move(v)) {
    if (v_.rank() != 3) throw DimensionError("FeatureMap needs an H x W x C tensor, got " + shape_str(v_.shape()));
  }

  const Tensor& tensor() const& { return v_; }
  Tensor tensor() && { return std::move(v_); }
  std::size_t height() const { return v_.dim(0); }
  std::size_t width() const { return v_.dim(1); }
  std::size_t channels() const { return v_.dim(2); }
  std::size_t positions() const { return height() * width(); }

  // (HW) x C, row i = feature vector at position i.
  Tensor rows() const { return reshape(v_, {positions(), channels()}); }
  // C x (HW), column i = feature vector at position i.
  Tensor flat() const { return transpose(rows()); }

 private:
  Tensor v_;
};

struct AffinityPair {
  Tensor S;    // raw affinity, rows = reference positions, columns = query positions
  Tensor S_c;  // softmax_columns(S)
  Tensor S_r;  // softmax_columns(S^T)
};

struct AttentionSummary {
  Tensor Z;            // C x (HW)
  Tensor gate_values;  // [HW]
};

namespace detail {

inline void require_compatible(const FeatureMap& a, const FeatureMap& b, const char* op) {
  if (a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width()) {
    throw DimensionError(std::string(op) + ": feature maps disagree, " + shape_str(a.tensor().shape()) + " vs " +
                         shape_str(b.tensor().shape()));
  }
}

// sigmoid(W g + b) for a pooled feature g of length C.
inline Tensor se_weights(const Tensor& pooled, const Tensor& w, const Tensor& b) {
  const std::size_t C = pooled.dim(0);
  auto h = matmul(reshape(pooled, {1, C}), w);
  return sigmoid(add(reshape(h, {C}), b));
}

}  // namespace detail

inline Tensor compute_affinity(const CoattentionParams& params, const FeatureMap& query, const FeatureMap& reference) {
  detail::require_compatible(query, reference, "compute_affinity");
  if (query.channels() != params.channels()) {
    throw DimensionError("compute_affinity: features have " + std::to_string(query.channels()) +
                         " channels, co-attention weights expect " + std::to_string(params.channels()));
  }
  const Tensor qa = query.rows();      // HW x C
  const Tensor rb = reference.rows();  // HW x C
  switch (params.variant) {
    case Variant::Vanilla:
    case Variant::Symmetric:
      return matmul(matmul(rb, params.weight), transpose(qa));
    case Variant::ChannelWise: {
      Tensor d_a, d_b;
      if (params.channel_mode == ChannelMode::Static) {
        d_a = params.d_a;
        d_b = params.d_b;
      } else {
        d_a = detail::se_weights(global_avg_pool(qa), params.se_a_weight, params.se_a_bias);
        d_b = detail::se_weights(global_avg_pool(rb), params.se_b_weight, params.se_b_bias);
      }
      return matmul(scale_channels(rb, d_a), transpose(scale_channels(qa, d_b)));
    }
  }
  throw UsageError("compute_affinity: unknown variant");
}

inline AffinityPair normalize_affinity(const Tensor& S) {
  return {S, softmax_columns(S), softmax_columns(transpose(S))};
}

// Z = Vref_flat * S_norm: column i is the S_norm[:, i]-weighted mix of
// reference feature vectors.
inline Tensor attention_summary(const FeatureMap& reference, const Tensor& S_norm) {
  if (S_norm.rank() != 2 || S_norm.dim(0) != reference.positions()) {
    throw DimensionError("attention_summary: normalized affinity " + shape_str(S_norm.shape()) +
                         " does not match reference with " + std::to_string(reference.positions()) + " positions");
  }
  return matmul(reference.flat(), S_norm);
}

// Per-position confidence sigmoid(w_f . Z^(i) + b_f); a 1x1 convolution with
// one output channel applied to the C x (HW) summary.
inline Tensor gate(const CoattentionParams& params, const Tensor& Z) {
  const std::size_t C = params.channels();
  if (Z.rank() != 2 || Z.dim(0) != C) {
    throw DimensionError("gate: summary " + shape_str(Z.shape()) + " does not have " + std::to_string(C) + " rows");
  }
  const std::size_t N = Z.dim(1);
  auto logits = matmul(reshape(params.gate_kernel, {1, C}), Z);
  return reshape(sigmoid(add(reshape(logits, {N, 1}), params.gate_bias)), {N});
}

inline AttentionSummary apply_gate(const Tensor& Z, const Tensor& gate_values) {
  if (gate_values.rank() != 1 || Z.rank() != 2 || gate_values.dim(0) != Z.dim(1)) {
    throw DimensionError("apply_gate: summary " + shape_str(Z.shape()) + " vs gates " +
                         shape_str(gate_values.shape()));
  }
  return {mul(Z, gate_values), gate_values};
}

// Mean of N gated summaries; N = 1 returns the summary unchanged.
inline AttentionSummary fuse_summaries(std::span<const AttentionSummary> summaries) {
  if (summaries.empty()) throw UsageError("fuse_summaries: need at least one summary");
  if (summaries.size() == 1) return summaries.front();
  Tensor z = summaries[0].Z;
  Tensor g = summaries[0].gate_values;
  for (std::size_t n = 1; n < summaries.size(); ++n) {
    if (summaries[n].Z.shape() != z.shape()) {
      throw DimensionError("fuse_summaries: shape " + shape_str(summaries[n].Z.shape()) + " differs from " +
                           shape_str(z.shape()));
    }
    z = add(z, summaries[n].Z);
    g = add(g, summaries[n].gate_values);
  }
  const double inv = 1.0 / static_cast<double>(summaries.size());
  return {scale(z, inv), scale(g, inv)};
}

// X = [Z as H x W x C, V] along channels.
inline Tensor concat_features(const AttentionSummary& summary, const FeatureMap& features) {
  const auto& Z = summary.Z;
  if (Z.rank() != 2 || Z.dim(0) != features.channels() || Z.dim(1) != features.positions()) {
    throw DimensionError("concat_features: summary " + shape_str(Z.shape()) + " does not match features " +
                         shape_str(features.tensor().shape()));
  }
  auto z_map = reshape(transpose(Z), {features.height(), features.width(), features.channels()});
  return concat_channels(z_map, features.tensor());
}

// lambda * sum_ij |(W W^T - I)_ij|
inline Tensor ortho_penalty(const CoattentionParams& params) {
  if (params.variant != Variant::Symmetric) {
    throw UsageError("ortho_penalty: only defined for the symmetric variant, got " + to_string(params.variant));
  }
  const auto& W = params.weight;
  auto deviation = sub(matmul(W, transpose(W)), Tensor::eye(W.dim(0)));
  return scale(sum(abs(deviation)), params.ortho_lambda);
}

// Gated summary of the query against one reference: the Z_a side of a pair.
inline AttentionSummary query_summary(const CoattentionParams& params, const FeatureMap& query,
                                      const FeatureMap& reference) {
  auto S_c = softmax_columns(compute_affinity(params, query, reference));
  auto Z = attention_summary(reference, S_c);
  return apply_gate(Z, gate(params, Z));
}

}  // namespace cosnet
