#pragma once

// The finite-difference suite shared by the CLI `gradcheck` command and the
// acceptance run: every differentiable primitive on small random shapes, and
// the full pair loss of a small model on 16x16 frames.

#include <map>
#include <string>
#include <vector>

#include "cosnet/gradcheck.hpp"
#include "cosnet/train.hpp"

namespace cosnet {

struct GradSuiteOptions {
  std::size_t seeds = 20;
  double eps = 1e-5;
  double primitive_tol = 1e-6;
  double model_tol = 1e-5;
  std::size_t frame_size = 16;
  ModelConfig model = [] {
    ModelConfig c;
    c.embed1 = 4;
    c.embed2 = 6;
    c.channels = 8;
    c.head_hidden = 6;
    return c;
  }();
};

namespace detail {

// Random weights turn a tensor-valued op into a scalar with a generic gradient.
inline Tensor project(const Tensor& y, Rng& rng) {
  return sum(mul(y, random_normal(y.shape(), rng, 1.0)));
}

// Entries bounded away from zero, for ops with a kink there.
inline Tensor away_from_zero(Shape shape, Rng& rng) {
  auto t = random_normal(shape, rng, 1.0);
  std::vector<double> v(t.values());
  for (auto& x : v) x = x < 0 ? x - 0.1 : x + 0.1;
  return Tensor(std::move(shape), std::move(v), true);
}

inline Tensor leaf(Shape shape, Rng& rng, double stddev = 1.0) { return random_normal(std::move(shape), rng, stddev, true); }

}  // namespace detail

// One report per primitive for a single seed.
// Tensor primitives are held to `tol`; the composite co-attention block
// (not a primitive) to `block_tol`.
inline std::vector<GradCheckReport> primitive_checks(std::uint64_t seed, double eps = 1e-5, double tol = 1e-6,
                                                     double block_tol = 1e-5) {
  using detail::leaf;
  using detail::project;
  Rng rng(seed);
  std::vector<GradCheckReport> out;
  auto check = [&](const std::string& name, std::vector<Tensor> inputs, auto&& op, double check_tol) {
    Rng proj(rng());
    const auto R = [&] {
      NoGradGuard ng;
      std::vector<Tensor> probe(inputs);
      return random_normal(op(std::span<const Tensor>(probe)).shape(), proj, 1.0);
    }();
    out.push_back(grad_check(name, [&](std::span<const Tensor> in) { return sum(mul(op(in), R)); }, inputs, eps, check_tol));
  };

  check("matmul", {leaf({3, 4}, rng), leaf({4, 2}, rng)}, [](auto in) { return matmul(in[0], in[1]); }, tol);
  check("transpose", {leaf({3, 5}, rng)}, [](auto in) { return transpose(in[0]); }, tol);
  check("reshape", {leaf({2, 6}, rng)}, [](auto in) { return reshape(in[0], {3, 2, 2}); }, tol);
  check("softmax_columns", {leaf({4, 3}, rng, 2.0)}, [](auto in) { return softmax_columns(in[0]); }, tol);
  check("conv2d_s1", {leaf({5, 4, 2}, rng), leaf({3, 3, 2, 3}, rng)}, [](auto in) { return conv2d(in[0], in[1], 1, 1); }, tol);
  check("conv2d_s2", {leaf({6, 5, 2}, rng), leaf({3, 3, 2, 2}, rng)}, [](auto in) { return conv2d(in[0], in[1], 2, 1); }, tol);
  check("conv2d_1x1", {leaf({3, 3, 4}, rng), leaf({1, 1, 4, 2}, rng)}, [](auto in) { return conv2d(in[0], in[1], 1, 0); }, tol);
  check("bilinear_upsample", {leaf({3, 2, 2}, rng)}, [](auto in) { return bilinear_upsample(in[0], 4); }, tol);
  check("concat_channels", {leaf({2, 3, 2}, rng), leaf({2, 3, 3}, rng)},
        [](auto in) { return concat_channels(in[0], in[1]); }, tol);
  check("sigmoid", {leaf({4, 3}, rng, 2.0)}, [](auto in) { return sigmoid(in[0]); }, tol);
  check("relu", {detail::away_from_zero({4, 3}, rng)}, [](auto in) { return relu(in[0]); }, tol);
  check("abs", {detail::away_from_zero({4, 3}, rng)}, [](auto in) { return abs(in[0]); }, tol);
  check("scale", {leaf({3, 3}, rng)}, [](auto in) { return scale(in[0], -1.7); }, tol);
  check("add", {leaf({3, 4}, rng), leaf({3, 4}, rng)}, [](auto in) { return add(in[0], in[1]); }, tol);
  check("add_bias", {leaf({2, 3, 4}, rng), leaf({4}, rng)}, [](auto in) { return add(in[0], in[1]); }, tol);
  check("sub", {leaf({3, 4}, rng), leaf({3, 4}, rng)}, [](auto in) { return sub(in[0], in[1]); }, tol);
  check("mul", {leaf({3, 4}, rng), leaf({3, 4}, rng)}, [](auto in) { return mul(in[0], in[1]); }, tol);
  check("mul_broadcast", {leaf({3, 5}, rng), leaf({5}, rng)}, [](auto in) { return mul(in[0], in[1]); }, tol);
  check("scale_channels", {leaf({2, 3, 4}, rng), leaf({4}, rng)}, [](auto in) { return scale_channels(in[0], in[1]); }, tol);
  check("sum", {leaf({3, 4}, rng)}, [](auto in) { return sum(in[0]); }, tol);
  check("mean", {leaf({3, 4}, rng)}, [](auto in) { return mean(in[0]); }, tol);
  check("global_avg_pool", {leaf({3, 2, 4}, rng)}, [](auto in) { return global_avg_pool(in[0]); }, tol);

  {
    Mask m(12);
    for (auto& v : m) v = static_cast<std::uint8_t>(uniform_index(rng, 2));
    m[0] = 1;
    out.push_back(grad_check(
        "weighted_bce", [&](std::span<const Tensor> in) { return weighted_bce({in[0]}, m); },
        {random_uniform({3, 4}, rng, 0.05, 0.95, true)}, eps, tol));
  }

  // Co-attention block end to end: affinity, normalization, summary, gate.
  struct Block {
    Variant variant;
    ChannelMode mode;
  };
  for (auto [variant, mode] : {Block{Variant::Vanilla, ChannelMode::SE}, Block{Variant::Symmetric, ChannelMode::SE},
                               Block{Variant::ChannelWise, ChannelMode::Static},
                               Block{Variant::ChannelWise, ChannelMode::SE}}) {
    auto p = CoattentionParams::init(variant, 3, rng, mode);
    p.weight = leaf({3, 3}, rng, 0.5);
    p.d_a = leaf({3}, rng);
    p.d_b = leaf({3}, rng);
    p.gate_bias = leaf({1}, rng);
    std::vector<Tensor> inputs{leaf({2, 2, 3}, rng), leaf({2, 2, 3}, rng)};
    for (const auto& nt : p.tensors()) inputs.push_back(nt.tensor);
    std::string name = "coattention_" + to_string(variant);
    if (variant == Variant::ChannelWise) name += "_" + to_string(mode);
    check(name, inputs, [&p](auto in) {
      const FeatureMap Va(in[0]), Vb(in[1]);
      const auto S = normalize_affinity(compute_affinity(p, Va, Vb));
      auto Za = attention_summary(Vb, S.S_c);
      auto Zb = attention_summary(Va, S.S_r);
      auto ga = apply_gate(Za, gate(p, Za)).Z, gb = apply_gate(Zb, gate(p, Zb)).Z;
      return concat_channels(reshape(ga, {3, 4, 1}), reshape(gb, {3, 4, 1}));
    }, block_tol);
  }
  {
    auto p = CoattentionParams::init(Variant::Symmetric, 3, rng, ChannelMode::SE, 0.3);
    p.weight = leaf({3, 3}, rng, 0.7);
    out.push_back(grad_check("ortho_penalty", [&p](std::span<const Tensor>) { return ortho_penalty(p); }, {p.weight},
                             eps, tol));
  }
  return out;
}

// Mean pair loss of a freshly initialized model on random 16x16 frames,
// checked over every parameter.
inline GradCheckReport model_check(std::uint64_t seed, const GradSuiteOptions& opt = {}) {
  Rng rng(seed);
  auto params = ModelParams::init(opt.model, rng);
  // Nonzero biases so every bias gradient is exercised away from init.
  for (auto& [name, t] : params.tensors()) {
    if (name.find("bias") == std::string::npos) continue;
    auto v = t.mutable_data();
    for (auto& x : v) x = normal(rng, 0.0, 0.1);
  }
  // W far from orthogonal keeps |WW^T - I| clear of its kinks.
  if (params.coatt.variant != Variant::ChannelWise) {
    for (auto& x : params.coatt.weight.mutable_data()) x = normal(rng, 0.0, 0.5);
  }
  const std::size_t n = opt.frame_size;
  const auto fa = random_uniform({n, n, 3}, rng, 0.0, 1.0), fb = random_uniform({n, n, 3}, rng, 0.0, 1.0);
  Mask ma(n * n), mb(n * n);
  for (auto& v : ma) v = static_cast<std::uint8_t>(uniform_index(rng, 2));
  for (auto& v : mb) v = static_cast<std::uint8_t>(uniform_index(rng, 2));
  std::vector<Tensor> inputs;
  for (const auto& nt : params.tensors()) inputs.push_back(nt.tensor);
  return grad_check(
      "forward_pair_loss",
      [&](std::span<const Tensor>) {
        const auto [ya, yb] = forward_pair(params, fa, fb);
        std::vector<Tensor> losses{weighted_bce(ya, ma), weighted_bce(yb, mb)};
        return total_loss(losses, params.coatt);
      },
      inputs, opt.eps, opt.model_tol);
}

struct GradSuiteResult {
  std::vector<GradCheckReport> reports;  // worst seed per check, in first-seen order
  bool passed = true;
};

inline GradSuiteResult run_grad_suite(const GradSuiteOptions& opt = {}, std::uint64_t base_seed = 0) {
  GradSuiteResult result;
  std::map<std::string, std::size_t> slot;
  auto merge = [&](const GradCheckReport& r) {
    auto [it, fresh] = slot.try_emplace(r.op_name, result.reports.size());
    if (fresh) {
      result.reports.push_back(r);
      return;
    }
    auto& acc = result.reports[it->second];
    acc.coordinates += r.coordinates;
    acc.max_rel_error = std::max(acc.max_rel_error, r.max_rel_error);
    acc.passed = acc.passed && r.passed;
  };
  for (std::size_t s = 0; s < opt.seeds; ++s) {
    for (const auto& r : primitive_checks(base_seed + s, opt.eps, opt.primitive_tol, opt.model_tol)) merge(r);
    merge(model_check(base_seed + s, opt));
  }
  for (const auto& r : result.reports) result.passed = result.passed && r.passed;
  return result;
}

inline std::string format_grad_table(const GradSuiteResult& result) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-32s %12s %10s %8s %s\n", "check", "max_rel_err", "tolerance", "coords", "status");
  out += line;
  for (const auto& r : result.reports) {
    std::snprintf(line, sizeof line, "%-32s %12.3e %10.1e %8zu %s\n", r.op_name.c_str(), r.max_rel_error, r.tolerance,
                  r.coordinates, r.passed ? "PASS" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace cosnet
