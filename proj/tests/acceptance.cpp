// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset. Exit status is 0 only if every selected
// criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "cosnet/evaluate.hpp"
#include "cosnet/gradsuite.hpp"
#include "cosnet/train.hpp"

namespace fs = std::filesystem;
using namespace cosnet;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

FeatureMap random_features(Rng& rng, std::size_t h, std::size_t w, std::size_t c, double stddev = 1.0) {
  return FeatureMap(random_normal({h, w, c}, rng, stddev));
}

Tensor random_frame(Rng& rng, std::size_t side) { return random_uniform({side, side, 3}, rng, 0.0, 1.0); }

const Corpus& reference_corpus() {
  static const Corpus corpus = [] {
    const fs::path root = "acceptance_corpus";
    fs::remove_all(root);
    generate_corpus(CorpusOptions{}, root);
    return load_corpus(root);
  }();
  return corpus;
}

double raw_ortho(const CoattentionParams& p) {
  const auto& W = p.weight;
  const std::size_t C = W.dim(0);
  double s = 0;
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < C; ++k) d += W.at({i, k}) * W.at({j, k});
      s += std::abs(d - (i == j ? 1.0 : 0.0));
    }
  return s;
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = run_grad_suite(GradSuiteOptions{}, 0);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::fputs(format_grad_table(result).c_str(), stdout);
  double prim = 0, model = 0;
  for (const auto& r : result.reports) {
    if (r.op_name == "forward_pair_loss") model = std::max(model, r.max_rel_error);
    else prim = std::max(prim, r.max_rel_error);
  }
  return {result.passed && secs < 120.0,
          fmt("20 seeds, worst primitive %.2e (tol 1e-6/1e-5 blocks), model %.2e (tol 1e-5), %.1f s", prim, model, secs)};
}

Outcome channelwise_equivalence() {
  Rng rng(2);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t C = 2 + uniform_index(rng, 15), h = 1 + uniform_index(rng, 6), w = 1 + uniform_index(rng, 6);
    auto q = random_features(rng, h, w, C), r = random_features(rng, h, w, C);
    auto cw = CoattentionParams::init(Variant::ChannelWise, C, rng, ChannelMode::Static);
    cw.d_a = random_normal({C}, rng, 1.0);
    cw.d_b = random_normal({C}, rng, 1.0);
    auto van = CoattentionParams::init(Variant::Vanilla, C, rng);
    std::vector<double> diag(C * C, 0.0);
    for (std::size_t i = 0; i < C; ++i) diag[i * C + i] = cw.d_a.data()[i] * cw.d_b.data()[i];
    van.weight = Tensor({C, C}, diag);
    worst = std::max(worst, max_abs_diff(compute_affinity(cw, q, r), compute_affinity(van, q, r)));
  }
  return {worst <= 1e-12, fmt("50 instances, max |S_cw - S_vanilla| = %.2e (tol 1e-12)", worst)};
}

Outcome normalization_invariants() {
  Rng rng(3);
  double col_err = 0, hull_excess = 0;
  auto column_sums = [&](const Tensor& M) {
    for (std::size_t j = 0; j < M.dim(1); ++j) {
      double s = 0;
      for (std::size_t i = 0; i < M.dim(0); ++i) s += M.at({i, j});
      col_err = std::max(col_err, std::abs(s - 1.0));
    }
  };
  auto hull = [&](const FeatureMap& ref, const Tensor& Z) {
    const Tensor F = ref.flat();
    for (std::size_t c = 0; c < F.dim(0); ++c) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t i = 0; i < F.dim(1); ++i) {
        lo = std::min(lo, F.at({c, i}));
        hi = std::max(hi, F.at({c, i}));
      }
      for (std::size_t i = 0; i < Z.dim(1); ++i) {
        hull_excess = std::max({hull_excess, lo - Z.at({c, i}), Z.at({c, i}) - hi});
      }
    }
  };
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 2 + uniform_index(rng, 15), h = 1 + uniform_index(rng, 6), w = 1 + uniform_index(rng, 6);
    auto a = random_features(rng, h, w, C), b = random_features(rng, h, w, C);
    const Variant v = static_cast<Variant>(trial % 3);
    auto p = CoattentionParams::init(v, C, rng, trial % 2 ? ChannelMode::SE : ChannelMode::Static);
    if (v != Variant::ChannelWise) p.weight = random_normal({C, C}, rng, 0.5);
    const auto S = normalize_affinity(compute_affinity(p, a, b));
    column_sums(S.S_c);
    column_sums(S.S_r);
    hull(b, attention_summary(b, S.S_c));
    hull(a, attention_summary(a, S.S_r));
  }
  return {col_err <= 1e-12 && hull_excess <= 0.0,
          fmt("100 instances, max |colsum - 1| = %.2e (tol 1e-12), max hull excess %.2e", col_err, hull_excess)};
}

Outcome degeneracy() {
  Rng rng(4);
  int checked = 0;
  bool ok = true;
  for (auto v : {Variant::Vanilla, Variant::Symmetric, Variant::ChannelWise}) {
    for (int trial = 0; trial < 3; ++trial) {
      ModelConfig mc;
      mc.variant = v;
      const auto params = ModelParams::init(mc, rng);
      const auto a = random_frame(rng, 32), b = random_frame(rng, 32);
      NoGradGuard no_grad;
      const std::vector<Tensor> refs{b};
      ok = ok && bitwise_equal(forward_query(params, a, refs).Y, forward_pair(params, a, b).first.Y);
      const std::vector<FeatureMap> fr{embed(params, b)};
      const auto q = embed(params, a);
      ok = ok && bitwise_equal(infer_frame(params, q, fr, Fusion::Summary).Y,
                               infer_frame(params, q, fr, Fusion::Prediction).Y);
      ++checked;
    }
  }
  return {ok, fmt("%d models over 3 variants: query(N=1) == pair and summary == prediction fusion, bitwise", checked)};
}

Outcome symmetry() {
  Rng rng(5);
  double s_err = 0, y_err = 0;
  for (int trial = 0; trial < 10; ++trial) {
    ModelConfig mc;
    mc.variant = Variant::Symmetric;
    auto params = ModelParams::init(mc, rng);
    const std::size_t C = mc.channels;
    auto A = random_normal({C, C}, rng, 0.1);
    std::vector<double> w(C * C);
    for (std::size_t i = 0; i < C; ++i)
      for (std::size_t j = 0; j < C; ++j) w[i * C + j] = (i == j ? 1.0 : 0.0) + 0.5 * (A.at({i, j}) + A.at({j, i}));
    params.coatt.weight = Tensor({C, C}, w, true);
    const auto a = random_frame(rng, 32), b = random_frame(rng, 32);
    NoGradGuard no_grad;
    const auto Va = embed(params, a), Vb = embed(params, b);
    s_err = std::max(s_err, max_abs_diff(compute_affinity(params.coatt, Vb, Va),
                                         transpose(compute_affinity(params.coatt, Va, Vb))));
    const auto [ya, yb] = forward_pair(params, a, b);
    const auto [yb2, ya2] = forward_pair(params, b, a);
    y_err = std::max({y_err, max_abs_diff(ya.Y, ya2.Y), max_abs_diff(yb.Y, yb2.Y)});
  }
  return {s_err <= 1e-12 && y_err <= 1e-12,
          fmt("10 pairs, max |S' - S^T| = %.2e, max prediction mismatch %.2e (tol 1e-12)", s_err, y_err)};
}

Outcome regularizer() {
  const auto& corpus = reference_corpus();
  ModelConfig mc;
  mc.variant = Variant::Symmetric;
  Rng rng(7);
  const auto init = ModelParams::init(mc, rng);
  TrainConfig tc;
  tc.seed = 7;
  tc.steps = 500;
  const double before = raw_ortho(init.coatt);
  const auto result = train(corpus, tc, init);
  const double after = raw_ortho(result.params.coatt);
  return {after < before,
          fmt("symmetric, lambda %.0e, lr %.1e, 500 steps: |WW^T - I| %.6f -> %.6f", tc.ortho_lambda, tc.learning_rate,
              before, after)};
}

// Reference ablation run shared by criteria 7-9.
struct AblationRun {
  std::map<std::size_t, double> summary;  // N -> mean J in percent
  double prediction5 = 0;
  double train_secs = 0;
};

const AblationRun& ablation_run() {
  static const AblationRun run = [] {
    const auto& corpus = reference_corpus();
    ModelConfig mc;
    mc.variant = Variant::Symmetric;
    Rng rng(7);
    const auto init = ModelParams::init(mc, rng);
    TrainConfig tc;
    tc.seed = 7;
    tc.learning_rate = 5e-5;
    tc.steps = 3000;
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = train(corpus, tc, init);
    AblationRun r;
    r.train_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::vector<std::size_t> ns{0, 1, 2, 5, 7};
    const std::vector<Strategy> strategies{Strategy::GlobalUniform};
    const std::vector<Fusion> fusions{Fusion::Summary, Fusion::Prediction};
    for (const auto& row : ablation_rows(result.params, corpus, "test", fusions, strategies, ns, 7)) {
      if (row.fusion == Fusion::Summary) r.summary[row.n_refs] = 100.0 * row.mean_j;
      else if (row.n_refs == 5) r.prediction5 = 100.0 * row.mean_j;
    }
    std::printf("reference run: lr 5e-5, 3000 steps, %.0f s; mean J", r.train_secs);
    for (auto [n, j] : r.summary) std::printf(" N=%zu %.2f", n, j);
    std::printf(" | prediction N=5 %.2f\n", r.prediction5);
    return r;
  }();
  return run;
}

Outcome coattention_helps() {
  const auto& r = ablation_run();
  const double gap = r.summary.at(2) - r.summary.at(0);
  return {gap >= 5.0 && r.train_secs <= 900.0,
          fmt("J(N=2) %.2f - J(N=0) %.2f = %.2f (need >= 5), training %.0f s (limit 900)", r.summary.at(2),
              r.summary.at(0), gap, r.train_secs)};
}

Outcome references_saturate() {
  const auto& r = ablation_run();
  const std::vector<std::size_t> ns{0, 1, 2, 5};
  double worst_drop = 0;
  for (std::size_t i = 1; i < ns.size(); ++i) worst_drop = std::max(worst_drop, r.summary.at(ns[i - 1]) - r.summary.at(ns[i]));
  const double tail = std::abs(r.summary.at(7) - r.summary.at(5));
  return {worst_drop <= 0.5 && tail <= 1.0,
          fmt("largest drop over N=0,1,2,5 %.2f (tol 0.5), |J(7) - J(5)| %.2f (tol 1)", worst_drop, tail)};
}

Outcome fusion_ordering() {
  const auto& r = ablation_run();
  return {r.summary.at(5) >= r.prediction5 - 0.5,
          fmt("N=5 summary %.2f vs prediction %.2f (summary >= prediction - 0.5)", r.summary.at(5), r.prediction5)};
}

Outcome determinism() {
  const std::string cli = COSNET_CLI;
  auto run = [&](const fs::path& dir) {
    fs::remove_all(dir);
    const std::string d = dir.string();
    const std::vector<std::string> cmds{
        cli + " generate --seed 11 --out " + d + "/corpus",
        cli + " train --seed 11 --steps 100 --corpus " + d + "/corpus --out " + d + "/run",
        cli + " infer --seed 11 --corpus " + d + "/corpus --checkpoint " + d + "/run/checkpoint --out " + d + "/pred",
        cli + " eval --seed 11 --pred " + d + "/pred --gt " + d + "/corpus --out " + d + "/scores"};
    for (const auto& c : cmds) {
      if (std::system((c + " > " + d + ".log 2>&1").c_str()) != 0) return false;
    }
    return true;
  };
  if (!run("determinism_a") || !run("determinism_b")) return {false, "a CLI stage exited non-zero"};
  std::vector<fs::path> files{"run/loss.csv", "scores/scores.json", "scores/scores.csv"};
  for (const auto& e : fs::recursive_directory_iterator("determinism_a/pred")) {
    if (e.path().extension() == ".pgm") files.push_back(fs::relative(e.path(), "determinism_a"));
  }
  std::size_t masks = files.size() - 3;
  for (const auto& f : files) {
    if (read_file("determinism_a" / f) != read_file("determinism_b" / f)) return {false, "differs: " + f.string()};
  }
  return {masks > 0, fmt("loss log, %zu masks and score reports identical across two seeded runs", masks)};
}

Outcome metrics_oracle() {
  bool ok = true;
  const std::vector<std::uint8_t> full(16, 1), empty(16, 0);
  std::vector<std::uint8_t> left(16, 0), right(16, 0);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) (x < 2 ? left : right)[y * 4 + x] = 1;
  ok = ok && jaccard(full, full) == 1.0;
  ok = ok && jaccard(left, right) == 0.0;
  ok = ok && jaccard(left, full) == 0.5;
  ok = ok && jaccard(empty, empty) == 1.0;
  const auto s = score_from_j({1, 1, 0, 0});
  ok = ok && s.mean_j == 0.5 && s.recall_j == 0.5 && s.decay_j == 1.0;
  const auto ones = score_from_j({1, 1, 1, 1, 1});
  ok = ok && ones.mean_j == 1.0 && ones.recall_j == 1.0 && ones.decay_j == 0.0;
  const auto flat = score_from_j({0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3});
  ok = ok && flat.decay_j == 0.0;
  const std::vector<Mask> preds{full, full, left, right}, gts{full, full, right, left};
  const auto m = score_sequence(preds, gts);
  ok = ok && m.mean_j == 0.5 && m.recall_j == 0.5 && m.decay_j == 1.0;
  return {ok, "jaccard {1, 0, 0.5, empty 1}, [1,1,0,0] -> 0.5/0.5/1.0, constant -> decay 0, exact"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"channel-wise/vanilla equivalence", channelwise_equivalence},
      {"normalization invariants", normalization_invariants},
      {"N=1 degeneracy", degeneracy},
      {"swap symmetry", symmetry},
      {"regularizer efficacy", regularizer},
      {"co-attention helps", coattention_helps},
      {"references help then saturate", references_saturate},
      {"fusion ordering", fusion_ordering},
      {"end-to-end determinism", determinism},
      {"metrics oracle", metrics_oracle},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
