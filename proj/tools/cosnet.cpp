// cosnet: corpus generation, training, inference, evaluation, gradient
// checks and ablation sweeps from one executable.
//
//   cosnet generate  --out corpus
//   cosnet train     --corpus corpus --out run
//   cosnet infer     --corpus corpus --checkpoint run/checkpoint --out pred
//   cosnet eval      --pred pred --gt corpus --out scores
//   cosnet gradcheck
//   cosnet ablate    --corpus corpus --out ablation
//
// Exit codes: 0 ok, 1 usage, 2 data, 3 numeric failure.

#include <array>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "cosnet/config.hpp"
#include "cosnet/evaluate.hpp"
#include "cosnet/gradsuite.hpp"

namespace fs = std::filesystem;
using namespace cosnet;
using nlohmann::json;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, checkpoint, corpus, pred, gt, split;
  std::optional<std::size_t> n_refs, steps;
  std::optional<std::string> variant, strategy, fusion;
  std::optional<double> learning_rate;
};

RunConfig effective_config(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
  json j = to_json(c);
  if (f.seed) j["seed"] = *f.seed;
  if (f.out) j["paths"]["out"] = *f.out;
  if (f.checkpoint) j["paths"]["checkpoint"] = *f.checkpoint;
  if (f.corpus) j["paths"]["corpus"] = *f.corpus;
  if (f.pred) j["paths"]["pred"] = *f.pred;
  if (f.gt) j["paths"]["gt"] = *f.gt;
  if (f.split) j["ablate"]["split"] = *f.split;
  if (f.n_refs) {
    j["inference"]["n_refs"] = *f.n_refs;
    j["ablate"]["n_refs"] = json::array({*f.n_refs});
  }
  if (f.variant) {
    j["model"]["variant"] = *f.variant;
    j["ablate"]["variants"] = json::array({*f.variant});
  }
  if (f.strategy) {
    j["inference"]["strategy"] = *f.strategy;
    j["ablate"]["strategies"] = json::array({*f.strategy});
  }
  if (f.fusion) {
    j["inference"]["fusion"] = *f.fusion;
    j["ablate"]["fusions"] = json::array({*f.fusion});
  }
  if (f.steps) j["train"]["steps"] = *f.steps;
  if (f.learning_rate) j["train"]["learning_rate"] = *f.learning_rate;
  return from_json(j);
}

void echo_config(const RunConfig& c, const fs::path& dir) { write_file(dir / "config.json", to_json(c).dump(2) + "\n"); }

std::string sha256_file(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw DataError("sha256 failed for " + path.string());
  }
  std::string hex;
  char b[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(b, sizeof b, "%02x", md[i]);
    hex += b;
  }
  return hex;
}

std::string require_path(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing ") + flag);
  return value;
}

int cmd_generate(const RunConfig& c, bool out_given) {
  const fs::path root = out_given ? c.paths.out : c.paths.corpus;
  generate_corpus(c.scene, root);
  echo_config(c, root);
  std::printf("corpus written to %s (%zu train, %zu test, %zu static images)\n", root.c_str(), c.scene.n_train,
              c.scene.n_test, c.scene.n_static);
  return 0;
}

ModelParams train_model(const RunConfig& c, const Corpus& corpus, const fs::path& out) {
  Rng rng(c.seed);
  const auto init = ModelParams::init(c.model, rng);
  Trainer trainer(corpus, c.train, init.clone());
  const std::size_t total = trainer.planned_steps();
  std::vector<LossRecord> log;
  log.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    log.push_back(trainer.step());
    if ((i + 1) % 100 == 0 || i + 1 == total) {
      std::fprintf(stderr, "step %zu/%zu %s loss %.4f ortho %.6g\n", i + 1, total, log.back().phase.c_str(),
                   log.back().loss, log.back().ortho_penalty);
    }
  }
  const ModelParams& params = trainer.params();
  write_file(out / "loss.csv", loss_log_csv(log));
  save_checkpoint(params, out / "checkpoint", {{"seed", c.seed}, {"train", to_json(c)["train"]}});
  echo_config(c, out);
  return params;
}

int cmd_train(const RunConfig& c) {
  const auto corpus = load_corpus(c.paths.corpus);
  const fs::path out = c.paths.out;
  train_model(c, corpus, out);
  std::printf("checkpoint %s, loss log %s\n", (out / "checkpoint").c_str(), (out / "loss.csv").c_str());
  return 0;
}

int cmd_infer(const RunConfig& c) {
  const fs::path ckpt = require_path(c.paths.checkpoint, "--checkpoint");
  const auto params = load_checkpoint(ckpt);
  const auto corpus = load_corpus(c.paths.corpus);
  const fs::path out = c.paths.out;
  json seqs = json::array();
  for (const auto* s : corpus.split(c.ablate.split)) {
    const auto result = infer_video(params, s->frames, c.inference);
    for (std::size_t t = 0; t < result.masks.size(); ++t) {
      write_pnm(mask_to_image(result.masks[t], s->width, s->height), out / s->name / "masks" / detail::frame_name(t, "pgm"));
    }
    seqs.push_back({{"name", s->name}, {"split", s->split}, {"T", s->frames.size()}, {"height", s->height},
                    {"width", s->width}, {"references", result.references}});
  }
  if (seqs.empty()) throw DataError(c.paths.corpus + ": no '" + c.ablate.split + "' sequences");
  json manifest = {{"format", "cosnet-predictions"},
                   {"config", to_json(c)},
                   {"checkpoint", ckpt.string()},
                   {"checkpoint_sha256", sha256_file(ckpt.string() + ".bin")},
                   {"checkpoint_manifest_sha256", sha256_file(ckpt.string() + ".json")},
                   {"sequences", seqs}};
  write_file(out / "manifest.json", manifest.dump(2) + "\n");
  echo_config(c, out);
  std::printf("masks for %zu sequences written to %s\n", seqs.size(), out.c_str());
  return 0;
}

int cmd_eval(const RunConfig& c) {
  const fs::path pred = require_path(c.paths.pred, "--pred");
  const fs::path gt = require_path(c.paths.gt, "--gt");
  const auto index = read_index(gt);
  std::vector<SequenceScore> scores;
  for (const auto& e : index.at("sequences")) {
    if (e.at("split").get<std::string>() != c.ablate.split) continue;
    const auto name = e.at("name").get<std::string>();
    const auto T = e.at("T").get<std::size_t>();
    std::vector<Mask> p, g;
    for (std::size_t t = 0; t < T; ++t) {
      p.push_back(image_to_mask(read_pgm_mask(pred / name / "masks" / detail::frame_name(t, "pgm"))));
      g.push_back(image_to_mask(read_pgm_mask(gt / name / "masks" / detail::frame_name(t, "pgm"))));
      if (p.back().size() != g.back().size()) {
        throw DataError((pred / name / "masks" / detail::frame_name(t, "pgm")).string() + ": size differs from ground truth");
      }
    }
    scores.push_back(score_sequence(p, g, name));
  }
  if (scores.empty()) throw DataError(gt.string() + ": no '" + c.ablate.split + "' sequences");

  json report = {{"split", c.ablate.split}, {"sequences", json::array()}};
  std::string csv = "sequence,mean_j,recall_j,decay_j\n";
  std::string table;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %8s %8s %8s\n", "sequence", "J_mean", "J_recall", "J_decay");
  table += line;
  double recall = 0, decay = 0;
  for (const auto& s : scores) {
    report["sequences"].push_back(to_json(s));
    std::snprintf(line, sizeof line, "%s,%.17g,%.17g,%.17g\n", s.name.c_str(), s.mean_j, s.recall_j, s.decay_j);
    csv += line;
    std::snprintf(line, sizeof line, "%-16s %8.4f %8.4f %8.4f\n", s.name.c_str(), s.mean_j, s.recall_j, s.decay_j);
    table += line;
    recall += s.recall_j;
    decay += s.decay_j;
  }
  const double n = static_cast<double>(scores.size());
  const double mean = mean_over_sequences(scores);
  report["mean_j"] = mean;
  report["recall_j"] = recall / n;
  report["decay_j"] = decay / n;
  std::snprintf(line, sizeof line, "%s,%.17g,%.17g,%.17g\n", "mean", mean, recall / n, decay / n);
  csv += line;
  std::snprintf(line, sizeof line, "%-16s %8.4f %8.4f %8.4f\n", "mean", mean, recall / n, decay / n);
  table += line;

  const fs::path out = c.paths.out;
  write_file(out / "scores.json", report.dump(2) + "\n");
  write_file(out / "scores.csv", csv);
  echo_config(c, out);
  std::fputs(table.c_str(), stdout);
  return 0;
}

int cmd_gradcheck(const RunConfig& c) {
  const auto result = run_grad_suite(GradSuiteOptions{}, c.seed);
  std::fputs(format_grad_table(result).c_str(), stdout);
  return result.passed ? 0 : 3;
}

int cmd_ablate(const RunConfig& c) {
  const auto corpus = load_corpus(c.paths.corpus);
  const fs::path out = c.paths.out;
  std::vector<ModelParams> models;
  if (!c.paths.checkpoint.empty()) {
    models.push_back(load_checkpoint(c.paths.checkpoint));
  } else {
    for (auto v : c.ablate.variants) {
      RunConfig vc = c;
      vc.model.variant = v;
      std::fprintf(stderr, "training %s\n", to_string(v).c_str());
      models.push_back(train_model(vc, corpus, out / to_string(v)));
    }
  }
  std::vector<AblationRow> rows;
  for (const auto& m : models) {
    auto r = ablation_rows(m, corpus, c.ablate.split, c.ablate.fusions, c.ablate.strategies, c.ablate.n_refs, c.seed);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  json report = json::array();
  std::string csv = "variant,fusion,strategy,n_refs,mean_j\n";
  char line[128];
  for (const auto& r : rows) {
    report.push_back({{"variant", to_string(r.variant)}, {"fusion", to_string(r.fusion)},
                      {"strategy", to_string(r.strategy)}, {"n_refs", r.n_refs}, {"mean_j", r.mean_j}});
    std::snprintf(line, sizeof line, "%s,%s,%s,%zu,%.17g\n", to_string(r.variant).c_str(), to_string(r.fusion).c_str(),
                  to_string(r.strategy).c_str(), r.n_refs, r.mean_j);
    csv += line;
  }
  const auto table = format_ablation_table(rows, c.ablate.n_refs);
  write_file(out / "ablation.json", report.dump(2) + "\n");
  write_file(out / "ablation.csv", csv);
  write_file(out / "ablation.txt", table);
  echo_config(c, out);
  std::fputs(table.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Co-attention video object segmentation at desk scale"};
  app.require_subcommand(1);
  Flags f;
  app.add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "Seed for corpus, initialization, training and random references");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--checkpoint", f.checkpoint, "Checkpoint base path (without .json/.bin)");
  app.add_option("--corpus", f.corpus, "Corpus root");
  app.add_option("--pred", f.pred, "Predicted mask root (eval)");
  app.add_option("--gt", f.gt, "Ground-truth corpus root (eval)");
  app.add_option("--split", f.split, "Corpus split to infer, evaluate or ablate on");
  app.add_option("--n-refs", f.n_refs, "Reference frames per query");
  app.add_option("--variant", f.variant, "vanilla|symmetric|channelwise");
  app.add_option("--strategy", f.strategy, "uniform|random|local");
  app.add_option("--fusion", f.fusion, "summary|prediction");
  app.add_option("--steps", f.steps, "Training steps (overrides epochs)");
  app.add_option("--lr", f.learning_rate, "Learning rate");

  const char* names[] = {"generate", "train", "infer", "eval", "gradcheck", "ablate"};
  const char* help[] = {"Write a synthetic corpus",
                        "Train and write a checkpoint and loss log",
                        "Segment a split with a checkpoint",
                        "Score predicted masks against ground truth",
                        "Run the finite-difference gradient suite",
                        "Sweep variant x fusion x strategy x N"};
  for (int i = 0; i < 6; ++i) app.add_subcommand(names[i], help[i])->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const RunConfig c = effective_config(f);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "generate") return cmd_generate(c, f.out.has_value());
    if (cmd == "train") return cmd_train(c);
    if (cmd == "infer") return cmd_infer(c);
    if (cmd == "eval") return cmd_eval(c);
    if (cmd == "gradcheck") return cmd_gradcheck(c);
    return cmd_ablate(c);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
