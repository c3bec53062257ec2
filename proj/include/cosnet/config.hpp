#pragma once

// Run configuration: one JSON document covering the corpus, model, training,
// inference and ablation settings. Files are merged over the defaults and
// every key must already exist in the defaults.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "cosnet/infer.hpp"
#include "cosnet/train.hpp"

namespace cosnet {

struct AblationConfig {
  std::vector<Variant> variants{Variant::Vanilla, Variant::Symmetric, Variant::ChannelWise};
  std::vector<Fusion> fusions{Fusion::Summary, Fusion::Prediction};
  std::vector<Strategy> strategies{Strategy::GlobalUniform, Strategy::GlobalRandom, Strategy::LocalConsecutive};
  std::vector<std::size_t> n_refs{0, 1, 2, 5, 7};
  std::string split = "test";
};

struct RunPaths {
  std::string corpus = "corpus";
  std::string out = "run";
  std::string checkpoint;  // checkpoint base path, without .json/.bin
  std::string pred;
  std::string gt;
};

struct RunConfig {
  std::uint64_t seed = 7;
  RunPaths paths;
  CorpusOptions scene;
  ModelConfig model;
  TrainConfig train;
  InferenceConfig inference;
  AblationConfig ablate;
};

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  json variants = json::array(), fusions = json::array(), strategies = json::array();
  for (auto v : c.ablate.variants) variants.push_back(to_string(v));
  for (auto f : c.ablate.fusions) fusions.push_back(to_string(f));
  for (auto s : c.ablate.strategies) strategies.push_back(to_string(s));
  return {
      {"seed", c.seed},
      {"paths",
       {{"corpus", c.paths.corpus}, {"out", c.paths.out}, {"checkpoint", c.paths.checkpoint},
        {"pred", c.paths.pred}, {"gt", c.paths.gt}}},
      {"scene",
       {{"height", c.scene.height}, {"width", c.scene.width}, {"T", c.scene.T}, {"n_train", c.scene.n_train},
        {"n_test", c.scene.n_test}, {"n_static", c.scene.n_static}, {"n_distractors", c.scene.n_distractors},
        {"color_similarity", c.scene.color_similarity}, {"noise_sigma", c.scene.noise_sigma}}},
      {"model",
       {{"embed1", c.model.embed1}, {"embed2", c.model.embed2}, {"channels", c.model.channels},
        {"head_hidden", c.model.head_hidden}, {"variant", to_string(c.model.variant)},
        {"channel_mode", to_string(c.model.channel_mode)}}},
      {"train",
       {{"learning_rate", c.train.learning_rate}, {"batch_size", c.train.batch_size},
        {"ortho_lambda", c.train.ortho_lambda}, {"epochs", c.train.epochs}, {"steps", c.train.steps},
        {"alternation_ratio", {c.train.static_ratio, c.train.video_ratio}}}},
      {"inference",
       {{"n_refs", c.inference.n_refs}, {"strategy", to_string(c.inference.strategy)},
        {"fusion", to_string(c.inference.fusion)}, {"threshold", c.inference.threshold}}},
      {"ablate",
       {{"variants", variants}, {"fusions", fusions}, {"strategies", strategies}, {"n_refs", c.ablate.n_refs},
        {"split", c.ablate.split}}},
  };
}

namespace detail {

// Overlays `patch` on `base`, rejecting keys that `base` lacks.
inline void merge_known(nlohmann::json& base, const nlohmann::json& patch, const std::string& where) {
  if (!patch.is_object()) throw UsageError("config: " + (where.empty() ? "top level" : where) + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw UsageError("config: unknown key '" + key + "'");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      merge_known(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

template <class T>
T get(const nlohmann::json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw UsageError(std::string("config: bad value for '") + section + "." + key + "'");
  }
}

}  // namespace detail

inline RunConfig from_json(const nlohmann::json& patch) {
  nlohmann::json j = to_json(RunConfig{});
  detail::merge_known(j, patch, "");
  using detail::get;
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception&) {
    throw UsageError("config: bad value for 'seed'");
  }
  c.paths = {get<std::string>(j, "paths", "corpus"), get<std::string>(j, "paths", "out"),
             get<std::string>(j, "paths", "checkpoint"), get<std::string>(j, "paths", "pred"),
             get<std::string>(j, "paths", "gt")};

  c.scene.height = get<std::size_t>(j, "scene", "height");
  c.scene.width = get<std::size_t>(j, "scene", "width");
  c.scene.T = get<std::size_t>(j, "scene", "T");
  c.scene.n_train = get<std::size_t>(j, "scene", "n_train");
  c.scene.n_test = get<std::size_t>(j, "scene", "n_test");
  c.scene.n_static = get<std::size_t>(j, "scene", "n_static");
  c.scene.n_distractors = get<std::size_t>(j, "scene", "n_distractors");
  c.scene.color_similarity = get<double>(j, "scene", "color_similarity");
  c.scene.noise_sigma = get<double>(j, "scene", "noise_sigma");
  c.scene.seed = c.seed;

  c.model.embed1 = get<std::size_t>(j, "model", "embed1");
  c.model.embed2 = get<std::size_t>(j, "model", "embed2");
  c.model.channels = get<std::size_t>(j, "model", "channels");
  c.model.head_hidden = get<std::size_t>(j, "model", "head_hidden");
  c.model.variant = parse_variant(get<std::string>(j, "model", "variant"));
  c.model.channel_mode = parse_channel_mode(get<std::string>(j, "model", "channel_mode"));

  c.train.learning_rate = get<double>(j, "train", "learning_rate");
  c.train.batch_size = get<std::size_t>(j, "train", "batch_size");
  c.train.ortho_lambda = get<double>(j, "train", "ortho_lambda");
  c.train.epochs = get<std::size_t>(j, "train", "epochs");
  c.train.steps = get<std::size_t>(j, "train", "steps");
  const auto ratio = get<std::vector<std::size_t>>(j, "train", "alternation_ratio");
  if (ratio.size() != 2) throw UsageError("config: 'train.alternation_ratio' must be [static, video]");
  c.train.static_ratio = ratio[0];
  c.train.video_ratio = ratio[1];
  c.train.seed = c.seed;
  c.model.ortho_lambda = c.train.ortho_lambda;

  c.inference.n_refs = get<std::size_t>(j, "inference", "n_refs");
  c.inference.strategy = parse_strategy(get<std::string>(j, "inference", "strategy"));
  c.inference.fusion = parse_fusion(get<std::string>(j, "inference", "fusion"));
  c.inference.threshold = get<double>(j, "inference", "threshold");
  c.inference.seed = c.seed;

  c.ablate.variants.clear();
  for (const auto& s : get<std::vector<std::string>>(j, "ablate", "variants")) c.ablate.variants.push_back(parse_variant(s));
  c.ablate.fusions.clear();
  for (const auto& s : get<std::vector<std::string>>(j, "ablate", "fusions")) c.ablate.fusions.push_back(parse_fusion(s));
  c.ablate.strategies.clear();
  for (const auto& s : get<std::vector<std::string>>(j, "ablate", "strategies"))
    c.ablate.strategies.push_back(parse_strategy(s));
  c.ablate.n_refs = get<std::vector<std::size_t>>(j, "ablate", "n_refs");
  c.ablate.split = get<std::string>(j, "ablate", "split");

  if (c.train.learning_rate <= 0.0) throw UsageError("config: 'train.learning_rate' must be > 0");
  c.train.validate();
  if (!(c.inference.threshold > 0.0 && c.inference.threshold < 1.0)) {
    throw UsageError("config: 'inference.threshold' must lie in (0, 1)");
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  return from_json(j);
}

}  // namespace cosnet
