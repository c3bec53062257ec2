#pragma once

// Synthetic video corpus: one persistent primary object per video plus
// short-lived look-alike distractors, and single-object static images.
//
// On disk:
//   <root>/index.json
//   <root>/<sequence>/frames/NNNNN.ppm   (P6)
//   <root>/<sequence>/masks/NNNNN.pgm    (P5, 0/255)
//
// index.json:
//   {"format": "cosnet-corpus", "version": 1,
//    "sequences": [{"name", "split": "train"|"test"|"static", "T", "height",
//                   "width", "scene"?}, ...]}

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "cosnet/netpbm.hpp"
#include "cosnet/random.hpp"

namespace cosnet {

enum class ShapeKind { Circle, Square, Triangle, Diamond };
inline constexpr std::size_t kShapeKinds = 4;

inline std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Diamond: return "diamond";
  }
  return "?";
}

inline ShapeKind parse_shape_kind(const std::string& s) {
  for (std::size_t i = 0; i < kShapeKinds; ++i) {
    if (to_string(static_cast<ShapeKind>(i)) == s) return static_cast<ShapeKind>(i);
  }
  throw UsageError("unknown shape kind '" + s + "'");
}

using Rgb = std::array<double, 3>;

struct ObjectSpec {
  ShapeKind kind = ShapeKind::Circle;
  Rgb color{1.0, 0.0, 0.0};
  double size = 12.0;  // half-extent in pixels
  double x0 = 48.0, y0 = 48.0;  // center at frame 0
  double vx = 0.0, vy = 0.0;    // pixels per frame, bouncing off the borders
};

struct DistractorSpec {
  ObjectSpec object;
  double color_similarity = 0.0;  // 0 keeps object.color, 1 copies the primary's
  double lifetime_begin = 0.0;    // fractions of T; present for frames
  double lifetime_end = 0.0;      // floor(begin*T) <= t < floor(end*T)
};

struct SceneSpec {
  std::size_t height = 96;
  std::size_t width = 96;
  std::size_t T = 24;
  ObjectSpec primary;
  double presence_rate = 1.0;  // primary shown in frames t < floor(rate*T)
  std::vector<DistractorSpec> distractors;
  Rgb background_top{0.5, 0.5, 0.5};
  Rgb background_bottom{0.4, 0.4, 0.4};
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::size_t frame_count(double fraction, std::size_t T) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(T) + 1e-9));
}

// Reflect a linear path into [lo, hi].
inline double bounce(double p, double lo, double hi) {
  if (hi <= lo) return lo;
  const double span = hi - lo;
  double u = std::fmod(p - lo, 2.0 * span);
  if (u < 0) u += 2.0 * span;
  return lo + (u <= span ? u : 2.0 * span - u);
}

inline bool inside(ShapeKind kind, double dx, double dy, double s) {
  switch (kind) {
    case ShapeKind::Circle: return dx * dx + dy * dy <= s * s;
    case ShapeKind::Square: return std::fabs(dx) <= 0.85 * s && std::fabs(dy) <= 0.85 * s;
    case ShapeKind::Diamond: return std::fabs(dx) + std::fabs(dy) <= 1.2 * s;
    case ShapeKind::Triangle: {
      // Apex up, base at dy = +s; half-width grows linearly from the apex.
      if (dy < -s || dy > s) return false;
      return std::fabs(dx) <= (dy + s) * 0.6;
    }
  }
  return false;
}

}  // namespace detail

inline std::pair<double, double> object_center(const ObjectSpec& o, std::size_t t, std::size_t height,
                                               std::size_t width) {
  const double x = detail::bounce(o.x0 + o.vx * static_cast<double>(t), o.size, static_cast<double>(width) - o.size);
  const double y = detail::bounce(o.y0 + o.vy * static_cast<double>(t), o.size, static_cast<double>(height) - o.size);
  return {x, y};
}

// Row-major 0/1 coverage of an object at frame t, sampled at pixel centers.
inline Mask rasterize(const ObjectSpec& o, std::size_t t, std::size_t height, std::size_t width) {
  Mask m(height * width, 0);
  const auto [cx, cy] = object_center(o, t, height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - cy;
      m[y * width + x] = detail::inside(o.kind, dx, dy, o.size) ? 1 : 0;
    }
  }
  return m;
}

inline std::size_t primary_presence_count(const SceneSpec& s) { return detail::frame_count(s.presence_rate, s.T); }

inline std::size_t distractor_frame_count(const DistractorSpec& d, std::size_t T) {
  const auto b = detail::frame_count(d.lifetime_begin, T), e = detail::frame_count(d.lifetime_end, T);
  return e > b ? e - b : 0;
}

inline bool distractor_present(const DistractorSpec& d, std::size_t t, std::size_t T) {
  return t >= detail::frame_count(d.lifetime_begin, T) && t < detail::frame_count(d.lifetime_end, T);
}

// The primary must be the most frequent object of the video.
inline void validate(const SceneSpec& s) {
  if (s.T < 2) throw UsageError("scene: T must be at least 2");
  if (s.height == 0 || s.width == 0) throw UsageError("scene: empty frame size");
  if (s.presence_rate < 0.0 || s.presence_rate > 1.0) throw UsageError("scene: presence_rate outside [0, 1]");
  if (s.noise_sigma < 0.0) throw UsageError("scene: negative noise_sigma");
  const std::size_t primary = primary_presence_count(s);
  for (std::size_t i = 0; i < s.distractors.size(); ++i) {
    const auto& d = s.distractors[i];
    if (d.color_similarity < 0.0 || d.color_similarity > 1.0) {
      throw UsageError("scene: distractor " + std::to_string(i) + " color_similarity outside [0, 1]");
    }
    if (d.lifetime_begin < 0.0 || d.lifetime_end > 1.0 || d.lifetime_begin > d.lifetime_end) {
      throw UsageError("scene: distractor " + std::to_string(i) + " lifetime must lie inside [0, 1)");
    }
    if (d.lifetime_end - d.lifetime_begin > s.presence_rate ||
        distractor_frame_count(d, s.T) >= primary) {
      throw UsageError("scene: distractor " + std::to_string(i) +
                       " is present at least as often as the primary object");
    }
  }
}

struct RenderedVideo {
  std::vector<Image> frames;
  std::vector<Image> masks;
};

inline Rgb blend(const Rgb& a, const Rgb& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

inline std::uint8_t quantize(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

// Distractors are painted first so the primary is never occluded and the
// mask is exactly its rasterized shape.
inline RenderedVideo render_video(const SceneSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  const std::size_t H = spec.height, W = spec.width;
  const std::size_t present = primary_presence_count(spec);
  RenderedVideo out;
  for (std::size_t t = 0; t < spec.T; ++t) {
    std::vector<Rgb> canvas(H * W);
    for (std::size_t y = 0; y < H; ++y) {
      const Rgb row = blend(spec.background_top, spec.background_bottom, (static_cast<double>(y) + 0.5) / H);
      for (std::size_t x = 0; x < W; ++x) canvas[y * W + x] = row;
    }
    auto paint = [&](const ObjectSpec& o, const Rgb& color) {
      const auto cover = rasterize(o, t, H, W);
      for (std::size_t i = 0; i < cover.size(); ++i)
        if (cover[i]) canvas[i] = color;
      return cover;
    };
    for (const auto& d : spec.distractors) {
      if (distractor_present(d, t, spec.T)) paint(d.object, blend(d.object.color, spec.primary.color, d.color_similarity));
    }
    Mask mask(H * W, 0);
    if (t < present) mask = paint(spec.primary, spec.primary.color);

    Image frame{W, H, 3, std::vector<std::uint8_t>(H * W * 3)};
    for (std::size_t i = 0; i < H * W; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double n = spec.noise_sigma > 0.0 ? normal(rng, 0.0, spec.noise_sigma) : 0.0;
        frame.pixels[i * 3 + c] = quantize(canvas[i][c] + n);
      }
    }
    out.frames.push_back(std::move(frame));
    out.masks.push_back(mask_to_image(mask, W, H));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scene JSON (stored in index.json for reproducibility)

inline nlohmann::json to_json(const ObjectSpec& o) {
  return {{"kind", to_string(o.kind)}, {"color", o.color}, {"size", o.size}, {"x0", o.x0},
          {"y0", o.y0},              {"vx", o.vx},       {"vy", o.vy}};
}

inline nlohmann::json to_json(const SceneSpec& s) {
  nlohmann::json d = nlohmann::json::array();
  for (const auto& x : s.distractors) {
    d.push_back({{"object", to_json(x.object)},
                 {"color_similarity", x.color_similarity},
                 {"lifetime", {x.lifetime_begin, x.lifetime_end}}});
  }
  return {{"height", s.height},
          {"width", s.width},
          {"T", s.T},
          {"primary", to_json(s.primary)},
          {"presence_rate", s.presence_rate},
          {"distractors", d},
          {"background", {s.background_top, s.background_bottom}},
          {"noise_sigma", s.noise_sigma},
          {"seed", s.seed}};
}

// ---------------------------------------------------------------------------
// Random scenes and corpora

struct CorpusOptions {
  std::size_t height = 96;
  std::size_t width = 96;
  std::size_t T = 24;
  std::size_t n_train = 5;
  std::size_t n_test = 3;
  std::size_t n_static = 40;
  std::size_t n_distractors = 3;
  double color_similarity = 0.3;
  double noise_sigma = 0.03;
  std::uint64_t seed = 7;
};

inline Rgb random_color(Rng& rng) {
  // Saturated hue so objects stand out from the muted background.
  const double h = uniform01(rng) * 6.0;
  const double f = h - std::floor(h);
  const double v = uniform(rng, 0.75, 1.0), lo = uniform(rng, 0.0, 0.2);
  const double up = lo + (v - lo) * f, down = v - (v - lo) * f;
  switch (static_cast<int>(h) % 6) {
    case 0: return {v, up, lo};
    case 1: return {down, v, lo};
    case 2: return {lo, v, up};
    case 3: return {lo, down, v};
    case 4: return {up, lo, v};
    default: return {v, lo, down};
  }
}

inline Rgb random_background(Rng& rng) {
  const double base = uniform(rng, 0.25, 0.55);
  return {base + uniform(rng, -0.08, 0.08), base + uniform(rng, -0.08, 0.08), base + uniform(rng, -0.08, 0.08)};
}

inline ObjectSpec random_object(Rng& rng, std::size_t height, std::size_t width, double min_size, double max_size,
                                double max_speed) {
  ObjectSpec o;
  o.kind = static_cast<ShapeKind>(uniform_index(rng, kShapeKinds));
  o.color = random_color(rng);
  o.size = uniform(rng, min_size, max_size);
  o.x0 = uniform(rng, o.size, static_cast<double>(width) - o.size);
  o.y0 = uniform(rng, o.size, static_cast<double>(height) - o.size);
  const double angle = uniform(rng, 0.0, 2.0 * M_PI), speed = uniform(rng, 0.3, 1.0) * max_speed;
  o.vx = speed * std::cos(angle);
  o.vy = speed * std::sin(angle);
  return o;
}

// Distractor lifetimes tile [0, 1) in equal consecutive slots, so most frames
// show one distractor while each appears in only a fraction of the video.
inline SceneSpec random_scene(const CorpusOptions& opt, Rng& rng) {
  SceneSpec s;
  s.height = opt.height;
  s.width = opt.width;
  s.T = opt.T;
  s.noise_sigma = opt.noise_sigma;
  const double scale = static_cast<double>(std::min(opt.height, opt.width)) / 96.0;
  s.primary = random_object(rng, opt.height, opt.width, 10.0 * scale, 15.0 * scale, 2.5 * scale);
  s.background_top = random_background(rng);
  s.background_bottom = random_background(rng);
  const std::size_t k = opt.n_distractors;
  for (std::size_t i = 0; i < k; ++i) {
    DistractorSpec d;
    d.object = random_object(rng, opt.height, opt.width, 10.0 * scale, 15.0 * scale, 2.5 * scale);
    d.color_similarity = opt.color_similarity;
    d.lifetime_begin = static_cast<double>(i) / static_cast<double>(k);
    d.lifetime_end = static_cast<double>(i + 1) / static_cast<double>(k);
    s.distractors.push_back(d);
  }
  if (k == 1) s.distractors[0].lifetime_end = 0.5;
  s.seed = rng();
  return s;
}

namespace detail {

inline std::string frame_name(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu.%s", i, ext);
  return buf;
}

inline void write_sequence(const std::filesystem::path& dir, const std::vector<Image>& frames,
                           const std::vector<Image>& masks) {
  std::filesystem::create_directories(dir / "frames");
  std::filesystem::create_directories(dir / "masks");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    write_pnm(frames[i], dir / "frames" / frame_name(i, "ppm"));
    write_pnm(masks[i], dir / "masks" / frame_name(i, "pgm"));
  }
}

}  // namespace detail

inline void write_index(const std::filesystem::path& root, const nlohmann::json& sequences) {
  nlohmann::json index = {{"format", "cosnet-corpus"}, {"version", 1}, {"sequences", sequences}};
  write_file(root / "index.json", index.dump(2) + "\n");
}

inline nlohmann::json generate_video(const SceneSpec& spec, const std::filesystem::path& root, const std::string& name,
                                     const std::string& split) {
  const auto video = render_video(spec);
  detail::write_sequence(root / name, video.frames, video.masks);
  return {{"name", name}, {"split", split}, {"T", spec.T}, {"height", spec.height}, {"width", spec.width},
          {"scene", to_json(spec)}};
}

struct StaticSet {
  std::vector<Image> images;
  std::vector<Image> masks;
};

inline constexpr double kStaticMinForeground = 0.02;
inline constexpr double kStaticMaxForeground = 0.4;

// n single-object images; shapes are redrawn until the foreground fraction
// lies in [0.02, 0.4].
inline StaticSet render_static_set(std::size_t n, std::uint64_t seed, std::size_t height = 96,
                                   std::size_t width = 96, double noise_sigma = 0.03) {
  Rng rng(seed);
  StaticSet out;
  const double scale = static_cast<double>(std::min(height, width)) / 96.0;
  for (std::size_t i = 0; i < n; ++i) {
    SceneSpec s;
    s.height = height;
    s.width = width;
    s.T = 2;
    s.noise_sigma = noise_sigma;
    s.background_top = random_background(rng);
    s.background_bottom = random_background(rng);
    for (;;) {
      s.primary = random_object(rng, height, width, 7.0 * scale, 20.0 * scale, 0.0);
      const auto cover = rasterize(s.primary, 0, height, width);
      const double frac = static_cast<double>(std::count(cover.begin(), cover.end(), 1)) / cover.size();
      if (frac >= kStaticMinForeground && frac <= kStaticMaxForeground) break;
    }
    s.seed = rng();
    auto v = render_video(s);
    out.images.push_back(std::move(v.frames[0]));
    out.masks.push_back(std::move(v.masks[0]));
  }
  return out;
}

inline nlohmann::json generate_static_set(std::size_t n, std::uint64_t seed, const std::filesystem::path& root,
                                          const std::string& name = "static", std::size_t height = 96,
                                          std::size_t width = 96, double noise_sigma = 0.03) {
  const auto set = render_static_set(n, seed, height, width, noise_sigma);
  detail::write_sequence(root / name, set.images, set.masks);
  return {{"name", name}, {"split", "static"}, {"T", n}, {"height", height}, {"width", width}};
}

// Train/test videos named train_NNN / test_NNN plus one static set.
inline void generate_corpus(const CorpusOptions& opt, const std::filesystem::path& root) {
  Rng rng(opt.seed);
  nlohmann::json sequences = nlohmann::json::array();
  char name[32];
  for (std::size_t i = 0; i < opt.n_train + opt.n_test; ++i) {
    const bool train = i < opt.n_train;
    std::snprintf(name, sizeof name, "%s_%03zu", train ? "train" : "test", train ? i : i - opt.n_train);
    sequences.push_back(generate_video(random_scene(opt, rng), root, name, train ? "train" : "test"));
  }
  sequences.push_back(generate_static_set(opt.n_static, rng(), root, "static", opt.height, opt.width, opt.noise_sigma));
  write_index(root, sequences);
}

// ---------------------------------------------------------------------------
// Loading

struct Sequence {
  std::string name;
  std::string split;
  std::vector<Tensor> frames;  // H x W x 3 in [0, 1]
  std::vector<Mask> masks;
  std::size_t height = 0, width = 0;
};

struct Corpus {
  std::vector<Sequence> sequences;

  std::vector<const Sequence*> split(const std::string& name) const {
    std::vector<const Sequence*> out;
    for (const auto& s : sequences)
      if (s.split == name) out.push_back(&s);
    return out;
  }
};

inline Sequence load_sequence(const std::filesystem::path& dir, const std::string& name, const std::string& split,
                              std::size_t T) {
  Sequence seq{name, split, {}, {}, 0, 0};
  for (std::size_t i = 0; i < T; ++i) {
    const auto frame = read_ppm(dir / "frames" / detail::frame_name(i, "ppm"));
    const auto mask = read_pgm_mask(dir / "masks" / detail::frame_name(i, "pgm"));
    if (mask.width != frame.width || mask.height != frame.height) {
      throw DataError((dir / "masks" / detail::frame_name(i, "pgm")).string() + ": size differs from its frame");
    }
    if (i == 0) {
      seq.height = frame.height;
      seq.width = frame.width;
    } else if (frame.height != seq.height || frame.width != seq.width) {
      throw DataError((dir / "frames" / detail::frame_name(i, "ppm")).string() + ": frame size changes mid-sequence");
    }
    seq.frames.push_back(image_to_tensor(frame));
    seq.masks.push_back(image_to_mask(mask));
  }
  return seq;
}

inline nlohmann::json read_index(const std::filesystem::path& root) {
  const auto path = root / "index.json";
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  if (index.value("format", "") != "cosnet-corpus" || !index.contains("sequences")) {
    throw DataError(path.string() + ": not a corpus index");
  }
  return index;
}

inline Corpus load_corpus(const std::filesystem::path& root) {
  const auto index = read_index(root);
  Corpus corpus;
  for (const auto& e : index.at("sequences")) {
    const auto name = e.at("name").get<std::string>();
    corpus.sequences.push_back(load_sequence(root / name, name, e.at("split").get<std::string>(),
                                             e.at("T").get<std::size_t>()));
  }
  return corpus;
}

}  // namespace cosnet
