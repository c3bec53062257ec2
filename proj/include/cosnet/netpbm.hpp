#pragma once

// Binary netpbm: P6 (RGB) frames and P5 (gray) masks, 8-bit, maxval 255.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cosnet/serialize.hpp"

namespace cosnet {

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 3 for P6, 1 for P5
  std::vector<std::uint8_t> pixels;  // row-major, interleaved

  bool operator==(const Image&) const = default;
};

namespace detail {

class PnmHeaderReader {
 public:
  explicit PnmHeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > (1u << 24)) throw ParseError(std::string("netpbm ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("netpbm: expected ") + what, start);
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void raster_separator() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw ParseError("netpbm: missing whitespace before raster", pos_);
    }
    ++pos_;
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Image parse_pnm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError("netpbm: expected magic P5 or P6", 0);
  }
  Image img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  detail::PnmHeaderReader r(bytes.substr(2));
  img.width = r.number("width");
  img.height = r.number("height");
  const std::size_t maxval_at = r.pos() + 2;
  const std::size_t maxval = r.number("maxval");
  if (maxval != 255) {
    throw ParseError("netpbm: maxval must be 255, got " + std::to_string(maxval), maxval_at);
  }
  if (img.width == 0 || img.height == 0) throw ParseError("netpbm: zero image dimension", maxval_at);
  r.raster_separator();
  const std::size_t offset = r.pos() + 2;
  const std::size_t need = img.width * img.height * img.channels;
  if (bytes.size() - offset < need) {
    throw ParseError("netpbm: truncated raster, need " + std::to_string(need) + " bytes, have " +
                         std::to_string(bytes.size() - offset),
                     offset);
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                    bytes.begin() + static_cast<std::ptrdiff_t>(offset + need));
  return img;
}

inline std::string encode_pnm(const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw UsageError("encode_pnm: channels must be 1 or 3");
  if (img.pixels.size() != img.width * img.height * img.channels) throw DimensionError("encode_pnm: pixel count mismatch");
  std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.append(img.pixels.begin(), img.pixels.end());
  return out;
}

inline Image read_pnm(const std::filesystem::path& path) {
  try {
    return parse_pnm(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

inline Image read_ppm(const std::filesystem::path& path) {
  auto img = read_pnm(path);
  if (img.channels != 3) throw DataError(path.string() + ": expected a P6 frame");
  return img;
}

// Masks must be bilevel {0, 255}.
inline Image read_pgm_mask(const std::filesystem::path& path) {
  auto img = read_pnm(path);
  if (img.channels != 1) throw DataError(path.string() + ": expected a P5 mask");
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    if (img.pixels[i] != 0 && img.pixels[i] != 255) {
      throw DataError(path.string() + ": mask value " + std::to_string(img.pixels[i]) + " at pixel " +
                      std::to_string(i) + " is not 0/255");
    }
  }
  return img;
}

inline void write_pnm(const Image& img, const std::filesystem::path& path) { write_file(path, encode_pnm(img)); }

// H x W x 3 tensor in [0, 1].
inline Tensor image_to_tensor(const Image& img) {
  std::vector<double> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.pixels[i] / 255.0;
  return Tensor({img.height, img.width, img.channels}, std::move(v));
}

// Binary mask as 0/1 bytes.
using Mask = std::vector<std::uint8_t>;

inline Mask image_to_mask(const Image& img) {
  Mask m(img.pixels.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = img.pixels[i] ? 1 : 0;
  return m;
}

inline Image mask_to_image(const Mask& m, std::size_t width, std::size_t height) {
  if (m.size() != width * height) throw DimensionError("mask_to_image: size mismatch");
  Image img{width, height, 1, std::vector<std::uint8_t>(m.size())};
  for (std::size_t i = 0; i < m.size(); ++i) img.pixels[i] = m[i] ? 255 : 0;
  return img;
}

}  // namespace cosnet
