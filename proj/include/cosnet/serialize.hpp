#pragma once

// Tensor files: a JSON manifest {"shape", "dtype": "f64", "byte_order":
// "little"} next to a flat payload of raw little-endian doubles.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cosnet/tensor.hpp"

namespace cosnet {

namespace detail {

inline std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

}  // namespace detail

inline void append_f64_le(std::string& out, std::span<const double> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t bits = detail::to_little(std::bit_cast<std::uint64_t>(values[i]));
    std::memcpy(&out[start + i * 8], &bits, 8);
  }
}

inline std::vector<double> read_f64_le(std::string_view bytes) {
  if (bytes.size() % 8 != 0) throw ParseError("f64 payload length not a multiple of 8", bytes.size());
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, bytes.data() + i * 8, 8);
    values[i] = std::bit_cast<double>(detail::to_little(bits));
  }
  return values;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

inline nlohmann::json tensor_manifest(const Tensor& t) {
  return {{"shape", t.shape()}, {"dtype", "f64"}, {"byte_order", "little"}};
}

inline Shape parse_manifest_shape(const nlohmann::json& m, const std::string& where) {
  if (!m.is_object() || !m.contains("shape") || m.value("dtype", "") != "f64" ||
      m.value("byte_order", "") != "little") {
    throw DataError(where + ": manifest must carry shape, dtype \"f64\" and byte_order \"little\"");
  }
  auto shape = m.at("shape").get<Shape>();
  if (shape.empty()) throw DataError(where + ": empty shape");
  return shape;
}

// Writes <base>.json and <base>.bin.
inline void save_tensor(const Tensor& t, const std::filesystem::path& base) {
  std::string payload;
  append_f64_le(payload, t.data());
  write_file(std::filesystem::path(base.string() + ".json"), tensor_manifest(t).dump(2) + "\n");
  write_file(std::filesystem::path(base.string() + ".bin"), payload);
}

inline Tensor load_tensor(const std::filesystem::path& base) {
  const auto manifest_path = base.string() + ".json";
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(manifest_path + ": " + e.what(), e.byte);
  }
  auto shape = parse_manifest_shape(m, manifest_path);
  auto values = read_f64_le(read_file(base.string() + ".bin"));
  if (values.size() != numel(shape)) {
    throw DataError(base.string() + ".bin: payload holds " + std::to_string(values.size()) + " values, shape " +
                    shape_str(shape) + " needs " + std::to_string(numel(shape)));
  }
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace cosnet
