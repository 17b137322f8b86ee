#pragma once

// Acoustic feature container.
//
// On-disk layout (little-endian regardless of host):
//   bytes 0..3   magic "AFEA"
//   u32          format version (currently 1)
//   u32          T  (number of frames, >= 1)
//   u32          F  (feature dimension, >= 1)
//   T*F f32      frame-major (row-major) feature values
//
// Values must be finite; NaN/inf in a feature file is treated as corruption.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "ddsd/common.hpp"
#include "ddsd/matrix.hpp"

namespace ddsd {

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32_le(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32_le(out, bits);
}

inline float get_f32_le(const unsigned char* p) {
  const std::uint32_t bits = get_u32_le(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

inline constexpr char kFeatureMagic[4] = {'A', 'F', 'E', 'A'};
inline constexpr std::uint32_t kFeatureVersion = 1;

// Serialize a T x F frame matrix. Rejects empty shapes and non-finite values.
inline std::string serialize_features(const MatF& frames) {
  if (frames.rows() < 1 || frames.cols() < 1)
    throw ShapeError("feature matrix must be at least 1x1, got " +
                     std::to_string(frames.rows()) + "x" + std::to_string(frames.cols()));
  if (!frames.allFinite())
    throw ValidationError("feature matrix contains non-finite values");
  std::string out;
  out.reserve(12 + static_cast<std::size_t>(frames.size()) * 4 + 4);
  out.append(kFeatureMagic, 4);
  detail::put_u32_le(out, kFeatureVersion);
  detail::put_u32_le(out, static_cast<std::uint32_t>(frames.rows()));
  detail::put_u32_le(out, static_cast<std::uint32_t>(frames.cols()));
  for (Eigen::Index t = 0; t < frames.rows(); ++t)
    for (Eigen::Index f = 0; f < frames.cols(); ++f)
      detail::put_f32_le(out, frames(t, f));
  return out;
}

inline MatF parse_features(const std::string& bytes, const std::string& origin = "<memory>") {
  const auto fail = [&](const std::string& why) -> void {
    throw FormatError("bad feature file " + origin + ": " + why);
  };
  if (bytes.size() < 16) fail("shorter than the fixed header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (std::memcmp(p, kFeatureMagic, 4) != 0) fail("wrong magic");
  const std::uint32_t version = detail::get_u32_le(p + 4);
  if (version != kFeatureVersion)
    fail("unsupported version " + std::to_string(version));
  const std::uint32_t T = detail::get_u32_le(p + 8);
  const std::uint32_t F = detail::get_u32_le(p + 12);
  if (T < 1 || F < 1) fail("empty shape " + std::to_string(T) + "x" + std::to_string(F));
  const std::size_t expect = 16 + static_cast<std::size_t>(T) * F * 4;
  if (bytes.size() != expect)
    fail("size mismatch: header says " + std::to_string(expect) + " bytes, file has " +
         std::to_string(bytes.size()));
  MatF frames(T, F);
  const unsigned char* q = p + 16;
  for (std::uint32_t t = 0; t < T; ++t)
    for (std::uint32_t f = 0; f < F; ++f, q += 4) frames(t, f) = detail::get_f32_le(q);
  if (!frames.allFinite()) fail("non-finite feature values");
  return frames;
}

inline void write_features(const std::filesystem::path& path, const MatF& frames) {
  write_text_file(path, serialize_features(frames));
}

inline MatF read_features(const std::filesystem::path& path) {
  return parse_features(read_text_file(path), path.string());
}

}  // namespace ddsd
