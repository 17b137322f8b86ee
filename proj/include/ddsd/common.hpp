#pragma once

// Shared error types and small utilities used across the library.
//
// Error policy: anything caused by bad user input (malformed files, bad
// config values, shape mismatches between data and model) derives from
// ddsd::Error and maps to CLI exit code 1. Broken internal invariants
// throw InternalError and map to exit code 2.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ddsd {

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad values in user-supplied data or arguments.
class ValidationError : public Error {
public:
  using Error::Error;
};

// Malformed or inconsistent dataset files.
class DataError : public Error {
public:
  using Error::Error;
};

// Unreadable binary container (bad magic, truncation, version mismatch).
class FormatError : public Error {
public:
  using Error::Error;
};

// Tensor/sequence dimensions that do not line up.
class ShapeError : public Error {
public:
  using Error::Error;
};

// Rejected experiment configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Training run aborted (e.g. non-finite loss or gradients).
class TrainingError : public Error {
public:
  using Error::Error;
};

// Filesystem trouble: missing paths, failed writes.
class IoError : public Error {
public:
  using Error::Error;
};

// A bug in this library, not in the caller's input.
class InternalError : public std::logic_error {
public:
  explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

// Internal invariant check that survives NDEBUG builds.
#define DDSD_CHECK(cond, msg)                                                  \
  do {                                                                         \
    if (!(cond)) {                                                             \
      throw ::ddsd::InternalError(std::string("internal invariant failed: ") + \
                                  (msg) + " [" #cond "]");                     \
    }                                                                          \
  } while (0)

// ---------------------------------------------------------------------------
// Small file helpers.
// ---------------------------------------------------------------------------

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path.string());
  out << content;
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace ddsd
