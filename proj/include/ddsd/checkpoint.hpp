#pragma once

// Binary checkpoint format.
//
// Layout:
//   bytes 0..3   magic "DDSD"
//   bytes 4..7   format version, u32 little-endian
//   bytes 8..11  header length in bytes, u32 little-endian
//   header       UTF-8 JSON document (see below)
//   payload      all tensor values as f32 little-endian, concatenated in
//                directory order; each tensor is written row by row
//
// The JSON header carries everything needed to rebuild the model object
// before filling its tensors: experiment name, model kind + configuration,
// the fitted feature scaler, and a tensor directory of
// {name, rows, cols, offset} entries (offset counts f32 elements from the
// start of the payload). Loading reconstructs the model from the stored
// config — which also restores the trainable/frozen flags deterministically —
// then fills every tensor by name, and fails loudly on any missing, extra, or
// shape-mismatched tensor.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ddsd/clf.hpp"
#include "ddsd/common.hpp"
#include "ddsd/config.hpp"
#include "ddsd/decoder_signals.hpp"
#include "ddsd/fusion.hpp"

namespace ddsd {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'D', 'D', 'S', 'D'};

namespace ckpt_detail {

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

inline void append_f32_le(std::string& out, float v) {
  static_assert(sizeof(float) == 4, "f32 payload requires 4-byte float");
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32_le(out, bits);
}

inline float read_f32_le(const unsigned char* p) {
  const std::uint32_t bits = get_u32_le(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline std::vector<unsigned char> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading checkpoint " + path.string());
  return data;
}

inline json scaler_to_json(const MinMaxScaler& s) {
  json j{{"fitted", s.fitted()}};
  if (s.fitted()) {
    j["mins"] = s.mins();
    j["maxs"] = s.maxs();
  }
  return j;
}

inline MinMaxScaler scaler_from_json(const json& j) {
  if (!j.is_object() || !j.contains("fitted"))
    throw FormatError("checkpoint scaler section is malformed");
  if (!j.at("fitted").get<bool>()) return MinMaxScaler{};
  const auto mins = j.at("mins").get<std::array<double, 4>>();
  const auto maxs = j.at("maxs").get<std::array<double, 4>>();
  return MinMaxScaler(mins, maxs);
}

}  // namespace ckpt_detail

// ---------------------------------------------------------------------------
// Saving
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::filesystem::path& path, const std::string& name,
                            const ModelConfig& model_cfg, const MinMaxScaler& scaler,
                            const ParamRefs<float>& params) {
  json dir = json::array();
  std::string payload;
  std::int64_t offset = 0;
  for (const Parameter<float>* p : params) {
    dir.push_back(json{{"name", p->name},
                       {"rows", p->value.rows()},
                       {"cols", p->value.cols()},
                       {"offset", offset}});
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c)
        ckpt_detail::append_f32_le(payload, p->value(r, c));
    offset += p->value.rows() * p->value.cols();
  }

  json header{{"format_version", kCheckpointVersion},
              {"kind", model_kind_to_string(model_cfg.kind)},
              {"name", name},
              {"model", model_config_to_json(model_cfg)},
              {"scaler", ckpt_detail::scaler_to_json(scaler)},
              {"tensors", std::move(dir)}};
  const std::string header_bytes = header.dump();

  std::string blob;
  blob.reserve(12 + header_bytes.size() + payload.size());
  blob.append(kCheckpointMagic, 4);
  ckpt_detail::put_u32_le(blob, kCheckpointVersion);
  ckpt_detail::put_u32_le(blob, static_cast<std::uint32_t>(header_bytes.size()));
  blob += header_bytes;
  blob += payload;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("error writing checkpoint " + path.string());
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

struct RawCheckpoint {
  std::string name;
  ModelConfig model_cfg;
  MinMaxScaler scaler;
  json tensor_dir;                   // directory entries, in payload order
  std::vector<unsigned char> bytes;  // whole file
  std::size_t payload_start = 0;     // byte offset of the f32 payload
};

inline RawCheckpoint read_raw_checkpoint(const std::filesystem::path& path) {
  RawCheckpoint raw;
  raw.bytes = ckpt_detail::read_binary_file(path);
  if (raw.bytes.size() < 12 || std::memcmp(raw.bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError(path.string() + " is not a DDSD checkpoint");
  const std::uint32_t version = ckpt_detail::get_u32_le(raw.bytes.data() + 4);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " +
                      path.string());
  const std::uint32_t header_len = ckpt_detail::get_u32_le(raw.bytes.data() + 8);
  if (raw.bytes.size() < 12 + static_cast<std::size_t>(header_len))
    throw FormatError("truncated checkpoint header in " + path.string());

  json header;
  try {
    header = json::parse(raw.bytes.begin() + 12, raw.bytes.begin() + 12 + header_len);
  } catch (const json::exception& ex) {
    throw FormatError("cannot parse checkpoint header in " + path.string() + ": " + ex.what());
  }
  try {
    raw.name = header.at("name").get<std::string>();
    raw.model_cfg = model_config_from_json(header.at("model"));
    if (model_kind_from_string(header.at("kind").get<std::string>()) != raw.model_cfg.kind)
      throw FormatError("checkpoint kind disagrees with its model config");
    raw.scaler = ckpt_detail::scaler_from_json(header.at("scaler"));
    raw.tensor_dir = header.at("tensors");
    if (!raw.tensor_dir.is_array()) throw FormatError("checkpoint tensor directory is malformed");
  } catch (const json::exception& ex) {
    throw FormatError("malformed checkpoint header in " + path.string() + ": " + ex.what());
  }
  raw.payload_start = 12 + header_len;
  return raw;
}

inline ModelKind peek_checkpoint_kind(const std::filesystem::path& path) {
  return read_raw_checkpoint(path).model_cfg.kind;
}

namespace ckpt_detail {

// Fill the given parameters from a raw checkpoint. Every parameter must be
// matched by exactly one directory entry of identical shape, and every
// directory entry must name a parameter.
inline void fill_params(const RawCheckpoint& raw, const ParamRefs<float>& params) {
  std::map<std::string, Parameter<float>*> by_name;
  for (Parameter<float>* p : params) by_name[p->name] = p;

  std::map<std::string, bool> seen;
  for (const json& entry : raw.tensor_dir) {
    std::string name;
    std::int64_t rows = 0, cols = 0, offset = 0;
    try {
      name = entry.at("name").get<std::string>();
      rows = entry.at("rows").get<std::int64_t>();
      cols = entry.at("cols").get<std::int64_t>();
      offset = entry.at("offset").get<std::int64_t>();
    } catch (const json::exception& ex) {
      throw FormatError(std::string("malformed checkpoint tensor entry: ") + ex.what());
    }
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw FormatError("checkpoint holds tensor '" + name + "' which the model does not have");
    if (seen.count(name)) throw FormatError("checkpoint holds tensor '" + name + "' twice");
    seen[name] = true;
    Parameter<float>* p = it->second;
    if (p->value.rows() != rows || p->value.cols() != cols)
      throw FormatError("checkpoint tensor '" + name + "' has shape " + std::to_string(rows) +
                        "x" + std::to_string(cols) + " but the model expects " +
                        std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()));
    const std::size_t begin = raw.payload_start + static_cast<std::size_t>(offset) * 4;
    const std::size_t need = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * 4;
    if (begin + need > raw.bytes.size())
      throw FormatError("checkpoint payload is truncated at tensor '" + name + "'");
    const unsigned char* src = raw.bytes.data() + begin;
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
        p->value(r, c) = read_f32_le(src);
        src += 4;
      }
  }
  for (const auto& [name, p] : by_name) {
    (void)p;
    if (!seen.count(name)) throw FormatError("checkpoint is missing tensor '" + name + "'");
  }
}

}  // namespace ckpt_detail

struct LoadedFusion {
  std::string name;
  ModelConfig model_cfg;
  MinMaxScaler scaler;
  FusionModel<float> model;
};

inline LoadedFusion load_fusion_checkpoint(const std::filesystem::path& path) {
  RawCheckpoint raw = read_raw_checkpoint(path);
  if (raw.model_cfg.kind != ModelKind::kPrefixLm)
    throw FormatError(path.string() + " holds a '" + model_kind_to_string(raw.model_cfg.kind) +
                      "' model, not a prefix_lm");
  LoadedFusion out;
  out.name = raw.name;
  out.model_cfg = raw.model_cfg;
  out.scaler = raw.scaler;
  out.model.init(raw.model_cfg.fusion, /*seed=*/1);  // values are overwritten below
  ckpt_detail::fill_params(raw, out.model.params());
  return out;
}

struct LoadedClf {
  std::string name;
  ModelConfig model_cfg;
  MinMaxScaler scaler;
  ClfModel<float> model;
};

inline LoadedClf load_clf_checkpoint(const std::filesystem::path& path) {
  RawCheckpoint raw = read_raw_checkpoint(path);
  if (raw.model_cfg.kind != ModelKind::kClf)
    throw FormatError(path.string() + " holds a '" + model_kind_to_string(raw.model_cfg.kind) +
                      "' model, not a clf");
  LoadedClf out;
  out.name = raw.name;
  out.model_cfg = raw.model_cfg;
  out.scaler = raw.scaler;
  out.model.init(raw.model_cfg.fusion.encoder, raw.model_cfg.clf_hidden, /*seed=*/1);
  ckpt_detail::fill_params(raw, out.model.params());
  return out;
}

}  // namespace ddsd
