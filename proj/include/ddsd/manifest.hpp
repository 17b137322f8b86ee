#pragma once

// Dataset manifest: one JSON object per line (JSONL).
//
// Each row is a single utterance. The schema is strict in both directions:
// every field below is required, unknown fields are rejected, and any
// violation reports the 1-based line number of the offending row.
//
// Row fields:
//   id                   unique non-empty string
//   label                "directed" | "non_directed"
//   transcript           1-best ASR text (may be empty)
//   audio_ref            feature-file path relative to the manifest;
//                        empty string = no audio for this utterance
//   decoder_signals_raw  [avg graph cost, avg acoustic cost,
//                         avg confidence, avg alternatives], unscaled
//   has_trigger_phrase   whether the transcript starts with the trigger

#include <array>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ddsd/common.hpp"

namespace ddsd {

enum class Label { kDirected, kNonDirected };

inline std::string label_to_string(Label l) {
  return l == Label::kDirected ? "directed" : "non_directed";
}

inline Label label_from_string(const std::string& s) {
  if (s == "directed") return Label::kDirected;
  if (s == "non_directed") return Label::kNonDirected;
  throw ValidationError("unknown label '" + s + "' (expected 'directed' or 'non_directed')");
}

// Per-utterance summary of ASR decoder behaviour, in fixed order:
// average graph cost, average acoustic cost, average word confidence,
// average number of alternative word options.
struct DecoderSignals {
  double graph_cost = 0.0;
  double acoustic_cost = 0.0;
  double confidence = 0.0;
  double alternatives = 0.0;

  std::array<double, 4> as_array() const {
    return {graph_cost, acoustic_cost, confidence, alternatives};
  }
  static DecoderSignals from_array(const std::array<double, 4>& a) {
    return {a[0], a[1], a[2], a[3]};
  }
};

inline constexpr int kNumDecoderSignals = 4;

struct UtteranceRecord {
  std::string id;
  Label label = Label::kNonDirected;
  std::string transcript;
  std::string audio_ref;
  DecoderSignals decoder_signals_raw;
  bool has_trigger_phrase = false;

  bool has_audio() const { return !audio_ref.empty(); }
};

inline nlohmann::json record_to_json(const UtteranceRecord& r) {
  return nlohmann::json{
      {"id", r.id},
      {"label", label_to_string(r.label)},
      {"transcript", r.transcript},
      {"audio_ref", r.audio_ref},
      {"decoder_signals_raw",
       {r.decoder_signals_raw.graph_cost, r.decoder_signals_raw.acoustic_cost,
        r.decoder_signals_raw.confidence, r.decoder_signals_raw.alternatives}},
      {"has_trigger_phrase", r.has_trigger_phrase},
  };
}

inline UtteranceRecord record_from_json(const nlohmann::json& row, std::size_t line_no) {
  const auto fail = [&](const std::string& why) -> void {
    throw DataError("manifest line " + std::to_string(line_no) + ": " + why);
  };
  if (!row.is_object()) fail("row is not a JSON object");

  static const std::set<std::string> kKnown = {"id",        "label",
                                               "transcript", "audio_ref",
                                               "decoder_signals_raw", "has_trigger_phrase"};
  for (auto it = row.begin(); it != row.end(); ++it)
    if (!kKnown.count(it.key())) fail("unknown field '" + it.key() + "'");
  for (const auto& key : kKnown)
    if (!row.contains(key)) fail("missing field '" + std::string(key) + "'");

  UtteranceRecord r;
  try {
    if (!row["id"].is_string() || row["id"].get<std::string>().empty())
      fail("'id' must be a non-empty string");
    r.id = row["id"].get<std::string>();

    if (!row["label"].is_string()) fail("'label' must be a string");
    try {
      r.label = label_from_string(row["label"].get<std::string>());
    } catch (const ValidationError& ex) {
      fail(ex.what());
    }

    if (!row["transcript"].is_string()) fail("'transcript' must be a string");
    r.transcript = row["transcript"].get<std::string>();

    if (!row["audio_ref"].is_string()) fail("'audio_ref' must be a string");
    r.audio_ref = row["audio_ref"].get<std::string>();

    const auto& ds = row["decoder_signals_raw"];
    if (!ds.is_array() || ds.size() != 4)
      fail("'decoder_signals_raw' must be an array of 4 numbers");
    std::array<double, 4> vals{};
    for (std::size_t i = 0; i < 4; ++i) {
      if (!ds[i].is_number()) fail("'decoder_signals_raw' must be an array of 4 numbers");
      vals[i] = ds[i].get<double>();
      if (!std::isfinite(vals[i])) fail("'decoder_signals_raw' contains a non-finite value");
    }
    if (vals[2] < 0.0 || vals[2] > 1.0)
      fail("average confidence (decoder_signals_raw[2]) must lie in [0,1]");
    r.decoder_signals_raw = DecoderSignals::from_array(vals);

    if (!row["has_trigger_phrase"].is_boolean()) fail("'has_trigger_phrase' must be a boolean");
    r.has_trigger_phrase = row["has_trigger_phrase"].get<bool>();
  } catch (const DataError&) {
    throw;
  } catch (const nlohmann::json::exception& ex) {
    fail(std::string("malformed value: ") + ex.what());
  }
  return r;
}

// Serialize with nlohmann's default (sorted) key order so generation is
// byte-reproducible.
inline std::string manifest_to_jsonl(const std::vector<UtteranceRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<UtteranceRecord> manifest_from_jsonl(const std::string& text) {
  std::vector<UtteranceRecord> out;
  std::set<std::string> seen_ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    ++line_no;
    const std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;  // blank line
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw DataError("manifest line " + std::to_string(line_no) + ": invalid JSON: " + ex.what());
    }
    UtteranceRecord r = record_from_json(row, line_no);
    if (!seen_ids.insert(r.id).second)
      throw DataError("manifest line " + std::to_string(line_no) + ": duplicate id '" + r.id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<UtteranceRecord>& records) {
  write_text_file(path, manifest_to_jsonl(records));
}

inline std::vector<UtteranceRecord> read_manifest(const std::filesystem::path& path) {
  try {
    return manifest_from_jsonl(read_text_file(path));
  } catch (const DataError& ex) {
    throw DataError(path.string() + ": " + ex.what());
  }
}

// Resolve an audio_ref against the manifest's directory.
inline std::filesystem::path resolve_audio_ref(const std::filesystem::path& manifest_path,
                                               const std::string& audio_ref) {
  DDSD_CHECK(!audio_ref.empty(), "resolve_audio_ref on a record without audio");
  std::filesystem::path ref(audio_ref);
  if (ref.is_absolute()) return ref;
  return manifest_path.parent_path() / ref;
}

}  // namespace ddsd
