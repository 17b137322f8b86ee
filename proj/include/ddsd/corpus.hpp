#pragma once

// Deterministic synthetic corpus generation.
//
// Each utterance gets: a transcript (command pool for directed speech,
// background-speech pool otherwise), synthetic acoustic feature frames, and
// raw decoder signals. Difficulty is injected with exact, quota-based counts:
//   - text-ambiguous examples swap in a transcript from the opposite pool;
//   - a disjoint audio-ambiguous set draws frames from the opposite class's
//     feature distribution.
// Decoder signals always reflect the true label (they summarize how well the
// upstream recognizer coped, which tracks the utterance's origin), so a
// multimodal consumer can break ties when one channel is misleading.
//
// Feature distributions. Non-directed frames are N(0, sigma^2 I). Directed
// frames are a symmetric two-mode mixture: a per-utterance sign s in {-1,+1}
// picks the mode, and frames are N(s * d * u, sigma^2 I) with u the unit
// vector (1/sqrt(F),...) and d = class_mean_separation. Each directed mode
// sits at distance d from the non-directed mean, but the *average* directed
// feature matches the non-directed average, so the class is only separable
// by even-order statistics — a plain linear probe on pooled features cannot
// do it, while a nonlinear consumer can.
//
// Determinism: every example draws from its own generator sub-seeded by
// (seed, class, index); quota assignment uses dedicated streams. Output is
// byte-identical across runs and platforms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddsd/common.hpp"
#include "ddsd/decoder_signals.hpp"
#include "ddsd/features.hpp"
#include "ddsd/manifest.hpp"
#include "ddsd/matrix.hpp"
#include "ddsd/rng.hpp"

namespace ddsd {

inline constexpr const char* kTriggerPhrase = "hey device";

struct CorpusSpec {
  std::int64_t n_directed = 0;
  std::int64_t n_non_directed = 0;
  std::int64_t frame_dim = 20;      // F
  std::int64_t frames_min = 10;     // frames per utterance, inclusive range
  std::int64_t frames_max = 30;
  double class_mean_separation = 2.0;
  double feature_noise_sigma = 0.5;
  double p_text_ambiguous = 0.15;
  double p_audio_ambiguous = 0.15;
  double trigger_phrase_rate = 0.21;
  std::uint64_t seed = 42;
  // Artifact plumbing beyond the record schema: emit an audio-less corpus
  // (empty audio_ref, zeroed decoder signals) for modality-dropout mixing.
  bool text_only = false;

  void validate() const {
    const auto bad = [](const std::string& field, const std::string& why) -> void {
      throw ValidationError("invalid corpus spec: field '" + field + "' " + why);
    };
    if (n_directed < 0) bad("n_directed", "must be >= 0");
    if (n_non_directed < 0) bad("n_non_directed", "must be >= 0");
    if (frame_dim < 1) bad("frame_dim", "must be >= 1");
    if (frames_min < 1) bad("frames_min", "must be >= 1");
    if (frames_max < frames_min) bad("frames_max", "must be >= frames_min");
    if (!(class_mean_separation >= 0.0)) bad("class_mean_separation", "must be >= 0");
    if (!(feature_noise_sigma > 0.0)) bad("feature_noise_sigma", "must be > 0");
    if (!(p_text_ambiguous >= 0.0 && p_text_ambiguous <= 1.0))
      bad("p_text_ambiguous", "must lie in [0,1]");
    if (!(p_audio_ambiguous >= 0.0 && p_audio_ambiguous <= 1.0))
      bad("p_audio_ambiguous", "must lie in [0,1]");
    if (p_text_ambiguous + p_audio_ambiguous > 1.0)
      bad("p_text_ambiguous", "+ p_audio_ambiguous must be <= 1 (ambiguity sets are disjoint)");
    if (!(trigger_phrase_rate >= 0.0 && trigger_phrase_rate <= 1.0))
      bad("trigger_phrase_rate", "must lie in [0,1]");
  }
};

// ---------------------------------------------------------------------------
// Transcript pools. Short, slot-filled utterances: enough lexical signal for
// a byte-level model without inflating sequence length.
// ---------------------------------------------------------------------------

namespace corpus_detail {

inline const std::vector<std::string>& command_templates() {
  static const std::vector<std::string> pool = {
      "stop",
      "pause",
      "resume",
      "next track",
      "volume up",
      "volume down",
      "set volume to {NUM}",
      "play {SONG}",
      "skip this song",
      "what time is it",
      "set a timer for {NUM} minutes",
      "call {NAME}",
      "text {NAME} i am late",
      "turn on the {DEVICE}",
      "turn off the {DEVICE}",
      "dim the lights",
      "weather in {CITY}",
      "add milk to my list",
      "remind me at {NUM}",
      "open the garage",
      "lock the door",
      "cancel the alarm",
  };
  return pool;
}

inline const std::vector<std::string>& background_templates() {
  static const std::vector<std::string> pool = {
      "so how was your day",
      "i think it rains later",
      "did you see that game",
      "the kids are asleep",
      "pass me the salt please",
      "we should leave soon",
      "that movie was great",
      "he said it was fine",
      "let me check my mail",
      "what do you want for dinner",
      "the bus was late again",
      "i like this song a lot",
      "she called me yesterday",
      "my phone is almost dead",
      "this coffee is too hot",
      "are we there yet",
      "i will be home by {NUM}",
      "the meeting ran long",
      "put it on the table",
      "they won again last night",
      "it is cold in here",
      "maybe next weekend works",
  };
  return pool;
}

inline const std::vector<std::string>& slot_values(const std::string& slot) {
  static const std::vector<std::string> nums = {"5", "10", "15", "20", "30", "45"};
  static const std::vector<std::string> songs = {"jazz", "rock", "the news",
                                                 "my mix", "blues", "pop"};
  static const std::vector<std::string> cities = {"paris", "oslo", "tokyo", "rome", "cairo"};
  static const std::vector<std::string> names = {"mom", "dad", "alex", "sam", "kim"};
  static const std::vector<std::string> devices = {"tv", "fan", "lights", "heater", "radio"};
  if (slot == "NUM") return nums;
  if (slot == "SONG") return songs;
  if (slot == "CITY") return cities;
  if (slot == "NAME") return names;
  if (slot == "DEVICE") return devices;
  throw InternalError("unknown transcript slot {" + slot + "}");
}

inline std::string fill_template(const std::string& tmpl, Rng& rng) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const std::size_t open = tmpl.find('{', pos);
    if (open == std::string::npos) {
      out.append(tmpl, pos, std::string::npos);
      break;
    }
    out.append(tmpl, pos, open - pos);
    const std::size_t close = tmpl.find('}', open);
    DDSD_CHECK(close != std::string::npos, "unterminated slot in template: " + tmpl);
    const std::string slot = tmpl.substr(open + 1, close - open - 1);
    const auto& values = slot_values(slot);
    out += values[rng.uniform_index(values.size())];
    pos = close + 1;
  }
  return out;
}

inline std::string sample_transcript(bool from_command_pool, Rng& rng) {
  const auto& pool = from_command_pool ? command_templates() : background_templates();
  return fill_template(pool[rng.uniform_index(pool.size())], rng);
}

// Exact-count quota assignment: shuffle indices, take prefixes.
struct ClassQuotas {
  std::vector<bool> text_ambiguous;
  std::vector<bool> audio_ambiguous;
  std::vector<bool> trigger;  // only populated for the directed class
};

inline std::int64_t quota_count(double fraction, std::int64_t n) {
  return static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(n)));
}

inline ClassQuotas assign_quotas(const CorpusSpec& spec, Label label) {
  const std::int64_t n = label == Label::kDirected ? spec.n_directed : spec.n_non_directed;
  ClassQuotas q;
  q.text_ambiguous.assign(n, false);
  q.audio_ambiguous.assign(n, false);
  q.trigger.assign(n, false);
  if (n == 0) return q;

  std::vector<std::int64_t> idx(n);
  for (std::int64_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(sub_seed(spec.seed, std::string("quota-") + label_to_string(label)));
  rng.shuffle(idx);

  const std::int64_t n_text = quota_count(spec.p_text_ambiguous, n);
  const std::int64_t n_audio = quota_count(spec.p_audio_ambiguous, n);
  DDSD_CHECK(n_text + n_audio <= n, "ambiguity quotas exceed class size");
  for (std::int64_t k = 0; k < n_text; ++k) q.text_ambiguous[idx[k]] = true;
  for (std::int64_t k = 0; k < n_audio; ++k) q.audio_ambiguous[idx[n_text + k]] = true;

  if (label == Label::kDirected) {
    // The trigger phrase marks genuinely directed wording, so it lands only
    // on examples whose transcript actually comes from the command pool.
    std::vector<std::int64_t> eligible;
    eligible.reserve(n);
    for (std::int64_t i = 0; i < n; ++i)
      if (!q.text_ambiguous[i]) eligible.push_back(i);
    Rng trng(sub_seed(spec.seed, "quota-trigger"));
    trng.shuffle(eligible);
    const std::int64_t want = quota_count(spec.trigger_phrase_rate, n);
    const std::int64_t n_trigger = std::min<std::int64_t>(want,
                                                          static_cast<std::int64_t>(eligible.size()));
    for (std::int64_t k = 0; k < n_trigger; ++k) q.trigger[eligible[k]] = true;
  }
  return q;
}

}  // namespace corpus_detail

// Per-class assignment log: lets tests assert quota counts exactly against
// what the generator actually did, not just against the requested quota arithmetic.
struct GenerationReport {
  struct ClassStats {
    std::int64_t n = 0;
    std::vector<std::string> text_ambiguous_ids;
    std::vector<std::string> audio_ambiguous_ids;
    std::vector<std::string> trigger_ids;
  };
  ClassStats directed;
  ClassStats non_directed;

  nlohmann::json to_json() const {
    const auto cls = [](const ClassStats& c) {
      return nlohmann::json{{"n", c.n},
                            {"text_ambiguous_ids", c.text_ambiguous_ids},
                            {"audio_ambiguous_ids", c.audio_ambiguous_ids},
                            {"trigger_ids", c.trigger_ids}};
    };
    return nlohmann::json{{"directed", cls(directed)}, {"non_directed", cls(non_directed)}};
  }
};

struct GeneratedExample {
  UtteranceRecord record;
  MatF frames;  // empty (0x0) when the corpus is text-only
};

struct GeneratedCorpus {
  std::vector<GeneratedExample> examples;
  GenerationReport report;
};

namespace corpus_detail {

inline DecoderSignals sample_decoder_signals(Label truth, Rng& rng) {
  // Directed speech is in-domain for the recognizer: high word confidence.
  const double conf = truth == Label::kDirected
                          ? std::clamp(rng.normal(0.85, 0.10), 0.0, 1.0)
                          : std::clamp(rng.normal(0.55, 0.15), 0.0, 1.0);
  // Costs and alternative counts grow as confidence drops; affine scales are
  // arbitrary (min-max scaling downstream normalizes them away).
  DecoderSignals ds;
  ds.confidence = conf;
  ds.graph_cost = 2.0 + 6.0 * (1.0 - conf) + rng.normal(0.0, 0.3);
  ds.acoustic_cost = 1.0 + 4.0 * (1.0 - conf) + rng.normal(0.0, 0.2);
  ds.alternatives = std::max(1.0, 1.0 + 6.0 * (1.0 - conf) + rng.normal(0.0, 0.5));
  return ds;
}

inline MatF sample_frames(const CorpusSpec& spec, Label feature_class, Rng& rng) {
  const std::int64_t T =
      spec.frames_min + static_cast<std::int64_t>(
                            rng.uniform_index(spec.frames_max - spec.frames_min + 1));
  const std::int64_t F = spec.frame_dim;
  MatF frames(T, F);
  double mean_coord = 0.0;
  if (feature_class == Label::kDirected) {
    const double sign = rng.flip(0.5) ? 1.0 : -1.0;
    mean_coord = sign * spec.class_mean_separation / std::sqrt(static_cast<double>(F));
  }
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t f = 0; f < F; ++f)
      frames(t, f) = static_cast<float>(mean_coord + spec.feature_noise_sigma * rng.normal());
  return frames;
}

inline GeneratedExample make_example(const CorpusSpec& spec, Label label, std::int64_t index,
                                     bool text_amb, bool audio_amb, bool trigger) {
  const char* class_tag = label == Label::kDirected ? "d" : "n";
  Rng rng(sub_seed(spec.seed, std::string("example-") + class_tag,
                   static_cast<std::uint64_t>(index)));

  GeneratedExample out;
  UtteranceRecord& r = out.record;
  char idbuf[32];
  std::snprintf(idbuf, sizeof(idbuf), "utt-%s-%06lld", class_tag,
                static_cast<long long>(index));
  r.id = idbuf;
  r.label = label;

  // Transcript: opposite pool when text-ambiguous. Trigger only decorates
  // genuine command transcripts of directed utterances.
  const bool command_pool = (label == Label::kDirected) != text_amb;
  r.transcript = sample_transcript(command_pool, rng);
  r.has_trigger_phrase = trigger;
  if (trigger) r.transcript = std::string(kTriggerPhrase) + " " + r.transcript;

  if (spec.text_only) {
    r.audio_ref = "";
    r.decoder_signals_raw = DecoderSignals{0.0, 0.0, 0.0, 0.0};
  } else {
    r.audio_ref = std::string("features/") + r.id + ".feat";
    // Audio rides the opposite distribution when audio-ambiguous.
    Label feature_class = label;
    if (audio_amb)
      feature_class = label == Label::kDirected ? Label::kNonDirected : Label::kDirected;
    out.frames = sample_frames(spec, feature_class, rng);
    // Decoder signals track the true label: they summarize recognizer
    // behaviour on the utterance's actual wording/acoustics.
    r.decoder_signals_raw = sample_decoder_signals(label, rng);
  }
  return out;
}

}  // namespace corpus_detail

// Generate the corpus in memory. Deterministic in spec (including seed).
inline GeneratedCorpus generate_corpus_records(const CorpusSpec& spec) {
  spec.validate();
  GeneratedCorpus out;
  const auto quotas_d = corpus_detail::assign_quotas(spec, Label::kDirected);
  const auto quotas_n = corpus_detail::assign_quotas(spec, Label::kNonDirected);

  out.report.directed.n = spec.n_directed;
  out.report.non_directed.n = spec.n_non_directed;
  out.examples.reserve(static_cast<std::size_t>(spec.n_directed + spec.n_non_directed));

  const auto emit_class = [&](Label label, std::int64_t n,
                              const corpus_detail::ClassQuotas& q,
                              GenerationReport::ClassStats& stats) {
    for (std::int64_t i = 0; i < n; ++i) {
      GeneratedExample ex = corpus_detail::make_example(spec, label, i, q.text_ambiguous[i],
                                                        q.audio_ambiguous[i], q.trigger[i]);
      if (q.text_ambiguous[i]) stats.text_ambiguous_ids.push_back(ex.record.id);
      if (q.audio_ambiguous[i]) stats.audio_ambiguous_ids.push_back(ex.record.id);
      if (q.trigger[i]) stats.trigger_ids.push_back(ex.record.id);
      out.examples.push_back(std::move(ex));
    }
  };
  emit_class(Label::kDirected, spec.n_directed, quotas_d, out.report.directed);
  emit_class(Label::kNonDirected, spec.n_non_directed, quotas_n, out.report.non_directed);
  return out;
}

// Generate and write manifest + feature files + assignment log under out_dir.
inline GenerationReport generate_corpus(const CorpusSpec& spec,
                                        const std::filesystem::path& out_dir) {
  GeneratedCorpus corpus = generate_corpus_records(spec);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (!std::filesystem::is_directory(out_dir))
    throw IoError("cannot create output directory: " + out_dir.string());
  if (!spec.text_only) std::filesystem::create_directories(out_dir / "features", ec);

  std::vector<UtteranceRecord> records;
  records.reserve(corpus.examples.size());
  for (const auto& ex : corpus.examples) {
    if (!spec.text_only) write_features(out_dir / ex.record.audio_ref, ex.frames);
    records.push_back(ex.record);
  }
  write_manifest(out_dir / "manifest.jsonl", records);
  write_text_file(out_dir / "gen_log.json", corpus.report.to_json().dump(2) + "\n");
  return corpus.report;
}

}  // namespace ddsd
