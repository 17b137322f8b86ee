#pragma once

// Experiment configuration: one JSON document with corpus / model / train /
// eval sections. Parsing is strict — unknown keys are rejected by name so a
// typo never silently falls back to a default — and every field has a
// default, so the resolved (fully materialized) form of any config can be
// echoed next to a run's outputs for reproducibility.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddsd/common.hpp"
#include "ddsd/corpus.hpp"
#include "ddsd/fusion.hpp"
#include "ddsd/trainer.hpp"

namespace ddsd {

using nlohmann::json;

inline std::string loss_mode_to_string(LossMode m) {
  return m == LossMode::kDecisionOnly ? "decision_only" : "full_sequence";
}

enum class ModelKind { kPrefixLm, kClf };

inline std::string model_kind_to_string(ModelKind k) {
  return k == ModelKind::kPrefixLm ? "prefix_lm" : "clf";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "prefix_lm") return ModelKind::kPrefixLm;
  if (s == "clf") return ModelKind::kClf;
  throw ConfigError("unknown model kind '" + s + "' (expected prefix_lm or clf)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::kPrefixLm;
  FusionConfig fusion;            // prefix_lm settings (encoder shared by clf)
  Eigen::Index clf_hidden = kClfHiddenDim;

  void validate() const {
    if (kind == ModelKind::kPrefixLm)
      fusion.validate();
    else {
      fusion.encoder.validate();
      if (clf_hidden < 1) throw ConfigError("clf hidden units must be >= 1");
    }
  }
};

struct ExperimentConfig {
  std::string name = "experiment";
  CorpusSpec corpus;
  ModelConfig model;
  TrainConfig train;    // used when model.kind == prefix_lm
  ClfConfig clf_train;  // used when model.kind == clf
  double eval_clip = 0.25;

  void validate() const {
    if (name.empty()) throw ConfigError("experiment name must be nonempty");
    corpus.validate();
    model.validate();
    if (model.kind == ModelKind::kPrefixLm)
      train.validate();
    else
      clf_train.validate();
    if (!(eval_clip > 0.0 && eval_clip <= 1.0))
      throw ConfigError("eval clip must lie in (0,1]");
  }
};

// ---------------------------------------------------------------------------
// Strict parsing helpers
// ---------------------------------------------------------------------------

namespace config_detail {

inline void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be a JSON object");
}

inline void reject_unknown(const json& j, const std::set<std::string>& allowed,
                           const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in config section '" + where + "'");
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value type for '" + key + "' in config section '" + where + "'");
  }
}

}  // namespace config_detail

// ---------------------------------------------------------------------------
// Section (de)serialization
// ---------------------------------------------------------------------------

inline json corpus_spec_to_json(const CorpusSpec& c) {
  return json{{"n_directed", c.n_directed},
              {"n_non_directed", c.n_non_directed},
              {"frame_dim", c.frame_dim},
              {"frames_min", c.frames_min},
              {"frames_max", c.frames_max},
              {"class_mean_separation", c.class_mean_separation},
              {"feature_noise_sigma", c.feature_noise_sigma},
              {"p_text_ambiguous", c.p_text_ambiguous},
              {"p_audio_ambiguous", c.p_audio_ambiguous},
              {"trigger_phrase_rate", c.trigger_phrase_rate},
              {"seed", c.seed},
              {"text_only", c.text_only}};
}

inline CorpusSpec corpus_spec_from_json(const json& j) {
  using config_detail::get_or;
  config_detail::require_object(j, "corpus");
  config_detail::reject_unknown(
      j,
      {"n_directed", "n_non_directed", "frame_dim", "frames_min", "frames_max",
       "class_mean_separation", "feature_noise_sigma", "p_text_ambiguous", "p_audio_ambiguous",
       "trigger_phrase_rate", "seed", "text_only"},
      "corpus");
  CorpusSpec c;
  c.n_directed = get_or<std::int64_t>(j, "n_directed", c.n_directed, "corpus");
  c.n_non_directed = get_or<std::int64_t>(j, "n_non_directed", c.n_non_directed, "corpus");
  c.frame_dim = get_or<std::int64_t>(j, "frame_dim", c.frame_dim, "corpus");
  c.frames_min = get_or<std::int64_t>(j, "frames_min", c.frames_min, "corpus");
  c.frames_max = get_or<std::int64_t>(j, "frames_max", c.frames_max, "corpus");
  c.class_mean_separation =
      get_or<double>(j, "class_mean_separation", c.class_mean_separation, "corpus");
  c.feature_noise_sigma = get_or<double>(j, "feature_noise_sigma", c.feature_noise_sigma, "corpus");
  c.p_text_ambiguous = get_or<double>(j, "p_text_ambiguous", c.p_text_ambiguous, "corpus");
  c.p_audio_ambiguous = get_or<double>(j, "p_audio_ambiguous", c.p_audio_ambiguous, "corpus");
  c.trigger_phrase_rate = get_or<double>(j, "trigger_phrase_rate", c.trigger_phrase_rate, "corpus");
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed, "corpus");
  c.text_only = get_or<bool>(j, "text_only", c.text_only, "corpus");
  return c;
}

inline json lm_config_to_json(const LMConfig& c) {
  return json{{"embed_dim", c.embed_dim},   {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},       {"vocab_size", c.vocab_size},
              {"max_seq_len", c.max_seq_len}, {"ff_dim", c.ff_dim},
              {"dropout", c.dropout}};
}

inline LMConfig lm_config_from_json(const json& j) {
  using config_detail::get_or;
  config_detail::require_object(j, "model.lm");
  config_detail::reject_unknown(
      j, {"embed_dim", "n_layers", "n_heads", "vocab_size", "max_seq_len", "ff_dim", "dropout"},
      "model.lm");
  LMConfig c;
  c.embed_dim = get_or<Eigen::Index>(j, "embed_dim", c.embed_dim, "model.lm");
  c.n_layers = get_or<Eigen::Index>(j, "n_layers", c.n_layers, "model.lm");
  c.n_heads = get_or<Eigen::Index>(j, "n_heads", c.n_heads, "model.lm");
  c.vocab_size = get_or<Eigen::Index>(j, "vocab_size", c.vocab_size, "model.lm");
  c.max_seq_len = get_or<Eigen::Index>(j, "max_seq_len", c.max_seq_len, "model.lm");
  c.ff_dim = get_or<Eigen::Index>(j, "ff_dim", c.ff_dim, "model.lm");
  c.dropout = get_or<double>(j, "dropout", c.dropout, "model.lm");
  return c;
}

inline json encoder_config_to_json(const ToyEncoderConfig& c) {
  return json{{"input_dim", c.input_dim},   {"hidden_dim", c.hidden_dim},
              {"output_dim", c.output_dim}, {"n_layers", c.n_layers},
              {"trainable", c.trainable},   {"temporal_mixing", c.temporal_mixing}};
}

inline ToyEncoderConfig encoder_config_from_json(const json& j) {
  using config_detail::get_or;
  config_detail::require_object(j, "model.encoder");
  config_detail::reject_unknown(
      j, {"input_dim", "hidden_dim", "output_dim", "n_layers", "trainable", "temporal_mixing"},
      "model.encoder");
  ToyEncoderConfig c;
  c.input_dim = get_or<Eigen::Index>(j, "input_dim", c.input_dim, "model.encoder");
  c.hidden_dim = get_or<Eigen::Index>(j, "hidden_dim", c.hidden_dim, "model.encoder");
  c.output_dim = get_or<Eigen::Index>(j, "output_dim", c.output_dim, "model.encoder");
  c.n_layers = get_or<Eigen::Index>(j, "n_layers", c.n_layers, "model.encoder");
  c.trainable = get_or<bool>(j, "trainable", c.trainable, "model.encoder");
  c.temporal_mixing = get_or<bool>(j, "temporal_mixing", c.temporal_mixing, "model.encoder");
  return c;
}

inline json lora_to_json(const LoraSpec& s) {
  return json{{"r", s.r}, {"alpha", s.alpha}, {"targets", s.targets},
              {"base_frozen", s.base_frozen}};
}

inline LoraSpec lora_from_json(const json& j) {
  using config_detail::get_or;
  config_detail::require_object(j, "model.lora");
  config_detail::reject_unknown(j, {"r", "alpha", "targets", "base_frozen"}, "model.lora");
  LoraSpec s;
  s.r = get_or<Eigen::Index>(j, "r", s.r, "model.lora");
  s.alpha = get_or<double>(j, "alpha", s.alpha, "model.lora");
  s.targets = get_or<std::vector<std::string>>(j, "targets", s.targets, "model.lora");
  s.base_frozen = get_or<bool>(j, "base_frozen", s.base_frozen, "model.lora");
  return s;
}

inline json model_config_to_json(const ModelConfig& m) {
  json j{{"kind", model_kind_to_string(m.kind)},
         {"lm", lm_config_to_json(m.fusion.lm)},
         {"encoder", encoder_config_to_json(m.fusion.encoder)},
         {"modalities", m.fusion.modalities.names()},
         {"text_len", m.fusion.text_len},
         {"clf_hidden", m.clf_hidden}};
  j["lora"] = m.fusion.lora ? lora_to_json(*m.fusion.lora) : json(nullptr);
  return j;
}

inline ModelConfig model_config_from_json(const json& j) {
  using config_detail::get_or;
  config_detail::require_object(j, "model");
  config_detail::reject_unknown(
      j, {"kind", "lm", "encoder", "modalities", "text_len", "lora", "clf_hidden"}, "model");
  ModelConfig m;
  m.kind = model_kind_from_string(get_or<std::string>(j, "kind", "prefix_lm", "model"));
  if (j.contains("lm")) m.fusion.lm = lm_config_from_json(j.at("lm"));
  if (j.contains("encoder")) m.fusion.encoder = encoder_config_from_json(j.at("encoder"));
  if (j.contains("modalities"))
    m.fusion.modalities =
        ModalitySet::from_names(get_or<std::vector<std::string>>(j, "modalities", {}, "model"));
  m.fusion.text_len = get_or<Eigen::Index>(j, "text_len", m.fusion.text_len, "model");
  if (j.contains("lora") && !j.at("lora").is_null()) m.fusion.lora = lora_from_json(j.at("lora"));
  m.clf_hidden = get_or<Eigen::Index>(j, "clf_hidden", m.clf_hidden, "model");
  return m;
}

inline json train_config_to_json(const TrainConfig& t) {
  return json{{"epochs", t.epochs},
              {"effective_batch_size", t.effective_batch_size},
              {"micro_batch", t.micro_batch},
              {"peak_lr", t.peak_lr},
              {"warmup_fraction", t.warmup_fraction},
              {"weight_decay", t.adam.weight_decay},
              {"beta1", t.adam.beta1},
              {"beta2", t.adam.beta2},
              {"adam_eps", t.adam.eps},
              {"loss_mask_mode", loss_mode_to_string(t.loss_mask_mode)},
              {"text_only_mix", t.text_only_mix},
              {"seed", t.seed},
              {"checkpoint_interval", t.checkpoint_interval}};
}

inline TrainConfig train_config_from_json(const json& j) {
  using config_detail::get_or;
  config_detail::require_object(j, "train");
  config_detail::reject_unknown(
      j,
      {"epochs", "effective_batch_size", "micro_batch", "peak_lr", "warmup_fraction",
       "weight_decay", "beta1", "beta2", "adam_eps", "loss_mask_mode", "text_only_mix", "seed",
       "checkpoint_interval"},
      "train");
  TrainConfig t;
  t.epochs = get_or<std::int64_t>(j, "epochs", t.epochs, "train");
  t.effective_batch_size =
      get_or<std::int64_t>(j, "effective_batch_size", t.effective_batch_size, "train");
  t.micro_batch = get_or<std::int64_t>(j, "micro_batch", t.micro_batch, "train");
  t.peak_lr = get_or<double>(j, "peak_lr", t.peak_lr, "train");
  t.warmup_fraction = get_or<double>(j, "warmup_fraction", t.warmup_fraction, "train");
  t.adam.weight_decay = get_or<double>(j, "weight_decay", t.adam.weight_decay, "train");
  t.adam.beta1 = get_or<double>(j, "beta1", t.adam.beta1, "train");
  t.adam.beta2 = get_or<double>(j, "beta2", t.adam.beta2, "train");
  t.adam.eps = get_or<double>(j, "adam_eps", t.adam.eps, "train");
  t.loss_mask_mode =
      loss_mode_from_string(get_or<std::string>(j, "loss_mask_mode", "decision_only", "train"));
  t.text_only_mix = get_or<std::int64_t>(j, "text_only_mix", t.text_only_mix, "train");
  t.seed = get_or<std::uint64_t>(j, "seed", t.seed, "train");
  t.checkpoint_interval =
      get_or<std::int64_t>(j, "checkpoint_interval", t.checkpoint_interval, "train");
  return t;
}

inline json clf_config_to_json(const ClfConfig& t) {
  return json{{"epochs", t.epochs},
              {"effective_batch_size", t.effective_batch_size},
              {"peak_lr", t.peak_lr},
              {"warmup_fraction", t.warmup_fraction},
              {"weight_decay", t.adam.weight_decay},
              {"beta1", t.adam.beta1},
              {"beta2", t.adam.beta2},
              {"adam_eps", t.adam.eps},
              {"seed", t.seed}};
}

inline ClfConfig clf_config_from_json(const json& j) {
  using config_detail::get_or;
  config_detail::require_object(j, "train");
  config_detail::reject_unknown(j,
                                {"epochs", "effective_batch_size", "peak_lr", "warmup_fraction",
                                 "weight_decay", "beta1", "beta2", "adam_eps", "seed"},
                                "train");
  ClfConfig t;
  t.epochs = get_or<std::int64_t>(j, "epochs", t.epochs, "train");
  t.effective_batch_size =
      get_or<std::int64_t>(j, "effective_batch_size", t.effective_batch_size, "train");
  t.peak_lr = get_or<double>(j, "peak_lr", t.peak_lr, "train");
  t.warmup_fraction = get_or<double>(j, "warmup_fraction", t.warmup_fraction, "train");
  t.adam.weight_decay = get_or<double>(j, "weight_decay", t.adam.weight_decay, "train");
  t.adam.beta1 = get_or<double>(j, "beta1", t.adam.beta1, "train");
  t.adam.beta2 = get_or<double>(j, "beta2", t.adam.beta2, "train");
  t.adam.eps = get_or<double>(j, "adam_eps", t.adam.eps, "train");
  t.seed = get_or<std::uint64_t>(j, "seed", t.seed, "train");
  return t;
}

// ---------------------------------------------------------------------------
// Whole-document (de)serialization
// ---------------------------------------------------------------------------

inline json experiment_config_to_json(const ExperimentConfig& e) {
  json j{{"name", e.name},
         {"corpus", corpus_spec_to_json(e.corpus)},
         {"model", model_config_to_json(e.model)},
         {"eval", json{{"clip", e.eval_clip}}}};
  j["train"] = e.model.kind == ModelKind::kPrefixLm ? train_config_to_json(e.train)
                                                    : clf_config_to_json(e.clf_train);
  return j;
}

inline ExperimentConfig experiment_config_from_json(const json& j) {
  using config_detail::get_or;
  config_detail::require_object(j, "<root>");
  config_detail::reject_unknown(j, {"name", "corpus", "model", "train", "eval"}, "<root>");
  ExperimentConfig e;
  e.name = get_or<std::string>(j, "name", e.name, "<root>");
  if (j.contains("corpus")) e.corpus = corpus_spec_from_json(j.at("corpus"));
  if (j.contains("model")) e.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) {
    if (e.model.kind == ModelKind::kPrefixLm)
      e.train = train_config_from_json(j.at("train"));
    else
      e.clf_train = clf_config_from_json(j.at("train"));
  }
  if (j.contains("eval")) {
    const json& ev = j.at("eval");
    config_detail::require_object(ev, "eval");
    config_detail::reject_unknown(ev, {"clip"}, "eval");
    e.eval_clip = get_or<double>(ev, "clip", e.eval_clip, "eval");
  }
  e.clf_train.hidden = e.model.clf_hidden;  // single source of truth: the model section
  e.validate();
  return e;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& ex) {
    throw ConfigError("cannot parse config " + path.string() + ": " + ex.what());
  }
  return experiment_config_from_json(j);
}

}  // namespace ddsd
