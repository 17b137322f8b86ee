#pragma once

// Training loops for the fusion model and the audio-only baseline.
//
// Determinism contract: given (corpus, config, seed), the loss sequence and
// final parameters are identical across runs. Every random choice draws from
// a purpose-keyed stream — per-epoch shuffles from (seed, "epoch-*", epoch),
// dropout from (seed, "dropout", step) consumed example-by-example in batch
// order — so micro-batch slicing never changes the arithmetic: an optimizer
// step accumulates per-example gradients in the same order regardless of how
// the effective batch is split.
//
// Mixing: auxiliary text-only examples enter the epoch stream as whole
// batches of their own (a batch never mixes presence patterns), shuffled
// uniformly among the multimodal batches each epoch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ddsd/clf.hpp"
#include "ddsd/common.hpp"
#include "ddsd/decoder_signals.hpp"
#include "ddsd/fusion.hpp"
#include "ddsd/features.hpp"
#include "ddsd/manifest.hpp"
#include "ddsd/optimizer.hpp"
#include "ddsd/rng.hpp"
#include "ddsd/tokenizer.hpp"

namespace ddsd {

struct TrainConfig {
  std::int64_t epochs = 20;
  std::int64_t effective_batch_size = 32;
  std::int64_t micro_batch = 0;  // 0: a single micro-batch per step
  double peak_lr = 1e-4;
  double warmup_fraction = 0.10;
  AdamConfig adam;
  LossMode loss_mask_mode = LossMode::kDecisionOnly;
  std::int64_t text_only_mix = -1;  // -1: half the multimodal count
  std::uint64_t seed = 1;
  std::int64_t checkpoint_interval = 0;  // epochs between checkpoints; 0 = off

  std::int64_t resolved_micro_batch() const {
    return micro_batch > 0 ? micro_batch : effective_batch_size;
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (effective_batch_size < 1) throw ConfigError("effective_batch_size must be >= 1");
    if (micro_batch < 0 || (micro_batch > 0 && effective_batch_size % micro_batch != 0))
      throw ConfigError("micro_batch must divide effective_batch_size exactly");
    if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
      throw ConfigError("warmup_fraction must lie in (0,1)");
    if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be >= 0");
    adam.validate();
  }
};

struct ClfConfig {
  Eigen::Index hidden = kClfHiddenDim;
  std::int64_t epochs = 10;
  std::int64_t effective_batch_size = 32;
  double peak_lr = 2e-5;
  double warmup_fraction = 0.10;
  AdamConfig adam;
  std::uint64_t seed = 1;

  void validate() const {
    if (hidden < 1) throw ConfigError("clf hidden units must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (effective_batch_size < 1) throw ConfigError("effective_batch_size must be >= 1");
    if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
      throw ConfigError("warmup_fraction must lie in (0,1)");
    adam.validate();
  }
};

struct LossRow {
  std::int64_t step = 0;   // 1-based optimizer step
  std::int64_t epoch = 0;  // 1-based epoch
  double lr = 0.0;
  double loss = 0.0;       // batch mean
  double grad_norm = 0.0;  // global L2 over trainable grads, pre-update
};

struct TrainResult {
  std::vector<LossRow> rows;
  std::vector<double> epoch_mean_loss;
  std::int64_t total_steps = 0;
};

inline std::string loss_log_to_csv(const std::vector<LossRow>& rows) {
  std::string out = "step,epoch,lr,loss,grad_norm\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%.10g,%.10g,%.10g\n",
                  static_cast<long long>(r.step), static_cast<long long>(r.epoch), r.lr, r.loss,
                  r.grad_norm);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest -> model-ready examples
// ---------------------------------------------------------------------------

template <typename S>
struct Prepared {
  std::vector<ExampleInputs<S>> examples;
  std::vector<Label> labels;
  std::vector<std::string> ids;
};

// Load and preprocess every record: tokenize + pad, scale decoder signals,
// read feature files, and (for a frozen encoder) precompute the pooled audio
// embedding so training never re-runs the backbone.
// as_text_only builds auxiliary-stream examples: prefixes omitted entirely.
template <typename S>
Prepared<S> prepare_examples(const std::vector<UtteranceRecord>& records,
                             const std::filesystem::path& manifest_path,
                             const ModalitySet& modalities, const MinMaxScaler& scaler,
                             Eigen::Index text_len, ToyEncoder<S>* frozen_encoder,
                             bool as_text_only = false) {
  const bool needs_audio = modalities.audio && !as_text_only;
  const bool needs_ds = modalities.ds && !as_text_only;
  ByteTokenizer tok;
  Prepared<S> out;
  out.examples.reserve(records.size());
  for (const auto& r : records) {
    ExampleInputs<S> ex;
    ex.tokens = tok.pad_tokens(tok.encode(r.transcript), static_cast<std::size_t>(text_len));
    ex.label_token = (r.label == Label::kDirected) ? Tokens::kYes : Tokens::kNo;
    ex.use_prefixes = !as_text_only;
    if (needs_audio) {
      if (!r.has_audio())
        throw DataError("audio features missing for record " + r.id +
                        " but the model includes the audio modality");
      MatF f = read_features(resolve_audio_ref(manifest_path, r.audio_ref));
      ex.frames = f.template cast<S>();
      ex.has_audio = true;
      if (frozen_encoder != nullptr) {
        ex.pooled = frozen_encoder->encode_pooled(ex.frames);
        ex.frames.resize(0, 0);  // no longer needed; free the memory
      }
    }
    if (needs_ds) ex.ds_scaled = scaler.transform(r.decoder_signals_raw).as_array();
    out.examples.push_back(std::move(ex));
    out.labels.push_back(r.label);
    out.ids.push_back(r.id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shared batching machinery
// ---------------------------------------------------------------------------

namespace train_detail {

// One optimizer step's worth of example indices, drawn from one stream.
struct Batch {
  bool text_only = false;
  std::vector<std::size_t> idx;
};

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(idx);
  return idx;
}

inline void chop(const std::vector<std::size_t>& order, std::int64_t batch_size, bool text_only,
                 std::vector<Batch>& out) {
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    Batch b;
    b.text_only = text_only;
    const std::size_t end =
        std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    b.idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                 order.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(std::move(b));
  }
}

inline std::int64_t batches_for(std::size_t n, std::int64_t batch_size) {
  return static_cast<std::int64_t>((n + static_cast<std::size_t>(batch_size) - 1) /
                                   static_cast<std::size_t>(batch_size));
}

}  // namespace train_detail

// ---------------------------------------------------------------------------
// Fusion-model training
// ---------------------------------------------------------------------------

// Trains in place. `text_only` may be empty; cfg.text_only_mix picks how many
// of its examples join each epoch (-1: half the multimodal count). The
// optional callback runs after each epoch (1-based) — checkpoint hooks.
template <typename S>
TrainResult train_fusion(FusionModel<S>& model, const std::vector<ExampleInputs<S>>& mm,
                         const std::vector<ExampleInputs<S>>& text_only, const TrainConfig& cfg,
                         const std::function<void(std::int64_t)>& after_epoch = {}) {
  cfg.validate();
  if (mm.empty()) throw DataError("training corpus is empty");

  // Fixed auxiliary subset for the whole run; epochs reshuffle its order.
  std::size_t k = 0;
  if (!text_only.empty()) {
    const std::int64_t want =
        cfg.text_only_mix < 0 ? static_cast<std::int64_t>(mm.size()) / 2 : cfg.text_only_mix;
    if (want > static_cast<std::int64_t>(text_only.size()))
      throw ConfigError("text_only_mix = " + std::to_string(want) +
                        " exceeds the text-only corpus size " +
                        std::to_string(text_only.size()));
    k = static_cast<std::size_t>(want);
  } else if (cfg.text_only_mix > 0) {
    throw ConfigError("text_only_mix > 0 requires a text-only corpus");
  }
  std::vector<std::size_t> aux_pool =
      train_detail::shuffled_indices(text_only.size(), sub_seed(cfg.seed, "textonly-pick", 0));
  aux_pool.resize(k);

  const std::int64_t eb = cfg.effective_batch_size;
  const std::int64_t micro = cfg.resolved_micro_batch();
  const std::int64_t batches_per_epoch =
      train_detail::batches_for(mm.size(), eb) + train_detail::batches_for(k, eb);
  const std::int64_t total_steps = cfg.epochs * batches_per_epoch;

  AdamW<S> opt(model.params(), cfg.adam);
  TrainResult result;
  result.total_steps = total_steps;
  std::int64_t step = 0;

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> mm_order = train_detail::shuffled_indices(
        mm.size(), sub_seed(cfg.seed, "epoch-mm", static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> aux_order = aux_pool;
    Rng aux_rng(sub_seed(cfg.seed, "epoch-aux", static_cast<std::uint64_t>(epoch)));
    aux_rng.shuffle(aux_order);

    std::vector<train_detail::Batch> batches;
    train_detail::chop(mm_order, eb, /*text_only=*/false, batches);
    train_detail::chop(aux_order, eb, /*text_only=*/true, batches);
    Rng order_rng(sub_seed(cfg.seed, "epoch-order", static_cast<std::uint64_t>(epoch)));
    order_rng.shuffle(batches);

    double epoch_loss_sum = 0.0;
    for (const auto& batch : batches) {
      ++step;
      const double lr = lr_at(step, total_steps, cfg.peak_lr, cfg.warmup_fraction);
      model.zero_grads();
      Rng drop_rng(sub_seed(cfg.seed, "dropout", static_cast<std::uint64_t>(step)));
      const std::size_t B = batch.idx.size();
      const double scale = 1.0 / static_cast<double>(B);
      double loss_sum = 0.0;
      // Micro-batch slicing structures the loop; per-example accumulation in
      // batch order keeps every slicing arithmetically identical.
      for (std::size_t off = 0; off < B; off += static_cast<std::size_t>(micro)) {
        const std::size_t hi = std::min(B, off + static_cast<std::size_t>(micro));
        for (std::size_t i = off; i < hi; ++i) {
          const ExampleInputs<S>& ex =
              batch.text_only ? text_only[batch.idx[i]] : mm[batch.idx[i]];
          loss_sum +=
              model.run_example(ex, cfg.loss_mask_mode, &drop_rng, scale).loss;
        }
      }
      const double batch_loss = loss_sum / static_cast<double>(B);
      if (!std::isfinite(batch_loss))
        throw TrainingError("non-finite loss at step " + std::to_string(step));
      const double gn = opt.grad_norm();
      try {
        opt.step(lr);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at step " + std::to_string(step));
      }
      result.rows.push_back({step, epoch, lr, batch_loss, gn});
      epoch_loss_sum += batch_loss;
    }
    result.epoch_mean_loss.push_back(epoch_loss_sum / static_cast<double>(batches.size()));
    if (after_epoch) after_epoch(epoch);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Baseline classifier training
// ---------------------------------------------------------------------------

template <typename S>
TrainResult train_clf(ClfModel<S>& clf, const std::vector<MatX<S>>& frames,
                      const std::vector<Label>& labels, const ClfConfig& cfg) {
  cfg.validate();
  if (frames.empty()) throw DataError("training corpus is empty");
  DDSD_CHECK(frames.size() == labels.size(), "frames/labels size mismatch");

  const std::int64_t eb = cfg.effective_batch_size;
  const std::int64_t batches_per_epoch = train_detail::batches_for(frames.size(), eb);
  const std::int64_t total_steps = cfg.epochs * batches_per_epoch;

  AdamW<S> opt(clf.params(), cfg.adam);
  TrainResult result;
  result.total_steps = total_steps;
  std::int64_t step = 0;

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train_detail::shuffled_indices(
        frames.size(), sub_seed(cfg.seed, "epoch-clf", static_cast<std::uint64_t>(epoch)));
    std::vector<train_detail::Batch> batches;
    train_detail::chop(order, eb, false, batches);

    double epoch_loss_sum = 0.0;
    for (const auto& batch : batches) {
      ++step;
      const double lr = lr_at(step, total_steps, cfg.peak_lr, cfg.warmup_fraction);
      clf.zero_grads();
      const std::size_t B = batch.idx.size();
      const double scale = 1.0 / static_cast<double>(B);
      double loss_sum = 0.0;
      for (std::size_t i : batch.idx)
        loss_sum += clf.loss_example(frames[i], labels[i] == Label::kDirected, scale);
      const double batch_loss = loss_sum / static_cast<double>(B);
      if (!std::isfinite(batch_loss))
        throw TrainingError("non-finite loss at step " + std::to_string(step));
      const double gn = opt.grad_norm();
      try {
        opt.step(lr);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at step " + std::to_string(step));
      }
      result.rows.push_back({step, epoch, lr, batch_loss, gn});
      epoch_loss_sum += batch_loss;
    }
    result.epoch_mean_loss.push_back(epoch_loss_sum / static_cast<double>(batches.size()));
  }
  return result;
}

}  // namespace ddsd
