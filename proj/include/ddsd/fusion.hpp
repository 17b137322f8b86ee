#pragma once

// The fusion architecture: token embedder + mapping networks + decoder-only
// LM, assembled as
//
//     [a?][b?][tok(t_1) ... tok(t_l)][SEP]
//
// where a = M1(mean_pool(encoder(audio))) and b = M2(scaled decoder signals)
// are single prefix vectors in token-embedding space, present according to
// the modality set (or omitted per-example for modality-dropout training).
// The device-directedness decision is read at the SEP position: the label
// token (YES/NO) is scored by the LM head there.
//
// Sequence packing: PAD token rows are excluded from attention everywhere
// (they are invalid keys, and no loss reads their outputs), so the internal
// fast path simply drops those rows and keeps original position indices for
// the survivors. `forward_full` keeps the full (P + l + 1)-row layout —
// PAD rows included — for contract checks; both paths agree bit-for-bit on
// surviving rows.

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ddsd/audio_encoder.hpp"
#include "ddsd/common.hpp"
#include "ddsd/decoder_signals.hpp"
#include "ddsd/manifest.hpp"
#include "ddsd/mapping.hpp"
#include "ddsd/matrix.hpp"
#include "ddsd/nn.hpp"
#include "ddsd/tokenizer.hpp"
#include "ddsd/transformer.hpp"

namespace ddsd {

struct ModalitySet {
  bool text = false;
  bool audio = false;
  bool ds = false;

  int prefix_count() const { return (audio ? 1 : 0) + (ds ? 1 : 0); }
  bool empty() const { return !text && !audio && !ds; }

  static ModalitySet from_names(const std::vector<std::string>& names) {
    ModalitySet m;
    for (const auto& n : names) {
      if (n == "text") m.text = true;
      else if (n == "audio") m.audio = true;
      else if (n == "ds") m.ds = true;
      else throw ConfigError("unknown modality '" + n + "' (expected text, audio, ds)");
    }
    if (m.empty()) throw ConfigError("modality set must be nonempty");
    return m;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    if (text) out.push_back("text");
    if (audio) out.push_back("audio");
    if (ds) out.push_back("ds");
    return out;
  }

  std::string to_string() const {
    std::string s;
    for (const auto& n : names()) {
      if (!s.empty()) s += "+";
      s += n;
    }
    return s;
  }
};

struct LoraSpec {
  Eigen::Index r = 8;
  double alpha = 32.0;
  std::vector<std::string> targets = {"attn_q", "attn_v"};
  bool base_frozen = true;

  void validate() const {
    if (r < 1) throw ConfigError("lora rank must be >= 1");
    if (targets.empty()) throw ConfigError("lora target set must be nonempty");
    static const std::set<std::string> known = {"attn_q", "attn_k", "attn_v",
                                                "attn_o", "mlp_fc", "mlp_proj"};
    for (const auto& t : targets)
      if (!known.count(t)) throw ConfigError("unknown lora target '" + t + "'");
  }
};

struct FusionConfig {
  LMConfig lm;
  ToyEncoderConfig encoder;
  ModalitySet modalities{true, true, true};
  Eigen::Index text_len = 64;  // l: tokens are padded/truncated to this
  std::optional<LoraSpec> lora;

  void validate() const {
    if (modalities.empty()) throw ConfigError("modality set must be nonempty");
    if (text_len < 1) throw ConfigError("text_len must be >= 1");
    lm.validate(text_len);
    encoder.validate();
    if (lora) lora->validate();
  }
};

enum class LossMode { kDecisionOnly, kFullSequence };

inline LossMode loss_mode_from_string(const std::string& s) {
  if (s == "decision_only") return LossMode::kDecisionOnly;
  if (s == "full_sequence") return LossMode::kFullSequence;
  throw ConfigError("unknown loss_mask_mode '" + s +
                    "' (expected decision_only or full_sequence)");
}

// One example, preprocessed into model-ready tensors.
template <typename S>
struct ExampleInputs {
  TokenSequence tokens;               // padded to l
  bool has_audio = false;
  MatX<S> frames;                     // raw acoustic features (T x F)
  std::optional<VecX<S>> pooled;      // optional cached encoder output
  std::array<double, 4> ds_scaled{};  // decoder signals scaled to [0,1]
  std::optional<std::int32_t> label_token;  // YES/NO when the label is known
  bool use_prefixes = true;  // false = modality-dropout example (text only)
};

// The assembled LM input for one example.
template <typename S>
struct AssembledInput {
  MatX<S> x0;                    // rows x E, pre-position content vectors
  std::vector<int> positions;    // original layout index per row
  std::vector<char> key_valid;   // attendable as a key?
  std::vector<std::int32_t> row_token;  // token id per row; -1 = prefix row
  int decision_row = -1;         // SEP row index (within x0's rows)
  int audio_row = -1, ds_row = -1;
  int first_token_row = -1;      // row of t_1, or -1 if packed & no real tokens
  std::size_t real_len = 0;
};

template <typename S>
struct ExampleRun {
  double loss = 0.0;           // decision term + optional hypothesis-token terms
  double decision_loss = 0.0;
  double score = 0.0;          // p(directed): sigmoid(z_yes - z_no)
};

template <typename S>
class FusionModel {
public:
  void init(const FusionConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    cfg_ = cfg;
    seed_ = seed;
    wte.init_shape("wte", cfg.lm.vocab_size, cfg.lm.embed_dim, /*decay=*/true);
    init_normal(wte, seed, 0.02);
    lm.init(cfg.lm, seed);
    // The head is meaningful from the start (frozen-base adapter training
    // still needs a usable readout).
    init_normal(lm.head.w, seed, 0.02);
    if (cfg.modalities.audio) {
      encoder.init(cfg.encoder, seed);
      m1.init("m1", cfg.encoder.output_dim, cfg.lm.embed_dim, seed);
    }
    if (cfg.modalities.ds) m2.init("m2", kNumDecoderSignals, cfg.lm.embed_dim, seed);
    if (cfg.lora) apply_lora(*cfg.lora);
  }

  const FusionConfig& config() const { return cfg_; }

  // Attach low-rank adapters to the targeted projections of every block and
  // apply the freezing policy. Mapping networks stay trainable; the encoder
  // follows its own config.
  void apply_lora(const LoraSpec& spec) {
    spec.validate();
    cfg_.lora = spec;
    const S scale = static_cast<S>(spec.alpha / static_cast<double>(spec.r));
    for (auto& block : lm.blocks) {
      for (const auto& t : spec.targets)
        block_target(block, t).attach_adapter(spec.r, scale, seed_);
    }
    if (spec.base_frozen) {
      ParamRefs<S> base;
      base.push_back(&wte);
      lm.collect_params(base);
      for (auto* p : base) p->requires_grad = false;
      for (auto& block : lm.blocks)
        for (const auto& t : spec.targets) {
          auto& lin = block_target(block, t);
          lin.adapter->A.requires_grad = true;
          lin.adapter->B.requires_grad = true;
        }
    }
  }

  ParamRefs<S> params() {
    ParamRefs<S> out;
    out.push_back(&wte);
    lm.collect_params(out);
    if (cfg_.modalities.audio) {
      m1.collect_params(out);
      encoder.collect_params(out);
    }
    if (cfg_.modalities.ds) m2.collect_params(out);
    std::set<std::string> names;
    for (auto* p : out) DDSD_CHECK(names.insert(p->name).second, "duplicate tensor " + p->name);
    return out;
  }

  std::int64_t count_trainable_params() {
    std::int64_t n = 0;
    for (auto* p : params())
      if (p->requires_grad) n += p->numel();
    return n;
  }

  void zero_grads() {
    for (auto* p : params()) p->zero_grad();
  }

  // -------------------------------------------------------------------------
  // Input assembly
  // -------------------------------------------------------------------------

  // Map the pooled audio embedding / scaled signals to prefix vectors.
  // Exposed separately so contract tests can call them directly.
  MatX<S> map_audio(const MatX<S>& pooled_rows, Rng* rng) {
    DDSD_CHECK(cfg_.modalities.audio, "map_audio on a model without the audio modality");
    return m1.forward(pooled_rows, rng);
  }
  MatX<S> map_ds(const MatX<S>& scaled_rows, Rng* rng) {
    DDSD_CHECK(cfg_.modalities.ds, "map_ds on a model without the ds modality");
    for (Eigen::Index i = 0; i < scaled_rows.rows(); ++i)
      for (Eigen::Index j = 0; j < scaled_rows.cols(); ++j)
        if (!(scaled_rows(i, j) >= S(0) && scaled_rows(i, j) <= S(1)))
          throw ValidationError("decoder-signal prefix input outside [0,1]; scale before mapping");
    return m2.forward(scaled_rows, rng);
  }

  // Build the LM input. `packed` drops PAD token rows (the fast path);
  // unpacked keeps the full P + l + 1 layout for contract checks.
  AssembledInput<S> assemble_input(const std::optional<VecX<S>>& a, const std::optional<VecX<S>>& b,
                                   const TokenSequence& tokens, bool packed) const {
    const Eigen::Index l = cfg_.text_len;
    if (static_cast<Eigen::Index>(tokens.ids.size()) != l)
      throw ShapeError("assemble_input expects tokens padded to l=" + std::to_string(l) +
                       ", got length " + std::to_string(tokens.ids.size()));
    const int P = (a ? 1 : 0) + (b ? 1 : 0);
    AssembledInput<S> out;
    out.real_len = tokens.real_len;
    const Eigen::Index rows =
        packed ? P + static_cast<Eigen::Index>(tokens.real_len) + 1 : P + l + 1;
    out.x0.resize(rows, cfg_.lm.embed_dim);
    out.positions.resize(rows);
    out.key_valid.assign(rows, 1);
    out.row_token.assign(rows, -1);

    Eigen::Index r = 0;
    int pos = 0;
    if (a) {
      out.audio_row = static_cast<int>(r);
      out.x0.row(r) = a->transpose();
      out.positions[r] = pos++;
      ++r;
    }
    if (b) {
      out.ds_row = static_cast<int>(r);
      out.x0.row(r) = b->transpose();
      out.positions[r] = pos++;
      ++r;
    }
    const Eigen::Index n_tok = packed ? static_cast<Eigen::Index>(tokens.real_len) : l;
    if (n_tok > 0) out.first_token_row = static_cast<int>(r);
    for (Eigen::Index j = 0; j < n_tok; ++j, ++r) {
      const std::int32_t id = tokens.ids[static_cast<std::size_t>(j)];
      out.x0.row(r) = wte.value.row(id);
      out.positions[r] = P + static_cast<int>(j);
      out.row_token[r] = id;
      if (id == Tokens::kPad) out.key_valid[r] = 0;
    }
    out.decision_row = static_cast<int>(r);
    out.x0.row(r) = wte.value.row(Tokens::kSep);
    out.positions[r] = P + static_cast<int>(l);
    out.row_token[r] = Tokens::kSep;
    return out;
  }

  // -------------------------------------------------------------------------
  // Forward / loss / backward
  // -------------------------------------------------------------------------

  // Full-layout forward returning logits at every position:
  // (P + l + 1) x vocab. Eval mode, contract surface.
  MatX<S> forward_full(const ExampleInputs<S>& ex) {
    AssembledInput<S> in = prepare(ex, /*rng=*/nullptr, /*packed=*/false);
    MatX<S> h = lm.forward_hidden(in.x0, in.positions, in.key_valid, nullptr);
    return lm.head.forward(h);
  }

  // One example through the packed path. If grad_scale != 0, runs backward
  // and accumulates grad_scale * d(example loss)/d(theta) into parameter
  // grads. rng != nullptr enables dropout (training mode).
  ExampleRun<S> run_example(const ExampleInputs<S>& ex, LossMode mode, Rng* rng,
                            double grad_scale) {
    AssembledInput<S> in = prepare(ex, rng, /*packed=*/true);
    MatX<S> h = lm.forward_hidden(in.x0, in.positions, in.key_valid, rng);

    // Select the rows whose logits the loss reads: each real token t_j is
    // predicted from the row *before* it (its conditioning context); t_1 has
    // a predictor only when a prefix precedes it. The decision token is
    // predicted at the SEP row.
    std::vector<int> sel_rows;
    std::vector<std::int32_t> sel_targets;
    if (mode == LossMode::kFullSequence && in.real_len > 0) {
      const int P = (in.audio_row >= 0 ? 1 : 0) + (in.ds_row >= 0 ? 1 : 0);
      for (std::size_t j = 0; j < in.real_len; ++j) {
        const std::int32_t target = in.row_token[in.first_token_row + j];
        if (j == 0) {
          if (P > 0)
            sel_rows.push_back(in.first_token_row - 1);  // last prefix row
          else
            continue;  // no conditioning position in front of t_1
        } else {
          sel_rows.push_back(in.first_token_row + static_cast<int>(j) - 1);
        }
        sel_targets.push_back(target);
      }
    }
    const std::size_t decision_idx = sel_rows.size();
    sel_rows.push_back(in.decision_row);
    if (ex.label_token) {
      if (*ex.label_token != Tokens::kYes && *ex.label_token != Tokens::kNo)
        throw ValidationError("label token must be YES or NO");
      sel_targets.push_back(*ex.label_token);
    } else if (grad_scale != 0.0) {
      throw DataError("cannot compute a training loss without a label");
    }

    MatX<S> h_sel(sel_rows.size(), h.cols());
    for (std::size_t k = 0; k < sel_rows.size(); ++k) h_sel.row(k) = h.row(sel_rows[k]);
    MatX<S> logits = lm.head.forward(h_sel);

    ExampleRun<S> out;
    {
      const Eigen::Index dr = static_cast<Eigen::Index>(decision_idx);
      const double zy = static_cast<double>(logits(dr, Tokens::kYes));
      const double zn = static_cast<double>(logits(dr, Tokens::kNo));
      out.score = 1.0 / (1.0 + std::exp(-(zy - zn)));
    }
    if (!ex.label_token) return out;  // inference: score only

    // Cross-entropy per selected row, accumulated in double.
    MatX<S> dlogits;
    const bool backprop = grad_scale != 0.0;
    if (backprop) dlogits.resize(logits.rows(), logits.cols());
    for (Eigen::Index k = 0; k < logits.rows(); ++k) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index v = 0; v < logits.cols(); ++v)
        mx = std::max(mx, static_cast<double>(logits(k, v)));
      double lse = 0.0;
      for (Eigen::Index v = 0; v < logits.cols(); ++v)
        lse += std::exp(static_cast<double>(logits(k, v)) - mx);
      lse = mx + std::log(lse);
      const std::int32_t target = sel_targets[static_cast<std::size_t>(k)];
      const double nll = lse - static_cast<double>(logits(k, target));
      out.loss += nll;
      if (static_cast<std::size_t>(k) == decision_idx) out.decision_loss = nll;
      if (backprop) {
        for (Eigen::Index v = 0; v < logits.cols(); ++v)
          dlogits(k, v) = static_cast<S>(
              grad_scale * std::exp(static_cast<double>(logits(k, v)) - lse));
        dlogits(k, target) -= static_cast<S>(grad_scale);
      }
    }
    if (!backprop) return out;

    // Backward: head -> trunk -> input scatter.
    MatX<S> dh_sel = lm.head.backward(dlogits);
    MatX<S> dh = MatX<S>::Zero(h.rows(), h.cols());
    for (std::size_t k = 0; k < sel_rows.size(); ++k) dh.row(sel_rows[k]) += dh_sel.row(k);
    MatX<S> dx0 = lm.backward_hidden(dh);

    if (wte.requires_grad) {
      for (Eigen::Index r = 0; r < dx0.rows(); ++r)
        if (in.row_token[r] >= 0) wte.grad.row(in.row_token[r]) += dx0.row(r);
    }
    if (in.audio_row >= 0) {
      MatX<S> da = dx0.row(in.audio_row);
      MatX<S> dpooled = m1.backward(da);
      if (encoder.trainable() && encoder_ran_)
        encoder.backward_pooled(dpooled.row(0).transpose());
    }
    if (in.ds_row >= 0) m2.backward(MatX<S>(dx0.row(in.ds_row)));
    return out;
  }

  // Inference-only score for one example.
  double score(const ExampleInputs<S>& ex) {
    ExampleInputs<S> copy = ex;
    copy.label_token.reset();
    return run_example(copy, LossMode::kDecisionOnly, nullptr, 0.0).score;
  }

  Parameter<S> wte;
  DecoderLM<S> lm;
  MappingNetwork<S> m1, m2;
  ToyEncoder<S> encoder;
  MinMaxScaler scaler;

private:
  Linear<S>& block_target(TransformerBlock<S>& b, const std::string& t) {
    if (t == "attn_q") return b.attn_q;
    if (t == "attn_k") return b.attn_k;
    if (t == "attn_v") return b.attn_v;
    if (t == "attn_o") return b.attn_o;
    if (t == "mlp_fc") return b.mlp_fc;
    if (t == "mlp_proj") return b.mlp_proj;
    throw ConfigError("unknown lora target '" + t + "'");
  }

  // Compute prefix vectors per the modality set and the example's dropout
  // flag, then assemble.
  AssembledInput<S> prepare(const ExampleInputs<S>& ex, Rng* rng, bool packed) {
    std::optional<VecX<S>> a, b;
    const bool prefixes = ex.use_prefixes;
    encoder_ran_ = false;
    if (prefixes && cfg_.modalities.audio) {
      VecX<S> pooled;
      if (ex.pooled) {
        DDSD_CHECK(!encoder.trainable(),
                   "cached pooled embeddings are only valid with a frozen encoder");
        pooled = *ex.pooled;
      } else {
        if (!ex.has_audio)
          throw DataError("audio features missing for a model with the audio modality");
        pooled = encoder.encode_pooled(ex.frames);
        encoder_ran_ = true;
      }
      MatX<S> arow = map_audio(MatX<S>(pooled.transpose()), rng);
      a = arow.row(0).transpose();
    }
    if (prefixes && cfg_.modalities.ds) {
      MatX<S> srow(1, 4);
      for (int k = 0; k < 4; ++k) srow(0, k) = static_cast<S>(ex.ds_scaled[k]);
      MatX<S> brow = map_ds(srow, rng);
      b = brow.row(0).transpose();
    }
    TokenSequence toks = ex.tokens;
    if (!cfg_.modalities.text) {
      // Text modality off: the l token slots exist but stay empty (all PAD).
      toks.ids.assign(static_cast<std::size_t>(cfg_.text_len), Tokens::kPad);
      toks.real_len = 0;
    }
    return assemble_input(a, b, toks, packed);
  }

  FusionConfig cfg_;
  std::uint64_t seed_ = 0;
  bool encoder_ran_ = false;
};

}  // namespace ddsd
