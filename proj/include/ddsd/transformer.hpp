#pragma once

// Small decoder-only transformer, written out module by module with explicit
// backward passes (no tape).
//
// Architecture: learned absolute position embeddings added to the caller's
// input vectors, then pre-norm blocks
//     x = x + attn_proj(attention(ln1(x)))
//     x = x + mlp_proj(gelu(mlp_fc(ln2(x))))
// followed by a final LayerNorm and an untied output head. The head is
// applied by the caller at selected rows — training needs logits at a
// handful of positions, not all of them.
//
// Masking: attention position i may attend to position j iff j <= i (causal
// order by *original* position index) AND j is a valid key (not PAD). A
// query row whose allowed-key set is empty produces a zero attention output
// instead of NaN. Because the mask excludes PAD keys everywhere and no loss
// ever reads a PAD row's output, dropping PAD rows from the computed
// sequence ("packing") gives bit-for-bit identical results at the surviving
// rows — the trainer exploits this; the tests assert it.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ddsd/common.hpp"
#include "ddsd/matrix.hpp"
#include "ddsd/nn.hpp"
#include "ddsd/tokenizer.hpp"

namespace ddsd {

struct LMConfig {
  Eigen::Index embed_dim = 64;  // E
  Eigen::Index n_layers = 4;
  Eigen::Index n_heads = 4;
  Eigen::Index vocab_size = Tokens::kVocabSize;
  Eigen::Index max_seq_len = 67;  // must cover prefixes + text + SEP
  Eigen::Index ff_dim = 0;        // 0 = default 4*E
  double dropout = 0.1;

  Eigen::Index resolved_ff_dim() const { return ff_dim > 0 ? ff_dim : 4 * embed_dim; }

  void validate(Eigen::Index text_len) const {
    const auto bad = [](const std::string& why) -> void {
      throw ConfigError("invalid LM config: " + why);
    };
    if (embed_dim < 1 || n_layers < 1 || n_heads < 1) bad("dims must be >= 1");
    if (embed_dim % n_heads != 0) bad("embed_dim must be divisible by n_heads");
    if (vocab_size < Tokens::kVocabSize)
      bad("vocab_size must be >= " + std::to_string(Tokens::kVocabSize));
    if (max_seq_len < text_len + 3)
      bad("max_seq_len must be >= text length + 3 (two prefixes + SEP), got " +
          std::to_string(max_seq_len) + " for text length " + std::to_string(text_len));
    if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout must lie in [0,1)");
  }
};

template <typename S>
class TransformerBlock {
public:
  void init(const std::string& name, const LMConfig& cfg, std::uint64_t seed) {
    const Eigen::Index E = cfg.embed_dim;
    n_heads_ = cfg.n_heads;
    head_dim_ = E / cfg.n_heads;
    ln1.init(name + ".ln1", E);
    ln2.init(name + ".ln2", E);
    attn_q.init(name + ".attn_q", E, E);
    attn_k.init(name + ".attn_k", E, E);
    attn_v.init(name + ".attn_v", E, E);
    attn_o.init(name + ".attn_o", E, E);
    mlp_fc.init(name + ".mlp_fc", E, cfg.resolved_ff_dim());
    mlp_proj.init(name + ".mlp_proj", cfg.resolved_ff_dim(), E);
    for (auto* lin : {&attn_q, &attn_k, &attn_v}) init_normal(lin->w, seed, 0.02);
    // Residual-branch output projections get the GPT2 1/sqrt(2L) shrink.
    const double resid_std = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
    init_normal(attn_o.w, seed, resid_std);
    init_normal(mlp_fc.w, seed, 0.02);
    init_normal(mlp_proj.w, seed, resid_std);
    drop_attn.set_p(cfg.dropout);
    drop_mlp.set_p(cfg.dropout);
  }

  // allowed: row-major S*S mask shared across layers.
  MatX<S> forward(const MatX<S>& x, const std::vector<char>& allowed, Rng* rng) {
    const Eigen::Index T = x.rows(), E = x.cols();
    MatX<S> ln1_out = ln1.forward(x);
    q_cache_ = attn_q.forward(ln1_out);
    k_cache_ = attn_k.forward(ln1_out);
    v_cache_ = attn_v.forward(ln1_out);
    const S inv = static_cast<S>(1.0 / std::sqrt(static_cast<double>(head_dim_)));

    probs_.resize(n_heads_);
    MatX<S> ctx(T, E);
    for (Eigen::Index h = 0; h < n_heads_; ++h) {
      auto Q = q_cache_.middleCols(h * head_dim_, head_dim_);
      auto K = k_cache_.middleCols(h * head_dim_, head_dim_);
      auto V = v_cache_.middleCols(h * head_dim_, head_dim_);
      MatX<S>& p = probs_[h];
      p.noalias() = Q * K.transpose();
      p *= inv;
      masked_softmax_rows_inplace(p, allowed);
      ctx.middleCols(h * head_dim_, head_dim_).noalias() = p * V;
    }
    MatX<S> attn_out = drop_attn.forward(attn_o.forward(ctx), rng);
    MatX<S> x1 = x + attn_out;

    MatX<S> mlp_out =
        drop_mlp.forward(mlp_proj.forward(gelu_.forward(mlp_fc.forward(ln2.forward(x1)))), rng);
    return x1 + mlp_out;
  }

  MatX<S> backward(const MatX<S>& dx2) {
    // MLP branch.
    MatX<S> dmlp = drop_mlp.backward(dx2);
    MatX<S> dln2 = mlp_fc.backward(gelu_.backward(mlp_proj.backward(dmlp)));
    MatX<S> dx1 = dx2 + ln2.backward(dln2);

    // Attention branch.
    MatX<S> dattn = drop_attn.backward(dx1);
    MatX<S> dctx = attn_o.backward(dattn);
    const Eigen::Index T = dctx.rows();
    const S inv = static_cast<S>(1.0 / std::sqrt(static_cast<double>(head_dim_)));
    MatX<S> dq(T, q_cache_.cols()), dk(T, k_cache_.cols()), dv(T, v_cache_.cols());
    for (Eigen::Index h = 0; h < n_heads_; ++h) {
      auto Q = q_cache_.middleCols(h * head_dim_, head_dim_);
      auto K = k_cache_.middleCols(h * head_dim_, head_dim_);
      auto V = v_cache_.middleCols(h * head_dim_, head_dim_);
      const MatX<S>& p = probs_[h];
      auto dctx_h = dctx.middleCols(h * head_dim_, head_dim_);
      MatX<S> dp = dctx_h * V.transpose();
      dv.middleCols(h * head_dim_, head_dim_).noalias() = p.transpose() * dctx_h;
      // softmax backward: ds = p .* (dp - rowsum(p .* dp)); masked cells have
      // p = 0 and therefore ds = 0, including fully-masked (all-zero) rows.
      MatX<S> ds(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const S dot = p.row(i).dot(dp.row(i));
        ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
      }
      ds *= inv;
      dq.middleCols(h * head_dim_, head_dim_).noalias() = ds * K;
      dk.middleCols(h * head_dim_, head_dim_).noalias() = ds.transpose() * Q;
    }
    MatX<S> dln1 = attn_q.backward(dq);
    dln1 += attn_k.backward(dk);
    dln1 += attn_v.backward(dv);
    return dx1 + ln1.backward(dln1);
  }

  void collect_params(ParamRefs<S>& out) {
    ln1.collect_params(out);
    attn_q.collect_params(out);
    attn_k.collect_params(out);
    attn_v.collect_params(out);
    attn_o.collect_params(out);
    ln2.collect_params(out);
    mlp_fc.collect_params(out);
    mlp_proj.collect_params(out);
  }

  LayerNorm<S> ln1, ln2;
  Linear<S> attn_q, attn_k, attn_v, attn_o, mlp_fc, mlp_proj;
  Dropout<S> drop_attn{0.0}, drop_mlp{0.0};

private:
  Eigen::Index n_heads_ = 1, head_dim_ = 1;
  Gelu<S> gelu_;
  MatX<S> q_cache_, k_cache_, v_cache_;
  std::vector<MatX<S>> probs_;
};

template <typename S>
class DecoderLM {
public:
  void init(const LMConfig& cfg, std::uint64_t seed) {
    cfg_ = cfg;
    wpe.init_shape("lm.wpe", cfg.max_seq_len, cfg.embed_dim, /*decay=*/true);
    init_normal(wpe, seed, 0.01);
    blocks.resize(cfg.n_layers);
    for (Eigen::Index i = 0; i < cfg.n_layers; ++i)
      blocks[i].init("lm.h" + std::to_string(i), cfg, seed);
    ln_f.init("lm.ln_f", cfg.embed_dim);
    // Head left zero-initialized here: a bare LM emits uniform logits, which
    // the loss-sanity checks rely on. Wrappers that train the readout
    // re-initialize head.w themselves.
    head.init("lm.head", cfg.embed_dim, cfg.vocab_size);
    drop_emb.set_p(cfg.dropout);
  }

  const LMConfig& config() const { return cfg_; }

  // Run the trunk: inputs (already embedded) -> final hidden states.
  // positions[i] is the original sequence index of row i (rows may be a
  // packed subset of the full layout); key_valid[i] marks attendable keys.
  MatX<S> forward_hidden(const MatX<S>& x0, const std::vector<int>& positions,
                         const std::vector<char>& key_valid, Rng* rng) {
    const Eigen::Index T = x0.rows();
    if (T > cfg_.max_seq_len)
      throw ShapeError("sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                       std::to_string(cfg_.max_seq_len));
    DDSD_CHECK(static_cast<Eigen::Index>(positions.size()) == T &&
                   static_cast<Eigen::Index>(key_valid.size()) == T,
               "positions/key_valid must match sequence length");
    positions_cache_ = positions;
    for (int p : positions)
      if (p < 0 || p >= cfg_.max_seq_len)
        throw ShapeError("position index " + std::to_string(p) + " out of range");

    // Causal-and-valid mask, shared by every layer.
    allowed_.assign(static_cast<std::size_t>(T) * T, 0);
    for (Eigen::Index i = 0; i < T; ++i)
      for (Eigen::Index j = 0; j < T; ++j)
        allowed_[i * T + j] = (positions[j] <= positions[i] && key_valid[j]) ? 1 : 0;

    MatX<S> x = x0;
    for (Eigen::Index i = 0; i < T; ++i) x.row(i) += wpe.value.row(positions[i]);
    x = drop_emb.forward(x, rng);
    for (auto& b : blocks) x = b.forward(x, allowed_, rng);
    return ln_f.forward(x);
  }

  // Backward through the trunk; returns d(x0).
  MatX<S> backward_hidden(const MatX<S>& dh) {
    MatX<S> dx = ln_f.backward(dh);
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) dx = it->backward(dx);
    dx = drop_emb.backward(dx);
    if (wpe.requires_grad)
      for (Eigen::Index i = 0; i < dx.rows(); ++i)
        wpe.grad.row(positions_cache_[i]) += dx.row(i);
    return dx;
  }

  void collect_params(ParamRefs<S>& out) {
    out.push_back(&wpe);
    for (auto& b : blocks) b.collect_params(out);
    ln_f.collect_params(out);
    head.collect_params(out);
  }

  Parameter<S> wpe;
  std::vector<TransformerBlock<S>> blocks;
  LayerNorm<S> ln_f;
  Linear<S> head;
  Dropout<S> drop_emb{0.0};

private:
  LMConfig cfg_;
  std::vector<int> positions_cache_;
  std::vector<char> allowed_;
};

}  // namespace ddsd
