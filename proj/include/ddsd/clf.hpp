#pragma once

// Audio-only baseline classifier: a per-frame linear layer over the frozen
// encoder's embeddings, mean pooling across time, and a final linear layer to
// two logits. Deliberately kept literal — linear, pool, linear, with no
// activation between — so it represents the plain linear readout it is meant
// to be.

#include <cmath>
#include <cstdint>
#include <string>

#include "ddsd/audio_encoder.hpp"
#include "ddsd/common.hpp"
#include "ddsd/matrix.hpp"
#include "ddsd/nn.hpp"

namespace ddsd {

inline constexpr Eigen::Index kClfHiddenDim = 256;
inline constexpr Eigen::Index kClfClasses = 2;  // col 0: non-directed, col 1: directed

template <typename S>
class ClfModel {
public:
  void init(const ToyEncoderConfig& encoder_cfg, Eigen::Index hidden, std::uint64_t seed) {
    if (hidden < 1) throw ConfigError("clf hidden units must be >= 1");
    ToyEncoderConfig frozen = encoder_cfg;
    frozen.trainable = false;  // the backbone always stays frozen here
    encoder.init(frozen, seed);
    fc1.init("clf.fc1", frozen.output_dim, hidden);
    fc2.init("clf.fc2", hidden, kClfClasses);
    init_xavier(fc1.w, seed);
    init_xavier(fc2.w, seed);
  }

  Eigen::Index hidden_dim() const { return fc1.d_out(); }

  // frames: T x F -> logits: 1 x 2.
  MatX<S> forward(const MatX<S>& frames) {
    MatX<S> e = encoder.encode(frames);           // T x N, frozen
    MatX<S> h = fc1.forward(e);                   // T x hidden
    pool_T_ = h.rows();
    MatX<S> pooled = mean_pool(h).transpose();    // 1 x hidden
    return fc2.forward(pooled);                   // 1 x 2
  }

  // dlogits: 1 x 2. Gradients stop at the frozen encoder.
  void backward(const MatX<S>& dlogits) {
    MatX<S> dpooled = fc2.backward(dlogits);
    MatX<S> dh = (VecX<S>::Ones(pool_T_) / static_cast<S>(pool_T_)) * dpooled.row(0);
    fc1.backward(dh);  // encoder frozen: its input gradient is discarded
  }

  // Cross-entropy over the two logits; accumulates grad_scale * d/d(theta)
  // when grad_scale != 0. Returns the loss.
  double loss_example(const MatX<S>& frames, bool directed, double grad_scale) {
    MatX<S> logits = forward(frames);
    const double z0 = static_cast<double>(logits(0, 0));
    const double z1 = static_cast<double>(logits(0, 1));
    const double mx = std::max(z0, z1);
    const double lse = mx + std::log(std::exp(z0 - mx) + std::exp(z1 - mx));
    const int target = directed ? 1 : 0;
    const double nll = lse - static_cast<double>(logits(0, target));
    if (grad_scale != 0.0) {
      MatX<S> dlogits(1, 2);
      dlogits(0, 0) = static_cast<S>(grad_scale * std::exp(z0 - lse));
      dlogits(0, 1) = static_cast<S>(grad_scale * std::exp(z1 - lse));
      dlogits(0, target) -= static_cast<S>(grad_scale);
      backward(dlogits);
    }
    return nll;
  }

  // p(directed) via softmax over the two logits.
  double score(const MatX<S>& frames) {
    MatX<S> logits = forward(frames);
    const double d = static_cast<double>(logits(0, 1)) - static_cast<double>(logits(0, 0));
    return 1.0 / (1.0 + std::exp(-d));
  }

  ParamRefs<S> params() {
    ParamRefs<S> out;
    encoder.collect_params(out);
    fc1.collect_params(out);
    fc2.collect_params(out);
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

  ToyEncoder<S> encoder;
  Linear<S> fc1, fc2;

private:
  Eigen::Index pool_T_ = 1;
};

}  // namespace ddsd
