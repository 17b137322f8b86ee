#pragma once

// Toy audio encoder: a frame-wise affine + tanh stack standing in for the
// frozen pretrained encoders of the real system, plus mean pooling over the
// time axis. Frame-wise means no temporal mixing by default — each output
// row depends only on its own input frame; an optional fixed smoothing pass
// is config-gated for ablation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ddsd/common.hpp"
#include "ddsd/features.hpp"
#include "ddsd/matrix.hpp"
#include "ddsd/nn.hpp"

namespace ddsd {

struct ToyEncoderConfig {
  Eigen::Index input_dim = 20;   // F
  Eigen::Index hidden_dim = 64;
  Eigen::Index output_dim = 64;  // N
  Eigen::Index n_layers = 1;
  bool trainable = false;  // mirror the frozen pretrained backbones
  // Ablation switch: blend each frame with its neighbours ([0.25, 0.5, 0.25],
  // edge frames renormalized) after the first layer.
  bool temporal_mixing = false;

  void validate() const {
    if (input_dim < 1 || hidden_dim < 1 || output_dim < 1 || n_layers < 1)
      throw ConfigError("invalid encoder config: all dims and n_layers must be >= 1");
  }
};

// Mean over frames: temporal aggregation to a single vector. Each column is
// summed over a canonical (sorted) order of its values, in double — pooling
// is thereby a function of the *multiset* of rows, so permuting frames gives
// a bit-identical result by construction, not merely up to rounding.
template <typename S>
VecX<S> mean_pool(const MatX<S>& seq) {
  if (seq.rows() < 1 || seq.cols() < 1)
    throw ShapeError("mean_pool needs a nonempty T x N sequence, got " +
                     std::to_string(seq.rows()) + "x" + std::to_string(seq.cols()));
  if (!seq.allFinite()) throw ValidationError("embedding sequence contains non-finite values");
  const Eigen::Index T = seq.rows(), N = seq.cols();
  VecX<S> out(N);
  std::vector<double> column(static_cast<std::size_t>(T));
  for (Eigen::Index j = 0; j < N; ++j) {
    for (Eigen::Index t = 0; t < T; ++t)
      column[static_cast<std::size_t>(t)] = static_cast<double>(seq(t, j));
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (double v : column) sum += v;
    out(j) = static_cast<S>(sum / static_cast<double>(T));
  }
  return out;
}

template <typename S>
class ToyEncoder {
public:
  void init(const ToyEncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    cfg_ = cfg;
    layers_.resize(cfg.n_layers);
    for (Eigen::Index i = 0; i < cfg.n_layers; ++i) {
      const Eigen::Index d_in = i == 0 ? cfg.input_dim : cfg.hidden_dim;
      const Eigen::Index d_out = i == cfg.n_layers - 1 ? cfg.output_dim : cfg.hidden_dim;
      layers_[i].init("encoder.l" + std::to_string(i), d_in, d_out);
      init_xavier(layers_[i].w, seed);
      layers_[i].set_base_requires_grad(cfg.trainable);
    }
  }

  const ToyEncoderConfig& config() const { return cfg_; }

  // features: T x F -> embeddings: T x N. Every affine layer is followed by
  // tanh (zero parameters therefore give an all-zeros output).
  MatX<S> encode(const MatX<S>& features) {
    if (features.cols() != cfg_.input_dim)
      throw ShapeError("encoder expected feature dim " + std::to_string(cfg_.input_dim) +
                       ", got " + std::to_string(features.cols()));
    if (features.rows() < 1) throw ShapeError("encoder needs at least one frame");
    tanh_caches_.resize(layers_.size());
    MatX<S> x = features;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i].forward(x);
      x = x.array().tanh().matrix();
      tanh_caches_[i] = x;
      if (i == 0 && cfg_.temporal_mixing) x = smooth_forward(x);
    }
    return x;
  }

  // Encode then mean-pool. Caches T for pool backward.
  VecX<S> encode_pooled(const MatX<S>& features) {
    MatX<S> h = encode(features);
    pool_T_ = h.rows();
    return mean_pool(h);
  }

  // Backward from d(pooled): each frame receives dpooled / T.
  void backward_pooled(const VecX<S>& dpooled) {
    MatX<S> dh = (VecX<S>::Ones(pool_T_) / static_cast<S>(pool_T_)) * dpooled.transpose();
    backward(dh);
  }

  void backward(MatX<S> dh) {
    for (std::size_t ri = layers_.size(); ri-- > 0;) {
      if (ri == 0 && cfg_.temporal_mixing) dh = smooth_backward(dh);
      dh = (dh.array() * (S(1) - tanh_caches_[ri].array().square())).matrix();
      dh = layers_[ri].backward(dh);
    }
  }

  void collect_params(ParamRefs<S>& out) {
    for (auto& l : layers_) l.collect_params(out);
  }

  bool trainable() const { return cfg_.trainable; }

private:
  // Fixed [0.25, 0.5, 0.25] blend along time; edges renormalize over the
  // in-range taps. Linear, so backward is the transposed stencil.
  MatX<S> smooth_forward(const MatX<S>& x) const {
    const Eigen::Index T = x.rows();
    if (T == 1) return x;
    MatX<S> y(T, x.cols());
    for (Eigen::Index t = 0; t < T; ++t) {
      S wsum = S(0.5);
      y.row(t) = S(0.5) * x.row(t);
      if (t > 0) {
        y.row(t) += S(0.25) * x.row(t - 1);
        wsum += S(0.25);
      }
      if (t + 1 < T) {
        y.row(t) += S(0.25) * x.row(t + 1);
        wsum += S(0.25);
      }
      y.row(t) /= wsum;
    }
    return y;
  }

  MatX<S> smooth_backward(const MatX<S>& dy) const {
    const Eigen::Index T = dy.rows();
    if (T == 1) return dy;
    MatX<S> dx = MatX<S>::Zero(T, dy.cols());
    for (Eigen::Index t = 0; t < T; ++t) {
      S wsum = S(0.5) + (t > 0 ? S(0.25) : S(0)) + (t + 1 < T ? S(0.25) : S(0));
      dx.row(t) += (S(0.5) / wsum) * dy.row(t);
      if (t > 0) dx.row(t - 1) += (S(0.25) / wsum) * dy.row(t);
      if (t + 1 < T) dx.row(t + 1) += (S(0.25) / wsum) * dy.row(t);
    }
    return dx;
  }

  ToyEncoderConfig cfg_;
  std::vector<Linear<S>> layers_;
  std::vector<MatX<S>> tanh_caches_;
  Eigen::Index pool_T_ = 1;
};

// Load a precomputed embedding sequence from the binary feature format.
inline MatF load_embeddings(const std::filesystem::path& path) { return read_features(path); }

}  // namespace ddsd
