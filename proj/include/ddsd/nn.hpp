#pragma once

// Neural-net building blocks with explicit forward/backward passes.
//
// No autodiff tape: each module computes its own analytic backward, and the
// whole stack is verified against central finite differences in the tests.
// Everything is templated on the scalar type — float for training speed,
// double for gradient checks.
//
// Conventions:
//   - activations are row-major matrices, one row per sequence position;
//   - Linear stores W as (d_in x d_out) so forward is y = x*W + b;
//   - backward(dY) accumulates parameter gradients (+=) and returns dX;
//   - modules cache what backward needs during forward; a forward is always
//     followed by at most one backward over the same cached state.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ddsd/common.hpp"
#include "ddsd/matrix.hpp"
#include "ddsd/rng.hpp"

namespace ddsd {

template <typename S>
struct Parameter {
  std::string name;
  MatX<S> value;
  MatX<S> grad;
  bool requires_grad = true;
  // Weight decay applies to genuinely 2-D tensors only (weight matrices and
  // embedding tables); biases and normalization gains are excluded.
  bool decay = false;

  void init_shape(const std::string& n, Eigen::Index rows, Eigen::Index cols, bool decay_flag) {
    name = n;
    value.setZero(rows, cols);
    grad.setZero(rows, cols);
    decay = decay_flag;
  }
  void zero_grad() { grad.setZero(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
};

template <typename S>
using ParamRefs = std::vector<Parameter<S>*>;

// Deterministic per-tensor initialization: every tensor draws from a stream
// keyed by (seed, tensor name), so init is independent of construction order.
template <typename S>
void init_normal(Parameter<S>& p, std::uint64_t seed, double stddev) {
  Rng rng(sub_seed(seed, "init." + p.name));
  for (Eigen::Index i = 0; i < p.value.rows(); ++i)
    for (Eigen::Index j = 0; j < p.value.cols(); ++j)
      p.value(i, j) = static_cast<S>(rng.normal(0.0, stddev));
}

template <typename S>
void init_xavier(Parameter<S>& p, std::uint64_t seed) {
  const double fan_in = static_cast<double>(p.value.rows());
  const double fan_out = static_cast<double>(p.value.cols());
  init_normal(p, seed, std::sqrt(2.0 / (fan_in + fan_out)));
}

// ---------------------------------------------------------------------------
// Low-rank adapter attached to a Linear: effective weight = W + (alpha/r)*B*A
// with A: r x d_in and B: d_out x r. B starts at zero, so a freshly adapted
// layer computes exactly what the base layer did.
// ---------------------------------------------------------------------------

template <typename S>
struct LoraAdapter {
  Parameter<S> A;  // r x d_in
  Parameter<S> B;  // d_out x r
  S scale = S(1);  // alpha / r

  // Cached for backward.
  MatX<S> u_cache;  // x * A^T, one row per position
};

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

template <typename S>
class Linear {
public:
  Linear() = default;

  void init(const std::string& name, Eigen::Index d_in, Eigen::Index d_out) {
    w.init_shape(name + ".w", d_in, d_out, /*decay=*/true);
    b.init_shape(name + ".b", 1, d_out, /*decay=*/false);
  }

  Eigen::Index d_in() const { return w.value.rows(); }
  Eigen::Index d_out() const { return w.value.cols(); }

  void attach_adapter(Eigen::Index r, S scale, std::uint64_t seed) {
    DDSD_CHECK(!adapter.has_value(), "adapter already attached to " + w.name);
    adapter.emplace();
    adapter->A.init_shape(w.name + ".lora_a", r, d_in(), /*decay=*/true);
    adapter->B.init_shape(w.name + ".lora_b", d_out(), r, /*decay=*/true);
    init_normal(adapter->A, seed, 0.02);
    // B stays zero: the adapter starts as an exact identity-delta.
    adapter->scale = scale;
  }

  MatX<S> forward(const MatX<S>& x) {
    if (x.cols() != d_in())
      throw ShapeError(w.name + ": expected input dim " + std::to_string(d_in()) + ", got " +
                       std::to_string(x.cols()));
    x_cache_ = x;
    MatX<S> y = x * w.value;
    y.rowwise() += b.value.row(0);
    if (adapter) {
      adapter->u_cache.noalias() = x * adapter->A.value.transpose();
      y.noalias() += adapter->scale * (adapter->u_cache * adapter->B.value.transpose());
    }
    return y;
  }

  // Accumulates dW/db (and adapter grads) from dY; returns dX.
  MatX<S> backward(const MatX<S>& dy) {
    DDSD_CHECK(dy.rows() == x_cache_.rows() && dy.cols() == d_out(),
               w.name + ": backward shape mismatch");
    if (w.requires_grad) w.grad.noalias() += x_cache_.transpose() * dy;
    if (b.requires_grad) b.grad.row(0) += dy.colwise().sum();
    MatX<S> dx = dy * w.value.transpose();
    if (adapter) {
      // y += scale * u * B^T with u = x * A^T.
      MatX<S> du = adapter->scale * (dy * adapter->B.value);  // rows x r
      if (adapter->B.requires_grad)
        adapter->B.grad.noalias() += adapter->scale * (dy.transpose() * adapter->u_cache);
      if (adapter->A.requires_grad)
        adapter->A.grad.noalias() += du.transpose() * x_cache_;
      dx.noalias() += du * adapter->A.value;
    }
    return dx;
  }

  void collect_params(ParamRefs<S>& out) {
    out.push_back(&w);
    out.push_back(&b);
    if (adapter) {
      out.push_back(&adapter->A);
      out.push_back(&adapter->B);
    }
  }

  void set_base_requires_grad(bool rg) {
    w.requires_grad = rg;
    b.requires_grad = rg;
  }

  Parameter<S> w, b;
  std::optional<LoraAdapter<S>> adapter;

private:
  MatX<S> x_cache_;
};

// ---------------------------------------------------------------------------
// LayerNorm over the last dimension (per row), with learned gain and bias.
// ---------------------------------------------------------------------------

template <typename S>
class LayerNorm {
public:
  static constexpr double kEps = 1e-5;

  void init(const std::string& name, Eigen::Index dim) {
    g.init_shape(name + ".g", 1, dim, /*decay=*/false);
    b.init_shape(name + ".b", 1, dim, /*decay=*/false);
    g.value.setOnes();
  }

  MatX<S> forward(const MatX<S>& x) {
    const Eigen::Index R = x.rows(), C = x.cols();
    xhat_cache_.resize(R, C);
    rstd_cache_.resize(R);
    MatX<S> y(R, C);
    for (Eigen::Index i = 0; i < R; ++i) {
      const S mean = x.row(i).mean();
      const S var = (x.row(i).array() - mean).square().sum() / static_cast<S>(C);
      const S rstd = S(1) / std::sqrt(var + static_cast<S>(kEps));
      rstd_cache_(i) = rstd;
      xhat_cache_.row(i) = (x.row(i).array() - mean) * rstd;
      y.row(i) = xhat_cache_.row(i).array() * g.value.row(0).array() + b.value.row(0).array();
    }
    return y;
  }

  MatX<S> backward(const MatX<S>& dy) {
    const Eigen::Index R = dy.rows(), C = dy.cols();
    DDSD_CHECK(R == xhat_cache_.rows(), "layernorm backward shape mismatch");
    MatX<S> dx(R, C);
    for (Eigen::Index i = 0; i < R; ++i) {
      // dxhat = dy * g; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * rstd
      Eigen::Array<S, 1, Eigen::Dynamic> dxhat =
          dy.row(i).array() * g.value.row(0).array();
      const S m1 = dxhat.mean();
      const S m2 = (dxhat * xhat_cache_.row(i).array()).mean();
      dx.row(i) =
          ((dxhat - m1) - xhat_cache_.row(i).array() * m2) * rstd_cache_(i);
    }
    if (g.requires_grad)
      g.grad.row(0) += (dy.array() * xhat_cache_.array()).colwise().sum().matrix();
    if (b.requires_grad) b.grad.row(0) += dy.colwise().sum();
    return dx;
  }

  void collect_params(ParamRefs<S>& out) {
    out.push_back(&g);
    out.push_back(&b);
  }

  Parameter<S> g, b;

private:
  MatX<S> xhat_cache_;
  VecX<S> rstd_cache_;
};

// ---------------------------------------------------------------------------
// GELU (tanh approximation, the GPT2 flavor).
// ---------------------------------------------------------------------------

namespace nn_detail {
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluK = 0.044715;
}  // namespace nn_detail

template <typename S>
class Gelu {
public:
  MatX<S> forward(const MatX<S>& x) {
    x_cache_ = x;
    const S c = static_cast<S>(nn_detail::kGeluC);
    const S k = static_cast<S>(nn_detail::kGeluK);
    return (x.array() * S(0.5) *
            (S(1) + ((x.array() + k * x.array().cube()) * c).tanh()))
        .matrix();
  }

  MatX<S> backward(const MatX<S>& dy) {
    const S c = static_cast<S>(nn_detail::kGeluC);
    const S k = static_cast<S>(nn_detail::kGeluK);
    auto x = x_cache_.array();
    auto inner = (x + k * x.cube()) * c;
    auto t = inner.tanh();
    // d/dx [0.5x(1+t)] = 0.5(1+t) + 0.5x * (1-t^2) * c(1+3k x^2)
    auto dgelu = S(0.5) * (S(1) + t) +
                 S(0.5) * x * (S(1) - t.square()) * c * (S(1) + S(3) * k * x.square());
    return (dy.array() * dgelu).matrix();
  }

private:
  MatX<S> x_cache_;
};

// ---------------------------------------------------------------------------
// Inverted dropout. Training mode draws a fresh mask from the supplied
// generator; eval mode (rng == nullptr) is the identity.
// ---------------------------------------------------------------------------

template <typename S>
class Dropout {
public:
  explicit Dropout(double p = 0.0) : p_(p) {}
  void set_p(double p) { p_ = p; }
  double p() const { return p_; }

  MatX<S> forward(const MatX<S>& x, Rng* rng) {
    if (rng == nullptr || p_ <= 0.0) {
      active_ = false;
      return x;
    }
    active_ = true;
    const S keep_scale = static_cast<S>(1.0 / (1.0 - p_));
    mask_.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        mask_(i, j) = rng->flip(p_) ? S(0) : keep_scale;
    return (x.array() * mask_.array()).matrix();
  }

  MatX<S> backward(const MatX<S>& dy) {
    if (!active_) return dy;
    return (dy.array() * mask_.array()).matrix();
  }

private:
  double p_;
  bool active_ = false;
  MatX<S> mask_;
};

// ---------------------------------------------------------------------------
// Masked row softmax. Entries with allowed == false are excluded; a row with
// no allowed entries yields all zeros (the consumer then contributes nothing
// to downstream sums, keeping fully-masked queries NaN-free).
// ---------------------------------------------------------------------------

template <typename S>
void masked_softmax_rows_inplace(MatX<S>& scores, const std::vector<char>& allowed_flat) {
  const Eigen::Index R = scores.rows(), C = scores.cols();
  DDSD_CHECK(static_cast<Eigen::Index>(allowed_flat.size()) == R * C,
             "mask size mismatch in softmax");
  for (Eigen::Index i = 0; i < R; ++i) {
    const char* allow = allowed_flat.data() + i * C;
    S mx = std::numeric_limits<S>::lowest();
    bool any = false;
    for (Eigen::Index j = 0; j < C; ++j)
      if (allow[j]) {
        any = true;
        mx = std::max(mx, scores(i, j));
      }
    if (!any) {
      scores.row(i).setZero();
      continue;
    }
    S sum = S(0);
    for (Eigen::Index j = 0; j < C; ++j) {
      if (allow[j]) {
        const S e = std::exp(scores(i, j) - mx);
        scores(i, j) = e;
        sum += e;
      } else {
        scores(i, j) = S(0);
      }
    }
    scores.row(i) /= sum;
  }
}

}  // namespace ddsd
