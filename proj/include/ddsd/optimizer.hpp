#pragma once

// AdamW with decoupled weight decay, plus the linear warmup/decay learning-
// rate schedule. Decay touches only genuinely 2-D tensors (weight matrices
// and embedding tables); biases and normalization gains are excluded via the
// Parameter::decay flag set at construction.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ddsd/common.hpp"
#include "ddsd/matrix.hpp"
#include "ddsd/nn.hpp"

namespace ddsd {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("adam betas must lie in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("adam epsilon must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  }
};

// Linear ramp 0 -> peak over the first w = round(warmup_fraction * total)
// steps, then linear decay peak -> 0 at total_steps. Peak is hit exactly at
// step w. A zero-length ramp (tiny runs) starts at the peak directly.
inline double lr_at(std::int64_t step, std::int64_t total_steps, double peak_lr,
                    double warmup_fraction) {
  if (total_steps <= 0) throw ConfigError("total_steps must be positive for the lr schedule");
  DDSD_CHECK(step >= 0 && step <= total_steps, "lr schedule step out of range");
  const std::int64_t w = std::llround(warmup_fraction * static_cast<double>(total_steps));
  if (step <= w)
    return w > 0 ? peak_lr * static_cast<double>(step) / static_cast<double>(w) : peak_lr;
  return peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - w);
}

// Moments are kept per tensor, aligned with the parameter list handed to the
// constructor; the list must therefore be final (adapters already attached).
template <typename S>
class AdamW {
public:
  AdamW(const ParamRefs<S>& params, const AdamConfig& cfg) : params_(params), cfg_(cfg) {
    cfg.validate();
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (auto* p : params) {
      m_.push_back(MatX<S>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(MatX<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  std::int64_t steps_taken() const { return t_; }

  // Global L2 norm over trainable gradients (in double), for logging.
  double grad_norm() const {
    double sq = 0.0;
    for (auto* p : params_)
      if (p->requires_grad) sq += p->grad.template cast<double>().squaredNorm();
    return std::sqrt(sq);
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter<S>* p = params_[k];
      if (!p->requires_grad) continue;
      if (!p->grad.allFinite())
        throw TrainingError("non-finite gradient in tensor " + p->name);
      auto& m = m_[k];
      auto& v = v_[k];
      m = b1 * m + (S(1) - b1) * p->grad;
      v = (b2 * v.array() + (S(1) - b2) * p->grad.array().square()).matrix();
      // Decoupled decay uses the pre-update parameter value.
      const MatX<S> update =
          ((m.array() / static_cast<S>(bc1)) /
           ((v.array() / static_cast<S>(bc2)).sqrt() + static_cast<S>(cfg_.eps)))
              .matrix();
      if (p->decay && cfg_.weight_decay > 0.0)
        p->value -= static_cast<S>(lr) *
                    (update + static_cast<S>(cfg_.weight_decay) * p->value);
      else
        p->value -= static_cast<S>(lr) * update;
    }
  }

private:
  ParamRefs<S> params_;
  AdamConfig cfg_;
  std::vector<MatX<S>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace ddsd
