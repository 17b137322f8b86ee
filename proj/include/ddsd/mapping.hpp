#pragma once

// Mapping networks: translate a foreign latent vector (pooled audio
// embedding, or the scaled 4-dim decoder signals) into the LM's token
// embedding space. One hidden linear layer of 384 units with tanh, dropout
// (train mode only) on the hidden activations, then a linear output:
//     out = W2 * dropout(tanh(W1 * in + c1)) + c2

#include <cmath>
#include <cstdint>
#include <string>

#include "ddsd/common.hpp"
#include "ddsd/matrix.hpp"
#include "ddsd/nn.hpp"

namespace ddsd {

inline constexpr Eigen::Index kMappingHiddenDim = 384;
inline constexpr double kMappingDropout = 0.10;

template <typename S>
class MappingNetwork {
public:
  void init(const std::string& name, Eigen::Index input_dim, Eigen::Index output_dim,
            std::uint64_t seed) {
    fc1.init(name + ".fc1", input_dim, kMappingHiddenDim);
    fc2.init(name + ".fc2", kMappingHiddenDim, output_dim);
    init_xavier(fc1.w, seed);
    init_xavier(fc2.w, seed);
    drop.set_p(kMappingDropout);
  }

  Eigen::Index input_dim() const { return fc1.d_in(); }
  Eigen::Index output_dim() const { return fc2.d_out(); }

  // Input rows are independent vectors; rng == nullptr means eval mode.
  MatX<S> forward(const MatX<S>& x, Rng* rng) {
    if (x.cols() != input_dim())
      throw ShapeError(fc1.w.name + ": mapping input dim " + std::to_string(x.cols()) +
                       ", expected " + std::to_string(input_dim()));
    MatX<S> h = fc1.forward(x);
    tanh_cache_ = h.array().tanh().matrix();
    return fc2.forward(drop.forward(tanh_cache_, rng));
  }

  MatX<S> backward(const MatX<S>& dy) {
    MatX<S> dh = drop.backward(fc2.backward(dy));
    dh = (dh.array() * (S(1) - tanh_cache_.array().square())).matrix();
    return fc1.backward(dh);
  }

  void collect_params(ParamRefs<S>& out) {
    fc1.collect_params(out);
    fc2.collect_params(out);
  }

  void set_requires_grad(bool rg) {
    fc1.set_base_requires_grad(rg);
    fc2.set_base_requires_grad(rg);
  }

  Linear<S> fc1, fc2;
  Dropout<S> drop{kMappingDropout};

private:
  MatX<S> tanh_cache_;
};

}  // namespace ddsd
