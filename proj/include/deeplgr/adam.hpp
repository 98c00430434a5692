#pragma once

#include <cstdint>
#include <vector>

#include "deeplgr/tensor.hpp"

namespace deeplgr {

struct AdamState {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;  // first moments, one buffer per parameter
  std::vector<std::vector<double>> v;  // second moments
};

AdamState make_adam_state(const std::vector<Tensor>& params, double lr);

/// One bias-corrected Adam update using the gradients held by `params`.
/// Throws DivergenceError (leaving params and state untouched) if any
/// gradient is non-finite.
void adam_step(std::vector<Tensor>& params, AdamState& state);

}  // namespace deeplgr
