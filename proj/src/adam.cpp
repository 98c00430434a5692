#include "deeplgr/adam.hpp"

#include <cmath>

namespace deeplgr {

AdamState make_adam_state(const std::vector<Tensor>& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.m.size()) throw ShapeError("adam_step: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].numel() != state.m[i].size()) throw ShapeError("adam_step: parameter shape changed");
    for (double g : params[i].grad()) {
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in adam_step");
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = params[i].grad();
    auto p = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace deeplgr
