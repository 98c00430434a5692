#include "deeplgr/layers.hpp"

#include <cmath>

namespace deeplgr {

Tensor random_normal(Shape shape, double stddev, CounterRng& rng) {
  Tensor t(std::move(shape), 0.0, true);
  for (double& v : t.mutable_data()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor random_uniform(Shape shape, double lo, double hi, CounterRng& rng) {
  Tensor t(std::move(shape), 0.0, true);
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

Conv Conv::he(std::size_t k, std::size_t cin, std::size_t cout, CounterRng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(k * k * cin));
  return Conv{random_normal(Shape{k, k, cin, cout}, stddev, rng), Tensor(Shape{cout}, 0.0, true)};
}

Conv Conv::zeros(std::size_t k, std::size_t cin, std::size_t cout) {
  return Conv{Tensor(Shape{k, k, cin, cout}, 0.0, true), Tensor(Shape{cout}, 0.0, true)};
}

void Conv::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".kernel", kernel);
  out.emplace_back(prefix + ".bias", bias);
}

Dense Dense::uniform(std::size_t fin, std::size_t fout, CounterRng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fin));
  return Dense{random_uniform(Shape{fin, fout}, -bound, bound, rng), Tensor(Shape{fout}, 0.0, true)};
}

void Dense::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

}  // namespace deeplgr
