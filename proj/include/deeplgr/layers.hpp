#pragma once

#include <string>

#include "deeplgr/gradcheck.hpp"
#include "deeplgr/ops.hpp"
#include "deeplgr/rng.hpp"

namespace deeplgr {

struct Conv {
  Tensor kernel;  // [kh, kw, Cin, Cout]
  Tensor bias;    // [Cout]

  /// He-normal kernel (stddev sqrt(2 / fan_in)), zero bias.
  static Conv he(std::size_t k, std::size_t cin, std::size_t cout, CounterRng& rng);
  static Conv zeros(std::size_t k, std::size_t cin, std::size_t cout);

  Tensor operator()(const Tensor& x) const { return ops::conv2d(x, kernel, bias, ops::Padding::same); }
  void collect(const std::string& prefix, NamedTensors& out) const;
  std::size_t in_channels() const { return kernel.dim(2); }
  std::size_t out_channels() const { return kernel.dim(3); }
};

struct Dense {
  Tensor weight;  // [Fin, Fout]
  Tensor bias;    // [Fout]

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias.
  static Dense uniform(std::size_t fin, std::size_t fout, CounterRng& rng);

  Tensor operator()(const Tensor& x) const { return ops::dense(x, weight, bias); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

Tensor random_normal(Shape shape, double stddev, CounterRng& rng);
Tensor random_uniform(Shape shape, double lo, double hi, CounterRng& rng);

}  // namespace deeplgr
