#pragma once

#include <vector>

#include "deeplgr/layers.hpp"

namespace deeplgr {

enum class UpsampleMode { subpixel, bilinear };

struct PyramidConfig {
  std::vector<std::size_t> levels{1, 2, 4, 8};
  std::size_t reduction = 8;  // each prior carries N / reduction channels
  UpsampleMode mode = UpsampleMode::subpixel;

  std::size_t reduced_channels(std::size_t n) const { return n / reduction; }
  std::size_t output_channels(std::size_t n) const { return n + levels.size() * reduced_channels(n); }
  /// Throws ConfigError unless levels are strictly increasing, fit the grid, divide
  /// it (subpixel mode), and N is divisible by the reduction.
  void validate(std::size_t H, std::size_t W, std::size_t n) const;
};

/// One upsampling step. Subpixel steps (factors <= 4) are a 1x1 conv to c*fh*fw
/// channels followed by pixel_shuffle; nearest steps (a prime factor > 4) repeat
/// pixels and apply a 3x3 conv.
struct StagePlan {
  std::size_t fh = 1, fw = 1;
  bool nearest = false;
  bool operator==(const StagePlan&) const = default;
};

/// Splits per-axis factors into primes, merges pairs of 2 into 4, and zips the
/// two axes into stages: all subpixel stages first, then the nearest ones.
std::vector<StagePlan> plan_upsample(std::size_t factor_h, std::size_t factor_w);

struct UpsampleStage {
  StagePlan plan;
  Conv conv;
};

struct UpsampleChain {
  std::vector<UpsampleStage> stages;

  static UpsampleChain init(std::size_t channels, std::size_t factor_h, std::size_t factor_w, CounterRng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct PriorBranch {
  std::size_t level = 1;
  Conv reduce;  // 1x1, N -> N / reduction
  Tensor bn_gamma, bn_beta;
  ops::BatchNormState bn;
  UpsampleChain upsample;  // empty in bilinear mode
};

struct GlobalContextParams {
  std::vector<PriorBranch> branches;

  static GlobalContextParams init(const PyramidConfig& cfg, std::size_t H, std::size_t W, std::size_t n,
                                  CounterRng& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
  void collect_bn(const std::string& prefix, std::vector<std::pair<std::string, ops::BatchNormState*>>& out);
};

/// Pools z to each level's L x L grid, then applies the 1x1 reduction conv and batchnorm.
std::vector<Tensor> build_priors(const Tensor& z, const PyramidConfig& cfg, GlobalContextParams& params,
                                 ops::BnMode mode);

/// Resizes one prior to (H, W): learned subpixel chain or parameter-free bilinear.
Tensor upsample_prior(const Tensor& prior, std::size_t H, std::size_t W, UpsampleMode mode,
                      const UpsampleChain* chain);

/// concat(z, upsampled priors...) along channels.
Tensor global_context(const Tensor& z, const PyramidConfig& cfg, GlobalContextParams& params, ops::BnMode mode);

}  // namespace deeplgr
