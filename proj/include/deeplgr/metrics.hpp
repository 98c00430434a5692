#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deeplgr/tensor.hpp"

namespace deeplgr {

/// Mean absolute error over all entries. Throws ShapeError on length mismatch or empty input.
double mae(std::span<const double> pred, std::span<const double> truth);

/// Mean of |y - p| / (|y| + |p|); a term with y = p = 0 contributes 0.
double smape(std::span<const double> pred, std::span<const double> truth);

double mae(const Tensor& pred, const Tensor& truth);
double smape(const Tensor& pred, const Tensor& truth);

struct EvalReport {
  std::string model_id;
  double mae = 0.0;
  double smape = 0.0;
  std::size_t H = 0, W = 0;
  std::vector<double> per_region_mae;  // H*W, averaged over samples and measurements
  std::size_t num_entries = 0;

  nlohmann::json to_json() const;
};

/// Streams [B,H,W,K] prediction/truth batches into an EvalReport. Sums are
/// accumulated in batch order, so results depend only on the batch sequence.
class MetricAccumulator {
 public:
  MetricAccumulator(std::size_t H, std::size_t W, std::size_t K);
  void add(const Tensor& pred, const Tensor& truth);
  EvalReport report(std::string model_id) const;

 private:
  std::size_t H_, W_, K_;
  double abs_sum_ = 0.0, smape_sum_ = 0.0;
  std::vector<double> region_abs_;
  std::size_t entries_ = 0;
};

/// Most recent closeness block of x[B,H,W,C]: channels [0, K).
Tensor baseline_last(const Tensor& x, std::size_t K);

/// Elementwise mean of the `n` most recent closeness blocks. Needs lc >= n.
Tensor baseline_ca(const Tensor& x, std::size_t K, std::size_t lc, std::size_t n = 5);

/// Spreads each coarse cell of [B,h,w,K] evenly over its s x s fine cells.
Tensor baseline_uniform_split(const Tensor& coarse, std::size_t s);

/// Clamps negative entries to zero (reporting only).
Tensor clamp_nonnegative(const Tensor& x);

}  // namespace deeplgr
