#include "deeplgr/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "deeplgr/ops.hpp"

namespace deeplgr {

namespace {

void check_pair(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": prediction has " + std::to_string(a) + " entries, truth " +
                     std::to_string(b));
  }
  if (a == 0) throw ShapeError(std::string(what) + ": empty input");
}

double smape_term(double p, double y) {
  const double den = std::abs(y) + std::abs(p);
  return den == 0.0 ? 0.0 : std::abs(y - p) / den;
}

}  // namespace

double mae(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred.size(), truth.size(), "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(truth[i] - pred[i]);
  return s / static_cast<double>(pred.size());
}

double smape(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred.size(), truth.size(), "smape");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += smape_term(pred[i], truth[i]);
  return s / static_cast<double>(pred.size());
}

double mae(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape()) throw ShapeError("mae: shape " + shape_str(pred.shape()) + " vs " + shape_str(truth.shape()));
  return mae(pred.data(), truth.data());
}

double smape(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape()) throw ShapeError("smape: shape " + shape_str(pred.shape()) + " vs " + shape_str(truth.shape()));
  return smape(pred.data(), truth.data());
}

nlohmann::json EvalReport::to_json() const {
  return nlohmann::json{{"model", model_id}, {"mae", mae},           {"smape", smape},
                        {"H", H},            {"W", W},               {"per_region_mae", per_region_mae},
                        {"num_entries", num_entries}};
}

MetricAccumulator::MetricAccumulator(std::size_t H, std::size_t W, std::size_t K)
    : H_(H), W_(W), K_(K), region_abs_(H * W, 0.0) {}

void MetricAccumulator::add(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape() || pred.rank() != 4 || pred.dim(1) != H_ || pred.dim(2) != W_ ||
      pred.dim(3) != K_) {
    throw ShapeError("metrics: batch " + shape_str(pred.shape()) + " vs truth " + shape_str(truth.shape()));
  }
  const auto p = pred.data();
  const auto y = truth.data();
  const std::size_t R = H_ * W_;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = std::abs(y[i] - p[i]);
    abs_sum_ += e;
    smape_sum_ += smape_term(p[i], y[i]);
    region_abs_[(i / K_) % R] += e;
  }
  entries_ += p.size();
}

EvalReport MetricAccumulator::report(std::string model_id) const {
  if (entries_ == 0) throw ShapeError("metrics: no samples accumulated");
  EvalReport r;
  r.model_id = std::move(model_id);
  r.H = H_;
  r.W = W_;
  r.num_entries = entries_;
  r.mae = abs_sum_ / static_cast<double>(entries_);
  r.smape = smape_sum_ / static_cast<double>(entries_);
  const double per_region = static_cast<double>(entries_ / (H_ * W_));
  r.per_region_mae.resize(region_abs_.size());
  for (std::size_t i = 0; i < region_abs_.size(); ++i) r.per_region_mae[i] = region_abs_[i] / per_region;
  return r;
}

Tensor baseline_last(const Tensor& x, std::size_t K) { return baseline_ca(x, K, 1, 1); }

Tensor baseline_ca(const Tensor& x, std::size_t K, std::size_t lc, std::size_t n) {
  if (n == 0 || lc < n) {
    throw ConfigError("closeness average over " + std::to_string(n) + " steps needs lc >= " + std::to_string(n) +
                      ", got " + std::to_string(lc));
  }
  if (x.rank() != 4 || x.dim(3) < n * K) throw ShapeError("baseline: input " + shape_str(x.shape()) + " too narrow");
  const std::size_t cells = x.dim(0) * x.dim(1) * x.dim(2), C = x.dim(3);
  std::vector<double> out(cells * K, 0.0);
  const auto d = x.data();
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::size_t k = 0; k < K; ++k) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) s += d[c * C + b * K + k];
      out[c * K + k] = s / static_cast<double>(n);
    }
  }
  return Tensor(Shape{x.dim(0), x.dim(1), x.dim(2), K}, std::move(out));
}

Tensor baseline_uniform_split(const Tensor& coarse, std::size_t s) {
  if (coarse.rank() != 4 || s == 0) throw ShapeError("uniform split: expected [B,h,w,K] and s > 0");
  const double inv = 1.0 / static_cast<double>(s * s);
  Tensor up = ops::upsample_nearest(coarse, s, s);
  return ops::scale(up, inv);
}

Tensor clamp_nonnegative(const Tensor& x) {
  std::vector<double> v(x.data().begin(), x.data().end());
  for (double& e : v) e = std::max(e, 0.0);
  return Tensor(x.shape(), std::move(v));
}

}  // namespace deeplgr
