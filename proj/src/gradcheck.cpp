#include "deeplgr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deeplgr/rng.hpp"

namespace deeplgr {

GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn, const NamedTensors& params,
                                const GradCheckOptions& opts) {
  std::vector<std::vector<double>> analytic;
  {
    for (const auto& entry : params) {
      Tensor t = entry.second;
      t.zero_grad();
      t.set_requires_grad(true);
    }
    GradientTape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
    for (const auto& [name, t] : params) {
      auto g = t.grad();
      analytic.emplace_back(g.begin(), g.end());
    }
  }

  GradCheckReport report;
  CounterRng rng(opts.seed);
  const double f0 = loss_fn().item();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    std::vector<std::size_t> idx(t.numel());
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.max_entries > 0 && idx.size() > opts.max_entries) {
      for (std::size_t i = 0; i < opts.max_entries; ++i) {
        std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      }
      idx.resize(opts.max_entries);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t k : idx) {
      const double orig = t[k];
      t.mutable_data()[k] = orig + opts.h;
      const double fp = loss_fn().item();
      t.mutable_data()[k] = orig - opts.h;
      const double fm = loss_fn().item();
      t.mutable_data()[k] = orig;

      const double numeric = (fp - fm) / (2.0 * opts.h);
      const double a = analytic[p][k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
      if (rel >= opts.rel_tol) {
        const double right = (fp - f0) / opts.h;
        const double left = (f0 - fm) / opts.h;
        const double asym = std::abs(right - left);
        if (asym > opts.rel_tol * std::max({std::abs(right), std::abs(left), opts.abs_floor})) {
          ++report.skipped_kinks;
          continue;
        }
        report.failures.push_back({params[p].first, k, a, numeric, rel});
      }
      ++report.checked;
      report.max_rel_err = std::max(report.max_rel_err, rel);
    }
  }
  return report;
}

}  // namespace deeplgr
