#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "deeplgr/tensor.hpp"

namespace deeplgr {

struct GradCheckOptions {
  double h = 1e-5;
  double rel_tol = 1e-3;
  double abs_floor = 1e-6;          // denominator floor for the relative error
  std::size_t max_entries = 0;      // per tensor; 0 checks every entry
  std::uint64_t seed = 0;           // selects sampled entries
};

struct GradCheckFailure {
  std::string tensor;
  std::size_t index;
  double analytic;
  double numeric;
  double rel_err;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // entries where one-sided slopes disagree (ReLU/L1 kink nearby)
  double max_rel_err = 0.0;
  std::vector<GradCheckFailure> failures;
  bool ok() const { return failures.empty() && checked > 0; }
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Compares tape gradients of `loss_fn` against central differences with step h.
/// `loss_fn` is invoked once under a fresh tape and then repeatedly without one.
GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn, const NamedTensors& params,
                                const GradCheckOptions& opts = {});

}  // namespace deeplgr
