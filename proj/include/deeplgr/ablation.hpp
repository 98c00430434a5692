#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deeplgr/training.hpp"

namespace deeplgr {

struct AblationRun {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double val_mae = 0.0;
  double test_mae = 0.0;
  double test_smape = 0.0;
};

struct AblationRow {
  std::string variant;
  std::size_t params = 0;
  std::vector<AblationRun> runs;
  double mae_mean = 0.0, mae_std = 0.0;
  double smape_mean = 0.0, smape_std = 0.0;
  double val_mae_mean = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  nlohmann::json baselines = nlohmann::json::object();

  const AblationRow& row(const std::string& variant) const;
  nlohmann::json to_json() const;
  /// Aligned-column text table, one line per variant.
  std::string table() const;
};

/// Mean and sample standard deviation (0 for fewer than two values).
std::pair<double, double> mean_std(const std::vector<double>& v);

/// Trains every variant `repeats` times with seeds base.seed + 0 .. repeats-1
/// on the same split and reports test metrics.
AblationReport run_ablation(const ModelConfig& base, const Dataset& ds, const std::vector<std::string>& variants,
                            std::size_t repeats, const std::function<void(const std::string&)>& progress = {});

}  // namespace deeplgr
