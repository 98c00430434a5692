#include "deeplgr/ablation.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace deeplgr {

using nlohmann::json;

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

const AblationRow& AblationReport::row(const std::string& variant) const {
  for (const auto& r : rows) {
    if (r.variant == variant) return r;
  }
  throw ConfigError("variant '" + variant + "' not in report");
}

json AblationReport::to_json() const {
  json out = json::array();
  for (const auto& r : rows) {
    json runs = json::array();
    for (const auto& run : r.runs) {
      runs.push_back({{"seed", run.seed},
                      {"epochs", run.epochs},
                      {"val_mae", run.val_mae},
                      {"mae", run.test_mae},
                      {"smape", run.test_smape}});
    }
    out.push_back({{"variant", r.variant},
                   {"params", r.params},
                   {"mae", r.mae_mean},
                   {"mae_std", r.mae_std},
                   {"smape", r.smape_mean},
                   {"smape_std", r.smape_std},
                   {"val_mae", r.val_mae_mean},
                   {"repeats", r.runs.size()},
                   {"runs", runs}});
  }
  return json{{"variants", out}, {"baselines", baselines}};
}

std::string AblationReport::table() const {
  std::size_t w = 7;
  for (const auto& r : rows) w = std::max(w, r.variant.size());
  std::ostringstream o;
  o << std::left << std::setw(static_cast<int>(w)) << "variant" << std::right << std::setw(12) << "params"
    << std::setw(22) << "MAE" << std::setw(22) << "SMAPE" << "\n";
  auto pm = [](double m, double s) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(4) << m << " +/- " << s;
    return c.str();
  };
  for (const auto& r : rows) {
    o << std::left << std::setw(static_cast<int>(w)) << r.variant << std::right << std::setw(12) << r.params
      << std::setw(22) << pm(r.mae_mean, r.mae_std) << std::setw(22) << pm(r.smape_mean, r.smape_std) << "\n";
  }
  return o.str();
}

AblationReport run_ablation(const ModelConfig& base, const Dataset& ds, const std::vector<std::string>& variants,
                            std::size_t repeats, const std::function<void(const std::string&)>& progress) {
  if (repeats == 0) throw ConfigError("repeats must be positive");
  for (const auto& v : variants) build_variant(v, base);  // reject unknown names up front

  const TaskData data = TaskData::build(ds, base);
  AblationReport report;
  const auto& test = data.slots(Subset::test);
  if (base.task == Task::predict) {
    report.baselines["Last"] = evaluate_baseline(data, test, Baseline::last).to_json();
    report.baselines["Last"].erase("per_region_mae");
    if (base.temporal.closeness >= 5) {
      report.baselines["CA"] = evaluate_baseline(data, test, Baseline::ca).to_json();
      report.baselines["CA"].erase("per_region_mae");
    }
  } else {
    report.baselines["uniform-split"] = evaluate_baseline(data, test, Baseline::uniform_split).to_json();
    report.baselines["uniform-split"].erase("per_region_mae");
  }

  for (const auto& name : variants) {
    AblationRow row;
    row.variant = name;
    std::vector<double> maes, smapes, vals;
    for (std::size_t r = 0; r < repeats; ++r) {
      ModelConfig cfg = build_variant(name, base);
      cfg.seed = base.seed + r;
      DeepLGR model(cfg, data.H(), data.W(), data.K());
      row.params = model.param_count();
      const TrainResult tr = train(model, data);
      if (tr.diverged) throw DivergenceError("variant " + name + " diverged: " + tr.divergence);
      const EvalReport rep = evaluate(model, data, test, tr.normalizer, name);
      row.runs.push_back({cfg.seed, tr.log.size(), tr.best_val_mae, rep.mae, rep.smape});
      maes.push_back(rep.mae);
      smapes.push_back(rep.smape);
      vals.push_back(tr.best_val_mae);
      if (progress) {
        std::ostringstream msg;
        msg << name << " seed " << cfg.seed << ": " << tr.log.size() << " epochs, val MAE " << tr.best_val_mae
            << ", test MAE " << rep.mae;
        progress(msg.str());
      }
    }
    std::tie(row.mae_mean, row.mae_std) = mean_std(maes);
    std::tie(row.smape_mean, row.smape_std) = mean_std(smapes);
    row.val_mae_mean = mean_std(vals).first;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace deeplgr
