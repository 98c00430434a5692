// deeplgr command-line tool: generate, train, eval, ablate, infer-fine.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "deeplgr/ablation.hpp"
#include "deeplgr/dataset_io.hpp"
#include "deeplgr/run_config.hpp"
#include "deeplgr/training.hpp"

namespace fs = std::filesystem;
using namespace deeplgr;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kDivergence = 4 };

int log_level() {
  static const int level = [] {
    const char* v = std::getenv("DLGR_LOG");
    if (v == nullptr) return 1;
    const std::string s(v);
    if (s == "quiet" || s == "0") return 0;
    if (s == "debug" || s == "2") return 2;
    return 1;
  }();
  return level;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << msg << "\n";
}

void debug(const std::string& msg) {
  if (log_level() >= 2) std::cerr << msg << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(rc, kv.substr(0, eq), kv.substr(eq + 1));
  }
  rc.model.validate();
  return rc;
}

std::string epoch_line(const EpochRecord& r) {
  std::ostringstream o;
  o << "epoch " << r.epoch << "  train_mae " << r.train_mae << "  val_mae " << r.val_mae << "  val_smape "
    << r.val_smape << "  (" << static_cast<long>(r.wall_ms) << " ms)";
  return o.str();
}

// ---- generate ----

struct GenerateArgs {
  std::string out;
  std::size_t height = 32, width = 32, k = 2, days = 60, spd = 48, zones = 8;
  std::uint64_t seed = 0;
  std::string archetypes = "office,residential,park,uniform";
  double noise = 1.0;
  bool force = false, csv = false;
};

int cmd_generate(const GenerateArgs& a) {
  const fs::path out(a.out);
  if (fs::exists(out) && !a.force) throw ConfigError("output " + out.string() + " exists (use --force to overwrite)");
  DatasetMeta meta;
  meta.H = a.height;
  meta.W = a.width;
  meta.K = a.k;
  meta.slots_per_day = a.spd;
  meta.num_slots = a.days * a.spd;
  meta.seed = a.seed;
  meta.measurement_names.clear();
  for (std::size_t k = 0; k < a.k; ++k) {
    meta.measurement_names.push_back(k == 0 ? "inflow" : k == 1 ? "outflow" : "flow" + std::to_string(k));
  }
  meta.generator.archetypes = split_list(a.archetypes);
  for (const auto& name : meta.generator.archetypes) parse_archetype(name);
  meta.generator.num_zones = a.zones;
  meta.generator.noise_scale = a.noise;
  const auto map = make_archetype_map(meta.H, meta.W, meta.generator.archetypes, meta.generator.num_zones, meta.seed);
  const Dataset ds = generate_synthetic(meta, map);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_dataset(out, ds);
  if (a.csv) write_dataset_csv(out.string() + ".csv", ds);
  info("wrote " + out.string() + ": " + std::to_string(meta.num_slots) + " slots of " + std::to_string(meta.H) + "x" +
       std::to_string(meta.W) + "x" + std::to_string(meta.K));
  return kOk;
}

// ---- train ----

struct TrainArgs {
  std::string config, data, out, checkpoint;
  std::vector<std::string> set;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = resolve_config(a.config, a.set);
  if (!a.data.empty()) rc.data = a.data;
  if (!a.out.empty()) rc.out = a.out;
  if (rc.data.empty()) throw ConfigError("no dataset given (--data or data = ... in the config)");
  if (rc.out.empty()) throw ConfigError("no output directory given (--out or out = ... in the config)");

  const Dataset ds = read_dataset(rc.data);
  const fs::path out(rc.out);
  fs::create_directories(out);
  write_text(out / "config.resolved", to_key_value(rc));

  std::optional<Checkpoint> resume;
  if (!a.checkpoint.empty()) {
    resume = load_checkpoint(a.checkpoint);
    // the epoch budget may be extended on resume; everything else must match
    ModelConfig saved = resume->config();
    saved.max_epochs = rc.model.max_epochs;
    saved.patience = rc.model.patience;
    if (config_to_json(saved) != config_to_json(rc.model)) {
      throw ConfigError("checkpoint config differs from the resolved run config");
    }
  }
  const TaskData data = TaskData::build(ds, rc.model);
  DeepLGR model(rc.model, data.H(), data.W(), data.K());
  info("model: " + std::to_string(model.param_count()) + " parameters, " +
       std::to_string(data.slots(Subset::train).size()) + "/" + std::to_string(data.slots(Subset::val).size()) + "/" +
       std::to_string(data.slots(Subset::test).size()) + " train/val/test samples");

  TrainOptions opts;
  opts.out_dir = out;
  opts.resume = resume ? &*resume : nullptr;
  opts.on_epoch = [](const EpochRecord& r) { info(epoch_line(r)); };
  const TrainResult tr = train(model, data, opts);

  EvalReport test = evaluate(model, data, data.slots(Subset::test), tr.normalizer, "DeepLGR");
  json report = test.to_json();
  report["best_epoch"] = tr.best_epoch;
  report["best_val_mae"] = tr.best_val_mae;
  report["params"] = model.param_count();
  report["diverged"] = tr.diverged;
  write_json(out / "eval_test.json", report);
  std::cout << "test MAE " << test.mae << "  SMAPE " << test.smape << "  (best epoch " << tr.best_epoch << ")\n";
  if (tr.diverged) {
    std::cerr << "error: training diverged: " << tr.divergence << " (best checkpoint kept)\n";
    return kDivergence;
  }
  return kOk;
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint, data, split = "test", out;
  bool baselines = false;
};

int cmd_eval(const EvalArgs& a) {
  const Subset subset = parse_subset(a.split);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  DeepLGR model = model_from_checkpoint(ck);
  const Dataset ds = read_dataset(a.data);
  const TaskData data = TaskData::build(ds, model.config());
  if (data.H() != model.H() || data.W() != model.W() || data.K() != model.K()) {
    throw ShapeError("dataset grid does not match the checkpoint");
  }
  const auto& slots = data.slots(subset);
  json out = evaluate(model, data, slots, ck.state().normalizer, "DeepLGR").to_json();
  out["split"] = a.split;
  if (a.baselines) {
    if (model.config().task == Task::predict) {
      out["baselines"]["Last"] = evaluate_baseline(data, slots, Baseline::last).mae;
      if (model.config().temporal.closeness >= 5) out["baselines"]["CA"] = evaluate_baseline(data, slots, Baseline::ca).mae;
    } else {
      out["baselines"]["uniform-split"] = evaluate_baseline(data, slots, Baseline::uniform_split).mae;
    }
  }
  if (!a.out.empty()) write_json(a.out, out);
  json brief = out;
  brief.erase("per_region_mae");
  std::cout << brief.dump(2) << "\n";
  return kOk;
}

// ---- ablate ----

struct AblateArgs {
  std::string config, data, out, variants;
  std::size_t repeats = 1;
  std::vector<std::string> set;
};

int cmd_ablate(const AblateArgs& a) {
  RunConfig rc = resolve_config(a.config, a.set);
  if (!a.data.empty()) rc.data = a.data;
  if (!a.out.empty()) rc.out = a.out;
  if (rc.data.empty()) throw ConfigError("no dataset given (--data or data = ... in the config)");
  const std::vector<std::string> variants = a.variants.empty() ? variant_names() : split_list(a.variants);
  for (const auto& v : variants) build_variant(v, rc.model);
  const Dataset ds = read_dataset(rc.data);
  const AblationReport report = run_ablation(rc.model, ds, variants, a.repeats, [](const std::string& m) { info(m); });
  std::cout << report.table();
  if (!rc.out.empty()) {
    const fs::path out(rc.out);
    fs::create_directories(out);
    write_text(out / "config.resolved", to_key_value(rc));
    write_json(out / "ablation.json", report.to_json());
    write_text(out / "ablation.txt", report.table());
  }
  return kOk;
}

// ---- infer-fine ----

struct InferArgs {
  std::string checkpoint, coarse_input, out, format = "dataset";
};

int cmd_infer_fine(const InferArgs& a) {
  if (a.format != "dataset" && a.format != "csv") throw ConfigError("--format must be dataset or csv");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  DeepLGR model = model_from_checkpoint(ck);
  if (model.config().task != Task::infer_fine) throw ConfigError("checkpoint was not trained for infer_fine");
  const Normalizer norm = ck.state().normalizer;
  const Dataset coarse = read_dataset(a.coarse_input);
  if (coarse.meta.H != model.in_h() || coarse.meta.W != model.in_w() || coarse.meta.K != model.K()) {
    throw ShapeError("coarse input is " + std::to_string(coarse.meta.H) + "x" + std::to_string(coarse.meta.W) + "x" +
                     std::to_string(coarse.meta.K) + ", model expects " + std::to_string(model.in_h()) + "x" +
                     std::to_string(model.in_w()) + "x" + std::to_string(model.K()));
  }
  Dataset fine;
  fine.meta = coarse.meta;
  fine.meta.H = model.H();
  fine.meta.W = model.W();
  fine.meta.archetype_map.clear();
  fine.values.assign(fine.meta.num_slots * fine.meta.grid_size(), 0.0f);
  fine.available = coarse.available;
  const std::size_t fn = fine.meta.grid_size();
  for (std::size_t t = 0; t < coarse.meta.num_slots; ++t) {
    if (!coarse.has(t)) continue;
    const auto src = coarse.grid(t).values;
    Tensor x(Shape{1, coarse.meta.H, coarse.meta.W, coarse.meta.K}, std::vector<double>(src.begin(), src.end()));
    const Tensor y = clamp_nonnegative(norm.restore(model.forward(norm.input(x), ops::BnMode::eval)));
    for (std::size_t i = 0; i < fn; ++i) fine.values[t * fn + i] = static_cast<float>(y[i]);
    debug("slot " + std::to_string(t) + " inferred");
  }
  if (a.format == "csv") {
    write_dataset_csv(a.out, fine);
  } else {
    write_dataset(a.out, fine);
  }
  info("wrote " + a.out + ": " + std::to_string(fine.meta.num_slots) + " slots of " + std::to_string(fine.meta.H) +
       "x" + std::to_string(fine.meta.W));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeepLGR crowd-flow models: synthetic data, training, evaluation and ablations"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic crowd-flow dataset");
  g->add_option("--out", gen.out, "Dataset file")->required();
  g->add_option("--height", gen.height, "Grid rows")->capture_default_str();
  g->add_option("--width", gen.width, "Grid columns")->capture_default_str();
  g->add_option("--k", gen.k, "Measurements per region")->capture_default_str();
  g->add_option("--days", gen.days, "Number of days")->capture_default_str();
  g->add_option("--slots-per-day", gen.spd, "Time slots per day")->capture_default_str();
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  g->add_option("--archetypes", gen.archetypes, "Comma-separated archetype names")->capture_default_str();
  g->add_option("--zones", gen.zones, "Number of archetype zones")->capture_default_str();
  g->add_option("--noise", gen.noise, "Noise scale")->capture_default_str();
  g->add_flag("--force", gen.force, "Overwrite an existing output");
  g->add_flag("--csv", gen.csv, "Also write <out>.csv");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model and evaluate it on the test split");
  t->add_option("--config", tr.config, "key=value run config");
  t->add_option("--data", tr.data, "Dataset file (overrides the config)");
  t->add_option("--out", tr.out, "Output directory (overrides the config)");
  t->add_option("--checkpoint", tr.checkpoint, "Resume from a last.ckpt");
  t->add_option("--set", tr.set, "Config override key=value (repeatable)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", ev.data, "Dataset file")->required();
  e->add_option("--split", ev.split, "train|val|test")->capture_default_str();
  e->add_option("--out", ev.out, "Write the report JSON here");
  e->add_flag("--baselines", ev.baselines, "Also report the heuristic baselines");

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "Train and compare the ablation variants");
  b->add_option("--config", ab.config, "key=value run config");
  b->add_option("--data", ab.data, "Dataset file (overrides the config)");
  b->add_option("--out", ab.out, "Output directory (overrides the config)");
  b->add_option("--variants", ab.variants, "Comma-separated variant names (default: all seven)");
  b->add_option("--repeats", ab.repeats, "Training repeats per variant")->capture_default_str();
  b->add_option("--set", ab.set, "Config override key=value (repeatable)");

  InferArgs inf;
  auto* f = app.add_subcommand("infer-fine", "Infer fine-grained flows from a coarse dataset");
  f->add_option("--checkpoint", inf.checkpoint, "infer_fine checkpoint")->required();
  f->add_option("--coarse-input", inf.coarse_input, "Coarse dataset file")->required();
  f->add_option("--out", inf.out, "Output file")->required();
  f->add_option("--format", inf.format, "dataset|csv")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*b) return cmd_ablate(ab);
    if (*f) return cmd_infer_fine(inf);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kConfig;
  } catch (const ShapeError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kConfig;
  } catch (const DivergenceError& err) {
    std::cerr << "divergence: " << err.what() << "\n";
    return kDivergence;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
