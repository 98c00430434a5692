#include "deeplgr/model.hpp"

#include <set>

namespace deeplgr {

using nlohmann::json;

std::string_view task_name(Task t) { return t == Task::predict ? "predict" : "infer_fine"; }

Task parse_task(std::string_view s) {
  if (s == "predict") return Task::predict;
  if (s == "infer_fine") return Task::infer_fine;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected predict|infer_fine)");
}

std::string_view normalization_name(Normalization n) { return n == Normalization::none ? "none" : "minmax"; }

Normalization parse_normalization(std::string_view s) {
  if (s == "none") return Normalization::none;
  if (s == "minmax") return Normalization::minmax;
  throw ConfigError("unknown normalization '" + std::string(s) + "' (expected none|minmax)");
}

std::string_view upsample_mode_name(UpsampleMode m) { return m == UpsampleMode::subpixel ? "subpixel" : "bilinear"; }

UpsampleMode parse_upsample_mode(std::string_view s) {
  if (s == "subpixel") return UpsampleMode::subpixel;
  if (s == "bilinear") return UpsampleMode::bilinear;
  throw ConfigError("unknown upsample_mode '" + std::string(s) + "' (expected subpixel|bilinear)");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(M, "M");
  positive(F, "F");
  positive(se_reduction, "se_reduction");
  positive(batch_size, "batch_size");
  positive(max_epochs, "max_epochs");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw ConfigError("bn_momentum must lie in [0, 1)");
  if (!(bn_eps > 0.0)) throw ConfigError("bn_eps must be positive");
  if (task == Task::predict && temporal.closeness == 0) throw ConfigError("lc must be positive");
  if (task == Task::infer_fine && upscale != 2 && upscale != 4) {
    throw ConfigError("upscale must be 2 or 4, got " + std::to_string(upscale));
  }
  if (hours_end != 0 && hours_start >= hours_end) throw ConfigError("hours window is empty");
  if (predictor.kind == PredictorKind::mf && predictor.mf_rank == 0) throw ConfigError("mf_rank must be positive");
  for (std::size_t d : predictor.td_ranks) positive(d, "td_ranks");
  if (use_global) {
    const std::size_t n = feature_channels();
    if (n % pyramid.reduction != 0) {
      throw ConfigError("feature channels " + std::to_string(n) + " not divisible by pyramid reduction " +
                        std::to_string(pyramid.reduction));
    }
  }
}

json config_to_json(const ModelConfig& c) {
  return json{
      {"task", task_name(c.task)},
      {"M", c.M},
      {"F", c.F},
      {"N", c.feature_channels()},
      {"se_reduction", c.se_reduction},
      {"use_global", c.use_global},
      {"pyramid_levels", c.pyramid.levels},
      {"pyramid_reduction", c.pyramid.reduction},
      {"upsample_mode", upsample_mode_name(c.pyramid.mode)},
      {"predictor", predictor_kind_name(c.predictor.kind)},
      {"mf_rank", c.predictor.mf_rank},
      {"td_ranks", c.predictor.td_ranks},
      {"lc", c.temporal.closeness},
      {"lp", c.temporal.period},
      {"lq", c.temporal.trend},
      {"upscale", c.upscale},
      {"lr", c.lr},
      {"batch_size", c.batch_size},
      {"max_epochs", c.max_epochs},
      {"patience", c.patience},
      {"seed", c.seed},
      {"normalization", normalization_name(c.normalization)},
      {"hours", {c.hours_start, c.hours_end}},
      {"bn_momentum", c.bn_momentum},
      {"bn_eps", c.bn_eps},
  };
}

ModelConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::set<std::string> known{
      "task",    "M",          "F",          "N",           "se_reduction", "use_global", "pyramid_levels",
      "pyramid_reduction",     "upsample_mode", "predictor", "mf_rank",     "td_ranks",   "lc",
      "lp",      "lq",         "upscale",    "lr",          "batch_size",   "max_epochs", "patience",
      "seed",    "normalization", "hours",   "bn_momentum", "bn_eps"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  ModelConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    get("M", c.M);
    get("F", c.F);
    get("N", c.N);
    get("se_reduction", c.se_reduction);
    get("use_global", c.use_global);
    get("pyramid_levels", c.pyramid.levels);
    get("pyramid_reduction", c.pyramid.reduction);
    if (j.contains("upsample_mode")) c.pyramid.mode = parse_upsample_mode(j.at("upsample_mode").get<std::string>());
    if (j.contains("predictor")) c.predictor.kind = parse_predictor_kind(j.at("predictor").get<std::string>());
    get("mf_rank", c.predictor.mf_rank);
    get("td_ranks", c.predictor.td_ranks);
    get("lc", c.temporal.closeness);
    get("lp", c.temporal.period);
    get("lq", c.temporal.trend);
    get("upscale", c.upscale);
    get("lr", c.lr);
    get("batch_size", c.batch_size);
    get("max_epochs", c.max_epochs);
    get("patience", c.patience);
    get("seed", c.seed);
    if (j.contains("normalization")) c.normalization = parse_normalization(j.at("normalization").get<std::string>());
    if (j.contains("hours")) {
      const auto h = j.at("hours").get<std::vector<std::size_t>>();
      if (h.size() != 2) throw ConfigError("hours must be [start, end]");
      c.hours_start = h[0];
      c.hours_end = h[1];
    }
    get("bn_momentum", c.bn_momentum);
    get("bn_eps", c.bn_eps);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"local",        "local+MF",        "local+TD",       "local+bilinear",
                                              "local+global", "local+global+MF", "local+global+TD"};
  return names;
}

ModelConfig build_variant(std::string_view name, const ModelConfig& base) {
  ModelConfig c = base;
  if (name == "local+global+TD") return c;
  if (name == "local") {
    c.use_global = false;
    c.predictor.kind = PredictorKind::shared;
  } else if (name == "local+MF") {
    c.use_global = false;
    c.predictor.kind = PredictorKind::mf;
  } else if (name == "local+TD") {
    c.use_global = false;
    c.predictor.kind = PredictorKind::td;
  } else if (name == "local+bilinear") {
    c.use_global = true;
    c.pyramid.mode = UpsampleMode::bilinear;
    c.predictor.kind = PredictorKind::shared;
  } else if (name == "local+global") {
    c.use_global = true;
    c.predictor.kind = PredictorKind::shared;
  } else if (name == "local+global+MF") {
    c.use_global = true;
    c.predictor.kind = PredictorKind::mf;
  } else {
    std::string list;
    for (const auto& v : variant_names()) list += (list.empty() ? "" : ", ") + v;
    throw ConfigError("unknown variant '" + std::string(name) + "' (expected one of " + list + ")");
  }
  return c;
}

namespace {
enum StreamTag : std::uint64_t { kLocalStream = 1, kGlobalStream = 2, kPredictorStream = 3, kUpsampleStream = 4 };
}

DeepLGR::DeepLGR(const ModelConfig& config, std::size_t H, std::size_t W, std::size_t K)
    : config_(config), H_(H), W_(W), K_(K) {
  config_.validate();
  if (H == 0 || W == 0 || K == 0) throw ConfigError("model grid dimensions must be positive");
  if (config_.task == Task::infer_fine && (H % config_.upscale != 0 || W % config_.upscale != 0)) {
    throw ConfigError("fine grid " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by upscale " +
                      std::to_string(config_.upscale));
  }
  if (in_h() < 3 || in_w() < 3) throw ConfigError("input grid must be at least 3x3");
  const std::size_t n = config_.feature_channels();

  CounterRng local_rng(CounterRng::derive(config_.seed, kLocalStream));
  local_ = LocalExtractorParams::init(in_channels(), config_.F, n, config_.M, config_.se_reduction, local_rng);

  if (config_.task == Task::infer_fine) {
    CounterRng up_rng(CounterRng::derive(config_.seed, kUpsampleStream));
    fine_upsample_ = UpsampleChain::init(n, config_.upscale, config_.upscale, up_rng);
  }
  if (config_.use_global) {
    CounterRng global_rng(CounterRng::derive(config_.seed, kGlobalStream));
    global_ = GlobalContextParams::init(config_.pyramid, H_, W_, n, global_rng);
    for (auto& b : global_.branches) {
      b.bn.momentum = config_.bn_momentum;
      b.bn.eps = config_.bn_eps;
    }
    if (config_.pyramid.output_channels(n) != config_.predictor_channels()) {
      throw ShapeError("global context channel count disagrees with predictor input");
    }
  }
  CounterRng pred_rng(CounterRng::derive(config_.seed, kPredictorStream));
  predictor_ = Predictor::init(config_.predictor, H_, W_, config_.predictor_channels(), K_, pred_rng);
}

std::size_t DeepLGR::in_h() const { return config_.task == Task::infer_fine ? H_ / config_.upscale : H_; }
std::size_t DeepLGR::in_w() const { return config_.task == Task::infer_fine ? W_ / config_.upscale : W_; }

std::size_t DeepLGR::in_channels() const {
  return config_.task == Task::infer_fine ? K_ : K_ * config_.temporal.blocks();
}

Tensor DeepLGR::features(const Tensor& x, ops::BnMode mode) {
  if (x.rank() != 4 || x.dim(1) != in_h() || x.dim(2) != in_w() || x.dim(3) != in_channels()) {
    throw ShapeError("model input " + shape_str(x.shape()) + " does not match [B," + std::to_string(in_h()) + "," +
                     std::to_string(in_w()) + "," + std::to_string(in_channels()) + "]");
  }
  Tensor z = extract_local(x, local_);
  if (config_.task == Task::infer_fine) z = fine_upsample_(z);
  if (config_.use_global) z = global_context(z, config_.pyramid, global_, mode);
  return z;
}

Tensor DeepLGR::forward(const Tensor& x, ops::BnMode mode) { return predict(features(x, mode), predictor_); }

NamedTensors DeepLGR::parameters() const {
  NamedTensors out;
  local_.collect("local", out);
  if (config_.task == Task::infer_fine) fine_upsample_.collect("upsample", out);
  if (config_.use_global) global_.collect("global", out);
  predictor_.collect("predictor", out);
  return out;
}

std::vector<std::pair<std::string, ops::BatchNormState*>> DeepLGR::bn_states() {
  std::vector<std::pair<std::string, ops::BatchNormState*>> out;
  if (config_.use_global) global_.collect_bn("global", out);
  return out;
}

std::size_t DeepLGR::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.numel();
  return n;
}

}  // namespace deeplgr
