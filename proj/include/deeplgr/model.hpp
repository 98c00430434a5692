#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "deeplgr/global_context.hpp"
#include "deeplgr/grid.hpp"
#include "deeplgr/local_extractor.hpp"
#include "deeplgr/predictor.hpp"

namespace deeplgr {

enum class Task { predict, infer_fine };
enum class Normalization { none, minmax };

std::string_view task_name(Task t);
Task parse_task(std::string_view s);
std::string_view normalization_name(Normalization n);
Normalization parse_normalization(std::string_view s);
std::string_view upsample_mode_name(UpsampleMode m);
UpsampleMode parse_upsample_mode(std::string_view s);

struct ModelConfig {
  Task task = Task::predict;
  std::size_t M = 9;
  std::size_t F = 64;
  std::size_t N = 0;  // local extractor output channels; 0 means F
  std::size_t se_reduction = 16;
  bool use_global = true;
  PyramidConfig pyramid;
  PredictorConfig predictor;
  TemporalSpec temporal;
  std::size_t upscale = 2;  // infer_fine only
  double lr = 0.005;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 300;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  Normalization normalization = Normalization::none;
  std::size_t hours_start = 0;  // slot-of-day window [start, end); end == 0 keeps all slots
  std::size_t hours_end = 0;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  std::size_t feature_channels() const { return N == 0 ? F : N; }
  std::size_t predictor_channels() const {
    return use_global ? pyramid.output_channels(feature_channels()) : feature_channels();
  }
  /// Throws ConfigError on values that no dataset could satisfy.
  void validate() const;
};

nlohmann::json config_to_json(const ModelConfig& c);
/// Missing keys keep their defaults; unknown keys throw ConfigError.
ModelConfig config_from_json(const nlohmann::json& j);

/// The seven ablation variants, in table order.
const std::vector<std::string>& variant_names();
/// Throws ConfigError for unknown names.
ModelConfig build_variant(std::string_view name, const ModelConfig& base);

class DeepLGR {
 public:
  /// Builds and initializes every component from config.seed. H, W are the
  /// output grid; for infer_fine the input grid is (H / upscale, W / upscale).
  DeepLGR(const ModelConfig& config, std::size_t H, std::size_t W, std::size_t K);

  /// x: [B, in_h, in_w, C] -> [B, H, W, K].
  Tensor forward(const Tensor& x, ops::BnMode mode);
  /// Feature map handed to the predictor: [B, H, W, N'].
  Tensor features(const Tensor& x, ops::BnMode mode);

  NamedTensors parameters() const;
  std::vector<std::pair<std::string, ops::BatchNormState*>> bn_states();
  std::size_t param_count() const;

  const ModelConfig& config() const { return config_; }
  std::size_t H() const { return H_; }
  std::size_t W() const { return W_; }
  std::size_t K() const { return K_; }
  std::size_t in_h() const;
  std::size_t in_w() const;
  std::size_t in_channels() const;

  const LocalExtractorParams& local() const { return local_; }
  LocalExtractorParams& local() { return local_; }
  const Predictor& predictor() const { return predictor_; }
  GlobalContextParams& global() { return global_; }

 private:
  ModelConfig config_;
  std::size_t H_, W_, K_;
  LocalExtractorParams local_;
  UpsampleChain fine_upsample_;  // infer_fine only
  GlobalContextParams global_;
  Predictor predictor_;
};

}  // namespace deeplgr
