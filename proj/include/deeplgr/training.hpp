#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "deeplgr/adam.hpp"
#include "deeplgr/metrics.hpp"
#include "deeplgr/model.hpp"

namespace deeplgr {

enum class Subset { train, val, test };
std::string_view subset_name(Subset s);
Subset parse_subset(std::string_view s);

/// Samples for one task, split chronologically. Predict samples are windows
/// keyed by target slot; infer_fine samples are (coarse, fine) raster pairs
/// of the same slot, the coarse raster being the block sum of the fine one.
class TaskData {
 public:
  /// Applies the config's hours filter and, for infer_fine, coarsens by cfg.upscale.
  static TaskData build(const Dataset& ds, const ModelConfig& cfg);

  Task task() const { return task_; }
  std::size_t H() const { return fine_.meta.H; }
  std::size_t W() const { return fine_.meta.W; }
  std::size_t K() const { return fine_.meta.K; }
  std::size_t upscale() const { return upscale_; }
  const TemporalSpec& temporal() const { return temporal_; }
  const Dataset& dataset() const { return fine_; }
  const Dataset& coarse() const { return coarse_; }

  const std::vector<std::size_t>& slots(Subset s) const;
  /// Raw (un-normalized) x, y for the given sample slots.
  std::pair<Tensor, Tensor> batch(std::span<const std::size_t> slots) const;

 private:
  Task task_ = Task::predict;
  TemporalSpec temporal_;
  std::size_t upscale_ = 1;
  Dataset fine_;
  Dataset coarse_;
  Split<std::size_t> split_;
};

/// Optional affine scaling of inputs and targets to [0, 1], fitted on the
/// slots the training split can see.
struct Normalizer {
  Normalization kind = Normalization::none;
  double in_lo = 0.0, in_hi = 1.0;
  double out_lo = 0.0, out_hi = 1.0;

  static Normalizer fit(Normalization kind, const TaskData& data);

  Tensor input(const Tensor& x) const;
  Tensor target(const Tensor& y) const;
  /// Maps model outputs back to raw flow units.
  Tensor restore(const Tensor& y) const;
  double out_scale() const { return kind == Normalization::none ? 1.0 : out_hi - out_lo; }

  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& j);
};

// ---- checkpoints ----

/// Layout (little-endian):
///   "DLCK" | version u32 | header_len u64 | header JSON | record_count u64
///   per record: name_len u32 | name | dtype u8 (1 = f64) | ndim u32 | dims u64... | raw data
inline constexpr char kCheckpointMagic[4] = {'D', 'L', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct TrainingState {
  std::size_t epoch = 0;  // next epoch to run
  double best_val_mae = 0.0;
  std::size_t best_epoch = 0;
  std::size_t stale_epochs = 0;
  bool has_best = false;
  Normalizer normalizer;
};

struct Checkpoint {
  nlohmann::json header;  // {"config", "grid", "state"}
  std::vector<TensorRecord> records;

  const TensorRecord* find(std::string_view name) const;
  ModelConfig config() const;
  TrainingState state() const;
};

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
/// Throws DataError on I/O or format errors.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of parameters, batchnorm statistics and (optionally) optimizer state.
Checkpoint make_checkpoint(DeepLGR& model, const TrainingState& state, const AdamState* adam = nullptr);
/// Copies records under `prefix` into `model` (and `adam` when given). Throws DataError on missing records.
void restore_checkpoint(DeepLGR& model, const Checkpoint& c, AdamState* adam = nullptr, const std::string& prefix = "");
/// Builds the model described by the checkpoint header and loads its parameters.
DeepLGR model_from_checkpoint(const Checkpoint& c);

// ---- training ----

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mae = 0.0;
  double val_mae = 0.0;
  double val_smape = 0.0;
  double wall_ms = 0.0;

  nlohmann::json to_json(bool with_wall = true) const;
};

struct TrainOptions {
  std::filesystem::path out_dir;        // empty: no files written
  const Checkpoint* resume = nullptr;   // a last.ckpt written by an earlier run
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<bool(const EpochRecord&)> stop_when;  // extra stopping rule
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
  bool early_stopped = false;
  bool diverged = false;
  std::string divergence;
  Normalizer normalizer;
  Checkpoint best;
};

/// Adam on the MAE loss with per-epoch validation and early stopping. On
/// return `model` holds the best-validation parameters. Writes best.ckpt,
/// last.ckpt and train_log.ndjson into out_dir when it is set.
TrainResult train(DeepLGR& model, const TaskData& data, const TrainOptions& opts = {});

/// Metrics on raw flows: de-normalized predictions clamped at zero.
EvalReport evaluate(DeepLGR& model, const TaskData& data, std::span<const std::size_t> slots,
                    const Normalizer& norm, const std::string& model_id);

enum class Baseline { last, ca, uniform_split };
EvalReport evaluate_baseline(const TaskData& data, std::span<const std::size_t> slots, Baseline b);

}  // namespace deeplgr
