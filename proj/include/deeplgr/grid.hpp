#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deeplgr/tensor.hpp"

namespace deeplgr {

enum class Archetype : std::uint8_t { office = 0, residential = 1, park = 2, uniform = 3 };

inline constexpr std::size_t kNumArchetypes = 4;

std::string_view archetype_name(Archetype a);
/// Throws ConfigError for names outside {office, residential, park, uniform}.
Archetype parse_archetype(std::string_view name);
/// Throws ConfigError for ids outside [0, kNumArchetypes).
Archetype archetype_from_id(std::uint32_t id);

struct RegionArchetype {
  Archetype kind;
  std::vector<double> daily_curve;  // mean inflow per slot of day, all >= 0
  double noise_scale;
};

/// Mean daily inflow curves. Office peaks in the morning, residential in the
/// evening, park around midday; uniform is flat.
RegionArchetype make_archetype(Archetype kind, std::size_t slots_per_day, double noise_scale);

/// Weekday profile in [-1, 1] scaling the weekly modulation (day 5, 6 = weekend).
double weekly_profile(Archetype kind, std::size_t day_of_week);

struct GeneratorParams {
  std::vector<std::string> archetypes{"office", "residential", "park", "uniform"};
  std::size_t num_zones = 8;        // Voronoi zones in the archetype map
  double noise_scale = 1.0;         // noise stddev = noise_scale * sqrt(max(mean, 1))
  double weekly_modulation = 0.3;   // amplitude of the weekday/weekend profile
  double coupling = 0.1;            // inflow response to last slot's citywide mean outflow
  double intensity_spread = 0.8;    // 0 gives unit intensity everywhere
  std::size_t outflow_lag = 1;      // slots between inflow and the derived outflow
  int shift_i = 2;                  // spatial offset of the outflow source region
  int shift_j = 1;
  double outflow_gain = 0.8;
};

struct DatasetMeta {
  std::size_t H = 32, W = 32, K = 2;
  std::size_t slots_per_day = 48;
  std::size_t num_slots = 0;
  std::vector<std::string> measurement_names{"inflow", "outflow"};
  std::uint64_t seed = 0;
  std::string rng_algorithm = "splitmix64-counter";
  GeneratorParams generator;
  std::vector<std::uint8_t> archetype_map;  // H*W ids, empty when unknown

  std::size_t grid_size() const { return H * W * K; }
  std::size_t slots_per_week() const { return 7 * slots_per_day; }
};

/// One timestamped raster P_t, viewed inside a Dataset.
struct FlowGrid {
  std::size_t t;
  std::span<const float> values;  // H*W*K, row-major (i, j, k)
};

/// Immutable sequence of crowd-flow rasters at a fixed sampling interval.
struct Dataset {
  DatasetMeta meta;
  std::vector<float> values;         // num_slots * H * W * K
  std::vector<std::uint8_t> available;  // per slot; cleared by filter_hours

  bool has(std::size_t t) const { return t < meta.num_slots && available[t] != 0; }
  FlowGrid grid(std::size_t t) const;
  std::size_t num_available() const;
};

/// Zone map: each region takes the archetype of its nearest random seed point.
std::vector<std::uint8_t> make_archetype_map(std::size_t H, std::size_t W, const std::vector<std::string>& names,
                                             std::size_t num_zones, std::uint64_t seed);

/// Deterministic synthetic dataset for `meta.num_slots` slots. The inflow channel
/// follows each region's archetype curve, weekly profile and a citywide coupling
/// term; channel k >= 1 is the inflow of a spatially shifted region k*lag slots
/// earlier, scaled by the outflow gain. All values are clipped at 0 and stored as f32.
Dataset generate_synthetic(const DatasetMeta& meta, const std::vector<std::uint8_t>& archetype_map);

/// Region intensity multiplier field used by the generator (H*W, smooth, > 0).
std::vector<double> intensity_field(std::size_t H, std::size_t W, double spread, std::uint64_t seed);

struct TemporalSpec {
  std::size_t closeness = 5;
  std::size_t period = 3;
  std::size_t trend = 3;

  std::size_t blocks() const { return closeness + period + trend; }
};

struct SampleWindow {
  Tensor x;  // [H, W, K * (lc + lp + lq)]
  Tensor y;  // [H, W, K]
  std::size_t t;
};

/// Source slots of each channel block of a window targeting t, in stacking order:
/// closeness t-1..t-lc, period t-d..t-lp*d, trend t-w..t-lq*w.
std::vector<std::ptrdiff_t> window_sources(std::size_t t, const TemporalSpec& spec, std::size_t slots_per_day);

/// Window targeting slot t, or nullopt when any required history (or t itself) is unavailable.
std::optional<SampleWindow> make_window(const Dataset& ds, std::size_t t, const TemporalSpec& spec);

/// All targets with a complete window, in chronological order.
std::vector<std::size_t> window_targets(const Dataset& ds, const TemporalSpec& spec);

/// Stacks the windows for `targets` into x[B,H,W,C] and y[B,H,W,K].
std::pair<Tensor, Tensor> assemble_batch(const Dataset& ds, std::span<const std::size_t> targets,
                                         const TemporalSpec& spec);

template <class T>
struct Split {
  std::vector<T> train, val, test;
};

/// Chronological 80/10/10 split. Throws ConfigError if any part would be empty.
template <class T>
Split<T> split_chronological(const std::vector<T>& items) {
  const std::size_t n = items.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw ConfigError("dataset of " + std::to_string(n) + " samples is too small for a train/val/test split");
  }
  Split<T> s;
  s.train.assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(items.begin() + static_cast<std::ptrdiff_t>(n_train),
               items.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(items.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), items.end());
  return s;
}

/// Sums each s x s block of one raster (H*W*K) into a coarse raster.
std::vector<float> coarsen(std::span<const float> grid, std::size_t H, std::size_t W, std::size_t K, std::size_t s);
Dataset coarsen(const Dataset& ds, std::size_t s);

/// Keeps slots whose slot-of-day lies in [start, end); others become unavailable history.
Dataset filter_hours(const Dataset& ds, std::size_t start_slot, std::size_t end_slot);

}  // namespace deeplgr
