#include "deeplgr/grid.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "deeplgr/rng.hpp"

namespace deeplgr {

namespace {

constexpr std::array<std::string_view, kNumArchetypes> kArchetypeNames{"office", "residential", "park", "uniform"};

// Circular Gaussian bump over the 24h clock.
double bump(double hour, double center, double width) {
  double d = std::abs(hour - center);
  d = std::min(d, 24.0 - d);
  return std::exp(-0.5 * (d / width) * (d / width));
}

double attraction(Archetype a) {
  switch (a) {
    case Archetype::office: return 1.0;
    case Archetype::residential: return 0.3;
    case Archetype::park: return 0.6;
    case Archetype::uniform: return 0.5;
  }
  return 0.0;
}

}  // namespace

std::string_view archetype_name(Archetype a) { return kArchetypeNames[static_cast<std::size_t>(a)]; }

Archetype parse_archetype(std::string_view name) {
  for (std::size_t i = 0; i < kNumArchetypes; ++i) {
    if (kArchetypeNames[i] == name) return static_cast<Archetype>(i);
  }
  throw ConfigError("unknown archetype '" + std::string(name) + "' (expected office|residential|park|uniform)");
}

Archetype archetype_from_id(std::uint32_t id) {
  if (id >= kNumArchetypes) throw ConfigError("unknown archetype id " + std::to_string(id));
  return static_cast<Archetype>(id);
}

RegionArchetype make_archetype(Archetype kind, std::size_t slots_per_day, double noise_scale) {
  RegionArchetype a{kind, std::vector<double>(slots_per_day), noise_scale};
  for (std::size_t s = 0; s < slots_per_day; ++s) {
    const double h = 24.0 * static_cast<double>(s) / static_cast<double>(slots_per_day);
    double v = 0.0;
    switch (kind) {
      case Archetype::office:
        v = 6.0 + 54.0 * bump(h, 8.5, 1.3) + 14.0 * bump(h, 13.0, 1.5);
        break;
      case Archetype::residential:
        v = 8.0 + 44.0 * bump(h, 19.0, 1.8) + 12.0 * bump(h, 7.0, 1.2);
        break;
      case Archetype::park:
        v = 5.0 + 36.0 * bump(h, 14.0, 2.8);
        break;
      case Archetype::uniform:
        v = 20.0;
        break;
    }
    a.daily_curve[s] = v;
  }
  return a;
}

double weekly_profile(Archetype kind, std::size_t day_of_week) {
  const bool weekend = day_of_week % 7 >= 5;
  switch (kind) {
    case Archetype::office: return weekend ? -1.0 : 0.3;
    case Archetype::residential: return weekend ? 0.5 : 0.0;
    case Archetype::park: return weekend ? 1.0 : -0.3;
    case Archetype::uniform: return 0.0;
  }
  return 0.0;
}

FlowGrid Dataset::grid(std::size_t t) const {
  if (t >= meta.num_slots) throw ShapeError("slot " + std::to_string(t) + " out of range");
  const std::size_t n = meta.grid_size();
  return FlowGrid{t, std::span<const float>(values.data() + t * n, n)};
}

std::size_t Dataset::num_available() const {
  return static_cast<std::size_t>(std::count(available.begin(), available.end(), std::uint8_t{1}));
}

std::vector<std::uint8_t> make_archetype_map(std::size_t H, std::size_t W, const std::vector<std::string>& names,
                                             std::size_t num_zones, std::uint64_t seed) {
  if (names.empty()) throw ConfigError("archetype list is empty");
  std::vector<std::uint8_t> ids;
  for (const auto& n : names) ids.push_back(static_cast<std::uint8_t>(parse_archetype(n)));
  num_zones = std::max<std::size_t>(num_zones, 1);
  CounterRng rng(CounterRng::derive(seed, 0xA7C4));
  struct Seed {
    double y, x;
    std::uint8_t id;
  };
  std::vector<Seed> seeds;
  for (std::size_t z = 0; z < num_zones; ++z) {
    // cycle through the archetypes so each one is present when zones allow
    seeds.push_back({rng.uniform(0.0, static_cast<double>(H)), rng.uniform(0.0, static_cast<double>(W)),
                     ids[z % ids.size()]});
  }
  std::vector<std::uint8_t> map(H * W);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& s : seeds) {
        const double dy = static_cast<double>(i) + 0.5 - s.y, dx = static_cast<double>(j) + 0.5 - s.x;
        const double d = dy * dy + dx * dx;
        if (d < best) {
          best = d;
          map[i * W + j] = s.id;
        }
      }
    }
  return map;
}

std::vector<double> intensity_field(std::size_t H, std::size_t W, double spread, std::uint64_t seed) {
  std::vector<double> f(H * W, 1.0);
  if (spread <= 0.0) return f;
  CounterRng rng(CounterRng::derive(seed, 0x1D7E));
  constexpr int kBumps = 5;
  std::vector<double> acc(H * W, 0.0);
  const double scale = static_cast<double>(std::max(H, W));
  for (int b = 0; b < kBumps; ++b) {
    const double cy = rng.uniform(0.0, static_cast<double>(H));
    const double cx = rng.uniform(0.0, static_cast<double>(W));
    const double width = rng.uniform(0.12, 0.3) * scale;
    const double amp = rng.uniform(0.5, 1.0);
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const double dy = static_cast<double>(i) + 0.5 - cy, dx = static_cast<double>(j) + 0.5 - cx;
        acc[i * W + j] += amp * std::exp(-0.5 * (dy * dy + dx * dx) / (width * width));
      }
  }
  const double mx = *std::max_element(acc.begin(), acc.end());
  for (std::size_t r = 0; r < f.size(); ++r) f[r] = 1.0 - 0.5 * spread + spread * acc[r] / mx;
  return f;
}

Dataset generate_synthetic(const DatasetMeta& meta, const std::vector<std::uint8_t>& archetype_map) {
  const std::size_t H = meta.H, W = meta.W, K = meta.K, spd = meta.slots_per_day;
  if (H == 0 || W == 0 || K == 0 || spd == 0) throw ConfigError("dataset dims must be positive");
  if (archetype_map.size() != H * W) {
    throw ConfigError("archetype map has " + std::to_string(archetype_map.size()) + " entries, expected " +
                      std::to_string(H * W));
  }
  if (meta.measurement_names.size() != K) throw ConfigError("measurement_names must list K names");
  const GeneratorParams& gp = meta.generator;

  std::array<RegionArchetype, kNumArchetypes> arche{
      make_archetype(Archetype::office, spd, gp.noise_scale), make_archetype(Archetype::residential, spd, gp.noise_scale),
      make_archetype(Archetype::park, spd, gp.noise_scale), make_archetype(Archetype::uniform, spd, gp.noise_scale)};
  std::vector<Archetype> kind(H * W);
  for (std::size_t r = 0; r < H * W; ++r) kind[r] = archetype_from_id(archetype_map[r]);
  const std::vector<double> intensity = intensity_field(H, W, gp.intensity_spread, meta.seed);

  auto slot_of_day = [spd](std::ptrdiff_t t) {
    const auto s = static_cast<std::ptrdiff_t>(spd);
    return static_cast<std::size_t>(((t % s) + s) % s);
  };
  auto day_of_week = [spd](std::ptrdiff_t t) {
    const auto s = static_cast<std::ptrdiff_t>(spd);
    const std::ptrdiff_t day = t >= 0 ? t / s : -((-t + s - 1) / s);
    return static_cast<std::size_t>(((day % 7) + 7) % 7);
  };
  auto mean_inflow = [&](std::size_t r, std::ptrdiff_t t) {
    const Archetype a = kind[r];
    const double m = 1.0 + gp.weekly_modulation * weekly_profile(a, day_of_week(t));
    return intensity[r] * arche[static_cast<std::size_t>(a)].daily_curve[slot_of_day(t)] * std::max(m, 0.0);
  };

  // one independent noise stream per (slot, region, channel)
  auto noise_key = [&](std::ptrdiff_t t, std::size_t cell) {
    return CounterRng::derive(CounterRng::derive(meta.seed, static_cast<std::uint64_t>(t)), cell);
  };

  const std::size_t lag = std::max<std::size_t>(gp.outflow_lag, 1);
  const std::size_t history = lag * (K > 1 ? K - 1 : 0);
  const std::size_t total = meta.num_slots + history;
  // inflow[t + history][r], continuous values before rounding
  std::vector<double> inflow(total * H * W, 0.0);
  std::vector<double> citywide_outflow(total, 0.0);

  Dataset ds;
  ds.meta = meta;
  ds.meta.archetype_map = archetype_map;
  ds.meta.rng_algorithm = CounterRng::kAlgorithm;
  ds.values.assign(meta.num_slots * meta.grid_size(), 0.0f);
  ds.available.assign(meta.num_slots, 1);

  auto source_region = [&](std::size_t i, std::size_t j, std::size_t k) {
    const auto clampi = [](std::ptrdiff_t v, std::size_t n) {
      return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
    };
    const auto kk = static_cast<std::ptrdiff_t>(k);
    return clampi(static_cast<std::ptrdiff_t>(i) + kk * gp.shift_i, H) * W +
           clampi(static_cast<std::ptrdiff_t>(j) + kk * gp.shift_j, W);
  };

  for (std::size_t step = 0; step < total; ++step) {
    const auto t = static_cast<std::ptrdiff_t>(step) - static_cast<std::ptrdiff_t>(history);
    const bool warmup = t < 0;
    for (std::size_t r = 0; r < H * W; ++r) {
      const double mu = mean_inflow(r, t);
      double v = mu;
      if (!warmup) {
        CounterRng rng(noise_key(t, r * K));
        if (step > 0) v += gp.coupling * attraction(kind[r]) * intensity[r] * citywide_outflow[step - 1];
        v += gp.noise_scale * std::sqrt(std::max(mu, 1.0)) * rng.normal();
      }
      inflow[step * H * W + r] = std::max(v, 0.0);
    }
    if (warmup) continue;
    const auto ts = static_cast<std::size_t>(t);
    double out_total = 0.0;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t r = i * W + j;
        float* cell = ds.values.data() + (ts * H * W + r) * K;
        cell[0] = static_cast<float>(std::round(inflow[step * H * W + r]));
        for (std::size_t k = 1; k < K; ++k) {
          const std::size_t src_step = step - k * lag;
          const double src = inflow[src_step * H * W + source_region(i, j, k)];
          CounterRng rng(noise_key(t, r * K + k));
          double v = gp.outflow_gain * src;
          v += gp.noise_scale * std::sqrt(std::max(v, 1.0)) * rng.normal();
          cell[k] = static_cast<float>(std::round(std::max(v, 0.0)));
          if (k == 1) out_total += cell[k];
        }
      }
    citywide_outflow[step] = K > 1 ? out_total / static_cast<double>(H * W) : 0.0;
  }
  return ds;
}

std::vector<std::ptrdiff_t> window_sources(std::size_t t, const TemporalSpec& spec, std::size_t slots_per_day) {
  std::vector<std::ptrdiff_t> src;
  const auto tt = static_cast<std::ptrdiff_t>(t);
  const auto d = static_cast<std::ptrdiff_t>(slots_per_day);
  for (std::size_t i = 1; i <= spec.closeness; ++i) src.push_back(tt - static_cast<std::ptrdiff_t>(i));
  for (std::size_t i = 1; i <= spec.period; ++i) src.push_back(tt - static_cast<std::ptrdiff_t>(i) * d);
  for (std::size_t i = 1; i <= spec.trend; ++i) src.push_back(tt - static_cast<std::ptrdiff_t>(i) * 7 * d);
  return src;
}

namespace {

bool window_complete(const Dataset& ds, std::size_t t, const std::vector<std::ptrdiff_t>& src) {
  if (!ds.has(t)) return false;
  for (auto s : src) {
    if (s < 0 || !ds.has(static_cast<std::size_t>(s))) return false;
  }
  return true;
}

void fill_window(const Dataset& ds, std::size_t t, const std::vector<std::ptrdiff_t>& src, double* x, double* y) {
  const std::size_t HW = ds.meta.H * ds.meta.W, K = ds.meta.K, C = K * src.size();
  for (std::size_t blk = 0; blk < src.size(); ++blk) {
    const auto g = ds.grid(static_cast<std::size_t>(src[blk])).values;
    for (std::size_t r = 0; r < HW; ++r)
      for (std::size_t k = 0; k < K; ++k) x[r * C + blk * K + k] = g[r * K + k];
  }
  const auto target = ds.grid(t).values;
  std::copy(target.begin(), target.end(), y);
}

}  // namespace

std::optional<SampleWindow> make_window(const Dataset& ds, std::size_t t, const TemporalSpec& spec) {
  if (spec.blocks() == 0) throw ConfigError("temporal spec has no channels");
  const auto src = window_sources(t, spec, ds.meta.slots_per_day);
  if (!window_complete(ds, t, src)) return std::nullopt;
  const std::size_t H = ds.meta.H, W = ds.meta.W, K = ds.meta.K;
  SampleWindow w{Tensor(Shape{H, W, K * src.size()}), Tensor(Shape{H, W, K}), t};
  fill_window(ds, t, src, w.x.mutable_data().data(), w.y.mutable_data().data());
  return w;
}

std::vector<std::size_t> window_targets(const Dataset& ds, const TemporalSpec& spec) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < ds.meta.num_slots; ++t) {
    if (window_complete(ds, t, window_sources(t, spec, ds.meta.slots_per_day))) out.push_back(t);
  }
  return out;
}

std::pair<Tensor, Tensor> assemble_batch(const Dataset& ds, std::span<const std::size_t> targets,
                                         const TemporalSpec& spec) {
  if (targets.empty()) throw ShapeError("assemble_batch: empty batch");
  const std::size_t H = ds.meta.H, W = ds.meta.W, K = ds.meta.K, C = K * spec.blocks();
  Tensor x(Shape{targets.size(), H, W, C});
  Tensor y(Shape{targets.size(), H, W, K});
  auto xd = x.mutable_data();
  auto yd = y.mutable_data();
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const auto src = window_sources(targets[b], spec, ds.meta.slots_per_day);
    if (!window_complete(ds, targets[b], src)) {
      throw ShapeError("assemble_batch: slot " + std::to_string(targets[b]) + " lacks history");
    }
    fill_window(ds, targets[b], src, xd.data() + b * H * W * C, yd.data() + b * H * W * K);
  }
  return {x, y};
}

std::vector<float> coarsen(std::span<const float> grid, std::size_t H, std::size_t W, std::size_t K, std::size_t s) {
  if (s == 0 || H % s != 0 || W % s != 0) {
    throw ShapeError("coarsen: grid " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by " +
                     std::to_string(s));
  }
  if (grid.size() != H * W * K) throw ShapeError("coarsen: grid length does not match H*W*K");
  const std::size_t h = H / s, w = W / s;
  std::vector<double> acc(h * w * K, 0.0);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t k = 0; k < K; ++k) acc[((i / s) * w + j / s) * K + k] += grid[(i * W + j) * K + k];
  return std::vector<float>(acc.begin(), acc.end());
}

Dataset coarsen(const Dataset& ds, std::size_t s) {
  Dataset out;
  out.meta = ds.meta;
  out.meta.H = ds.meta.H / s;
  out.meta.W = ds.meta.W / s;
  out.meta.archetype_map.clear();
  out.available = ds.available;
  out.values.reserve(ds.values.size() / std::max<std::size_t>(s * s, 1));
  for (std::size_t t = 0; t < ds.meta.num_slots; ++t) {
    auto c = coarsen(ds.grid(t).values, ds.meta.H, ds.meta.W, ds.meta.K, s);
    out.values.insert(out.values.end(), c.begin(), c.end());
  }
  return out;
}

Dataset filter_hours(const Dataset& ds, std::size_t start_slot, std::size_t end_slot) {
  if (start_slot >= end_slot || end_slot > ds.meta.slots_per_day) {
    throw ConfigError("hour filter [" + std::to_string(start_slot) + "," + std::to_string(end_slot) +
                      ") is empty or exceeds the day");
  }
  Dataset out = ds;
  for (std::size_t t = 0; t < ds.meta.num_slots; ++t) {
    const std::size_t sod = t % ds.meta.slots_per_day;
    if (sod < start_slot || sod >= end_slot) out.available[t] = 0;
  }
  return out;
}

}  // namespace deeplgr
