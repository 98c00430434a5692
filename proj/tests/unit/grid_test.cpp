#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "deeplgr/dataset_io.hpp"
#include "deeplgr/grid.hpp"
#include "test_support.hpp"

using namespace deeplgr;
using namespace deeplgr::testing;

namespace {

DatasetMeta small_meta(std::size_t days, std::size_t spd = 12) {
  DatasetMeta m;
  m.H = 6;
  m.W = 4;
  m.slots_per_day = spd;
  m.num_slots = days * spd;
  m.seed = 11;
  m.generator.num_zones = 4;
  return m;
}

Dataset small_dataset(std::size_t days, std::size_t spd = 12) {
  const DatasetMeta m = small_meta(days, spd);
  return generate_synthetic(m, make_archetype_map(m.H, m.W, m.generator.archetypes, m.generator.num_zones, m.seed));
}

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "deeplgr_grid_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Archetype, NamesRoundTrip) {
  for (std::uint32_t id = 0; id < kNumArchetypes; ++id) {
    const Archetype a = archetype_from_id(id);
    EXPECT_EQ(parse_archetype(archetype_name(a)), a);
  }
  EXPECT_THROW(parse_archetype("stadium"), ConfigError);
  EXPECT_THROW(archetype_from_id(4), ConfigError);
}

TEST(Archetype, CurvesAreNonNegativeAndPeakWhereExpected) {
  const auto office = make_archetype(Archetype::office, 48, 1.0);
  const auto res = make_archetype(Archetype::residential, 48, 1.0);
  for (double v : office.daily_curve) EXPECT_GE(v, 0.0);
  const auto peak = [](const RegionArchetype& a) {
    return std::max_element(a.daily_curve.begin(), a.daily_curve.end()) - a.daily_curve.begin();
  };
  EXPECT_LT(peak(office), 24);  // morning
  EXPECT_GT(peak(res), 30);     // evening
}

TEST(Generator, SameSeedIsBitIdentical) {
  const Dataset a = small_dataset(3), b = small_dataset(3);
  ASSERT_EQ(a.values.size(), b.values.size());
  EXPECT_EQ(std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)), 0);
  DatasetMeta m = small_meta(3);
  m.seed = 12;
  const Dataset c = generate_synthetic(m, a.meta.archetype_map);
  EXPECT_NE(std::memcmp(a.values.data(), c.values.data(), a.values.size() * sizeof(float)), 0);
}

TEST(Generator, ValuesNonNegative) {
  const Dataset d = small_dataset(4);
  for (float v : d.values) ASSERT_GE(v, 0.0f);
}

TEST(Generator, ZeroNoiseOfficeIsPeriodic) {
  DatasetMeta m = small_meta(5);
  m.generator.noise_scale = 0.0;
  m.generator.weekly_modulation = 0.0;
  m.generator.coupling = 0.0;
  const Dataset d = generate_synthetic(m, std::vector<std::uint8_t>(m.H * m.W, 0));
  const std::size_t n = m.grid_size(), spd = m.slots_per_day;
  for (std::size_t t = spd; t < m.num_slots; ++t)
    for (std::size_t e = 0; e < n; ++e) ASSERT_EQ(d.values[t * n + e], d.values[(t - spd) * n + e]);
}

TEST(Generator, MeanMatchesDailyCurve) {
  DatasetMeta m = small_meta(200, 8);
  m.K = 1;
  m.measurement_names = {"inflow"};
  m.generator.weekly_modulation = 0.0;
  m.generator.coupling = 0.0;
  m.generator.intensity_spread = 0.0;
  const Dataset d = generate_synthetic(m, std::vector<std::uint8_t>(m.H * m.W, 1));
  const auto curve = make_archetype(Archetype::residential, m.slots_per_day, 1.0).daily_curve;
  const std::size_t HW = m.H * m.W;
  for (std::size_t s = 0; s < m.slots_per_day; ++s) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t t = s; t < m.num_slots; t += m.slots_per_day)
      for (std::size_t r = 0; r < HW; ++r, ++n) sum += d.values[t * HW + r];
    const double sigma = std::sqrt(std::max(curve[s], 1.0));
    EXPECT_NEAR(sum / static_cast<double>(n), curve[s], 3.0 * sigma / std::sqrt(static_cast<double>(n))) << "slot " << s;
  }
}

TEST(Generator, RejectsBadArchetypeMap) {
  const DatasetMeta m = small_meta(2);
  EXPECT_THROW(generate_synthetic(m, std::vector<std::uint8_t>(m.H * m.W, 9)), ConfigError);
  EXPECT_THROW(generate_synthetic(m, std::vector<std::uint8_t>(3, 0)), ConfigError);
}

TEST(ArchetypeMap, UsesEachArchetypeWhenZonesAllow) {
  const auto map = make_archetype_map(32, 32, {"office", "residential", "park", "uniform"}, 8, 5);
  std::set<std::uint8_t> seen(map.begin(), map.end());
  EXPECT_GE(seen.size(), 3u);
  for (auto id : map) EXPECT_LT(id, kNumArchetypes);
}

// ---- windows ----

TEST(Window, ClosenessOnly) {
  const Dataset d = small_dataset(2);
  const auto w = make_window(d, 5, TemporalSpec{1, 0, 0});
  ASSERT_TRUE(w.has_value());
  EXPECT_EQ(w->x.shape(), (Shape{6, 4, 2}));
  const auto prev = d.grid(4).values;
  for (std::size_t e = 0; e < prev.size(); ++e) EXPECT_EQ(w->x[e], prev[e]);
}

TEST(Window, DefaultSpecHas22Channels) {
  const Dataset d = small_dataset(22);
  const TemporalSpec spec;
  const std::size_t t = 21 * 12 + 3;
  const auto w = make_window(d, t, spec);
  ASSERT_TRUE(w.has_value());
  EXPECT_EQ(w->x.dim(2), 22u);
  const auto prev = d.grid(t - 1).values;
  for (std::size_t r = 0; r < 24; ++r)
    for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(w->x[r * 22 + k], prev[r * 2 + k]);
}

TEST(Window, EveryBlockReconstructsItsSource) {
  const Dataset d = small_dataset(16, 6);
  const TemporalSpec spec{3, 2, 2};
  const std::size_t K = d.meta.K, C = K * spec.blocks(), HW = d.meta.H * d.meta.W;
  for (std::size_t t : window_targets(d, spec)) {
    const auto w = make_window(d, t, spec);
    ASSERT_TRUE(w.has_value());
    const auto src = window_sources(t, spec, d.meta.slots_per_day);
    for (std::size_t blk = 0; blk < src.size(); ++blk) {
      const auto g = d.grid(static_cast<std::size_t>(src[blk])).values;
      for (std::size_t r = 0; r < HW; ++r)
        for (std::size_t k = 0; k < K; ++k) ASSERT_EQ(w->x[r * C + blk * K + k], g[r * K + k]);
    }
    const auto y = d.grid(t).values;
    for (std::size_t e = 0; e < y.size(); ++e) ASSERT_EQ(w->y[e], y[e]);
  }
}

TEST(Window, SourcesInStackingOrder) {
  const auto s = window_sources(1000, TemporalSpec{2, 2, 1}, 10);
  EXPECT_EQ(s, (std::vector<std::ptrdiff_t>{999, 998, 990, 980, 930}));
}

TEST(Window, InsufficientHistorySkipped) {
  const Dataset d = small_dataset(22);
  const TemporalSpec spec;
  EXPECT_FALSE(make_window(d, 7 * 12 * 3 - 1, spec).has_value());
  const auto targets = window_targets(d, spec);
  ASSERT_FALSE(targets.empty());
  EXPECT_EQ(targets.front(), 7u * 12u * 3u);
}

TEST(Window, AssembleBatchStacksWindows) {
  const Dataset d = small_dataset(3);
  const TemporalSpec spec{2, 1, 0};
  const std::vector<std::size_t> ts{14, 20};
  const auto [x, y] = assemble_batch(d, ts, spec);
  EXPECT_EQ(x.shape(), (Shape{2, 6, 4, 6}));
  const auto w = make_window(d, 20, spec);
  for (std::size_t e = 0; e < w->x.numel(); ++e) ASSERT_EQ(x[w->x.numel() + e], w->x[e]);
  for (std::size_t e = 0; e < w->y.numel(); ++e) ASSERT_EQ(y[w->y.numel() + e], w->y[e]);
  EXPECT_THROW(assemble_batch(d, std::vector<std::size_t>{0}, spec), ShapeError);
}

// ---- split ----

TEST(Split, Examples) {
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  auto s = split_chronological(v);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  EXPECT_LT(s.train.back(), s.val.front());
  EXPECT_LT(s.val.back(), s.test.front());

  std::vector<int> ten(10);
  std::iota(ten.begin(), ten.end(), 0);
  auto t = split_chronological(ten);
  EXPECT_EQ(t.train.size(), 8u);
  EXPECT_EQ(t.val.size(), 1u);
  EXPECT_EQ(t.test.size(), 1u);
  EXPECT_THROW(split_chronological(std::vector<int>(5)), ConfigError);
}

TEST(Split, PartsCoverInOrderForAnySize) {
  for (std::size_t n = 10; n < 200; n += 7) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    const auto s = split_chronological(v);
    EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), n);
    EXPECT_FALSE(s.test.empty());
    EXPECT_LT(s.train.back(), s.val.front());
    EXPECT_LT(s.val.back(), s.test.front());
  }
}

// ---- coarsen ----

TEST(Coarsen, Examples) {
  std::vector<float> ones(2 * 2 * 1, 1.0f);
  EXPECT_EQ(coarsen(ones, 2, 2, 1, 2), std::vector<float>{4.0f});
  std::vector<float> g{1, 2, 3, 4, 5, 6};
  EXPECT_EQ(coarsen(g, 2, 3, 1, 1), g);
  EXPECT_THROW(coarsen(g, 2, 3, 1, 2), ShapeError);
}

TEST(Coarsen, ConservesMassAndMatchesOracle) {
  const Dataset d = small_dataset(2);
  const Dataset c = coarsen(d, 2);
  const std::size_t H = d.meta.H, W = d.meta.W, K = d.meta.K;
  EXPECT_EQ(c.meta.H, 3u);
  EXPECT_EQ(c.meta.W, 2u);
  for (std::size_t t = 0; t < d.meta.num_slots; ++t) {
    const auto f = d.grid(t).values;
    const auto g = c.grid(t).values;
    double fs = 0, gs = 0;
    for (float v : f) fs += v;
    for (float v : g) gs += v;
    ASSERT_EQ(fs, gs);
    for (std::size_t i = 0; i < H / 2; ++i)
      for (std::size_t j = 0; j < W / 2; ++j)
        for (std::size_t k = 0; k < K; ++k) {
          float s = 0;
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) s += f[((2 * i + a) * W + 2 * j + b) * K + k];
          ASSERT_EQ(g[(i * (W / 2) + j) * K + k], s);
        }
  }
}

// ---- hours ----

TEST(FilterHours, Examples) {
  const Dataset d = small_dataset(3, 24);
  const Dataset all = filter_hours(d, 0, 24);
  EXPECT_EQ(all.available, d.available);
  const Dataset day = filter_hours(d, 6, 23);
  EXPECT_EQ(day.num_available(), 3u * 17u);
  EXPECT_FALSE(day.has(5));
  EXPECT_TRUE(day.has(6));
  EXPECT_FALSE(day.has(23));
  EXPECT_THROW(filter_hours(d, 5, 5), ConfigError);
  EXPECT_THROW(filter_hours(d, 0, 25), ConfigError);
}

TEST(FilterHours, RemovedSlotsAreUnavailableHistory) {
  const Dataset d = filter_hours(small_dataset(3, 24), 6, 23);
  const TemporalSpec spec{2, 0, 0};
  EXPECT_FALSE(make_window(d, 7, spec).has_value());  // needs slot 5
  EXPECT_TRUE(make_window(d, 8, spec).has_value());
  for (std::size_t t : window_targets(d, spec)) EXPECT_TRUE(d.has(t));
}

// ---- file format ----

TEST(DatasetFile, RoundTripIsBitExact) {
  const Dataset d = small_dataset(2);
  const auto p = temp_path("rt.bin");
  write_dataset(p, d);
  EXPECT_EQ(std::filesystem::file_size(p), kDatasetHeaderBytes + d.values.size() * 4);
  const Dataset r = read_dataset(p);
  ASSERT_EQ(r.values.size(), d.values.size());
  EXPECT_EQ(std::memcmp(r.values.data(), d.values.data(), d.values.size() * sizeof(float)), 0);
  EXPECT_EQ(r.meta.archetype_map, d.meta.archetype_map);
  EXPECT_EQ(r.meta.measurement_names, d.meta.measurement_names);
  EXPECT_EQ(r.meta.seed, d.meta.seed);
  EXPECT_EQ(r.meta.generator.num_zones, d.meta.generator.num_zones);
}

TEST(DatasetFile, ReadsWithoutSidecar) {
  const Dataset d = small_dataset(1);
  const auto p = temp_path("nos.bin");
  write_dataset(p, d);
  std::filesystem::remove(sidecar_path(p));
  const Dataset r = read_dataset(p);
  EXPECT_EQ(r.meta.H, d.meta.H);
  EXPECT_EQ(r.meta.num_slots, d.meta.num_slots);
}

namespace {

DatasetFileError::Kind read_error(const std::filesystem::path& p) {
  try {
    read_dataset(p);
  } catch (const DatasetFileError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error for " << p;
  return DatasetFileError::Kind::io;
}

void patch_file(const std::filesystem::path& p, std::size_t offset, const std::string& bytes) {
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(DatasetFile, DistinctErrors) {
  const Dataset d = small_dataset(1);
  const auto p = temp_path("bad.bin");

  write_dataset(p, d);
  patch_file(p, 0, "XLGR");
  EXPECT_EQ(read_error(p), DatasetFileError::Kind::bad_magic);

  write_dataset(p, d);
  patch_file(p, 4, std::string("\x07\0\0\0", 4));
  EXPECT_EQ(read_error(p), DatasetFileError::Kind::bad_version);

  write_dataset(p, d);
  std::filesystem::resize_file(p, std::filesystem::file_size(p) - 4);
  EXPECT_EQ(read_error(p), DatasetFileError::Kind::truncated);

  write_dataset(p, d);
  {
    std::ofstream f(p, std::ios::app | std::ios::binary);
    f.write("\0\0\0\0", 4);
  }
  EXPECT_EQ(read_error(p), DatasetFileError::Kind::shape_mismatch);

  EXPECT_EQ(read_error(temp_path("missing.bin")), DatasetFileError::Kind::io);
}

TEST(DatasetFile, CsvHasOneRowPerRegionSlot) {
  const Dataset d = small_dataset(1);
  const auto p = temp_path("d.csv");
  write_dataset_csv(p, d);
  std::ifstream f(p);
  std::string line;
  std::size_t rows = 0;
  std::getline(f, line);
  EXPECT_NE(line.find("inflow"), std::string::npos);
  while (std::getline(f, line)) ++rows;
  EXPECT_EQ(rows, d.meta.num_slots * d.meta.H * d.meta.W);
}
