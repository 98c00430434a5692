#include "deeplgr/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "deeplgr/binary_io.hpp"

namespace deeplgr {

using Kind = DatasetFileError::Kind;

nlohmann::json meta_to_json(const DatasetMeta& meta) {
  const GeneratorParams& g = meta.generator;
  return nlohmann::json{
      {"H", meta.H},
      {"W", meta.W},
      {"K", meta.K},
      {"slots_per_day", meta.slots_per_day},
      {"num_slots", meta.num_slots},
      {"measurement_names", meta.measurement_names},
      {"seed", meta.seed},
      {"rng_algorithm", meta.rng_algorithm},
      {"archetype_map", meta.archetype_map},
      {"generator",
       {{"archetypes", g.archetypes},
        {"num_zones", g.num_zones},
        {"noise_scale", g.noise_scale},
        {"weekly_modulation", g.weekly_modulation},
        {"coupling", g.coupling},
        {"intensity_spread", g.intensity_spread},
        {"outflow_lag", g.outflow_lag},
        {"shift_i", g.shift_i},
        {"shift_j", g.shift_j},
        {"outflow_gain", g.outflow_gain}}},
  };
}

DatasetMeta meta_from_json(const nlohmann::json& j) {
  try {
    DatasetMeta m;
    m.H = j.at("H").get<std::size_t>();
    m.W = j.at("W").get<std::size_t>();
    m.K = j.at("K").get<std::size_t>();
    m.slots_per_day = j.at("slots_per_day").get<std::size_t>();
    m.num_slots = j.at("num_slots").get<std::size_t>();
    m.measurement_names = j.at("measurement_names").get<std::vector<std::string>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.rng_algorithm = j.value("rng_algorithm", m.rng_algorithm);
    m.archetype_map = j.value("archetype_map", std::vector<std::uint8_t>{});
    if (j.contains("generator")) {
      const auto& g = j.at("generator");
      GeneratorParams& p = m.generator;
      p.archetypes = g.value("archetypes", p.archetypes);
      p.num_zones = g.value("num_zones", p.num_zones);
      p.noise_scale = g.value("noise_scale", p.noise_scale);
      p.weekly_modulation = g.value("weekly_modulation", p.weekly_modulation);
      p.coupling = g.value("coupling", p.coupling);
      p.intensity_spread = g.value("intensity_spread", p.intensity_spread);
      p.outflow_lag = g.value("outflow_lag", p.outflow_lag);
      p.shift_i = g.value("shift_i", p.shift_i);
      p.shift_j = g.value("shift_j", p.shift_j);
      p.outflow_gain = g.value("outflow_gain", p.outflow_gain);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetFileError(Kind::shape_mismatch, std::string("malformed dataset sidecar: ") + e.what());
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".json";
  return p;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  const DatasetMeta& m = ds.meta;
  if (ds.values.size() != m.num_slots * m.grid_size()) {
    throw ShapeError("write_dataset: value count does not match meta");
  }
  auto narrow = [](std::size_t v, const char* what) {
    if (v > 0xffffffffULL) throw ShapeError(std::string("write_dataset: ") + what + " exceeds u32");
    return static_cast<std::uint32_t>(v);
  };
  std::string buf;
  buf.reserve(kDatasetHeaderBytes + ds.values.size() * 4);
  buf.append(kDatasetMagic, 4);
  binio::put_u32(buf, kDatasetVersion);
  binio::put_u32(buf, narrow(m.H, "H"));
  binio::put_u32(buf, narrow(m.W, "W"));
  binio::put_u32(buf, narrow(m.K, "K"));
  binio::put_u32(buf, narrow(m.num_slots, "num_slots"));
  binio::put_u32(buf, narrow(m.slots_per_day, "slots_per_day"));
  binio::put_u64(buf, m.seed);
  for (float v : ds.values) binio::put_u32(buf, std::bit_cast<std::uint32_t>(v));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetFileError(Kind::io, "cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  std::ofstream side(sidecar_path(path), std::ios::trunc);
  side << meta_to_json(m).dump(2) << '\n';
  if (!out || !side) throw DatasetFileError(Kind::io, "write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetFileError(Kind::io, "cannot open dataset " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 || std::memcmp(buf.data(), kDatasetMagic, 4) != 0) {
    throw DatasetFileError(Kind::bad_magic, path.string() + ": not a DLGR dataset (bad magic)");
  }
  if (buf.size() < kDatasetHeaderBytes) {
    throw DatasetFileError(Kind::truncated, path.string() + ": header truncated");
  }
  binio::Reader r(buf);
  r.skip(4);
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw DatasetFileError(Kind::bad_version, path.string() + ": unsupported version " + std::to_string(version));
  }
  DatasetMeta header;
  header.H = r.u32();
  header.W = r.u32();
  header.K = r.u32();
  header.num_slots = r.u32();
  header.slots_per_day = r.u32();
  header.seed = r.u64();
  if (header.H == 0 || header.W == 0 || header.K == 0 || header.slots_per_day == 0) {
    throw DatasetFileError(Kind::shape_mismatch, path.string() + ": header has zero dimensions");
  }
  const std::uint64_t expected = kDatasetHeaderBytes + 4ULL * header.num_slots * header.H * header.W * header.K;
  if (buf.size() < expected) {
    throw DatasetFileError(Kind::truncated, path.string() + ": payload truncated (" + std::to_string(buf.size()) +
                                                " bytes, header implies " + std::to_string(expected) + ")");
  }
  if (buf.size() != expected) {
    throw DatasetFileError(Kind::shape_mismatch, path.string() + ": file length " + std::to_string(buf.size()) +
                                                     " does not match header-implied " + std::to_string(expected));
  }

  Dataset ds;
  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream sj(side);
    nlohmann::json j;
    try {
      sj >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DatasetFileError(Kind::shape_mismatch, side.string() + ": " + e.what());
    }
    ds.meta = meta_from_json(j);
    if (ds.meta.H != header.H || ds.meta.W != header.W || ds.meta.K != header.K ||
        ds.meta.num_slots != header.num_slots || ds.meta.slots_per_day != header.slots_per_day ||
        ds.meta.seed != header.seed) {
      throw DatasetFileError(Kind::shape_mismatch, path.string() + ": sidecar metadata disagrees with header");
    }
    if (ds.meta.measurement_names.size() != header.K) {
      throw DatasetFileError(Kind::shape_mismatch, side.string() + ": measurement_names length differs from K");
    }
  } else {
    ds.meta = header;
    ds.meta.measurement_names.clear();
    for (std::size_t k = 0; k < header.K; ++k) ds.meta.measurement_names.push_back("m" + std::to_string(k));
  }
  const std::size_t n = header.num_slots * header.grid_size();
  ds.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.values[i] = std::bit_cast<float>(r.u32());
  ds.available.assign(header.num_slots, 1);
  return ds;
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DatasetFileError(Kind::io, "cannot open " + path.string() + " for writing");
  const DatasetMeta& m = ds.meta;
  out << "t,i,j";
  for (const auto& name : m.measurement_names) out << ',' << name;
  out << '\n';
  out.precision(9);
  for (std::size_t t = 0; t < m.num_slots; ++t) {
    if (!ds.has(t)) continue;
    const auto g = ds.grid(t).values;
    for (std::size_t i = 0; i < m.H; ++i)
      for (std::size_t j = 0; j < m.W; ++j) {
        out << t << ',' << i << ',' << j;
        for (std::size_t k = 0; k < m.K; ++k) out << ',' << g[(i * m.W + j) * m.K + k];
        out << '\n';
      }
  }
}

}  // namespace deeplgr
