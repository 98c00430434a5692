#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "deeplgr/errors.hpp"
#include "deeplgr/grid.hpp"

namespace deeplgr {

/// Binary layout (little-endian):
///   "DLGR" | version u32 | H u32 | W u32 | K u32 | num_slots u32 | slots_per_day u32 | seed u64
///   payload: num_slots * H * W * K f32, row-major (t, i, j, k)
/// A JSON sidecar `<path>.json` carries the full DatasetMeta.
inline constexpr char kDatasetMagic[4] = {'D', 'L', 'G', 'R'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 36;

class DatasetFileError : public DataError {
 public:
  enum class Kind { io, bad_magic, bad_version, truncated, shape_mismatch };
  DatasetFileError(Kind kind, const std::string& msg) : DataError(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

nlohmann::json meta_to_json(const DatasetMeta& meta);
DatasetMeta meta_from_json(const nlohmann::json& j);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

void write_dataset(const std::filesystem::path& path, const Dataset& ds);
/// Reads the binary file and, when present, its sidecar. Throws DatasetFileError.
Dataset read_dataset(const std::filesystem::path& path);

/// One row per (t, i, j) with K measurement columns.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds);

}  // namespace deeplgr
