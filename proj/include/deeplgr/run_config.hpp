#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "deeplgr/model.hpp"

namespace deeplgr {

/// Plain-text run configuration: one `key = value` per line, `#` starts a
/// comment. Keys mirror ModelConfig plus `data` and `out` paths. Lists are
/// comma separated (`pyramid_levels = 1,2,4,8`, `td_ranks = 8,8,8`,
/// `hours = 12,40`).
struct RunConfig {
  ModelConfig model;
  std::string data;  // dataset path, may be empty
  std::string out;   // output directory, may be empty
};

/// Throws ConfigError on unknown keys, duplicates, or malformed values.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies one `key=value` override (the same syntax as a config line).
void apply_setting(RunConfig& rc, std::string_view key, std::string_view value);

/// Fully resolved config, every key spelled out, parseable by parse_run_config.
std::string to_key_value(const RunConfig& rc);

}  // namespace deeplgr
