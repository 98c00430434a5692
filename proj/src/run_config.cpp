#include "deeplgr/run_config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace deeplgr {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects an unsigned integer, got '" + std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const std::string s(v);
    const double d = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  }
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + std::string(key) + "' expects true|false, got '" + std::string(v) + "'");
}

std::vector<std::size_t> to_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(to_size(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) throw ConfigError("'" + std::string(key) + "' expects a comma-separated list");
  return out;
}

std::string join(const auto& values) {
  std::string s;
  for (const auto& v : values) s += (s.empty() ? "" : ",") + std::to_string(v);
  return s;
}

std::string format_double(double d) {
  std::ostringstream ss;
  ss.precision(17);
  ss << d;
  return ss.str();
}

}  // namespace

void apply_setting(RunConfig& rc, std::string_view key, std::string_view value) {
  ModelConfig& c = rc.model;
  const std::string k(key);
  if (k == "data") rc.data = std::string(value);
  else if (k == "out") rc.out = std::string(value);
  else if (k == "task") c.task = parse_task(value);
  else if (k == "M") c.M = to_size(key, value);
  else if (k == "F") c.F = to_size(key, value);
  else if (k == "N") c.N = to_size(key, value);
  else if (k == "se_reduction") c.se_reduction = to_size(key, value);
  else if (k == "global") c.use_global = to_bool(key, value);
  else if (k == "pyramid_levels") c.pyramid.levels = to_list(key, value);
  else if (k == "pyramid_reduction") c.pyramid.reduction = to_size(key, value);
  else if (k == "upsample_mode") c.pyramid.mode = parse_upsample_mode(value);
  else if (k == "predictor") c.predictor.kind = parse_predictor_kind(value);
  else if (k == "mf_rank") c.predictor.mf_rank = to_size(key, value);
  else if (k == "td_ranks") {
    const auto r = to_list(key, value);
    if (r.size() != 3) throw ConfigError("'td_ranks' expects three values d1,d2,d3");
    c.predictor.td_ranks = {r[0], r[1], r[2]};
  } else if (k == "lc") c.temporal.closeness = to_size(key, value);
  else if (k == "lp") c.temporal.period = to_size(key, value);
  else if (k == "lq") c.temporal.trend = to_size(key, value);
  else if (k == "upscale") c.upscale = to_size(key, value);
  else if (k == "lr") c.lr = to_double(key, value);
  else if (k == "batch_size") c.batch_size = to_size(key, value);
  else if (k == "max_epochs") c.max_epochs = to_size(key, value);
  else if (k == "patience") c.patience = to_size(key, value);
  else if (k == "seed") c.seed = to_u64(key, value);
  else if (k == "normalization") c.normalization = parse_normalization(value);
  else if (k == "hours") {
    const auto h = to_list(key, value);
    if (h.size() != 2) throw ConfigError("'hours' expects start,end slot-of-day");
    c.hours_start = h[0];
    c.hours_end = h[1];
  } else if (k == "bn_momentum") c.bn_momentum = to_double(key, value);
  else if (k == "bn_eps") c.bn_eps = to_double(key, value);
  else throw ConfigError("unknown config key '" + k + "'");
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig rc;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    try {
      apply_setting(rc, key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  rc.model.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_key_value(const RunConfig& rc) {
  const ModelConfig& c = rc.model;
  std::ostringstream o;
  if (!rc.data.empty()) o << "data = " << rc.data << "\n";
  if (!rc.out.empty()) o << "out = " << rc.out << "\n";
  o << "task = " << task_name(c.task) << "\n"
    << "M = " << c.M << "\n"
    << "F = " << c.F << "\n"
    << "N = " << c.feature_channels() << "\n"
    << "se_reduction = " << c.se_reduction << "\n"
    << "global = " << (c.use_global ? "true" : "false") << "\n"
    << "pyramid_levels = " << join(c.pyramid.levels) << "\n"
    << "pyramid_reduction = " << c.pyramid.reduction << "\n"
    << "upsample_mode = " << upsample_mode_name(c.pyramid.mode) << "\n"
    << "predictor = " << predictor_kind_name(c.predictor.kind) << "\n"
    << "mf_rank = " << c.predictor.mf_rank << "\n"
    << "td_ranks = " << join(c.predictor.td_ranks) << "\n"
    << "lc = " << c.temporal.closeness << "\n"
    << "lp = " << c.temporal.period << "\n"
    << "lq = " << c.temporal.trend << "\n"
    << "upscale = " << c.upscale << "\n"
    << "lr = " << format_double(c.lr) << "\n"
    << "batch_size = " << c.batch_size << "\n"
    << "max_epochs = " << c.max_epochs << "\n"
    << "patience = " << c.patience << "\n"
    << "seed = " << c.seed << "\n"
    << "normalization = " << normalization_name(c.normalization) << "\n"
    << "hours = " << c.hours_start << "," << c.hours_end << "\n"
    << "bn_momentum = " << format_double(c.bn_momentum) << "\n"
    << "bn_eps = " << format_double(c.bn_eps) << "\n";
  return o.str();
}

}  // namespace deeplgr
