#include "deeplgr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "deeplgr/binary_io.hpp"

namespace deeplgr {

using nlohmann::json;

std::string_view subset_name(Subset s) {
  switch (s) {
    case Subset::train: return "train";
    case Subset::val: return "val";
    case Subset::test: return "test";
  }
  return "?";
}

Subset parse_subset(std::string_view s) {
  if (s == "train") return Subset::train;
  if (s == "val") return Subset::val;
  if (s == "test") return Subset::test;
  throw ConfigError("unknown split '" + std::string(s) + "' (expected train|val|test)");
}

// ---- task data ----

TaskData TaskData::build(const Dataset& ds, const ModelConfig& cfg) {
  cfg.validate();
  TaskData d;
  d.task_ = cfg.task;
  d.temporal_ = cfg.temporal;
  d.fine_ = cfg.hours_end != 0 ? filter_hours(ds, cfg.hours_start, cfg.hours_end) : ds;
  std::vector<std::size_t> samples;
  if (cfg.task == Task::predict) {
    samples = window_targets(d.fine_, d.temporal_);
  } else {
    d.upscale_ = cfg.upscale;
    if (ds.meta.H % cfg.upscale != 0 || ds.meta.W % cfg.upscale != 0) {
      throw ConfigError("grid " + std::to_string(ds.meta.H) + "x" + std::to_string(ds.meta.W) +
                        " not divisible by upscale " + std::to_string(cfg.upscale));
    }
    d.coarse_ = coarsen(d.fine_, cfg.upscale);
    for (std::size_t t = 0; t < d.fine_.meta.num_slots; ++t) {
      if (d.fine_.has(t)) samples.push_back(t);
    }
  }
  if (samples.empty()) throw DataError("dataset yields no complete samples for this task");
  d.split_ = split_chronological(samples);
  return d;
}

const std::vector<std::size_t>& TaskData::slots(Subset s) const {
  switch (s) {
    case Subset::train: return split_.train;
    case Subset::val: return split_.val;
    case Subset::test: return split_.test;
  }
  return split_.test;
}

std::pair<Tensor, Tensor> TaskData::batch(std::span<const std::size_t> slots) const {
  if (task_ == Task::predict) return assemble_batch(fine_, slots, temporal_);
  const std::size_t B = slots.size();
  const std::size_t fine_n = fine_.meta.grid_size(), coarse_n = coarse_.meta.grid_size();
  std::vector<double> x(B * coarse_n), y(B * fine_n);
  for (std::size_t b = 0; b < B; ++b) {
    if (!fine_.has(slots[b])) throw DataError("slot " + std::to_string(slots[b]) + " is unavailable");
    const auto c = coarse_.grid(slots[b]).values;
    const auto f = fine_.grid(slots[b]).values;
    std::copy(c.begin(), c.end(), x.begin() + static_cast<std::ptrdiff_t>(b * coarse_n));
    std::copy(f.begin(), f.end(), y.begin() + static_cast<std::ptrdiff_t>(b * fine_n));
  }
  return {Tensor(Shape{B, coarse_.meta.H, coarse_.meta.W, coarse_.meta.K}, std::move(x)),
          Tensor(Shape{B, fine_.meta.H, fine_.meta.W, fine_.meta.K}, std::move(y))};
}

// ---- normalizer ----

namespace {

std::pair<double, double> value_range(const Dataset& ds, std::size_t last_slot) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t t = 0; t <= last_slot && t < ds.meta.num_slots; ++t) {
    if (!ds.has(t)) continue;
    for (float v : ds.grid(t).values) {
      lo = std::min(lo, static_cast<double>(v));
      hi = std::max(hi, static_cast<double>(v));
    }
  }
  if (!(hi > lo)) return {lo == std::numeric_limits<double>::infinity() ? 0.0 : lo, lo + 1.0};
  return {lo, hi};
}

Tensor affine(const Tensor& x, double shift, double mult) {
  std::vector<double> v(x.data().begin(), x.data().end());
  for (double& e : v) e = (e - shift) * mult;
  return Tensor(x.shape(), std::move(v));
}

}  // namespace

Normalizer Normalizer::fit(Normalization kind, const TaskData& data) {
  Normalizer n;
  n.kind = kind;
  if (kind == Normalization::none) return n;
  const std::size_t last = data.slots(Subset::train).back();
  std::tie(n.out_lo, n.out_hi) = value_range(data.dataset(), last);
  if (data.task() == Task::infer_fine) {
    std::tie(n.in_lo, n.in_hi) = value_range(data.coarse(), last);
  } else {
    n.in_lo = n.out_lo;
    n.in_hi = n.out_hi;
  }
  return n;
}

Tensor Normalizer::input(const Tensor& x) const {
  return kind == Normalization::none ? x : affine(x, in_lo, 1.0 / (in_hi - in_lo));
}

Tensor Normalizer::target(const Tensor& y) const {
  return kind == Normalization::none ? y : affine(y, out_lo, 1.0 / (out_hi - out_lo));
}

Tensor Normalizer::restore(const Tensor& y) const {
  if (kind == Normalization::none) return y;
  std::vector<double> v(y.data().begin(), y.data().end());
  for (double& e : v) e = e * (out_hi - out_lo) + out_lo;
  return Tensor(y.shape(), std::move(v));
}

json Normalizer::to_json() const {
  return json{{"kind", normalization_name(kind)}, {"in", {in_lo, in_hi}}, {"out", {out_lo, out_hi}}};
}

Normalizer Normalizer::from_json(const json& j) {
  Normalizer n;
  n.kind = parse_normalization(j.at("kind").get<std::string>());
  const auto in = j.at("in").get<std::vector<double>>();
  const auto out = j.at("out").get<std::vector<double>>();
  if (in.size() != 2 || out.size() != 2) throw DataError("malformed normalizer record");
  n.in_lo = in[0];
  n.in_hi = in[1];
  n.out_lo = out[0];
  n.out_hi = out[1];
  return n;
}

// ---- checkpoints ----

const TensorRecord* Checkpoint::find(std::string_view name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

ModelConfig Checkpoint::config() const {
  if (!header.contains("config")) throw DataError("checkpoint has no config");
  return config_from_json(header.at("config"));
}

TrainingState Checkpoint::state() const {
  TrainingState s;
  if (!header.contains("state")) return s;
  const json& j = header.at("state");
  try {
    s.epoch = j.at("epoch").get<std::size_t>();
    s.best_val_mae = j.at("best_val_mae").get<double>();
    s.best_epoch = j.at("best_epoch").get<std::size_t>();
    s.stale_epochs = j.at("stale_epochs").get<std::size_t>();
    s.has_best = j.at("has_best").get<bool>();
    s.normalizer = Normalizer::from_json(j.at("normalizer"));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint state: ") + e.what());
  }
  return s;
}

std::string encode_checkpoint(const Checkpoint& c) {
  std::string buf(kCheckpointMagic, 4);
  binio::put_u32(buf, kCheckpointVersion);
  const std::string header = c.header.dump();
  binio::put_u64(buf, header.size());
  buf += header;
  binio::put_u64(buf, c.records.size());
  for (const auto& r : c.records) {
    if (shape_numel(r.shape) != r.data.size()) throw ShapeError("checkpoint record '" + r.name + "' shape/data mismatch");
    binio::put_u32(buf, static_cast<std::uint32_t>(r.name.size()));
    buf += r.name;
    buf.push_back(1);
    binio::put_u32(buf, static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t d : r.shape) binio::put_u64(buf, d);
    for (double v : r.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      binio::put_u64(buf, bits);
    }
  }
  return buf;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  binio::Reader rd(bytes);
  if (rd.bytes(4) != std::string_view(kCheckpointMagic, 4)) throw DataError("not a checkpoint (bad magic)");
  const std::uint32_t version = rd.u32();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  const std::uint64_t header_len = rd.u64();
  try {
    c.header = json::parse(rd.bytes(header_len));
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const std::uint64_t count = rd.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorRecord r;
    r.name = std::string(rd.bytes(rd.u32()));
    if (rd.u8() != 1) throw DataError("checkpoint record '" + r.name + "' has unknown dtype");
    const std::uint32_t ndim = rd.u32();
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      r.shape.push_back(rd.u64());
      n *= r.shape.back();
    }
    if (n > rd.remaining() / 8) throw DataError("checkpoint record '" + r.name + "' is truncated");
    r.data.resize(n);
    for (double& v : r.data) {
      const std::uint64_t bits = rd.u64();
      std::memcpy(&v, &bits, sizeof v);
    }
    c.records.push_back(std::move(r));
  }
  if (rd.remaining() != 0) throw DataError("trailing bytes after checkpoint records");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const std::string bytes = encode_checkpoint(c);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

namespace {

TensorRecord record_of(std::string name, const Shape& shape, std::span<const double> data) {
  return TensorRecord{std::move(name), shape, std::vector<double>(data.begin(), data.end())};
}

json state_json(const TrainingState& s) {
  return json{{"epoch", s.epoch},
              {"best_val_mae", s.best_val_mae},
              {"best_epoch", s.best_epoch},
              {"stale_epochs", s.stale_epochs},
              {"has_best", s.has_best},
              {"normalizer", s.normalizer.to_json()}};
}

void append_model_records(DeepLGR& model, const std::string& prefix, std::vector<TensorRecord>& out) {
  for (const auto& [name, t] : model.parameters()) out.push_back(record_of(prefix + "param/" + name, t.shape(), t.data()));
  for (const auto& [name, bn] : model.bn_states()) {
    const Shape s{bn->running_mean.size()};
    out.push_back(record_of(prefix + "bn/" + name + "/mean", s, bn->running_mean));
    out.push_back(record_of(prefix + "bn/" + name + "/var", s, bn->running_var));
  }
}

const TensorRecord& require(const Checkpoint& c, const std::string& name, std::size_t numel) {
  const TensorRecord* r = c.find(name);
  if (r == nullptr) throw DataError("checkpoint is missing record '" + name + "'");
  if (r->data.size() != numel) {
    throw DataError("checkpoint record '" + name + "' has " + std::to_string(r->data.size()) + " values, expected " +
                    std::to_string(numel));
  }
  return *r;
}

}  // namespace

Checkpoint make_checkpoint(DeepLGR& model, const TrainingState& state, const AdamState* adam) {
  Checkpoint c;
  c.header = json{{"config", config_to_json(model.config())},
                  {"grid", {{"H", model.H()}, {"W", model.W()}, {"K", model.K()}}},
                  {"state", state_json(state)}};
  append_model_records(model, "", c.records);
  if (adam != nullptr) {
    c.header["adam"] = json{{"step", adam->step}, {"lr", adam->lr}};
    const NamedTensors params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Shape& s = params[i].second.shape();
      c.records.push_back(record_of("adam/m/" + params[i].first, s, adam->m[i]));
      c.records.push_back(record_of("adam/v/" + params[i].first, s, adam->v[i]));
    }
  }
  return c;
}

void restore_checkpoint(DeepLGR& model, const Checkpoint& c, AdamState* adam, const std::string& prefix) {
  NamedTensors params = model.parameters();
  for (auto& [name, t] : params) {
    const TensorRecord& r = require(c, prefix + "param/" + name, t.numel());
    if (r.shape != t.shape()) throw DataError("checkpoint record '" + r.name + "' has shape " + shape_str(r.shape));
    auto dst = t.mutable_data();
    std::copy(r.data.begin(), r.data.end(), dst.begin());
  }
  for (auto& [name, bn] : model.bn_states()) {
    bn->running_mean = require(c, prefix + "bn/" + name + "/mean", bn->running_mean.size()).data;
    bn->running_var = require(c, prefix + "bn/" + name + "/var", bn->running_var.size()).data;
  }
  if (adam != nullptr) {
    if (!c.header.contains("adam")) throw DataError("checkpoint carries no optimizer state");
    adam->step = c.header.at("adam").at("step").get<std::uint64_t>();
    for (std::size_t i = 0; i < params.size(); ++i) {
      adam->m[i] = require(c, "adam/m/" + params[i].first, params[i].second.numel()).data;
      adam->v[i] = require(c, "adam/v/" + params[i].first, params[i].second.numel()).data;
    }
  }
}

DeepLGR model_from_checkpoint(const Checkpoint& c) {
  if (!c.header.contains("grid")) throw DataError("checkpoint has no grid record");
  const json& g = c.header.at("grid");
  DeepLGR model(c.config(), g.at("H").get<std::size_t>(), g.at("W").get<std::size_t>(), g.at("K").get<std::size_t>());
  restore_checkpoint(model, c);
  return model;
}

// ---- training ----

json EpochRecord::to_json(bool with_wall) const {
  json j{{"epoch", epoch}, {"train_mae", train_mae}, {"val_mae", val_mae}, {"val_smape", val_smape}};
  if (with_wall) j["wall_ms"] = wall_ms;
  return j;
}

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;

std::vector<std::size_t> shuffled(const std::vector<std::size_t>& items, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> v = items;
  CounterRng rng(CounterRng::derive(CounterRng::derive(seed, kShuffleStream), epoch));
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return v;
}

std::vector<Tensor> tensors_of(const NamedTensors& named) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

// Keeps the log lines of epochs before `first_epoch` and drops the rest.
void truncate_log(const std::filesystem::path& path, std::size_t first_epoch) {
  std::ifstream in(path);
  if (!in) return;
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      if (json::parse(line).at("epoch").get<std::size_t>() < first_epoch) kept += line + "\n";
    } catch (const json::exception&) {
    }
  }
  in.close();
  std::ofstream(path, std::ios::trunc) << kept;
}

}  // namespace

TrainResult train(DeepLGR& model, const TaskData& data, const TrainOptions& opts) {
  const ModelConfig& cfg = model.config();
  if (data.task() != cfg.task || data.H() != model.H() || data.W() != model.W() || data.K() != model.K()) {
    throw ConfigError("task data does not match the model's task or grid");
  }
  std::vector<Tensor> params = tensors_of(model.parameters());
  AdamState adam = make_adam_state(params, cfg.lr);

  TrainingState state;
  TrainResult result;
  Checkpoint best;
  if (opts.resume != nullptr) {
    restore_checkpoint(model, *opts.resume, &adam);
    state = opts.resume->state();
    if (state.has_best) {
      best.header = opts.resume->header;
      best.header.erase("adam");
      for (const auto& r : opts.resume->records) {
        if (r.name.rfind("best/", 0) == 0) best.records.push_back({r.name.substr(5), r.shape, r.data});
      }
    }
  } else {
    state.normalizer = Normalizer::fit(cfg.normalization, data);
  }
  const Normalizer& norm = state.normalizer;
  result.normalizer = norm;

  const bool write = !opts.out_dir.empty();
  const std::filesystem::path log_path = opts.out_dir / "train_log.ndjson";
  if (write) {
    std::filesystem::create_directories(opts.out_dir);
    if (opts.resume != nullptr) {
      truncate_log(log_path, state.epoch);
    } else {
      std::ofstream(log_path, std::ios::trunc);
    }
  }

  const auto& train_slots = data.slots(Subset::train);
  const auto& val_slots = data.slots(Subset::val);

  auto write_last = [&]() {
    if (!write) return;
    Checkpoint last = make_checkpoint(model, state, &adam);
    for (const auto& r : best.records) last.records.push_back({"best/" + r.name, r.shape, r.data});
    save_checkpoint(opts.out_dir / "last.ckpt", last);
  };

  result.early_stopped = state.stale_epochs > cfg.patience;
  for (std::size_t epoch = state.epoch; epoch < cfg.max_epochs && !result.early_stopped; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const std::vector<std::size_t> order = shuffled(train_slots, cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t loss_entries = 0;
    try {
      for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
        const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
        auto [x, y] = data.batch(std::span(order).subspan(lo, hi - lo));
        x = norm.input(x);
        y = norm.target(y);
        for (auto& p : params) p.zero_grad();
        double loss_value;
        {
          GradientTape tape;
          TapeScope scope(tape);
          const Tensor loss = ops::mae_loss(model.forward(x, ops::BnMode::train), y);
          loss_value = loss.item();
          if (!std::isfinite(loss_value)) throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch));
          tape.backward(loss);
        }
        adam_step(params, adam);
        loss_sum += loss_value * static_cast<double>(y.numel());
        loss_entries += y.numel();
      }
    } catch (const DivergenceError& e) {
      result.diverged = true;
      result.divergence = e.what();
      break;
    }

    const EvalReport val = evaluate(model, data, val_slots, norm, "val");
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mae = loss_sum / static_cast<double>(loss_entries) * norm.out_scale();
    rec.val_mae = val.mae;
    rec.val_smape = val.smape;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    const bool improved = !state.has_best || val.mae < state.best_val_mae;
    state.epoch = epoch + 1;
    if (improved) {
      state.has_best = true;
      state.best_val_mae = val.mae;
      state.best_epoch = epoch;
      state.stale_epochs = 0;
      best = make_checkpoint(model, state);
      if (write) save_checkpoint(opts.out_dir / "best.ckpt", best);
    } else {
      ++state.stale_epochs;
    }
    result.log.push_back(rec);
    if (write) {
      std::ofstream(log_path, std::ios::app) << rec.to_json().dump() << "\n";
      write_last();
    }
    if (opts.on_epoch) opts.on_epoch(rec);
    if (state.stale_epochs > cfg.patience) {
      result.early_stopped = true;
      break;
    }
    if (opts.stop_when && opts.stop_when(rec)) break;
  }

  if (state.has_best) restore_checkpoint(model, best);
  result.best_epoch = state.best_epoch;
  result.best_val_mae = state.best_val_mae;
  result.best = std::move(best);
  return result;
}

EvalReport evaluate(DeepLGR& model, const TaskData& data, std::span<const std::size_t> slots, const Normalizer& norm,
                    const std::string& model_id) {
  MetricAccumulator acc(data.H(), data.W(), data.K());
  const std::size_t bs = model.config().batch_size;
  for (std::size_t lo = 0; lo < slots.size(); lo += bs) {
    auto [x, y] = data.batch(slots.subspan(lo, std::min(bs, slots.size() - lo)));
    const Tensor pred = clamp_nonnegative(norm.restore(model.forward(norm.input(x), ops::BnMode::eval)));
    acc.add(pred, y);
  }
  return acc.report(model_id);
}

EvalReport evaluate_baseline(const TaskData& data, std::span<const std::size_t> slots, Baseline b) {
  MetricAccumulator acc(data.H(), data.W(), data.K());
  const char* id = b == Baseline::last ? "Last" : b == Baseline::ca ? "CA" : "uniform-split";
  for (std::size_t lo = 0; lo < slots.size(); lo += 64) {
    auto [x, y] = data.batch(slots.subspan(lo, std::min<std::size_t>(64, slots.size() - lo)));
    Tensor pred;
    if (b == Baseline::uniform_split) {
      if (data.task() != Task::infer_fine) throw ConfigError("uniform-split baseline needs the infer_fine task");
      pred = baseline_uniform_split(x, data.upscale());
    } else {
      if (data.task() != Task::predict) throw ConfigError("Last/CA baselines need the predict task");
      pred = b == Baseline::last ? baseline_last(x, data.K()) : baseline_ca(x, data.K(), data.temporal().closeness);
    }
    acc.add(pred, y);
  }
  return acc.report(id);
}

}  // namespace deeplgr
