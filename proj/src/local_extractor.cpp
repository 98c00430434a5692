#include "deeplgr/local_extractor.hpp"

#include <algorithm>

namespace deeplgr {

std::size_t se_hidden_units(std::size_t channels, std::size_t reduction_ratio) {
  if (reduction_ratio == 0) throw ConfigError("SE reduction ratio must be positive");
  return std::max(channels / reduction_ratio, std::min<std::size_t>(4, channels));
}

SEBlockParams SEBlockParams::init(std::size_t channels, std::size_t reduction_ratio, CounterRng& rng) {
  const std::size_t hidden = se_hidden_units(channels, reduction_ratio);
  SEBlockParams p;
  p.conv1 = Conv::he(3, channels, channels, rng);
  p.conv2 = Conv::he(3, channels, channels, rng);
  p.squeeze = Dense::uniform(channels, hidden, rng);
  p.excite = Dense::uniform(hidden, channels, rng);
  return p;
}

void SEBlockParams::collect(const std::string& prefix, NamedTensors& out) const {
  conv1.collect(prefix + ".conv1", out);
  conv2.collect(prefix + ".conv2", out);
  squeeze.collect(prefix + ".squeeze", out);
  excite.collect(prefix + ".excite", out);
}

SEBlockTrace se_block_trace(const Tensor& x, const SEBlockParams& p) {
  if (x.rank() != 4 || x.dim(3) != p.channels()) {
    throw ShapeError("se_block: input " + shape_str(x.shape()) + " does not have " + std::to_string(p.channels()) +
                     " channels");
  }
  const std::size_t B = x.dim(0), F = x.dim(3);
  SEBlockTrace t;
  t.residual = ops::add(x, p.conv2(ops::relu(p.conv1(x))));
  const Tensor descriptor = ops::reshape(ops::global_avg_pool(t.residual), Shape{B, F});
  t.attention = ops::sigmoid(p.excite(ops::relu(p.squeeze(descriptor))));
  t.output = ops::channel_scale(t.residual, t.attention);
  return t;
}

LocalExtractorParams LocalExtractorParams::init(std::size_t in_channels, std::size_t features,
                                                std::size_t out_channels, std::size_t num_blocks,
                                                std::size_t reduction_ratio, CounterRng& rng) {
  if (num_blocks == 0) throw ConfigError("local extractor needs at least one SE block");
  LocalExtractorParams p;
  p.input = Conv::he(3, in_channels, features, rng);
  for (std::size_t m = 0; m < num_blocks; ++m) p.blocks.push_back(SEBlockParams::init(features, reduction_ratio, rng));
  p.output = Conv::he(3, features, out_channels, rng);
  return p;
}

void LocalExtractorParams::collect(const std::string& prefix, NamedTensors& out) const {
  input.collect(prefix + ".input", out);
  for (std::size_t m = 0; m < blocks.size(); ++m) blocks[m].collect(prefix + ".se" + std::to_string(m), out);
  output.collect(prefix + ".output", out);
}

Tensor extract_local(const Tensor& x, const LocalExtractorParams& p) {
  if (x.rank() != 4 || x.dim(1) < 3 || x.dim(2) < 3) {
    throw ShapeError("extract_local: expected [B,H,W,C] with H,W >= 3, got " + shape_str(x.shape()));
  }
  Tensor h = p.input(x);
  for (const auto& block : p.blocks) h = se_block(h, block);
  return p.output(h);
}

}  // namespace deeplgr
