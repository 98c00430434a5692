#pragma once

#include <vector>

#include "deeplgr/layers.hpp"

namespace deeplgr {

/// Excitation bottleneck width: F / ratio, floored at min(4, F).
std::size_t se_hidden_units(std::size_t channels, std::size_t reduction_ratio);

struct SEBlockParams {
  Conv conv1;      // 3x3, F -> F
  Conv conv2;      // 3x3, F -> F
  Dense squeeze;   // F -> hidden
  Dense excite;    // hidden -> F

  static SEBlockParams init(std::size_t channels, std::size_t reduction_ratio, CounterRng& rng);
  std::size_t channels() const { return conv1.in_channels(); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct SEBlockTrace {
  Tensor residual;   // x + conv2(relu(conv1(x)))
  Tensor attention;  // [B, F], each in (0, 1)
  Tensor output;     // residual rescaled channel-wise by attention
};

/// Residual block, squeeze (global average pool), excitation (dense-relu-dense-sigmoid),
/// then channel rescale of the residual block output.
SEBlockTrace se_block_trace(const Tensor& x, const SEBlockParams& p);
inline Tensor se_block(const Tensor& x, const SEBlockParams& p) { return se_block_trace(x, p).output; }

struct LocalExtractorParams {
  Conv input;                        // 3x3, C -> F
  std::vector<SEBlockParams> blocks; // M blocks
  Conv output;                       // 3x3, F -> N, linear

  static LocalExtractorParams init(std::size_t in_channels, std::size_t features, std::size_t out_channels,
                                   std::size_t num_blocks, std::size_t reduction_ratio, CounterRng& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Convolutional receptive-field width of extract_local along each axis: 4M + 5.
inline std::size_t local_receptive_field(std::size_t num_blocks) { return 4 * num_blocks + 5; }

Tensor extract_local(const Tensor& x, const LocalExtractorParams& p);

}  // namespace deeplgr
