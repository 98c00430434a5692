#pragma once

#include <optional>
#include <vector>

#include "deeplgr/tensor.hpp"

/// Differentiable operators over channels-last tensors ([B,H,W,C]).
///
/// Every operator is a pure function of its inputs. When a GradientTape is
/// active on the calling thread and any input requires a gradient, the
/// operator records a backward rule on that tape.
namespace deeplgr::ops {

enum class Padding { same, valid };
enum class BnMode { train, eval };

// ---- elementwise / structural ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
/// Concatenates along the last axis; all leading dims must agree.
Tensor concat_channels(const std::vector<Tensor>& parts);
/// Mean absolute error over all entries; subgradient 0 where pred == target.
Tensor mae_loss(const Tensor& pred, const Tensor& target);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[B,Fin] * w[Fin,Fout] + b[Fout].
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);
/// out[b,r,d] = sum_c u[b,r,d,c] * q[r,c].
Tensor region_contract(const Tensor& u, const Tensor& q);

// ---- spatial ----
/// Cross-correlation of x[B,H,W,Cin] with kernel[kh,kw,Cin,Cout].
Tensor conv2d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
              Padding padding = Padding::same);
/// Adaptive average pooling; bin i spans [floor(i*H/out_h), floor((i+1)*H/out_h)).
Tensor avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor global_avg_pool(const Tensor& x);
/// out[b, y*rh+dy, x*rw+dx, c] = in[b, y, x, c*rh*rw + dy*rw + dx].
Tensor pixel_shuffle(const Tensor& x, std::size_t rh, std::size_t rw);
/// Inverse index map of pixel_shuffle (not differentiable; used for checks and tooling).
Tensor pixel_unshuffle(const Tensor& x, std::size_t rh, std::size_t rw);
Tensor upsample_nearest(const Tensor& x, std::size_t fh, std::size_t fw);
/// Corner-aligned bilinear resize to (out_h, out_w).
Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);
/// x[B,H,W,C] * a[B,C] broadcast over the spatial axes.
Tensor channel_scale(const Tensor& x, const Tensor& a);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double eps = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-channel normalisation over (B,H,W). Train mode uses batch statistics and
/// updates `state`; eval mode uses the running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  BnMode mode);

}  // namespace deeplgr::ops
