#pragma once

#include <array>
#include <string_view>

#include "deeplgr/layers.hpp"

namespace deeplgr {

enum class PredictorKind { shared, mf, td };

std::string_view predictor_kind_name(PredictorKind k);
PredictorKind parse_predictor_kind(std::string_view s);

struct PredictorConfig {
  PredictorKind kind = PredictorKind::td;
  std::size_t mf_rank = 16;
  std::array<std::size_t, 3> td_ranks{8, 8, 8};
};

/// Closed-form stored-parameter counts of the per-region linear predictor,
/// with n_f = N' * D weights per region. No bias terms.
namespace counts {
inline std::size_t shared(std::size_t n_f) { return n_f; }
inline std::size_t full(std::size_t H, std::size_t W, std::size_t n_f) { return H * W * n_f; }
inline std::size_t mf(std::size_t H, std::size_t W, std::size_t n_f, std::size_t k) { return (H * W + n_f) * k; }
inline std::size_t td(std::size_t H, std::size_t W, std::size_t n_f, std::size_t d1, std::size_t d2, std::size_t d3) {
  return d1 * d2 * d3 + d1 * H + d2 * W + d3 * n_f;
}
}  // namespace counts

/// Per-region linear map z[b,i,j,:] (N') -> y[b,i,j,:] (D). The weight of region
/// (i,j) is the N' x D matrix reshape(W[i,j,:]) with flat index f = n * D + d.
struct Predictor {
  PredictorKind kind = PredictorKind::td;
  std::size_t H = 0, W = 0, channels = 0, D = 0;

  Tensor shared_w;  // [N', D]
  Tensor mf_L;      // [H*W, k]   region embeddings
  Tensor mf_R;      // [k, n_f]   parameter embeddings
  Tensor td_core;   // [d1, d2, d3]
  Tensor td_R;      // [H, d1]
  Tensor td_S;      // [W, d2]
  Tensor td_T;      // [n_f, d3]

  std::size_t n_f() const { return channels * D; }

  static Predictor init(const PredictorConfig& cfg, std::size_t H, std::size_t W, std::size_t channels,
                        std::size_t D, CounterRng& rng);
  /// TD predictor from explicit factors; shapes are validated.
  static Predictor tucker(Tensor core, Tensor R, Tensor S, Tensor T, std::size_t channels, std::size_t D);
  static Predictor matrix_factorized(Tensor L, Tensor R, std::size_t H, std::size_t W, std::size_t channels,
                                     std::size_t D);
  static Predictor shared_weights(Tensor w, std::size_t H, std::size_t W);

  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Realized per-region weights W[H, W, n_f]. For TD this is the Tucker product
/// W[i,j,f] = sum_{a,b,c} A[a,b,c] R[i,a] S[j,b] T[f,c].
Tensor realize_weights(const Predictor& p);

/// y[B,H,W,D]. MF and TD contract z against the factors without materializing W.
Tensor predict(const Tensor& z, const Predictor& p);

/// Reference path: applies explicitly realized weights W[H,W,N'*D] region by region.
Tensor predict_with_weights(const Tensor& z, const Tensor& weights, std::size_t D);

std::size_t param_count(const Predictor& p);

}  // namespace deeplgr
