#include "deeplgr/predictor.hpp"

#include <cmath>

namespace deeplgr {

std::string_view predictor_kind_name(PredictorKind k) {
  switch (k) {
    case PredictorKind::shared: return "shared";
    case PredictorKind::mf: return "mf";
    case PredictorKind::td: return "td";
  }
  return "?";
}

PredictorKind parse_predictor_kind(std::string_view s) {
  if (s == "shared") return PredictorKind::shared;
  if (s == "mf") return PredictorKind::mf;
  if (s == "td") return PredictorKind::td;
  throw ConfigError("unknown predictor '" + std::string(s) + "' (expected shared|mf|td)");
}

Predictor Predictor::init(const PredictorConfig& cfg, std::size_t H, std::size_t W, std::size_t channels,
                          std::size_t D, CounterRng& rng) {
  Predictor p;
  p.kind = cfg.kind;
  p.H = H;
  p.W = W;
  p.channels = channels;
  p.D = D;
  const double n = static_cast<double>(channels);
  switch (cfg.kind) {
    case PredictorKind::shared:
      p.shared_w = random_normal(Shape{channels, D}, std::sqrt(1.0 / n), rng);
      break;
    case PredictorKind::mf: {
      const std::size_t k = cfg.mf_rank;
      if (k == 0) throw ConfigError("mf_rank must be positive");
      p.mf_L = random_normal(Shape{H * W, k}, 1.0, rng);
      p.mf_R = random_normal(Shape{k, p.n_f()}, std::sqrt(1.0 / (static_cast<double>(k) * n)), rng);
      break;
    }
    case PredictorKind::td: {
      const auto [d1, d2, d3] = cfg.td_ranks;
      if (d1 == 0 || d2 == 0 || d3 == 0) throw ConfigError("td_ranks must be positive");
      const std::size_t d = std::min({d1, d2, d3});
      // near-superdiagonal core; W then has variance ~ d * var(R) var(S) var(T)
      p.td_core = random_normal(Shape{d1, d2, d3}, 0.01, rng);
      auto core = p.td_core.mutable_data();
      for (std::size_t a = 0; a < d; ++a) core[(a * d2 + a) * d3 + a] += 1.0;
      p.td_R = random_normal(Shape{H, d1}, 1.0, rng);
      p.td_S = random_normal(Shape{W, d2}, 1.0, rng);
      p.td_T = random_normal(Shape{p.n_f(), d3}, std::sqrt(1.0 / (static_cast<double>(d) * n)), rng);
      break;
    }
  }
  return p;
}

Predictor Predictor::tucker(Tensor core, Tensor R, Tensor S, Tensor T, std::size_t channels, std::size_t D) {
  if (core.rank() != 3 || R.rank() != 2 || S.rank() != 2 || T.rank() != 2) {
    throw ShapeError("tucker predictor: core must be 3-way and factors matrices");
  }
  if (R.dim(1) != core.dim(0) || S.dim(1) != core.dim(1) || T.dim(1) != core.dim(2)) {
    throw ShapeError("tucker predictor: factor ranks " + shape_str(R.shape()) + "," + shape_str(S.shape()) + "," +
                     shape_str(T.shape()) + " do not match core " + shape_str(core.shape()));
  }
  if (T.dim(0) != channels * D) {
    throw ShapeError("tucker predictor: T has " + std::to_string(T.dim(0)) + " rows, n_f = " +
                     std::to_string(channels * D));
  }
  Predictor p;
  p.kind = PredictorKind::td;
  p.H = R.dim(0);
  p.W = S.dim(0);
  p.channels = channels;
  p.D = D;
  p.td_core = std::move(core);
  p.td_R = std::move(R);
  p.td_S = std::move(S);
  p.td_T = std::move(T);
  return p;
}

Predictor Predictor::matrix_factorized(Tensor L, Tensor R, std::size_t H, std::size_t W, std::size_t channels,
                                       std::size_t D) {
  if (L.rank() != 2 || R.rank() != 2 || L.dim(0) != H * W || L.dim(1) != R.dim(0) || R.dim(1) != channels * D) {
    throw ShapeError("mf predictor: L " + shape_str(L.shape()) + " and R " + shape_str(R.shape()) +
                     " inconsistent with H*W and n_f");
  }
  Predictor p;
  p.kind = PredictorKind::mf;
  p.H = H;
  p.W = W;
  p.channels = channels;
  p.D = D;
  p.mf_L = std::move(L);
  p.mf_R = std::move(R);
  return p;
}

Predictor Predictor::shared_weights(Tensor w, std::size_t H, std::size_t W) {
  if (w.rank() != 2) throw ShapeError("shared predictor weight must be [N', D]");
  Predictor p;
  p.kind = PredictorKind::shared;
  p.H = H;
  p.W = W;
  p.channels = w.dim(0);
  p.D = w.dim(1);
  p.shared_w = std::move(w);
  return p;
}

void Predictor::collect(const std::string& prefix, NamedTensors& out) const {
  switch (kind) {
    case PredictorKind::shared:
      out.emplace_back(prefix + ".weight", shared_w);
      break;
    case PredictorKind::mf:
      out.emplace_back(prefix + ".L", mf_L);
      out.emplace_back(prefix + ".R", mf_R);
      break;
    case PredictorKind::td:
      out.emplace_back(prefix + ".core", td_core);
      out.emplace_back(prefix + ".R", td_R);
      out.emplace_back(prefix + ".S", td_S);
      out.emplace_back(prefix + ".T", td_T);
      break;
  }
}

namespace {

// Q[i*W + j, c] = sum_{a,b} R[i,a] S[j,b] A[a,b,c]: contract S, then R.
Tensor tucker_spatial(const Predictor& p) {
  const std::size_t d1 = p.td_core.dim(0), d2 = p.td_core.dim(1), d3 = p.td_core.dim(2);
  Tensor a_bac = ops::reshape(ops::permute(p.td_core, {1, 0, 2}), Shape{d2, d1 * d3});
  Tensor s_ac = ops::matmul(p.td_S, a_bac);  // [W, d1*d3]
  Tensor a_jc = ops::reshape(ops::permute(ops::reshape(s_ac, Shape{p.W, d1, d3}), {1, 0, 2}), Shape{d1, p.W * d3});
  return ops::reshape(ops::matmul(p.td_R, a_jc), Shape{p.H * p.W, d3});
}

void check_input(const Tensor& z, const Predictor& p) {
  if (z.rank() != 4 || z.dim(1) != p.H || z.dim(2) != p.W || z.dim(3) != p.channels) {
    throw ShapeError("predict: input " + shape_str(z.shape()) + " does not match predictor grid " +
                     std::to_string(p.H) + "x" + std::to_string(p.W) + " with " + std::to_string(p.channels) +
                     " channels");
  }
}

}  // namespace

Tensor realize_weights(const Predictor& p) {
  switch (p.kind) {
    case PredictorKind::shared: {
      Tensor row = ops::reshape(p.shared_w, Shape{1, p.n_f()});
      Tensor ones(Shape{p.H * p.W, 1}, 1.0);
      return ops::reshape(ops::matmul(ones, row), Shape{p.H, p.W, p.n_f()});
    }
    case PredictorKind::mf:
      return ops::reshape(ops::matmul(p.mf_L, p.mf_R), Shape{p.H, p.W, p.n_f()});
    case PredictorKind::td: {
      if (p.td_R.dim(0) != p.H || p.td_S.dim(0) != p.W || p.td_T.dim(0) != p.n_f()) {
        throw ShapeError("realize_weights: factor dims inconsistent with (H, W, n_f)");
      }
      Tensor q = tucker_spatial(p);                                // [HW, d3]
      Tensor w = ops::matmul(q, ops::permute(p.td_T, {1, 0}));      // [HW, n_f]
      return ops::reshape(w, Shape{p.H, p.W, p.n_f()});
    }
  }
  throw ShapeError("realize_weights: unknown predictor kind");
}

Tensor predict(const Tensor& z, const Predictor& p) {
  check_input(z, p);
  const std::size_t B = z.dim(0), R = p.H * p.W, N = p.channels, D = p.D;
  const Tensor flat = ops::reshape(z, Shape{B * R, N});
  switch (p.kind) {
    case PredictorKind::shared:
      return ops::reshape(ops::matmul(flat, p.shared_w), Shape{B, p.H, p.W, D});
    case PredictorKind::mf: {
      const std::size_t k = p.mf_L.dim(1);
      Tensor r_ndk = ops::reshape(ops::permute(ops::reshape(p.mf_R, Shape{k, N, D}), {1, 2, 0}), Shape{N, D * k});
      Tensor u = ops::reshape(ops::matmul(flat, r_ndk), Shape{B, R, D, k});
      return ops::reshape(ops::region_contract(u, p.mf_L), Shape{B, p.H, p.W, D});
    }
    case PredictorKind::td: {
      const std::size_t d3 = p.td_core.dim(2);
      Tensor t_ndc = ops::reshape(p.td_T, Shape{N, D * d3});
      Tensor u = ops::reshape(ops::matmul(flat, t_ndc), Shape{B, R, D, d3});
      return ops::reshape(ops::region_contract(u, tucker_spatial(p)), Shape{B, p.H, p.W, D});
    }
  }
  throw ShapeError("predict: unknown predictor kind");
}

Tensor predict_with_weights(const Tensor& z, const Tensor& weights, std::size_t D) {
  if (z.rank() != 4 || weights.rank() != 3 || weights.dim(0) != z.dim(1) || weights.dim(1) != z.dim(2) ||
      weights.dim(2) != z.dim(3) * D) {
    throw ShapeError("predict_with_weights: z " + shape_str(z.shape()) + " vs W " + shape_str(weights.shape()));
  }
  const std::size_t B = z.dim(0), R = z.dim(1) * z.dim(2), N = z.dim(3);
  // u[b, r, d, n] = z[b, r, n] replicated over d; q[r, (d, n)] = W[r, n*D + d]
  Tensor rep = ops::concat_channels(std::vector<Tensor>(D, ops::reshape(z, Shape{B, R, N})));
  Tensor u = ops::reshape(rep, Shape{B, R, D, N});
  Tensor q = ops::reshape(ops::permute(ops::reshape(weights, Shape{R, N, D}), {0, 2, 1}), Shape{R * D, N});
  // contract each (r, d) row separately: view u as [B, R*D, 1, N]
  Tensor y = ops::region_contract(ops::reshape(u, Shape{B, R * D, 1, N}), q);
  return ops::reshape(y, Shape{B, z.dim(1), z.dim(2), D});
}

std::size_t param_count(const Predictor& p) {
  NamedTensors t;
  p.collect("", t);
  std::size_t n = 0;
  for (const auto& [name, tensor] : t) n += tensor.numel();
  return n;
}

}  // namespace deeplgr
