#include "deeplgr/global_context.hpp"

#include <algorithm>

namespace deeplgr {

namespace {

std::vector<std::size_t> prime_factors(std::size_t n) {
  std::vector<std::size_t> f;
  for (std::size_t p = 2; p * p <= n; ++p) {
    while (n % p == 0) {
      f.push_back(p);
      n /= p;
    }
  }
  if (n > 1) f.push_back(n);
  return f;
}

// Subpixel factors (<= 4, with 2*2 merged into 4) and the remaining large primes.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_factors(std::size_t factor) {
  std::vector<std::size_t> small, large;
  std::size_t twos = 0;
  for (std::size_t p : prime_factors(factor)) {
    if (p == 2) {
      ++twos;
    } else if (p <= 4) {
      small.push_back(p);
    } else {
      large.push_back(p);
    }
  }
  std::vector<std::size_t> merged(twos / 2, 4);
  if (twos % 2) merged.push_back(2);
  merged.insert(merged.end(), small.begin(), small.end());
  return {merged, large};
}

}  // namespace

void PyramidConfig::validate(std::size_t H, std::size_t W, std::size_t n) const {
  if (levels.empty()) throw ConfigError("pyramid needs at least one level");
  if (reduction == 0 || n % reduction != 0 || n / reduction == 0) {
    throw ConfigError("feature channels " + std::to_string(n) + " not divisible by pyramid reduction " +
                      std::to_string(reduction));
  }
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const std::size_t L = levels[i];
    if (L == 0) throw ConfigError("pyramid level must be positive");
    if (i > 0 && L <= levels[i - 1]) throw ConfigError("pyramid levels must be strictly increasing");
    if (L > std::min(H, W)) {
      throw ConfigError("pyramid level " + std::to_string(L) + " exceeds grid " + std::to_string(H) + "x" +
                        std::to_string(W));
    }
    if (mode == UpsampleMode::subpixel && (H % L != 0 || W % L != 0)) {
      throw ConfigError("subpixel upsampling needs grid " + std::to_string(H) + "x" + std::to_string(W) +
                        " divisible by pyramid level " + std::to_string(L));
    }
  }
}

std::vector<StagePlan> plan_upsample(std::size_t factor_h, std::size_t factor_w) {
  if (factor_h == 0 || factor_w == 0) throw ShapeError("upsample factors must be positive");
  auto [sh, lh] = split_factors(factor_h);
  auto [sw, lw] = split_factors(factor_w);
  std::vector<StagePlan> plan;
  for (std::size_t i = 0; i < std::max(sh.size(), sw.size()); ++i) {
    plan.push_back({i < sh.size() ? sh[i] : 1, i < sw.size() ? sw[i] : 1, false});
  }
  for (std::size_t i = 0; i < std::max(lh.size(), lw.size()); ++i) {
    plan.push_back({i < lh.size() ? lh[i] : 1, i < lw.size() ? lw[i] : 1, true});
  }
  return plan;
}

UpsampleChain UpsampleChain::init(std::size_t channels, std::size_t factor_h, std::size_t factor_w,
                                  CounterRng& rng) {
  UpsampleChain chain;
  for (const StagePlan& s : plan_upsample(factor_h, factor_w)) {
    if (s.nearest) {
      chain.stages.push_back({s, Conv::he(3, channels, channels, rng)});
    } else {
      chain.stages.push_back({s, Conv::he(1, channels, channels * s.fh * s.fw, rng)});
    }
  }
  return chain;
}

Tensor UpsampleChain::operator()(const Tensor& x) const {
  Tensor h = x;
  for (const auto& st : stages) {
    if (st.plan.nearest) {
      h = st.conv(ops::upsample_nearest(h, st.plan.fh, st.plan.fw));
    } else {
      h = ops::pixel_shuffle(st.conv(h), st.plan.fh, st.plan.fw);
    }
  }
  return h;
}

void UpsampleChain::collect(const std::string& prefix, NamedTensors& out) const {
  for (std::size_t i = 0; i < stages.size(); ++i) stages[i].conv.collect(prefix + ".stage" + std::to_string(i), out);
}

GlobalContextParams GlobalContextParams::init(const PyramidConfig& cfg, std::size_t H, std::size_t W,
                                              std::size_t n, CounterRng& rng) {
  cfg.validate(H, W, n);
  const std::size_t c = cfg.reduced_channels(n);
  GlobalContextParams p;
  for (std::size_t L : cfg.levels) {
    PriorBranch b;
    b.level = L;
    b.reduce = Conv::he(1, n, c, rng);
    b.bn_gamma = Tensor(Shape{c}, 1.0, true);
    b.bn_beta = Tensor(Shape{c}, 0.0, true);
    b.bn = ops::BatchNormState(c);
    if (cfg.mode == UpsampleMode::subpixel) b.upsample = UpsampleChain::init(c, H / L, W / L, rng);
    p.branches.push_back(std::move(b));
  }
  return p;
}

void GlobalContextParams::collect(const std::string& prefix, NamedTensors& out) const {
  for (const auto& b : branches) {
    const std::string name = prefix + ".level" + std::to_string(b.level);
    b.reduce.collect(name + ".reduce", out);
    out.emplace_back(name + ".bn.gamma", b.bn_gamma);
    out.emplace_back(name + ".bn.beta", b.bn_beta);
    b.upsample.collect(name + ".upsample", out);
  }
}

void GlobalContextParams::collect_bn(const std::string& prefix,
                                     std::vector<std::pair<std::string, ops::BatchNormState*>>& out) {
  for (auto& b : branches) out.emplace_back(prefix + ".level" + std::to_string(b.level) + ".bn", &b.bn);
}

std::vector<Tensor> build_priors(const Tensor& z, const PyramidConfig& cfg, GlobalContextParams& params,
                                 ops::BnMode mode) {
  if (z.rank() != 4) throw ShapeError("build_priors: expected [B,H,W,N], got " + shape_str(z.shape()));
  cfg.validate(z.dim(1), z.dim(2), z.dim(3));
  if (params.branches.size() != cfg.levels.size()) throw ShapeError("build_priors: branch count differs from levels");
  std::vector<Tensor> priors;
  for (std::size_t i = 0; i < cfg.levels.size(); ++i) {
    PriorBranch& b = params.branches[i];
    if (b.reduce.in_channels() != z.dim(3)) {
      throw ShapeError("build_priors: reduction conv expects " + std::to_string(b.reduce.in_channels()) +
                       " channels, got " + std::to_string(z.dim(3)));
    }
    const Tensor pooled = ops::avg_pool(z, cfg.levels[i], cfg.levels[i]);
    priors.push_back(ops::batch_norm(b.reduce(pooled), b.bn_gamma, b.bn_beta, b.bn, mode));
  }
  return priors;
}

Tensor upsample_prior(const Tensor& prior, std::size_t H, std::size_t W, UpsampleMode mode,
                      const UpsampleChain* chain) {
  if (mode == UpsampleMode::bilinear) return ops::upsample_bilinear(prior, H, W);
  const std::size_t L_h = prior.dim(1), L_w = prior.dim(2);
  if (H % L_h != 0 || W % L_w != 0) {
    throw ShapeError("upsample_prior: target " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by prior " + shape_str(prior.shape()));
  }
  if (chain == nullptr) throw ShapeError("upsample_prior: subpixel mode needs a stage chain");
  Tensor out = (*chain)(prior);
  if (out.dim(1) != H || out.dim(2) != W) {
    throw ShapeError("upsample_prior: chain produced " + shape_str(out.shape()));
  }
  return out;
}

Tensor global_context(const Tensor& z, const PyramidConfig& cfg, GlobalContextParams& params, ops::BnMode mode) {
  const std::vector<Tensor> priors = build_priors(z, cfg, params, mode);
  std::vector<Tensor> parts{z};
  for (std::size_t i = 0; i < priors.size(); ++i) {
    parts.push_back(upsample_prior(priors[i], z.dim(1), z.dim(2), cfg.mode, &params.branches[i].upsample));
  }
  return ops::concat_channels(parts);
}

}  // namespace deeplgr
