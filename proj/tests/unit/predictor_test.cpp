#include <Eigen/SVD>

#include "deeplgr/predictor.hpp"
#include "test_support.hpp"

using namespace deeplgr;
using namespace deeplgr::testing;

namespace {

Tensor tucker_oracle(const Tensor& A, const Tensor& R, const Tensor& S, const Tensor& T) {
  const std::size_t d1 = A.dim(0), d2 = A.dim(1), d3 = A.dim(2);
  const std::size_t H = R.dim(0), W = S.dim(0), F = T.dim(0);
  Tensor out(Shape{H, W, F});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t f = 0; f < F; ++f) {
        double s = 0.0;
        for (std::size_t a = 0; a < d1; ++a)
          for (std::size_t b = 0; b < d2; ++b)
            for (std::size_t c = 0; c < d3; ++c)
              s += A[(a * d2 + b) * d3 + c] * R[i * d1 + a] * S[j * d2 + b] * T[f * d3 + c];
        o[(i * W + j) * F + f] = s;
      }
  return out;
}

// y[b,i,j,d] = sum_n z[b,i,j,n] * W[i,j,n*D+d]
Tensor per_region_oracle(const Tensor& z, const Tensor& w, std::size_t D) {
  const std::size_t B = z.dim(0), H = z.dim(1), W = z.dim(2), N = z.dim(3);
  Tensor out(Shape{B, H, W, D});
  auto o = out.mutable_data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t d = 0; d < D; ++d) {
          double s = 0.0;
          for (std::size_t n = 0; n < N; ++n) s += z[((b * H + i) * W + j) * N + n] * w[(i * W + j) * N * D + n * D + d];
          o[((b * H + i) * W + j) * D + d] = s;
        }
  return out;
}

Predictor random_td(CounterRng& rng, std::size_t H, std::size_t W, std::size_t N, std::size_t D, std::size_t d1,
                    std::size_t d2, std::size_t d3) {
  return Predictor::tucker(rand_tensor(Shape{d1, d2, d3}, rng, -1, 1, true), rand_tensor(Shape{H, d1}, rng, -1, 1, true),
                           rand_tensor(Shape{W, d2}, rng, -1, 1, true), rand_tensor(Shape{N * D, d3}, rng, -1, 1, true),
                           N, D);
}

std::size_t rnd(CounterRng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.uniform() * static_cast<double>(hi - lo + 1));
}

}  // namespace

TEST(PredictorKind, Names) {
  for (auto k : {PredictorKind::shared, PredictorKind::mf, PredictorKind::td})
    EXPECT_EQ(parse_predictor_kind(predictor_kind_name(k)), k);
  EXPECT_THROW(parse_predictor_kind("cp"), ConfigError);
}

TEST(Tucker, RankOneAllOnes) {
  const Predictor p = Predictor::tucker(Tensor(Shape{1, 1, 1}, 1.0), Tensor(Shape{3, 1}, 1.0), Tensor(Shape{2, 1}, 1.0),
                                        Tensor(Shape{4, 1}, 1.0), 2, 2);
  const Tensor w = realize_weights(p);
  EXPECT_EQ(w.shape(), (Shape{3, 2, 4}));
  for (double v : w.data()) EXPECT_EQ(v, 1.0);
  const Tensor y = predict(Tensor(Shape{1, 3, 2, 2}, 1.0), p);
  for (double v : y.data()) EXPECT_EQ(v, 2.0);  // N' ones
}

TEST(Tucker, ZeroCoreGivesZeroWeights) {
  CounterRng rng(1);
  Predictor p = random_td(rng, 3, 3, 2, 2, 2, 2, 2);
  for (double& v : p.td_core.mutable_data()) v = 0.0;
  const Tensor w = realize_weights(p);
  for (double v : w.data()) EXPECT_EQ(v, 0.0);
}

TEST(Tucker, SixLoopOracleExample) {
  CounterRng rng(2);
  const Predictor p = random_td(rng, 3, 3, 2, 2, 2, 2, 2);
  EXPECT_LT(max_abs_diff(realize_weights(p), tucker_oracle(p.td_core, p.td_R, p.td_S, p.td_T)), 1e-12);
}

TEST(Tucker, OracleOnRandomInstances) {
  CounterRng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t H = rnd(rng, 1, 4), W = rnd(rng, 1, 4), N = rnd(rng, 1, 4), D = rnd(rng, 1, 2);
    const Predictor p = random_td(rng, H, W, N, D, rnd(rng, 1, 4), rnd(rng, 1, 4), rnd(rng, 1, 4));
    const Tensor w = realize_weights(p);
    ASSERT_LT(max_abs_diff(w, tucker_oracle(p.td_core, p.td_R, p.td_S, p.td_T)), 1e-12) << "trial " << trial;
    const Tensor z = rand_tensor(Shape{2, H, W, N}, rng);
    ASSERT_LT(max_abs_diff(predict(z, p), per_region_oracle(z, w, D)), 1e-10) << "trial " << trial;
  }
}

TEST(Tucker, SmallCaseFactorsMatchRealized) {
  CounterRng rng(4);
  const Predictor p = random_td(rng, 2, 2, 3, 1, 2, 2, 2);
  const Tensor z = rand_tensor(Shape{3, 2, 2, 3}, rng);
  EXPECT_LT(max_abs_diff(predict(z, p), predict_with_weights(z, realize_weights(p), 1)), 1e-12);
}

TEST(Tucker, SliceRankBoundedByCoreRanks) {
  CounterRng rng(5);
  const std::size_t H = 8, W = 7;
  const Predictor p = random_td(rng, H, W, 2, 2, 3, 2, 4);
  const Tensor w = realize_weights(p);
  const std::size_t F = 4;
  for (std::size_t f = 0; f < F; ++f) {
    Eigen::MatrixXd slice(H, W);
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) slice(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = w[(i * W + j) * F + f];
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(slice);
    const auto& s = svd.singularValues();
    EXPECT_GT(s(1), 1e-8);
    for (Eigen::Index r = 2; r < s.size(); ++r) EXPECT_LT(s(r), 1e-10 * s(0)) << "slice " << f;
  }
}

TEST(Tucker, ShapeErrors) {
  EXPECT_THROW(Predictor::tucker(Tensor(Shape{2, 2, 2}), Tensor(Shape{3, 3}), Tensor(Shape{3, 2}), Tensor(Shape{4, 2}), 2, 2),
               ShapeError);
  EXPECT_THROW(Predictor::tucker(Tensor(Shape{2, 2, 2}), Tensor(Shape{3, 2}), Tensor(Shape{3, 2}), Tensor(Shape{5, 2}), 2, 2),
               ShapeError);
  CounterRng rng(6);
  const Predictor p = random_td(rng, 3, 3, 2, 2, 2, 2, 2);
  EXPECT_THROW(predict(Tensor(Shape{1, 3, 3, 3}), p), ShapeError);
  EXPECT_THROW(predict(Tensor(Shape{1, 3, 4, 2}), p), ShapeError);
}

TEST(MatrixFactorized, IdentityLReproducesFullWeights) {
  CounterRng rng(7);
  const std::size_t H = 2, W = 3, N = 3, D = 2;
  Tensor L(Shape{H * W, H * W}, 0.0, true);
  for (std::size_t r = 0; r < H * W; ++r) L.mutable_data()[r * H * W + r] = 1.0;
  const Tensor full = rand_tensor(Shape{H * W, N * D}, rng, -1, 1, true);
  const Predictor p = Predictor::matrix_factorized(L, full, H, W, N, D);
  const Tensor w = realize_weights(p);
  for (std::size_t e = 0; e < full.numel(); ++e) EXPECT_EQ(w[e], full[e]);
  const Tensor z = rand_tensor(Shape{2, H, W, N}, rng);
  EXPECT_LT(max_abs_diff(predict(z, p), per_region_oracle(z, w, D)), 1e-12);
}

TEST(MatrixFactorized, RandomInstancesMatchOracle) {
  CounterRng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t H = rnd(rng, 1, 4), W = rnd(rng, 1, 4), N = rnd(rng, 1, 4), D = rnd(rng, 1, 2), k = rnd(rng, 1, 5);
    const Predictor p = Predictor::matrix_factorized(rand_tensor(Shape{H * W, k}, rng, -1, 1, true),
                                                     rand_tensor(Shape{k, N * D}, rng, -1, 1, true), H, W, N, D);
    const Tensor w = realize_weights(p);
    ASSERT_LT(max_abs_diff(w, ops::reshape(matmul_oracle(p.mf_L, p.mf_R), Shape{H, W, N * D})), 1e-12);
    const Tensor z = rand_tensor(Shape{2, H, W, N}, rng);
    ASSERT_LT(max_abs_diff(predict(z, p), per_region_oracle(z, w, D)), 1e-10);
  }
}

TEST(Shared, SameMatrixEverywhere) {
  CounterRng rng(9);
  const Tensor w = rand_tensor(Shape{3, 2}, rng, -1, 1, true);
  const Predictor p = Predictor::shared_weights(w, 4, 2);
  const Tensor full = realize_weights(p);
  EXPECT_EQ(full.shape(), (Shape{4, 2, 6}));
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t f = 0; f < 6; ++f) EXPECT_EQ(full[r * 6 + f], w[f]);
  const Tensor z = rand_tensor(Shape{2, 4, 2, 3}, rng);
  EXPECT_LT(max_abs_diff(predict(z, p), per_region_oracle(z, full, 2)), 1e-12);
}

TEST(ParamCount, DefaultConfigExactValues) {
  CounterRng rng(10);
  const std::size_t H = 32, W = 32, N = 96, D = 2;
  PredictorConfig cfg;
  cfg.kind = PredictorKind::shared;
  EXPECT_EQ(param_count(Predictor::init(cfg, H, W, N, D, rng)), 192u);
  cfg.kind = PredictorKind::mf;
  EXPECT_EQ(param_count(Predictor::init(cfg, H, W, N, D, rng)), 19456u);
  cfg.kind = PredictorKind::td;
  EXPECT_EQ(param_count(Predictor::init(cfg, H, W, N, D, rng)), 2560u);
  EXPECT_EQ(counts::full(H, W, N * D), 196608u);
  EXPECT_LT(counts::td(H, W, 192, 8, 8, 8), counts::mf(H, W, 192, 16));
  EXPECT_LT(counts::mf(H, W, 192, 16), counts::full(H, W, 192));
}

TEST(ParamCount, StoredEqualsClosedForms) {
  CounterRng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t H = rnd(rng, 1, 20), W = rnd(rng, 1, 20), N = rnd(rng, 1, 30), D = rnd(rng, 1, 3);
    PredictorConfig cfg;
    cfg.mf_rank = rnd(rng, 1, 10);
    cfg.td_ranks = {rnd(rng, 1, 6), rnd(rng, 1, 6), rnd(rng, 1, 6)};
    const std::size_t n_f = N * D;
    cfg.kind = PredictorKind::shared;
    EXPECT_EQ(param_count(Predictor::init(cfg, H, W, N, D, rng)), counts::shared(n_f));
    cfg.kind = PredictorKind::mf;
    EXPECT_EQ(param_count(Predictor::init(cfg, H, W, N, D, rng)), counts::mf(H, W, n_f, cfg.mf_rank));
    cfg.kind = PredictorKind::td;
    const Predictor td = Predictor::init(cfg, H, W, N, D, rng);
    EXPECT_EQ(param_count(td), counts::td(H, W, n_f, cfg.td_ranks[0], cfg.td_ranks[1], cfg.td_ranks[2]));
    NamedTensors named;
    td.collect("p", named);
    std::size_t stored = 0;
    for (const auto& [name, t] : named) stored += t.numel();
    EXPECT_EQ(stored, param_count(td));
  }
  EXPECT_EQ(counts::td(5, 7, 9, 1, 1, 1), 1u + 5 + 7 + 9);
}

TEST(ParamCount, RankValidation) {
  CounterRng rng(12);
  PredictorConfig cfg;
  cfg.kind = PredictorKind::mf;
  cfg.mf_rank = 0;
  EXPECT_THROW(Predictor::init(cfg, 4, 4, 2, 2, rng), ConfigError);
  cfg.kind = PredictorKind::td;
  cfg.td_ranks = {2, 0, 2};
  EXPECT_THROW(Predictor::init(cfg, 4, 4, 2, 2, rng), ConfigError);
}

TEST(PredictorInit, RealizedWeightsHaveUnitFanInScale) {
  CounterRng rng(13);
  const std::size_t H = 16, W = 16, N = 48, D = 2;
  for (auto kind : {PredictorKind::mf, PredictorKind::td, PredictorKind::shared}) {
    PredictorConfig cfg;
    cfg.kind = kind;
    const Predictor p = Predictor::init(cfg, H, W, N, D, rng);
    const Tensor w = realize_weights(p);
    double ss = 0;
    for (double v : w.data()) ss += v * v;
    const double var = ss / static_cast<double>(w.numel());
    EXPECT_GT(var * static_cast<double>(N), 0.3) << predictor_kind_name(kind);
    EXPECT_LT(var * static_cast<double>(N), 3.0) << predictor_kind_name(kind);
  }
}

class PredictorGradient : public ::testing::TestWithParam<PredictorKind> {};

TEST_P(PredictorGradient, FactorsAndInput) {
  CounterRng rng(14);
  PredictorConfig cfg;
  cfg.kind = GetParam();
  cfg.mf_rank = 3;
  cfg.td_ranks = {2, 3, 2};
  const Predictor p = Predictor::init(cfg, 3, 4, 3, 2, rng);
  const Tensor z = rand_tensor(Shape{2, 3, 4, 3}, rng, -1, 1, true);
  NamedTensors named{{"z", z}};
  p.collect("pred", named);
  EXPECT_TRUE(grad_ok(check_gradients([&] { return weighted_sum(predict(z, p), 3); }, named)));
}

INSTANTIATE_TEST_SUITE_P(AllKinds, PredictorGradient,
                         ::testing::Values(PredictorKind::shared, PredictorKind::mf, PredictorKind::td),
                         [](const auto& info) { return std::string(predictor_kind_name(info.param)); });
