#include "deeplgr/local_extractor.hpp"
#include "test_support.hpp"

using namespace deeplgr;
using namespace deeplgr::testing;

namespace {

void fill(Tensor& t, double v) {
  for (double& e : t.mutable_data()) e = v;
}

void zero_excitation(SEBlockParams& p) {
  fill(p.squeeze.weight, 0.0);
  fill(p.squeeze.bias, 0.0);
  fill(p.excite.weight, 0.0);
  fill(p.excite.bias, 0.0);
}

void randomize_biases(LocalExtractorParams& p, CounterRng& rng) {
  NamedTensors named;
  p.collect("local", named);
  for (auto& [name, t] : named) {
    if (name.ends_with("bias")) {
      for (double& v : t.mutable_data()) v = rng.uniform(-0.3, 0.3);
    }
  }
}

// Cells of the output that change when input pixel (pi, pj) is perturbed.
std::vector<std::vector<bool>> changed_cells(const LocalExtractorParams& p, const Tensor& x, std::size_t pi,
                                             std::size_t pj) {
  const Tensor base = extract_local(x, p);
  Tensor xp = x.clone();
  const std::size_t W = x.dim(2), C = x.dim(3);
  for (std::size_t c = 0; c < C; ++c) xp.mutable_data()[(pi * W + pj) * C + c] += 1.0;
  const Tensor moved = extract_local(xp, p);
  const std::size_t H = x.dim(1), N = base.dim(3);
  std::vector<std::vector<bool>> out(H, std::vector<bool>(W, false));
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t e = (i * W + j) * N + n;
        if (std::memcmp(&base.data()[e], &moved.data()[e], sizeof(double)) != 0) out[i][j] = true;
      }
  return out;
}

}  // namespace

TEST(SEBlock, HiddenUnitsFloor) {
  EXPECT_EQ(se_hidden_units(64, 16), 4u);
  EXPECT_EQ(se_hidden_units(256, 16), 16u);
  EXPECT_EQ(se_hidden_units(32, 16), 4u);
  EXPECT_EQ(se_hidden_units(3, 16), 3u);
  EXPECT_THROW(se_hidden_units(8, 0), ConfigError);
}

TEST(SEBlock, ZeroExcitationHalvesResidual) {
  CounterRng rng(1);
  SEBlockParams p = SEBlockParams::init(8, 4, rng);
  zero_excitation(p);
  const Tensor x = rand_tensor(Shape{2, 5, 4, 8}, rng);
  const SEBlockTrace t = se_block_trace(x, p);
  for (double a : t.attention.data()) EXPECT_EQ(a, 0.5);
  for (std::size_t e = 0; e < x.numel(); ++e) EXPECT_EQ(t.output[e], 0.5 * t.residual[e]);
}

TEST(SEBlock, ZeroParametersGiveHalfInput) {
  CounterRng rng(2);
  SEBlockParams p = SEBlockParams::init(4, 4, rng);
  zero_excitation(p);
  fill(p.conv1.kernel, 0.0);
  fill(p.conv2.kernel, 0.0);
  const Tensor x = rand_tensor(Shape{1, 3, 3, 4}, rng);
  const Tensor y = se_block(x, p);
  for (std::size_t e = 0; e < x.numel(); ++e) EXPECT_EQ(y[e], 0.5 * x[e]);
}

TEST(SEBlock, ResidualMatchesConvOracle) {
  CounterRng rng(3);
  const SEBlockParams p = SEBlockParams::init(4, 2, rng);
  const Tensor x = rand_tensor(Shape{2, 4, 5, 4}, rng);
  const Tensor h = conv2d_oracle(x, p.conv1.kernel, &p.conv1.bias, true);
  const Tensor hr = ops::relu(h);
  const Tensor branch = conv2d_oracle(hr, p.conv2.kernel, &p.conv2.bias, true);
  const SEBlockTrace t = se_block_trace(x, p);
  double m = 0;
  for (std::size_t e = 0; e < x.numel(); ++e) m = std::max(m, std::abs(t.residual[e] - (x[e] + branch[e])));
  EXPECT_LT(m, 1e-12);
}

TEST(SEBlock, OutputFactorsIntoResidualTimesAttention) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CounterRng rng(100 + seed);
    const std::size_t B = 2, H = 4, W = 3, F = 8;
    const SEBlockParams p = SEBlockParams::init(F, 2, rng);
    const Tensor x = rand_tensor(Shape{B, H, W, F}, rng, -2, 2);
    const SEBlockTrace t = se_block_trace(x, p);
    for (double a : t.attention.data()) {
      EXPECT_GT(a, 0.0);
      EXPECT_LT(a, 1.0);
    }
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < F; ++c) {
        const double a = t.attention[b * F + c];
        for (std::size_t r = 0; r < H * W; ++r) {
          const std::size_t e = (b * H * W + r) * F + c;
          ASSERT_NEAR(t.output[e], a * t.residual[e], 1e-14);
        }
      }
  }
}

TEST(SEBlock, ChannelMismatchRejected) {
  CounterRng rng(4);
  const SEBlockParams p = SEBlockParams::init(4, 2, rng);
  EXPECT_THROW(se_block(Tensor(Shape{1, 3, 3, 5}), p), ShapeError);
  EXPECT_THROW(se_block(Tensor(Shape{3, 3, 4}), p), ShapeError);
}

TEST(SEBlock, Gradients) {
  CounterRng rng(5);
  SEBlockParams p = SEBlockParams::init(4, 2, rng);
  for (double& v : p.conv1.bias.mutable_data()) v = rng.uniform(-0.2, 0.2);
  for (double& v : p.squeeze.bias.mutable_data()) v = rng.uniform(-0.2, 0.2);
  const Tensor x = rand_tensor(Shape{2, 3, 4, 4}, rng, -1, 1, true);
  NamedTensors params{{"x", x}};
  p.collect("se", params);
  EXPECT_TRUE(grad_ok(check_gradients([&] { return weighted_sum(se_block(x, p), 9); }, params)));
}

TEST(LocalExtractor, ZeroInputGivesZeroOutput) {
  CounterRng rng(6);
  const LocalExtractorParams p = LocalExtractorParams::init(3, 8, 8, 1, 4, rng);
  const Tensor y = extract_local(Tensor(Shape{2, 5, 5, 3}), p);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LocalExtractor, ShapeLaw) {
  CounterRng rng(7);
  for (std::size_t M : {1u, 2u, 3u}) {
    const LocalExtractorParams p = LocalExtractorParams::init(6, 8, 12, M, 4, rng);
    EXPECT_EQ(p.blocks.size(), M);
    EXPECT_EQ(extract_local(rand_tensor(Shape{3, 7, 5, 6}, rng), p).shape(), (Shape{3, 7, 5, 12}));
  }
  const LocalExtractorParams p = LocalExtractorParams::init(6, 8, 8, 1, 4, rng);
  EXPECT_THROW(extract_local(Tensor(Shape{1, 2, 5, 6}), p), ShapeError);
  EXPECT_THROW(LocalExtractorParams::init(6, 8, 8, 0, 4, rng), ConfigError);
}

TEST(LocalExtractor, ReceptiveFieldWidth) {
  EXPECT_EQ(local_receptive_field(1), 9u);
  EXPECT_EQ(local_receptive_field(3), 17u);
  EXPECT_EQ(local_receptive_field(9), 41u);
}

// With the excitation weights zeroed the attention is a constant 0.5, so only
// the convolution path remains and the field is exactly (4M+5) x (4M+5).
TEST(LocalExtractor, ConvPathFieldIsExact) {
  for (std::size_t M : {1u, 2u}) {
    CounterRng rng(20 + M);
    LocalExtractorParams p = LocalExtractorParams::init(2, 4, 3, M, 2, rng);
    randomize_biases(p, rng);
    for (auto& b : p.blocks) zero_excitation(b);
    const std::size_t H = 4 * M + 9, W = 4 * M + 8;
    const Tensor x = rand_tensor(Shape{1, H, W, 2}, rng, 0.5, 1.5);
    const std::size_t pi = H / 2, pj = W / 2;
    const auto changed = changed_cells(p, x, pi, pj);
    const long reach = static_cast<long>(2 * M + 2);
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const long d = std::max(std::abs(static_cast<long>(i) - static_cast<long>(pi)),
                                std::abs(static_cast<long>(j) - static_cast<long>(pj)));
        if (d > reach) EXPECT_FALSE(changed[i][j]) << "M=" << M << " cell " << i << "," << j;
      }
    EXPECT_TRUE(changed[pi - static_cast<std::size_t>(reach)][pj]) << "edge of field should move";
    EXPECT_TRUE(changed[pi][pj + static_cast<std::size_t>(reach)]);
  }
}

// The squeeze step pools over the whole grid, so with non-zero excitation
// weights a single pixel moves every output cell.
TEST(LocalExtractor, SqueezeCouplesDistantCells) {
  CounterRng rng(30);
  LocalExtractorParams p = LocalExtractorParams::init(2, 4, 3, 1, 2, rng);
  randomize_biases(p, rng);
  fill(p.blocks[0].squeeze.bias, 1.0);  // keep the bottleneck ReLUs active
  const Tensor x = rand_tensor(Shape{1, 16, 16, 2}, rng, 0.5, 1.5);
  const auto changed = changed_cells(p, x, 0, 0);
  EXPECT_TRUE(changed[15][15]);
}

TEST(LocalExtractor, Gradients) {
  CounterRng rng(8);
  LocalExtractorParams p = LocalExtractorParams::init(3, 4, 2, 2, 2, rng);
  randomize_biases(p, rng);
  const Tensor x = rand_tensor(Shape{2, 4, 4, 3}, rng, -1, 1, true);
  NamedTensors params{{"x", x}};
  p.collect("local", params);
  EXPECT_TRUE(grad_ok(check_gradients([&] { return weighted_sum(extract_local(x, p), 10); }, params)));
}
