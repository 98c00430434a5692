#include <map>

#include "deeplgr/model.hpp"
#include "deeplgr/training.hpp"
#include "test_support.hpp"

using namespace deeplgr;
using namespace deeplgr::testing;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.M = 1;
  c.F = 8;
  c.se_reduction = 2;
  c.temporal = {2, 1, 0};
  c.pyramid.levels = {1, 2, 4};
  c.predictor.mf_rank = 3;
  c.predictor.td_ranks = {2, 2, 2};
  return c;
}

void randomize_biases(DeepLGR& m, std::uint64_t seed) {
  CounterRng rng(seed);
  for (auto& [name, t] : m.parameters()) {
    if (name.ends_with("bias") || name.ends_with("beta")) {
      for (double& v : t.mutable_data()) v = rng.uniform(-0.2, 0.2);
    }
  }
}

}  // namespace

TEST(ModelConfig, NamesRoundTrip) {
  EXPECT_EQ(parse_task(task_name(Task::infer_fine)), Task::infer_fine);
  EXPECT_EQ(parse_normalization(normalization_name(Normalization::minmax)), Normalization::minmax);
  EXPECT_EQ(parse_upsample_mode(upsample_mode_name(UpsampleMode::bilinear)), UpsampleMode::bilinear);
  EXPECT_THROW(parse_task("forecast"), ConfigError);
  EXPECT_THROW(parse_normalization("zscore"), ConfigError);
  EXPECT_THROW(parse_upsample_mode("bicubic"), ConfigError);
}

TEST(ModelConfig, JsonRoundTrip) {
  ModelConfig c = tiny_config();
  c.task = Task::infer_fine;
  c.upscale = 4;
  c.seed = 77;
  c.lr = 0.01;
  c.predictor.kind = PredictorKind::mf;
  c.pyramid.mode = UpsampleMode::bilinear;
  c.hours_start = 3;
  c.hours_end = 20;
  const ModelConfig r = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(r), config_to_json(c));
  EXPECT_EQ(r.feature_channels(), 8u);
  nlohmann::json bad = config_to_json(c);
  bad["dropout"] = 0.1;
  EXPECT_THROW(config_from_json(bad), ConfigError);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.M = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.F = 12;  // not divisible by the pyramid reduction 8
  EXPECT_THROW(c.validate(), ConfigError);
  c.use_global = false;
  EXPECT_NO_THROW(c.validate());
  c = tiny_config();
  c.task = Task::infer_fine;
  c.upscale = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.lr = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, PredictorChannelsFollowPyramid) {
  for (std::size_t n : {32u, 64u, 128u}) {
    ModelConfig c;
    c.F = n;
    EXPECT_EQ(c.predictor_channels(), n + n / 2);
    c.use_global = false;
    EXPECT_EQ(c.predictor_channels(), n);
  }
}

TEST(Variants, Mapping) {
  const ModelConfig base;
  EXPECT_EQ(variant_names().size(), 7u);
  EXPECT_EQ(config_to_json(build_variant("local+global+TD", base)), config_to_json(base));
  const ModelConfig bil = build_variant("local+bilinear", base);
  EXPECT_TRUE(bil.use_global);
  EXPECT_EQ(bil.pyramid.mode, UpsampleMode::bilinear);
  EXPECT_EQ(bil.predictor.kind, PredictorKind::shared);
  const ModelConfig lmf = build_variant("local+MF", base);
  EXPECT_FALSE(lmf.use_global);
  EXPECT_EQ(lmf.predictor.kind, PredictorKind::mf);
  EXPECT_EQ(build_variant("local", base).predictor.kind, PredictorKind::shared);
  EXPECT_FALSE(build_variant("local+TD", base).use_global);
  EXPECT_EQ(build_variant("local+global", base).predictor.kind, PredictorKind::shared);
  EXPECT_EQ(build_variant("local+global+MF", base).predictor.kind, PredictorKind::mf);
  EXPECT_THROW(build_variant("global", base), ConfigError);
}

TEST(Variants, ParameterCountOrdering) {
  ModelConfig base;
  base.M = 1;
  base.F = 32;
  std::map<std::string, std::size_t> count;
  for (const auto& v : variant_names()) count[v] = DeepLGR(build_variant(v, base), 32, 32, 2).param_count();
  EXPECT_LT(count["local"], count["local+TD"]);
  EXPECT_LT(count["local+TD"], count["local+MF"]);
  EXPECT_LT(count["local+global"], count["local+global+TD"]);
  EXPECT_LT(count["local+global+TD"], count["local+global+MF"]);
  EXPECT_LT(count["local+bilinear"], count["local+global"]);
}

TEST(Model, PredictShapesAndChannels) {
  ModelConfig c = tiny_config();
  DeepLGR full(c, 8, 8, 2);
  EXPECT_EQ(full.in_channels(), 6u);
  CounterRng rng(1);
  const Tensor x = rand_tensor(Shape{3, 8, 8, 6}, rng);
  EXPECT_EQ(full.forward(x, ops::BnMode::train).shape(), (Shape{3, 8, 8, 2}));
  EXPECT_EQ(full.features(x, ops::BnMode::eval).dim(3), 8u + 3u);

  c.use_global = false;
  DeepLGR local(c, 8, 8, 2);
  EXPECT_EQ(local.features(x, ops::BnMode::eval).dim(3), 8u);
  EXPECT_EQ(local.forward(x, ops::BnMode::eval).shape(), (Shape{3, 8, 8, 2}));
  EXPECT_THROW(local.forward(rand_tensor(Shape{1, 8, 8, 5}, rng), ops::BnMode::eval), ShapeError);
}

TEST(Model, DefaultPyramidGivesHalfAgainChannels) {
  for (std::size_t n : {32u, 64u}) {
    ModelConfig c;
    c.M = 1;
    c.F = n;
    c.temporal = {1, 0, 0};
    DeepLGR m(c, 8, 8, 2);
    CounterRng rng(2);
    EXPECT_EQ(m.features(rand_tensor(Shape{1, 8, 8, 2}, rng), ops::BnMode::eval).dim(3), n + n / 2);
  }
}

TEST(Model, InferFineShapes) {
  CounterRng rng(3);
  ModelConfig c = tiny_config();
  c.task = Task::infer_fine;
  c.upscale = 2;
  c.pyramid.levels = {1, 2, 5, 10};
  DeepLGR happy(c, 50, 100, 2);
  EXPECT_EQ(happy.in_h(), 25u);
  EXPECT_EQ(happy.in_w(), 50u);
  EXPECT_EQ(happy.forward(rand_tensor(Shape{1, 25, 50, 2}, rng), ops::BnMode::eval).shape(), (Shape{1, 50, 100, 2}));

  c.upscale = 4;
  c.pyramid.levels = {1, 2, 4, 8};
  DeepLGR bj(c, 128, 128, 2);
  EXPECT_EQ(bj.forward(rand_tensor(Shape{1, 32, 32, 2}, rng), ops::BnMode::eval).shape(), (Shape{1, 128, 128, 2}));
  EXPECT_THROW(DeepLGR(c, 130, 128, 2), ConfigError);
}

TEST(Model, SameSeedSameParameters) {
  const ModelConfig c = tiny_config();
  DeepLGR a(c, 8, 8, 2), b(c, 8, 8, 2);
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_TRUE(bit_equal(pa[i].second, pb[i].second)) << pa[i].first;
  }
  ModelConfig c2 = c;
  c2.seed = 1;
  DeepLGR d(c2, 8, 8, 2);
  EXPECT_FALSE(bit_equal(d.parameters()[0].second, pa[0].second));
}

TEST(Model, ParamCountMatchesStoredTensors) {
  DeepLGR m(tiny_config(), 8, 8, 2);
  std::size_t n = 0;
  for (const auto& [name, t] : m.parameters()) n += t.numel();
  EXPECT_EQ(m.param_count(), n);
}

class ModelGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(ModelGradient, EndToEnd) {
  ModelConfig c = build_variant(GetParam(), tiny_config());
  c.temporal = {1, 1, 0};
  DeepLGR m(c, 8, 8, 2);
  randomize_biases(m, 5);
  CounterRng rng(6);
  const Tensor x = rand_tensor(Shape{1, 8, 8, 4}, rng, -1, 1, true);
  NamedTensors params{{"x", x}};
  for (auto& p : m.parameters()) params.push_back(p);
  std::vector<ops::BatchNormState> saved;
  for (auto& [name, s] : m.bn_states()) saved.push_back(*s);
  auto loss = [&] {
    auto states = m.bn_states();
    for (std::size_t i = 0; i < states.size(); ++i) *states[i].second = saved[i];
    return weighted_sum(m.forward(x, ops::BnMode::eval), 12);
  };
  EXPECT_TRUE(grad_ok(check_gradients(loss, params)));
}

INSTANTIATE_TEST_SUITE_P(Variants, ModelGradient,
                         ::testing::Values("local+global+TD", "local+global+MF", "local+bilinear", "local"),
                         [](const auto& info) {
                           std::string s = info.param;
                           for (char& ch : s) ch = ch == '+' ? '_' : ch;
                           return s;
                         });

TEST(ModelGradient, InferFine) {
  ModelConfig c = tiny_config();
  c.task = Task::infer_fine;
  c.upscale = 2;
  DeepLGR m(c, 8, 8, 2);
  randomize_biases(m, 7);
  CounterRng rng(8);
  const Tensor x = rand_tensor(Shape{2, 4, 4, 2}, rng, 0, 1, true);
  NamedTensors params{{"x", x}};
  for (auto& p : m.parameters()) params.push_back(p);
  std::vector<ops::BatchNormState> saved;
  for (auto& [name, s] : m.bn_states()) saved.push_back(*s);
  auto loss = [&] {
    auto states = m.bn_states();
    for (std::size_t i = 0; i < states.size(); ++i) *states[i].second = saved[i];
    return weighted_sum(m.forward(x, ops::BnMode::train), 13);
  };
  EXPECT_TRUE(grad_ok(check_gradients(loss, params)));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  DeepLGR m(tiny_config(), 8, 8, 2);
  CounterRng rng(9);
  const Tensor x = rand_tensor(Shape{2, 8, 8, 6}, rng);
  m.forward(x, ops::BnMode::train);  // move the running statistics off their defaults
  const Tensor before = m.forward(x, ops::BnMode::eval);

  TrainingState st;
  st.epoch = 4;
  st.best_val_mae = 1.25;
  st.has_best = true;
  st.normalizer.kind = Normalization::minmax;
  st.normalizer.in_hi = 17;
  const std::string bytes = encode_checkpoint(make_checkpoint(m, st));
  const Checkpoint c = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(c), bytes);
  EXPECT_EQ(c.state().epoch, 4u);
  EXPECT_EQ(c.state().normalizer.in_hi, 17.0);

  DeepLGR r = model_from_checkpoint(c);
  EXPECT_TRUE(bit_equal(r.forward(x, ops::BnMode::eval), before));
}

TEST(Checkpoint, CorruptBytesRejected) {
  DeepLGR m(tiny_config(), 8, 8, 2);
  std::string bytes = encode_checkpoint(make_checkpoint(m, TrainingState{}));
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), DataError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), DataError);
}

TEST(Checkpoint, RestoreIntoWrongShapeRejected) {
  DeepLGR m(tiny_config(), 8, 8, 2);
  const Checkpoint c = make_checkpoint(m, TrainingState{});
  ModelConfig other = tiny_config();
  other.F = 16;
  DeepLGR o(other, 8, 8, 2);
  EXPECT_THROW(restore_checkpoint(o, c), DataError);
}
