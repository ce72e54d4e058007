#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gecadapt/error.hpp"
#include "gecadapt/synth.hpp"
#include "gecadapt/train.hpp"

using namespace gecadapt;

namespace {

ModelConfig small_model(int vocab) {
  ModelConfig c;
  c.embed_dim = 16;
  c.hidden_dim = 16;
  c.vocab_size = vocab;
  return c;
}

// Random id sequences whose target equals the source.
ParallelData copy_task(std::uint64_t seed, std::size_t n, int vocab) {
  std::mt19937_64 rng(seed);
  ParallelData d;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> s(2 + rng() % 4);
    for (int& id : s) id = 4 + static_cast<int>(rng() % (vocab - 4));
    d.src.push_back(s);
    d.tgt.push_back(s);
  }
  return d;
}

bool equal_params(const ModelParams<float>& a, const ModelParams<float>& b, Group g) {
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    if (a.group(i) == g && a[i] != b[i]) return false;
  return true;
}

TrainConfig quick(int epochs, int batch = 8) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch;
  c.start_decay_at = 100;
  return c;
}

}  // namespace

TEST(Schedule, ConstantThenHalving) {
  TrainConfig c = paper_finetune_config();
  EXPECT_EQ(c.learning_rate, 0.00025);
  EXPECT_EQ(c.start_decay_at, 16);
  for (int e = 1; e <= 15; ++e) EXPECT_EQ(lr_at_epoch(c, e), 0.00025) << e;
  EXPECT_EQ(lr_at_epoch(c, 16), 0.000125);
  EXPECT_EQ(lr_at_epoch(c, 17), 0.0000625);
  c.start_decay_at = 1;
  EXPECT_EQ(lr_at_epoch(c, 1), 0.00025 / 2);
  EXPECT_THROW(lr_at_epoch(c, 0), ValidationError);
}

TEST(Schedule, NonIncreasing) {
  for (int start : {1, 3, 6, 16}) {
    TrainConfig c;
    c.start_decay_at = start;
    for (int e = 1; e < 30; ++e) EXPECT_LE(lr_at_epoch(c, e + 1), lr_at_epoch(c, e));
    for (int e = 1; e < start; ++e) EXPECT_EQ(lr_at_epoch(c, e), c.learning_rate);
  }
}

TEST(Presets, PublishedValuesAndDerivedFineTune) {
  const auto base = paper_pretrain_config();
  EXPECT_EQ(base.epochs, 15);
  EXPECT_EQ(base.batch_size, 296);
  EXPECT_EQ(base.learning_rate, 0.001);
  EXPECT_EQ(base.start_decay_at, 6);
  EXPECT_EQ(base.max_grad_norm, 1.0);
  const auto ft = paper_finetune_config();
  EXPECT_EQ(ft.batch_size, 128);
  EXPECT_EQ(ft.learning_rate, base.learning_rate / 4);
  EXPECT_EQ(ft.epochs, 10);
  EXPECT_FALSE(ft.early_stop_patience.has_value());
  EXPECT_EQ(desk_finetune_config().learning_rate, desk_pretrain_config().learning_rate / 4);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.max_grad_norm = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.learning_rate = 0;
  EXPECT_NO_THROW(c.validate());
  EXPECT_THROW(FreezePolicy{}.validate(), ValidationError);
  const std::vector<std::string> names{"src_embed", "encoder"};
  EXPECT_EQ(FreezePolicy::parse(names).trainable, FreezePolicy::adaptation().trainable);
}

TEST(Clip, ScalesOnlyAboveThreshold) {
  const auto p = init_params<double>(small_model(8), 1);
  auto g = p.zeros_like();
  g[0](0, 0) = 3.0;
  g[1](0, 0) = 4.0;
  EXPECT_DOUBLE_EQ(clip_gradients(g, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(g[0](0, 0), 0.6);
  EXPECT_DOUBLE_EQ(g[1](0, 0), 0.8);
  auto h = p.zeros_like();
  h[0](0, 0) = 0.3;
  h[1](0, 0) = 0.4;
  clip_gradients(h, 1.0);
  EXPECT_EQ(h[0](0, 0), 0.3);
  EXPECT_EQ(h[1](0, 0), 0.4);
  h[0](0, 0) = std::nan("");
  EXPECT_THROW(clip_gradients(h, 1.0), DivergenceError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = init_params<double>(small_model(8), 1);
  p[0](0, 0) = 0.0;
  const auto before = p;
  auto g = p.zeros_like();
  g[0](0, 0) = 1.0;
  auto state = OptimState<double>::zeros_like(p);
  adam_step(p, g, state, 0.001, FreezePolicy::all());
  EXPECT_NEAR(p[0](0, 0), -0.001, 1e-9);
  EXPECT_EQ(state.step, 1u);
  for (std::size_t i = 1; i < p.tensors.size(); ++i) EXPECT_EQ(p[i], before[i]) << p.name(i);
}

TEST(Adam, ZeroGradientsAndFrozenGroups) {
  auto p = init_params<double>(small_model(8), 2);
  const auto before = p;
  auto state = OptimState<double>::zeros_like(p);
  adam_step(p, p.zeros_like(), state, 0.01, FreezePolicy::all());
  EXPECT_EQ(state.step, 1u);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) EXPECT_EQ(p[i], before[i]);
  auto g = p.zeros_like();
  for (auto& t : g.tensors) t.setOnes();
  adam_step(p, g, state, 0.01, FreezePolicy::adaptation());
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    const bool trained = p.group(i) == Group::SrcEmbed || p.group(i) == Group::Encoder;
    EXPECT_EQ(p[i] == before[i], !trained) << p.name(i);
    if (!trained) EXPECT_EQ(state.m[i].norm(), 0.0) << p.name(i);
  }
  auto wrong = init_params<double>(small_model(9), 2).zeros_like();
  EXPECT_THROW(adam_step(p, wrong, state, 0.01, FreezePolicy::all()), ValidationError);
}

TEST(Adam, FullBatchCopyTaskLossDecreases) {
  ModelConfig mc = small_model(10);
  mc.embed_dim = 8;
  mc.hidden_dim = 8;
  auto p = init_params<double>(mc, 3);
  Batch b{{{4, 5, 6}, {7, 8}, {9, 4, 5, 6}, {6, 6}}, {{4, 5, 6}, {7, 8}, {9, 4, 5, 6}, {6, 6}}};
  auto state = OptimState<double>::zeros_like(p);
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 50; ++step) {
    auto f = forward_loss(p, b);
    EXPECT_LT(f.loss, prev) << "step " << step;
    prev = f.loss;
    auto g = backward(*f.cache);
    clip_gradients(g, 1.0);
    adam_step(p, g, state, 0.003, FreezePolicy::all());
    ASSERT_TRUE(p.all_finite());
  }
}

TEST(TrainBase, LearnsCopyTask) {
  const auto train = copy_task(1, 1500, 24);
  const auto dev = copy_task(2, 50, 24);
  ModelConfig mc = desk_model_config(24);
  TrainConfig tc = desk_pretrain_config();
  tc.epochs = 15;
  tc.early_stop_patience.reset();
  const double initial = mean_loss(init_params<float>(mc, tc.seed), dev);
  const auto r = train_base(train, dev, mc, tc);
  ASSERT_EQ(r.history.size(), 15u);
  EXPECT_LT(r.history.back().dev_loss, 0.1 * initial);
  EXPECT_TRUE(r.params.all_finite());
}

TEST(TrainBase, DeterministicHistory) {
  const auto train = copy_task(3, 60, 16);
  const auto dev = copy_task(4, 10, 16);
  const auto a = train_base(train, dev, small_model(16), quick(3));
  const auto b = train_base(train, dev, small_model(16), quick(3));
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].dev_loss, b.history[i].dev_loss);
  }
  for (Group g : kAllGroups) EXPECT_TRUE(equal_params(a.params, b.params, g));
}

TEST(TrainBase, ZeroPatienceKeepsEpochOne) {
  // Training pushes every output toward id 5 while dev wants id 6, so dev loss
  // rises from epoch 1 on.
  ParallelData train, dev;
  for (int i = 0; i < 40; ++i) {
    train.src.push_back({4 + i % 5, 7});
    train.tgt.push_back({5});
    dev.src.push_back({4 + i % 5, 7});
    dev.tgt.push_back({6});
  }
  TrainConfig tc = quick(6);
  tc.learning_rate = 0.01;
  tc.early_stop_patience = 0;
  const auto r = train_base(train, dev, small_model(12), tc);
  ASSERT_EQ(r.history.size(), 2u);
  EXPECT_GT(r.history[1].dev_loss, r.history[0].dev_loss);
  EXPECT_EQ(r.best_epoch, 1);
  tc.epochs = 1;
  tc.early_stop_patience.reset();
  const auto one = train_base(train, dev, small_model(12), tc);
  for (Group g : kAllGroups) EXPECT_TRUE(equal_params(r.params, one.params, g));
}

TEST(TrainBase, RejectsEmptyData) {
  EXPECT_THROW(train_base({}, copy_task(1, 5, 10), small_model(10), quick(1)), ValidationError);
}

TEST(TrainBase, JsonlLog) {
  std::ostringstream log;
  TrainHooks hooks;
  hooks.log = &log;
  train_base(copy_task(5, 20, 10), copy_task(6, 5, 10), small_model(10), quick(2), hooks);
  std::istringstream in(log.str());
  int lines = 0;
  for (std::string line; std::getline(in, line); ++lines)
    for (const char* key : {"\"epoch\"", "\"lr\"", "\"train_loss\"", "\"dev_loss\"", "\"wallclock\""})
      EXPECT_NE(line.find(key), std::string::npos) << key;
  EXPECT_EQ(lines, 2);
}

TEST(FineTune, FrozenGroupsStayBitIdentical) {
  const auto base = train_base(copy_task(7, 60, 16), copy_task(8, 10, 16), small_model(16), quick(2));
  const auto ft = fine_tune(base.params, copy_task(9, 40, 16), {}, quick(5),
                            FreezePolicy::adaptation());
  EXPECT_EQ(ft.history.size(), 5u);
  EXPECT_TRUE(std::isnan(ft.history.back().dev_loss));
  EXPECT_TRUE(equal_params(ft.params, base.params, Group::Decoder));
  EXPECT_TRUE(equal_params(ft.params, base.params, Group::TgtEmbed));
  EXPECT_FALSE(equal_params(ft.params, base.params, Group::Encoder));
  EXPECT_FALSE(equal_params(ft.params, base.params, Group::SrcEmbed));
}

TEST(FineTune, ZeroLearningRateIsNullUpdate) {
  const auto base = train_base(copy_task(7, 60, 16), copy_task(8, 10, 16), small_model(16), quick(1));
  TrainConfig tc = quick(2);
  tc.learning_rate = 0.0;
  const auto ft = fine_tune(base.params, copy_task(9, 40, 16), {}, tc, FreezePolicy::all());
  for (Group g : kAllGroups) EXPECT_TRUE(equal_params(ft.params, base.params, g));
}

TEST(FineTune, SliceAdaptationLowersSliceDevLoss) {
  int improved = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const L1 l1s[] = {L1::CN, L1::DE};
    const Level levels[] = {Level::A2, Level::B2};
    const auto learner = generate_corpus(default_profile(l1s, levels, seed), 1200);
    const auto general = generate_corpus(general_profile(seed + 100), 1500);
    const auto bpe = learn_bpe(bpe_stream(general), 150);
    const auto slice = select_subset(learner, make_key(L1::DE, Level::A2), 250);
    const auto parts = split(slice, 200, 50, 0, seed);
    const auto gen = split(general, 1400, 100, 0, seed);
    ModelConfig mc = small_model(static_cast<int>(bpe.vocab_size()));
    TrainConfig tc = quick(4, 32);
    tc.seed = seed;
    const auto base =
        train_base(encode_corpus(bpe, gen.train), encode_corpus(bpe, gen.dev), mc, tc);
    const auto dev = encode_corpus(bpe, parts.dev);
    TrainConfig ft = derive_finetune_config(tc, 16);
    ft.epochs = 3;
    const auto adapted = fine_tune(base.params, encode_corpus(bpe, parts.train), dev, ft,
                                   FreezePolicy::adaptation());
    improved += mean_loss(adapted.params, dev) < mean_loss(base.params, dev);
  }
  EXPECT_GE(improved, 4);
}
