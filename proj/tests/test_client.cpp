#include <gtest/gtest.h>

#include "hepco/client.hpp"

using namespace hepco;
using namespace hepco::client;
using model::PromptShape;
using model::PromptState;

namespace {

struct Toy {
  encoder::Dataset ds;
  std::vector<Example> examples;
};

Toy toy(std::size_t classes, std::size_t per_class, double noise, std::uint64_t seed) {
  encoder::SyntheticSpec s;
  s.n_classes = classes;
  s.samples_per_class = per_class;
  s.dim = 8;
  s.tokens = 2;
  s.center_scale = 2.0;
  s.noise_scale = noise;
  s.seed = seed;
  Toy t{encoder::synth_generate(s), {}};
  for (const auto& x : t.ds.samples) t.examples.push_back({&x, x.label});
  return t;
}

double train_accuracy(const PromptState& s, const model::Attention& a, const std::vector<Example>& ex) {
  std::size_t hit = 0;
  for (const auto& e : ex) {
    const auto l = model::prompted_logits(*e.sample, s, a);
    hit += static_cast<std::size_t>(std::max_element(l.begin(), l.end()) - l.begin()) == e.target;
  }
  return static_cast<double>(hit) / static_cast<double>(ex.size());
}

}  // namespace

TEST(FedProx, Examples) {
  PromptState a(PromptShape{1, 2, 2, 2});
  const auto zero = fedprox_penalty(a, a, 0.7);
  EXPECT_EQ(zero.value, 0.0);
  for (auto p : std::as_const(zero.grad).parameters())
    for (double g : p) EXPECT_EQ(g, 0.0);

  PromptState w(PromptShape{0, 0, 1, 1});
  PromptState anchor = w;
  w.weights.data[0] = 1.0;
  const auto one = fedprox_penalty(w, anchor, 2.0);
  EXPECT_DOUBLE_EQ(one.value, 1.0);
  EXPECT_DOUBLE_EQ(one.grad.weights.data[0], 2.0);
  EXPECT_THROW(fedprox_penalty(a, w, 1.0), nn::ShapeError);
}

TEST(FedProx, DirectSumOracleAndFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const PromptShape sh{3, 4, 8, 5};
    auto cur = model::init_prompt_state(sh, rng, {1, 1, 1});
    const auto anc = model::init_prompt_state(sh, rng, {1, 1, 1});
    const double mu = 0.01 + 0.1 * static_cast<double>(seed);
    double oracle = 0.0;
    const auto cp = std::as_const(cur).parameters();
    const auto ap = anc.parameters();
    for (std::size_t i = 0; i < cp.size(); ++i)
      for (std::size_t j = 0; j < cp[i].size(); ++j) oracle += (cp[i][j] - ap[i][j]) * (cp[i][j] - ap[i][j]);
    const auto r = fedprox_penalty(cur, anc, mu);
    EXPECT_NEAR(r.value, 0.5 * mu * oracle, 1e-12);
    const double err = nn::finite_diff_check([&] { return fedprox_penalty(cur, anc, mu).value; }, cur.parameters(),
                                             std::as_const(r.grad).parameters());
    EXPECT_LT(err, 1e-4);
  }
}

TEST(TrainLocal, ZeroLearningRateKeepsParameters) {
  auto t = toy(3, 10, 0.5, 1);
  Rng rng(1);
  const auto attn = model::init_attention(8, rng);
  const auto init = model::init_prompt_state(PromptShape{3, 4, 8, 3}, rng);
  LocalTrainConfig cfg;
  cfg.lr = 0.0;
  cfg.epochs = 3;
  for (auto mode : {TrainMode::prompt, TrainMode::fedprox, TrainMode::full_ft}) {
    cfg.mode = mode;
    const auto rep = train_local(init, attn, t.examples, cfg, 5);
    EXPECT_EQ(rep.state, init);
    if (mode == TrainMode::full_ft) {
      ASSERT_TRUE(rep.attention.has_value());
      EXPECT_EQ(*rep.attention, attn);
    } else {
      EXPECT_FALSE(rep.attention.has_value());
    }
  }
}

TEST(TrainLocal, SeparableToyReachesHighAccuracy) {
  auto t = toy(2, 40, 0.3, 2);
  Rng rng(2);
  const auto attn = model::init_attention(8, rng);
  const auto init = model::init_prompt_state(PromptShape{3, 4, 8, 2}, rng);
  LocalTrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 16;
  cfg.lr = 1e-2;
  const auto rep = train_local(init, attn, t.examples, cfg, 9);
  EXPECT_GE(train_accuracy(rep.state, attn, t.examples), 0.99);
}

TEST(TrainLocal, CountsDeterminismAndFrozenInputs) {
  auto t = toy(4, 12, 1.0, 3);
  t.examples.resize(30);  // uneven histogram
  Rng rng(3);
  const auto attn = model::init_attention(8, rng);
  const model::Attention attn_before = attn;
  const auto ds_before = t.ds.samples;
  const auto init = model::init_prompt_state(PromptShape{3, 4, 8, 6}, rng);
  const auto init_before = init;
  LocalTrainConfig cfg;
  cfg.epochs = 2;
  cfg.active_classes = 4;
  const auto a = train_local(init, attn, t.examples, cfg, 11);
  const auto b = train_local(init, attn, t.examples, cfg, 11);
  const auto c = train_local(init, attn, t.examples, cfg, 12);
  EXPECT_EQ(a.state, b.state);
  EXPECT_NE(a.state, c.state);
  EXPECT_EQ(init, init_before);
  EXPECT_EQ(attn, attn_before);
  for (std::size_t i = 0; i < ds_before.size(); ++i) {
    EXPECT_EQ(t.ds.samples[i].tokens, ds_before[i].tokens);
    EXPECT_EQ(t.ds.samples[i].query, ds_before[i].query);
  }
  EXPECT_EQ(a.counts, label_histogram(t.examples, 6));
  EXPECT_EQ(a.counts, (std::vector<std::size_t>{12, 12, 6, 0, 0, 0}));
  // Future classes are masked: their classifier columns never move.
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t y = 4; y < 6; ++y) EXPECT_EQ(a.state.weights(i, y), init.weights(i, y));
}

TEST(TrainLocal, CurrentTaskMaskFreezesEarlierColumns) {
  auto t = toy(4, 10, 1.0, 4);
  std::vector<Example> cur;
  for (const auto& e : t.examples)
    if (e.target >= 2) cur.push_back(e);
  Rng rng(4);
  const auto attn = model::init_attention(8, rng);
  const auto init = model::init_prompt_state(PromptShape{3, 4, 8, 4}, rng);
  LocalTrainConfig cfg;
  cfg.epochs = 2;
  cfg.active_classes = 4;
  cfg.first_live_class = 2;
  const auto rep = train_local(init, attn, cur, cfg, 1);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(rep.state.weights(i, 0), init.weights(i, 0));
    EXPECT_NE(rep.state.weights(i, 2), init.weights(i, 2));
  }
}

TEST(TrainLocal, EmptyAssignmentReturnsInit) {
  Rng rng(6);
  const auto attn = model::init_attention(8, rng);
  const auto init = model::init_prompt_state(PromptShape{3, 4, 8, 3}, rng);
  const auto rep = train_local(init, attn, {}, LocalTrainConfig{}, 1);
  EXPECT_EQ(rep.state, init);
  EXPECT_EQ(rep.counts, (std::vector<std::size_t>{0, 0, 0}));
  LocalTrainConfig bad;
  bad.epochs = 0;
  EXPECT_THROW(train_local(init, attn, {}, bad, 1), std::invalid_argument);
}

TEST(TrainLocal, FedProxStaysCloserToAnchor) {
  auto t = toy(3, 20, 1.0, 7);
  Rng rng(7);
  const auto attn = model::init_attention(8, rng);
  const auto init = model::init_prompt_state(PromptShape{3, 4, 8, 3}, rng);
  LocalTrainConfig cfg;
  cfg.epochs = 5;
  cfg.lr = 1e-2;
  const auto plain = train_local(init, attn, t.examples, cfg, 3);
  cfg.mode = TrainMode::fedprox;
  cfg.prox_mu = 10.0;
  const auto prox = train_local(init, attn, t.examples, cfg, 3);
  EXPECT_LT(fedprox_penalty(prox.state, init, 1.0).value, fedprox_penalty(plain.state, init, 1.0).value);
}

TEST(TrainLocal, FullFineTuningMovesAttention) {
  auto t = toy(3, 10, 1.0, 8);
  Rng rng(8);
  const auto attn = model::init_attention(8, rng);
  const auto init = model::init_prompt_state(PromptShape{0, 0, 8, 3}, rng);
  LocalTrainConfig cfg;
  cfg.mode = TrainMode::full_ft;
  cfg.epochs = 2;
  const auto rep = train_local(init, attn, t.examples, cfg, 2);
  ASSERT_TRUE(rep.attention.has_value());
  EXPECT_NE(*rep.attention, attn);
  EXPECT_NE(rep.state.weights, init.weights);
}
