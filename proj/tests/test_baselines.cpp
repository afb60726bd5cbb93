#include <gtest/gtest.h>

#include "hepco/baselines.hpp"
#include "hepco/metrics.hpp"

using namespace hepco;
using namespace hepco::baselines;
using model::PromptShape;
using model::PromptState;

namespace {

/// Pool whose keys are unit vectors chosen so cosine(query=e0, k_i) is the
/// requested score.
PromptState pool_with_scores(const std::vector<double>& scores, std::size_t len = 2) {
  PromptState p(PromptShape{scores.size(), len, 2, 2});
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p.keys(i, 0) = scores[i];
    p.keys(i, 1) = std::sqrt(1.0 - scores[i] * scores[i]);
    for (std::size_t r = 0; r < len; ++r)
      for (std::size_t d = 0; d < 2; ++d) p.prompts(i * len + r, d) = 10.0 * static_cast<double>(i) + static_cast<double>(r * 2 + d);
  }
  return p;
}

const std::vector<double> e0{1.0, 0.0};

}  // namespace

TEST(L2p, Examples) {
  const auto p = pool_with_scores({0.9, 0.1, 0.5});
  const auto sel = l2p_select(e0, p, 2);
  EXPECT_EQ(sel.indices, (std::vector<std::size_t>{0, 2}));
  ASSERT_EQ(sel.prompt.rows, 4u);
  EXPECT_EQ(sel.prompt(0, 0), p.prompts(0, 0));
  EXPECT_EQ(sel.prompt(2, 0), p.prompts(4, 0));
  EXPECT_EQ(l2p_select(e0, p, 3).indices, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(l2p_select(e0, pool_with_scores({0.5, 0.5}), 1).indices, (std::vector<std::size_t>{0}));
  EXPECT_THROW(l2p_select(e0, p, 4), std::invalid_argument);
}

TEST(L2p, FullSelectionWeightedEqualsComposition) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto s = model::init_prompt_state(PromptShape{5, 4, 8, 3}, rng, {1, 1, 1});
    nn::Vec q(8);
    nn::fill_normal(std::span<double>(q), rng, 1.0);
    const auto sel = l2p_select(q, s, 5);
    const auto w = weighted_selection(sel, s);
    const auto c = model::compose_prompt(q, s).prompt;
    ASSERT_EQ(w.rows, c.rows);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w.data[i], c.data[i], 1e-12);
  }
}

TEST(FedAvgFt, SingleClientMatchesClient) {
  encoder::SyntheticSpec spec;
  spec.n_classes = 3;
  spec.samples_per_class = 10;
  spec.dim = 8;
  spec.tokens = 2;
  const auto ds = encoder::synth_generate(spec);
  std::vector<client::Example> ex;
  for (const auto& x : ds.samples) ex.push_back({&x, x.label});
  Rng rng(1);
  const auto attn = model::init_attention(8, rng);
  const auto head = model::init_prompt_state(PromptShape{3, 4, 8, 3}, rng);
  const auto global = make_full_model(attn, head);
  EXPECT_EQ(global.head.shape.pool, 0u);
  EXPECT_EQ(global.head.weights, head.weights);
  EXPECT_EQ(global.parameter_count(), 4u * 64u + 8u * 3u + 3u);

  client::LocalTrainConfig cfg;
  cfg.epochs = 2;
  cfg.lr = 1e-3;
  const std::uint64_t seeds[1] = {9};
  const auto round = fedavg_ft_round(global, {ex}, cfg, seeds);
  cfg.mode = client::TrainMode::full_ft;
  const auto direct = client::train_local(global.head, attn, ex, cfg, 9);
  EXPECT_EQ(round.model.head, direct.state);
  EXPECT_EQ(round.model.attention, *direct.attention);
  EXPECT_NE(round.model.attention, attn);

  const std::uint64_t two[2] = {1, 2};
  EXPECT_THROW(fedavg_ft_round(global, {ex}, cfg, two), std::invalid_argument);
  EXPECT_THROW(fedavg_ft_round(global, {}, cfg, {}), std::invalid_argument);
}

TEST(FedAvgFt, PayloadIsWholeModel) {
  Rng rng(2);
  const auto m = make_full_model(model::init_attention(8, rng), PromptState(PromptShape{0, 0, 8, 4}));
  EXPECT_DOUBLE_EQ(metrics::communication_ratio(m.parameter_count(), m.attention.parameter_count() + 8 * 4 + 4),
                   100.0);
}
