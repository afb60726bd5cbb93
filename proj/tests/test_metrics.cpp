#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "hepco/metrics.hpp"

using namespace hepco;
using namespace hepco::metrics;

namespace {

AccuracyMatrix random_matrix(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AccuracyMatrix m;
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<double> row(t + 1);
    for (double& a : row) a = u(rng);
    m.push_row(row);
  }
  return m;
}

double oracle_a(const AccuracyMatrix& m) {
  double s = 0.0;
  for (std::size_t j = 0; j < m.tasks(); ++j) s += m.rows[m.tasks() - 1][j];
  return s / static_cast<double>(m.tasks());
}

double oracle_f(const AccuracyMatrix& m) {
  const std::size_t n = m.tasks();
  if (n == 1) return 0.0;
  double s = 0.0;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    double best = -1.0;
    for (std::size_t t = j; t < n; ++t)
      if (m.rows[t][j] > best) best = m.rows[t][j];
    s += best - m.rows[n - 1][j];
  }
  return s / static_cast<double>(n - 1);
}

}  // namespace

TEST(Metrics, Examples) {
  AccuracyMatrix m;
  m.push_row({0.9});
  EXPECT_DOUBLE_EQ(average_accuracy(m), 0.9);
  EXPECT_EQ(forgetting(m), 0.0);
  m.push_row({0.7, 0.5});
  EXPECT_NEAR(forgetting(m), 0.2, 1e-15);
  AccuracyMatrix final_row;
  final_row.push_row({1.0});
  final_row.push_row({0.8, 0.6});
  EXPECT_NEAR(average_accuracy(final_row), 0.7, 1e-15);

  AccuracyMatrix rising;
  rising.push_row({0.5});
  rising.push_row({0.6, 0.4});
  rising.push_row({0.7, 0.4, 0.9});
  EXPECT_EQ(forgetting(rising), 0.0);

  EXPECT_THROW(average_accuracy(AccuracyMatrix{}), std::invalid_argument);
  EXPECT_THROW(m.push_row({0.1}), std::invalid_argument);
}

TEST(Metrics, FormulaOracleAndNonNegativity) {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 100; ++i) {
    const auto m = random_matrix(1 + i % 10, rng);
    EXPECT_NEAR(average_accuracy(m), oracle_a(m), 1e-12);
    EXPECT_NEAR(forgetting(m), oracle_f(m), 1e-12);
  }
  for (int i = 0; i < 1000; ++i) EXPECT_GE(forgetting(random_matrix(1 + i % 12, rng)), 0.0);
}

TEST(Metrics, RandomClassifierNearChance) {
  encoder::SyntheticSpec spec;
  spec.n_classes = 4;
  spec.samples_per_class = 500;
  spec.dim = 8;
  spec.tokens = 2;
  spec.seed = 1;
  const auto ds = encoder::synth_generate(spec);
  Rng rng(2);
  const auto s = model::init_prompt_state(model::PromptShape{3, 4, 8, 4}, rng, {1, 1, 1});
  const auto attn = model::init_attention(8, rng);
  std::vector<client::Example> test;
  std::uniform_int_distribution<std::size_t> label(0, 3);
  std::size_t per[4] = {0, 0, 0, 0};
  for (const auto& x : ds.samples) {
    std::size_t y = label(rng);
    while (per[y] == 500) y = (y + 1) % 4;
    ++per[y];
    test.push_back({&x, y});
  }
  const double acc = accuracy(s, attn, test, 4);
  const double sigma = std::sqrt(0.25 * 0.75 / 2000.0);
  EXPECT_NEAR(acc, 0.25, 3 * sigma);
}

TEST(Metrics, AccuracyIgnoresTestOrderAndUsesAllSeenClasses) {
  encoder::SyntheticSpec spec;
  spec.n_classes = 3;
  spec.samples_per_class = 20;
  spec.dim = 8;
  spec.tokens = 2;
  const auto ds = encoder::synth_generate(spec);
  Rng rng(3);
  const auto s = model::init_prompt_state(model::PromptShape{3, 4, 8, 3}, rng, {1, 1, 1});
  const auto attn = model::init_attention(8, rng);
  std::vector<client::Example> test;
  for (const auto& x : ds.samples) test.push_back({&x, x.label});
  const double a = accuracy(s, attn, test, 3);
  std::shuffle(test.begin(), test.end(), rng);
  EXPECT_EQ(accuracy(s, attn, test, 3), a);
  const auto row = evaluate(s, attn, {test, test}, 3);
  EXPECT_EQ(row, (std::vector<double>{a, a}));
  EXPECT_THROW(accuracy(s, attn, std::vector<client::Example>{}, 3), std::invalid_argument);
}

TEST(Communication, ToyAndIdentity) {
  const model::PromptShape toy{2, 2, 4, 3};
  // keys 2·4 + prompts 2·2·4 + classifier 4·3 + bias 3
  EXPECT_EQ(model::PromptState(toy).parameter_count(), 39u);
  EXPECT_EQ(layered_payload_parameters(toy, 1), 39u);
  EXPECT_EQ(layered_payload_parameters(toy, 5), 5u * 24u + 15u);
  EXPECT_DOUBLE_EQ(communication_ratio(39, 39), 100.0);
  EXPECT_DOUBLE_EQ(communication_ratio(1, 4), 25.0);
  EXPECT_THROW(communication_ratio(1, 0), std::invalid_argument);
}

TEST(Communication, LayeredViTConfiguration) {
  const model::PromptShape s{100, 20, 768, 200};
  const auto payload = layered_payload_parameters(s, 5);
  EXPECT_EQ(payload, 5u * (100u * 768u + 100u * 20u * 768u) + 768u * 200u + 200u);
  const double pct = communication_ratio(payload, reference_model_parameters(kVitB16EncoderParams, 768, 200));
  EXPECT_GE(pct, 9.0);
  EXPECT_LE(pct, 10.0);
}

TEST(Csv, HeaderAndRows) {
  EXPECT_EQ(csv_header(3), "task,round,A_so_far,acc_task1,acc_task2,acc_task3");
  const std::vector<double> accs{0.5, 0.25};
  EXPECT_EQ(csv_row(1, 0, accs, 3), "2,1,0.375000,0.500000,0.250000,");
}
