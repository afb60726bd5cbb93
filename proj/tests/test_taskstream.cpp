#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "hepco/taskstream.hpp"

using namespace hepco;
using namespace hepco::taskstream;

namespace {

std::vector<std::uint32_t> iota_labels(std::size_t n) {
  std::vector<std::uint32_t> v(n);
  std::iota(v.begin(), v.end(), 0u);
  return v;
}

encoder::Dataset dataset(std::size_t classes, std::size_t per_class, std::uint64_t seed = 3) {
  encoder::SyntheticSpec s;
  s.n_classes = classes;
  s.samples_per_class = per_class;
  s.dim = 4;
  s.tokens = 1;
  s.seed = seed;
  return encoder::synth_generate(s);
}

}  // namespace

TEST(SplitLabels, TaskSizes) {
  for (const auto& [n, t, per] : std::vector<std::tuple<std::size_t, std::size_t, std::size_t>>{
           {100, 10, 10}, {345, 5, 69}, {200, 10, 20}}) {
    const auto g = split_labels(iota_labels(n), t, 1);
    ASSERT_EQ(g.size(), t);
    for (const auto& x : g) EXPECT_EQ(x.size(), per);
  }
  EXPECT_THROW(split_labels(iota_labels(10), 3, 1), std::invalid_argument);
  EXPECT_THROW(split_labels(iota_labels(10), 0, 1), std::invalid_argument);
}

TEST(SplitLabels, SeedsChangeMembershipNotSizes) {
  bool differs = false;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto a = split_labels(iota_labels(4), 2, s);
    const auto b = split_labels(iota_labels(4), 2, s + 100);
    EXPECT_EQ(a[0].size(), b[0].size());
    differs |= std::set(a[0].begin(), a[0].end()) != std::set(b[0].begin(), b[0].end());
    EXPECT_EQ(a, split_labels(iota_labels(4), 2, s));
  }
  EXPECT_TRUE(differs);
}

TEST(TaskSequence, DisjointCoveringAndSplitInvariants) {
  const auto ds = dataset(20, 30);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto ts = build_task_sequence(ds, 5, seed);
    std::set<std::uint32_t> seen;
    std::set<std::size_t> classes;
    for (std::size_t t = 0; t < ts.tasks.size(); ++t) {
      const auto& task = ts.tasks[t];
      EXPECT_EQ(task.first_class, t * 4);
      for (std::size_t i = 0; i < task.labels.size(); ++i) {
        EXPECT_TRUE(seen.insert(task.labels[i]).second) << "label in two tasks";
        EXPECT_EQ(ts.class_of_label[task.labels[i]], task.first_class + i);
        classes.insert(task.first_class + i);
      }
      std::set<std::size_t> train(task.train.begin(), task.train.end());
      for (auto i : task.test) {
        EXPECT_FALSE(train.count(i));
        EXPECT_TRUE(std::count(task.labels.begin(), task.labels.end(), ds.samples[i].label));
      }
      EXPECT_EQ(task.train.size() + task.test.size(), 4u * 30u);
      EXPECT_EQ(task.test.size(), 4u * 6u);
    }
    EXPECT_EQ(seen.size(), 20u);
    EXPECT_EQ(classes.size(), 20u);
    EXPECT_EQ(ts.classes_seen_through(2), 12u);
  }
  EXPECT_THROW(build_task_sequence(ds, 3, 0), std::invalid_argument);
}

TEST(LongTail, Examples) {
  EXPECT_EQ(longtail_counts(37, 5, 1.0), std::vector<std::size_t>(5, 37));
  EXPECT_EQ(longtail_counts(100, 2, 0.01), (std::vector<std::size_t>{100, 1}));
  EXPECT_EQ(longtail_counts(100, 3, 0.04), (std::vector<std::size_t>{100, 20, 4}));
  EXPECT_EQ(longtail_counts(9, 1, 0.1), (std::vector<std::size_t>{9}));
  EXPECT_THROW(longtail_counts(9, 0, 0.5), std::invalid_argument);
  EXPECT_THROW(longtail_counts(9, 3, 0.0), std::invalid_argument);
  EXPECT_THROW(longtail_counts(9, 3, 1.5), std::invalid_argument);
}

TEST(LongTail, RatioAndMonotonicity) {
  for (double beta : {0.05, 0.1, 0.3, 0.5, 0.9}) {
    for (std::size_t k = 2; k <= 12; ++k) {
      const auto c = longtail_counts(1000, k, beta);
      EXPECT_TRUE(std::is_sorted(c.rbegin(), c.rend()));
      EXPECT_NEAR(static_cast<double>(c.back()) / static_cast<double>(c.front()), beta, 0.05);
    }
  }
}

TEST(AssignRound, KappaSixOfTen) {
  const auto ds = dataset(10, 50);
  const auto ts = build_task_sequence(ds, 1, 4);
  HeterogeneityConfig cfg;
  cfg.category_ratio = 0.6;
  cfg.split_ratio = 0.1;
  cfg.clients = 7;
  for (std::size_t r = 0; r < 5; ++r) {
    for (const auto& a : assign_round(ts.tasks[0], 10, cfg, r, 11)) {
      EXPECT_EQ(a.categories.size(), 6u);
      std::size_t total = 0;
      for (std::size_t y = 0; y < 10; ++y) {
        total += a.counts[y];
        if (a.counts[y] > 0) {
          EXPECT_TRUE(std::count(a.categories.begin(), a.categories.end(), y));
        }
      }
      EXPECT_EQ(total, a.indices.size());
      for (auto i : a.indices)
        EXPECT_TRUE(std::count(a.categories.begin(), a.categories.end(), ts.class_of_label[ds.samples[i].label]));
      std::set<std::size_t> uniq(a.indices.begin(), a.indices.end());
      EXPECT_EQ(uniq.size(), a.indices.size()) << "sampling must be without replacement";
    }
  }
}

TEST(AssignRound, UniformCaseFiftyEach) {
  const auto ds = dataset(4, 500);
  const auto ts = build_task_sequence(ds, 1, 2, 0.0);
  HeterogeneityConfig cfg{0.1, 1.0, 1.0, 5, 1, 0};
  for (const auto& a : assign_round(ts.tasks[0], 4, cfg, 0, 3)) {
    EXPECT_EQ(a.categories.size(), 4u);
    for (std::size_t y = 0; y < 4; ++y) EXPECT_EQ(a.counts[y], 50u);
    EXPECT_TRUE(a.clamps.empty());
  }
}

TEST(AssignRound, HandCheckedLongTail) {
  // κ=0.5 of 4 classes → 2 categories; γ=0.5 of 100 → n_max 50; β=0.1 → {50, 5}.
  const auto ds = dataset(4, 100);
  const auto ts = build_task_sequence(ds, 1, 2, 0.0);
  HeterogeneityConfig cfg{0.5, 0.5, 0.1, 6, 1, 0};
  for (const auto& a : assign_round(ts.tasks[0], 4, cfg, 0, 8)) {
    ASSERT_EQ(a.categories.size(), 2u);
    std::vector<std::size_t> got{a.counts[a.categories[0]], a.counts[a.categories[1]]};
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, (std::vector<std::size_t>{5, 50}));
  }
}

TEST(AssignRound, RatioWithinToleranceWhenNotBinding) {
  const auto ds = dataset(10, 400);
  const auto ts = build_task_sequence(ds, 1, 2, 0.0);
  for (double beta : {0.1, 0.25, 0.5, 1.0}) {
    HeterogeneityConfig cfg{0.5, 0.6, beta, 5, 1, 0};
    for (const auto& a : assign_round(ts.tasks[0], 10, cfg, 0, 5)) {
      std::size_t lo = SIZE_MAX, hi = 0;
      for (auto y : a.categories) {
        lo = std::min(lo, a.counts[y]);
        hi = std::max(hi, a.counts[y]);
      }
      EXPECT_NEAR(static_cast<double>(lo) / static_cast<double>(hi), beta, 0.05);
    }
  }
}

TEST(AssignRound, PureFunctionAndPerClientPermutations) {
  const auto ds = dataset(6, 200);
  const auto ts = build_task_sequence(ds, 1, 2);
  HeterogeneityConfig cfg{0.3, 1.0, 0.2, 8, 3, 0};
  const auto a = assign_round(ts.tasks[0], 6, cfg, 1, 77);
  const auto b = assign_round(ts.tasks[0], 6, cfg, 1, 77);
  for (std::size_t c = 0; c < a.size(); ++c) {
    EXPECT_EQ(a[c].indices, b[c].indices);
    EXPECT_EQ(a[c].counts, b[c].counts);
  }
  std::set<std::vector<std::size_t>> profiles;
  for (const auto& x : a) profiles.insert(x.counts);
  EXPECT_GT(profiles.size(), 1u) << "long-tail ranks should differ between clients";
  EXPECT_NE(assign_round(ts.tasks[0], 6, cfg, 2, 77)[0].indices, a[0].indices);
}

TEST(AssignRound, ClampsAreRecorded) {
  // β=0.01 with n_max=5 gives rank-2 target round(0.05) = 0, raised to 1.
  const auto ds = dataset(3, 10);
  const auto ts = build_task_sequence(ds, 1, 2, 0.0);
  HeterogeneityConfig cfg{0.5, 1.0, 0.01, 1, 1, 0};
  const auto a = assign_round(ts.tasks[0], 3, cfg, 0, 1)[0];
  ASSERT_EQ(a.clamps.size(), 1u);
  EXPECT_EQ(a.clamps[0].requested, 0u);
  EXPECT_EQ(a.clamps[0].granted, 1u);
  EXPECT_EQ(a.counts[a.clamps[0].model_class], 1u);
}

TEST(AssignRound, InvalidConfigThrows) {
  const auto ds = dataset(2, 10);
  const auto ts = build_task_sequence(ds, 1, 2);
  for (HeterogeneityConfig bad : {HeterogeneityConfig{0.0, 1, 1, 1, 1, 0}, HeterogeneityConfig{0.5, 1.2, 1, 1, 1, 0},
                                  HeterogeneityConfig{0.5, 1, 0, 1, 1, 0}, HeterogeneityConfig{0.5, 1, 1, 0, 1, 0}}) {
    EXPECT_THROW(assign_round(ts.tasks[0], 2, bad, 0, 0), std::invalid_argument);
  }
}
