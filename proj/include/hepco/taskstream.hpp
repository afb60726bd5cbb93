#pragma once

// Class-incremental task sequence and per-round client partitions governed
// by the split ratio (γ), category ratio (κ) and imbalance ratio (β).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "hepco/encoder.hpp"
#include "hepco/seeding.hpp"

namespace hepco::taskstream {

/// One global task. Labels are dataset labels; the model addresses classes
/// by their position in task order (`first_class + i` for labels[i]).
struct Task {
  std::vector<std::uint32_t> labels;
  std::size_t first_class = 0;
  std::vector<std::vector<std::size_t>> train_by_label;  // aligned with labels
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct TaskStream {
  std::vector<Task> tasks;
  std::vector<std::size_t> class_of_label;  // dataset label -> model class index
  std::size_t n_classes = 0;
  std::size_t classes_per_task = 0;

  /// Number of model classes active once task `t` (0-based) is reached.
  std::size_t classes_seen_through(std::size_t t) const { return (t + 1) * classes_per_task; }
};

/// Seeded shuffle of `labels` cut into n_tasks equal, disjoint chunks.
inline std::vector<std::vector<std::uint32_t>> split_labels(std::vector<std::uint32_t> labels, std::size_t n_tasks,
                                                            std::uint64_t seed) {
  if (n_tasks == 0) throw std::invalid_argument("n_tasks must be >= 1");
  if (labels.size() % n_tasks != 0)
    throw std::invalid_argument("label count " + std::to_string(labels.size()) + " not divisible by " +
                                std::to_string(n_tasks) + " tasks");
  Rng rng(derive_seed(seed, "labels"));
  std::shuffle(labels.begin(), labels.end(), rng);
  const std::size_t per = labels.size() / n_tasks;
  std::vector<std::vector<std::uint32_t>> out(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t)
    out[t].assign(labels.begin() + static_cast<std::ptrdiff_t>(t * per),
                  labels.begin() + static_cast<std::ptrdiff_t>((t + 1) * per));
  return out;
}

/// Splits each class's samples into train/test (at least one train sample
/// per class) and groups classes into tasks.
inline TaskStream build_task_sequence(const encoder::Dataset& ds, std::size_t n_tasks, std::uint64_t seed,
                                      double test_fraction = 0.2) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("test_fraction must be in [0, 1)");
  std::vector<std::uint32_t> labels(ds.n_classes);
  std::iota(labels.begin(), labels.end(), 0u);
  const auto groups = split_labels(labels, n_tasks, seed);

  std::vector<std::vector<std::size_t>> by_label(ds.n_classes);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) by_label.at(ds.samples[i].label).push_back(i);

  TaskStream ts;
  ts.n_classes = ds.n_classes;
  ts.classes_per_task = ds.n_classes / n_tasks;
  ts.class_of_label.assign(ds.n_classes, 0);
  Rng split_rng(derive_seed(seed, "split"));
  for (std::size_t t = 0; t < n_tasks; ++t) {
    Task task;
    task.labels = groups[t];
    task.first_class = t * ts.classes_per_task;
    for (std::size_t i = 0; i < task.labels.size(); ++i) {
      const auto label = task.labels[i];
      ts.class_of_label[label] = task.first_class + i;
      auto idx = by_label[label];
      if (idx.empty()) throw std::invalid_argument("label " + std::to_string(label) + " has no samples");
      std::shuffle(idx.begin(), idx.end(), split_rng);
      auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(idx.size())));
      n_test = std::min(n_test, idx.size() - 1);
      task.test.insert(task.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
      std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
      std::sort(train.begin(), train.end());
      task.train.insert(task.train.end(), train.begin(), train.end());
      task.train_by_label.push_back(std::move(train));
    }
    std::sort(task.train.begin(), task.train.end());
    std::sort(task.test.begin(), task.test.end());
    ts.tasks.push_back(std::move(task));
  }
  return ts;
}

struct HeterogeneityConfig {
  double split_ratio = 0.1;     // γ
  double category_ratio = 0.6;  // κ
  double imbalance_ratio = 1.0; // β
  std::size_t clients = 5;      // C
  std::size_t rounds = 10;      // R
  std::uint64_t seed = 0;

  void validate() const {
    auto in_unit = [](double x) { return x > 0.0 && x <= 1.0; };
    if (!in_unit(split_ratio)) throw std::invalid_argument("split_ratio must be in (0, 1]");
    if (!in_unit(category_ratio)) throw std::invalid_argument("category_ratio must be in (0, 1]");
    if (!in_unit(imbalance_ratio)) throw std::invalid_argument("imbalance_ratio must be in (0, 1]");
    if (clients < 1) throw std::invalid_argument("clients must be >= 1");
    if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  }
};

/// Recorded when a per-class target had to be adjusted to what the class
/// can supply (or raised to one sample so a selected class is present).
struct ClampEvent {
  std::size_t model_class = 0;
  std::size_t requested = 0;
  std::size_t granted = 0;
};

struct ClientAssignment {
  std::size_t client = 0;
  std::vector<std::size_t> categories;  // model class indices, ascending
  std::vector<std::size_t> indices;     // dataset sample indices
  std::vector<std::size_t> counts;      // n_c^y, indexed by model class
  std::vector<ClampEvent> clamps;
};

/// Exponential long-tail profile: rank j gets round(n_max·β^{j/(K−1)}).
inline std::vector<std::size_t> longtail_counts(std::size_t n_max, std::size_t n_classes, double beta) {
  if (n_classes == 0) throw std::invalid_argument("longtail_counts: n_classes must be >= 1");
  if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("longtail_counts: beta must be in (0, 1]");
  std::vector<std::size_t> out(n_classes, n_max);
  if (n_classes == 1) return out;
  for (std::size_t j = 0; j < n_classes; ++j) {
    const double e = static_cast<double>(j) / static_cast<double>(n_classes - 1);
    out[j] = static_cast<std::size_t>(std::llround(static_cast<double>(n_max) * std::pow(beta, e)));
  }
  return out;
}

inline std::size_t categories_per_client(std::size_t task_classes, double kappa) {
  const auto k = static_cast<std::size_t>(std::llround(kappa * static_cast<double>(task_classes)));
  return std::clamp<std::size_t>(k, 1, task_classes);
}

/// Partition for one round. A pure function of (task, cfg, round, seed):
/// every client draws from its own (round, client) stream, so no state is
/// carried between rounds.
inline std::vector<ClientAssignment> assign_round(const Task& task, std::size_t n_model_classes,
                                                  const HeterogeneityConfig& cfg, std::size_t round,
                                                  std::uint64_t seed) {
  cfg.validate();
  const std::size_t k_task = task.labels.size();
  for (const auto& tr : task.train_by_label)
    if (tr.empty()) throw std::invalid_argument("assign_round: task has a label without training samples");
  const std::size_t n_cat = categories_per_client(k_task, cfg.category_ratio);

  std::vector<ClientAssignment> out;
  out.reserve(cfg.clients);
  const SeedStreams round_streams = SeedStreams(seed).child(stream_name("round", round));
  for (std::size_t c = 0; c < cfg.clients; ++c) {
    Rng rng = round_streams.rng(stream_name("client", c));
    ClientAssignment a;
    a.client = c;
    a.counts.assign(n_model_classes, 0);

    std::vector<std::size_t> local(k_task);
    std::iota(local.begin(), local.end(), 0);
    std::shuffle(local.begin(), local.end(), rng);
    local.resize(n_cat);
    std::sort(local.begin(), local.end());

    std::vector<std::size_t> rank(n_cat);
    std::iota(rank.begin(), rank.end(), 0);
    std::shuffle(rank.begin(), rank.end(), rng);

    for (std::size_t i = 0; i < n_cat; ++i) {
      const auto& pool = task.train_by_label[local[i]];
      const std::size_t cls = task.first_class + local[i];
      const auto n_max = static_cast<std::size_t>(
          std::llround(cfg.split_ratio * static_cast<double>(pool.size())));
      const std::size_t requested = longtail_counts(n_max, n_cat, cfg.imbalance_ratio)[rank[i]];
      std::size_t granted = std::clamp<std::size_t>(requested, 1, pool.size());
      if (granted != requested) a.clamps.push_back({cls, requested, granted});

      std::vector<std::size_t> draw = pool;
      for (std::size_t j = 0; j < granted; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, draw.size() - 1);
        std::swap(draw[j], draw[pick(rng)]);
        a.indices.push_back(draw[j]);
      }
      a.counts[cls] = granted;
      a.categories.push_back(cls);
    }
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace hepco::taskstream
