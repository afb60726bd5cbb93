#pragma once

// Round-end consolidation on the server: uniform averaging of client
// payloads, then data-free distillation of prompts and classifier using
// pseudo-latents from the current-round and previous-task generators.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <stdexcept>
#include <vector>

#include "hepco/client.hpp"
#include "hepco/generator.hpp"
#include "hepco/nn.hpp"
#include "hepco/prompt_model.hpp"
#include "hepco/seeding.hpp"

namespace hepco::server {

using generator::LabelDistribution;
using generator::LatentGenerator;
using model::PromptState;
using nn::Mat;
using nn::Vec;

/// Weighted mean written as w_0 + Σ_c p_c·(w_c − w_0), so identical inputs
/// average to themselves bit-for-bit.
template <class T>
T average_params(std::span<const T> items, std::span<const double> weights) {
  if (items.empty()) throw std::invalid_argument("average: no inputs");
  if (weights.size() != items.size()) throw std::invalid_argument("average: weight count mismatch");
  T out = items.front();
  auto dst = out.parameters();
  const auto base = items.front().parameters();
  for (std::size_t c = 1; c < items.size(); ++c) {
    const auto src = items[c].parameters();
    if (src.size() != dst.size()) throw nn::ShapeError("average: parameter list mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (src[i].size() != dst[i].size()) throw nn::ShapeError("average: tensor shape mismatch");
      for (std::size_t j = 0; j < src[i].size(); ++j) dst[i][j] += weights[c] * (src[i][j] - base[i][j]);
    }
  }
  return out;
}

template <class T>
T uniform_average(std::span<const T> items) {
  const std::vector<double> w(items.size(), 1.0 / static_cast<double>(items.size()));
  return average_params(items, std::span<const double>(w));
}

/// w_avg = (1/C)·Σ_c w_c. With `data_weighted`, weights are n_c / Σ n
/// instead (classical FedAvg).
inline PromptState average_weights(std::span<const client::ClientReport> reports, bool data_weighted = false) {
  if (reports.empty()) throw std::invalid_argument("average_weights: no reports");
  std::vector<PromptState> states;
  std::vector<double> w;
  double total = 0.0;
  for (const auto& r : reports) {
    if (!r.state.same_shape(reports.front().state)) throw nn::ShapeError("average_weights: shape mismatch");
    states.push_back(r.state);
    double n = 0.0;
    for (auto c : r.counts) n += static_cast<double>(c);
    w.push_back(n);
    total += n;
  }
  if (!data_weighted || total == 0.0) return uniform_average(std::span<const PromptState>(states));
  for (double& x : w) x /= total;
  return average_params(std::span<const PromptState>(states), std::span<const double>(w));
}

// ---------------------------------------------------------------------------
// Distillation.

struct DistillConfig {
  std::size_t epochs = 200;  // optimizer steps
  double lr = 1e-4;
  std::size_t batch_size = 64;
  double replay_ratio = 0.5;
  bool prompt_distill = true;
  bool classifier_distill = true;
  std::size_t active_classes = 0;   // classes seen through the current task
  std::size_t first_current_class = 0;  // labels below this belong to previous tasks

  void validate() const {
    if (!(replay_ratio >= 0.0 && replay_ratio <= 1.0)) throw std::invalid_argument("replay_ratio must be in [0, 1]");
    if (epochs < 1) throw std::invalid_argument("distill epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("distill batch_size must be >= 1");
  }
};

/// Teacher models for distillation. No dataset handle appears here: the
/// server sees only parameters, generators and label statistics.
struct DistillTeachers {
  std::span<const PromptState> clients;
  const LabelDistribution* dist_cur = nullptr;
  const PromptState* prev_server = nullptr;
};

struct DistillResult {
  double prompt_loss = 0.0;
  double ce_loss = 0.0;
  PromptState grad;
  double total() const { return prompt_loss + ce_loss; }
};

/// Batch mean of L_prompt + L_ce at the given latents, with gradient w.r.t.
/// the server's keys, prompts and classifier.
inline DistillResult distill_objective(const PromptState& server, const DistillTeachers& teachers, const Mat& latents,
                                       std::span<const std::size_t> labels, const DistillConfig& cfg) {
  if (latents.rows != labels.size() || latents.cols != server.shape.dim)
    throw nn::ShapeError("distill_objective: latent batch shape");
  for (const auto& c : teachers.clients)
    if (!c.same_shape(server)) throw nn::ShapeError("distill_objective: teacher shape differs from server");
  if (teachers.prev_server && !teachers.prev_server->same_shape(server))
    throw nn::ShapeError("distill_objective: previous server shape differs");
  const std::size_t active = cfg.active_classes == 0 ? server.shape.n_classes : cfg.active_classes;
  DistillResult r;
  r.grad = server.zeros_like();
  const double inv = 1.0 / static_cast<double>(labels.size());
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const auto z = latents.row(b);
    const std::size_t y = labels[b];
    if (cfg.prompt_distill) {
      const auto composed = model::compose_prompt(z, server);
      Mat dprompt(server.shape.length, server.shape.dim);
      bool any = false;
      auto add_term = [&](const PromptState& target, double weight) {
        const Mat t = model::rho(z, target);
        r.prompt_loss += inv * weight * nn::mse(composed.prompt, t);
        nn::axpy(inv * weight, nn::mse_grad(composed.prompt, t).data, dprompt.data);
        any = true;
      };
      if (teachers.dist_cur) {
        for (std::size_t c = 0; c < teachers.clients.size(); ++c) {
          const double a = teachers.dist_cur->alpha.at(c).at(y);
          if (a != 0.0) add_term(teachers.clients[c], a);
        }
      }
      const bool previous_label = y < cfg.first_current_class;  // ζ
      if (previous_label && teachers.prev_server) add_term(*teachers.prev_server, 1.0);
      if (any) model::compose_backward(z, server, composed, dprompt, r.grad);
    }
    if (cfg.classifier_distill) {
      const Vec logits = model::classify_latent(z, server);
      auto ce = nn::cross_entropy(logits, y, active);
      r.ce_loss += inv * ce.loss;
      for (double& g : ce.grad) g *= inv;
      model::classify_latent_backward(z, server, ce.grad, r.grad);
    }
  }
  return r;
}

/// Generator pair for composing distillation batches. `previous` may be
/// null at the first task or when previous-task replay is disabled.
struct LatentSources {
  const LatentGenerator* current = nullptr;
  const LabelDistribution* dist_cur = nullptr;
  const LatentGenerator* previous = nullptr;
  const LabelDistribution* dist_prev = nullptr;
};

struct CompositeBatch {
  Mat latents;
  std::vector<std::size_t> labels;
};

/// batch_size current-round latents plus round(batch_size·replay_ratio)
/// previous-task latents appended.
template <class R>
CompositeBatch sample_composite_batch(const LatentSources& src, const DistillConfig& cfg, R& rng) {
  CompositeBatch out;
  const auto cur_labels = generator::sample_labels(*src.dist_cur, cfg.batch_size, rng);
  const Mat cur_noise = generator::sample_noise(cfg.batch_size, src.current->shape.noise_dim, rng);
  const auto cur = generator::generate_batch(*src.current, cur_labels, cur_noise);
  out.latents = cur.out;
  out.labels = cur_labels;
  const auto n_prev = static_cast<std::size_t>(std::llround(static_cast<double>(cfg.batch_size) * cfg.replay_ratio));
  if (src.previous && n_prev > 0) {
    const auto prev_labels = generator::sample_labels(*src.dist_prev, n_prev, rng);
    const Mat prev_noise = generator::sample_noise(n_prev, src.previous->shape.noise_dim, rng);
    const auto prev = generator::generate_batch(*src.previous, prev_labels, prev_noise);
    out.latents.data.insert(out.latents.data.end(), prev.out.data.begin(), prev.out.data.end());
    out.latents.rows += n_prev;
    out.labels.insert(out.labels.end(), prev_labels.begin(), prev_labels.end());
  }
  return out;
}

/// Fine-tunes w_avg on generated latents. Only the server's keys, prompts
/// and classifier change; `task_index` is 0-based.
inline PromptState distill(const PromptState& w_avg, const DistillTeachers& teachers, const LatentSources& src,
                           const DistillConfig& cfg, std::size_t task_index, std::uint64_t seed) {
  cfg.validate();
  if (!src.current || !src.dist_cur) throw std::invalid_argument("distill: current-round generator is required");
  if (task_index > 0 && cfg.replay_ratio > 0.0 && (!src.previous || !src.dist_prev))
    throw std::invalid_argument("distill: previous-task generator required when replay_ratio > 0 after the first task");
  LatentSources use = src;
  if (task_index == 0) use.previous = nullptr;
  Rng rng(seed);
  nn::AdamState opt(cfg.lr);
  PromptState server = w_avg;
  for (std::size_t step = 0; step < cfg.epochs; ++step) {
    const auto batch = sample_composite_batch(use, cfg, rng);
    const auto r = distill_objective(server, teachers, batch.latents, batch.labels, cfg);
    nn::adam_step(server.parameters(), std::as_const(r.grad).parameters(), opt);
  }
  return server;
}

// ---------------------------------------------------------------------------
// Task bookkeeping.

struct ServerState {
  PromptState current;
  std::optional<PromptState> previous;         // frozen during a task
  std::vector<std::size_t> accumulated_counts; // all completed tasks
  std::vector<std::size_t> task_counts;        // current task, summed over rounds
  std::size_t task = 0;
  std::size_t round = 0;  // rounds completed within the current task

  ServerState() = default;
  explicit ServerState(PromptState init)
      : current(std::move(init)),
        accumulated_counts(current.shape.n_classes, 0),
        task_counts(current.shape.n_classes, 0) {}
};

inline void record_round(ServerState& s, std::span<const client::ClientReport> reports) {
  for (const auto& r : reports)
    for (std::size_t y = 0; y < r.counts.size(); ++y) s.task_counts.at(y) += r.counts[y];
  ++s.round;
}

/// Snapshot the round-R model as the previous-task model and fold this
/// task's counts into the accumulated statistics.
inline ServerState end_of_task(ServerState s, std::size_t rounds_per_task) {
  if (s.round != rounds_per_task)
    throw std::logic_error("end_of_task: called after " + std::to_string(s.round) + " of " +
                           std::to_string(rounds_per_task) + " rounds");
  s.previous = s.current;
  for (std::size_t y = 0; y < s.task_counts.size(); ++y) {
    s.accumulated_counts[y] += s.task_counts[y];
    s.task_counts[y] = 0;
  }
  s.round = 0;
  ++s.task;
  return s;
}

/// Distribution over every label seen in completed tasks, as a single
/// teacher (the stored previous-task model).
inline LabelDistribution previous_task_distribution(const ServerState& s) {
  return generator::build_distribution({s.accumulated_counts});
}

}  // namespace hepco::server
