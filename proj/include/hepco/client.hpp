#pragma once

// Stateless local training: prompt tuning, its FedProx variant, and full
// fine-tuning of a thawed attention copy (FedAvg-FT).

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <stdexcept>
#include <vector>

#include "hepco/nn.hpp"
#include "hepco/prompt_model.hpp"
#include "hepco/seeding.hpp"

namespace hepco::client {

using model::Attention;
using model::PromptState;

/// A training example: a frozen sample and its model class index.
struct Example {
  const encoder::EncodedSample* sample = nullptr;
  std::size_t target = 0;
};

enum class TrainMode { prompt, fedprox, full_ft };

struct LocalTrainConfig {
  TrainMode mode = TrainMode::prompt;
  std::size_t epochs = 10;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  double prox_mu = 0.01;
  /// Classes seen so far; logits beyond this are masked in the loss.
  std::size_t active_classes = 0;
  /// Logits below this index are masked too. 0 keeps every seen class live;
  /// the first class of the current task restricts the loss to that task.
  std::size_t first_live_class = 0;
};

struct ClientReport {
  std::size_t client = 0;
  PromptState state;
  std::optional<Attention> attention;  // only for full_ft
  std::vector<std::size_t> counts;     // n_c^y by model class
};

inline std::vector<std::size_t> label_histogram(std::span<const Example> data, std::size_t n_classes) {
  std::vector<std::size_t> h(n_classes, 0);
  for (const auto& e : data) h.at(e.target) += 1;
  return h;
}

struct ProxPenalty {
  double value = 0.0;
  PromptState grad;
};

/// (μ/2)·Σ‖w − w_anchor‖² over keys, prompts and classifier.
inline ProxPenalty fedprox_penalty(const PromptState& current, const PromptState& anchor, double mu) {
  if (!current.same_shape(anchor)) throw nn::ShapeError("fedprox_penalty: shape mismatch");
  ProxPenalty out{0.0, current.zeros_like()};
  const auto cur = current.parameters();
  const auto anc = anchor.parameters();
  auto g = out.grad.parameters();
  double sq = 0.0;
  for (std::size_t i = 0; i < cur.size(); ++i) {
    for (std::size_t j = 0; j < cur[i].size(); ++j) {
      const double diff = cur[i][j] - anc[i][j];
      sq += diff * diff;
      g[i][j] = mu * diff;
    }
  }
  out.value = 0.5 * mu * sq;
  return out;
}

/// Mean masked cross-entropy of the prompted model over `batch`,
/// accumulating mean gradients. Attention gradients are produced only when
/// `attn_grad` is non-null.
inline double batch_loss_and_grad(const PromptState& s, const Attention& attn, std::span<const Example> batch,
                                  std::size_t active, PromptState& grad, Attention* attn_grad,
                                  std::size_t first_live = 0) {
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& e : batch) {
    const auto cache = model::prompted_forward(*e.sample, s, attn);
    auto ce = nn::cross_entropy(cache.logits, e.target, active, first_live);
    loss += ce.loss * inv;
    for (double& g : ce.grad) g *= inv;
    if (attn_grad)
      model::prompted_backward_full(*e.sample, s, attn, cache, ce.grad, grad, *attn_grad);
    else
      model::prompted_backward(*e.sample, s, attn, cache, ce.grad, grad);
  }
  return loss;
}

/// Mini-batch Adam over the learnable parameters for `cfg.epochs` passes.
/// `init` is never modified; an empty dataset returns it unchanged.
inline ClientReport train_local(const PromptState& init, const Attention& attn, std::span<const Example> data,
                                const LocalTrainConfig& cfg, std::uint64_t seed) {
  if (cfg.epochs < 1) throw std::invalid_argument("train_local: epochs must be >= 1");
  const std::size_t active = cfg.active_classes == 0 ? init.shape.n_classes : cfg.active_classes;
  ClientReport rep;
  rep.state = init;
  rep.counts = label_histogram(data, init.shape.n_classes);
  const bool full = cfg.mode == TrainMode::full_ft;
  if (full) rep.attention = attn;
  if (data.empty()) return rep;

  Rng rng(seed);
  nn::AdamState opt(cfg.lr);
  const std::size_t bs = std::clamp<std::size_t>(cfg.batch_size, 1, data.size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Example> batch;
  batch.reserve(bs);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(data[order[i]]);
      PromptState grad = rep.state.zeros_like();
      std::optional<Attention> attn_grad;
      if (full) attn_grad = Attention(attn.dim);
      batch_loss_and_grad(rep.state, full ? *rep.attention : attn, batch, active, grad,
                          full ? &*attn_grad : nullptr, cfg.first_live_class);
      if (cfg.mode == TrainMode::fedprox) {
        const auto prox = fedprox_penalty(rep.state, init, cfg.prox_mu);
        auto g = grad.parameters();
        const auto pg = std::as_const(prox.grad).parameters();
        for (std::size_t i = 0; i < g.size(); ++i) nn::axpy(1.0, pg[i], g[i]);
      }
      auto params = rep.state.parameters();
      auto grads = std::as_const(grad).parameters();
      if (full) {
        for (auto p : rep.attention->parameters()) params.push_back(p);
        for (auto g : std::as_const(*attn_grad).parameters()) grads.push_back(g);
      }
      nn::adam_step(params, grads, opt);
    }
  }
  return rep;
}

}  // namespace hepco::client
