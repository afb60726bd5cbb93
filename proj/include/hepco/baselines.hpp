#pragma once

// Comparison methods: full fine-tuning with FedAvg (attention block thawed,
// no prompts) and the L2P top-N prompt selection kept as a reference path.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "hepco/client.hpp"
#include "hepco/prompt_model.hpp"
#include "hepco/server.hpp"

namespace hepco::baselines {

using model::Attention;
using model::PromptState;
using nn::Mat;
using nn::Vec;

/// Attention block plus a classifier head with an empty prompt pool.
struct FullModel {
  Attention attention;
  PromptState head;

  std::size_t parameter_count() const { return attention.parameter_count() + head.parameter_count(); }
};

inline FullModel make_full_model(const Attention& attn, const PromptState& head_init) {
  model::PromptShape shape = head_init.shape;
  shape.pool = 0;
  shape.length = 0;
  FullModel m{attn, PromptState(shape)};
  m.head.weights = head_init.weights;
  m.head.bias = head_init.bias;
  return m;
}

struct FtRoundResult {
  FullModel model;
  std::vector<client::ClientReport> reports;
};

/// Every client trains all parameters starting from `global`; the server
/// uniformly averages attention and head.
inline FtRoundResult fedavg_ft_round(const FullModel& global, const std::vector<std::vector<client::Example>>& data,
                                     client::LocalTrainConfig cfg, std::span<const std::uint64_t> seeds) {
  if (data.empty()) throw std::invalid_argument("fedavg_ft_round: no clients");
  if (seeds.size() != data.size()) throw std::invalid_argument("fedavg_ft_round: one seed per client required");
  cfg.mode = client::TrainMode::full_ft;
  FtRoundResult out;
  std::vector<PromptState> heads;
  std::vector<Attention> attns;
  for (std::size_t c = 0; c < data.size(); ++c) {
    auto rep = client::train_local(global.head, global.attention, data[c], cfg, seeds[c]);
    rep.client = c;
    if (!rep.attention || rep.attention->dim != global.attention.dim)
      throw nn::ShapeError("fedavg_ft_round: client returned no attention block");
    heads.push_back(rep.state);
    attns.push_back(*rep.attention);
    out.reports.push_back(std::move(rep));
  }
  out.model.head = server::uniform_average(std::span<const PromptState>(heads));
  out.model.attention = server::uniform_average(std::span<const Attention>(attns));
  return out;
}

struct L2pSelection {
  std::vector<std::size_t> indices;  // ascending
  Mat prompt;                        // (n·L_p)×D, selected prompts in index order
  Vec scores;                        // cosine score for every pool entry
};

/// Top-n prompts by cosine(query, key); ties go to the lower index.
inline L2pSelection l2p_select(std::span<const double> query, const PromptState& pool, std::size_t top_n) {
  const std::size_t m = pool.shape.pool;
  if (top_n > m) throw std::invalid_argument("l2p_select: top_n exceeds pool size");
  L2pSelection out;
  out.scores.resize(m);
  for (std::size_t i = 0; i < m; ++i) out.scores[i] = nn::cosine_similarity(query, pool.keys.row(i));
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.scores[a] > out.scores[b]; });
  out.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top_n));
  std::sort(out.indices.begin(), out.indices.end());
  const std::size_t len = pool.shape.length;
  out.prompt = Mat(top_n * len, pool.shape.dim);
  for (std::size_t k = 0; k < top_n; ++k) {
    const std::size_t i = out.indices[k];
    std::copy_n(pool.prompts.data.begin() + static_cast<std::ptrdiff_t>(i * len * pool.shape.dim),
                len * pool.shape.dim,
                out.prompt.data.begin() + static_cast<std::ptrdiff_t>(k * len * pool.shape.dim));
  }
  return out;
}

/// Score-weighted sum of the selected prompts (L_p×D). With top_n = M this
/// is the decomposed composition.
inline Mat weighted_selection(const L2pSelection& sel, const PromptState& pool) {
  const std::size_t len = pool.shape.length;
  Mat p(len, pool.shape.dim);
  for (std::size_t k = 0; k < sel.indices.size(); ++k) {
    const double w = sel.scores[sel.indices[k]];
    if (w == 0.0) continue;
    nn::axpy(w, std::span<const double>(sel.prompt.data).subspan(k * len * pool.shape.dim, len * pool.shape.dim),
             p.data);
  }
  return p;
}

}  // namespace hepco::baselines
