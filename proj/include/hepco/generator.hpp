#pragma once

// Conditional latent generator: label embedding concatenated with Gaussian
// noise, three fully-connected layers, output in the query space. Trained
// to produce latents the teachers classify correctly while maximizing the
// server/teacher disagreement on both the classifier and the prompts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hepco/nn.hpp"
#include "hepco/prompt_model.hpp"
#include "hepco/seeding.hpp"

namespace hepco::generator {

using model::PromptState;
using nn::Mat;
using nn::Vec;

struct GeneratorShape {
  std::size_t n_labels = 0;
  std::size_t embed_dim = 64;
  std::size_t noise_dim = 64;
  std::vector<std::size_t> hidden{256, 1024};
  std::size_t out_dim = 32;
  double slope = 0.01;
};

struct LatentGenerator {
  GeneratorShape shape;
  Mat embedding;                // n_labels×E
  std::vector<Mat> weights;     // per layer, in×out
  std::vector<Vec> biases;

  LatentGenerator() = default;
  explicit LatentGenerator(const GeneratorShape& s) : shape(s), embedding(s.n_labels, s.embed_dim) {
    if (s.n_labels == 0) throw std::invalid_argument("generator needs at least one label");
    std::size_t in = s.embed_dim + s.noise_dim;
    for (std::size_t h : s.hidden) {
      weights.emplace_back(in, h);
      biases.emplace_back(h, 0.0);
      in = h;
    }
    weights.emplace_back(in, s.out_dim);
    biases.emplace_back(s.out_dim, 0.0);
  }

  LatentGenerator zeros_like() const { return LatentGenerator(shape); }

  nn::ParamList parameters() {
    nn::ParamList p{std::span<double>(embedding.data)};
    for (std::size_t l = 0; l < weights.size(); ++l) {
      p.emplace_back(weights[l].data);
      p.emplace_back(biases[l]);
    }
    return p;
  }
  nn::GradList parameters() const {
    nn::GradList p{std::span<const double>(embedding.data)};
    for (std::size_t l = 0; l < weights.size(); ++l) {
      p.emplace_back(weights[l].data);
      p.emplace_back(biases[l]);
    }
    return p;
  }
};

template <class R>
LatentGenerator init_generator(const GeneratorShape& shape, R& rng) {
  LatentGenerator g(shape);
  nn::fill_normal(std::span<double>(g.embedding.data), rng, 1.0);
  for (auto& w : g.weights) nn::fill_normal(std::span<double>(w.data), rng, std::sqrt(2.0 / static_cast<double>(w.rows)));
  return g;
}

struct GeneratorCache {
  std::vector<Mat> inputs;  // input to each layer
  std::vector<Mat> preact;  // pre-activation of each layer
  Mat out;                  // B×D
};

/// Batched forward. `noise` is B×noise_dim.
inline GeneratorCache generate_batch(const LatentGenerator& g, std::span<const std::size_t> labels, const Mat& noise) {
  const auto& s = g.shape;
  if (noise.rows != labels.size() || noise.cols != s.noise_dim) throw nn::ShapeError("generate: noise shape");
  Mat x(labels.size(), s.embed_dim + s.noise_dim);
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] >= s.n_labels) throw std::out_of_range("generate: label " + std::to_string(labels[b]) + " out of range");
    auto row = x.row(b);
    std::copy_n(g.embedding.row(labels[b]).begin(), s.embed_dim, row.begin());
    std::copy_n(noise.row(b).begin(), s.noise_dim, row.begin() + static_cast<std::ptrdiff_t>(s.embed_dim));
  }
  GeneratorCache c;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    Mat z = nn::matmul(x, g.weights[l]);
    for (std::size_t b = 0; b < z.rows; ++b) nn::axpy(1.0, g.biases[l], z.row(b));
    c.inputs.push_back(std::move(x));
    const bool last = l + 1 == g.weights.size();
    if (last) {
      c.out = z;
    } else {
      x = z;
      for (double& v : x.data) v = nn::leaky_relu(v, s.slope);
    }
    c.preact.push_back(std::move(z));
  }
  return c;
}

/// z = G(ε, y); `noise` has length noise_dim.
inline Vec generate(const LatentGenerator& g, std::size_t label, std::span<const double> noise) {
  Mat n(1, g.shape.noise_dim);
  if (noise.size() != g.shape.noise_dim) throw nn::ShapeError("generate: noise length");
  std::copy(noise.begin(), noise.end(), n.data.begin());
  const std::size_t labels[1] = {label};
  return generate_batch(g, labels, n).out.data;
}

/// Accumulates parameter gradients given d/dout (B×D).
inline void generator_backward(const LatentGenerator& g, std::span<const std::size_t> labels, const GeneratorCache& c,
                               Mat dout, LatentGenerator& grad) {
  Mat dz = std::move(dout);
  for (std::size_t l = g.weights.size(); l-- > 0;) {
    const Mat gw = nn::matmul_tn(c.inputs[l], dz);
    nn::axpy(1.0, gw.data, grad.weights[l].data);
    for (std::size_t b = 0; b < dz.rows; ++b) nn::axpy(1.0, dz.row(b), grad.biases[l]);
    Mat dx = nn::matmul_nt(dz, g.weights[l]);
    if (l > 0) {
      const Mat& pre = c.preact[l - 1];
      for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= nn::leaky_relu_grad(pre.data[i], g.shape.slope);
      dz = std::move(dx);
    } else {
      for (std::size_t b = 0; b < labels.size(); ++b)
        nn::axpy(1.0, dx.row(b).first(g.shape.embed_dim), grad.embedding.row(labels[b]));
    }
  }
}

// ---------------------------------------------------------------------------
// Label statistics.

struct LabelDistribution {
  std::vector<double> prob;                 // Prob(y)
  std::vector<std::vector<double>> alpha;   // alpha[c][y]
  std::vector<std::vector<std::size_t>> counts;

  std::size_t n_classes() const { return prob.size(); }
  std::size_t n_clients() const { return alpha.size(); }
};

/// Prob(y) ∝ Σ_c n_c^y and α^{c,y} = n_c^y / Σ_i n_i^y.
inline LabelDistribution build_distribution(const std::vector<std::vector<std::size_t>>& counts) {
  if (counts.empty()) throw std::invalid_argument("build_distribution: no clients");
  const std::size_t k = counts.front().size();
  std::vector<double> total(k, 0.0);
  for (const auto& c : counts) {
    if (c.size() != k) throw nn::ShapeError("build_distribution: count vectors differ in length");
    for (std::size_t y = 0; y < k; ++y) total[y] += static_cast<double>(c[y]);
  }
  double all = 0.0;
  for (double t : total) all += t;
  if (all == 0.0) throw std::invalid_argument("build_distribution: all counts are zero");

  LabelDistribution d;
  d.counts = counts;
  d.prob.resize(k);
  for (std::size_t y = 0; y < k; ++y) d.prob[y] = total[y] / all;
  d.alpha.assign(counts.size(), std::vector<double>(k, 0.0));
  for (std::size_t c = 0; c < counts.size(); ++c)
    for (std::size_t y = 0; y < k; ++y)
      if (total[y] > 0.0) d.alpha[c][y] = static_cast<double>(counts[c][y]) / total[y];
  return d;
}

/// Inverse-CDF draw over Prob(y). Labels with zero mass are never returned.
template <class R>
std::vector<std::size_t> sample_labels(const LabelDistribution& d, std::size_t n, R& rng) {
  std::vector<double> cdf(d.prob.size());
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t y = 0; y < d.prob.size(); ++y) {
    acc += d.prob[y];
    cdf[y] = acc;
    if (d.prob[y] > 0.0) last = y;
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::size_t> out(n);
  for (auto& y : out) {
    const double r = u(rng) * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
    y = it == cdf.end() ? last : static_cast<std::size_t>(it - cdf.begin());
    while (d.prob[y] == 0.0 && y < last) ++y;
  }
  return out;
}

template <class R>
Mat sample_noise(std::size_t rows, std::size_t dim, R& rng) {
  Mat n(rows, dim);
  nn::fill_normal(std::span<double>(n.data), rng, 1.0);
  return n;
}

// ---------------------------------------------------------------------------
// Training objective: L_cls − λ_KL·L_KL − λ_MSE·L_MSE, averaged over a batch.

struct GeneratorTrainConfig {
  double lambda_kl = 1.0;
  double lambda_mse = 0.1;
  std::size_t epochs = 100;  // optimizer steps, one batch each
  std::size_t batch_size = 64;
  double lr = 1e-4;
  std::size_t active_classes = 0;  // 0 means all

  void validate() const {
    if (lambda_kl < 0.0 || lambda_mse < 0.0) throw std::invalid_argument("generator lambdas must be >= 0");
    if (batch_size == 0) throw std::invalid_argument("generator batch_size must be >= 1");
  }
};

struct ObjectiveTerms {
  double total = 0.0;
  double cls = 0.0;
  double kl = 0.0;
  double mse = 0.0;
};

/// Per-latent terms and d(total)/dz for one conditioned latent.
inline ObjectiveTerms latent_objective(std::span<const double> z, std::size_t y, std::span<const PromptState> teachers,
                                       const LabelDistribution& dist, const PromptState& server,
                                       const GeneratorTrainConfig& cfg, std::size_t active, Vec* dz) {
  ObjectiveTerms t;
  if (dz) dz->assign(z.size(), 0.0);
  const Vec server_logits = model::classify_latent(z, server);
  model::ComposedPrompt server_rho;
  const bool need_rho = cfg.lambda_mse != 0.0;
  if (need_rho) server_rho = model::compose_prompt(z, server);
  Mat dserver_rho;
  if (need_rho && dz) dserver_rho = Mat(server.shape.length, server.shape.dim);
  Vec dserver_logits(server_logits.size(), 0.0);

  for (std::size_t c = 0; c < teachers.size(); ++c) {
    const double a = dist.alpha[c][y];
    if (a == 0.0) continue;
    const PromptState& w = teachers[c];
    const Vec logits = model::classify_latent(z, w);
    const auto ce = nn::cross_entropy(logits, y, active);
    t.cls += a * ce.loss;
    Vec dlogits(logits.size(), 0.0);
    nn::axpy(a, ce.grad, dlogits);
    if (cfg.lambda_kl != 0.0) {
      const auto kl = nn::kl_divergence(server_logits, logits, active);
      t.kl += a * kl.value;
      nn::axpy(-cfg.lambda_kl * a, kl.grad_q, dlogits);
      nn::axpy(-cfg.lambda_kl * a, kl.grad_p, dserver_logits);
    }
    if (dz) nn::axpy(1.0, nn::matvec(w.weights, dlogits), *dz);
    if (need_rho) {
      const Mat teacher_rho = model::rho(z, w);
      t.mse += a * nn::mse(server_rho.prompt, teacher_rho);
      if (dz) {
        const Mat g = nn::mse_grad(server_rho.prompt, teacher_rho);
        nn::axpy(-cfg.lambda_mse * a, g.data, dserver_rho.data);
        Mat gt = g;
        for (double& v : gt.data) v *= cfg.lambda_mse * a;  // d/dteacher_rho of −λ·a·mse
        nn::axpy(1.0, model::compose_query_grad(z, w, gt), *dz);
      }
    }
  }
  if (dz) {
    nn::axpy(1.0, nn::matvec(server.weights, dserver_logits), *dz);
    if (need_rho) nn::axpy(1.0, model::compose_query_grad(z, server, dserver_rho), *dz);
  }
  t.total = t.cls - cfg.lambda_kl * t.kl - cfg.lambda_mse * t.mse;
  return t;
}

struct ObjectiveResult {
  ObjectiveTerms terms;  // batch means
  LatentGenerator grad;
};

/// Batch-mean objective with gradient w.r.t. the generator parameters.
/// Teachers and server are read-only.
inline ObjectiveResult generator_objective(const LatentGenerator& g, std::span<const PromptState> teachers,
                                           const PromptState& server, const LabelDistribution& dist,
                                           std::span<const std::size_t> labels, const Mat& noise,
                                           const GeneratorTrainConfig& cfg, bool with_grad = true) {
  if (teachers.size() > dist.n_clients()) throw std::invalid_argument("generator_objective: teacher/alpha mismatch");
  for (const auto& t : teachers)
    if (!t.same_shape(server)) throw nn::ShapeError("generator_objective: teacher shape differs from server");
  const std::size_t active = cfg.active_classes == 0 ? server.shape.n_classes : cfg.active_classes;
  const auto cache = generate_batch(g, labels, noise);
  ObjectiveResult r;
  Mat dout(labels.size(), g.shape.out_dim);
  const double inv = 1.0 / static_cast<double>(labels.size());
  Vec dz;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const auto t = latent_objective(cache.out.row(b), labels[b], teachers, dist, server, cfg, active,
                                    with_grad ? &dz : nullptr);
    r.terms.total += t.total * inv;
    r.terms.cls += t.cls * inv;
    r.terms.kl += t.kl * inv;
    r.terms.mse += t.mse * inv;
    if (with_grad) nn::axpy(inv, dz, dout.row(b));
  }
  if (with_grad) {
    r.grad = g.zeros_like();
    generator_backward(g, labels, cache, std::move(dout), r.grad);
  }
  return r;
}

/// Minimizes the objective over the generator parameters with Adam. One
/// epoch is one freshly sampled batch.
inline LatentGenerator train_generator(LatentGenerator g, std::span<const PromptState> teachers,
                                       const PromptState& server, const LabelDistribution& dist,
                                       const GeneratorTrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (teachers.empty()) throw std::invalid_argument("train_generator: no teachers");
  Rng rng(seed);
  nn::AdamState opt(cfg.lr);
  for (std::size_t step = 0; step < cfg.epochs; ++step) {
    const auto labels = sample_labels(dist, cfg.batch_size, rng);
    const Mat noise = sample_noise(cfg.batch_size, g.shape.noise_dim, rng);
    const auto r = generator_objective(g, teachers, server, dist, labels, noise, cfg);
    nn::adam_step(g.parameters(), r.grad.parameters(), opt);
  }
  return g;
}

/// Single-teacher variant conditioned on labels of all previous tasks.
/// `task_index` is 0-based; there is no previous task at index 0.
inline LatentGenerator train_previous_task_generator(LatentGenerator g, const PromptState& prev_server,
                                                     const PromptState& server, const LabelDistribution& dist_prev,
                                                     const GeneratorTrainConfig& cfg, std::size_t task_index,
                                                     std::uint64_t seed) {
  if (task_index == 0) throw std::logic_error("train_previous_task_generator: no previous task at the first task");
  if (dist_prev.n_clients() != 1) throw std::invalid_argument("previous-task distribution must have one teacher");
  const PromptState teachers[1] = {prev_server};
  return train_generator(std::move(g), teachers, server, dist_prev, cfg, seed);
}

}  // namespace hepco::generator
