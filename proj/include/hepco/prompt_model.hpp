#pragma once

// The learnable model: a key/prompt pool composed by raw cosine weights, a
// single attention block that takes the composed prompt as key/value
// prefixes, and a linear classifier. Backward passes are hand-derived.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hepco/encoder.hpp"
#include "hepco/nn.hpp"
#include "hepco/seeding.hpp"

namespace hepco::model {

using nn::GradList;
using nn::Mat;
using nn::ParamList;
using nn::Vec;

struct PromptShape {
  std::size_t pool = 8;        // M
  std::size_t length = 4;      // L_p, even
  std::size_t dim = 32;        // D
  std::size_t n_classes = 20;  // classifier outputs, allocated up front

  void validate() const {
    if (length % 2 != 0) throw std::invalid_argument("prompt length must be even");
    if (dim == 0) throw std::invalid_argument("dim must be >= 1");
    if (n_classes == 0) throw std::invalid_argument("n_classes must be >= 1");
  }
  friend bool operator==(const PromptShape&, const PromptShape&) = default;
};

/// Keys, prompts and classifier. Also used as its own gradient container.
struct PromptState {
  PromptShape shape;
  Mat keys;     // M×D
  Mat prompts;  // (M·L_p)×D; prompt i is rows [i·L_p, (i+1)·L_p)
  Mat weights;  // D×n_classes
  Vec bias;     // n_classes

  PromptState() = default;
  explicit PromptState(const PromptShape& s)
      : shape(s),
        keys(s.pool, s.dim),
        prompts(s.pool * s.length, s.dim),
        weights(s.dim, s.n_classes),
        bias(s.n_classes, 0.0) {
    s.validate();
  }

  PromptState zeros_like() const { return PromptState(shape); }

  ParamList parameters() {
    return {std::span<double>(keys.data), std::span<double>(prompts.data), std::span<double>(weights.data),
            std::span<double>(bias)};
  }
  GradList parameters() const {
    return {std::span<const double>(keys.data), std::span<const double>(prompts.data),
            std::span<const double>(weights.data), std::span<const double>(bias)};
  }

  /// M·D + M·L_p·D + D·n_classes + n_classes
  std::size_t parameter_count() const {
    return shape.pool * shape.dim + shape.pool * shape.length * shape.dim + shape.dim * shape.n_classes +
           shape.n_classes;
  }

  bool same_shape(const PromptState& o) const { return shape == o.shape; }

  friend bool operator==(const PromptState&, const PromptState&) = default;
};

struct PromptInit {
  double key_scale = 1.0;
  double prompt_scale = 0.01;
  double classifier_scale = 0.01;
};

template <class R>
PromptState init_prompt_state(const PromptShape& shape, R& rng, const PromptInit& init = {}) {
  PromptState s(shape);
  nn::fill_normal(std::span<double>(s.keys.data), rng, init.key_scale);
  nn::fill_normal(std::span<double>(s.prompts.data), rng, init.prompt_scale);
  nn::fill_normal(std::span<double>(s.weights.data), rng, init.classifier_scale);
  return s;
}

/// Stand-in for the frozen transformer layer into which prompts are
/// prefixed. Projections start near identity so that its output stays in
/// the query space the generator targets.
struct Attention {
  std::size_t dim = 0;
  Mat wq, wk, wv, wo;  // D×D each

  Attention() = default;
  explicit Attention(std::size_t d) : dim(d), wq(d, d), wk(d, d), wv(d, d), wo(d, d) {}

  ParamList parameters() {
    return {std::span<double>(wq.data), std::span<double>(wk.data), std::span<double>(wv.data),
            std::span<double>(wo.data)};
  }
  GradList parameters() const {
    return {std::span<const double>(wq.data), std::span<const double>(wk.data), std::span<const double>(wv.data),
            std::span<const double>(wo.data)};
  }
  std::size_t parameter_count() const { return 4 * dim * dim; }

  friend bool operator==(const Attention&, const Attention&) = default;
};

template <class R>
Attention init_attention(std::size_t dim, R& rng, double jitter = 0.1) {
  Attention a(dim);
  const double sd = jitter / std::sqrt(static_cast<double>(dim));
  for (Mat* m : {&a.wq, &a.wk, &a.wv, &a.wo}) {
    nn::fill_normal(std::span<double>(m->data), rng, sd);
    for (std::size_t i = 0; i < dim; ++i) (*m)(i, i) += 1.0;
  }
  return a;
}

// ---------------------------------------------------------------------------
// Prompt composition.

struct ComposedPrompt {
  Mat prompt;   // L_p×D
  Vec scores;   // cosine(query, k_i)
};

/// p = Σ_i cos(query, k_i)·P_i over the whole pool.
inline ComposedPrompt compose_prompt(std::span<const double> query, const PromptState& s) {
  if (query.size() != s.shape.dim) throw nn::ShapeError("compose_prompt: query length != D");
  ComposedPrompt out{Mat(s.shape.length, s.shape.dim), Vec(s.shape.pool, 0.0)};
  const std::size_t block = s.shape.length * s.shape.dim;
  for (std::size_t i = 0; i < s.shape.pool; ++i) {
    const double c = nn::cosine_similarity(query, s.keys.row(i));
    out.scores[i] = c;
    if (c == 0.0) continue;
    nn::axpy(c, std::span<const double>(s.prompts.data).subspan(i * block, block), out.prompt.data);
  }
  return out;
}

/// The prompting mechanism applied to a pseudo-latent.
inline Mat rho(std::span<const double> z, const PromptState& s) { return compose_prompt(z, s).prompt; }

/// Accumulates d/dkeys and d/dprompts into `grad`; if `dquery` is non-null it
/// receives the gradient w.r.t. the query as well.
inline void compose_backward(std::span<const double> query, const PromptState& s, const ComposedPrompt& fwd,
                             const Mat& dprompt, PromptState& grad, Vec* dquery = nullptr) {
  const std::size_t block = s.shape.length * s.shape.dim;
  const std::span<const double> dp(dprompt.data);
  if (dquery) dquery->assign(query.size(), 0.0);
  for (std::size_t i = 0; i < s.shape.pool; ++i) {
    const auto pi = std::span<const double>(s.prompts.data).subspan(i * block, block);
    nn::axpy(fwd.scores[i], dp, std::span<double>(grad.prompts.data).subspan(i * block, block));
    const double dscore = nn::dot(pi, dp);
    if (dscore == 0.0) continue;
    const Vec dk = nn::cosine_grad_first(s.keys.row(i), query);
    nn::axpy(dscore, dk, grad.keys.row(i));
    if (dquery) nn::axpy(dscore, nn::cosine_grad_first(query, s.keys.row(i)), *dquery);
  }
}

/// d/dquery only, for callers that differentiate through ρ with the pool
/// held fixed.
inline Vec compose_query_grad(std::span<const double> query, const PromptState& s, const Mat& dprompt) {
  Vec dq(query.size(), 0.0);
  const std::size_t block = s.shape.length * s.shape.dim;
  const std::span<const double> dp(dprompt.data);
  for (std::size_t i = 0; i < s.shape.pool; ++i) {
    const double dscore = nn::dot(std::span<const double>(s.prompts.data).subspan(i * block, block), dp);
    if (dscore == 0.0) continue;
    nn::axpy(dscore, nn::cosine_grad_first(query, s.keys.row(i)), dq);
  }
  return dq;
}

// ---------------------------------------------------------------------------
// Classifier on a latent.

inline Vec classify_latent(std::span<const double> z, const PromptState& s) {
  if (z.size() != s.shape.dim) throw nn::ShapeError("classify_latent: latent length != D");
  Vec logits = nn::vecmat(z, s.weights);
  nn::axpy(1.0, s.bias, logits);
  return logits;
}

/// Accumulates classifier gradients; returns d/dz.
inline Vec classify_latent_backward(std::span<const double> z, const PromptState& s,
                                    std::span<const double> dlogits, PromptState& grad) {
  nn::add_outer(grad.weights, 1.0, z, dlogits);
  nn::axpy(1.0, dlogits, grad.bias);
  return nn::matvec(s.weights, dlogits);
}

// ---------------------------------------------------------------------------
// Prefix-tuned attention forward/backward.

struct ForwardCache {
  ComposedPrompt composed;
  std::size_t prefix = 0;  // prefix rows per side; 0 when the composed prompt is all zeros
  Mat keys_in;     // [P_k; tokens]
  Mat values_in;   // [P_v; tokens]
  Mat keys_proj;   // keys_in·W_k
  Mat values_proj; // values_in·W_v
  Vec query_proj;  // q·W_q
  Vec attn;        // softmax over prefix + token positions
  Vec context;
  Vec hidden;      // context·W_o
  Vec logits;
};

inline ForwardCache prompted_forward(const encoder::EncodedSample& x, const PromptState& s, const Attention& attn) {
  const std::size_t d = s.shape.dim;
  if (x.tokens.cols != d || x.query.size() != d || attn.dim != d)
    throw nn::ShapeError("prompted_forward: dimension mismatch");
  const std::size_t t = x.tokens.rows;
  ForwardCache c;
  c.composed = compose_prompt(x.query, s);
  const bool any = std::any_of(c.composed.prompt.data.begin(), c.composed.prompt.data.end(),
                               [](double v) { return v != 0.0; });
  const std::size_t half = any ? s.shape.length / 2 : 0;
  c.prefix = half;

  c.keys_in = Mat(half + t, d);
  c.values_in = Mat(half + t, d);
  for (std::size_t r = 0; r < half; ++r) {
    std::copy_n(c.composed.prompt.row(r).begin(), d, c.keys_in.row(r).begin());
    std::copy_n(c.composed.prompt.row(half + r).begin(), d, c.values_in.row(r).begin());
  }
  for (std::size_t r = 0; r < t; ++r) {
    std::copy_n(x.tokens.row(r).begin(), d, c.keys_in.row(half + r).begin());
    std::copy_n(x.tokens.row(r).begin(), d, c.values_in.row(half + r).begin());
  }
  c.keys_proj = nn::matmul(c.keys_in, attn.wk);
  c.values_proj = nn::matmul(c.values_in, attn.wv);
  c.query_proj = nn::vecmat(x.query, attn.wq);

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Vec raw = nn::matvec(c.keys_proj, c.query_proj);
  for (double& r : raw) r *= scale;
  c.attn = nn::softmax(raw);

  c.context.assign(d, 0.0);
  for (std::size_t j = 0; j < half + t; ++j) nn::axpy(c.attn[j], c.values_proj.row(j), c.context);
  c.hidden = nn::vecmat(c.context, attn.wo);
  c.logits = classify_latent(c.hidden, s);
  return c;
}

inline Vec prompted_logits(const encoder::EncodedSample& x, const PromptState& s, const Attention& attn) {
  return prompted_forward(x, s, attn).logits;
}

namespace detail {

/// Shared backward through attention. Returns d/dkeys_in and d/dvalues_in
/// rows; accumulates attention parameter gradients only when `attn_grad`
/// is provided.
inline std::pair<Mat, Mat> attention_backward(const encoder::EncodedSample& x, const Attention& attn,
                                              const ForwardCache& c, std::span<const double> dhidden,
                                              Attention* attn_grad) {
  const std::size_t d = attn.dim;
  const std::size_t n = c.attn.size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  if (attn_grad) nn::add_outer(attn_grad->wo, 1.0, c.context, dhidden);
  const Vec dctx = nn::matvec(attn.wo, dhidden);

  Mat dvalues_proj(n, d);
  Vec da(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    nn::axpy(c.attn[j], dctx, dvalues_proj.row(j));
    da[j] = nn::dot(c.values_proj.row(j), dctx);
  }
  const double mean_da = nn::dot(c.attn, da);
  Vec draw(n);
  for (std::size_t j = 0; j < n; ++j) draw[j] = c.attn[j] * (da[j] - mean_da) * scale;

  Mat dkeys_proj(n, d);
  Vec dqp(d, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    nn::axpy(draw[j], c.query_proj, dkeys_proj.row(j));
    nn::axpy(draw[j], c.keys_proj.row(j), dqp);
  }
  if (attn_grad) {
    const Mat gv = nn::matmul_tn(c.values_in, dvalues_proj);
    const Mat gk = nn::matmul_tn(c.keys_in, dkeys_proj);
    nn::axpy(1.0, gv.data, attn_grad->wv.data);
    nn::axpy(1.0, gk.data, attn_grad->wk.data);
    nn::add_outer(attn_grad->wq, 1.0, x.query, dqp);
  }
  return {nn::matmul_nt(dkeys_proj, attn.wk), nn::matmul_nt(dvalues_proj, attn.wv)};
}

}  // namespace detail

/// Accumulates gradients of a loss with d/dlogits = `dlogits` into `grad`.
/// The attention block is read-only here.
inline void prompted_backward(const encoder::EncodedSample& x, const PromptState& s, const Attention& attn,
                              const ForwardCache& c, std::span<const double> dlogits, PromptState& grad) {
  const Vec dhidden = classify_latent_backward(c.hidden, s, dlogits, grad);
  const std::size_t half = c.prefix;
  if (half == 0) return;
  auto [dkeys_in, dvalues_in] = detail::attention_backward(x, attn, c, dhidden, nullptr);
  Mat dprompt(s.shape.length, s.shape.dim);
  for (std::size_t r = 0; r < half; ++r) {
    std::copy_n(dkeys_in.row(r).begin(), s.shape.dim, dprompt.row(r).begin());
    std::copy_n(dvalues_in.row(r).begin(), s.shape.dim, dprompt.row(half + r).begin());
  }
  compose_backward(x.query, s, c.composed, dprompt, grad);
}

/// Same as prompted_backward but also differentiates the attention block,
/// for the full fine-tuning baseline.
inline void prompted_backward_full(const encoder::EncodedSample& x, const PromptState& s, const Attention& attn,
                                   const ForwardCache& c, std::span<const double> dlogits, PromptState& grad,
                                   Attention& attn_grad) {
  const Vec dhidden = classify_latent_backward(c.hidden, s, dlogits, grad);
  auto [dkeys_in, dvalues_in] = detail::attention_backward(x, attn, c, dhidden, &attn_grad);
  const std::size_t half = c.prefix;
  if (half == 0) return;
  Mat dprompt(s.shape.length, s.shape.dim);
  for (std::size_t r = 0; r < half; ++r) {
    std::copy_n(dkeys_in.row(r).begin(), s.shape.dim, dprompt.row(r).begin());
    std::copy_n(dvalues_in.row(r).begin(), s.shape.dim, dprompt.row(half + r).begin());
  }
  compose_backward(x.query, s, c.composed, dprompt, grad);
}

// ---------------------------------------------------------------------------
// Wire format: "HPST", u32 version, u32 M, u32 L_p, u32 D, u32 n_classes,
// then keys, prompts, classifier weights, bias as little-endian float64.

inline constexpr std::array<char, 4> kStateMagic{'H', 'P', 'S', 'T'};
inline constexpr std::uint32_t kStateVersion = 1;

class StateFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_f64(std::ostream& os, double v) {
  const auto u = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline bool get_f64(std::istream& is, double& v) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  v = std::bit_cast<double>(u);
  return true;
}

}  // namespace detail

inline void write_state(std::ostream& os, const PromptState& s) {
  os.write(kStateMagic.data(), 4);
  encoder::detail::put_u32(os, kStateVersion);
  for (std::size_t v : {s.shape.pool, s.shape.length, s.shape.dim, s.shape.n_classes})
    encoder::detail::put_u32(os, static_cast<std::uint32_t>(v));
  for (auto p : s.parameters())
    for (double x : p) detail::put_f64(os, x);
}

inline PromptState read_state(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kStateMagic) throw StateFormatError("prompt state: bad magic");
  std::uint32_t version = 0;
  if (!encoder::detail::get_u32(is, version)) throw StateFormatError("prompt state: truncated header");
  if (version != kStateVersion) throw StateFormatError("prompt state: unsupported version " + std::to_string(version));
  std::uint32_t dims[4];
  for (auto& v : dims)
    if (!encoder::detail::get_u32(is, v)) throw StateFormatError("prompt state: truncated header");
  PromptShape shape{dims[0], dims[1], dims[2], dims[3]};
  PromptState s(shape);
  for (auto p : s.parameters())
    for (double& x : p)
      if (!detail::get_f64(is, x)) throw StateFormatError("prompt state: truncated payload");
  return s;
}

}  // namespace hepco::model
