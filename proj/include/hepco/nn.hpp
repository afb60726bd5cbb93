#pragma once

// Dense numeric core: row-major matrices, loss primitives with their
// gradients, Adam, and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hepco::nn {

using Vec = std::vector<double>;

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  friend bool operator==(const Mat&, const Mat&) = default;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols) + ")");
  }
}

// ---------------------------------------------------------------------------
// Linear algebra helpers. Loop orders keep the innermost loop contiguous so
// the compiler can vectorize it.

inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw ShapeError("matmul: inner dimensions differ");
  Mat c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* ci = c.data.data() + i * c.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* bk = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

/// aᵀ·b without materializing the transpose.
inline Mat matmul_tn(const Mat& a, const Mat& b) {
  if (a.rows != b.rows) throw ShapeError("matmul_tn: row counts differ");
  Mat c(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* bk = b.data.data() + k * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* ci = c.data.data() + i * c.cols;
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

/// a·bᵀ
inline Mat matmul_nt(const Mat& a, const Mat& b) { return matmul(a, transpose(b)); }

/// Row vector times matrix: vᵀ·m.
inline Vec vecmat(std::span<const double> v, const Mat& m) {
  if (v.size() != m.rows) throw ShapeError("vecmat: length mismatch");
  Vec out(m.cols, 0.0);
  for (std::size_t k = 0; k < m.rows; ++k) {
    const double vk = v[k];
    if (vk == 0.0) continue;
    const double* mk = m.data.data() + k * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += vk * mk[j];
  }
  return out;
}

/// Matrix times column vector: m·v.
inline Vec matvec(const Mat& m, std::span<const double> v) {
  if (v.size() != m.cols) throw ShapeError("matvec: length mismatch");
  Vec out(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* mi = m.data.data() + i * m.cols;
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += mi[j] * v[j];
    out[i] = s;
  }
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// y += alpha·x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

/// m += alpha·outer(u, v)
inline void add_outer(Mat& m, double alpha, std::span<const double> u, std::span<const double> v) {
  if (u.size() != m.rows || v.size() != m.cols) throw ShapeError("add_outer: shape mismatch");
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double ui = alpha * u[i];
    if (ui == 0.0) continue;
    double* mi = m.data.data() + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) mi[j] += ui * v[j];
  }
}

// ---------------------------------------------------------------------------
// Probabilistic primitives.

/// {max, log Σ exp(v − max)}, the second part via log1p.
inline std::pair<double, double> log_sum_exp_parts(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("log_sum_exp: empty vector");
  const auto top = std::max_element(v.begin(), v.end());
  double rest = 0.0;
  for (auto it = v.begin(); it != v.end(); ++it)
    if (it != top) rest += std::exp(*it - *top);
  return {*top, std::log1p(rest)};
}

inline double log_sum_exp(std::span<const double> v) {
  const auto [mx, tail] = log_sum_exp_parts(v);
  return mx + tail;
}

inline Vec softmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  Vec out(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    s += out[i];
  }
  for (double& x : out) x /= s;
  return out;
}

inline Vec log_softmax(std::span<const double> v) {
  const double lse = log_sum_exp(v);
  Vec out(v.begin(), v.end());
  for (double& x : out) x -= lse;
  return out;
}

struct LossGrad {
  double loss = 0.0;
  Vec grad;
};

/// Cross-entropy over the logit window [first, active); logits outside the
/// window are treated as masked to -inf and receive zero gradient.
inline LossGrad cross_entropy(std::span<const double> logits, std::size_t label, std::size_t active,
                              std::size_t first) {
  if (active == 0 || active > logits.size())
    throw std::out_of_range("cross_entropy: active class count out of range");
  if (first >= active) throw std::out_of_range("cross_entropy: empty logit window");
  if (label < first || label >= active) throw std::out_of_range("cross_entropy: label out of range");
  const auto live = logits.subspan(first, active - first);
  const auto [mx, tail] = log_sum_exp_parts(live);
  const double lse = mx + tail;
  LossGrad out;
  out.loss = (mx - live[label - first]) + tail;
  out.grad.assign(logits.size(), 0.0);
  for (std::size_t i = 0; i < live.size(); ++i) out.grad[first + i] = std::exp(live[i] - lse);
  out.grad[label] -= 1.0;
  return out;
}

inline LossGrad cross_entropy(std::span<const double> logits, std::size_t label, std::size_t active) {
  return cross_entropy(logits, label, active, 0);
}

inline LossGrad cross_entropy(std::span<const double> logits, std::size_t label) {
  return cross_entropy(logits, label, logits.size());
}

struct KlGrad {
  double value = 0.0;
  Vec grad_p;  // w.r.t. p_logits
  Vec grad_q;  // w.r.t. q_logits
};

/// KL(softmax(p_logits) ‖ softmax(q_logits)), evaluated in log space, over
/// the first `active` entries of both vectors.
inline KlGrad kl_divergence(std::span<const double> p_logits, std::span<const double> q_logits,
                            std::size_t active) {
  if (p_logits.size() != q_logits.size())
    throw ShapeError("kl_divergence: length mismatch");
  if (active == 0 || active > p_logits.size())
    throw std::out_of_range("kl_divergence: active class count out of range");
  const Vec lp = log_softmax(p_logits.first(active));
  const Vec lq = log_softmax(q_logits.first(active));
  KlGrad out;
  out.grad_p.assign(p_logits.size(), 0.0);
  out.grad_q.assign(p_logits.size(), 0.0);
  double kl = 0.0;
  for (std::size_t i = 0; i < active; ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  out.value = kl;
  for (std::size_t i = 0; i < active; ++i) {
    const double p = std::exp(lp[i]);
    const double q = std::exp(lq[i]);
    out.grad_p[i] = p * ((lp[i] - lq[i]) - kl);
    out.grad_q[i] = q - p;
  }
  return out;
}

inline KlGrad kl_divergence(std::span<const double> p_logits, std::span<const double> q_logits) {
  return kl_divergence(p_logits, q_logits, p_logits.size());
}

inline double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("mse: shape mismatch");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

inline double mse(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "mse");
  return mse(std::span<const double>(a.data), std::span<const double>(b.data));
}

/// d mse(a, b) / d a. The gradient w.r.t. b is its negation.
inline Mat mse_grad(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "mse_grad");
  Mat g(a.rows, a.cols);
  if (a.size() == 0) return g;
  const double scale = 2.0 / static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g.data[i] = scale * (a.data[i] - b.data[i]);
  return g;
}

/// Zero-norm inputs yield 0.
inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ShapeError("cosine_similarity: length mismatch");
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return dot(u, v) / (nu * nv);
}

/// d cos(u, v) / d u = v/(|u||v|) − cos·u/|u|²; zero when either norm vanishes.
inline Vec cosine_grad_first(std::span<const double> u, std::span<const double> v) {
  Vec g(u.size(), 0.0);
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) return g;
  const double c = dot(u, v) / (nu * nv);
  for (std::size_t i = 0; i < u.size(); ++i) g[i] = v[i] / (nu * nv) - c * u[i] / (nu * nu);
  return g;
}

inline double leaky_relu(double x, double slope = 0.01) { return x > 0.0 ? x : slope * x; }
inline double leaky_relu_grad(double x, double slope = 0.01) { return x > 0.0 ? 1.0 : slope; }

// ---------------------------------------------------------------------------
// Optimizer.

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Vec> m;
  std::vector<Vec> v;

  explicit AdamState(double learning_rate = 1e-3) : lr(learning_rate) {}
};

using ParamList = std::vector<std::span<double>>;
using GradList = std::vector<std::span<const double>>;

inline GradList as_const(const ParamList& p) { return {p.begin(), p.end()}; }

/// Bias-corrected Adam. Accumulators are allocated on the first call and
/// must keep the same shapes afterwards.
inline void adam_step(const ParamList& params, const GradList& grads, AdamState& st) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.size(), 0.0);
      st.v.emplace_back(p.size(), 0.0);
    }
  }
  if (st.m.size() != params.size()) throw ShapeError("adam_step: state/parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size() || st.m[i].size() != params[i].size())
      throw ShapeError("adam_step: tensor " + std::to_string(i) + " shape mismatch");
  }
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(st.beta1, t);
  const double c2 = 1.0 - std::pow(st.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    auto g = grads[i];
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = st.beta1 * m[j] + (1.0 - st.beta1) * g[j];
      v[j] = st.beta2 * v[j] + (1.0 - st.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Gradient checking.

struct FiniteDiffOptions {
  double h = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded sample of this many.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  /// Floor on the relative-error denominator so that coordinates whose true
  /// gradient is ~0 are judged on absolute error.
  double floor = 1e-6;
};

/// Central differences of `loss` around the current parameter values versus
/// `analytic`. Parameters are restored before returning. Returns the max
/// relative error |a − n| / max(|a|, |n|, floor).
inline double finite_diff_check(const std::function<double()>& loss, const ParamList& params,
                                const GradList& analytic, const FiniteDiffOptions& opt = {}) {
  if (params.size() != analytic.size()) throw ShapeError("finite_diff_check: list size mismatch");
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != analytic[i].size())
      throw ShapeError("finite_diff_check: tensor shape mismatch");
    for (std::size_t j = 0; j < params[i].size(); ++j) coords.emplace_back(i, j);
  }
  if (opt.max_coords != 0 && coords.size() > opt.max_coords) {
    std::mt19937_64 rng(opt.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opt.max_coords);
  }
  double worst = 0.0;
  for (auto [i, j] : coords) {
    double& x = params[i][j];
    const double saved = x;
    x = saved + opt.h;
    const double up = loss();
    x = saved - opt.h;
    const double down = loss();
    x = saved;
    const double numeric = (up - down) / (2.0 * opt.h);
    const double a = analytic[i][j];
    const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Gaussian fill, used for initialization.
template <class Rng>
void fill_normal(std::span<double> out, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : out) x = dist(rng);
}

}  // namespace hepco::nn
