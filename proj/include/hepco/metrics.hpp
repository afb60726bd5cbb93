#pragma once

// Class-incremental evaluation and communication accounting.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hepco/client.hpp"
#include "hepco/prompt_model.hpp"

namespace hepco::metrics {

/// rows[t][j]: accuracy on task j after finishing task t (j ≤ t).
struct AccuracyMatrix {
  std::vector<std::vector<double>> rows;

  std::size_t tasks() const { return rows.size(); }
  void push_row(std::vector<double> r) {
    if (r.size() != rows.size() + 1) throw std::invalid_argument("accuracy row length must equal task count");
    rows.push_back(std::move(r));
  }
};

/// Top-1 accuracy with argmax over the first `active` classes. No task
/// identity is used.
inline double accuracy(const model::PromptState& s, const model::Attention& attn,
                       std::span<const client::Example> test, std::size_t active) {
  if (test.empty()) throw std::invalid_argument("accuracy: empty test set");
  std::size_t hit = 0;
  for (const auto& e : test) {
    const auto logits = model::prompted_logits(*e.sample, s, attn);
    const auto end = logits.begin() + static_cast<std::ptrdiff_t>(active);
    const auto pred = static_cast<std::size_t>(std::max_element(logits.begin(), end) - logits.begin());
    hit += pred == e.target;
  }
  return static_cast<double>(hit) / static_cast<double>(test.size());
}

/// One accuracy-matrix row: every task's test set through task t, scored
/// over all classes seen so far.
inline std::vector<double> evaluate(const model::PromptState& s, const model::Attention& attn,
                                    const std::vector<std::vector<client::Example>>& test_sets, std::size_t active) {
  std::vector<double> row;
  row.reserve(test_sets.size());
  for (const auto& t : test_sets) row.push_back(accuracy(s, attn, t, active));
  return row;
}

/// A_N: mean of the final row.
inline double average_accuracy(const AccuracyMatrix& m) {
  if (m.rows.empty()) throw std::invalid_argument("average_accuracy: empty matrix");
  const auto& last = m.rows.back();
  double s = 0.0;
  for (double a : last) s += a;
  return s / static_cast<double>(last.size());
}

/// F_N = (1/(N−1))·Σ_{j<N} [max_{t≥j} a[t][j] − a[N][j]]; 0 for one task.
inline double forgetting(const AccuracyMatrix& m) {
  const std::size_t n = m.tasks();
  if (n == 0) throw std::invalid_argument("forgetting: empty matrix");
  if (n == 1) return 0.0;
  double s = 0.0;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    double best = m.rows[j][j];
    for (std::size_t t = j; t < n; ++t) best = std::max(best, m.rows[t][j]);
    s += best - m.rows[n - 1][j];
  }
  return s / static_cast<double>(n - 1);
}

// ---------------------------------------------------------------------------
// Parameter accounting.

inline double communication_ratio(std::size_t payload_params, std::size_t reference_params) {
  if (reference_params == 0) throw std::invalid_argument("communication_ratio: reference count is zero");
  return 100.0 * static_cast<double>(payload_params) / static_cast<double>(reference_params);
}

/// Payload when every prefixed layer owns its own key/prompt pool: keys and
/// prompts are counted once per layer, the classifier once.
inline std::size_t layered_payload_parameters(const model::PromptShape& s, std::size_t prefixed_layers) {
  const std::size_t pool = s.pool * s.dim + s.pool * s.length * s.dim;
  return prefixed_layers * pool + s.dim * s.n_classes + s.n_classes;
}

inline constexpr std::size_t kVitB16EncoderParams = 85'800'000;

/// Encoder plus a D×n_classes linear head.
inline std::size_t reference_model_parameters(std::size_t encoder_params, std::size_t dim, std::size_t n_classes) {
  return encoder_params + dim * n_classes + n_classes;
}

// ---------------------------------------------------------------------------
// CSV rows: task, round, A_so_far, then one accuracy per task seen.

inline std::string csv_header(std::size_t n_tasks) {
  std::ostringstream os;
  os << "task,round,A_so_far";
  for (std::size_t j = 0; j < n_tasks; ++j) os << ",acc_task" << j + 1;
  return os.str();
}

inline std::string csv_row(std::size_t task, std::size_t round, std::span<const double> accs, std::size_t n_tasks) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed;
  double mean = 0.0;
  for (double a : accs) mean += a;
  mean /= static_cast<double>(accs.size());
  os << task + 1 << ',' << round + 1 << ',' << mean;
  for (std::size_t j = 0; j < n_tasks; ++j) {
    os << ',';
    if (j < accs.size()) os << accs[j];
  }
  return os.str();
}

}  // namespace hepco::metrics
