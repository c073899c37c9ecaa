#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace pd::nn {

// Per-action vector with a tag so Q-values and probabilities don't mix.
template <class Tag>
class ActionVector {
 public:
  ActionVector() = default;
  explicit ActionVector(std::vector<double> values) : values_(std::move(values)) {}
  ActionVector(std::initializer_list<double> values) : values_(values) {}

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& vec() const { return values_; }
  std::vector<double>& vec() { return values_; }

  friend bool operator==(const ActionVector&, const ActionVector&) = default;

 private:
  std::vector<double> values_;
};

struct QTag;
struct ProbTag;
// Unnormalized per-action values (expected discounted return).
using QVector = ActionVector<QTag>;
using ProbVector = ActionVector<ProbTag>;

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

// p_a = exp(q_a/tau - m) / sum_b exp(q_b/tau - m) with m = max(q)/tau.
ProbVector softmax_temperature(std::span<const double> q, double tau);

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;  // d(value)/d(student output)
};

// ||qT - qS||^2 with gradient 2 (qS - qT).
LossResult loss_mse(std::span<const double> teacher_q, std::span<const double> student_q);

// -log softmax(qS)[best_action]; gradient softmax(qS) - onehot(best_action).
LossResult loss_nll(std::span<const double> student_q, std::size_t best_action);

// sum_a p_a ln(p_a / s_a) with p = softmax(qT / tau) and s = softmax(qS).
// Only the teacher side is sharpened; the student softmax runs at
// temperature 1. Gradient s - p.
LossResult loss_kl(std::span<const double> teacher_q, std::span<const double> student_q,
                   double tau);

// Same loss against an already-sharpened teacher distribution.
LossResult loss_kl_target(std::span<const double> target, std::span<const double> student_q);

}  // namespace pd::nn
