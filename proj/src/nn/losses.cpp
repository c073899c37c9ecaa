#include "pd/nn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pd::nn {

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b, const char* who) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(who) + ": length mismatch (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                                ")");
  }
  if (a.empty()) throw std::invalid_argument(std::string(who) + ": empty action vector");
}

void require_tau(double tau, const char* who) {
  if (!(tau > 0.0)) throw std::invalid_argument(std::string(who) + ": tau must be positive");
}

// log sum_b exp(x_b), stabilized by the maximum.
double log_sum_exp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - m);
  return m + std::log(sum);
}

}  // namespace

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

ProbVector softmax_temperature(std::span<const double> q, double tau) {
  require_tau(tau, "softmax_temperature");
  if (q.empty()) throw std::invalid_argument("softmax_temperature: empty vector");
  const double m = *std::max_element(q.begin(), q.end()) / tau;
  std::vector<double> p(q.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    p[i] = std::exp(q[i] / tau - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return ProbVector(std::move(p));
}

LossResult loss_mse(std::span<const double> teacher_q, std::span<const double> student_q) {
  require_same_length(teacher_q, student_q, "loss_mse");
  LossResult r;
  r.grad.resize(student_q.size());
  for (std::size_t i = 0; i < student_q.size(); ++i) {
    const double d = student_q[i] - teacher_q[i];
    r.value += d * d;
    r.grad[i] = 2.0 * d;
  }
  return r;
}

LossResult loss_nll(std::span<const double> student_q, std::size_t best_action) {
  if (best_action >= student_q.size()) {
    throw std::out_of_range("loss_nll: best_action " + std::to_string(best_action) +
                            " out of range for " + std::to_string(student_q.size()) + " actions");
  }
  const double lse = log_sum_exp(student_q);
  LossResult r;
  r.value = lse - student_q[best_action];
  r.grad.resize(student_q.size());
  for (std::size_t i = 0; i < student_q.size(); ++i) r.grad[i] = std::exp(student_q[i] - lse);
  r.grad[best_action] -= 1.0;
  return r;
}

LossResult loss_kl_target(std::span<const double> target, std::span<const double> student_q) {
  require_same_length(target, student_q, "loss_kl");
  const double lse = log_sum_exp(student_q);
  LossResult r;
  r.grad.resize(student_q.size());
  for (std::size_t i = 0; i < student_q.size(); ++i) {
    const double log_s = student_q[i] - lse;
    // 0 ln 0 = 0; sharpened targets underflow to exact zeros.
    if (target[i] > 0.0) r.value += target[i] * (std::log(target[i]) - log_s);
    r.grad[i] = std::exp(log_s) - target[i];
  }
  // Rounding can leave a value of order -1e-17 at matched distributions.
  r.value = std::max(r.value, 0.0);
  return r;
}

LossResult loss_kl(std::span<const double> teacher_q, std::span<const double> student_q,
                   double tau) {
  require_same_length(teacher_q, student_q, "loss_kl");
  require_tau(tau, "loss_kl");
  const ProbVector p = softmax_temperature(teacher_q, tau);
  return loss_kl_target(p.values(), student_q);
}

}  // namespace pd::nn
