#include "misleader/losses.hpp"

#include <cmath>

namespace misleader {

namespace {

void check_simplex(const std::vector<double>& p, const char* who) {
  double sum = 0.0;
  for (double v : p) {
    if (v < -1e-6) throw InvalidArgument(std::string(who) + ": negative probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw InvalidArgument(std::string(who) + ": probabilities sum to " + std::to_string(sum));
}

std::vector<double> tensor_row(const Tensor& t, std::size_t i) {
  return std::vector<double>(t.row(i), t.row(i) + t.row_size());
}

}  // namespace

std::vector<double> softmax_t(const std::vector<double>& logits, double temperature) {
  if (temperature <= 0.0) throw InvalidArgument("softmax_t: temperature must be > 0");
  if (logits.empty()) throw InvalidArgument("softmax_t: empty input");
  std::vector<double> out(logits.size());
  double mx = logits[0] / temperature;
  for (double l : logits) mx = std::max(mx, l / temperature);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t b = logits.rows(), k = logits.row_size();
  if (labels.size() != b) throw ShapeMismatch("cross_entropy: label count mismatch");
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] < 0 || std::size_t(labels[r]) >= k)
      throw InvalidArgument("cross_entropy: label out of range");
    const double* l = logits.row(r);
    double mx = l[0];
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, l[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(l[j] - mx);
    total += std::log(z) + mx - l[labels[r]];
  }
  return total / double(b);
}

double kl_div(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ShapeMismatch("kl_div: length mismatch");
  check_simplex(p, "kl_div p");
  check_simplex(q, "kl_div q");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    total += p[i] * std::log(p[i] / std::max(q[i], ag::kKlClamp));
  }
  return total;
}

double js_div(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ShapeMismatch("js_div: length mismatch");
  check_simplex(p, "js_div p");
  check_simplex(q, "js_div q");
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) total += 0.5 * p[i] * std::log(p[i] / std::max(m[i], ag::kKlClamp));
    if (q[i] > 0.0) total += 0.5 * q[i] * std::log(q[i] / std::max(m[i], ag::kKlClamp));
  }
  return total;
}

double kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
               const std::vector<int>& labels, double alpha, double temperature) {
  if (alpha < 0.0 || alpha > 1.0) throw InvalidArgument("kd_loss: alpha must be in [0,1]");
  if (temperature <= 0.0) throw InvalidArgument("kd_loss: temperature must be > 0");
  if (!student_logits.same_shape(teacher_logits))
    throw ShapeMismatch("kd_loss: logit shapes differ");
  const double ce = cross_entropy(student_logits, labels);
  double kl = 0.0;
  for (std::size_t r = 0; r < student_logits.rows(); ++r) {
    const auto pt = softmax_t(tensor_row(teacher_logits, r), temperature);
    const auto ps = softmax_t(tensor_row(student_logits, r), temperature);
    kl += kl_div(pt, ps);
  }
  kl /= double(student_logits.rows());
  return (1.0 - alpha) * ce + alpha * temperature * temperature * kl;
}

double attacker_loss(const Tensor& clone_logits, const Tensor& defense_probs) {
  if (!clone_logits.same_shape(defense_probs))
    throw ShapeMismatch("attacker_loss: shapes differ");
  double total = 0.0;
  for (std::size_t r = 0; r < clone_logits.rows(); ++r) {
    const auto q = softmax_t(tensor_row(clone_logits, r), 1.0);
    total += kl_div(tensor_row(defense_probs, r), q);
  }
  return total / double(clone_logits.rows());
}

double total_defense_loss(double defense_loss, double attacker_loss, double lambda) {
  if (lambda <= 0.0) throw InvalidArgument("total_defense_loss: lambda must be > 0");
  return defense_loss - lambda * attacker_loss;
}

double agreement_utility(const Tensor& outputs_1, const Tensor& outputs_2,
                         const LossBound& bound, UtilityLoss loss) {
  if (!outputs_1.same_shape(outputs_2))
    throw ShapeMismatch("agreement_utility: shapes differ");
  const std::size_t b = outputs_1.rows();
  if (b == 0) throw InvalidArgument("agreement_utility: empty batch");
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const auto p = tensor_row(outputs_1, r);
    const auto q = tensor_row(outputs_2, r);
    const double l = loss == UtilityLoss::kl ? kl_div(p, q) : js_div(p, q);
    if (l > bound.K + 1e-9)
      throw BoundViolation("agreement_utility: sample loss " + std::to_string(l) +
                           " exceeds bound " + std::to_string(bound.K));
    total += l;
  }
  double u = 1.0 - total / double(b) / bound.K;
  if (u < 0.0 && u > -1e-9) u = 0.0;
  if (u > 1.0 && u < 1.0 + 1e-9) u = 1.0;
  return u;
}

// ---------------------------------------------------------------------------
// tape forms
// ---------------------------------------------------------------------------

ag::Var kd_loss_graph(const ag::Var& student_logits, const Tensor& teacher_logits,
                      const std::vector<int>& labels, double alpha, double temperature) {
  if (alpha < 0.0 || alpha > 1.0) throw InvalidArgument("kd_loss: alpha must be in [0,1]");
  if (temperature <= 0.0) throw InvalidArgument("kd_loss: temperature must be > 0");
  Tensor teacher_soft = teacher_logits;
  ag::kern::softmax_rows_inplace(teacher_soft, temperature);
  const ag::Var student_soft = ag::softmax_rows(student_logits, temperature);
  const ag::Var kl = ag::kl_rows_mean(ag::constant(std::move(teacher_soft)), student_soft);
  const ag::Var ce = ag::cross_entropy_mean(student_logits, labels);
  return ag::add(ag::scale(ce, 1.0 - alpha), ag::scale(kl, alpha * temperature * temperature));
}

ag::Var attacker_loss_graph_clone(const ag::Var& clone_logits, const Tensor& defense_probs) {
  return ag::kl_rows_mean(ag::constant(defense_probs), ag::softmax_rows(clone_logits, 1.0));
}

ag::Var attacker_loss_graph_defense(const ag::Var& defense_logits, const Tensor& clone_probs) {
  return ag::kl_rows_mean(ag::softmax_rows(defense_logits, 1.0), ag::constant(clone_probs));
}

}  // namespace misleader
