#pragma once

#include <vector>

#include "misleader/autograd.hpp"
#include "misleader/core.hpp"

namespace misleader {

/// Uniform upper bound K on a loss, used to normalize agreement into [0,1].
struct LossBound {
  double K;
  explicit LossBound(double k) : K(k) {
    if (!(k > 0.0) || !std::isfinite(k))
      throw InvalidArgument("LossBound: K must be finite and positive");
  }
};

enum class UtilityLoss { kl, js };

constexpr double kLn2 = 0.6931471805599453094172321;

// ---------------------------------------------------------------------------
// Plain-value forms. Used for metrics, oracles and serving; the tape forms
// below are what training differentiates, and the two agree to rounding.
// ---------------------------------------------------------------------------

/// Tempered softmax of one logit vector, max-subtracted for stability.
std::vector<double> softmax_t(const std::vector<double>& logits, double temperature);

/// Batch mean of -log softmax_1(logits)[label].
double cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// sum_i p_i log(p_i / q_i) with 0 log 0 := 0 and q clamped below at 1e-12.
/// Inputs must lie on the simplex within 1e-6.
double kl_div(const std::vector<double>& p, const std::vector<double>& q);

/// Jensen-Shannon divergence; bounded by ln 2.
double js_div(const std::vector<double>& p, const std::vector<double>& q);

/// (1-alpha) * CE(student, labels)
///   + alpha * T^2 * KL(softmax(teacher/T) || softmax(student/T)),
/// batch averaged. The teacher side is a constant.
double kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
               const std::vector<int>& labels, double alpha, double temperature);

/// Batch mean of KL(defense_probs || softmax_1(clone_logits)).
double attacker_loss(const Tensor& clone_logits, const Tensor& defense_probs);

/// defense_loss - lambda * attacker_loss.
double total_defense_loss(double defense_loss, double attacker_loss, double lambda);

/// 1 - mean loss / K over paired probability rows, clamped into [0,1] only
/// against <= 1e-9 floating error. Throws BoundViolation when any per-sample
/// loss exceeds K by more than 1e-9.
double agreement_utility(const Tensor& outputs_1, const Tensor& outputs_2,
                         const LossBound& bound, UtilityLoss loss);

// ---------------------------------------------------------------------------
// Tape forms. Constant sides are passed as plain tensors, so no gradient can
// flow into a frozen party by construction.
// ---------------------------------------------------------------------------

ag::Var kd_loss_graph(const ag::Var& student_logits, const Tensor& teacher_logits,
                      const std::vector<int>& labels, double alpha, double temperature);

/// KL(defense || clone), gradient into the clone side.
ag::Var attacker_loss_graph_clone(const ag::Var& clone_logits, const Tensor& defense_probs);

/// KL(softmax_1(defense_logits) || clone_probs), gradient into the defense side.
ag::Var attacker_loss_graph_defense(const ag::Var& defense_logits, const Tensor& clone_probs);

}  // namespace misleader
