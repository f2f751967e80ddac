#pragma once

#include <string>
#include <utility>
#include <vector>

#include "misleader/core.hpp"
#include "misleader/losses.hpp"
#include "misleader/nn.hpp"

namespace misleader {

/// m candidate functions evaluated on n fixed sample points.
struct FunctionTable {
  Tensor values;  // m x n
  std::vector<std::string> descriptions;

  std::size_t num_functions() const { return values.rows(); }
  std::size_t num_points() const { return values.row_size(); }
  void validate() const;
};

struct RademacherEstimate {
  double estimate = 0.0;
  double stderr_ = 0.0;
};

/// E_sigma sup_g (1/n) sum_i sigma_i g(x_i). Monte-Carlo mode draws
/// antithetic sign-vector pairs (each draw evaluates sigma and -sigma,
/// unbiased, lower variance); exact mode enumerates all 2^n sign vectors
/// and reports zero standard error. Exact mode requires n <= 20.
RademacherEstimate rademacher_estimate(const FunctionTable& table, std::size_t draws,
                                       std::uint64_t seed, bool exact);

/// Exact 1-Wasserstein distance between equal-size empirical measures with
/// uniform weights and Euclidean ground metric: the minimum over perfect
/// matchings of the mean pair distance, solved by shortest augmenting path
/// assignment. The returned value is recomputed from the optimal matching
/// in row order, so equal instances yield identical doubles.
double wasserstein1(const Tensor& P, const Tensor& Q);

/// The matching itself (row i of P -> pairing[i] of Q).
std::vector<int> wasserstein1_matching(const Tensor& P, const Tensor& Q);

/// Mean over the sample of L(f_t(x), d(x)) - lambda * L(f_s(x), d(x)),
/// losses on softmax outputs, each term checked against the bound.
double emp_risk(const Model& f_t, const Model& f_s, const Model& d, const Tensor& sample,
                double lambda, UtilityLoss loss, const LossBound& bound);

/// Same combination on a disjoint reference sample standing in for the
/// population expectation.
double pop_risk(const Model& f_t, const Model& f_s, const Model& d,
                const Tensor& reference_sample, double lambda, UtilityLoss loss,
                const LossBound& bound);

struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

struct GeneralizationCheck {
  double emp_minimax = 0.0;
  double pop_minimax = 0.0;
  RademacherEstimate rademacher;
  BoundCheck bound;
  std::size_t n = 0;
  std::size_t n_reference = 0;
};

/// Uniform deviation bound over finite model grids:
/// |R_pop - R_emp| <= 2 B Rad_n + B sqrt(log(1/delta) / (2 n)).
/// The suprema over the model classes are realized over the given grids.
GeneralizationCheck minimax_gap_check(const std::vector<Model>& defense_grid,
                                      const std::vector<Model>& attacker_grid,
                                      const Model& f_t, const Tensor& train_sample,
                                      const Tensor& reference_sample, double lambda,
                                      UtilityLoss loss, const LossBound& bound, double delta,
                                      std::size_t draws, std::uint64_t seed);

/// Builds the m_d * m_f row table of x -> L(f_t(x), d(x)) - lambda L(f_s(x), d(x)).
FunctionTable build_loss_table(const std::vector<Model>& defense_grid,
                               const std::vector<Model>& attacker_grid, const Model& f_t,
                               const Tensor& sample, double lambda, UtilityLoss loss);

/// Rows of x -> L(f_s(x), d(x)) over all (d, f_s) pairs.
FunctionTable build_attacker_loss_table(const std::vector<Model>& defense_grid,
                                        const std::vector<Model>& attacker_grid,
                                        const Tensor& sample, UtilityLoss loss);

struct SubadditivityCheck {
  double joint = 0.0;
  double parts = 0.0;  // rad(D) + lambda * rad(Fs)
  double pooled_stderr = 0.0;
  bool holds = false;
};

/// Rad(joint) <= Rad(D) + lambda Rad(Fs) over matched sample points. All
/// three estimates share one sign-vector stream; exact mode must always
/// hold, Monte-Carlo mode is checked within 3 pooled standard errors.
SubadditivityCheck subadditivity_check(const FunctionTable& table_d,
                                       const FunctionTable& table_fs,
                                       const FunctionTable& table_joint, double lambda,
                                       std::size_t draws, std::uint64_t seed, bool exact);

enum class ShiftLossKind { l2_probs };

struct DistributionShiftCheck {
  double mean_loss_p = 0.0;
  double mean_loss_pg = 0.0;
  double w1 = 0.0;
  double lipschitz_ft = 0.0;
  double lipschitz_fs = 0.0;
  double rho = 1.0;
  BoundCheck bound;
};

/// | E_P loss - E_Pg loss | <= 2 rho L W1(P, Pg) with
/// loss(x) = || softmax(f_t(x)) - softmax(f_s(x)) ||_2 (jointly 1-Lipschitz
/// in the probability outputs) and L the larger certified spectral-norm
/// product of the two models (softmax contributes a factor of 1).
DistributionShiftCheck df_gap_check(const Model& f_t, const Model& f_s,
                                    const Tensor& p_sample, const Tensor& pg_sample,
                                    ShiftLossKind loss_kind, std::size_t power_iters);

/// Everything the harness records about one theory run.
struct TheoryReport {
  GeneralizationCheck generalization;
  SubadditivityCheck subadditivity;
  DistributionShiftCheck shift;
  double loss_bound = kLn2;
  double delta = 0.05;
  std::size_t draws = 0;
};

}  // namespace misleader
