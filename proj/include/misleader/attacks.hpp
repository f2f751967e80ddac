#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "misleader/dataset.hpp"
#include "misleader/ensemble.hpp"
#include "misleader/nn.hpp"

namespace misleader {

/// In-place perturbation of soft probability rows (e.g. the RandP rule).
using OutputWrapper = std::function<void(Tensor& prob_rows)>;

enum class OracleMode { soft, hard };

/// Budgeted black-box view of a deployed model. Attack code interacts with
/// the target exclusively through this interface. The differentiable query
/// is a deliberately stronger oracle for the data-free attacker: it hands
/// back a vector-Jacobian product of the (unwrapped) soft output w.r.t. the
/// query batch at no extra budget. A wrapped or hard-mode oracle still
/// answers plain queries only.
class QueryOracle {
 public:
  using Backend = std::function<Tensor(const Tensor&)>;  // batch -> soft prob rows
  using VjpBackend =
      std::function<Tensor(const Tensor&, const Tensor&)>;  // (batch, upstream) -> d/dbatch

  QueryOracle(Backend backend, VjpBackend vjp_backend, OracleMode mode, std::size_t budget,
              OutputWrapper wrapper);

  /// Answers one batch; rows consumed against the budget. Throws
  /// BudgetExceeded (before consuming anything) if the batch would pass it.
  Tensor query(const Tensor& batch);

  struct DifferentiableReply {
    Tensor probs;  // unwrapped soft rows
    std::function<Tensor(const Tensor& upstream)> vjp;
  };
  /// Soft-mode only. Budget accounting identical to query().
  DifferentiableReply query_soft_grad(const Tensor& batch);

  OracleMode mode() const { return mode_; }
  std::size_t budget() const { return budget_; }
  std::size_t used() const { return used_; }
  std::size_t budget_left() const { return budget_ - used_; }
  bool has_vjp() const { return static_cast<bool>(vjp_backend_); }

 private:
  void charge(std::size_t rows);
  Backend backend_;
  VjpBackend vjp_backend_;
  OracleMode mode_;
  std::size_t budget_;
  std::size_t used_ = 0;
  OutputWrapper wrapper_;
};

QueryOracle make_oracle(const Model& target, OracleMode mode, std::size_t budget,
                        OutputWrapper wrapper = {});
QueryOracle make_oracle(const Ensemble& target, OracleMode mode, std::size_t budget,
                        OutputWrapper wrapper = {});

/// Random output perturbation: each row y is replaced by a simplex point
/// within L1 distance budget_l1 of y (direction uniform in the simplex
/// tangent space, magnitude uniform in [0, budget_l1], Euclidean simplex
/// projection, rescaled if projection stretched the step).
OutputWrapper randp_wrapper(double budget_l1, std::uint64_t seed);

struct AttackConfig {
  enum class Kind { dbme, dfme };
  Kind kind = Kind::dbme;
  std::string name;
  ArchitectureSpec clone_spec;
  std::size_t budget = 10000;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 30;  // dbme: passes over the collected query set
  std::size_t rounds = 20;  // dfme: alternations
  std::size_t batch = 64;
  std::uint64_t seed = 0;

  // dfme
  std::size_t latent_dim = 16;
  std::vector<std::size_t> generator_hidden = {64, 64};
  double generator_lr = 0.02;
  std::size_t gen_steps = 1;
  std::size_t student_steps = 5;
  double query_lo = -4.0;  // box the generator output is mapped onto
  double query_hi = 4.0;

  void validate() const;
};

struct RoundRecord {
  std::size_t round = 0;
  double attacker_objective = 0.0;  // dbme: mean epoch loss; dfme: student loss
  double generator_objective = 0.0;
  std::size_t queries_used = 0;  // cumulative
};

struct AttackResult {
  Model clone;
  std::optional<Model> generator;
  std::size_t queries_used = 0;
  double clone_test_accuracy = 0.0;
  double agreement = 0.0;
  std::vector<RoundRecord> log;
  std::vector<std::string> warnings;
};

/// Label the surrogate under the oracle's budget (full batches only), then
/// fit the clone to the answers: KL to soft rows, cross-entropy to argmax
/// labels in hard mode. A budget smaller than one batch trains nothing.
AttackResult run_dbme(QueryOracle& oracle, const Dataset& surrogate,
                      const AttackConfig& config);

/// Alternating generator / student rounds on synthesized queries g(z),
/// z ~ N(0, I). The generator ascends the oracle/student KL disagreement;
/// the student descends it. Stops before any round the budget cannot cover.
AttackResult run_dfme(QueryOracle& oracle, const AttackConfig& config);

/// Fills clone_test_accuracy and agreement (JS utility vs the target, K=ln2)
/// on the held-out set.
void evaluate_attack(AttackResult& result, const Model& f_t, const Dataset& test);

}  // namespace misleader
