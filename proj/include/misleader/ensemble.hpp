#pragma once

#include <vector>

#include "misleader/defense.hpp"
#include "misleader/nn.hpp"

namespace misleader {

/// Heterogeneous defense ensemble served by soft voting. Members must share
/// input shape and output width; distinct architectures are enforced unless
/// allow_duplicate_architectures is set.
struct Ensemble {
  std::vector<Model> members;
  std::vector<DefenseConfig> member_configs;
  bool allow_duplicate_architectures = false;

  void validate() const;
  std::size_t output_dim() const { return members.at(0).spec.output_dim; }
};

struct MemberSpec {
  ArchitectureSpec defense;
  ArchitectureSpec attacker;
};

/// One train_defense run per member with seed = base seed + member index.
/// Members are fully independent; logs returned in member order.
Ensemble train_ensemble(const Dataset& train_set, const Model& f_t,
                        const std::vector<MemberSpec>& specs,
                        const DefenseConfig& base_config,
                        std::vector<TrainingLog>* logs = nullptr);

/// Unweighted soft voting: the arithmetic mean over members of softmax_1.
Tensor ensemble_predict(const Ensemble& ensemble, const Tensor& batch);

/// argmax of ensemble_predict; ties break toward the smallest class index.
std::vector<int> ensemble_predict_label(const Ensemble& ensemble, const Tensor& batch);

double ensemble_accuracy(const Ensemble& ensemble, const Dataset& data);

}  // namespace misleader
