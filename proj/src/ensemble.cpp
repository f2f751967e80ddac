#include "misleader/ensemble.hpp"

namespace misleader {

void Ensemble::validate() const {
  if (members.empty()) throw InvalidArgument("ensemble: no members");
  const auto& first = members.front().spec;
  for (const auto& m : members) {
    if (m.spec.input_shape != first.input_shape || m.spec.output_dim != first.output_dim)
      throw InvalidArgument("ensemble: members disagree on input shape or output width");
  }
  if (!allow_duplicate_architectures) {
    for (std::size_t i = 0; i < members.size(); ++i)
      for (std::size_t j = i + 1; j < members.size(); ++j)
        if (members[i].spec.id() == members[j].spec.id())
          throw InvalidArgument("ensemble: duplicate member architecture " +
                                members[i].spec.id());
  }
}

Ensemble train_ensemble(const Dataset& train_set, const Model& f_t,
                        const std::vector<MemberSpec>& specs,
                        const DefenseConfig& base_config,
                        std::vector<TrainingLog>* logs) {
  if (specs.empty()) throw InvalidArgument("train_ensemble: no member specs");
  Ensemble ens;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    DefenseConfig cfg = base_config;
    cfg.seed = base_config.seed + i;
    auto [model, log] = train_defense(train_set, f_t, specs[i].defense, specs[i].attacker, cfg);
    ens.members.push_back(std::move(model));
    ens.member_configs.push_back(cfg);
    if (logs) logs->push_back(std::move(log));
  }
  ens.validate();
  return ens;
}

Tensor ensemble_predict(const Ensemble& ensemble, const Tensor& batch) {
  ensemble.validate();
  Tensor out({batch.shape[0], ensemble.output_dim()});
  for (const auto& m : ensemble.members) {
    const Tensor probs = forward_probs(m, batch);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += probs.data[i];
  }
  const double inv = 1.0 / double(ensemble.members.size());
  for (double& v : out.data) v *= inv;
  return out;
}

std::vector<int> ensemble_predict_label(const Ensemble& ensemble, const Tensor& batch) {
  const Tensor probs = ensemble_predict(ensemble, batch);
  std::vector<int> labels(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i)
    labels[i] = argmax_row(probs.row(i), probs.row_size());
  return labels;
}

double ensemble_accuracy(const Ensemble& ensemble, const Dataset& data) {
  const auto pred = ensemble_predict_label(ensemble, data.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == data.labels[i]) ++correct;
  return data.size() ? double(correct) / double(data.size()) : 0.0;
}

}  // namespace misleader
