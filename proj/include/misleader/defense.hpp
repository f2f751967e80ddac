#pragma once

#include <utility>
#include <vector>

#include "misleader/augmentation.hpp"
#include "misleader/core.hpp"
#include "misleader/dataset.hpp"
#include "misleader/losses.hpp"
#include "misleader/nn.hpp"

namespace misleader {

/// Hyperparameters of the alternating defense/attacker optimization.
/// lambda = 0 disables the adversarial term and reduces the procedure to
/// plain distillation (used by the degeneracy checks); a_iter = 0 freezes
/// the in-training attacker.
struct DefenseConfig {
  double lambda = 0.01;
  double alpha = 0.5;
  double temperature = 4.0;
  double eta_d = 0.05;   // defense learning rate
  double eta_s = 0.05;   // attacker learning rate
  std::size_t epochs = 30;
  std::size_t batch = 64;
  std::size_t a_iter = 1;  // attacker steps per minibatch
  double momentum = 0.0;
  std::uint64_t seed = 0;
  AugmentationPolicy augmentation;
  bool refresh_augmentation = false;

  void validate() const;
};

/// Gradients are clipped to this global L2 norm in every training path.
constexpr double kGradClipNorm = 5.0;

struct EpochRecord {
  double mean_defense_loss = 0.0;
  double mean_attacker_loss = 0.0;
  double mean_total_loss = 0.0;
  double clean_accuracy = 0.0;
  double wall_seconds = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
};

struct StepRecord {
  double defense_loss = 0.0;
  double attacker_loss = 0.0;
  double total_loss = 0.0;
};

/// RNG streams derived from config.seed. Part of the contract so that
/// reference loops can reproduce exactly the draws they share.
/// labels: "defense-init", "attacker-init", "augmentation",
/// "clean-shuffle", "aug-shuffle".
std::uint64_t defense_stream(std::uint64_t seed, const char* label);

/// `steps` SGD steps of the clone on KL(defense output || clone softmax)
/// over one fixed augmented batch; the defense is frozen.
std::pair<Model, OptimizerState> update_attacker(Model f_s, const Model& d,
                                                 const Tensor& aug_batch,
                                                 std::size_t steps, OptimizerState state);

/// One defense step on kd_loss(d(x), f_t(x), y) - lambda * KL(d(x~) || f_s(x~)).
/// Gradient reaches d through both terms; f_t and f_s stay frozen.
std::tuple<Model, OptimizerState, StepRecord> defense_outer_step(
    Model d, const Model& f_t, const Model& f_s, const Tensor& clean_batch,
    const std::vector<int>& labels, const Tensor& aug_batch, const DefenseConfig& config,
    OptimizerState state);

/// Full alternating optimization: build defense and attacker, fix the
/// augmented set, then per minibatch run a_iter attacker steps followed by
/// one defense step. Deterministic for a fixed config.
std::pair<Model, TrainingLog> train_defense(const Dataset& train_set, const Model& f_t,
                                            const ArchitectureSpec& defense_spec,
                                            const ArchitectureSpec& attacker_spec,
                                            const DefenseConfig& config);

}  // namespace misleader
