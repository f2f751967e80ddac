#include "misleader/defense.hpp"

#include <chrono>
#include <numeric>
#include <tuple>

namespace misleader {

void DefenseConfig::validate() const {
  if (lambda < 0.0) throw InvalidArgument("defense: lambda must be >= 0");
  if (alpha < 0.0 || alpha > 1.0) throw InvalidArgument("defense: alpha must be in [0,1]");
  if (temperature <= 0.0) throw InvalidArgument("defense: temperature must be > 0");
  if (eta_d <= 0.0 || eta_s <= 0.0) throw InvalidArgument("defense: learning rates must be > 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw InvalidArgument("defense: momentum must be in [0,1)");
  if (batch == 0) throw InvalidArgument("defense: batch must be >= 1");
  augmentation.validate();
}

std::uint64_t defense_stream(std::uint64_t seed, const char* label) {
  return derive_seed(seed, label);
}

std::pair<Model, OptimizerState> update_attacker(Model f_s, const Model& d,
                                                 const Tensor& aug_batch,
                                                 std::size_t steps, OptimizerState state) {
  if (steps == 0) throw InvalidArgument("update_attacker: steps must be >= 1");
  const Tensor defense_probs = forward_probs(d, aug_batch);  // d frozen: plain values
  for (std::size_t s = 0; s < steps; ++s) {
    ParamVars pv = make_param_vars(f_s);
    const ag::Var logits = forward_graph(f_s, pv, aug_batch);
    const ag::Var loss = attacker_loss_graph_clone(logits, defense_probs);
    ParamMap grads = gradients(pv, loss);
    clip_global_norm(grads, kGradClipNorm);
    sgd_step_inplace(f_s, grads, state);
  }
  return {std::move(f_s), std::move(state)};
}

std::tuple<Model, OptimizerState, StepRecord> defense_outer_step(
    Model d, const Model& f_t, const Model& f_s, const Tensor& clean_batch,
    const std::vector<int>& labels, const Tensor& aug_batch, const DefenseConfig& config,
    OptimizerState state) {
  const Tensor target_logits = forward(f_t, clean_batch);  // teacher frozen

  ParamVars pv = make_param_vars(d);
  const ag::Var d_logits = forward_graph(d, pv, clean_batch);
  const ag::Var defense_loss =
      kd_loss_graph(d_logits, target_logits, labels, config.alpha, config.temperature);

  StepRecord rec;
  rec.defense_loss = defense_loss.scalar();

  ag::Var total = defense_loss;
  if (config.lambda > 0.0) {
    const Tensor clone_probs = forward_probs(f_s, aug_batch);  // clone frozen
    const ag::Var d_aug_logits = forward_graph(d.spec, pv, ag::constant(aug_batch));
    const ag::Var att = attacker_loss_graph_defense(d_aug_logits, clone_probs);
    rec.attacker_loss = att.scalar();
    total = ag::sub(defense_loss, ag::scale(att, config.lambda));
  } else {
    // value only, for the log; keeps the tape identical to plain distillation
    rec.attacker_loss = attacker_loss(forward(f_s, aug_batch), forward_probs(d, aug_batch));
  }
  rec.total_loss = rec.defense_loss - config.lambda * rec.attacker_loss;

  ParamMap grads = gradients(pv, total);
  clip_global_norm(grads, kGradClipNorm);
  sgd_step_inplace(d, grads, state);
  return {std::move(d), std::move(state), rec};
}

std::pair<Model, TrainingLog> train_defense(const Dataset& train_set, const Model& f_t,
                                            const ArchitectureSpec& defense_spec,
                                            const ArchitectureSpec& attacker_spec,
                                            const DefenseConfig& config) {
  config.validate();
  if (train_set.size() == 0) throw InvalidArgument("train_defense: empty dataset");
  train_set.validate();
  if (defense_spec.output_dim != std::size_t(train_set.num_classes) ||
      attacker_spec.output_dim != std::size_t(train_set.num_classes))
    throw InvalidArgument("train_defense: output_dim must match num_classes");

  Model d = build(defense_spec, defense_stream(config.seed, "defense-init"));
  Model f_s = build(attacker_spec, defense_stream(config.seed, "attacker-init"));

  const std::uint64_t aug_seed = defense_stream(config.seed, "augmentation");
  Dataset augmented = augment_dataset(train_set, config.augmentation, aug_seed, 1);

  const std::size_t n = train_set.size();
  const std::size_t batch = std::min(config.batch, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;

  OptimizerState opt_d =
      make_optimizer(d, config.eta_d, config.momentum, config.epochs * steps_per_epoch);
  OptimizerState opt_s = make_optimizer(
      f_s, config.eta_s, config.momentum,
      config.epochs * steps_per_epoch * std::max<std::size_t>(config.a_iter, 1));

  Rng clean_rng(defense_stream(config.seed, "clean-shuffle"));
  Rng aug_rng(defense_stream(config.seed, "aug-shuffle"));

  TrainingLog log;
  std::vector<std::size_t> clean_idx(n), aug_idx(n);
  std::iota(clean_idx.begin(), clean_idx.end(), std::size_t{0});
  std::iota(aug_idx.begin(), aug_idx.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (config.refresh_augmentation)
      augmented = augment_dataset(train_set, config.augmentation,
                                  derive_seed(aug_seed, epoch), 1);
    clean_rng.shuffle(clean_idx);
    aug_rng.shuffle(aug_idx);

    EpochRecord er;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(start + batch, n);
      const std::vector<std::size_t> cb(clean_idx.begin() + start, clean_idx.begin() + stop);
      const std::vector<std::size_t> ab(aug_idx.begin() + start, aug_idx.begin() + stop);
      auto [x, y] = train_set.gather(cb);
      auto [xa, ya] = augmented.gather(ab);

      if (config.a_iter > 0)
        std::tie(f_s, opt_s) = update_attacker(std::move(f_s), d, xa, config.a_iter,
                                               std::move(opt_s));

      auto [d2, opt2, rec] = defense_outer_step(std::move(d), f_t, f_s, x, y, xa, config,
                                                std::move(opt_d));
      d = std::move(d2);
      opt_d = std::move(opt2);
      er.mean_defense_loss += rec.defense_loss;
      er.mean_attacker_loss += rec.attacker_loss;
      er.mean_total_loss += rec.total_loss;
    }
    er.mean_defense_loss /= double(steps_per_epoch);
    er.mean_attacker_loss /= double(steps_per_epoch);
    er.mean_total_loss /= double(steps_per_epoch);
    er.clean_accuracy = accuracy(d, train_set);
    er.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(er);
  }
  return {std::move(d), std::move(log)};
}

}  // namespace misleader
