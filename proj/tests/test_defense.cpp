#include <numeric>

#include "doctest.h"
#include "misleader/defense.hpp"

using namespace misleader;

namespace {

ArchitectureSpec mlp_spec(std::vector<std::size_t> layers, std::size_t in_dim) {
  ArchitectureSpec s;
  s.kind = ArchKind::mlp;
  s.layer_sizes = std::move(layers);
  s.input_shape = {in_dim};
  s.output_dim = s.layer_sizes.back();
  return s;
}

struct Toy {
  Dataset train = gen_gaussian_mixture(7, 240, 4, 2, 4.0, 0.5);
  ArchitectureSpec arch = mlp_spec({16, 4}, 2);
  Model target;
  Toy() {
    // a quickly distilled stand-in target: train on labels directly
    target = build(arch, 99);
    OptimizerState opt = make_optimizer(target, 0.1, 0.9, 200);
    Rng rng(1);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 0; epoch < 25; ++epoch) {
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += 60) {
        const std::vector<std::size_t> idx(order.begin() + start,
                                           order.begin() + std::min(start + 60, order.size()));
        auto [x, y] = train.gather(idx);
        ParamVars pv = make_param_vars(target);
        ParamMap grads = gradients(pv, ag::cross_entropy_mean(forward_graph(target, pv, x), y));
        clip_global_norm(grads, kGradClipNorm);
        sgd_step_inplace(target, grads, opt);
      }
    }
  }
  DefenseConfig config() const {
    DefenseConfig c;
    c.lambda = 0.05;
    c.alpha = 0.5;
    c.temperature = 4.0;
    c.eta_d = 0.05;
    c.eta_s = 0.05;
    c.epochs = 4;
    c.batch = 60;
    c.a_iter = 1;
    c.seed = 12345;
    c.augmentation = AugmentationPolicy::vector_default();
    return c;
  }
};

}  // namespace

TEST_CASE("update_attacker freezes the defense and zero lr is a no-op") {
  Toy toy;
  const Model d = build(toy.arch, 5);
  Model f_s = build(toy.arch, 6);
  const Tensor batch = toy.train.gather({0, 1, 2, 3}).first;

  // zero step size leaves the clone bit-identical
  OptimizerState frozen = make_optimizer(f_s, 0.0, 0.0, 0);
  auto [same, st] = update_attacker(f_s, d, batch, 3, frozen);
  for (const auto& [name, t] : f_s.params) CHECK(t.data == same.params.at(name).data);

  const ParamMap d_before = d.params;
  OptimizerState opt = make_optimizer(f_s, 1e-3, 0.0, 10);
  auto [moved, st2] = update_attacker(f_s, d, batch, 1, opt);
  for (const auto& [name, t] : d.params) CHECK(t.data == d_before.at(name).data);

  CHECK_THROWS_AS(update_attacker(f_s, d, batch, 0, opt), InvalidArgument);
}

TEST_CASE("one small attacker step decreases the attacker loss") {
  Toy toy;
  const Model d = build(toy.arch, 5);
  Model f_s = build(toy.arch, 6);
  const Tensor batch = toy.train.gather({0, 1, 2, 3, 4, 5, 6, 7}).first;
  const Tensor d_probs = forward_probs(d, batch);
  const double before = attacker_loss(forward(f_s, batch), d_probs);
  OptimizerState opt = make_optimizer(f_s, 1e-3, 0.0, 0);
  auto [after, st] = update_attacker(std::move(f_s), d, batch, 1, opt);
  const double after_loss = attacker_loss(forward(after, batch), d_probs);
  CHECK(after_loss < before);
}

TEST_CASE("defense_outer_step freezes both other parties and logs consistently") {
  Toy toy;
  Model d = build(toy.arch, 5);
  const Model f_s = build(toy.arch, 6);
  auto [x, y] = toy.train.gather({0, 1, 2, 3, 4, 5});
  const Tensor xa = toy.train.gather({6, 7, 8, 9, 10, 11}).first;
  const DefenseConfig cfg = toy.config();

  const ParamMap ft_before = toy.target.params;
  const ParamMap fs_before = f_s.params;
  OptimizerState opt = make_optimizer(d, cfg.eta_d, 0.0, 10);
  auto [d2, opt2, rec] = defense_outer_step(d, toy.target, f_s, x, y, xa, cfg, opt);

  for (const auto& [name, t] : toy.target.params) CHECK(t.data == ft_before.at(name).data);
  for (const auto& [name, t] : f_s.params) CHECK(t.data == fs_before.at(name).data);
  CHECK(rec.total_loss == rec.defense_loss - cfg.lambda * rec.attacker_loss);
  // the step must have moved the defense
  bool moved = false;
  for (const auto& [name, t] : d.params)
    if (t.data != d2.params.at(name).data) moved = true;
  CHECK(moved);
}

TEST_CASE("lambda zero reduces the outer step to plain distillation") {
  Toy toy;
  Model d = build(toy.arch, 5);
  const Model f_s = build(toy.arch, 6);
  auto [x, y] = toy.train.gather({0, 1, 2, 3, 4, 5});
  const Tensor xa = toy.train.gather({6, 7, 8, 9, 10, 11}).first;
  DefenseConfig cfg = toy.config();
  cfg.lambda = 0.0;

  OptimizerState opt_a = make_optimizer(d, cfg.eta_d, 0.0, 10);
  auto [stepped, opt2, rec] = defense_outer_step(d, toy.target, f_s, x, y, xa, cfg, opt_a);

  // reference: one sgd step on the kd loss alone
  Model ref = d;
  ParamVars pv = make_param_vars(ref);
  const ag::Var loss = kd_loss_graph(forward_graph(ref, pv, x), forward(toy.target, x), y,
                                     cfg.alpha, cfg.temperature);
  ParamMap grads = gradients(pv, loss);
  clip_global_norm(grads, kGradClipNorm);
  OptimizerState opt_b = make_optimizer(ref, cfg.eta_d, 0.0, 10);
  sgd_step_inplace(ref, grads, opt_b);

  for (const auto& [name, t] : stepped.params) CHECK(t.data == ref.params.at(name).data);
}

TEST_CASE("train_defense with zero epochs returns the initialization") {
  Toy toy;
  DefenseConfig cfg = toy.config();
  cfg.epochs = 0;
  auto [d, log] = train_defense(toy.train, toy.target, toy.arch, toy.arch, cfg);
  const Model init = build(toy.arch, defense_stream(cfg.seed, "defense-init"));
  for (const auto& [name, t] : init.params) CHECK(t.data == d.params.at(name).data);
  CHECK(log.epochs.empty());
}

TEST_CASE("train_defense is deterministic and logs every epoch") {
  Toy toy;
  const DefenseConfig cfg = toy.config();
  auto [d1, log1] = train_defense(toy.train, toy.target, toy.arch, toy.arch, cfg);
  auto [d2, log2] = train_defense(toy.train, toy.target, toy.arch, toy.arch, cfg);
  for (const auto& [name, t] : d1.params) CHECK(t.data == d2.params.at(name).data);
  CHECK(log1.epochs.size() == cfg.epochs);
  for (std::size_t e = 0; e < log1.epochs.size(); ++e) {
    CHECK(log1.epochs[e].mean_defense_loss ==
          doctest::Approx(log2.epochs[e].mean_defense_loss).epsilon(1e-15));
    CHECK(log1.epochs[e].mean_total_loss ==
          doctest::Approx(log1.epochs[e].mean_defense_loss -
                          cfg.lambda * log1.epochs[e].mean_attacker_loss)
              .epsilon(1e-12));
  }
}

TEST_CASE("epoch-mean distillation loss trends down at lambda zero") {
  Toy toy;
  DefenseConfig cfg = toy.config();
  cfg.lambda = 0.0;
  cfg.epochs = 10;
  auto [d, log] = train_defense(toy.train, toy.target, toy.arch, toy.arch, cfg);
  CHECK(log.epochs.back().mean_defense_loss < log.epochs.front().mean_defense_loss);
}

TEST_CASE("refresh_augmentation changes the trajectory, fixed set does not") {
  Toy toy;
  DefenseConfig cfg = toy.config();
  cfg.epochs = 2;
  auto [fixed1, l1] = train_defense(toy.train, toy.target, toy.arch, toy.arch, cfg);
  cfg.refresh_augmentation = true;
  auto [fresh, l2] = train_defense(toy.train, toy.target, toy.arch, toy.arch, cfg);
  bool differs = false;
  for (const auto& [name, t] : fixed1.params)
    if (t.data != fresh.params.at(name).data) differs = true;
  CHECK(differs);
}

TEST_CASE("config validation rejects out-of-range fields") {
  Toy toy;
  DefenseConfig cfg = toy.config();
  cfg.alpha = 1.5;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = toy.config();
  cfg.eta_d = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = toy.config();
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = toy.config();
  cfg.lambda = -0.1;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}
