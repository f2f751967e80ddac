#include "misleader/experiment.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

namespace misleader {

using nlohmann::json;
namespace fs = std::filesystem;

Dataset build_dataset_block(const DatasetBlock& block) {
  if (block.kind == "gaussian_mixture")
    return gen_gaussian_mixture(block.seed, block.n, block.classes, block.dim,
                                block.separation, block.noise_std);
  if (block.kind == "two_moons") return gen_two_moons(block.seed, block.n, block.noise_std);
  if (block.kind == "idx") return load_idx(block.images_path, block.labels_path);
  throw SchemaError("dataset: unknown kind " + block.kind);
}

Model train_target(const Dataset& train, const TargetBlock& block) {
  train.validate();
  Model model = build(block.arch, derive_seed(block.seed, "target-init"));
  const std::size_t n = train.size();
  const std::size_t batch = std::min(block.batch, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  OptimizerState opt =
      make_optimizer(model, block.lr, block.momentum, block.epochs * steps_per_epoch);
  Rng shuffle_rng(derive_seed(block.seed, "target-shuffle"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < block.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(start + batch, n);
      const std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
      auto [x, y] = train.gather(idx);
      ParamVars pv = make_param_vars(model);
      const ag::Var loss = ag::cross_entropy_mean(forward_graph(model, pv, x), y);
      ParamMap grads = gradients(pv, loss);
      clip_global_norm(grads, kGradClipNorm);
      sgd_step_inplace(model, grads, opt);
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

Pipeline::Pipeline(ExperimentConfig config, bool quiet)
    : config_(std::move(config)), quiet_(quiet) {
  fs::create_directories(config_.output_dir);
  write_state_file();
}

void Pipeline::log(const std::string& line) const {
  if (!quiet_) std::cout << line << "\n";
}

std::string Pipeline::artifact_path(const std::string& name) const {
  return (fs::path(config_.output_dir) / name).string();
}

void Pipeline::write_state_file() const {
  const std::string path = artifact_path("config_hash.txt");
  const std::string want = std::to_string(config_hash(config_));
  std::ifstream in(path);
  std::string have;
  if (in) std::getline(in, have);
  if (have != want) {
    // stale artifacts from another config must not be reused
    for (const auto& entry : fs::directory_iterator(config_.output_dir)) {
      const auto ext = entry.path().extension();
      if (ext == ".ckpt" || entry.path().filename() == "ensemble_manifest.json")
        fs::remove(entry.path());
    }
    std::ofstream out(path, std::ios::trunc);
    out << want << "\n";
  }
}

bool Pipeline::reusable(const std::string& path) const { return fs::exists(path); }

void Pipeline::ensure_dataset() {
  if (train_) return;
  const Dataset full = build_dataset_block(config_.dataset);
  SplitSpec spec;
  spec.train_fraction = config_.dataset.train_fraction;
  spec.seed = config_.dataset.split_seed;
  auto [tr, te] = split(full, spec);
  train_ = std::move(tr);
  test_ = std::move(te);
  log("dataset: " + train_->name + " train=" + std::to_string(train_->size()) +
      " test=" + std::to_string(test_->size()));
}

const Dataset& Pipeline::train_set() {
  ensure_dataset();
  return *train_;
}

const Dataset& Pipeline::test_set() {
  ensure_dataset();
  return *test_;
}

ArchitectureSpec Pipeline::resolved_arch(ArchitectureSpec spec) const {
  const Dataset& tr = *train_;
  if (spec.input_shape.empty()) {
    if (tr.image_mode())
      spec.input_shape = {tr.inputs.shape[1], tr.inputs.shape[2], tr.inputs.shape[3]};
    else
      spec.input_shape = {tr.inputs.shape[1]};
  }
  if (spec.output_dim == 0) {
    spec.output_dim = std::size_t(tr.num_classes);
    if (spec.kind == ArchKind::cnn_small && spec.layer_sizes.empty())
      spec.layer_sizes = {spec.output_dim};
    else
      spec.layer_sizes.push_back(spec.output_dim);
  }
  spec.validate();
  return spec;
}

const Model& Pipeline::target() {
  if (target_) return *target_;
  ensure_dataset();
  const std::string path = artifact_path("target.ckpt");
  if (reusable(path)) {
    log("target: reusing " + path);
    target_ = load_checkpoint(path);
    return *target_;
  }
  TargetBlock block = config_.target;
  block.arch = resolved_arch(block.arch);
  log("target: training " + block.arch.id());
  const Model trained = train_target(*train_, block);
  save_checkpoint(trained, path);
  target_ = load_checkpoint(path);  // evaluate at checkpoint precision
  log("target: test accuracy " + std::to_string(accuracy(*target_, *test_)));
  return *target_;
}

const Ensemble& Pipeline::ensemble() {
  if (ensemble_) return *ensemble_;
  const Model& f_t = target();
  const std::string prefix = artifact_path("ensemble");
  if (reusable(prefix + "_manifest.json")) {
    log("defense: reusing " + prefix + "_manifest.json");
    ensemble_ = load_ensemble(prefix);
    return *ensemble_;
  }
  std::vector<MemberSpec> specs;
  for (const auto& m : config_.defense.members) {
    MemberSpec ms;
    ms.defense = resolved_arch(m.defense);
    ms.attacker = resolved_arch(m.attacker);
    specs.push_back(std::move(ms));
  }
  log("defense: training " + std::to_string(specs.size()) + " members");
  const Ensemble trained = train_ensemble(*train_, f_t, specs, config_.defense.base);
  save_ensemble(trained, prefix);
  ensemble_ = load_ensemble(prefix);
  log("defense: ensemble test accuracy " +
      std::to_string(ensemble_accuracy(*ensemble_, *test_)));
  return *ensemble_;
}

json Pipeline::evaluate_utility() {
  const Model& f_t = target();
  const Ensemble& ens = ensemble();
  json out;
  out["target_train_accuracy"] = accuracy(f_t, *train_);
  out["target_test_accuracy"] = accuracy(f_t, *test_);
  out["members"] = json::array();
  for (const auto& m : ens.members) {
    json mj;
    mj["arch"] = m.spec.id();
    mj["test_accuracy"] = accuracy(m, *test_);
    out["members"].push_back(mj);
  }
  out["ensemble_test_accuracy"] = ensemble_accuracy(ens, *test_);

  // serving accuracy of the perturbed target (argmax of wrapped rows)
  {
    Tensor probs = forward_probs(f_t, test_->inputs);
    const auto wrapper =
        randp_wrapper(config_.randp_budget, derive_seed(config_.seed, "randp-utility"));
    wrapper(probs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probs.rows(); ++i)
      if (argmax_row(probs.row(i), probs.row_size()) == test_->labels[i]) ++correct;
    out["randp_test_accuracy"] = double(correct) / double(test_->size());
    out["randp_budget_l1"] = config_.randp_budget;
  }
  return out;
}

json Pipeline::run_attacks() {
  const Model& f_t = target();
  const Ensemble& ens = ensemble();
  json attacks = json::array();

  for (std::size_t ai = 0; ai < config_.attacks.size(); ++ai) {
    const AttackBlock& blk = config_.attacks[ai];
    AttackConfig cfg = blk.config;
    cfg.clone_spec = resolved_arch(cfg.clone_spec);

    std::optional<Dataset> surrogate;
    if (cfg.kind == AttackConfig::Kind::dbme)
      surrogate = blk.surrogate_is_train ? *train_ : build_dataset_block(*blk.surrogate);

    struct Condition {
      std::string name;
      std::function<QueryOracle()> oracle;
    };
    std::vector<Condition> conditions;
    conditions.push_back({"undefended", [&] {
                            return make_oracle(f_t, blk.mode, cfg.budget);
                          }});
    conditions.push_back({"randp", [&] {
                            return make_oracle(
                                f_t, blk.mode, cfg.budget,
                                randp_wrapper(config_.randp_budget,
                                              derive_seed(cfg.seed, "randp-wrapper")));
                          }});
    conditions.push_back({"misleader", [&] {
                            return make_oracle(ens, blk.mode, cfg.budget);
                          }});
    if (config_.attacks_vs_members) {
      for (std::size_t mi = 0; mi < ens.members.size(); ++mi)
        conditions.push_back({"member" + std::to_string(mi) + ":" + ens.members[mi].spec.id(),
                              [&, mi] {
                                return make_oracle(ens.members[mi], blk.mode, cfg.budget);
                              }});
    }

    json record;
    record["name"] = cfg.name;
    record["kind"] = cfg.kind == AttackConfig::Kind::dbme ? "dbme" : "dfme";
    record["mode"] = blk.mode == OracleMode::soft ? "soft" : "hard";
    record["budget"] = cfg.budget;
    record["clone_arch"] = cfg.clone_spec.id();
    record["conditions"] = json::object();

    for (const auto& cond : conditions) {
      const auto t0 = std::chrono::steady_clock::now();
      QueryOracle oracle = cond.oracle();
      AttackResult result = cfg.kind == AttackConfig::Kind::dbme
                                ? run_dbme(oracle, *surrogate, cfg)
                                : run_dfme(oracle, cfg);
      result.clone = quantize_to_checkpoint_precision(std::move(result.clone));
      evaluate_attack(result, f_t, *test_);

      json cj;
      cj["clone_test_accuracy"] = result.clone_test_accuracy;
      cj["agreement_js"] = result.agreement;
      cj["queries_used"] = result.queries_used;
      cj["warnings"] = result.warnings;
      cj["rounds_logged"] = result.log.size();
      cj["timing"] = {{"seconds", std::chrono::duration<double>(
                                      std::chrono::steady_clock::now() - t0)
                                      .count()}};
      record["conditions"][cond.name] = cj;
      log("attack " + cfg.name + " vs " + cond.name + ": clone accuracy " +
          std::to_string(result.clone_test_accuracy));

      // hand a defended data-free clone (or any last clone) to the theory stage
      if (cond.name == "misleader") {
        const bool prefer = cfg.kind == AttackConfig::Kind::dfme || !theory_clone_;
        if (prefer) {
          theory_clone_ = result.clone;
          if (result.generator)
            theory_generator_ = quantize_to_checkpoint_precision(*result.generator);
          else
            theory_generator_.reset();
        }
      }
    }
    attacks.push_back(record);
  }
  return attacks;
}

json theory_report_to_json(const TheoryReport& report) {
  json j;
  j["loss_bound_B"] = report.loss_bound;
  j["delta"] = report.delta;
  j["draws"] = report.draws;
  j["generalization"] = {
      {"emp_minimax", report.generalization.emp_minimax},
      {"pop_minimax", report.generalization.pop_minimax},
      {"rademacher", report.generalization.rademacher.estimate},
      {"rademacher_stderr", report.generalization.rademacher.stderr_},
      {"n", report.generalization.n},
      {"n_reference", report.generalization.n_reference},
      {"lhs", report.generalization.bound.lhs},
      {"rhs", report.generalization.bound.rhs},
      {"holds", report.generalization.bound.holds},
  };
  j["subadditivity"] = {
      {"joint", report.subadditivity.joint},
      {"parts", report.subadditivity.parts},
      {"pooled_stderr", report.subadditivity.pooled_stderr},
      {"holds", report.subadditivity.holds},
  };
  j["distribution_shift"] = {
      {"mean_loss_p", report.shift.mean_loss_p},
      {"mean_loss_pg", report.shift.mean_loss_pg},
      {"w1", report.shift.w1},
      {"lipschitz_ft", report.shift.lipschitz_ft},
      {"lipschitz_fs", report.shift.lipschitz_fs},
      {"rho", report.shift.rho},
      {"lhs", report.shift.bound.lhs},
      {"rhs", report.shift.bound.rhs},
      {"holds", report.shift.bound.holds},
  };
  return j;
}

json Pipeline::run_theory() {
  if (!config_.theory.enabled) return json{{"skipped", "disabled in config"}};
  const Model& f_t = target();
  const Ensemble& ens = ensemble();
  const TheoryBlock& tb = config_.theory;
  const LossBound bound(kLn2);
  const double lambda = std::max(config_.defense.base.lambda, 1e-3);

  TheoryReport report;
  report.delta = tb.delta;
  report.draws = tb.draws;

  // samples: train prefix for the empirical side, held-out set as the
  // population stand-in
  const std::size_t n = std::min(tb.minimax_n, train_->size());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Tensor train_sample = train_->gather(idx).first;
  const Tensor reference_sample = test_->inputs;

  // grids: ensemble members as the defense class, fresh clone inits as the
  // attacker class
  const ArchitectureSpec clone_arch = config_.attacks.empty()
                                          ? ens.members.front().spec
                                          : resolved_arch(config_.attacks.front().config.clone_spec);
  std::vector<Model> attacker_grid;
  for (std::size_t i = 0; i < std::max<std::size_t>(tb.attacker_grid, 1); ++i)
    attacker_grid.push_back(quantize_to_checkpoint_precision(
        build(clone_arch, derive_seed(config_.seed, "theory-attacker", i))));
  if (theory_clone_) attacker_grid[0] = *theory_clone_;

  report.generalization =
      minimax_gap_check(ens.members, attacker_grid, f_t, train_sample, reference_sample,
                        lambda, UtilityLoss::js, bound, tb.delta, tb.draws,
                        derive_seed(config_.seed, "theory-rademacher"));

  // subadditivity over the same sample
  {
    const FunctionTable table_d =
        build_loss_table(ens.members, {f_t}, f_t, train_sample, 0.0, UtilityLoss::js);
    const FunctionTable table_fs =
        build_attacker_loss_table(ens.members, attacker_grid, train_sample, UtilityLoss::js);
    const FunctionTable table_joint =
        build_loss_table(ens.members, attacker_grid, f_t, train_sample, lambda, UtilityLoss::js);
    report.subadditivity =
        subadditivity_check(table_d, table_fs, table_joint, lambda, tb.draws,
                            derive_seed(config_.seed, "theory-subadd"), n <= 20);
  }

  // distribution shift: held-out points vs generator samples when a
  // data-free clone exists, augmented copies otherwise
  {
    const std::size_t m = std::min(tb.w1_points, test_->size());
    std::vector<std::size_t> widx(m);
    std::iota(widx.begin(), widx.end(), std::size_t{0});
    const Tensor p_sample = test_->gather(widx).first;

    Tensor pg_sample;
    if (theory_generator_) {
      Rng rng(derive_seed(config_.seed, "theory-latent"));
      const std::size_t latent = theory_generator_->spec.input_dim();
      Tensor z({m, latent});
      for (double& v : z.data) v = rng.normal();
      Tensor flat = forward(*theory_generator_, z);
      // generator output lives in tanh range; map onto the first attack's box
      double lo = -4.0, hi = 4.0;
      for (const auto& a : config_.attacks)
        if (a.config.kind == AttackConfig::Kind::dfme) {
          lo = a.config.query_lo;
          hi = a.config.query_hi;
          break;
        }
      for (double& v : flat.data) v = 0.5 * (lo + hi) + 0.5 * (hi - lo) * v;
      pg_sample = Tensor(p_sample.shape, std::move(flat.data));
    } else {
      Dataset p_ds;
      p_ds.inputs = p_sample;
      p_ds.labels.assign(m, 0);
      p_ds.num_classes = test_->num_classes;
      p_ds.name = "theory";
      AugmentationPolicy policy = config_.defense.base.augmentation;
      if (policy.mode == AugmentationPolicy::Mode::identity)
        policy = test_->image_mode() ? AugmentationPolicy::image_default()
                                     : AugmentationPolicy::vector_default();
      pg_sample =
          augment_dataset(p_ds, policy, derive_seed(config_.seed, "theory-aug"), 1).inputs;
    }

    const Model& f_s = theory_clone_ ? *theory_clone_ : attacker_grid.front();
    if (f_s.spec.kind != ArchKind::generator_mlp && f_t.spec.kind != ArchKind::generator_mlp)
      report.shift = df_gap_check(f_t, f_s, p_sample, pg_sample, ShiftLossKind::l2_probs,
                                  tb.power_iters);
  }

  const json out = theory_report_to_json(report);
  log("theory: generalization holds=" + std::to_string(report.generalization.bound.holds) +
      " subadditivity holds=" + std::to_string(report.subadditivity.holds) +
      " shift holds=" + std::to_string(report.shift.bound.holds));
  return out;
}

json Pipeline::run_all() {
  const auto t0 = std::chrono::steady_clock::now();
  json results;
  results["artifact_version"] = kArtifactVersion;
  results["config"] = config_.echo;
  results["config_hash"] = std::to_string(config_hash(config_));

  auto stage = [&](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      throw Error(std::string("stage '") + name + "' failed: " + e.what());
    }
  };

  stage("dataset", [&] {
    ensure_dataset();
    results["dataset"] = {{"name", train_->name},
                          {"train_size", train_->size()},
                          {"test_size", test_->size()},
                          {"num_classes", train_->num_classes}};
  });
  stage("target", [&] {
    const Model& f_t = target();
    results["target"] = {{"arch", f_t.spec.id()},
                         {"checkpoint", "target.ckpt"},
                         {"train_accuracy", accuracy(f_t, *train_)},
                         {"test_accuracy", accuracy(f_t, *test_)}};
  });
  stage("defense", [&] {
    ensemble();
    results["defense"] = evaluate_utility();
    results["defense"]["lambda"] = config_.defense.base.lambda;
    results["defense"]["alpha"] = config_.defense.base.alpha;
    results["defense"]["temperature"] = config_.defense.base.temperature;
    results["defense"]["checkpoint_manifest"] = "ensemble_manifest.json";
  });
  stage("attacks", [&] { results["attacks"] = run_attacks(); });
  stage("theory", [&] { results["theory"] = run_theory(); });

  results["timing"] = {
      {"total_seconds",
       std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};

  std::ofstream out(artifact_path("results.json"), std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write results.json under " + config_.output_dir);
  out << results.dump(2) << "\n";
  log("results: " + artifact_path("results.json"));
  return results;
}

}  // namespace misleader
