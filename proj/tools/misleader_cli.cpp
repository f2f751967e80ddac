// Command-line front end: config-driven training, attacks, theory checks and
// report rendering. Every run is a pure function of its config file; there is
// no environment-variable configuration.

#include <iostream>

#include "CLI11.hpp"
#include "misleader/experiment.hpp"
#include "misleader/report.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string output_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
  auto* c = cmd->add_option("--config", opts.config_path, "experiment config (JSON)");
  if (config_required) c->required();
  cmd->add_option("--output", opts.output_dir, "output directory (overrides config)");
  cmd->add_option("--seed", opts.seed, "global seed (overrides config)")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
  cmd->add_flag("--quiet", opts.quiet, "suppress progress lines");
}

misleader::ExperimentConfig load(const CommonOpts& opts) {
  misleader::ExperimentConfig cfg = misleader::load_config(opts.config_path);
  if (!opts.output_dir.empty()) {
    cfg.output_dir = opts.output_dir;
    cfg.echo["output_dir"] = opts.output_dir;
  }
  if (opts.seed_set) {
    cfg.seed = opts.seed;
    cfg.echo["seed"] = opts.seed;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"misleader: model-extraction defense lab"};
  app.require_subcommand(1);

  CommonOpts train_target_opts, train_defense_opts, attack_opts, evaluate_opts, theory_opts,
      run_opts;
  std::vector<std::string> results_paths;

  add_common(app.add_subcommand("train-target", "train and checkpoint the target model"),
             train_target_opts);
  add_common(app.add_subcommand("train-defense", "train and checkpoint the defense ensemble"),
             train_defense_opts);
  add_common(app.add_subcommand("attack", "run the configured extraction attacks"),
             attack_opts);
  add_common(app.add_subcommand("evaluate", "serving-utility metrics for all parties"),
             evaluate_opts);
  add_common(app.add_subcommand("theory", "generalization / shift bound checks"),
             theory_opts);
  add_common(app.add_subcommand("run", "full pipeline, writes results.json"), run_opts);
  auto* report_cmd = app.add_subcommand("report", "text tables from results files");
  report_cmd->add_option("results", results_paths, "results.json paths")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("train-target")) {
      misleader::Pipeline p(load(train_target_opts), train_target_opts.quiet);
      const auto& f_t = p.target();
      std::cout << "target " << f_t.spec.id() << " test accuracy "
                << misleader::accuracy(f_t, p.test_set()) << "\n";
    } else if (app.got_subcommand("train-defense")) {
      misleader::Pipeline p(load(train_defense_opts), train_defense_opts.quiet);
      const auto& ens = p.ensemble();
      std::cout << "ensemble of " << ens.members.size() << " test accuracy "
                << misleader::ensemble_accuracy(ens, p.test_set()) << "\n";
    } else if (app.got_subcommand("attack")) {
      misleader::Pipeline p(load(attack_opts), attack_opts.quiet);
      std::cout << p.run_attacks().dump(2) << "\n";
    } else if (app.got_subcommand("evaluate")) {
      misleader::Pipeline p(load(evaluate_opts), evaluate_opts.quiet);
      std::cout << p.evaluate_utility().dump(2) << "\n";
    } else if (app.got_subcommand("theory")) {
      misleader::Pipeline p(load(theory_opts), theory_opts.quiet);
      std::cout << p.run_theory().dump(2) << "\n";
    } else if (app.got_subcommand("run")) {
      misleader::Pipeline p(load(run_opts), run_opts.quiet);
      const auto results = p.run_all();
      std::cout << misleader::render_report({results}, {"run"}) << "\n";
    } else if (app.got_subcommand("report")) {
      std::vector<nlohmann::json> results;
      for (const auto& path : results_paths)
        results.push_back(misleader::load_results_file(path));
      std::cout << misleader::render_report(results, results_paths) << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
