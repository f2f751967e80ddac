#pragma once

#include <optional>
#include <string>

#include "json.hpp"
#include "misleader/checkpoint.hpp"
#include "misleader/config.hpp"
#include "misleader/theory.hpp"

namespace misleader {

constexpr const char* kArtifactVersion = "0.1.0";

/// Materializes the dataset block (full set, before the held-out split).
Dataset build_dataset_block(const DatasetBlock& block);

/// Plain supervised training of the target: SGD with momentum and cosine
/// schedule on cross-entropy, gradients clipped like every other loop.
Model train_target(const Dataset& train, const TargetBlock& block);

/// Stage-wise experiment driver. Stages write their artifacts under
/// output_dir and are reused on re-entry when the config hash matches;
/// every model is evaluated through its checkpoint, so reruns and reused
/// runs see identical float32 parameters.
class Pipeline {
 public:
  Pipeline(ExperimentConfig config, bool quiet);

  const Dataset& train_set();
  const Dataset& test_set();
  const Model& target();        // load-or-train
  const Ensemble& ensemble();   // load-or-train, requires target

  nlohmann::json evaluate_utility();
  nlohmann::json run_attacks();
  nlohmann::json run_theory();

  /// Full pipeline; writes results.json under output_dir and returns it.
  nlohmann::json run_all();

  const ExperimentConfig& config() const { return config_; }
  std::string artifact_path(const std::string& name) const;

 private:
  void ensure_dataset();
  ArchitectureSpec resolved_arch(ArchitectureSpec spec) const;
  void log(const std::string& line) const;
  bool reusable(const std::string& path) const;
  void write_state_file() const;

  ExperimentConfig config_;
  bool quiet_;
  std::optional<Dataset> train_, test_;
  std::optional<Model> target_;
  std::optional<Ensemble> ensemble_;
  // clones handed from the attack stage to the theory stage (dfme preferred)
  std::optional<Model> theory_clone_;
  std::optional<Model> theory_generator_;
};

nlohmann::json theory_report_to_json(const TheoryReport& report);

}  // namespace misleader
