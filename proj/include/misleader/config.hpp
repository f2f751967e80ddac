#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "misleader/attacks.hpp"
#include "misleader/defense.hpp"
#include "misleader/ensemble.hpp"

namespace misleader {

/// Dataset block: synthetic generator parameters or IDX file paths, plus the
/// held-out split.
struct DatasetBlock {
  std::string kind;  // gaussian_mixture | two_moons | idx
  std::uint64_t seed = 7;
  std::size_t n = 2500;
  int classes = 4;
  std::size_t dim = 2;
  double separation = 4.0;
  double noise_std = 0.6;
  std::string images_path;
  std::string labels_path;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 7;
};

struct TargetBlock {
  ArchitectureSpec arch;  // input/output filled in from the dataset when omitted
  std::size_t epochs = 40;
  double lr = 0.05;
  std::size_t batch = 64;
  double momentum = 0.9;
  std::uint64_t seed = 11;
};

struct MemberBlock {
  ArchitectureSpec defense;
  ArchitectureSpec attacker;
};

struct DefenseBlock {
  DefenseConfig base;
  std::vector<MemberBlock> members;
};

struct AttackBlock {
  AttackConfig config;
  OracleMode mode = OracleMode::soft;
  // surrogate source for dbme: "train" reuses the defender's training set,
  // otherwise a dataset block of its own
  std::optional<DatasetBlock> surrogate;
  bool surrogate_is_train = false;
};

struct TheoryBlock {
  bool enabled = true;
  double delta = 0.05;
  std::size_t draws = 200;
  std::size_t minimax_n = 200;
  std::size_t w1_points = 64;
  std::size_t power_iters = 100;
  std::size_t attacker_grid = 3;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  DatasetBlock dataset;
  TargetBlock target;
  DefenseBlock defense;
  std::vector<AttackBlock> attacks;
  double randp_budget = 1.0;
  TheoryBlock theory;
  bool attacks_vs_members = false;

  nlohmann::json echo;  // the parsed source, re-emitted into results
};

/// Parses and validates; error messages name the offending field.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// Architecture from config JSON; input shape / output width may be filled
/// later from the dataset.
ArchitectureSpec arch_from_json(const nlohmann::json& j);
nlohmann::json arch_to_json(const ArchitectureSpec& spec);

/// Stable hash of the canonical config dump (checkpoint-reuse key).
std::uint64_t config_hash(const ExperimentConfig& config);

}  // namespace misleader
