#include "misleader/config.hpp"

#include <fstream>

namespace misleader {

using nlohmann::json;

namespace {

[[noreturn]] void missing(const std::string& field) {
  throw SchemaError("config: missing required field '" + field + "'");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw SchemaError(std::string("config: field '") + key + "' has the wrong type");
  }
}

template <typename T>
T get_req(const json& j, const char* key) {
  if (!j.contains(key)) missing(key);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw SchemaError(std::string("config: field '") + key + "' has the wrong type");
  }
}

AugmentationPolicy augmentation_from_json(const json& j) {
  AugmentationPolicy p;
  const std::string mode = get_or<std::string>(j, "mode", "identity");
  if (mode == "identity")
    p.mode = AugmentationPolicy::Mode::identity;
  else if (mode == "image")
    p.mode = AugmentationPolicy::Mode::image;
  else if (mode == "vector")
    p.mode = AugmentationPolicy::Mode::vector;
  else
    throw SchemaError("config: augmentation.mode must be identity|image|vector");
  p.crop_scale_lo = get_or(j, "crop_scale_lo", p.crop_scale_lo);
  p.crop_scale_hi = get_or(j, "crop_scale_hi", p.crop_scale_hi);
  p.flip_prob = get_or(j, "flip_prob", p.flip_prob);
  p.rotate_deg = get_or(j, "rotate_deg", p.rotate_deg);
  p.translate_frac = get_or(j, "translate_frac", p.translate_frac);
  p.jitter_strength = get_or(j, "jitter_strength", p.jitter_strength);
  p.grayscale_prob = get_or(j, "grayscale_prob", p.grayscale_prob);
  p.vec_rotate_deg = get_or(j, "vec_rotate_deg", p.vec_rotate_deg);
  p.vec_noise_std = get_or(j, "vec_noise_std", p.vec_noise_std);
  p.noise_relative_to_data_std =
      get_or(j, "noise_relative_to_data_std", p.noise_relative_to_data_std);
  p.vec_scale_lo = get_or(j, "vec_scale_lo", p.vec_scale_lo);
  p.vec_scale_hi = get_or(j, "vec_scale_hi", p.vec_scale_hi);
  p.axis_flip_prob = get_or(j, "axis_flip_prob", p.axis_flip_prob);
  p.validate();
  return p;
}

DatasetBlock dataset_from_json(const json& j) {
  DatasetBlock d;
  d.kind = get_req<std::string>(j, "kind");
  if (d.kind != "gaussian_mixture" && d.kind != "two_moons" && d.kind != "idx")
    throw SchemaError("config: dataset.kind must be gaussian_mixture|two_moons|idx");
  d.seed = get_or<std::uint64_t>(j, "seed", d.seed);
  d.n = get_or<std::size_t>(j, "n", d.n);
  d.classes = get_or<int>(j, "classes", d.classes);
  d.dim = get_or<std::size_t>(j, "dim", d.dim);
  d.separation = get_or(j, "separation", d.separation);
  d.noise_std = get_or(j, "noise_std", d.noise_std);
  if (d.kind == "idx") {
    d.images_path = get_req<std::string>(j, "images");
    d.labels_path = get_req<std::string>(j, "labels");
  }
  d.train_fraction = get_or(j, "train_fraction", d.train_fraction);
  d.split_seed = get_or<std::uint64_t>(j, "split_seed", d.split_seed);
  return d;
}

DefenseConfig defense_config_from_json(const json& j, const DefenseConfig& base) {
  DefenseConfig c = base;
  c.lambda = get_or(j, "lambda", c.lambda);
  c.alpha = get_or(j, "alpha", c.alpha);
  c.temperature = get_or(j, "temperature", c.temperature);
  c.eta_d = get_or(j, "eta_d", c.eta_d);
  c.eta_s = get_or(j, "eta_s", c.eta_s);
  c.epochs = get_or<std::size_t>(j, "epochs", c.epochs);
  c.batch = get_or<std::size_t>(j, "batch", c.batch);
  c.a_iter = get_or<std::size_t>(j, "a_iter", c.a_iter);
  c.momentum = get_or(j, "momentum", c.momentum);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.refresh_augmentation = get_or(j, "refresh_augmentation", c.refresh_augmentation);
  if (j.contains("augmentation")) c.augmentation = augmentation_from_json(j.at("augmentation"));
  return c;
}

}  // namespace

ArchitectureSpec arch_from_json(const json& j) {
  ArchitectureSpec spec;
  spec.kind = arch_kind_from_string(get_req<std::string>(j, "kind"));
  spec.activation = activation_from_string(get_or<std::string>(j, "activation", "relu"));
  if (j.contains("layers"))
    spec.layer_sizes = j.at("layers").get<std::vector<std::size_t>>();
  if (j.contains("input")) spec.input_shape = j.at("input").get<std::vector<std::size_t>>();
  if (j.contains("output_dim")) spec.output_dim = j.at("output_dim").get<std::size_t>();
  return spec;
}

json arch_to_json(const ArchitectureSpec& spec) {
  json j;
  j["kind"] = to_string(spec.kind);
  j["activation"] = to_string(spec.activation);
  j["layers"] = spec.layer_sizes;
  j["input"] = spec.input_shape;
  j["output_dim"] = spec.output_dim;
  return j;
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  cfg.echo = j;
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
  cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir);

  if (!j.contains("dataset")) missing("dataset");
  cfg.dataset = dataset_from_json(j.at("dataset"));

  if (!j.contains("target")) missing("target");
  {
    const json& t = j.at("target");
    if (!t.contains("arch")) missing("target.arch");
    cfg.target.arch = arch_from_json(t.at("arch"));
    cfg.target.epochs = get_or<std::size_t>(t, "epochs", cfg.target.epochs);
    cfg.target.lr = get_or(t, "lr", cfg.target.lr);
    cfg.target.batch = get_or<std::size_t>(t, "batch", cfg.target.batch);
    cfg.target.momentum = get_or(t, "momentum", cfg.target.momentum);
    cfg.target.seed = get_or<std::uint64_t>(t, "seed", cfg.target.seed);
  }

  if (!j.contains("defense")) missing("defense");
  {
    const json& d = j.at("defense");
    cfg.defense.base = defense_config_from_json(d, DefenseConfig{});
    if (!d.contains("members") || d.at("members").empty()) missing("defense.members");
    for (const auto& mj : d.at("members")) {
      MemberBlock m;
      if (!mj.contains("defense")) missing("defense.members[].defense");
      m.defense = arch_from_json(mj.at("defense"));
      // the in-training attacker defaults to the member's own architecture
      m.attacker = mj.contains("attacker") ? arch_from_json(mj.at("attacker")) : m.defense;
      cfg.defense.members.push_back(std::move(m));
    }
  }

  for (const auto& aj : j.value("attacks", json::array())) {
    AttackBlock blk;
    const std::string kind = get_req<std::string>(aj, "kind");
    if (kind == "dbme")
      blk.config.kind = AttackConfig::Kind::dbme;
    else if (kind == "dfme")
      blk.config.kind = AttackConfig::Kind::dfme;
    else
      throw SchemaError("config: attacks[].kind must be dbme|dfme");
    blk.config.name = get_or<std::string>(aj, "name", kind);
    if (!aj.contains("clone")) missing("attacks[].clone");
    blk.config.clone_spec = arch_from_json(aj.at("clone"));
    blk.config.budget = get_or<std::size_t>(aj, "budget", blk.config.budget);
    blk.config.lr = get_or(aj, "lr", blk.config.lr);
    blk.config.momentum = get_or(aj, "momentum", blk.config.momentum);
    blk.config.epochs = get_or<std::size_t>(aj, "epochs", blk.config.epochs);
    blk.config.rounds = get_or<std::size_t>(aj, "rounds", blk.config.rounds);
    blk.config.batch = get_or<std::size_t>(aj, "batch", blk.config.batch);
    blk.config.seed = get_or<std::uint64_t>(aj, "seed", blk.config.seed);
    blk.config.latent_dim = get_or<std::size_t>(aj, "latent_dim", blk.config.latent_dim);
    if (aj.contains("generator_hidden"))
      blk.config.generator_hidden = aj.at("generator_hidden").get<std::vector<std::size_t>>();
    blk.config.generator_lr = get_or(aj, "generator_lr", blk.config.generator_lr);
    blk.config.gen_steps = get_or<std::size_t>(aj, "gen_steps", blk.config.gen_steps);
    blk.config.student_steps =
        get_or<std::size_t>(aj, "student_steps", blk.config.student_steps);
    blk.config.query_lo = get_or(aj, "query_lo", blk.config.query_lo);
    blk.config.query_hi = get_or(aj, "query_hi", blk.config.query_hi);

    const std::string mode = get_or<std::string>(aj, "mode", "soft");
    if (mode == "soft")
      blk.mode = OracleMode::soft;
    else if (mode == "hard")
      blk.mode = OracleMode::hard;
    else
      throw SchemaError("config: attacks[].mode must be soft|hard");

    if (blk.config.kind == AttackConfig::Kind::dbme) {
      if (!aj.contains("surrogate")) missing("attacks[].surrogate");
      const json& sj = aj.at("surrogate");
      if (sj.is_string() || (sj.contains("kind") && sj.at("kind") == "train"))
        blk.surrogate_is_train = true;
      else
        blk.surrogate = dataset_from_json(sj);
    }
    cfg.attacks.push_back(std::move(blk));
  }

  cfg.randp_budget = get_or(j, "randp_budget", cfg.randp_budget);
  if (cfg.randp_budget < 0.0) throw SchemaError("config: randp_budget must be >= 0");

  if (j.contains("theory")) {
    const json& t = j.at("theory");
    cfg.theory.enabled = get_or(t, "enabled", cfg.theory.enabled);
    cfg.theory.delta = get_or(t, "delta", cfg.theory.delta);
    cfg.theory.draws = get_or<std::size_t>(t, "draws", cfg.theory.draws);
    cfg.theory.minimax_n = get_or<std::size_t>(t, "minimax_n", cfg.theory.minimax_n);
    cfg.theory.w1_points = get_or<std::size_t>(t, "w1_points", cfg.theory.w1_points);
    cfg.theory.power_iters = get_or<std::size_t>(t, "power_iters", cfg.theory.power_iters);
    cfg.theory.attacker_grid = get_or<std::size_t>(t, "attacker_grid", cfg.theory.attacker_grid);
  }
  cfg.attacks_vs_members = get_or(j, "attacks_vs_members", cfg.attacks_vs_members);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidArgument("config: cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw SchemaError("config: " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  const std::string dump = config.echo.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : dump) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace misleader
