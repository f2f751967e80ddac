#include "misleader/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "misleader/losses.hpp"

namespace misleader {

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

QueryOracle::QueryOracle(Backend backend, VjpBackend vjp_backend, OracleMode mode,
                         std::size_t budget, OutputWrapper wrapper)
    : backend_(std::move(backend)),
      vjp_backend_(std::move(vjp_backend)),
      mode_(mode),
      budget_(budget),
      wrapper_(std::move(wrapper)) {
  if (budget_ == 0) throw InvalidArgument("oracle: budget must be > 0");
  if (!backend_) throw InvalidArgument("oracle: backend required");
}

void QueryOracle::charge(std::size_t rows) {
  if (used_ + rows > budget_)
    throw BudgetExceeded("oracle: query of " + std::to_string(rows) +
                         " rows would pass budget " + std::to_string(budget_) + " (used " +
                         std::to_string(used_) + ")");
  used_ += rows;
}

Tensor QueryOracle::query(const Tensor& batch) {
  charge(batch.rows());
  Tensor probs = backend_(batch);
  if (wrapper_) wrapper_(probs);
  if (mode_ == OracleMode::hard) {
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      double* row = probs.row(r);
      const int top = argmax_row(row, probs.row_size());
      for (std::size_t j = 0; j < probs.row_size(); ++j) row[j] = 0.0;
      row[top] = 1.0;
    }
  }
  return probs;
}

QueryOracle::DifferentiableReply QueryOracle::query_soft_grad(const Tensor& batch) {
  if (mode_ != OracleMode::soft)
    throw Unsupported("oracle: differentiable queries require soft mode");
  if (!vjp_backend_)
    throw Unsupported("oracle: this oracle does not expose gradients");
  charge(batch.rows());
  DifferentiableReply reply;
  reply.probs = backend_(batch);
  reply.vjp = [this, batch](const Tensor& upstream) { return vjp_backend_(batch, upstream); };
  return reply;
}

namespace {

Tensor model_soft_backend(const Model& m, const Tensor& batch) {
  return forward_probs(m, batch);
}

Tensor model_vjp(const Model& m, const Tensor& batch, const Tensor& upstream) {
  const ParamVars frozen = make_param_constants(m);
  const ag::Var x = ag::leaf(batch);
  const ag::Var probs = ag::softmax_rows(forward_graph(m.spec, frozen, x), 1.0);
  ag::backward(ag::inner_const(probs, upstream));
  return x.node()->grad_ready ? x.grad() : Tensor(batch.shape);
}

}  // namespace

QueryOracle make_oracle(const Model& target, OracleMode mode, std::size_t budget,
                        OutputWrapper wrapper) {
  auto owned = std::make_shared<Model>(target);
  return QueryOracle(
      [owned](const Tensor& batch) { return model_soft_backend(*owned, batch); },
      [owned](const Tensor& batch, const Tensor& up) { return model_vjp(*owned, batch, up); },
      mode, budget, std::move(wrapper));
}

QueryOracle make_oracle(const Ensemble& target, OracleMode mode, std::size_t budget,
                        OutputWrapper wrapper) {
  target.validate();
  auto owned = std::make_shared<Ensemble>(target);
  return QueryOracle(
      [owned](const Tensor& batch) { return ensemble_predict(*owned, batch); },
      [owned](const Tensor& batch, const Tensor& up) {
        Tensor acc(batch.shape);
        Tensor scaled = up;
        const double inv = 1.0 / double(owned->members.size());
        for (double& v : scaled.data) v *= inv;
        for (const auto& m : owned->members) {
          const Tensor g = model_vjp(m, batch, scaled);
          for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += g.data[i];
        }
        return acc;
      },
      mode, budget, std::move(wrapper));
}

// ---------------------------------------------------------------------------
// RandP
// ---------------------------------------------------------------------------

namespace {

// Euclidean projection onto the probability simplex
void project_simplex(std::vector<double>& v) {
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  std::size_t rho = 0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    css += u[j];
    const double t = (css - 1.0) / double(j + 1);
    if (u[j] - t > 0.0) {
      rho = j + 1;
      theta = t;
    }
  }
  (void)rho;
  for (double& x : v) x = std::max(x - theta, 0.0);
}

double l1_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

}  // namespace

OutputWrapper randp_wrapper(double budget_l1, std::uint64_t seed) {
  if (budget_l1 < 0.0) throw InvalidArgument("randp: budget must be >= 0");
  auto rng = std::make_shared<Rng>(seed);
  return [budget_l1, rng](Tensor& rows) {
    const std::size_t k = rows.row_size();
    std::vector<double> y(k), dir(k);
    for (std::size_t r = 0; r < rows.rows(); ++r) {
      double* p = rows.row(r);
      y.assign(p, p + k);

      // sum-zero direction, unit L1 norm
      double mean = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        dir[j] = rng->normal();
        mean += dir[j];
      }
      mean /= double(k);
      double l1 = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        dir[j] -= mean;
        l1 += std::abs(dir[j]);
      }
      const double radius = rng->uniform(0.0, budget_l1);
      if (budget_l1 == 0.0 || l1 < 1e-300) continue;

      std::vector<double> cand(k);
      for (std::size_t j = 0; j < k; ++j) cand[j] = y[j] + radius * dir[j] / l1;
      project_simplex(cand);
      const double d = l1_dist(cand, y);
      if (d > budget_l1 && d > 0.0) {
        // walk back along the chord; stays on the simplex by convexity
        const double c = budget_l1 / d;
        for (std::size_t j = 0; j < k; ++j) cand[j] = y[j] + c * (cand[j] - y[j]);
      }
      std::copy(cand.begin(), cand.end(), p);
    }
  };
}

// ---------------------------------------------------------------------------
// DBME
// ---------------------------------------------------------------------------

void AttackConfig::validate() const {
  if (budget == 0) throw InvalidArgument("attack: budget must be > 0");
  if (batch == 0) throw InvalidArgument("attack: batch must be > 0");
  if (lr <= 0.0 || generator_lr <= 0.0)
    throw InvalidArgument("attack: learning rates must be > 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw InvalidArgument("attack: momentum must be in [0,1)");
  clone_spec.validate();
  if (kind == Kind::dfme) {
    if (latent_dim == 0) throw InvalidArgument("dfme: latent_dim must be > 0");
    if (query_lo >= query_hi) throw InvalidArgument("dfme: query box is empty");
  }
}

namespace {

std::vector<int> argmax_labels(const Tensor& rows) {
  std::vector<int> out(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r)
    out[r] = argmax_row(rows.row(r), rows.row_size());
  return out;
}

}  // namespace

AttackResult run_dbme(QueryOracle& oracle, const Dataset& surrogate,
                      const AttackConfig& config) {
  config.validate();
  if (config.kind != AttackConfig::Kind::dbme)
    throw InvalidArgument("run_dbme: config kind is not dbme");
  if (surrogate.size() == 0) throw InvalidArgument("run_dbme: empty surrogate");

  AttackResult result;
  result.clone = build(config.clone_spec, derive_seed(config.seed, "clone-init"));

  // label the surrogate, full batches only, stopping when the budget
  // cannot cover the next batch
  Tensor queries(surrogate.inputs.shape);
  Tensor answers({surrogate.size(), result.clone.spec.output_dim});
  const std::size_t in_dim = queries.row_size();
  const std::size_t out_dim = answers.row_size();
  std::size_t collected = 0;
  for (std::size_t start = 0; start < surrogate.size(); start += config.batch) {
    const std::size_t stop = std::min(start + config.batch, surrogate.size());
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor x = surrogate.gather(idx).first;
    if (oracle.budget_left() < x.rows()) {
      result.warnings.push_back("budget exhausted after " + std::to_string(collected) +
                                " of " + std::to_string(surrogate.size()) +
                                " surrogate points");
      break;
    }
    const Tensor reply = oracle.query(x);
    std::copy(x.data.begin(), x.data.end(), queries.row(collected));
    std::copy(reply.data.begin(), reply.data.end(), answers.row(collected));
    collected += x.rows();
    result.queries_used += x.rows();
  }

  if (collected == 0) {
    result.warnings.push_back("no queries issued: budget smaller than one batch");
    return result;
  }
  queries.shape[0] = collected;
  queries.data.resize(collected * in_dim);
  answers.shape[0] = collected;
  answers.data.resize(collected * out_dim);

  // fit the clone to the collected answers
  const bool hard = oracle.mode() == OracleMode::hard;
  const std::vector<int> hard_labels = hard ? argmax_labels(answers) : std::vector<int>{};
  const std::size_t steps_per_epoch = (collected + config.batch - 1) / config.batch;
  OptimizerState opt = make_optimizer(result.clone, config.lr, config.momentum,
                                      config.epochs * steps_per_epoch);
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order(collected);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < collected; start += config.batch) {
      const std::size_t stop = std::min(start + config.batch, collected);
      const std::size_t b = stop - start;
      std::vector<std::size_t> xshape = queries.shape;
      xshape[0] = b;
      Tensor x(xshape);
      Tensor t({b, out_dim});
      std::vector<int> yb(b);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t src = order[start + i];
        std::copy(queries.row(src), queries.row(src) + in_dim, x.row(i));
        std::copy(answers.row(src), answers.row(src) + out_dim, t.row(i));
        if (hard) yb[i] = hard_labels[src];
      }
      ParamVars pv = make_param_vars(result.clone);
      const ag::Var logits = forward_graph(result.clone, pv, x);
      const ag::Var loss = hard ? ag::cross_entropy_mean(logits, yb)
                                : attacker_loss_graph_clone(logits, t);
      epoch_loss += loss.scalar();
      ParamMap grads = gradients(pv, loss);
      clip_global_norm(grads, kGradClipNorm);
      sgd_step_inplace(result.clone, grads, opt);
    }
    RoundRecord rr;
    rr.round = epoch + 1;
    rr.attacker_objective = epoch_loss / double(steps_per_epoch);
    rr.queries_used = result.queries_used;
    result.log.push_back(rr);
  }
  return result;
}

// ---------------------------------------------------------------------------
// DFME
// ---------------------------------------------------------------------------

namespace {

ArchitectureSpec generator_spec_for(const AttackConfig& config, std::size_t data_dim) {
  ArchitectureSpec g;
  g.kind = ArchKind::generator_mlp;
  g.activation = Activation::relu;
  g.input_shape = {config.latent_dim};
  g.layer_sizes = config.generator_hidden;
  g.layer_sizes.push_back(data_dim);
  g.output_dim = data_dim;
  return g;
}

Tensor sample_latent(Rng& rng, std::size_t batch, std::size_t latent_dim) {
  Tensor z({batch, latent_dim});
  for (double& v : z.data) v = rng.normal();
  return z;
}

// d(mean_rows KL(t || s)) / dt, holding the student side fixed
Tensor kl_upstream_teacher(const Tensor& teacher, const Tensor& student) {
  Tensor up(teacher.shape);
  const double inv_b = 1.0 / double(teacher.rows());
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    const double t = teacher.data[i];
    const double s = std::max(student.data[i], ag::kKlClamp);
    up.data[i] = t > 0.0 ? inv_b * (std::log(t / s) + 1.0) : 0.0;
  }
  return up;
}

}  // namespace

AttackResult run_dfme(QueryOracle& oracle, const AttackConfig& config) {
  config.validate();
  if (config.kind != AttackConfig::Kind::dfme)
    throw InvalidArgument("run_dfme: config kind is not dfme");

  const std::size_t data_dim = Tensor::numel(config.clone_spec.input_shape);
  const ArchitectureSpec gen_spec = generator_spec_for(config, data_dim);

  AttackResult result;
  result.clone = build(config.clone_spec, derive_seed(config.seed, "clone-init"));
  Model generator = build(gen_spec, derive_seed(config.seed, "generator-init"));

  const double half = 0.5 * (config.query_hi - config.query_lo);
  const double center = 0.5 * (config.query_hi + config.query_lo);
  const bool hard = oracle.mode() == OracleMode::hard;

  // flat generator output -> clone input shape
  auto to_query_shape = [&](Tensor flat) {
    std::vector<std::size_t> s = {flat.shape[0]};
    for (std::size_t d : config.clone_spec.input_shape) s.push_back(d);
    return Tensor(std::move(s), std::move(flat.data));
  };

  OptimizerState opt_s = make_optimizer(result.clone, config.lr, config.momentum,
                                        config.rounds * config.student_steps);
  OptimizerState opt_g = make_optimizer(generator, config.generator_lr, config.momentum,
                                        config.rounds * config.gen_steps);
  Rng latent_rng(derive_seed(config.seed, "latent"));

  const std::size_t per_round = (config.gen_steps + config.student_steps) * config.batch;
  for (std::size_t round = 0; round < config.rounds; ++round) {
    if (oracle.budget_left() < per_round) {
      result.warnings.push_back("budget exhausted after " + std::to_string(round) +
                                " complete rounds");
      break;
    }

    double gen_obj = 0.0;
    for (std::size_t gs = 0; gs < config.gen_steps; ++gs) {
      const Tensor z = sample_latent(latent_rng, config.batch, config.latent_dim);
      ParamVars pv_g = make_param_vars(generator);
      ag::Var out = forward_graph(gen_spec, pv_g, ag::constant(z));
      Tensor center_t(out.value().shape);
      std::fill(center_t.data.begin(), center_t.data.end(), center);
      out = ag::add(ag::scale(out, half), ag::constant(std::move(center_t)));
      const Tensor x = to_query_shape(out.value());

      Tensor dx_flat({x.shape[0], data_dim});
      double objective = 0.0;
      if (hard) {
        // one-hot answers give no oracle-side gradient; climb the student CE
        const Tensor reply = oracle.query(x);
        const std::vector<int> labels = argmax_labels(reply);
        const ParamVars frozen = make_param_constants(result.clone);
        const ag::Var xv = ag::leaf(x);
        const ag::Var loss =
            ag::cross_entropy_mean(forward_graph(result.clone.spec, frozen, xv), labels);
        objective = loss.scalar();
        ag::backward(loss);
        dx_flat.data = xv.grad().data;
      } else {
        auto reply = oracle.query_soft_grad(x);
        // student side of the disagreement, gradient w.r.t. the query
        const ParamVars frozen = make_param_constants(result.clone);
        const ag::Var xv = ag::leaf(x);
        const ag::Var s_probs =
            ag::softmax_rows(forward_graph(result.clone.spec, frozen, xv), 1.0);
        const ag::Var loss = ag::kl_rows_mean(ag::constant(reply.probs), s_probs);
        objective = loss.scalar();
        ag::backward(loss);
        const Tensor g_student = xv.grad();
        // oracle side through the vector-Jacobian product
        const Tensor g_oracle =
            reply.vjp(kl_upstream_teacher(reply.probs, s_probs.value()));
        for (std::size_t i = 0; i < dx_flat.size(); ++i)
          dx_flat.data[i] = g_student.data[i] + g_oracle.data[i];
      }
      gen_obj += objective;

      // ascend: inject -dL/dx so sgd_step maximizes the disagreement
      for (double& v : dx_flat.data) v = -v;
      ag::backward(ag::inner_const(out, std::move(dx_flat)));
      ParamMap grads;
      for (const auto& [name, var] : pv_g.vars)
        grads[name] = var.node()->grad_ready ? var.grad() : Tensor(var.value().shape);
      clip_global_norm(grads, kGradClipNorm);
      sgd_step_inplace(generator, grads, opt_g);
    }

    double student_obj = 0.0;
    for (std::size_t ss = 0; ss < config.student_steps; ++ss) {
      const Tensor z = sample_latent(latent_rng, config.batch, config.latent_dim);
      Tensor flat = forward(generator, z);
      for (double& v : flat.data) v = center + half * v;
      const Tensor x = to_query_shape(std::move(flat));
      const Tensor reply = oracle.query(x);

      ParamVars pv = make_param_vars(result.clone);
      const ag::Var logits = forward_graph(result.clone, pv, x);
      const ag::Var loss = hard
                               ? ag::cross_entropy_mean(logits, argmax_labels(reply))
                               : attacker_loss_graph_clone(logits, reply);
      student_obj += loss.scalar();
      ParamMap grads = gradients(pv, loss);
      clip_global_norm(grads, kGradClipNorm);
      sgd_step_inplace(result.clone, grads, opt_s);
    }

    result.queries_used += per_round;
    RoundRecord rr;
    rr.round = round + 1;
    rr.generator_objective = config.gen_steps ? gen_obj / double(config.gen_steps) : 0.0;
    rr.attacker_objective =
        config.student_steps ? student_obj / double(config.student_steps) : 0.0;
    rr.queries_used = result.queries_used;
    result.log.push_back(rr);
  }

  result.generator = std::move(generator);
  return result;
}

void evaluate_attack(AttackResult& result, const Model& f_t, const Dataset& test) {
  result.clone_test_accuracy = accuracy(result.clone, test);
  const Tensor clone_probs = forward_probs(result.clone, test.inputs);
  const Tensor target_probs = forward_probs(f_t, test.inputs);
  result.agreement =
      agreement_utility(clone_probs, target_probs, LossBound(kLn2), UtilityLoss::js);
}

}  // namespace misleader
