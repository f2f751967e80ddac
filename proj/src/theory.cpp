#include "misleader/theory.hpp"

#include <cmath>
#include <limits>

namespace misleader {

void FunctionTable::validate() const {
  if (values.shape.size() != 2 || values.rows() == 0 || values.row_size() == 0)
    throw InvalidArgument("function table: values must be a non-empty m x n matrix");
  for (double v : values.data)
    if (!std::isfinite(v)) throw InvalidArgument("function table: non-finite entry");
  if (!descriptions.empty() && descriptions.size() != values.rows())
    throw InvalidArgument("function table: description count mismatch");
}

namespace {

double sup_signed_mean(const FunctionTable& table, const std::vector<int>& sigma) {
  const std::size_t m = table.num_functions(), n = table.num_points();
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < m; ++g) {
    const double* row = table.values.row(g);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += sigma[i] * row[i];
    best = std::max(best, acc / double(n));
  }
  return best;
}

}  // namespace

RademacherEstimate rademacher_estimate(const FunctionTable& table, std::size_t draws,
                                       std::uint64_t seed, bool exact) {
  table.validate();
  const std::size_t n = table.num_points();
  RademacherEstimate out;

  if (exact) {
    if (n > 20)
      throw TooLargeForExact("rademacher: exact enumeration limited to n <= 20, got n = " +
                             std::to_string(n));
    // enumerate antithetic pairs (sigma, -sigma): cancellation that is exact
    // in expectation stays exact in floating point
    const std::uint64_t pairs = 1ULL << (n - 1);
    std::vector<int> sigma(n), neg(n);
    double total = 0.0;
    for (std::uint64_t mask = 0; mask < pairs; ++mask) {
      for (std::size_t i = 0; i < n; ++i) {
        sigma[i] = (mask >> i) & 1 ? 1 : -1;
        neg[i] = -sigma[i];
      }
      total += sup_signed_mean(table, sigma) + sup_signed_mean(table, neg);
    }
    out.estimate = total / double(2 * pairs);
    out.stderr_ = 0.0;
    return out;
  }

  if (draws == 0) throw InvalidArgument("rademacher: draws must be >= 1");
  Rng rng(seed);
  std::vector<int> sigma(n), neg(n);
  std::vector<double> samples;
  samples.reserve(draws);
  for (std::size_t d = 0; d < draws; ++d) {
    for (std::size_t i = 0; i < n; ++i) {
      sigma[i] = rng.sign();
      neg[i] = -sigma[i];
    }
    samples.push_back(0.5 * (sup_signed_mean(table, sigma) + sup_signed_mean(table, neg)));
  }
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= double(draws);
  double var = 0.0;
  for (double s : samples) var += (s - mean) * (s - mean);
  out.estimate = mean;
  out.stderr_ = draws > 1 ? std::sqrt(var / double(draws - 1) / double(draws)) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// exact assignment (shortest augmenting path with potentials)
// ---------------------------------------------------------------------------

namespace {

std::vector<int> solve_assignment(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
  return row_to_col;
}

std::vector<std::vector<double>> pairwise_euclidean(const Tensor& P, const Tensor& Q) {
  const std::size_t n = P.rows(), d = P.row_size();
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double sq = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = P.row(i)[t] - Q.row(j)[t];
        sq += diff * diff;
      }
      cost[i][j] = std::sqrt(sq);
    }
  return cost;
}

void check_w1_inputs(const Tensor& P, const Tensor& Q) {
  if (P.rows() != Q.rows())
    throw SizeMismatch("wasserstein1: sample sizes differ (" + std::to_string(P.rows()) +
                       " vs " + std::to_string(Q.rows()) + ")");
  if (P.row_size() != Q.row_size())
    throw SizeMismatch("wasserstein1: point dimensions differ");
  if (P.rows() == 0) throw InvalidArgument("wasserstein1: empty samples");
}

}  // namespace

std::vector<int> wasserstein1_matching(const Tensor& P, const Tensor& Q) {
  check_w1_inputs(P, Q);
  return solve_assignment(pairwise_euclidean(P, Q));
}

double wasserstein1(const Tensor& P, const Tensor& Q) {
  check_w1_inputs(P, Q);
  const auto cost = pairwise_euclidean(P, Q);
  const auto match = solve_assignment(cost);
  double total = 0.0;
  for (std::size_t i = 0; i < match.size(); ++i) total += cost[i][match[i]];
  return total / double(match.size());
}

// ---------------------------------------------------------------------------
// risks and bound checks
// ---------------------------------------------------------------------------

namespace {

std::vector<double> row_vec(const Tensor& t, std::size_t i) {
  return std::vector<double>(t.row(i), t.row(i) + t.row_size());
}

double pair_loss(const std::vector<double>& a, const std::vector<double>& b,
                 UtilityLoss loss, const LossBound& bound) {
  const double l = loss == UtilityLoss::kl ? kl_div(a, b) : js_div(a, b);
  if (l > bound.K + 1e-9)
    throw BoundViolation("risk: sample loss " + std::to_string(l) + " exceeds bound " +
                         std::to_string(bound.K));
  return l;
}

}  // namespace

double emp_risk(const Model& f_t, const Model& f_s, const Model& d, const Tensor& sample,
                double lambda, UtilityLoss loss, const LossBound& bound) {
  if (lambda <= 0.0) throw InvalidArgument("risk: lambda must be > 0");
  if (sample.rows() == 0) throw InvalidArgument("risk: empty sample");
  const Tensor pt = forward_probs(f_t, sample);
  const Tensor ps = forward_probs(f_s, sample);
  const Tensor pd = forward_probs(d, sample);
  double total = 0.0;
  for (std::size_t i = 0; i < sample.rows(); ++i) {
    const auto t = row_vec(pt, i), s = row_vec(ps, i), dd = row_vec(pd, i);
    total += pair_loss(t, dd, loss, bound) - lambda * pair_loss(s, dd, loss, bound);
  }
  return total / double(sample.rows());
}

double pop_risk(const Model& f_t, const Model& f_s, const Model& d,
                const Tensor& reference_sample, double lambda, UtilityLoss loss,
                const LossBound& bound) {
  return emp_risk(f_t, f_s, d, reference_sample, lambda, loss, bound);
}

FunctionTable build_loss_table(const std::vector<Model>& defense_grid,
                               const std::vector<Model>& attacker_grid, const Model& f_t,
                               const Tensor& sample, double lambda, UtilityLoss loss) {
  const std::size_t n = sample.rows();
  const std::size_t m = defense_grid.size() * attacker_grid.size();
  FunctionTable table;
  table.values = Tensor({m, n});
  const Tensor pt = forward_probs(f_t, sample);
  const LossBound no_bound(1e18);  // the table stores raw values; bounds checked elsewhere

  std::size_t row = 0;
  for (const auto& d : defense_grid) {
    const Tensor pd = forward_probs(d, sample);
    std::vector<double> t_term(n);
    for (std::size_t i = 0; i < n; ++i)
      t_term[i] = pair_loss(row_vec(pt, i), row_vec(pd, i), loss, no_bound);
    for (const auto& fs : attacker_grid) {
      const Tensor ps = forward_probs(fs, sample);
      double* out = table.values.row(row);
      for (std::size_t i = 0; i < n; ++i)
        out[i] = t_term[i] -
                 lambda * pair_loss(row_vec(ps, i), row_vec(pd, i), loss, no_bound);
      table.descriptions.push_back("d=" + d.spec.id() + "|fs=" + fs.spec.id());
      ++row;
    }
  }
  return table;
}

FunctionTable build_attacker_loss_table(const std::vector<Model>& defense_grid,
                                        const std::vector<Model>& attacker_grid,
                                        const Tensor& sample, UtilityLoss loss) {
  const std::size_t n = sample.rows();
  FunctionTable table;
  table.values = Tensor({defense_grid.size() * attacker_grid.size(), n});
  const LossBound no_bound(1e18);
  std::size_t row = 0;
  for (const auto& d : defense_grid) {
    const Tensor pd = forward_probs(d, sample);
    for (const auto& fs : attacker_grid) {
      const Tensor ps = forward_probs(fs, sample);
      double* out = table.values.row(row);
      for (std::size_t i = 0; i < n; ++i)
        out[i] = pair_loss(row_vec(ps, i), row_vec(pd, i), loss, no_bound);
      table.descriptions.push_back("d=" + d.spec.id() + "|fs=" + fs.spec.id());
      ++row;
    }
  }
  return table;
}

GeneralizationCheck minimax_gap_check(const std::vector<Model>& defense_grid,
                                      const std::vector<Model>& attacker_grid,
                                      const Model& f_t, const Tensor& train_sample,
                                      const Tensor& reference_sample, double lambda,
                                      UtilityLoss loss, const LossBound& bound, double delta,
                                      std::size_t draws, std::uint64_t seed) {
  if (defense_grid.empty() || attacker_grid.empty())
    throw InvalidArgument("minimax_gap_check: empty model grid");
  if (delta <= 0.0 || delta >= 1.0)
    throw InvalidArgument("minimax_gap_check: delta must be in (0,1)");

  auto minimax = [&](const Tensor& sample) {
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& d : defense_grid) {
      double worst = -std::numeric_limits<double>::infinity();
      for (const auto& fs : attacker_grid)
        worst = std::max(worst, emp_risk(f_t, fs, d, sample, lambda, loss, bound));
      best_d = std::min(best_d, worst);
    }
    return best_d;
  };

  GeneralizationCheck check;
  check.n = train_sample.rows();
  check.n_reference = reference_sample.rows();
  check.emp_minimax = minimax(train_sample);
  check.pop_minimax = minimax(reference_sample);

  const FunctionTable table =
      build_loss_table(defense_grid, attacker_grid, f_t, train_sample, lambda, loss);
  check.rademacher =
      rademacher_estimate(table, draws, seed, /*exact=*/train_sample.rows() <= 20);

  check.bound.lhs = std::abs(check.pop_minimax - check.emp_minimax);
  check.bound.rhs = 2.0 * bound.K * check.rademacher.estimate +
                    bound.K * std::sqrt(std::log(1.0 / delta) / (2.0 * double(check.n)));
  check.bound.holds = check.bound.lhs <= check.bound.rhs + 1e-9;
  return check;
}

SubadditivityCheck subadditivity_check(const FunctionTable& table_d,
                                       const FunctionTable& table_fs,
                                       const FunctionTable& table_joint, double lambda,
                                       std::size_t draws, std::uint64_t seed, bool exact) {
  if (lambda < 0.0) throw InvalidArgument("subadditivity: lambda must be >= 0");
  if (table_d.num_points() != table_fs.num_points() ||
      table_d.num_points() != table_joint.num_points())
    throw SizeMismatch("subadditivity: tables disagree on sample points");

  const auto rd = rademacher_estimate(table_d, draws, seed, exact);
  const auto rf = rademacher_estimate(table_fs, draws, seed, exact);
  const auto rj = rademacher_estimate(table_joint, draws, seed, exact);

  SubadditivityCheck check;
  check.joint = rj.estimate;
  check.parts = rd.estimate + lambda * rf.estimate;
  check.pooled_stderr = std::sqrt(rj.stderr_ * rj.stderr_ + rd.stderr_ * rd.stderr_ +
                                  lambda * lambda * rf.stderr_ * rf.stderr_);
  const double slack = exact ? 0.0 : 3.0 * check.pooled_stderr;
  check.holds = check.joint <= check.parts + slack + 1e-9;
  return check;
}

DistributionShiftCheck df_gap_check(const Model& f_t, const Model& f_s,
                                    const Tensor& p_sample, const Tensor& pg_sample,
                                    ShiftLossKind loss_kind, std::size_t power_iters) {
  if (loss_kind != ShiftLossKind::l2_probs)
    throw Unsupported("df_gap_check: unsupported loss kind");
  if (p_sample.rows() != pg_sample.rows())
    throw SizeMismatch("df_gap_check: sample sizes differ");

  auto mean_loss = [&](const Tensor& sample) {
    const Tensor pt = forward_probs(f_t, sample);
    const Tensor ps = forward_probs(f_s, sample);
    double total = 0.0;
    for (std::size_t i = 0; i < sample.rows(); ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < pt.row_size(); ++j) {
        const double diff = pt.row(i)[j] - ps.row(i)[j];
        sq += diff * diff;
      }
      total += std::sqrt(sq);
    }
    return total / double(sample.rows());
  };

  DistributionShiftCheck check;
  check.mean_loss_p = mean_loss(p_sample);
  check.mean_loss_pg = mean_loss(pg_sample);
  check.w1 = wasserstein1(p_sample, pg_sample);
  check.lipschitz_ft = lipschitz_upper_bound(f_t, power_iters);
  check.lipschitz_fs = lipschitz_upper_bound(f_s, power_iters);
  check.rho = 1.0;
  const double lip = std::max(check.lipschitz_ft, check.lipschitz_fs);
  check.bound.lhs = std::abs(check.mean_loss_p - check.mean_loss_pg);
  check.bound.rhs = 2.0 * check.rho * lip * check.w1;
  check.bound.holds = check.bound.lhs <= check.bound.rhs + 1e-9;
  return check;
}

}  // namespace misleader
