#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "trot/matrix.hpp"
#include "trot/qmath.hpp"
#include "trot/solver_types.hpp"
#include "trot/transport.hpp"

namespace trot {

/// Plan entries below this are treated as exact zeros: they carry no mass and
/// only stall the Kronecker-divide steps as denormals.
inline constexpr double kPlanFloor = 1e-300;

struct SoTrotResult {
  TransportPlan plan;
  SolveTrace trace;
  DualCertificate duals;  ///< accumulated row/column offsets, alpha[0] = 0
};

namespace detail {

/// One second-order balancing pass over the rows of (A, P) against marginal r.
/// Returns the per-row steps y and the auxiliary value A(P, y) evaluated at
/// the current iterate before the update is applied.
struct RowSweepOutcome {
  Vector y;
  double auxiliary = 0.0;
};

inline RowSweepOutcome so_trot_row_steps(const Matrix& a_mat, const Matrix& p_mat, const Vector& r,
                                         double q, bool production_mods) {
  const std::size_t n = p_mat.rows(), m = p_mat.cols();
  const double exp_q_m1 = q_exp(-1.0, q);
  const double pole_offset = 1.0 / (1.0 - q);  // exp_q pole sits at a = -pole_offset
  RowSweepOutcome out;
  out.y.assign(n, 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    double row_mass = 0.0, lin = 0.0, quad = 0.0, max_pow = 0.0, min_a = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      const double p = p_mat(i, j);
      if (p < kPlanFloor) continue;
      row_mass += p;
      lin += std::pow(p, 2.0 - q);
      quad += std::pow(p, 3.0 - 2.0 * q);
      max_pow = std::max(max_pow, std::pow(p, 1.0 - q));
      min_a = std::min(min_a, a_mat(i, j));
    }
    const double deficit = r[i] - row_mass;
    const double b = lin / q;
    double a = (2.0 - q) * quad / (q * q);
    if (production_mods) a *= 0.5;

    double y;
    if (b <= 0.0 && a <= 0.0) {
      y = 0.0;  // empty row: nothing to rebalance against
    } else if (deficit >= 0.0) {
      // Largest root of deficit - y b - y^2 a, in the cancellation-free form.
      y = 2.0 * deficit / (b + std::sqrt(b * b + 4.0 * a * deficit));
    } else {
      y = deficit / b;
      if (production_mods) y *= 2.0;
    }

    const double cap = max_pow > 0.0 ? q / ((6.0 - 4.0 * q) * max_pow) : 0.0;
    if (!production_mods) {
      if (std::abs(y) > cap) y = cap * (deficit >= 0.0 ? 1.0 : -1.0);
    } else if (y > 0.0 && std::isfinite(min_a) && y >= min_a + pole_offset) {
      // The uncapped step would cross the q-exponential pole and blow the
      // iterate up; fall back to the capped magnitude, which always lands
      // strictly inside (its ratio to the pole distance is (1-q)/(6-4q)).
      y = cap;
    }
    out.y[i] = y;
  }

  // Auxiliary value at the chosen steps: A(P, y) = sum_i [ y_i r_i +
  // sum_j ( p_ij^q - exp_q(-1)^q exp_q(a_ij - y_i)^{-q} ) ].
  const double scale_pow = std::pow(exp_q_m1, q);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = out.y[i] * r[i];
    for (std::size_t j = 0; j < m; ++j) {
      const double p = p_mat(i, j);
      const double shifted = q_exp(a_mat(i, j) - out.y[i], q);
      // A zero here means the step crossed the pole and would move infinite
      // mass; the caps keep algorithm-chosen steps away from it.
      const double moved = shifted > 0.0 ? scale_pow * std::pow(shifted, -q)
                                         : std::numeric_limits<double>::infinity();
      acc += (p >= kPlanFloor ? std::pow(p, q) : 0.0) - moved;
    }
    out.auxiliary += acc;
  }
  return out;
}

inline void apply_row_steps(Matrix& a_mat, Matrix& p_mat, const Vector& y, double q) {
  const double scale = q_exp(-1.0, q);
  for (std::size_t i = 0; i < a_mat.rows(); ++i) {
    for (std::size_t j = 0; j < a_mat.cols(); ++j) {
      a_mat(i, j) -= y[i];
      const QExpResult denom = q_exp_checked(a_mat(i, j), q);
      double p;
      if (denom.saturated)
        p = 0.0;  // q-exponential overflow: vanishing mass
      else if (denom.value == 0.0)
        p = std::numeric_limits<double>::infinity();  // crossed the pole; surfaces as non-convergence
      else
        p = scale / denom.value;
      p_mat(i, j) = p < kPlanFloor ? 0.0 : p;
    }
  }
}

}  // namespace detail

/// Second-order row balancing for q in (0, 1), alternating the row and the
/// column constraint inside the loop (the column pass runs the row pass on
/// transposed matrices). With production_mods on, the step cap is dropped,
/// quadratic curvature is halved and the linear-branch step doubled; those
/// modifications trade the per-step descent guarantee for speed.
/// rows_only restricts the iteration to the single row constraint, whose
/// auxiliary-function descent guarantee the tests monitor.
inline SoTrotResult solve_so_trot(const TransportProblem& prob, const QParams& params,
                                  const SolverConfig& cfg = {}, bool rows_only = false) {
  params.validate();
  cfg.validate();
  prob.validate();
  if (!(params.q > 0.0 && params.q < 1.0))
    throw std::invalid_argument("solve_so_trot: requires q in (0, 1)");
  const double q = params.q;
  const std::size_t n = prob.n(), m = prob.m();

  Matrix a_mat(n, m);
  for (std::size_t k = 0; k < a_mat.size(); ++k) a_mat.data()[k] = params.lambda * prob.M.data()[k];
  Matrix p_mat(n, m);
  {
    const double scale = q_exp(-1.0, q);
    for (std::size_t k = 0; k < p_mat.size(); ++k) {
      const double denom = q_exp(a_mat.data()[k], q);
      const double p = scale / denom;
      p_mat.data()[k] = p < kPlanFloor ? 0.0 : p;
    }
  }

  Vector alpha_acc(n, 0.0), beta_acc(m, 0.0);
  SolveTrace trace;
  int sweeps = 0;
  double prev_objective = std::numeric_limits<double>::infinity();

  auto objective_of = [&](const Matrix& p) {
    return frobenius_dot(p, prob.M) - tsallis_entropy(p, q).h_q / params.lambda;
  };
  auto record_state = [&](double aux) {
    const double obj = objective_of(p_mat);
    trace.record(obj, l1_distance(row_sums(p_mat), prob.r), l1_distance(col_sums(p_mat), prob.c));
    trace.auxiliary_values.push_back(aux);
    if (cfg.on_sweep) cfg.on_sweep(p_mat, ++sweeps);
    return obj;
  };

  bool converged = false;
  for (int outer = 0; outer < cfg.max_outer_iters && !converged; ++outer) {
    // Row pass.
    auto row_step = detail::so_trot_row_steps(a_mat, p_mat, prob.r, q, cfg.production_mods);
    detail::apply_row_steps(a_mat, p_mat, row_step.y, q);
    for (std::size_t i = 0; i < n; ++i) alpha_acc[i] -= row_step.y[i];
    double obj = record_state(row_step.auxiliary);

    if (!rows_only) {
      // Column pass on the transposed iterate.
      Matrix a_t = transpose(a_mat), p_t = transpose(p_mat);
      auto col_step = detail::so_trot_row_steps(a_t, p_t, prob.c, q, cfg.production_mods);
      detail::apply_row_steps(a_t, p_t, col_step.y, q);
      for (std::size_t j = 0; j < m; ++j) beta_acc[j] -= col_step.y[j];
      a_mat = transpose(a_t);
      p_mat = transpose(p_t);
      obj = record_state(col_step.auxiliary);
    }

    const double row_res = trace.row_residual_history.back();
    const double col_res = trace.col_residual_history.back();
    const bool feasible = rows_only ? row_res < cfg.marginal_tol
                                    : row_res < cfg.marginal_tol && col_res < cfg.marginal_tol;
    const bool settled = std::abs(obj - prev_objective) <= cfg.objective_tol * std::max(1.0, std::abs(obj));
    converged = feasible && settled;
    prev_objective = obj;
  }

  SoTrotResult result{make_plan(prob, std::move(p_mat)), std::move(trace), {std::move(alpha_acc), std::move(beta_acc)}};
  result.trace.converged = converged;
  // Shift to the alpha[0] = 0 canonical form.
  const double shift = result.duals.alpha[0];
  for (auto& a : result.duals.alpha) a -= shift;
  for (auto& b : result.duals.beta) b += shift;
  return result;
}

/// A(P, y) evaluated from a plan alone: the dual matrix entries are recovered
/// by inverting p = exp_q(-1) exp_q^{-1}(a) on the positive support. Zero
/// cells contribute nothing. Valid for plans in the q-exponential family.
inline double so_trot_auxiliary(const Matrix& plan, const Vector& y, const TransportProblem& prob,
                                const QParams& params) {
  params.validate();
  if (!(params.q > 0.0 && params.q < 1.0))
    throw std::invalid_argument("so_trot_auxiliary: requires q in (0, 1)");
  if (plan.rows() != prob.n() || plan.cols() != prob.m() || y.size() != prob.n())
    throw std::invalid_argument("so_trot_auxiliary: shape mismatch");
  const double q = params.q;
  const double scale = q_exp(-1.0, q);
  const double scale_pow = std::pow(scale, q);
  double total = 0.0;
  for (std::size_t i = 0; i < plan.rows(); ++i) {
    double acc = y[i] * prob.r[i];
    for (std::size_t j = 0; j < plan.cols(); ++j) {
      const double p = plan(i, j);
      if (p < kPlanFloor) continue;
      const double a_ij = q_log(scale / p, q);
      const double shifted = q_exp(a_ij - y[i], q);
      // Steps past the pole move infinite mass: infinitely bad.
      const double moved = shifted > 0.0 ? scale_pow * std::pow(shifted, -q)
                                         : std::numeric_limits<double>::infinity();
      acc += std::pow(p, q) - moved;
    }
    total += acc;
  }
  return total;
}

}  // namespace trot
