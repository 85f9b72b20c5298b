#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "trot/matrix.hpp"
#include "trot/qmath.hpp"

namespace trot {

/// Regularization configuration shared by every solver: deformation q >= 0
/// and inverse regularization weight lambda > 0.
struct QParams {
  double q = 1.0;
  double lambda = 1.0;

  void validate() const {
    if (!(q >= 0.0) || !std::isfinite(q)) throw std::invalid_argument("QParams: q must be finite and >= 0");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("QParams: lambda must be finite and > 0");
  }
};

/// The immutable problem statement: marginals r (length n), c (length m) and a
/// nonnegative n x m cost matrix. Rectangular problems are first-class.
struct TransportProblem {
  Vector r;
  Vector c;
  Matrix M;

  std::size_t n() const { return r.size(); }
  std::size_t m() const { return c.size(); }

  void validate(double marginal_sum_tol = 1e-9) const {
    if (M.rows() != r.size() || M.cols() != c.size())
      throw std::invalid_argument("TransportProblem: cost matrix shape does not match marginals");
    if (r.empty() || c.empty()) throw std::invalid_argument("TransportProblem: empty marginal");
    double rs = 0.0, cs = 0.0;
    for (double v : r) {
      if (v < 0.0) throw std::invalid_argument("TransportProblem: r has a negative entry");
      rs += v;
    }
    for (double v : c) {
      if (v < 0.0) throw std::invalid_argument("TransportProblem: c has a negative entry");
      cs += v;
    }
    if (std::abs(rs - 1.0) > marginal_sum_tol)
      throw std::invalid_argument("TransportProblem: r must sum to 1 (got " + std::to_string(rs) + ")");
    if (std::abs(cs - 1.0) > marginal_sum_tol)
      throw std::invalid_argument("TransportProblem: c must sum to 1 (got " + std::to_string(cs) + ")");
    for (double v : M)
      if (!std::isfinite(v)) throw std::invalid_argument("TransportProblem: cost matrix has a non-finite entry");
  }
};

/// A candidate coupling plus its L1 marginal residuals against the problem it
/// was built for.
struct TransportPlan {
  Matrix P;
  double row_residual = 0.0;
  double col_residual = 0.0;
};

inline TransportPlan make_plan(const TransportProblem& prob, Matrix P) {
  if (P.rows() != prob.n() || P.cols() != prob.m())
    throw std::invalid_argument("make_plan: plan shape does not match problem");
  TransportPlan plan{std::move(P), 0.0, 0.0};
  plan.row_residual = l1_distance(row_sums(plan.P), prob.r);
  plan.col_residual = l1_distance(col_sums(plan.P), prob.c);
  return plan;
}

/// Lagrange duals of the marginal constraints, canonicalized by alpha[0] = 0
/// (the pair is determined only up to an additive shift).
struct DualCertificate {
  Vector alpha;
  Vector beta;
};

/// Deformed Gibbs kernel: entries exp_q(-1) / exp_q(lambda m_ij); e^{-1-lambda m}
/// at q = 1. Entries are zero exactly where the q-exponential saturates.
struct GibbsKernel {
  Matrix u_tilde;
  double q = 1.0;
  double lambda = 1.0;
};

inline GibbsKernel build_gibbs_kernel(const TransportProblem& prob, const QParams& params) {
  params.validate();
  GibbsKernel kernel{Matrix(prob.n(), prob.m()), params.q, params.lambda};
  const double scale = q_exp(-1.0, params.q);
  for (std::size_t k = 0; k < kernel.u_tilde.size(); ++k) {
    const QExpResult denom = q_exp_checked(params.lambda * prob.M.data()[k], params.q);
    kernel.u_tilde.data()[k] = denom.saturated ? 0.0 : scale / denom.value;
  }
  return kernel;
}

/// <P, M> - (1/lambda) H_q(P): the regularized transport objective.
inline double trot_objective(const TransportPlan& plan, const TransportProblem& prob, const QParams& params) {
  params.validate();
  if (!plan.P.same_shape(prob.M)) throw std::invalid_argument("trot_objective: shape mismatch");
  return frobenius_dot(plan.P, prob.M) - tsallis_entropy(plan.P, params.q).h_q / params.lambda;
}

/// K_{1/q}(P^q, U~^q): the escort-divergence form of the objective. Solvers for
/// q != 1 minimize this; at q = 1 it is the generalized KL divergence to the
/// kernel. Requires q > 0.
inline double escort_divergence_objective(const TransportPlan& plan, const GibbsKernel& kernel, double q) {
  if (!(q > 0.0)) throw std::domain_error("escort_divergence_objective: q must be positive");
  if (!plan.P.same_shape(kernel.u_tilde)) throw std::invalid_argument("escort_divergence_objective: shape mismatch");
  if (is_classical(q)) return tsallis_relative_entropy(plan.P, kernel.u_tilde, 1.0);
  return tsallis_relative_entropy(escort_power(plan.P, q), escort_power(kernel.u_tilde, q), 1.0 / q);
}

/// Additive constant tying the two objective forms together:
/// trot_objective(P) = (1/lambda) * escort_divergence_objective(P) + escort_offset.
/// Equals -(1/lambda) * <U~^q, 1>.
inline double escort_offset(const GibbsKernel& kernel) {
  return -sum(escort_power(kernel.u_tilde, kernel.q)) / kernel.lambda;
}

/// Max-norm defect of the stationarity form
/// p_ij = exp_q(-1) exp_q^{-1}(alpha_i + lambda m_ij + beta_j).
/// Zero (up to solver tolerance) certifies an optimal plan/dual pair for q > 0.
inline double kkt_form_residual(const TransportPlan& plan, const DualCertificate& cert,
                                const TransportProblem& prob, const QParams& params) {
  params.validate();
  if (cert.alpha.size() != prob.n() || cert.beta.size() != prob.m())
    throw std::invalid_argument("kkt_form_residual: dual length mismatch");
  const double scale = q_exp(-1.0, params.q);
  double worst = 0.0;
  for (std::size_t i = 0; i < prob.n(); ++i) {
    for (std::size_t j = 0; j < prob.m(); ++j) {
      const double arg = cert.alpha[i] + params.lambda * prob.M(i, j) + cert.beta[j];
      const QExpResult denom = q_exp_checked(arg, params.q);
      const double form = denom.saturated ? 0.0 : scale / denom.value;
      worst = std::max(worst, std::abs(plan.P(i, j) - form));
    }
  }
  return worst;
}

struct RecoveredDuals {
  DualCertificate cert;
  double residual = 0.0;  ///< kkt_form_residual at the recovered duals
  bool unique = true;     ///< false when the positive support graph is disconnected
};

namespace detail {

/// Gaussian elimination with partial pivoting; A is dense square row-major.
inline Vector solve_dense(Matrix a, Vector b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t i = col + 1; i < n; ++i)
      if (std::abs(a(i, col)) > std::abs(a(pivot, col))) pivot = i;
    if (std::abs(a(pivot, col)) < 1e-14) throw std::runtime_error("solve_dense: singular system");
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(col, j), a(pivot, j));
      std::swap(b[col], b[pivot]);
    }
    for (std::size_t i = col + 1; i < n; ++i) {
      const double f = a(i, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t j = col; j < n; ++j) a(i, j) -= f * a(col, j);
      b[i] -= f * b[col];
    }
  }
  Vector x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double acc = b[i];
    for (std::size_t j = i + 1; j < n; ++j) acc -= a(i, j) * x[j];
    x[i] = acc / a(i, i);
  }
  return x;
}

}  // namespace detail

/// Inverts the stationarity form on the strictly positive support of P:
/// alpha_i + beta_j must equal log_q(exp_q(-1)/p_ij) - lambda m_ij there.
/// Solved as a least-squares problem (the shift direction pinned by alpha = 0
/// on the anchor row of each support component) and canonicalized to
/// alpha[0] = 0 when row 0 carries support. A disconnected support graph
/// leaves per-component shifts undetermined and is flagged.
/// Cells below support_floor are treated as boundary cells: for q > 1 the
/// optimum may truncate there, where stationarity is an inequality, so they
/// must not enter the equality fit.
inline RecoveredDuals recover_duals(const TransportPlan& plan, const TransportProblem& prob,
                                    const QParams& params, double support_floor = 1e-9) {
  params.validate();
  if (!(params.q > 0.0)) throw std::domain_error("recover_duals: defined for q > 0 only");
  const std::size_t n = prob.n(), m = prob.m();
  const double scale = q_exp(-1.0, params.q);

  // Support graph over n row nodes and m column nodes.
  std::vector<std::vector<std::size_t>> row_adj(n), col_adj(m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (plan.P(i, j) > support_floor) {
        row_adj[i].push_back(j);
        col_adj[j].push_back(i);
      }

  // Connected components via BFS; component id per node, -1 for isolated.
  std::vector<int> row_comp(n, -1), col_comp(m, -1);
  int components = 0;
  for (std::size_t start = 0; start < n; ++start) {
    if (row_comp[start] != -1 || row_adj[start].empty()) continue;
    const int id = components++;
    std::vector<std::size_t> queue = {start};
    row_comp[start] = id;
    while (!queue.empty()) {
      const std::size_t i = queue.back();
      queue.pop_back();
      for (std::size_t j : row_adj[i]) {
        if (col_comp[j] != -1) continue;
        col_comp[j] = id;
        for (std::size_t i2 : col_adj[j]) {
          if (row_comp[i2] != -1) continue;
          row_comp[i2] = id;
          queue.push_back(i2);
        }
      }
    }
  }
  if (components == 0) throw std::runtime_error("recover_duals: plan has empty support");

  // Unknowns: alpha_1..alpha_{n-1} per component anchor convention plus all
  // beta. One alpha per component is pinned to zero to remove the shift.
  std::vector<int> alpha_var(n, -1), beta_var(m, -1);
  std::vector<bool> component_anchored(static_cast<std::size_t>(components), false);
  int vars = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (row_comp[i] == -1) continue;
    const auto id = static_cast<std::size_t>(row_comp[i]);
    if (!component_anchored[id]) {
      component_anchored[id] = true;  // alpha_i = 0 anchors this component
    } else {
      alpha_var[i] = vars++;
    }
  }
  for (std::size_t j = 0; j < m; ++j)
    if (col_comp[j] != -1) beta_var[j] = vars++;

  // Normal equations for sum over support of (alpha_i + beta_j - s_ij)^2.
  Matrix ata(static_cast<std::size_t>(vars), static_cast<std::size_t>(vars), 0.0);
  Vector atb(static_cast<std::size_t>(vars), 0.0);
  auto add_entry = [&](int vi, int vj, double target) {
    // Row of the design matrix has a 1 at vi and vj (when >= 0).
    const int idx[2] = {vi, vj};
    for (int a = 0; a < 2; ++a) {
      if (idx[a] < 0) continue;
      atb[static_cast<std::size_t>(idx[a])] += target;
      for (int b = 0; b < 2; ++b) {
        if (idx[b] < 0) continue;
        ata(static_cast<std::size_t>(idx[a]), static_cast<std::size_t>(idx[b])) += 1.0;
      }
    }
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : row_adj[i]) {
      const double s = q_log(scale / plan.P(i, j), params.q) - params.lambda * prob.M(i, j);
      add_entry(alpha_var[i], beta_var[j], s);
    }
  }
  Vector solution;
  if (vars > 0) {
    // Tiny Tikhonov term keeps duplicated-row degeneracies factorizable.
    for (int d = 0; d < vars; ++d) ata(static_cast<std::size_t>(d), static_cast<std::size_t>(d)) += 1e-12;
    solution = detail::solve_dense(std::move(ata), std::move(atb));
  }

  RecoveredDuals out;
  out.unique = components == 1;
  out.cert.alpha.assign(n, 0.0);
  out.cert.beta.assign(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (alpha_var[i] >= 0) out.cert.alpha[i] = solution[static_cast<std::size_t>(alpha_var[i])];
  for (std::size_t j = 0; j < m; ++j)
    if (beta_var[j] >= 0) out.cert.beta[j] = solution[static_cast<std::size_t>(beta_var[j])];

  // Plan-space polish: the log_q-space fit is exact on comfortable support,
  // but near the q-exponential pole its micro-errors blow up into macro form
  // values on truncated cells (the form is a 1/(q-1) root of the argument
  // gap). Damped Gauss-Newton on p_ij - form(alpha, beta) over all cells
  // fixes the certificate where consistent duals exist; anchors stay pinned
  // so the shift direction remains removed.
  if (vars > 0) {
    auto residual_and_jacobian = [&](const DualCertificate& cert, Vector& resid,
                                     std::vector<std::vector<std::pair<int, double>>>& rows) {
      resid.clear();
      rows.clear();
      double worst = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          const double arg = cert.alpha[i] + params.lambda * prob.M(i, j) + cert.beta[j];
          const QExpResult v = q_exp_checked(arg, params.q);
          double form = 0.0, dform = 0.0;
          if (!v.saturated && v.value > 0.0) {
            form = scale / v.value;
            // d form / d arg = -scale * exp_q(arg)^{q-2}
            dform = -scale * std::pow(v.value, params.q - 2.0);
          }
          const double r_cell = plan.P(i, j) - form;
          worst = std::max(worst, std::abs(r_cell));
          resid.push_back(r_cell);
          std::vector<std::pair<int, double>> row;
          if (alpha_var[i] >= 0 && dform != 0.0) row.emplace_back(alpha_var[i], dform);
          if (beta_var[j] >= 0 && dform != 0.0) row.emplace_back(beta_var[j], dform);
          rows.push_back(std::move(row));
        }
      }
      return worst;
    };

    Vector resid;
    std::vector<std::vector<std::pair<int, double>>> jrows;
    double current = residual_and_jacobian(out.cert, resid, jrows);
    double damping = 1e-10;
    for (int sweep = 0; sweep < 40 && current > 1e-13 && damping < 1e12; ++sweep) {
      Matrix jtj(static_cast<std::size_t>(vars), static_cast<std::size_t>(vars), 0.0);
      Vector jtr(static_cast<std::size_t>(vars), 0.0);
      for (std::size_t cell = 0; cell < resid.size(); ++cell) {
        for (const auto& [va, da] : jrows[cell]) {
          jtr[static_cast<std::size_t>(va)] += da * resid[cell];
          for (const auto& [vb, db] : jrows[cell])
            jtj(static_cast<std::size_t>(va), static_cast<std::size_t>(vb)) += da * db;
        }
      }
      const double trace_scale = [&] {
        double tr = 0.0;
        for (int d = 0; d < vars; ++d) tr += jtj(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
        return std::max(tr / vars, 1e-30);
      }();
      Matrix lhs = jtj;
      for (int d = 0; d < vars; ++d)
        lhs(static_cast<std::size_t>(d), static_cast<std::size_t>(d)) += damping * trace_scale;
      Vector step;
      try {
        step = detail::solve_dense(std::move(lhs), jtr);
      } catch (const std::runtime_error&) {
        break;
      }
      DualCertificate trial = out.cert;
      for (std::size_t i = 0; i < n; ++i)
        if (alpha_var[i] >= 0) trial.alpha[i] += step[static_cast<std::size_t>(alpha_var[i])];
      for (std::size_t j = 0; j < m; ++j)
        if (beta_var[j] >= 0) trial.beta[j] += step[static_cast<std::size_t>(beta_var[j])];
      Vector trial_resid;
      std::vector<std::vector<std::pair<int, double>>> trial_rows;
      const double trial_worst = residual_and_jacobian(trial, trial_resid, trial_rows);
      if (trial_worst < current) {
        out.cert = std::move(trial);
        resid = std::move(trial_resid);
        jrows = std::move(trial_rows);
        current = trial_worst;
        damping = std::max(damping * 0.25, 1e-12);
      } else {
        damping *= 10.0;
      }
    }
  }

  // Canonical shift: alpha[0] = 0 whenever row 0 carries support.
  if (!row_adj[0].empty() && out.cert.alpha[0] != 0.0) {
    const double shift = out.cert.alpha[0];
    const int id = row_comp[0];
    for (std::size_t i = 0; i < n; ++i)
      if (row_comp[i] == id) out.cert.alpha[i] -= shift;
    for (std::size_t j = 0; j < m; ++j)
      if (col_comp[j] == id) out.cert.beta[j] += shift;
  }

  out.residual = kkt_form_residual(plan, out.cert, prob, params);
  return out;
}

/// d^{lambda,q,beta}: the objective value shifted by (beta/lambda)(H_q(r) + H_q(c)).
/// With the optimal plan this is the metric-friendly variant of the distance:
/// the shift depends only on the marginals, so the optimal plan is the same
/// as for the plain objective. (An equivalent formulation constrains the
/// entropy surplus H_q(P) - H_q(r) - H_q(c) from below instead; its
/// constraint level is data-dependent and is deliberately not implemented.)
inline double beta_adjusted_distance(const TransportProblem& prob, const QParams& params,
                                     double beta_const, const TransportPlan& plan) {
  const double marginal_entropy = tsallis_entropy(prob.r, params.q).h_q + tsallis_entropy(prob.c, params.q).h_q;
  return trot_objective(plan, prob, params) + beta_const / params.lambda * marginal_entropy;
}

}  // namespace trot
