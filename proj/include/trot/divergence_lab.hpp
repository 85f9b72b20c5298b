#pragma once

#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <stdexcept>

#include "trot/matrix.hpp"
#include "trot/qmath.hpp"
#include "trot/rng.hpp"
#include "trot/solvers.hpp"
#include "trot/transport.hpp"

// Harnesses for the metric-side properties of the regularized distances:
// plan composition through a shared middle marginal, triangle-inequality
// sweeps for the beta-adjusted distance and the weak identity of the
// indiscernibles at beta = 1/2.
namespace trot::lab {

struct GluedPlan {
  Matrix S;
};

/// Compose P in U(x, y) with Q in U(y, z) through the shared middle marginal:
/// s_ik = sum_j p_ij q_jk / y_j, with the j-term dropped where y_j = 0.
/// The result lands in U(x, z).
inline GluedPlan glue(const Matrix& p, const Matrix& q, const Vector& y, double tol = 1e-8) {
  if (p.cols() != y.size() || q.rows() != y.size())
    throw std::invalid_argument("glue: middle marginal length mismatch");
  if (l1_distance(col_sums(p), y) > tol || l1_distance(row_sums(q), y) > tol)
    throw std::invalid_argument("glue: plans do not share the middle marginal");
  GluedPlan out{Matrix(p.rows(), q.cols(), 0.0)};
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (y[j] == 0.0) continue;
    for (std::size_t i = 0; i < p.rows(); ++i) {
      const double pij = p(i, j);
      if (pij == 0.0) continue;
      for (std::size_t k = 0; k < q.cols(); ++k) out.S(i, k) += pij * q(j, k) / y[j];
    }
  }
  return out;
}

/// H_q(S) - H_q(x) - H_q(z) >= H_q(P) - H_q(x) - H_q(y), for q >= 1.
inline bool entropy_monotonicity_check(const Matrix& p, const Matrix& q_plan, const Matrix& s,
                                       const Vector& x, const Vector& y, const Vector& z, double q,
                                       double slack = 1e-10) {
  if (!(q >= 1.0)) throw std::invalid_argument("entropy_monotonicity_check: requires q >= 1");
  (void)q_plan;
  const double lhs = tsallis_entropy(s, q).h_q - tsallis_entropy(x, q).h_q - tsallis_entropy(z, q).h_q;
  const double rhs = tsallis_entropy(p, q).h_q - tsallis_entropy(x, q).h_q - tsallis_entropy(y, q).h_q;
  return lhs >= rhs - slack;
}

inline bool is_metric_matrix(const Matrix& m, double tol = 1e-12) {
  if (m.rows() != m.cols()) return false;
  const std::size_t n = m.rows();
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(m(i, i)) > tol) return false;
    for (std::size_t j = 0; j < n; ++j) {
      if (m(i, j) < -tol || std::abs(m(i, j) - m(j, i)) > tol) return false;
      for (std::size_t k = 0; k < n; ++k)
        if (m(i, j) > m(i, k) + m(k, j) + tol) return false;
    }
  }
  return true;
}

/// Pairwise Euclidean distances of random points in the plane: metric by
/// construction.
inline Matrix random_metric_matrix(std::size_t n, Rng& rng) {
  Matrix pts(n, 2);
  for (auto& v : pts) v = rng.uniform();
  Matrix m(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = pts(i, 0) - pts(j, 0), dy = pts(i, 1) - pts(j, 1);
      m(i, j) = std::sqrt(dx * dx + dy * dy);
    }
  return m;
}

struct SweepReport {
  int trials = 0;
  int violations = 0;
  double max_violation = 0.0;
};

inline nlohmann::json sweep_report_to_json(const SweepReport& report) {
  return nlohmann::json{
      {"trials", report.trials}, {"violations", report.violations}, {"max_violation", report.max_violation}};
}

namespace detail {

inline double beta_distance(const Matrix& m, const Vector& a, const Vector& b, double beta_const,
                            const QParams& params, const SolverConfig& cfg) {
  TransportProblem prob{a, b, m};
  auto res = solve(prob, params, cfg);
  return beta_adjusted_distance(prob, params, beta_const, res.plan);
}

inline SolverConfig sweep_config() {
  SolverConfig cfg;
  cfg.marginal_tol = 1e-11;
  cfg.objective_tol = 1e-13;
  cfg.max_inner_iters = 100000;
  cfg.step_schedule.decay = StepDecay::sqrt;
  return cfg;
}

}  // namespace detail

/// Triangle-inequality sweep for the beta-adjusted distance at q = 1:
/// d(x, z) <= d(x, y) + d(y, z) over random Dirichlet triples. A violation
/// beyond `tol` counts; the worst excess is reported.
inline SweepReport triangle_sweep(const Matrix& metric, double beta_const, double lambda, int trials,
                                  std::uint64_t seed, double tol = 1e-8) {
  if (!is_metric_matrix(metric, 1e-9)) throw std::invalid_argument("triangle_sweep: matrix is not a metric");
  const QParams params{1.0, lambda};
  const auto cfg = detail::sweep_config();
  Rng rng(seed);
  SweepReport report{trials, 0, 0.0};
  for (int t = 0; t < trials; ++t) {
    const Vector x = rng.dirichlet(metric.rows());
    const Vector y = rng.dirichlet(metric.rows());
    const Vector z = rng.dirichlet(metric.rows());
    const double dxz = detail::beta_distance(metric, x, z, beta_const, params, cfg);
    const double dxy = detail::beta_distance(metric, x, y, beta_const, params, cfg);
    const double dyz = detail::beta_distance(metric, y, z, beta_const, params, cfg);
    const double excess = dxz - dxy - dyz;
    if (excess > tol) {
      report.violations += 1;
      report.max_violation = std::max(report.max_violation, excess);
    }
  }
  return report;
}

/// Weak identity of the indiscernibles at beta = 1/2: d^{lambda,q,1/2}(r, r)
/// must not exceed zero (the diagonal no-transport plan already achieves 0).
inline bool weak_indiscernibles_check(const Vector& r, const Matrix& metric, double lambda, double q,
                                      double tol = 1e-10) {
  if (!(q >= 1.0)) throw std::invalid_argument("weak_indiscernibles_check: requires q >= 1");
  if (!is_metric_matrix(metric, 1e-9)) throw std::invalid_argument("weak_indiscernibles_check: matrix is not a metric");
  const QParams params{q, lambda};
  const double d = detail::beta_distance(metric, r, r, 0.5, params, detail::sweep_config());
  return d <= tol;
}

}  // namespace trot::lab
