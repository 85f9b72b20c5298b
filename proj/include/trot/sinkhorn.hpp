#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "trot/matrix.hpp"
#include "trot/qmath.hpp"
#include "trot/solver_types.hpp"
#include "trot/transport.hpp"

namespace trot {

struct SinkhornResult {
  TransportPlan plan;
  SolveTrace trace;
  Vector log_row_scale;  ///< filled by the log-domain iteration
  Vector log_col_scale;
};

namespace detail {

inline TransportProblem balancing_problem(const Matrix& k, const Vector& r, const Vector& c) {
  // The residual bookkeeping in make_plan only needs shapes and marginals.
  TransportProblem prob;
  prob.r = r;
  prob.c = c;
  prob.M = Matrix(k.rows(), k.cols(), 0.0);
  return prob;
}

}  // namespace detail

/// Matrix balancing: find diag(u) K diag(v) with marginals (r, c) within tol
/// in L1. Serves both as the q = 1 solver (K = Gibbs kernel) and as the KL
/// projection step of the mirror-descent solver. A row or column whose kernel
/// support vanishes while its marginal is positive cannot be balanced and is
/// reported by index. The trace objective is the generalized KL divergence of
/// the current iterate to the kernel.
inline SinkhornResult sinkhorn_knopp(const Matrix& kernel, const Vector& r, const Vector& c,
                                     double tol, int max_iters) {
  if (kernel.rows() != r.size() || kernel.cols() != c.size())
    throw std::invalid_argument("sinkhorn_knopp: kernel shape does not match marginals");
  const std::size_t n = r.size(), m = c.size();
  Vector u(n, 1.0), v(m, 1.0);
  Matrix plan = kernel;
  SolveTrace trace;

  auto rebuild_plan = [&]() {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) plan(i, j) = u[i] * kernel(i, j) * v[j];
  };
  auto record = [&]() {
    const double row_res = l1_distance(row_sums(plan), r);
    const double col_res = l1_distance(col_sums(plan), c);
    trace.record(tsallis_relative_entropy(plan, kernel, 1.0), row_res, col_res);
    return row_res < tol && col_res < tol;
  };

  for (int sweep = 0; sweep < max_iters; ++sweep) {
    if (record()) {
      trace.converged = true;
      break;
    }
    // Row scaling u <- r / (K v), then column scaling v <- c / (K^T u).
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += kernel(i, j) * v[j];
      if (acc <= 0.0) {
        if (r[i] > 0.0)
          throw std::runtime_error("sinkhorn_knopp: row " + std::to_string(i) + " starved (no kernel support)");
        u[i] = 0.0;
      } else {
        u[i] = r[i] / acc;
      }
    }
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += kernel(i, j) * u[i];
      if (acc <= 0.0) {
        if (c[j] > 0.0)
          throw std::runtime_error("sinkhorn_knopp: column " + std::to_string(j) + " starved (no kernel support)");
        v[j] = 0.0;
      } else {
        v[j] = c[j] / acc;
      }
    }
    rebuild_plan();
  }
  if (!trace.converged) trace.converged = record();

  return SinkhornResult{make_plan(detail::balancing_problem(kernel, r, c), std::move(plan)), std::move(trace)};
}

/// Log-domain balancing on logK (entries may be -inf); used when the kernel
/// underflows in the plain domain. Same contract as sinkhorn_knopp.
inline SinkhornResult sinkhorn_log(const Matrix& log_kernel, const Vector& r, const Vector& c,
                                   double tol, int max_iters) {
  if (log_kernel.rows() != r.size() || log_kernel.cols() != c.size())
    throw std::invalid_argument("sinkhorn_log: kernel shape does not match marginals");
  const std::size_t n = r.size(), m = c.size();
  const double neg_inf = -std::numeric_limits<double>::infinity();
  Vector f(n, 0.0), g(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (r[i] == 0.0) f[i] = neg_inf;
  for (std::size_t j = 0; j < m; ++j)
    if (c[j] == 0.0) g[j] = neg_inf;

  double kernel_mass = 0.0;
  for (double lk : log_kernel) kernel_mass += std::isfinite(lk) ? std::exp(lk) : 0.0;

  Matrix plan(n, m, 0.0);
  auto rebuild_plan = [&]() {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double e = f[i] + log_kernel(i, j) + g[j];
        plan(i, j) = std::isfinite(e) ? std::exp(e) : 0.0;
      }
  };
  auto logsumexp_row = [&](std::size_t i) {
    double hi = neg_inf;
    for (std::size_t j = 0; j < m; ++j) hi = std::max(hi, log_kernel(i, j) + g[j]);
    if (!std::isfinite(hi)) return neg_inf;
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += std::exp(log_kernel(i, j) + g[j] - hi);
    return hi + std::log(acc);
  };
  auto logsumexp_col = [&](std::size_t j) {
    double hi = neg_inf;
    for (std::size_t i = 0; i < n; ++i) hi = std::max(hi, log_kernel(i, j) + f[i]);
    if (!std::isfinite(hi)) return neg_inf;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::exp(log_kernel(i, j) + f[i] - hi);
    return hi + std::log(acc);
  };

  SolveTrace trace;
  auto record = [&]() {
    const double row_res = l1_distance(row_sums(plan), r);
    const double col_res = l1_distance(col_sums(plan), c);
    // KL to the kernel via potentials: sum p (f_i + g_j) - sum p + sum k.
    double kl = kernel_mass;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        if (plan(i, j) > 0.0) kl += plan(i, j) * (f[i] + g[j] - 1.0);
    trace.record(kl, row_res, col_res);
    return row_res < tol && col_res < tol;
  };

  rebuild_plan();
  for (int sweep = 0; sweep < max_iters; ++sweep) {
    if (record()) {
      trace.converged = true;
      break;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (r[i] == 0.0) continue;
      const double lse = logsumexp_row(i);
      if (!std::isfinite(lse))
        throw std::runtime_error("sinkhorn_log: row " + std::to_string(i) + " starved (no kernel support)");
      f[i] = std::log(r[i]) - lse;
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (c[j] == 0.0) continue;
      const double lse = logsumexp_col(j);
      if (!std::isfinite(lse))
        throw std::runtime_error("sinkhorn_log: column " + std::to_string(j) + " starved (no kernel support)");
      g[j] = std::log(c[j]) - lse;
    }
    rebuild_plan();
  }
  if (!trace.converged) trace.converged = record();

  return SinkhornResult{make_plan(detail::balancing_problem(plan, r, c), std::move(plan)), std::move(trace),
                        std::move(f), std::move(g)};
}

}  // namespace trot
