#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "trot/matrix.hpp"
#include "trot/transport.hpp"

// Independent reference computations the solver tests are checked against.
// Everything here recomputes objectives and gradients from first principles
// (plain std::pow forms) so the oracles share no iteration logic with the
// solvers they certify.
namespace trot_test {

/// Exhaustive vertex enumeration for the transportation LP: every basis is a
/// spanning tree of the bipartite graph with n + m - 1 cells; flows follow by
/// peeling leaves. Feasible (nonnegative) bases are vertices of U(r, c).
/// Exponential in the support size; intended for n, m <= 4.
inline double lp_vertex_enumeration(const trot::TransportProblem& prob) {
  const std::size_t n = prob.n(), m = prob.m();
  const std::size_t cells = n * m, basis_size = n + m - 1;
  std::vector<std::size_t> pick(basis_size);
  for (std::size_t k = 0; k < basis_size; ++k) pick[k] = k;

  double best = std::numeric_limits<double>::infinity();
  auto evaluate = [&]() {
    // Tree check + flow solve by leaf peeling over n row + m column nodes.
    std::vector<int> degree(n + m, 0);
    for (std::size_t k : pick) {
      degree[k / m] += 1;
      degree[n + k % m] += 1;
    }
    std::vector<double> need(n + m);
    for (std::size_t i = 0; i < n; ++i) need[i] = prob.r[i];
    for (std::size_t j = 0; j < m; ++j) need[n + j] = prob.c[j];

    std::vector<std::size_t> remaining(pick.begin(), pick.end());
    std::vector<double> flow(basis_size, 0.0);
    std::vector<bool> used(basis_size, false);
    for (std::size_t round = 0; round < basis_size; ++round) {
      bool progressed = false;
      for (std::size_t k = 0; k < basis_size && !progressed; ++k) {
        if (used[k]) continue;
        const std::size_t row = remaining[k] / m, col = n + remaining[k] % m;
        const bool row_leaf = degree[row] == 1, col_leaf = degree[col] == 1;
        if (!row_leaf && !col_leaf) continue;
        const std::size_t leaf = row_leaf ? row : col;
        const std::size_t other = row_leaf ? col : row;
        flow[k] = need[leaf];
        need[other] -= flow[k];
        need[leaf] = 0.0;
        degree[row] -= 1;
        degree[col] -= 1;
        used[k] = true;
        progressed = true;
      }
      if (!progressed) return;  // cycle: not a tree basis
    }
    double cost = 0.0;
    for (std::size_t k = 0; k < basis_size; ++k) {
      if (flow[k] < -1e-12) return;  // infeasible basis
      cost += std::max(flow[k], 0.0) * prob.M.data()[remaining[k]];
    }
    best = std::min(best, cost);
  };

  // Lexicographic subsets of size basis_size.
  while (true) {
    evaluate();
    std::size_t k = basis_size;
    while (k-- > 0) {
      if (pick[k] != cells - basis_size + k) {
        ++pick[k];
        for (std::size_t t = k + 1; t < basis_size; ++t) pick[t] = pick[t - 1] + 1;
        break;
      }
      if (k == 0) return best;
    }
  }
}

/// Objective of the regularized problem computed from scratch.
inline double reference_objective(const trot::Matrix& plan, const trot::TransportProblem& prob,
                                  const trot::QParams& params) {
  double cost = 0.0, entropy = 0.0;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const double p = plan.data()[k];
    cost += p * prob.M.data()[k];
    if (std::abs(params.q - 1.0) < 1e-9) {
      if (p > 0.0) entropy -= p * std::log(p);
    } else {
      entropy += ((p > 0.0 ? std::pow(p, params.q) : 0.0) - p) / (1.0 - params.q);
    }
  }
  return cost - entropy / params.lambda;
}

/// Active-set projected gradient over U(r, c): steps live on the affine hull
/// with zero-pinned coordinates on the working set, so boundary-touching
/// optima (common for q > 1, where the stationarity form truncates) are
/// reached exactly. Independent route to the optimum used to certify the
/// q != 1 solvers. Tight g_tol drives the plan error well below the
/// agreement tolerances the tests assert.
inline trot::Matrix projected_gradient_reference(const trot::TransportProblem& prob,
                                                 const trot::QParams& params,
                                                 double g_tol = 1e-9, int max_iters = 500000) {
  const std::size_t n = prob.n(), m = prob.m();
  const bool interior_only = params.q < 1.0 + 1e-9;  // entropic barrier: no boundary contact
  const double active_tol = 1e-13;
  trot::Matrix plan = trot::outer(prob.r, prob.c);

  auto gradient = [&](const trot::Matrix& p) {
    trot::Matrix g(n, m);
    for (std::size_t k = 0; k < p.size(); ++k) {
      double reg;
      if (std::abs(params.q - 1.0) < 1e-9) {
        reg = std::log(p.data()[k]);
      } else {
        const double pv = p.data()[k];
        const double power = pv > 0.0 ? std::pow(pv, params.q - 1.0) : (params.q > 1.0 ? 0.0 : 1e300);
        reg = (params.q * power - 1.0) / (1.0 - params.q);
      }
      g.data()[k] = prob.M.data()[k] - reg / params.lambda;
    }
    return g;
  };

  // Projection of G onto {D : D 1 = 0, D^T 1 = 0, D = 0 on the active set}.
  // Free cells get D = G - u_i - v_j with multipliers from the normal
  // equations of the marginal constraints restricted to the free pattern.
  auto constrained_project = [&](const trot::Matrix& g, const std::vector<bool>& active,
                                 trot::Vector& u, trot::Vector& v) {
    const std::size_t vars = n + m;
    trot::Matrix ata(vars, vars, 0.0);
    trot::Vector atb(vars, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        if (active[i * m + j]) continue;
        ata(i, i) += 1.0;
        ata(n + j, n + j) += 1.0;
        ata(i, n + j) += 1.0;
        ata(n + j, i) += 1.0;
        atb[i] += g(i, j);
        atb[n + j] += g(i, j);
      }
    for (std::size_t d = 0; d < vars; ++d) ata(d, d) += 1e-12;
    // Solve by Gauss elimination (copy of the library routine semantics, but
    // local to keep the oracle self-contained).
    trot::Matrix a = ata;
    trot::Vector b = atb;
    for (std::size_t col = 0; col < vars; ++col) {
      std::size_t pivot = col;
      for (std::size_t i2 = col + 1; i2 < vars; ++i2)
        if (std::abs(a(i2, col)) > std::abs(a(pivot, col))) pivot = i2;
      if (pivot != col) {
        for (std::size_t j2 = 0; j2 < vars; ++j2) std::swap(a(col, j2), a(pivot, j2));
        std::swap(b[col], b[pivot]);
      }
      for (std::size_t i2 = col + 1; i2 < vars; ++i2) {
        const double fct = a(i2, col) / a(col, col);
        if (fct == 0.0) continue;
        for (std::size_t j2 = col; j2 < vars; ++j2) a(i2, j2) -= fct * a(col, j2);
        b[i2] -= fct * b[col];
      }
    }
    trot::Vector x(vars, 0.0);
    for (std::size_t i2 = vars; i2-- > 0;) {
      double acc = b[i2];
      for (std::size_t j2 = i2 + 1; j2 < vars; ++j2) acc -= a(i2, j2) * x[j2];
      x[i2] = acc / a(i2, i2);
    }
    u.assign(x.begin(), x.begin() + static_cast<long>(n));
    v.assign(x.begin() + static_cast<long>(n), x.end());
    trot::Matrix d(n, m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        if (!active[i * m + j]) d(i, j) = g(i, j) - u[i] - v[j];
    return d;
  };

  double step = 1.0;
  double f_cur = reference_objective(plan, prob, params);
  for (int it = 0; it < max_iters; ++it) {
    const trot::Matrix g = gradient(plan);

    std::vector<bool> active(n * m, false);
    if (!interior_only)
      for (std::size_t k = 0; k < plan.size(); ++k) active[k] = plan.data()[k] <= active_tol;
    trot::Vector u, v;
    trot::Matrix dir = constrained_project(g, active, u, v);
    // Release active cells whose reduced gradient wants mass back.
    for (std::size_t pass = 0; pass < n * m; ++pass) {
      bool released = false;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
          if (active[i * m + j] && g(i, j) - u[i] - v[j] < -1e-12) {
            active[i * m + j] = false;
            released = true;
          }
      if (!released) break;
      dir = constrained_project(g, active, u, v);
    }

    double g_inf = 0.0, g_norm2 = 0.0;
    for (double dv : dir) {
      g_inf = std::max(g_inf, std::abs(dv));
      g_norm2 += dv * dv;
    }
    if (g_inf < g_tol) break;

    // Largest step keeping the iterate nonnegative (strictly positive when
    // the barrier forbids the boundary).
    double step_cap = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < plan.size(); ++k)
      if (dir.data()[k] > 0.0) step_cap = std::min(step_cap, plan.data()[k] / dir.data()[k]);
    double s = std::min(step * 2.0, (interior_only ? 0.95 : 1.0) * step_cap);

    trot::Matrix candidate = plan;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      for (std::size_t k = 0; k < plan.size(); ++k)
        candidate.data()[k] = std::max(plan.data()[k] - s * dir.data()[k], 0.0);
      const double f_new = reference_objective(candidate, prob, params);
      if (f_new <= f_cur - 1e-4 * s * g_norm2) {
        plan = candidate;
        f_cur = f_new;
        step = s;
        accepted = true;
        break;
      }
      s *= 0.5;
    }
    if (!accepted) break;  // line search exhausted: at numerical stationarity
  }
  return plan;
}

/// Bregman distance D_phi(r c^T || P) with phi = -H_q: the Lyapunov function
/// the second-order balancing steps provably decrease (their auxiliary value
/// equals the per-step drop). Used by the monotonicity tests.
inline double bregman_to_product(const trot::Matrix& plan, const trot::TransportProblem& prob,
                                 double q) {
  const trot::Matrix target = trot::outer(prob.r, prob.c);
  auto phi = [&](const trot::Matrix& x) {
    double acc = 0.0;
    for (double v : x) {
      if (std::abs(q - 1.0) < 1e-9) {
        if (v > 0.0) acc += v * std::log(v);
      } else {
        acc -= ((v > 0.0 ? std::pow(v, q) : 0.0) - v) / (1.0 - q);
      }
    }
    return acc;
  };
  double inner = 0.0;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const double p = plan.data()[k];
    double grad_phi;
    if (std::abs(q - 1.0) < 1e-9) {
      grad_phi = p > 0.0 ? std::log(p) + 1.0 : -1e300;
    } else {
      grad_phi = -(q * (p > 0.0 ? std::pow(p, q - 1.0) : 0.0) - 1.0) / (1.0 - q);
    }
    inner += grad_phi * (target.data()[k] - p);
  }
  return phi(target) - phi(plan) - inner;
}

/// Central finite differences of the reference objective at a positive plan.
inline trot::Matrix finite_difference_gradient(const trot::Matrix& plan,
                                               const trot::TransportProblem& prob,
                                               const trot::QParams& params, double h = 1e-6) {
  trot::Matrix grad(plan.rows(), plan.cols());
  trot::Matrix work = plan;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const double p = plan.data()[k];
    const double dp = h * std::max(1.0, std::abs(p));
    work.data()[k] = p + dp;
    const double up = reference_objective(work, prob, params);
    work.data()[k] = p - dp;
    const double down = reference_objective(work, prob, params);
    work.data()[k] = p;
    grad.data()[k] = (up - down) / (2.0 * dp);
  }
  return grad;
}

/// Generalized KL divergence written out directly (limit check target for the
/// relative q-entropy).
inline double direct_generalized_kl(const trot::Matrix& p, const trot::Matrix& r) {
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double pv = p.data()[k], rv = r.data()[k];
    if (pv == 0.0) {
      acc += rv;
    } else if (rv == 0.0) {
      return std::numeric_limits<double>::infinity();
    } else {
      acc += pv * std::log(pv / rv) - pv + rv;
    }
  }
  return acc;
}

}  // namespace trot_test
