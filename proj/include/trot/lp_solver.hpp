#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "trot/matrix.hpp"
#include "trot/solver_types.hpp"
#include "trot/transport.hpp"

namespace trot {

struct LpResult {
  TransportPlan plan;
  SolveTrace trace;
  Vector u;     ///< row node potentials at optimality
  Vector v;     ///< column node potentials at optimality
  double cost = 0.0;
};

/// Exact transportation LP: min <P, M> over U(r, c), solved by network
/// simplex on the complete bipartite graph. The basis is a spanning tree of
/// n + m - 1 cells; Bland's rule (lowest-index entering and leaving arc)
/// prevents cycling on degenerate bases. Any optimal vertex is accepted.
inline LpResult solve_exact_lp(const TransportProblem& prob, const SolverConfig& cfg = {}) {
  cfg.validate();
  prob.validate();
  const std::size_t n = prob.n(), m = prob.m();
  double rs = 0.0, cs = 0.0;
  for (double x : prob.r) rs += x;
  for (double x : prob.c) cs += x;
  if (std::abs(rs - cs) > 1e-9)
    throw std::invalid_argument("solve_exact_lp: marginal sums differ, problem infeasible");

  struct Cell {
    std::size_t i, j;
    double flow;
  };
  std::vector<Cell> basis;
  basis.reserve(n + m - 1);
  std::vector<int> cell_to_basis(n * m, -1);

  auto add_basic = [&](std::size_t i, std::size_t j, double flow) {
    cell_to_basis[i * m + j] = static_cast<int>(basis.size());
    basis.push_back({i, j, flow});
  };

  // Northwest-corner start: walks from (0,0) to (n-1,m-1) adding exactly
  // n + m - 1 cells, zero-flow ones included on degenerate ties.
  {
    std::size_t i = 0, j = 0;
    double a = prob.r[0], b = prob.c[0];
    while (true) {
      add_basic(i, j, std::min(a, b));
      if (i == n - 1 && j == m - 1) break;
      if (a <= b && i < n - 1) {
        b -= a;
        ++i;
        a = prob.r[i];
      } else if (j < m - 1) {
        a -= b;
        ++j;
        b = prob.c[j];
      } else {
        b -= a;
        ++i;
        a = prob.r[i];
      }
    }
  }

  Vector u(n, 0.0), v(m, 0.0);
  std::vector<std::vector<std::size_t>> row_arcs(n), col_arcs(m);  // basis indices per node

  auto rebuild_adjacency = [&]() {
    for (auto& arcs : row_arcs) arcs.clear();
    for (auto& arcs : col_arcs) arcs.clear();
    for (std::size_t k = 0; k < basis.size(); ++k) {
      row_arcs[basis[k].i].push_back(k);
      col_arcs[basis[k].j].push_back(k);
    }
  };

  auto compute_potentials = [&]() {
    // Tree traversal from row 0 with u[0] = 0.
    std::vector<bool> row_done(n, false), col_done(m, false);
    std::vector<std::pair<bool, std::size_t>> stack;  // (is_row, index)
    u[0] = 0.0;
    row_done[0] = true;
    stack.emplace_back(true, 0);
    while (!stack.empty()) {
      auto [is_row, node] = stack.back();
      stack.pop_back();
      if (is_row) {
        for (std::size_t k : row_arcs[node]) {
          const auto& cell = basis[k];
          if (col_done[cell.j]) continue;
          v[cell.j] = prob.M(cell.i, cell.j) - u[cell.i];
          col_done[cell.j] = true;
          stack.emplace_back(false, cell.j);
        }
      } else {
        for (std::size_t k : col_arcs[node]) {
          const auto& cell = basis[k];
          if (row_done[cell.i]) continue;
          u[cell.i] = prob.M(cell.i, cell.j) - v[cell.j];
          row_done[cell.i] = true;
          stack.emplace_back(true, cell.i);
        }
      }
    }
  };

  const double eps = 1e-12 * (1.0 + max_abs(prob.M));
  SolveTrace trace;
  auto current_cost = [&]() {
    double acc = 0.0;
    for (const auto& cell : basis) acc += cell.flow * prob.M(cell.i, cell.j);
    return acc;
  };

  const int pivot_limit = std::max(cfg.max_outer_iters, 10000);
  int pivots = 0;
  bool optimal = false;
  while (pivots < pivot_limit) {
    rebuild_adjacency();
    compute_potentials();

    // Bland entering rule: first cell in row-major order with negative
    // reduced cost.
    std::size_t enter_i = 0, enter_j = 0;
    bool found = false;
    for (std::size_t i = 0; i < n && !found; ++i)
      for (std::size_t j = 0; j < m && !found; ++j)
        if (cell_to_basis[i * m + j] < 0 && prob.M(i, j) - u[i] - v[j] < -eps) {
          enter_i = i;
          enter_j = j;
          found = true;
        }
    if (!found) {
      optimal = true;
      break;
    }

    // Unique tree path from column enter_j back to row enter_i; the entering
    // arc closes the cycle. Parent pointers store the basis arc taken.
    std::vector<int> row_parent(n, -2), col_parent(m, -2);
    std::vector<std::pair<bool, std::size_t>> stack{{true, enter_i}};
    row_parent[enter_i] = -1;
    while (!stack.empty()) {
      auto [is_row, node] = stack.back();
      stack.pop_back();
      if (is_row) {
        for (std::size_t k : row_arcs[node]) {
          const auto& cell = basis[k];
          if (col_parent[cell.j] != -2) continue;
          col_parent[cell.j] = static_cast<int>(k);
          stack.emplace_back(false, cell.j);
        }
      } else {
        for (std::size_t k : col_arcs[node]) {
          const auto& cell = basis[k];
          if (row_parent[cell.i] != -2) continue;
          row_parent[cell.i] = static_cast<int>(k);
          stack.emplace_back(true, cell.i);
        }
      }
    }
    if (col_parent[enter_j] == -2) throw std::runtime_error("solve_exact_lp: basis lost tree connectivity");

    // Walk the path entering arc -> ... -> entering row; arcs alternate
    // sign starting with a minus on the first basis arc.
    std::vector<std::size_t> minus_arcs, plus_arcs;
    bool minus = true;
    bool at_col = true;
    std::size_t node = enter_j;
    while (true) {
      const int arc = at_col ? col_parent[node] : row_parent[node];
      if (arc == -1) break;  // reached the entering row
      (minus ? minus_arcs : plus_arcs).push_back(static_cast<std::size_t>(arc));
      node = at_col ? basis[static_cast<std::size_t>(arc)].i : basis[static_cast<std::size_t>(arc)].j;
      at_col = !at_col;
      minus = !minus;
    }

    double theta = std::numeric_limits<double>::infinity();
    for (std::size_t k : minus_arcs) theta = std::min(theta, basis[k].flow);
    // Bland leaving rule among ratio ties: lowest cell index.
    std::size_t leave = minus_arcs.front();
    bool have_leave = false;
    for (std::size_t k : minus_arcs) {
      if (basis[k].flow > theta) continue;
      if (!have_leave || basis[k].i * m + basis[k].j < basis[leave].i * m + basis[leave].j) {
        leave = k;
        have_leave = true;
      }
    }

    for (std::size_t k : minus_arcs) basis[k].flow -= theta;
    for (std::size_t k : plus_arcs) basis[k].flow += theta;

    // Swap leaving arc for the entering one.
    cell_to_basis[basis[leave].i * m + basis[leave].j] = -1;
    cell_to_basis[enter_i * m + enter_j] = static_cast<int>(leave);
    basis[leave] = {enter_i, enter_j, theta};

    ++pivots;
    trace.record(current_cost(), 0.0, 0.0);
  }

  Matrix flows(n, m, 0.0);
  for (const auto& cell : basis) flows(cell.i, cell.j) = std::max(cell.flow, 0.0);
  LpResult result{make_plan(prob, std::move(flows)), std::move(trace), std::move(u), std::move(v), 0.0};
  result.cost = frobenius_dot(result.plan.P, prob.M);
  result.trace.converged = optimal;
  result.trace.record(result.cost, result.plan.row_residual, result.plan.col_residual);
  return result;
}

}  // namespace trot
