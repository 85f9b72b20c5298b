#pragma once

#include <algorithm>
#include <functional>
#include <ostream>
#include <vector>

#include "trot/matrix.hpp"

namespace trot {

enum class StepDecay { harmonic, sqrt };

/// Gradient-step schedule for the mirror-descent solver. t0 = 0 selects the
/// automatic choice 1 / (lambda * max M). Only the harmonic decay satisfies
/// the summability conditions the convergence statement asks for; sqrt decay
/// is exposed as a faster empirical alternative.
struct StepSchedule {
  double t0 = 0.0;
  StepDecay decay = StepDecay::harmonic;
};

struct SolverConfig {
  int max_outer_iters = 20000;
  int max_inner_iters = 20000;    ///< balancing iterations inside one projection
  double marginal_tol = 1e-8;     ///< L1 tolerance on each marginal
  double objective_tol = 1e-10;   ///< relative objective change per sweep
  double stationarity_tol = 1e-6; ///< plan-space certificate bar for the mirror-descent solver
  StepSchedule step_schedule{};
  bool production_mods = true;    ///< balancing-speed modifications toggle

  /// Optional per-sweep observer (current coupling, sweep index). Used by
  /// tests and diagnostics; must not mutate the iterate.
  std::function<void(const Matrix&, int)> on_sweep;

  void validate() const {
    if (max_outer_iters < 1) throw std::invalid_argument("SolverConfig: max_outer_iters must be >= 1");
    if (!(marginal_tol > 0.0)) throw std::invalid_argument("SolverConfig: marginal_tol must be > 0");
    if (!(objective_tol > 0.0)) throw std::invalid_argument("SolverConfig: objective_tol must be > 0");
  }
};

/// Per-solve diagnostics: one entry per sweep. The objective column records
/// the problem objective of the current iterate (the balancing solvers start
/// at the unconstrained kernel optimum and climb toward the constrained
/// value; the per-sweep descent certificate for the q in (0,1) solver lives
/// in auxiliary_values instead).
struct SolveTrace {
  int iterations = 0;
  std::vector<double> objective_history;
  std::vector<double> row_residual_history;
  std::vector<double> col_residual_history;
  std::vector<double> auxiliary_values;  ///< A(P, y) per sweep; populated by the q in (0,1) solver only
  bool converged = false;

  std::vector<double> residual_history() const {
    std::vector<double> out(row_residual_history.size());
    for (std::size_t k = 0; k < out.size(); ++k)
      out[k] = std::max(row_residual_history[k],
                        k < col_residual_history.size() ? col_residual_history[k] : 0.0);
    return out;
  }

  void record(double objective, double row_res, double col_res) {
    objective_history.push_back(objective);
    row_residual_history.push_back(row_res);
    col_residual_history.push_back(col_res);
    iterations = static_cast<int>(objective_history.size());
  }
};

/// JSON-lines export: one record per sweep. "aux" is null where unused.
inline void write_trace_jsonl(std::ostream& os, const SolveTrace& trace) {
  const auto old_precision = os.precision(17);
  for (std::size_t k = 0; k < trace.objective_history.size(); ++k) {
    os << "{\"iter\":" << k + 1;
    os << ",\"objective\":" << trace.objective_history[k];
    os << ",\"row_residual\":" << trace.row_residual_history[k];
    os << ",\"col_residual\":" << trace.col_residual_history[k];
    if (k < trace.auxiliary_values.size())
      os << ",\"aux\":" << trace.auxiliary_values[k];
    else
      os << ",\"aux\":null";
    os << "}\n";
  }
  os.precision(old_precision);
}

}  // namespace trot
