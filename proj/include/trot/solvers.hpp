#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>

#include "trot/kl_trot.hpp"
#include "trot/lp_solver.hpp"
#include "trot/sinkhorn.hpp"
#include "trot/so_trot.hpp"
#include "trot/solver_types.hpp"
#include "trot/transport.hpp"

namespace trot {

struct SolveResult {
  TransportPlan plan;
  SolveTrace trace;
  std::optional<RecoveredDuals> duals;  ///< present for q > 0
};

/// The q = 1 regime: Sinkhorn on the Gibbs kernel, switching to the
/// log-domain iteration when lambda * max M would underflow the kernel.
inline SinkhornResult solve_sinkhorn(const TransportProblem& prob, const QParams& params,
                                     const SolverConfig& cfg = {}) {
  prob.validate();
  cfg.validate();
  const double scale = params.lambda * max_abs(prob.M);
  if (scale > 200.0) {
    Matrix log_kernel(prob.n(), prob.m());
    for (std::size_t k = 0; k < log_kernel.size(); ++k)
      log_kernel.data()[k] = -1.0 - params.lambda * prob.M.data()[k];
    return sinkhorn_log(log_kernel, prob.r, prob.c, cfg.marginal_tol, cfg.max_inner_iters);
  }
  const GibbsKernel kernel = build_gibbs_kernel(prob, params);
  return sinkhorn_knopp(kernel.u_tilde, prob.r, prob.c, cfg.marginal_tol, cfg.max_inner_iters);
}

/// Regime dispatcher: q = 0 -> exact LP, q = 1 -> Sinkhorn, q in (0,1) ->
/// second-order row balancing, q > 1 -> KL mirror descent. For q > 0 the
/// duals are recovered from the plan and the stationarity residual reported.
inline SolveResult solve(const TransportProblem& prob, const QParams& params, const SolverConfig& cfg = {}) {
  params.validate();
  if (params.q < 0.0) throw std::invalid_argument("solve: q < 0 is unsupported");

  SolveResult result;
  if (params.q < 1e-12) {
    auto lp = solve_exact_lp(prob, cfg);
    result.plan = std::move(lp.plan);
    result.trace = std::move(lp.trace);
    return result;  // no q-exponential stationarity form at q = 0
  }

  if (is_classical(params.q)) {
    auto sk = solve_sinkhorn(prob, params, cfg);
    result.plan = std::move(sk.plan);
    result.trace = std::move(sk.trace);
  } else if (params.q < 1.0) {
    auto so = solve_so_trot(prob, params, cfg);
    result.plan = std::move(so.plan);
    result.trace = std::move(so.trace);
  } else {
    auto kl = solve_kl_trot(prob, params, cfg);
    result.plan = std::move(kl.plan);
    result.trace = std::move(kl.trace);
  }
  result.duals = recover_duals(result.plan, prob, params);
  return result;
}

}  // namespace trot
