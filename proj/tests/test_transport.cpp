#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "trot/serialization.hpp"
#include "trot/transport.hpp"

using namespace trot;
using doctest::Approx;

namespace {
TransportProblem tiny_problem(Vector r, Vector c, Matrix m) {
  TransportProblem prob{std::move(r), std::move(c), std::move(m)};
  prob.validate();
  return prob;
}
}  // namespace

TEST_CASE("problem validation catches malformed inputs") {
  CHECK_THROWS_AS(tiny_problem({0.6, 0.6}, {0.5, 0.5}, Matrix(2, 2, 0.0)), std::invalid_argument);
  CHECK_THROWS_AS(tiny_problem({-0.5, 1.5}, {0.5, 0.5}, Matrix(2, 2, 0.0)), std::invalid_argument);
  CHECK_THROWS_AS(tiny_problem({0.5, 0.5}, {0.5, 0.5}, Matrix(2, 3, 0.0)), std::invalid_argument);
  Matrix bad(2, 2, 0.0);
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(tiny_problem({0.5, 0.5}, {0.5, 0.5}, std::move(bad)), std::invalid_argument);
}

TEST_CASE("objective closed-form values") {
  SUBCASE("zero cost, product plan, q = 1: negative sum of marginal entropies") {
    const Vector r{0.2, 0.8}, c{0.3, 0.3, 0.4};
    auto prob = tiny_problem(r, c, Matrix(2, 3, 0.0));
    auto plan = make_plan(prob, outer(r, c));
    const double expect = -(tsallis_entropy(r, 1.0).h_q + tsallis_entropy(c, 1.0).h_q);
    CHECK(trot_objective(plan, prob, {1.0, 1.0}) == Approx(expect).epsilon(1e-12));
  }
  SUBCASE("huge lambda: the regularizer contribution vanishes") {
    auto prob = tiny_problem({0.5, 0.5}, {0.5, 0.5}, Matrix::from_rows({{0.0, 1.0}, {1.0, 0.0}}));
    auto plan = make_plan(prob, Matrix(2, 2, 0.25));
    const double lambda = 1e9;
    CHECK(std::abs(trot_objective(plan, prob, {1.0, lambda}) - frobenius_dot(plan.P, prob.M)) <=
          2.0 * std::log(4.0) / lambda);
  }
  SUBCASE("uniform 2x2 swap cost at q = 2") {
    auto prob = tiny_problem({0.5, 0.5}, {0.5, 0.5}, Matrix::from_rows({{0.0, 1.0}, {1.0, 0.0}}));
    auto plan = make_plan(prob, Matrix(2, 2, 0.25));
    CHECK(trot_objective(plan, prob, {2.0, 1.0}) == Approx(-0.25));
  }
}

TEST_CASE("Gibbs kernel closed-form values") {
  SUBCASE("zero costs give constant exp_q(-1)") {
    auto prob = tiny_problem({0.5, 0.5}, {0.5, 0.5}, Matrix(2, 2, 0.0));
    for (double q : {0.5, 1.0, 2.0}) {
      auto kernel = build_gibbs_kernel(prob, {q, 3.0});
      for (double v : kernel.u_tilde) CHECK(v == Approx(q_exp(-1.0, q)).epsilon(1e-14));
    }
  }
  SUBCASE("classical branch") {
    auto prob = tiny_problem({1.0}, {1.0}, Matrix(1, 1, 1.0));
    auto kernel = build_gibbs_kernel(prob, {1.0, 1.0});
    CHECK(kernel.u_tilde(0, 0) == Approx(std::exp(-2.0)).epsilon(1e-14));
  }
  SUBCASE("q = 0.5 closed form") {
    auto prob = tiny_problem({1.0}, {1.0}, Matrix(1, 1, 3.0));
    auto kernel = build_gibbs_kernel(prob, {0.5, 1.0});
    CHECK(kernel.u_tilde(0, 0) == Approx(0.04).epsilon(1e-14));
  }
  SUBCASE("entries vanish exactly where the q-exponential saturates") {
    auto prob = tiny_problem({0.5, 0.5}, {0.5, 0.5}, Matrix::from_rows({{0.1, 2.0}, {0.3, 0.2}}));
    auto kernel = build_gibbs_kernel(prob, {2.0, 1.0});  // pole at lambda * m = 1
    CHECK(kernel.u_tilde(0, 1) == 0.0);
    CHECK(kernel.u_tilde(0, 0) > 0.0);
    for (std::size_t k = 0; k < kernel.u_tilde.size(); ++k)
      CHECK(kernel.u_tilde.data()[k] <= q_exp(-1.0, 2.0) + 1e-15);
  }
}

TEST_CASE("escort divergence form matches the objective up to the kernel offset") {
  Rng rng(101);
  SUBCASE("identity of indiscernibles at the kernel") {
    auto prob = trot_test::random_problem(rng, 3, 4);
    for (double q : {0.5, 1.0, 2.0}) {
      auto kernel = build_gibbs_kernel(prob, {q, 2.0});
      auto plan = make_plan(prob, kernel.u_tilde);
      CHECK(escort_divergence_objective(plan, kernel, q) == Approx(0.0).scale(1.0));
    }
  }
  SUBCASE("identity over random feasible plans, q sweep") {
    const double qs[] = {0.3, 0.5, 0.8, 1.0, 1.5, 2.0, 4.0};
    for (int t = 0; t < 40; ++t) {
      auto prob = trot_test::random_problem(rng, 2 + rng.index(3), 2 + rng.index(3));
      auto plan = trot_test::random_feasible_plan(prob, rng);
      const double q = qs[t % 7];
      const QParams params{q, trot_test::safe_lambda(prob, q, rng)};
      auto kernel = build_gibbs_kernel(prob, params);
      const double via_escort =
          escort_divergence_objective(plan, kernel, q) / params.lambda + escort_offset(kernel);
      const double direct = trot_objective(plan, prob, params);
      CHECK(via_escort == Approx(direct).epsilon(1e-9));
    }
  }
  SUBCASE("q = 1 case is the generalized KL divergence to the kernel") {
    auto prob = trot_test::random_problem(rng, 3, 3);
    auto plan = trot_test::random_feasible_plan(prob, rng);
    auto kernel = build_gibbs_kernel(prob, {1.0, 2.0});
    CHECK(escort_divergence_objective(plan, kernel, 1.0) ==
          Approx(trot_test::direct_generalized_kl(plan.P, kernel.u_tilde)).epsilon(1e-10));
  }
  CHECK_THROWS_AS(
      escort_divergence_objective(TransportPlan{Matrix(1, 1, 1.0), 0, 0},
                                  GibbsKernel{Matrix(1, 1, 1.0), 0.5, 1.0}, -1.0),
      std::domain_error);
}

TEST_CASE("stationarity form residual: exact triples, shift invariance, generic misfit") {
  Rng rng(202);
  auto prob = trot_test::random_problem(rng, 4, 3);
  const QParams params{0.7, 2.5};
  Vector alpha(4), beta(3);
  for (auto& a : alpha) a = rng.uniform(0.0, 0.4);
  for (auto& b : beta) b = rng.uniform(0.0, 0.4);

  Matrix p(4, 3);
  const double scale = q_exp(-1.0, params.q);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      p(i, j) = scale / q_exp(alpha[i] + params.lambda * prob.M(i, j) + beta[j], params.q);
  auto plan = make_plan(prob, p);

  const DualCertificate cert{alpha, beta};
  CHECK(kkt_form_residual(plan, cert, prob, params) == Approx(0.0).scale(1.0));

  SUBCASE("compensating constant shift leaves the residual unchanged") {
    DualCertificate shifted = cert;
    for (auto& a : shifted.alpha) a += 0.37;
    for (auto& b : shifted.beta) b -= 0.37;
    CHECK(kkt_form_residual(plan, shifted, prob, params) == Approx(0.0).scale(1.0));
  }
  SUBCASE("random duals do not fit") {
    DualCertificate wrong = cert;
    wrong.alpha[1] += 0.2;
    CHECK(kkt_form_residual(plan, wrong, prob, params) > 1e-4);
  }
  SUBCASE("duals recovered from the plan alone reproduce the construction") {
    auto recovered = recover_duals(plan, prob, params);
    CHECK(recovered.unique);
    CHECK(recovered.residual < 1e-8);
    // Same shift class: recovered alpha differs from the construction by one constant.
    const double shift = recovered.cert.alpha[0] - alpha[0];
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(recovered.cert.alpha[i] - alpha[i] == Approx(shift).epsilon(1e-7).scale(1.0));
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(recovered.cert.beta[j] - beta[j] == Approx(-shift).epsilon(1e-7).scale(1.0));
    CHECK(recovered.cert.alpha[0] == 0.0);
  }
}

TEST_CASE("dual recovery edge cases") {
  SUBCASE("1x1 problem determines beta exactly") {
    auto prob = tiny_problem({1.0}, {1.0}, Matrix(1, 1, 0.8));
    auto plan = make_plan(prob, Matrix(1, 1, 1.0));
    const QParams params{1.0, 2.0};
    auto recovered = recover_duals(plan, prob, params);
    CHECK(recovered.cert.alpha[0] == 0.0);
    // p = 1 forces alpha + lambda m + beta = -1.
    CHECK(recovered.cert.beta[0] == Approx(-1.0 - params.lambda * prob.M(0, 0)).epsilon(1e-9));
    CHECK(recovered.residual < 1e-9);
  }
  SUBCASE("disconnected support is flagged non-unique") {
    auto prob = tiny_problem({0.5, 0.5}, {0.5, 0.5}, Matrix(2, 2, 0.1));
    Matrix p(2, 2, 0.0);
    p(0, 0) = 0.5;
    p(1, 1) = 0.5;
    const QParams params{0.5, 1.0};
    auto recovered = recover_duals(make_plan(prob, p), prob, params);
    CHECK_FALSE(recovered.unique);
    // No duals are consistent with a non-optimal disconnected plan; the
    // least-squares certificate balances support and off-support misfit
    // (an exact support fit would leave 0.5 on the empty cells).
    CHECK(recovered.residual <= 0.3);
    CHECK(recovered.residual > 1e-3);
  }
}

TEST_CASE("beta-adjusted distance identities") {
  Rng rng(303);
  const Vector r = rng.dirichlet(4);
  Matrix m(4, 4, 0.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) m(i, j) = i == j ? 0.0 : 0.4 + rng.uniform();
  auto prob = tiny_problem(r, r, std::move(m));

  Matrix diag(4, 4, 0.0);
  for (std::size_t i = 0; i < 4; ++i) diag(i, i) = r[i];
  auto no_transport = make_plan(prob, diag);

  for (double q : {0.5, 1.0, 2.0, 3.0}) {
    const QParams params{q, 2.0};
    // Diagonal no-transport plan at beta = 1/2 lands exactly on zero.
    CHECK(beta_adjusted_distance(prob, params, 0.5, no_transport) == Approx(0.0).scale(1.0));
    // beta = 0 reduces to the plain objective.
    CHECK(beta_adjusted_distance(prob, params, 0.0, no_transport) ==
          Approx(trot_objective(no_transport, prob, params)).epsilon(1e-12));
  }
}

TEST_CASE("problem JSON round trip and validation") {
  Rng rng(404);
  auto prob = trot_test::random_problem(rng, 3, 5);
  auto j = problem_to_json(prob);
  auto back = problem_from_json(j);
  CHECK(l1_distance(back.M, prob.M) == 0.0);
  CHECK(l1_distance(back.r, prob.r) == 0.0);
  CHECK(l1_distance(back.c, prob.c) == 0.0);

  auto bad = j;
  bad["r"][0] = bad["r"][0].get<double>() + 0.2;
  CHECK_THROWS_AS(problem_from_json(bad), std::invalid_argument);
  auto missing = j;
  missing.erase("M");
  CHECK_THROWS_AS(problem_from_json(missing), std::invalid_argument);
}
