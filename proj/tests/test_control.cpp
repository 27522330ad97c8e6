#include "wentzell/control.hpp"
#include "wentzell/random.hpp"

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using namespace wentzell;
using Catch::Approx;

namespace {

DiscreteSystem interval_system(Index n) { return assemble(build_interval_mesh(0.0, 1.0, n), 1.0, 0.0, 1.0); }

Eigen::VectorXd first_bulk_mode(const DiscreteSystem& sys)
{
  return oracle::generalized_eigen(sys).vectors.col(0);
}

} // namespace

TEST_CASE("gramian of zero is zero")
{
  const auto sys = interval_system(16);
  const Eigen::VectorXd z = gramian_apply(sys, Eigen::VectorXd::Zero(sys.size()), 1.0, 32, 1.0);
  CHECK(z.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(gramian_apply(sys, Eigen::VectorXd::Zero(3), 1.0, 32, 1.0), std::invalid_argument);
}

TEST_CASE("gramian is symmetric and positive semidefinite")
{
  for (double theta : {0.5, 1.0}) {
    const auto sys = interval_system(16);
    auto rng = make_rng(21, 0);
    for (int i = 0; i < 20; ++i) {
      const Eigen::VectorXd a = standard_normal(sys.size(), rng);
      const Eigen::VectorXd b = standard_normal(sys.size(), rng);
      const double ab = inner_X2(sys, gramian_apply(sys, a, 1.0, 32, theta), b);
      const double ba = inner_X2(sys, a, gramian_apply(sys, b, 1.0, 32, theta));
      CHECK(std::abs(ab - ba) <= 1e-10 * std::max(std::abs(ab), 1e-300));
    }
    for (int i = 0; i < 100; ++i) {
      const Eigen::VectorXd a = standard_normal(sys.size(), rng);
      CHECK(inner_X2(sys, gramian_apply(sys, a, 1.0, 32, theta), a) >= -1e-12);
    }
  }
}

TEST_CASE("gramian matches the dense control map")
{
  const auto sys = interval_system(8);
  const auto h = oracle::dense_hum(sys, Eigen::VectorXd::Ones(sys.size()), 1.0, 16, 1.0, 1e-3);
  for (Index j = 0; j < sys.size(); ++j) {
    const Eigen::VectorXd e = Eigen::VectorXd::Unit(sys.size(), j);
    const Eigen::VectorXd col = gramian_apply(sys, e, 1.0, 16, 1.0);
    CHECK((col - h.gramian.col(j)).norm() <= 1e-12 * (1.0 + h.gramian.col(j).norm()));
  }
}

TEST_CASE("zero data gives the zero control")
{
  const auto sys = interval_system(16);
  const ControlProblem p{sys, Eigen::VectorXd::Zero(sys.size()), 1.0, 32, 1.0, 1e-6};
  const auto r = synthesize_control(p);
  CHECK(r.iterations == 0);
  CHECK(r.converged);
  CHECK(r.final_norm == 0.0);
  CHECK(r.control_norm == 0.0);
  CHECK(r.g.values.cwiseAbs().maxCoeff() == 0.0);
  const auto v = verify_null(p, r);
  CHECK(v.final_norm == 0.0);
  CHECK(v.refined_final_norm == 0.0);
  CHECK(v.optimality_residual == 0.0);
  CHECK(v.duality_residual == 0.0);
}

TEST_CASE("control problem validation")
{
  const auto sys = interval_system(8);
  const Eigen::VectorXd u = Eigen::VectorXd::Ones(sys.size());
  CHECK_THROWS_AS(synthesize_control({sys, u, 1.0, 32, 1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(synthesize_control({sys, u, 1.0, 32, 1.0, 1e-3, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(synthesize_control({sys, u, 1.0, 32, 1.0, 1e-3, 1e-10, -1}), std::invalid_argument);
  CHECK_THROWS_AS(synthesize_control({sys, Eigen::VectorXd::Ones(3), 1.0, 32, 1.0, 1e-3}), std::invalid_argument);
  CHECK_THROWS_AS(synthesize_control({sys, u, -1.0, 32, 1.0, 1e-3}), std::invalid_argument);
}

TEST_CASE("null control of the first bulk mode agrees with the dense oracle")
{
  const auto sys = interval_system(32);
  const Eigen::VectorXd u0 = first_bulk_mode(sys);
  const ControlProblem p{sys, u0, 1.0, 128, 1.0, 1e-6};
  const auto r = synthesize_control(p);
  const auto h = oracle::dense_hum(sys, u0, 1.0, 128, 1.0, 1e-6);
  CHECK(r.converged);
  CHECK(r.final_norm <= 1e-2 * norm_X2(sys, u0));
  CHECK(h.final_norm <= 1e-2 * oracle::m_norm(sys, u0));
  CHECK(r.final_norm == Approx(h.final_norm).epsilon(1e-5));
  CHECK((r.g.values - h.g).norm() <= 1e-6 * h.g.norm());
  CHECK(r.iterations <= sys.size());
  // U(T) = -eps Phi_T at the minimizer.
  CHECK((r.final_state + p.eps * r.phi_T).norm() <= 1e-6 * r.final_state.norm());
}

TEST_CASE("final norm is monotone in eps")
{
  const auto sys = interval_system(16);
  const Eigen::VectorXd u0 = random_unit_state(sys, 8, 0);
  double prev = 0.0;
  for (double eps : {1e-6, 1e-4, 1e-2, 1.0}) {
    const auto r = synthesize_control({sys, u0, 1.0, 64, 1.0, eps});
    CHECK(r.converged);
    CHECK(r.final_norm >= prev);
    prev = r.final_norm;
  }
}

TEST_CASE("control cost equals the gramian quadratic form")
{
  for (double theta : {0.5, 1.0}) {
    const auto sys = interval_system(16);
    const ControlProblem p{sys, random_unit_state(sys, 9, 0), 1.0, 64, theta, 1e-4};
    const auto r = synthesize_control(p);
    const double q = inner_X2(sys, gramian_apply(sys, r.phi_T, p.T, p.nt, theta), r.phi_T);
    CHECK(std::abs(r.control_norm * r.control_norm - q) <= 1e-8 * q);
  }
}

TEST_CASE("optimality and duality residuals on converged runs")
{
  for (double theta : {0.5, 1.0}) {
    const auto sys = interval_system(32);
    const ControlProblem p{sys, random_unit_state(sys, 12, 0), 1.0, 128, theta, 1e-4};
    const auto r = synthesize_control(p);
    REQUIRE(r.converged);
    CHECK(r.iterations <= sys.size());
    const auto v = verify_null(p, r);
    const double u2 = inner_X2(sys, p.U0, p.U0);
    CHECK(v.optimality_residual <= 10.0 * p.cg_tol * u2);
    CHECK(v.duality_residual <= 1e-10);
    CHECK(v.final_norm == Approx(r.final_norm).epsilon(1e-12));
  }
}

TEST_CASE("refined re-run stays within a factor two")
{
  // Crank-Nicolson resolves the control to second order in time, so the
  // doubled grid reproduces the reported final norm.
  const auto sys = interval_system(32);
  const ControlProblem p{sys, random_unit_state(sys, 3, 0), 1.0, 128, 0.5, 1e-6};
  const auto r = synthesize_control(p);
  const auto v = verify_null(p, r);
  CHECK(v.refined_final_norm <= 2.0 * r.final_norm);
  CHECK(r.final_norm <= 2.0 * v.refined_final_norm);
}

TEST_CASE("non-converged runs return the best iterate")
{
  const auto sys = interval_system(16);
  const auto r = synthesize_control({sys, random_unit_state(sys, 2, 0), 1.0, 32, 1.0, 1e-8, 1e-14, 2});
  CHECK(r.iterations == 2);
  CHECK_FALSE(r.converged);
  CHECK(r.relative_residual < 1.0);
  CHECK(std::isfinite(r.final_norm));
}

TEST_CASE("refine_signal keeps constants and interpolates linearly")
{
  const auto c = refine_signal(BoundarySignal::constant(2, 8, 3.0), 1.0, 1.0, 2);
  CHECK(c.steps() == 16);
  CHECK((c.values.array() - 3.0).abs().maxCoeff() == 0.0);

  // Level times (n + theta) dt carry a linear function of t exactly.
  const double T = 2.0;
  const Index nt = 8;
  for (double theta : {0.5, 1.0}) {
    BoundarySignal g{Eigen::MatrixXd(1, nt)};
    for (Index n = 0; n < nt; ++n)
      g.values(0, n) = 1.0 + 2.0 * (static_cast<double>(n) + theta) * T / static_cast<double>(nt);
    const auto f = refine_signal(g, T, theta, 2);
    const double dtf = T / static_cast<double>(2 * nt);
    for (Index m = 0; m < 2 * nt; ++m) {
      const double t = (static_cast<double>(m) + theta) * dtf;
      const double lo = theta * T / static_cast<double>(nt);
      const double hi = (static_cast<double>(nt - 1) + theta) * T / static_cast<double>(nt);
      const double expect = 1.0 + 2.0 * std::clamp(t, lo, hi);
      CHECK(f.values(0, m) == Approx(expect).epsilon(1e-14));
    }
  }
}

TEST_CASE("disk control converges")
{
  const auto sys = assemble(build_disk_mesh(1.0, 4, 16), 1.0, 0.1, 1.0);
  const ControlProblem p{sys, random_unit_state(sys, 1, 0), 1.0, 32, 1.0, 1e-4};
  const auto r = synthesize_control(p);
  CHECK(r.converged);
  CHECK(r.iterations <= sys.size());
  CHECK(r.final_norm <= 0.1 * norm_X2(sys, p.U0));
}
