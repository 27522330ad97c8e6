#include "wentzell/evolution.hpp"
#include "wentzell/random.hpp"

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace wentzell;
using Catch::Approx;

namespace {

DiscreteSystem interval_system(Index n, double beta, double gamma = 1.0)
{
  return assemble(build_interval_mesh(0.0, 1.0, n), gamma, 0.0, beta);
}

BoundarySignal random_signal(Index nb, Index nt, std::uint64_t seed)
{
  auto rng = make_rng(seed, 99);
  BoundarySignal g{Eigen::MatrixXd(nb, nt)};
  for (Index n = 0; n < nt; ++n)
    g.values.col(n) = standard_normal(nb, rng);
  return g;
}

} // namespace

TEST_CASE("zero data gives the zero trajectory")
{
  const auto sys = interval_system(8, 1.0);
  const auto fwd = solve_forward(sys, Eigen::VectorXd::Zero(sys.size()), BoundarySignal::zero(2, 10), 1.0, 10, 1.0);
  CHECK(fwd.states.cwiseAbs().maxCoeff() == 0.0);
  CHECK(fwd.states.cols() == fwd.times.size());
  const auto adj = solve_backward(sys, Eigen::VectorXd::Zero(sys.size()), 1.0, 10, 0.5);
  CHECK(adj.states.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("constants are stationary without reaction")
{
  for (const auto& sys : {interval_system(16, 0.0), assemble(build_rect_mesh(1.0, 1.0, 4, 4), 1.0, 0.5, 0.0)}) {
    const Eigen::VectorXd c = Eigen::VectorXd::Constant(sys.size(), 2.5);
    for (double theta : {0.5, 1.0}) {
      const auto fwd = solve_forward(sys, c, 1.0, 20, theta);
      // Exact up to the roundoff of the sparse Cholesky solves.
      CHECK((fwd.states.array() - 2.5).abs().maxCoeff() <= 1e-13 * 2.5);
    }
  }
}

TEST_CASE("time grid is uniform and theta is restricted")
{
  const auto sys = interval_system(4, 1.0);
  const auto fwd = solve_forward(sys, Eigen::VectorXd::Ones(sys.size()), 2.0, 7, 1.0);
  for (Index k = 1; k < fwd.times.size(); ++k)
    CHECK(std::abs(fwd.times(k) - fwd.times(k - 1) - 2.0 / 7.0) <= 1e-14);
  CHECK(fwd.times(fwd.times.size() - 1) == 2.0);
  CHECK_THROWS_AS(solve_forward(sys, Eigen::VectorXd::Ones(sys.size()), 1.0, 4, 0.3), std::invalid_argument);
  CHECK_THROWS_AS(solve_forward(sys, Eigen::VectorXd::Ones(sys.size()), 1.0, 0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(solve_forward(sys, Eigen::VectorXd::Ones(sys.size()), -1.0, 4, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(solve_forward(sys, Eigen::VectorXd::Ones(3), 1.0, 4, 1.0), std::invalid_argument);
}

TEST_CASE("implicit Euler matches the matrix exponential to first order")
{
  const auto sys = interval_system(32, 1.0);
  Eigen::VectorXd u0(sys.size());
  for (Index i = 0; i < sys.size(); ++i)
    u0(i) = std::sin(3.0 * sys.mesh.nodes(i, 0)) + 1.0;
  const auto fwd = solve_forward(sys, u0, 1.0, 64, 1.0);
  const Eigen::VectorXd exact = oracle::expm_apply(sys, 1.0, u0);
  const double err = oracle::m_norm(sys, fwd.final_state() - exact) / oracle::m_norm(sys, exact);
  CHECK(err <= 0.1);
}

TEST_CASE("backward solve is the M-adjoint of the forward flow")
{
  const auto sys = assemble(build_disk_mesh(1.0, 3, 12), 1.0, 0.3, 1.0);
  for (double theta : {0.5, 1.0}) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const Eigen::VectorXd u = random_unit_state(sys, 21, s);
      const Eigen::VectorXd phi = random_unit_state(sys, 22, s);
      const double a = inner_X2(sys, solve_forward(sys, u, 0.7, 16, theta).final_state(), phi);
      const double b = inner_X2(sys, u, solve_backward(sys, phi, 0.7, 16, theta).initial_state());
      CHECK(std::abs(a - b) <= 1e-11);
    }
  }
}

TEST_CASE("backward solution decays away from the final time")
{
  // Phi(t) = e^{(T-t)A} Phi_T, so |Phi(t)|_M is non-decreasing in t.
  const auto sys = interval_system(16, 1.0);
  const auto adj = solve_backward(sys, random_unit_state(sys, 4, 0), 1.0, 40, 1.0);
  for (Index k = 0; k + 1 < adj.states.cols(); ++k)
    CHECK(norm_X2(sys, adj.state(k)) <= norm_X2(sys, adj.state(k + 1)) * (1.0 + 1e-14));
  const Eigen::VectorXd dense = oracle::expm_apply(sys, 1.0, adj.final_state());
  CHECK(norm_X2(sys, adj.initial_state()) <= norm_X2(sys, adj.final_state()));
  CHECK(oracle::m_norm(sys, adj.initial_state() - dense) <= 0.1 * oracle::m_norm(sys, dense));
}

TEST_CASE("discrete duality identity")
{
  const auto sys = interval_system(16, 1.0);
  for (double theta : {0.5, 0.75, 1.0}) {
    const Eigen::VectorXd u0 = random_unit_state(sys, 1, 0);
    const Eigen::VectorXd phi = random_unit_state(sys, 2, 0);
    const BoundarySignal g = random_signal(2, 32, 3);
    const auto fwd = solve_forward(sys, u0, g, 1.0, 32, theta);
    const auto adj = solve_backward(sys, phi, 1.0, 32, theta);
    CHECK(duality_residual(sys, fwd, adj, g) <= 1e-10);
  }
  const auto fwd = solve_forward(sys, Eigen::VectorXd::Zero(sys.size()), BoundarySignal::zero(2, 8), 1.0, 8, 1.0);
  const auto adj = solve_backward(sys, random_unit_state(sys, 1, 1), 1.0, 8, 1.0);
  CHECK(duality_residual(sys, fwd, adj, BoundarySignal::zero(2, 8)) == 0.0);

  const auto adj16 = solve_backward(sys, random_unit_state(sys, 1, 1), 1.0, 16, 1.0);
  CHECK_THROWS_AS(duality_residual(sys, fwd, adj16, BoundarySignal::zero(2, 8)), std::invalid_argument);
  const auto adj_cn = solve_backward(sys, random_unit_state(sys, 1, 1), 1.0, 8, 0.5);
  CHECK_THROWS_AS(duality_residual(sys, fwd, adj_cn, BoundarySignal::zero(2, 8)), std::invalid_argument);
}

TEST_CASE("duality holds in 2D with surface diffusion")
{
  const auto sys = assemble(build_rect_mesh(1.0, 1.0, 4, 4), 1.0, 0.4, 0.5);
  const BoundarySignal g = random_signal(sys.num_boundary(), 12, 8);
  const auto fwd = solve_forward(sys, random_unit_state(sys, 9, 0), g, 0.5, 12, 0.5);
  const auto adj = solve_backward(sys, random_unit_state(sys, 9, 1), 0.5, 12, 0.5);
  CHECK(duality_residual(sys, fwd, adj, g) <= 1e-10);
}

TEST_CASE("theta-averaged boundary samples")
{
  Eigen::MatrixXd samples(1, 3);
  samples << 0.0, 1.0, 3.0;
  const auto g = BoundarySignal::from_samples(samples, 0.5);
  CHECK(g.values(0, 0) == 0.5);
  CHECK(g.values(0, 1) == 2.0);
  const auto h = BoundarySignal::from_samples(samples, 1.0);
  CHECK(h.values(0, 1) == 3.0);
}

TEST_CASE("Duhamel oracle special cases")
{
  const auto sys = interval_system(8, 1.0);
  Eigen::VectorXd u0(sys.size());
  for (Index i = 0; i < sys.size(); ++i)
    u0(i) = 1.0 + sys.mesh.nodes(i, 0);
  CHECK(duhamel_final(sys, u0, BoundarySignal::zero(2, 4), 0.0, 4) == u0);
  const Eigen::VectorXd free = duhamel_final(sys, u0, BoundarySignal::zero(2, 16), 0.8, 16);
  const Eigen::VectorXd expm = oracle::expm_apply(sys, 0.8, u0);
  CHECK((free - expm).norm() <= 1e-12 * expm.norm());

  const auto big = interval_system(250, 1.0);
  CHECK_THROWS_AS(duhamel_final(big, Eigen::VectorXd::Zero(big.size()), BoundarySignal::zero(2, 2), 1.0, 2),
                  std::invalid_argument);
}

TEST_CASE("Crank-Nicolson agrees with Duhamel for constant forcing")
{
  const auto sys = interval_system(8, 1.0);
  Eigen::VectorXd u0(sys.size());
  for (Index i = 0; i < sys.size(); ++i)
    u0(i) = std::sin(3.1 * sys.mesh.nodes(i, 0)) + sys.mesh.nodes(i, 0);
  const Index nt = 256;
  const auto g = BoundarySignal::constant(2, nt, 1.0);
  const Eigen::VectorXd ref = duhamel_final(sys, u0, g, 1.0, nt);
  const Eigen::VectorXd cn = solve_forward(sys, u0, g, 1.0, nt, 0.5).final_state();
  CHECK(norm_X2(sys, cn - ref) <= 1e-4 * norm_X2(sys, ref));
}

TEST_CASE("positivity and max-norm contraction for implicit Euler")
{
  for (double beta : {0.0, 1.0}) {
    for (const auto& sys : {interval_system(16, beta), assemble(build_rect_mesh(1.0, 1.0, 5, 5), 1.0, 0.5, beta)}) {
      std::mt19937_64 rng(17);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd u0(sys.size());
        for (Index i = 0; i < sys.size(); ++i)
          u0(i) = unif(rng);
        const auto fwd = solve_forward(sys, u0, 1.0, 32, 1.0);
        CHECK(fwd.states.minCoeff() >= -1e-14);
        for (Index k = 0; k + 1 < fwd.states.cols(); ++k)
          CHECK(fwd.states.col(k + 1).cwiseAbs().maxCoeff() <= fwd.states.col(k).cwiseAbs().maxCoeff());
        const auto forced = solve_forward(sys, u0, BoundarySignal::constant(sys.num_boundary(), 32, 0.3), 1.0, 32, 1.0);
        CHECK(forced.states.minCoeff() >= -1e-14);
      }
    }
  }
}

TEST_CASE("energy decay bounded by the coercivity constant")
{
  const auto sys = interval_system(32, 1.0);
  const double c = estimate_coercivity(sys).value;
  const Index nt = 50;
  const double dt = 1.0 / nt;
  const auto fwd = solve_forward(sys, random_unit_state(sys, 12, 0), 1.0, nt, 1.0);
  const double e0 = norm_X2(sys, fwd.initial_state());
  for (Index k = 0; k + 1 < fwd.states.cols(); ++k) {
    CHECK(norm_X2(sys, fwd.state(k + 1)) <= norm_X2(sys, fwd.state(k)));
    CHECK(norm_X2(sys, fwd.state(k + 1)) <= std::pow(1.0 + c * dt, -double(k + 1)) * e0 * (1.0 + 1e-12));
  }
}

TEST_CASE("flux recovery: constants and linear profile")
{
  const auto sys = interval_system(8, 0.0);
  Trajectory constant;
  constant.times = uniform_times(1.0, 4);
  constant.states = Eigen::MatrixXd::Constant(sys.size(), 5, 3.0);
  constant.dt = 0.25;
  const auto f = recover_normal_flux(sys, constant);
  CHECK(f.variational.cwiseAbs().maxCoeff() <= 1e-13);
  CHECK(f.equation.cwiseAbs().maxCoeff() == 0.0);

  const double gamma = 1.7;
  const auto lin = assemble(build_interval_mesh(0.0, 1.0, 2), gamma, 0.0, 0.0);
  Trajectory frozen;
  frozen.times = uniform_times(1.0, 2);
  frozen.states = Eigen::MatrixXd(3, 3);
  for (Index k = 0; k < 3; ++k)
    frozen.states.col(k) = Eigen::Vector3d(0.0, 0.5, 1.0);
  frozen.dt = 0.5;
  const auto lf = recover_normal_flux(lin, frozen);
  CHECK(lf.variational(1, 0) == Approx(gamma));
  CHECK(lf.variational(0, 0) == Approx(-gamma));

  Trajectory short_traj = frozen;
  short_traj.times = uniform_times(1.0, 1);
  short_traj.states = frozen.states.leftCols(2);
  short_traj.dt = 1.0;
  CHECK_THROWS_AS(recover_normal_flux(lin, short_traj), std::invalid_argument);
}

TEST_CASE("flux discrepancy decreases under time refinement")
{
  const auto sys = interval_system(32, 1.0);
  const Eigen::VectorXd phi = random_unit_state(sys, 7, 0);
  std::vector<double> full;
  std::vector<double> early;
  for (Index nt : {128, 256, 512}) {
    const auto f = recover_normal_flux(sys, solve_backward(sys, phi, 1.0, nt, 1.0));
    full.push_back(f.discrepancy);
    early.push_back(f.discrepancy_on(0.0, 0.5));
  }
  CHECK(full[1] < full[0]);
  CHECK(full[2] < full[1]);
  // Away from the final-time layer the centred differences converge at O(dt).
  CHECK(early[0] / early[1] == Approx(2.0).epsilon(0.1));
  CHECK(early[1] / early[2] == Approx(2.0).epsilon(0.1));
}
