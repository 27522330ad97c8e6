#include "wentzell/control.hpp"
#include "wentzell/observability.hpp"

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using namespace wentzell;
using Catch::Approx;

namespace {

DiscreteSystem interval_system(Index n, double beta = 1.0)
{
  return assemble(build_interval_mesh(0.0, 1.0, n), 1.0, 0.0, beta);
}

} // namespace

TEST_CASE("extremal sample gives a finite positive ratio")
{
  const auto sys = interval_system(32);
  const auto s = observe(sys, estimate_coercivity(sys).eigenvector, 1.0, 128);
  CHECK(std::isfinite(s.ratio));
  CHECK(s.ratio > 0.0);
}

TEST_CASE("observation ratio is scale invariant")
{
  const auto sys = interval_system(32);
  const Eigen::VectorXd phi = random_unit_state(sys, 4, 0);
  const double a = observe(sys, phi, 1.0, 128).ratio;
  const double b = observe(sys, 10.0 * phi, 1.0, 128).ratio;
  CHECK(std::abs(a - b) <= 1e-12 * a);
}

TEST_CASE("shorter horizons observe less")
{
  const auto sys = interval_system(32);
  const auto half = estimate_CT(sys, 0.5, 64, 100, 2024);
  const auto full = estimate_CT(sys, 1.0, 128, 100, 2024);
  CHECK(half.per_sample.size() == 101);
  for (const auto& s : full.per_sample) {
    CHECK(std::isfinite(s.ratio));
    CHECK(s.ratio > 0.0);
    CHECK(s.initial_energy > 0.0);
    CHECK(s.observation_energy > 0.0);
  }
  CHECK(half.CT_estimate >= full.CT_estimate);
  double mx = 0.0;
  for (const auto& s : full.per_sample)
    mx = std::max(mx, s.ratio);
  CHECK(full.CT_estimate == mx);
}

TEST_CASE("sample parallelism does not change the report")
{
  const auto sys = interval_system(16);
  const auto a = estimate_CT(sys, 1.0, 32, 9, 5, 1.0, true, 1);
  const auto b = estimate_CT(sys, 1.0, 32, 9, 5, 1.0, true, 4);
  REQUIRE(a.per_sample.size() == b.per_sample.size());
  for (std::size_t i = 0; i < a.per_sample.size(); ++i)
    CHECK(a.per_sample[i].ratio == b.per_sample[i].ratio);
}

TEST_CASE("observability preconditions")
{
  CHECK_THROWS_AS(estimate_CT(interval_system(8, 0.0), 1.0, 16, 4, 1), std::invalid_argument);
  CHECK_THROWS_AS(estimate_CT(interval_system(8), 1.0, 16, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(observe(interval_system(8), Eigen::VectorXd::Zero(9), 1.0, 16), NumericalError);
}

TEST_CASE("energy identity")
{
  const auto sys = interval_system(16);
  const auto zero = solve_backward(sys, Eigen::VectorXd::Zero(sys.size()), 1.0, 8, 0.5);
  CHECK(check_energy_identity(sys, zero) == 0.0);

  const auto cn = solve_backward(sys, random_unit_state(sys, 6, 0), 1.0, 64, 0.5);
  CHECK(check_energy_identity(sys, cn) <= 1e-9);

  // Implicit Euler: the per-step mismatch is (dt/2)|A Phi|^2_M / Phi^T K Phi,
  // first order in dt once the data are resolved by the time grid.
  const auto ge = oracle::generalized_eigen(sys);
  const Eigen::VectorXd smooth = ge.vectors.col(0) + 0.5 * ge.vectors.col(1) + 0.25 * ge.vectors.col(2);
  Eigen::VectorXd rough(sys.size());
  for (Index i = 0; i < sys.size(); ++i)
    rough(i) = std::cos(M_PI * sys.mesh.nodes(i, 0)) + 0.5;
  std::vector<double> res;
  std::vector<double> res_rough;
  for (Index nt : {256, 512, 1024})
    res.push_back(check_energy_identity(sys, solve_backward(sys, smooth, 1.0, nt, 1.0)));
  for (Index nt : {32, 64, 128})
    res_rough.push_back(check_energy_identity(sys, solve_backward(sys, rough, 1.0, nt, 1.0)));
  CHECK(res[0] / res[1] == Approx(2.0).epsilon(0.15));
  CHECK(res[1] / res[2] == Approx(2.0).epsilon(0.15));
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(res[k] <= 100.0 / (256.0 * std::pow(2.0, double(k))));
    CHECK(res_rough[k] <= 200.0 / (32.0 * std::pow(2.0, double(k))));
  }
  CHECK(res_rough[1] < res_rough[0]);
  CHECK(res_rough[2] < res_rough[1]);
}

TEST_CASE("interpolation inequality on the disk boundary")
{
  const Index nth = 32;
  const auto sys = assemble(build_disk_mesh(1.0, 4, nth), 1.0, 0.1, 1.0);
  const auto c = check_interpolation(sys, Eigen::VectorXd::Constant(nth, 2.0));
  CHECK(std::abs(c.lhs) <= 1e-12);
  CHECK(std::abs(c.rhs) <= 1e-12);

  Eigen::VectorXd mode(nth);
  for (Index k = 0; k < nth; ++k) {
    const Eigen::VectorXd p = sys.mesh.point(sys.mesh.boundary_nodes[static_cast<std::size_t>(k)]);
    mode(k) = std::cos(std::atan2(p(1), p(0)));
  }
  const auto e = check_interpolation(sys, mode);
  CHECK(e.lhs == Approx(e.rhs).epsilon(1e-12));

  auto rng = make_rng(77, 0);
  for (int i = 0; i < 100; ++i) {
    const auto r = check_interpolation(sys, standard_normal(nth, rng));
    CHECK(r.lhs <= r.rhs);
  }

  CHECK_THROWS_AS(check_interpolation(interval_system(4), Eigen::VectorXd::Ones(2)), std::invalid_argument);
  const auto flat = assemble(build_disk_mesh(1.0, 4, nth), 1.0, 0.0, 1.0);
  CHECK_THROWS_AS(check_interpolation(flat, mode), std::invalid_argument);
}

TEST_CASE("HUM control cost is bounded by the observability constant")
{
  const auto sys = interval_system(32);
  const double T = 1.0;
  const Index nt = 128;
  const auto report = estimate_CT(sys, T, nt, 100, 3);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ControlProblem p{sys, random_unit_state(sys, seed, 1000), T, nt, 1.0, 1e-6};
    const auto r = synthesize_control(p);
    CHECK(r.control_norm <= std::sqrt(report.CT_estimate) * norm_X2(sys, p.U0) * 1.25);
  }
}
