#pragma once

// Empirical observability constant for the adjoint system,
//   |Phi(0)|^2_X2 <= C_T int_0^T int_Gamma |beta phi_Gamma|^2,
// plus discrete checks of the energy identity and of the boundary
// interpolation inequality used alongside it.

#include "wentzell/assembly.hpp"
#include "wentzell/errors.hpp"
#include "wentzell/evolution.hpp"
#include "wentzell/parallel.hpp"
#include "wentzell/random.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace wentzell {

/// Trapezoidal-in-time, lumped-in-space approximation of int_{Sigma_T} |beta phi_Gamma|^2.
inline double observation_energy(const DiscreteSystem& sys, const Trajectory& adj)
{
  const auto& mesh = sys.mesh;
  double total = 0.0;
  for (Index n = 0; n <= adj.steps(); ++n) {
    const double w = (n == 0 || n == adj.steps()) ? 0.5 * adj.dt : adj.dt;
    double s = 0.0;
    for (Index k = 0; k < sys.num_boundary(); ++k) {
      const double v = sys.beta(k) * adj.states(mesh.boundary_nodes[static_cast<std::size_t>(k)], n);
      s += sys.surface_weights(k) * v * v;
    }
    total += w * s;
  }
  return total;
}

struct ObservationSample {
  double initial_energy = 0.0;     // |Phi(0)|^2_M
  double observation_energy = 0.0; // int int |beta phi_Gamma|^2
  double ratio = 0.0;
  bool extremal = false;           // lowest (K, M) eigenvector rather than random
};

struct ObservabilityReport {
  double CT_estimate = 0.0;
  Index samples = 0;
  double T = 0.0;
  std::vector<ObservationSample> per_sample;
};

inline ObservationSample observe(const DiscreteSystem& sys, const ThetaStepper& stepper,
                                 const Eigen::VectorXd& phi_T, double T, Index nt)
{
  const Trajectory adj = solve_backward(stepper, phi_T, T, nt);
  ObservationSample s;
  s.initial_energy = inner_X2(sys, adj.initial_state(), adj.initial_state());
  s.observation_energy = observation_energy(sys, adj);
  if (!(s.observation_energy > 0.0) || !std::isfinite(s.observation_energy))
    throw NumericalError("observability: vanishing boundary observation for a nonzero final datum");
  s.ratio = s.initial_energy / s.observation_energy;
  return s;
}

inline ObservationSample observe(const DiscreteSystem& sys, const Eigen::VectorXd& phi_T, double T, Index nt,
                                 double theta = 1.0)
{
  check_time_grid(T, nt, theta);
  const ThetaStepper stepper(sys, T / static_cast<double>(nt), theta);
  return observe(sys, stepper, phi_T, T, nt);
}

/// Max of the observation ratio over `samples` seeded random unit final data,
/// plus the lowest generalized eigenvector of (K, M) when requested.
inline ObservabilityReport estimate_CT(const DiscreteSystem& sys, double T, Index nt, Index samples,
                                       std::uint64_t seed, double theta = 1.0, bool include_extremal = true,
                                       unsigned threads = 1)
{
  if (!(sys.beta0 > 0.0))
    throw std::invalid_argument("estimate_CT: requires beta >= beta0 > 0");
  if (samples < 1)
    throw std::invalid_argument("estimate_CT: need at least one sample");
  check_time_grid(T, nt, theta);

  const ThetaStepper stepper(sys, T / static_cast<double>(nt), theta);
  ObservabilityReport report;
  report.T = T;
  report.samples = samples;
  report.per_sample.resize(static_cast<std::size_t>(samples));
  parallel_for(static_cast<std::size_t>(samples), threads, [&](std::size_t s) {
    report.per_sample[s] = observe(sys, stepper, random_unit_state(sys, seed, s), T, nt);
  });
  if (include_extremal) {
    ObservationSample s = observe(sys, stepper, estimate_coercivity(sys).eigenvector, T, nt);
    s.extremal = true;
    report.per_sample.push_back(s);
  }
  for (const auto& s : report.per_sample)
    report.CT_estimate = std::max(report.CT_estimate, s.ratio);
  return report;
}

/// Compares the discrete energy rate (|Phi^{n+1}|^2 - |Phi^n|^2) / (2 dt) with
/// Psi^T K Psi at the scheme's adjoint level Psi = theta Phi^n + (1-theta) Phi^{n+1}.
/// Returns the largest per-step relative mismatch. The two agree to roundoff
/// for Crank-Nicolson and to O(dt) for implicit Euler.
inline double check_energy_identity(const DiscreteSystem& sys, const Trajectory& adj)
{
  if (adj.states.cols() < 2)
    throw std::invalid_argument("check_energy_identity: need at least two states");
  double worst = 0.0;
  for (Index n = 0; n < adj.steps(); ++n) {
    const double e1 = inner_X2(sys, adj.states.col(n + 1), adj.states.col(n + 1));
    const double e0 = inner_X2(sys, adj.states.col(n), adj.states.col(n));
    const double rate = (e1 - e0) / (2.0 * adj.dt);
    const Eigen::VectorXd psi = adj.adjoint_level(n);
    const double form = psi.dot(sys.K * psi);
    const double scale = std::max(std::abs(rate), std::abs(form));
    if (scale > 0.0)
      worst = std::max(worst, std::abs(rate - form) / scale);
  }
  return worst;
}

struct InterpolationCheck {
  double lhs = 0.0; // u^T K_Gamma u
  double rhs = 0.0; // |u|_{M_Gamma} |M_Gamma^{-1} K_Gamma u|_{M_Gamma}
};

inline InterpolationCheck check_interpolation(const DiscreteSystem& sys, const Eigen::VectorXd& u)
{
  if (sys.mesh.dim < 2)
    throw std::invalid_argument("check_interpolation: the boundary of a 1D domain has no tangential direction");
  if (!(sys.delta > 0.0))
    throw std::invalid_argument("check_interpolation: requires delta > 0");
  if (u.size() != sys.num_boundary())
    throw std::invalid_argument("check_interpolation: field must live on boundary nodes");
  const Eigen::VectorXd Ku = sys.surface_stiffness * u;
  const Eigen::VectorXd lap = Ku.cwiseQuotient(sys.surface_weights);
  InterpolationCheck c;
  c.lhs = u.dot(Ku);
  c.rhs = std::sqrt(inner_boundary(sys, u, u)) * std::sqrt(inner_boundary(sys, lap, lap));
  return c;
}

} // namespace wentzell
