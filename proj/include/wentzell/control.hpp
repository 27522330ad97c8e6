#pragma once

// Boundary null controls by penalized HUM.
//
// The control-to-final-state map is T g = int_0^T e^{(T-s)A} (0, g(s)) ds in
// discrete form, and its X2-adjoint returns the boundary trace of the adjoint
// trajectory. The Gramian Lambda = T T^* is symmetric positive semidefinite in
// the M inner product. For data U0 we solve
//   (Lambda + eps I) Phi_T = -e^{TA} U0
// by conjugate gradients and apply g = phi_Gamma (the adjoint trace of
// Phi_T); then U(T) = -eps Phi_T.

#include "wentzell/assembly.hpp"
#include "wentzell/evolution.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace wentzell {

/// Boundary trace of an adjoint trajectory at the levels paired with each step.
inline BoundarySignal adjoint_trace_signal(const DiscreteSystem& sys, const Trajectory& adj)
{
  BoundarySignal g{Eigen::MatrixXd(sys.num_boundary(), adj.steps())};
  for (Index n = 0; n < adj.steps(); ++n)
    g.values.col(n) = trace(sys.mesh, adj.adjoint_level(n));
  return g;
}

/// Discrete L2(Sigma_T) norm of a per-step boundary signal.
inline double signal_norm(const DiscreteSystem& sys, const BoundarySignal& g, double dt)
{
  double s = 0.0;
  for (Index n = 0; n < g.steps(); ++n)
    s += dt * (g.values.col(n).array().square() * sys.surface_weights.array()).sum();
  return std::sqrt(s);
}

inline Eigen::VectorXd gramian_apply(const DiscreteSystem& sys, const ThetaStepper& stepper,
                                     const Eigen::VectorXd& phi_T, double T, Index nt)
{
  if (phi_T.size() != sys.size())
    throw std::invalid_argument("gramian_apply: dimension mismatch");
  const Trajectory adj = solve_backward(stepper, phi_T, T, nt);
  const BoundarySignal g = adjoint_trace_signal(sys, adj);
  return solve_forward(stepper, Eigen::VectorXd::Zero(sys.size()), &g, T, nt).final_state();
}

inline Eigen::VectorXd gramian_apply(const DiscreteSystem& sys, const Eigen::VectorXd& phi_T, double T,
                                     Index nt, double theta)
{
  check_time_grid(T, nt, theta);
  const ThetaStepper stepper(sys, T / static_cast<double>(nt), theta);
  return gramian_apply(sys, stepper, phi_T, T, nt);
}

struct ControlProblem {
  DiscreteSystem sys;
  Eigen::VectorXd U0;
  double T = 1.0;
  Index nt = 128;
  double theta = 1.0;
  double eps = 1e-6;
  double cg_tol = 1e-10;
  int cg_maxit = 1000;

  void validate() const
  {
    check_time_grid(T, nt, theta);
    if (nt < 2)
      throw std::invalid_argument("ControlProblem: nt must be >= 2");
    if (!(eps > 0.0))
      throw std::invalid_argument("ControlProblem: eps must be positive");
    if (!(cg_tol > 0.0 && cg_tol < 1.0))
      throw std::invalid_argument("ControlProblem: cg_tol must lie in (0, 1)");
    if (cg_maxit < 0)
      throw std::invalid_argument("ControlProblem: cg_maxit must be nonnegative");
    if (U0.size() != sys.size())
      throw std::invalid_argument("ControlProblem: U0 has wrong dimension");
  }
};

struct ControlResult {
  BoundarySignal g;
  Eigen::VectorXd phi_T;        // minimizer of the penalized dual functional
  Eigen::VectorXd final_state;  // U(T) driven by g
  double final_norm = 0.0;
  double control_norm = 0.0;
  int iterations = 0;
  double cost = 0.0;            // 0.5 |g|^2 + |U(T)|^2 / (2 eps)
  double relative_residual = 0.0;
  bool converged = false;
};

/// Conjugate gradients on (Lambda + eps I) x = b in the M inner product.
inline ControlResult synthesize_control(const ControlProblem& problem)
{
  problem.validate();
  const DiscreteSystem& sys = problem.sys;
  const ThetaStepper stepper(sys, problem.T / static_cast<double>(problem.nt), problem.theta);
  const auto apply = [&](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(gramian_apply(sys, stepper, x, problem.T, problem.nt) + problem.eps * x);
  };

  const Eigen::VectorXd free_final = solve_forward(stepper, problem.U0, nullptr, problem.T, problem.nt).final_state();
  const Eigen::VectorXd b = -free_final;
  const double b_norm = norm_X2(sys, b);

  ControlResult res;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(sys.size());
  if (b_norm > 0.0) {
    Eigen::VectorXd r = b;
    Eigen::VectorXd p = r;
    double rr = inner_X2(sys, r, r);
    Eigen::VectorXd best = x;
    double best_rel = 1.0;
    while (res.iterations < problem.cg_maxit) {
      const Eigen::VectorXd Ap = apply(p);
      ++res.iterations;
      const double pAp = inner_X2(sys, p, Ap);
      if (!(pAp > 0.0))
        break;
      const double step = rr / pAp;
      x += step * p;
      r -= step * Ap;
      const double rr_next = inner_X2(sys, r, r);
      const double rel = std::sqrt(rr_next) / b_norm;
      if (rel < best_rel) {
        best_rel = rel;
        best = x;
      }
      if (rel <= problem.cg_tol) {
        res.converged = true;
        break;
      }
      p = r + (rr_next / rr) * p;
      rr = rr_next;
    }
    x = best;
    res.relative_residual = best_rel;
  } else {
    res.converged = true;
  }

  res.phi_T = x;
  const Trajectory adj = solve_backward(stepper, x, problem.T, problem.nt);
  res.g = adjoint_trace_signal(sys, adj);
  res.final_state = solve_forward(stepper, problem.U0, &res.g, problem.T, problem.nt).final_state();
  res.final_norm = norm_X2(sys, res.final_state);
  res.control_norm = signal_norm(sys, res.g, stepper.dt());
  res.cost = 0.5 * res.control_norm * res.control_norm + 0.5 * res.final_norm * res.final_norm / problem.eps;
  return res;
}

/// Resamples a per-step signal onto a grid with `factor` times as many steps by
/// linear interpolation in time between the coarse level times t_n + theta dt.
inline BoundarySignal refine_signal(const BoundarySignal& g, double T, double theta, Index factor)
{
  const Index nt = g.steps();
  const Index fine = nt * factor;
  const double dt = T / static_cast<double>(nt);
  const double dtf = T / static_cast<double>(fine);
  BoundarySignal out{Eigen::MatrixXd(g.num_boundary(), fine)};
  for (Index m = 0; m < fine; ++m) {
    const double t = (static_cast<double>(m) + theta) * dtf;
    const double s = t / dt - theta; // coarse index coordinate
    if (s <= 0.0) {
      out.values.col(m) = g.values.col(0);
    } else if (s >= static_cast<double>(nt - 1)) {
      out.values.col(m) = g.values.col(nt - 1);
    } else {
      const Index lo = static_cast<Index>(std::floor(s));
      const double w = s - static_cast<double>(lo);
      out.values.col(m) = (1.0 - w) * g.values.col(lo) + w * g.values.col(lo + 1);
    }
  }
  return out;
}

struct NullVerification {
  double final_norm = 0.0;         // re-run on the synthesis grid
  double refined_final_norm = 0.0; // re-run with 2 nt and interpolated g
  /// |int int g phi_Gamma + <U0, Phi(0)>_M + eps |Phi_T|^2_M|, the penalized
  /// form of the null-control duality condition; vanishes at the exact minimizer.
  double optimality_residual = 0.0;
  double duality_residual = 0.0;   // relative, forward vs adjoint of Phi_T
};

inline NullVerification verify_null(const ControlProblem& problem, const ControlResult& result)
{
  problem.validate();
  const DiscreteSystem& sys = problem.sys;
  NullVerification v;

  const Trajectory fwd = solve_forward(sys, problem.U0, result.g, problem.T, problem.nt, problem.theta);
  const Trajectory adj = solve_backward(sys, result.phi_T, problem.T, problem.nt, problem.theta);
  v.final_norm = norm_X2(sys, fwd.final_state());

  const BoundarySignal fine = refine_signal(result.g, problem.T, problem.theta, 2);
  const Trajectory fwd2 = solve_forward(sys, problem.U0, fine, problem.T, 2 * problem.nt, problem.theta);
  v.refined_final_norm = norm_X2(sys, fwd2.final_state());

  const DualityTerms d = duality_terms(sys, fwd, adj, result.g);
  v.duality_residual = d.scale() > 0.0 ? d.residual() / d.scale() : 0.0;
  v.optimality_residual =
      std::abs(d.control_pairing + d.initial_pairing + problem.eps * inner_X2(sys, result.phi_T, result.phi_T));
  return v;
}

} // namespace wentzell
