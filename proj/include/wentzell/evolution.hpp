#pragma once

// Theta-scheme time stepping for the forward system and its discrete adjoint.
//
// Forward step:  (M + theta dt K) U^{n+1} = (M - (1-theta) dt K) U^n + dt B g_n
// Adjoint step:  the M-transpose of the forward propagator,
//                Psi = (M + theta dt K)^{-1} M Phi^{n+1},
//                Phi^n = M^{-1} (M - (1-theta) dt K) Psi,
// with Psi = theta Phi^n + (1-theta) Phi^{n+1}. Pairing g_n with Psi makes the
// discrete duality identity hold to roundoff.

#include "wentzell/assembly.hpp"
#include "wentzell/errors.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace wentzell {

/// Boundary data, one column per time step. Column n is the value acting on
/// step n -> n+1, i.e. at time level t_n + theta dt.
struct BoundarySignal {
  Eigen::MatrixXd values; // (num_boundary x nt)

  Index steps() const { return values.cols(); }
  Index num_boundary() const { return values.rows(); }

  static BoundarySignal zero(Index num_boundary, Index nt)
  {
    return {Eigen::MatrixXd::Zero(num_boundary, nt)};
  }

  static BoundarySignal constant(Index num_boundary, Index nt, double value)
  {
    return {Eigen::MatrixXd::Constant(num_boundary, nt, value)};
  }

  /// Theta-average of nodal samples (num_boundary x nt+1).
  static BoundarySignal from_samples(const Eigen::MatrixXd& samples, double theta)
  {
    if (samples.cols() < 2)
      throw std::invalid_argument("BoundarySignal::from_samples: need at least two samples");
    const Index nt = samples.cols() - 1;
    BoundarySignal g{Eigen::MatrixXd(samples.rows(), nt)};
    for (Index n = 0; n < nt; ++n)
      g.values.col(n) = (1.0 - theta) * samples.col(n) + theta * samples.col(n + 1);
    return g;
  }
};

struct Trajectory {
  Eigen::VectorXd times;  // t_0 = 0 < ... < t_N = T
  Eigen::MatrixXd states; // (dofs x N+1), column k is the state at times(k)
  double theta = 1.0;
  double dt = 0.0;

  Index steps() const { return states.cols() - 1; }
  Eigen::VectorXd state(Index k) const { return states.col(k); }
  Eigen::VectorXd initial_state() const { return states.col(0); }
  Eigen::VectorXd final_state() const { return states.col(states.cols() - 1); }

  /// Adjoint value paired with step n: theta Phi^n + (1-theta) Phi^{n+1}.
  Eigen::VectorXd adjoint_level(Index n) const
  {
    return theta * states.col(n) + (1.0 - theta) * states.col(n + 1);
  }
};

inline void check_time_grid(double T, Index nt, double theta)
{
  if (!(T > 0.0))
    throw std::invalid_argument("time horizon T must be positive");
  if (nt < 1)
    throw std::invalid_argument("number of time steps must be >= 1");
  if (!(theta >= 0.5 && theta <= 1.0))
    throw std::invalid_argument("theta must lie in [0.5, 1]");
}

inline Eigen::VectorXd uniform_times(double T, Index nt)
{
  Eigen::VectorXd t(nt + 1);
  const double dt = T / static_cast<double>(nt);
  for (Index k = 0; k <= nt; ++k)
    t(k) = (k == nt) ? T : dt * static_cast<double>(k);
  return t;
}

/// Factorizes M + theta dt K once; shared read-only by any number of solves.
class ThetaStepper {
public:
  ThetaStepper(const DiscreteSystem& sys, double dt, double theta)
      : mass_(sys.mass), B_(sys.B), dt_(dt), theta_(theta)
  {
    const SparseMatrix M = sys.mass_matrix();
    lhs_ = M + (theta * dt) * sys.K;
    rhs_ = M - ((1.0 - theta) * dt) * sys.K;
    solver_.compute(lhs_);
    if (solver_.info() != Eigen::Success)
      throw NumericalError("ThetaStepper: Cholesky factorization failed");
  }

  double dt() const { return dt_; }
  double theta() const { return theta_; }

  Eigen::VectorXd forward(const Eigen::VectorXd& u) const { return solver_.solve(rhs_ * u); }

  Eigen::VectorXd forward(const Eigen::VectorXd& u, const Eigen::VectorXd& g) const
  {
    Eigen::VectorXd r = rhs_ * u;
    r.noalias() += dt_ * (B_ * g);
    return solver_.solve(r);
  }

  /// Returns Phi^n given Phi^{n+1}.
  Eigen::VectorXd backward(const Eigen::VectorXd& phi) const
  {
    const Eigen::VectorXd psi = solver_.solve(mass_.cwiseProduct(phi));
    return (rhs_ * psi).cwiseQuotient(mass_);
  }

private:
  Eigen::VectorXd mass_;
  SparseMatrix B_;
  SparseMatrix lhs_;
  SparseMatrix rhs_;
  double dt_;
  double theta_;
  Eigen::SimplicialLLT<SparseMatrix> solver_;
};

inline Trajectory solve_forward(const ThetaStepper& stepper, const Eigen::VectorXd& u0,
                                const BoundarySignal* g, double T, Index nt)
{
  Trajectory traj;
  traj.theta = stepper.theta();
  traj.dt = stepper.dt();
  traj.times = uniform_times(T, nt);
  traj.states.resize(u0.size(), nt + 1);
  traj.states.col(0) = u0;
  for (Index n = 0; n < nt; ++n) {
    if (g)
      traj.states.col(n + 1) = stepper.forward(traj.states.col(n), g->values.col(n));
    else
      traj.states.col(n + 1) = stepper.forward(traj.states.col(n));
  }
  return traj;
}

inline Trajectory solve_forward(const DiscreteSystem& sys, const Eigen::VectorXd& u0,
                                const BoundarySignal& g, double T, Index nt, double theta)
{
  check_time_grid(T, nt, theta);
  if (u0.size() != sys.size())
    throw std::invalid_argument("solve_forward: initial state has wrong dimension");
  if (g.num_boundary() != sys.num_boundary() || g.steps() != nt)
    throw std::invalid_argument("solve_forward: boundary signal must be (num_boundary x nt)");
  const ThetaStepper stepper(sys, T / static_cast<double>(nt), theta);
  return solve_forward(stepper, u0, &g, T, nt);
}

inline Trajectory solve_forward(const DiscreteSystem& sys, const Eigen::VectorXd& u0, double T,
                                Index nt, double theta)
{
  return solve_forward(sys, u0, BoundarySignal::zero(sys.num_boundary(), nt), T, nt, theta);
}

inline Trajectory solve_backward(const ThetaStepper& stepper, const Eigen::VectorXd& phi_T, double T,
                                 Index nt)
{
  Trajectory traj;
  traj.theta = stepper.theta();
  traj.dt = stepper.dt();
  traj.times = uniform_times(T, nt);
  traj.states.resize(phi_T.size(), nt + 1);
  traj.states.col(nt) = phi_T;
  for (Index n = nt; n > 0; --n)
    traj.states.col(n - 1) = stepper.backward(traj.states.col(n));
  return traj;
}

/// Adjoint solution Phi(t) = e^{(T-t)A} Phi_T, stored forward in time.
inline Trajectory solve_backward(const DiscreteSystem& sys, const Eigen::VectorXd& phi_T, double T,
                                 Index nt, double theta)
{
  check_time_grid(T, nt, theta);
  if (phi_T.size() != sys.size())
    throw std::invalid_argument("solve_backward: final state has wrong dimension");
  const ThetaStepper stepper(sys, T / static_cast<double>(nt), theta);
  return solve_backward(stepper, phi_T, T, nt);
}

struct DualityTerms {
  double final_pairing = 0.0;   // <U^N, Phi^N>_M
  double initial_pairing = 0.0; // <U^0, Phi^0>_M
  double control_pairing = 0.0; // sum_n dt g_n^T B^T Psi_n

  double residual() const { return std::abs(final_pairing - initial_pairing - control_pairing); }
  double scale() const
  {
    return std::abs(final_pairing) + std::abs(initial_pairing) + std::abs(control_pairing);
  }
};

inline DualityTerms duality_terms(const DiscreteSystem& sys, const Trajectory& fwd, const Trajectory& adj,
                                  const BoundarySignal& g)
{
  if (fwd.steps() != adj.steps() || fwd.theta != adj.theta || fwd.dt != adj.dt)
    throw std::invalid_argument("duality_residual: forward and adjoint discretizations differ");
  if (g.steps() != fwd.steps() || g.num_boundary() != sys.num_boundary())
    throw std::invalid_argument("duality_residual: boundary signal does not match the time grid");
  const Index N = fwd.steps();
  DualityTerms d;
  d.final_pairing = inner_X2(sys, fwd.state(N), adj.state(N));
  d.initial_pairing = inner_X2(sys, fwd.state(0), adj.state(0));
  for (Index n = 0; n < N; ++n)
    d.control_pairing += fwd.dt * g.values.col(n).dot(sys.B.transpose() * adj.adjoint_level(n));
  return d;
}

/// Relative residual of <U(T),Phi_T> - <U_0,Phi(0)> = int int g phi_Gamma.
/// Returns 0 when all three pairings vanish.
inline double duality_residual(const DiscreteSystem& sys, const Trajectory& fwd, const Trajectory& adj,
                               const BoundarySignal& g)
{
  const DualityTerms d = duality_terms(sys, fwd, adj, g);
  const double s = d.scale();
  return s > 0.0 ? d.residual() / s : 0.0;
}

/// Exact propagator of u' = A u with A = -M^{-1} K for small systems, via the
/// symmetric eigendecomposition of M^{-1/2} K M^{-1/2}.
class DenseSemigroup {
public:
  static constexpr Index max_dimension = 200;

  explicit DenseSemigroup(const DiscreteSystem& sys)
  {
    const Index n = sys.size();
    if (n > max_dimension)
      throw std::invalid_argument("DenseSemigroup: dimension " + std::to_string(n) + " exceeds " +
                                  std::to_string(max_dimension));
    sqrt_mass_ = sys.mass.cwiseSqrt();
    const Eigen::MatrixXd Kd = Eigen::MatrixXd(sys.K);
    Eigen::MatrixXd S = sqrt_mass_.cwiseInverse().asDiagonal() * Kd * sqrt_mass_.cwiseInverse().asDiagonal();
    S = 0.5 * (S + S.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    if (es.info() != Eigen::Success)
      throw NumericalError("DenseSemigroup: eigendecomposition failed");
    rates_ = es.eigenvalues().cwiseMax(0.0);
    Q_ = es.eigenvectors();
  }

  const Eigen::VectorXd& rates() const { return rates_; }

  /// e^{tA} u
  Eigen::VectorXd apply(double t, const Eigen::VectorXd& u) const
  {
    Eigen::VectorXd c = Q_.transpose() * sqrt_mass_.cwiseProduct(u);
    c.array() *= (-t * rates_.array()).exp();
    return (Q_ * c).cwiseQuotient(sqrt_mass_);
  }

  /// e^{sA} int_0^tau e^{rA} dr f
  Eigen::VectorXd apply_integrated(double s, double tau, const Eigen::VectorXd& f) const
  {
    Eigen::VectorXd c = Q_.transpose() * sqrt_mass_.cwiseProduct(f);
    for (Index k = 0; k < c.size(); ++k) {
      const double lam = rates_(k);
      const double x = lam * tau;
      const double integral = (x < 1e-8) ? tau * (1.0 - 0.5 * x) : -std::expm1(-x) / lam;
      c(k) *= std::exp(-s * lam) * integral;
    }
    return (Q_ * c).cwiseQuotient(sqrt_mass_);
  }

private:
  Eigen::VectorXd sqrt_mass_;
  Eigen::VectorXd rates_;
  Eigen::MatrixXd Q_;
};

/// Variation-of-constants formula U(T) = e^{TA} U0 + int_0^T e^{(T-s)A} M^{-1} B g(s) ds
/// with g frozen at its per-step value on each subinterval and the exponential
/// integrated exactly. Dense; intended as an oracle for small systems.
inline Eigen::VectorXd duhamel_final(const DiscreteSystem& sys, const Eigen::VectorXd& u0,
                                     const BoundarySignal& g, double T, Index nt)
{
  if (u0.size() != sys.size())
    throw std::invalid_argument("duhamel_final: initial state has wrong dimension");
  if (T == 0.0)
    return u0;
  if (!(T > 0.0) || nt < 1)
    throw std::invalid_argument("duhamel_final: requires T >= 0 and nt >= 1");
  if (g.steps() != nt || g.num_boundary() != sys.num_boundary())
    throw std::invalid_argument("duhamel_final: boundary signal must be (num_boundary x nt)");
  const DenseSemigroup semigroup(sys);
  const double dt = T / static_cast<double>(nt);
  Eigen::VectorXd u = semigroup.apply(T, u0);
  for (Index n = 0; n < nt; ++n) {
    if (g.values.col(n).isZero(0.0))
      continue;
    const Eigen::VectorXd f = (sys.B * g.values.col(n)).cwiseQuotient(sys.mass);
    const double remaining = T - dt * static_cast<double>(n + 1);
    u += semigroup.apply_integrated(std::max(remaining, 0.0), dt, f);
  }
  return u;
}

/// Two estimates of gamma * d_nu phi at the interior time nodes of an adjoint
/// trajectory, each built with centred time differences.
struct FluxRecovery {
  Eigen::VectorXd times;       // t_1 .. t_{N-1}
  Eigen::MatrixXd variational; // (nb x N-1): boundary rows of gamma K_bulk phi - M_bulk phi_t
  Eigen::MatrixXd equation;    // (nb x N-1): phi_t + delta Lap_G phi - beta phi
  Eigen::VectorXd weights;     // boundary quadrature weights
  double discrepancy = 0.0;    // relative discrete L2(Sigma_T) distance

  /// Relative discrepancy restricted to time nodes in [t0, t1].
  double discrepancy_on(double t0, double t1) const
  {
    double diff2 = 0.0;
    double ref2 = 0.0;
    for (Index n = 0; n < times.size(); ++n) {
      if (times(n) < t0 || times(n) > t1)
        continue;
      const Eigen::ArrayXd d = (variational.col(n) - equation.col(n)).array();
      diff2 += (weights.array() * d.square()).sum();
      ref2 += (weights.array() * equation.col(n).array().square()).sum();
    }
    return ref2 > 0.0 ? std::sqrt(diff2 / ref2) : std::sqrt(diff2);
  }
};

inline FluxRecovery recover_normal_flux(const DiscreteSystem& sys, const Trajectory& traj)
{
  const Index N = traj.steps();
  if (N < 2)
    throw std::invalid_argument("recover_normal_flux: need at least three time levels");
  if (traj.states.rows() != sys.size())
    throw std::invalid_argument("recover_normal_flux: trajectory does not match system");

  const auto& mesh = sys.mesh;
  const Index nb = sys.num_boundary();
  FluxRecovery out;
  out.times = traj.times.segment(1, N - 1);
  out.weights = sys.surface_weights;
  out.variational.resize(nb, N - 1);
  out.equation.resize(nb, N - 1);

  double diff2 = 0.0;
  double ref2 = 0.0;
  for (Index n = 1; n < N; ++n) {
    const Eigen::VectorXd phi = traj.state(n);
    const Eigen::VectorXd phi_t = (traj.state(n + 1) - traj.state(n - 1)) / (2.0 * traj.dt);
    const Eigen::VectorXd bulk_flux = sys.gamma * (sys.bulk_stiffness * phi) - sys.bulk_mass.cwiseProduct(phi_t);
    const Eigen::VectorXd phi_b = trace(mesh, phi);
    const Eigen::VectorXd lap_b = -(sys.surface_stiffness * phi_b).cwiseQuotient(sys.surface_weights);
    for (Index k = 0; k < nb; ++k) {
      const Index node = mesh.boundary_nodes[static_cast<std::size_t>(k)];
      const double var = bulk_flux(node) / sys.surface_weights(k);
      const double eq = phi_t(node) + sys.delta * lap_b(k) - sys.beta(k) * phi_b(k);
      out.variational(k, n - 1) = var;
      out.equation(k, n - 1) = eq;
      diff2 += traj.dt * sys.surface_weights(k) * (var - eq) * (var - eq);
      ref2 += traj.dt * sys.surface_weights(k) * eq * eq;
    }
  }
  out.discrepancy = ref2 > 0.0 ? std::sqrt(diff2 / ref2) : std::sqrt(diff2);
  return out;
}

} // namespace wentzell
