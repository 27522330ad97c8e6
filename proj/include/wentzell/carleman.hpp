#pragma once

// Carleman weights
//   theta(t) = 1 / (t (T - t)),
//   xi(x)    = exp(lambda (m |eta|_inf + eta(x))),
//   alpha    = theta(t) (exp(2 lambda m |eta|_inf) - xi(x)),
// and discrete quadratures of both sides of the weighted estimate for
// adjoint trajectories.

#include "wentzell/assembly.hpp"
#include "wentzell/evolution.hpp"
#include "wentzell/mesh.hpp"
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

struct CarlemanParams {
  double lambda = 1.0;
  double R = 1.0;
  double m = 2.0;
  double T = 1.0;
  EtaField eta;

  void validate() const
  {
    if (!(lambda > 0.0) || !(R > 0.0) || !(T > 0.0))
      throw std::invalid_argument("CarlemanParams: lambda, R and T must be positive");
    if (!(m > 1.0))
      throw std::invalid_argument("CarlemanParams: m must exceed 1");
  }

  double theta(double t) const { return 1.0 / (t * (T - t)); }

  /// d theta / dt
  double theta_t(double t) const
  {
    const double q = t * (T - t);
    return (2.0 * t - T) / (q * q);
  }

  double log_xi(double eta_value) const { return lambda * (m * eta.sup_norm + eta_value); }
  double xi(double eta_value) const { return std::exp(log_xi(eta_value)); }

  /// Spatial factor p of alpha = theta p; positive because m > 1.
  double p(double eta_value) const
  {
    return std::exp(2.0 * lambda * m * eta.sup_norm) - xi(eta_value);
  }
};

struct WeightEval {
  Eigen::VectorXd times;
  Eigen::VectorXd theta;      // per time
  Eigen::VectorXd xi;         // per node
  Eigen::MatrixXd alpha;      // (nodes x times)
  Eigen::MatrixXd exp_factor; // exp(-2 R alpha), (nodes x times)
};

inline void check_open_times(const CarlemanParams& params, const Eigen::VectorXd& times)
{
  for (Index k = 0; k < times.size(); ++k)
    if (!(times(k) > 0.0 && times(k) < params.T))
      throw std::invalid_argument("Carleman weights are singular at t = 0 and t = T");
}

inline WeightEval eval_weights(const CarlemanParams& params, const BulkSurfaceMesh& mesh,
                               const Eigen::VectorXd& times)
{
  params.validate();
  if (params.eta.values.size() != mesh.num_nodes())
    throw std::invalid_argument("eval_weights: eta does not match mesh");
  check_open_times(params, times);

  WeightEval w;
  w.times = times;
  const Index n = mesh.num_nodes();
  w.theta.resize(times.size());
  for (Index k = 0; k < times.size(); ++k)
    w.theta(k) = params.theta(times(k));
  w.xi.resize(n);
  Eigen::VectorXd p(n);
  for (Index i = 0; i < n; ++i) {
    w.xi(i) = params.xi(params.eta.values(i));
    p(i) = params.p(params.eta.values(i));
  }
  w.alpha = p * w.theta.transpose();
  w.exp_factor = (-2.0 * params.R * w.alpha.array()).exp().matrix();
  return w;
}

namespace detail {

/// theta^k xi^k exp(-2 R alpha) evaluated in log space.
inline double log_weight(const CarlemanParams& params, double theta, double eta_value, int power)
{
  const double alpha = theta * params.p(eta_value);
  return power * (std::log(theta) + params.log_xi(eta_value)) - 2.0 * params.R * alpha;
}

inline double weight(const CarlemanParams& params, double theta, double eta_value, int power)
{
  return std::exp(log_weight(params, theta, eta_value, power));
}

inline void check_trajectory(const DiscreteSystem& sys, const Trajectory& adj, const CarlemanParams& params)
{
  params.validate();
  if (adj.steps() < 2)
    throw std::invalid_argument("Carleman quadrature needs an interior time level");
  if (adj.states.rows() != sys.size())
    throw std::invalid_argument("Carleman quadrature: trajectory does not match system");
  if (params.eta.values.size() != sys.size())
    throw std::invalid_argument("Carleman quadrature: eta does not match mesh");
  if (std::abs(adj.times(adj.steps()) - params.T) > 1e-12 * params.T)
    throw std::invalid_argument("Carleman quadrature: trajectory horizon differs from T");
}

} // namespace detail

/// Left side of the estimate:
///   lambda^3 R^2 Q_Omega(theta^3 xi^3 e^{-2R alpha} phi^2)
/// + lambda     Q_Omega(theta xi e^{-2R alpha} |grad phi|^2)
/// + lambda^2 R^2 Q_Gamma(theta^3 xi^3 e^{-2R alpha} phi^2)
/// with lumped space quadrature and the trapezoidal rule in time (the
/// integrand is taken as zero at t = 0 and t = T).
inline double carleman_lhs(const DiscreteSystem& sys, const Trajectory& adj, const CarlemanParams& params)
{
  detail::check_trajectory(sys, adj, params);
  const auto& mesh = sys.mesh;
  const auto& eta = params.eta.values;
  const double lam = params.lambda;
  const double R2 = params.R * params.R;
  const Index nv = mesh.dim + 1;

  std::vector<CellGeometry> cells;
  cells.reserve(static_cast<std::size_t>(mesh.num_cells()));
  for (Index c = 0; c < mesh.num_cells(); ++c)
    cells.push_back(cell_geometry(mesh, c));

  double total = 0.0;
  for (Index n = 1; n < adj.steps(); ++n) {
    const double th = params.theta(adj.times(n));
    const Eigen::VectorXd phi = adj.state(n);

    double bulk = 0.0;
    for (Index i = 0; i < sys.size(); ++i)
      bulk += sys.bulk_mass(i) * detail::weight(params, th, eta(i), 3) * phi(i) * phi(i);

    double grad = 0.0;
    for (Index c = 0; c < mesh.num_cells(); ++c) {
      const auto& geo = cells[static_cast<std::size_t>(c)];
      Eigen::VectorXd g = Eigen::VectorXd::Zero(mesh.dim);
      for (Index a = 0; a < nv; ++a)
        g += phi(mesh.cells(c, a)) * geo.grads.col(a);
      double wsum = 0.0;
      for (Index a = 0; a < nv; ++a)
        wsum += detail::weight(params, th, eta(mesh.cells(c, a)), 1);
      grad += geo.volume / static_cast<double>(nv) * wsum * g.squaredNorm();
    }

    double surf = 0.0;
    for (Index k = 0; k < sys.num_boundary(); ++k) {
      const Index node = mesh.boundary_nodes[static_cast<std::size_t>(k)];
      surf += sys.surface_weights(k) * detail::weight(params, th, eta(node), 3) * phi(node) * phi(node);
    }

    total += adj.dt * (lam * lam * lam * R2 * bulk + lam * grad + lam * lam * R2 * surf);
  }
  return total;
}

enum class RhsPath { Direct, Equation };

/// Right side Q_Gamma(theta xi e^{-2R alpha} |phi_t + delta Lap_G phi - gamma d_nu phi|^2).
/// The direct path assembles the boundary combination from the recovered
/// variational flux and centred time differences; the equation path replaces
/// it by beta phi using the adjoint boundary equation.
inline double carleman_rhs(const DiscreteSystem& sys, const Trajectory& adj, const CarlemanParams& params,
                           RhsPath path)
{
  detail::check_trajectory(sys, adj, params);
  const auto& mesh = sys.mesh;
  const auto& eta = params.eta.values;

  FluxRecovery flux;
  if (path == RhsPath::Direct)
    flux = recover_normal_flux(sys, adj);

  double total = 0.0;
  for (Index n = 1; n < adj.steps(); ++n) {
    const double th = params.theta(adj.times(n));
    double surf = 0.0;
    for (Index k = 0; k < sys.num_boundary(); ++k) {
      const Index node = mesh.boundary_nodes[static_cast<std::size_t>(k)];
      const double phi = adj.states(node, n);
      double combo = 0.0;
      if (path == RhsPath::Equation) {
        combo = sys.beta(k) * phi;
      } else {
        // phi_t + delta Lap_G phi = equation flux + beta phi
        const double tangential = flux.equation(k, n - 1) + sys.beta(k) * phi;
        combo = tangential - flux.variational(k, n - 1);
      }
      surf += sys.surface_weights(k) * detail::weight(params, th, eta(node), 1) * combo * combo;
    }
    total += adj.dt * surf;
  }
  return total;
}

/// Extremes of the weights over a time grid, used to check the structural
/// bounds the estimate relies on.
struct WeightBounds {
  double floor_middle = 0.0;      // min theta^3 xi^3 e^{-2R alpha}, nodes x [T/4, 3T/4]
  double log_floor_middle = 0.0;  // its logarithm, finite even where the value underflows
  double ceiling_boundary = 0.0;  // max theta xi e^{-2R alpha}, boundary x (0, T)
  double alpha_t_constant = 0.0;  // max |alpha_t| / (theta^2 xi^2)
  double theta_xi_min = 0.0;      // min theta xi
  double theta_xi_lower_bound = 0.0; // 4 e^{lambda m |eta|} / T^2
};

inline double theta_xi_lower_bound(const CarlemanParams& params)
{
  return (4.0 / (params.T * params.T)) * params.xi(0.0);
}

/// Evaluates the bounds on the uniform grid t_k = k T / nt, k = 1..nt-1.
inline WeightBounds weight_bounds(const CarlemanParams& params, const BulkSurfaceMesh& mesh, Index nt)
{
  params.validate();
  if (nt < 2)
    throw std::invalid_argument("weight_bounds: need nt >= 2");
  const auto& eta = params.eta.values;
  WeightBounds b;
  b.floor_middle = std::numeric_limits<double>::infinity();
  b.log_floor_middle = std::numeric_limits<double>::infinity();
  b.theta_xi_min = std::numeric_limits<double>::infinity();
  b.theta_xi_lower_bound = theta_xi_lower_bound(params);

  std::vector<char> on_boundary(static_cast<std::size_t>(mesh.num_nodes()), 0);
  for (Index node : mesh.boundary_nodes)
    on_boundary[static_cast<std::size_t>(node)] = 1;

  const Eigen::VectorXd times = uniform_times(params.T, nt);
  for (Index k = 1; k < nt; ++k) {
    const double t = times(k);
    const double th = params.theta(t);
    const bool middle = t >= 0.25 * params.T && t <= 0.75 * params.T;
    for (Index i = 0; i < mesh.num_nodes(); ++i) {
      const double xi = params.xi(eta(i));
      b.theta_xi_min = std::min(b.theta_xi_min, th * xi);
      b.alpha_t_constant =
          std::max(b.alpha_t_constant, std::abs(params.theta_t(t) * params.p(eta(i))) / (th * th * xi * xi));
      if (middle) {
        const double lw = detail::log_weight(params, th, eta(i), 3);
        b.log_floor_middle = std::min(b.log_floor_middle, lw);
        b.floor_middle = std::min(b.floor_middle, std::exp(lw));
      }
      if (on_boundary[static_cast<std::size_t>(i)])
        b.ceiling_boundary = std::max(b.ceiling_boundary, detail::weight(params, th, eta(i), 1));
    }
  }
  return b;
}

struct CarlemanGrid {
  std::vector<double> lambdas;
  std::vector<double> Rs;
  double m = 2.0;
  double T = 1.0;
  Index nt = 128;
  double theta = 1.0;
};

struct SweepRow {
  double lambda = 0.0;
  double R = 0.0;
  Index sample_id = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;
};

struct SweepCell {
  double lambda = 0.0;
  double R = 0.0;
  double max_ratio = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;   // grid order (lambda, R), then sample
  std::vector<SweepCell> cells; // grid order
};

/// For each random unit final datum and each (lambda, R) on the grid, records
/// LHS, RHS (equation path) and their ratio.
inline SweepResult carleman_sweep(const DiscreteSystem& sys, const CarlemanGrid& grid, Index samples,
                                  std::uint64_t seed, unsigned threads = 1)
{
  if (samples < 1)
    throw std::invalid_argument("carleman_sweep: need at least one sample");
  if (grid.lambdas.empty() || grid.Rs.empty())
    throw std::invalid_argument("carleman_sweep: empty parameter grid");
  check_time_grid(grid.T, grid.nt, grid.theta);

  const EtaField eta = build_eta(sys.mesh);
  const ThetaStepper stepper(sys, grid.T / static_cast<double>(grid.nt), grid.theta);
  const std::size_t ns = static_cast<std::size_t>(samples);

  std::vector<Trajectory> adj(ns);
  parallel_for(ns, threads, [&](std::size_t s) {
    adj[s] = solve_backward(stepper, random_unit_state(sys, seed, s), grid.T, grid.nt);
  });

  struct Cell {
    double lambda;
    double R;
  };
  std::vector<Cell> cells;
  for (double lam : grid.lambdas)
    for (double R : grid.Rs)
      cells.push_back({lam, R});

  SweepResult out;
  out.rows.resize(cells.size() * ns);
  parallel_for(out.rows.size(), threads, [&](std::size_t idx) {
    const Cell& c = cells[idx / ns];
    const std::size_t s = idx % ns;
    CarlemanParams params{c.lambda, c.R, grid.m, grid.T, eta};
    SweepRow row;
    row.lambda = c.lambda;
    row.R = c.R;
    row.sample_id = static_cast<Index>(s);
    row.lhs = carleman_lhs(sys, adj[s], params);
    row.rhs = carleman_rhs(sys, adj[s], params, RhsPath::Equation);
    row.ratio = row.rhs > 0.0 ? row.lhs / row.rhs : std::numeric_limits<double>::infinity();
    out.rows[idx] = row;
  });

  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    SweepCell cell{cells[ci].lambda, cells[ci].R, 0.0};
    for (std::size_t s = 0; s < ns; ++s)
      cell.max_ratio = std::max(cell.max_ratio, out.rows[ci * ns + s].ratio);
    out.cells.push_back(cell);
  }
  return out;
}

} // namespace wentzell
