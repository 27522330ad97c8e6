#pragma once

// Lumped P1 discretization of the bulk-surface energy form
//   gamma * int_Omega grad u . grad v  +  delta * int_Gamma grad_G u . grad_G v
//   + int_Gamma beta u v
// on the product space L2(Omega) x L2(Gamma). One unknown per bulk node; the
// boundary nodes carry both the bulk and the surface measure.

#include "wentzell/errors.hpp"
#include "wentzell/mesh.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace wentzell {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// A bulk field together with a boundary field.
struct StatePair {
  Eigen::VectorXd bulk;    // per bulk node
  Eigen::VectorXd surface; // per boundary node
};

/// Packs a pair into the trace-coupled unknown vector: interior values come
/// from `bulk`, boundary values from `surface`.
inline Eigen::VectorXd to_coupled(const BulkSurfaceMesh& mesh, const StatePair& pair)
{
  if (pair.bulk.size() != mesh.num_nodes() || pair.surface.size() != mesh.num_boundary())
    throw std::invalid_argument("to_coupled: field sizes do not match mesh");
  Eigen::VectorXd x = pair.bulk;
  for (Index k = 0; k < mesh.num_boundary(); ++k)
    x(mesh.boundary_nodes[static_cast<std::size_t>(k)]) = pair.surface(k);
  return x;
}

inline Eigen::VectorXd trace(const BulkSurfaceMesh& mesh, const Eigen::VectorXd& x)
{
  if (x.size() != mesh.num_nodes())
    throw std::invalid_argument("trace: vector size does not match mesh");
  Eigen::VectorXd out(mesh.num_boundary());
  for (Index k = 0; k < mesh.num_boundary(); ++k)
    out(k) = x(mesh.boundary_nodes[static_cast<std::size_t>(k)]);
  return out;
}

inline StatePair from_coupled(const BulkSurfaceMesh& mesh, const Eigen::VectorXd& x)
{
  return {x, trace(mesh, x)};
}

inline bool is_trace_coupled(const BulkSurfaceMesh& mesh, const StatePair& pair, double tol = 1e-14)
{
  if (pair.bulk.size() != mesh.num_nodes() || pair.surface.size() != mesh.num_boundary())
    return false;
  return (trace(mesh, pair.bulk) - pair.surface).cwiseAbs().maxCoeff() <= tol;
}

struct DiscreteSystem {
  BulkSurfaceMesh mesh;
  double gamma = 1.0;
  double delta = 0.0;
  Eigen::VectorXd beta;            // per boundary node
  double beta0 = 0.0;              // min of beta

  Eigen::VectorXd bulk_mass;       // lumped, per bulk node
  Eigen::VectorXd surface_weights; // lumped boundary measure, per boundary node
  Eigen::VectorXd mass;            // bulk_mass + surface_weights on trace dofs

  SparseMatrix bulk_stiffness;     // int grad phi_i . grad phi_j (no gamma)
  SparseMatrix surface_stiffness;  // (nb x nb) arclength stiffness (no delta)
  SparseMatrix K;                  // full form matrix
  SparseMatrix B;                  // (n x nb) control injection

  Index size() const { return mass.size(); }
  Index num_boundary() const { return surface_weights.size(); }

  SparseMatrix mass_matrix() const
  {
    SparseMatrix M(size(), size());
    M.reserve(Eigen::VectorXi::Constant(size(), 1));
    for (Index i = 0; i < size(); ++i)
      M.insert(i, i) = mass(i);
    M.makeCompressed();
    return M;
  }

  /// A = -M^{-1} K applied to x.
  Eigen::VectorXd apply_generator(const Eigen::VectorXd& x) const
  {
    return -(K * x).cwiseQuotient(mass);
  }
};

namespace detail {

/// Element stiffness int grad phi_a . grad phi_b and lumped mass |c|/(d+1).
inline void add_bulk_contributions(const BulkSurfaceMesh& mesh, std::vector<Triplet>& k, Eigen::VectorXd& m)
{
  const Index nv = mesh.dim + 1;
  for (Index c = 0; c < mesh.num_cells(); ++c) {
    const CellGeometry geo = cell_geometry(mesh, c);
    if (!(geo.volume > 0.0))
      throw std::invalid_argument("assemble: degenerate cell " + std::to_string(c));
    for (Index a = 0; a < nv; ++a) {
      const Index va = mesh.cells(c, a);
      k.emplace_back(va, va, geo.volume * geo.grads.col(a).squaredNorm());
      for (Index b = a + 1; b < nv; ++b) {
        const Index vb = mesh.cells(c, b);
        const double s = geo.volume * geo.grads.col(a).dot(geo.grads.col(b));
        k.emplace_back(va, vb, s);
        k.emplace_back(vb, va, s);
      }
      m(va) += geo.volume / static_cast<double>(nv);
    }
  }
}

} // namespace detail

inline DiscreteSystem assemble(const BulkSurfaceMesh& mesh, double gamma, double delta,
                               const Eigen::VectorXd& beta)
{
  if (!(gamma > 0.0))
    throw std::invalid_argument("assemble: gamma must be positive");
  if (!(delta >= 0.0))
    throw std::invalid_argument("assemble: delta must be nonnegative");
  if (beta.size() != mesh.num_boundary())
    throw std::invalid_argument("assemble: beta must have one value per boundary node");
  for (Index k = 0; k < beta.size(); ++k)
    if (!(beta(k) >= 0.0))
      throw std::invalid_argument("assemble: beta must be nonnegative (entry " + std::to_string(k) + ")");
  if (const auto err = validate(mesh); !err.empty())
    throw std::invalid_argument("assemble: invalid mesh: " + err);

  DiscreteSystem sys;
  sys.mesh = mesh;
  sys.gamma = gamma;
  sys.delta = delta;
  sys.beta = beta;
  sys.beta0 = beta.minCoeff();

  const Index n = mesh.num_nodes();
  const Index nb = mesh.num_boundary();

  std::vector<Triplet> kb;
  sys.bulk_mass = Eigen::VectorXd::Zero(n);
  detail::add_bulk_contributions(mesh, kb, sys.bulk_mass);
  sys.bulk_stiffness.resize(n, n);
  sys.bulk_stiffness.setFromTriplets(kb.begin(), kb.end());

  // Surface measure and Laplace-Beltrami stiffness along the boundary polygon.
  // In 1D the boundary is two points with counting measure.
  sys.surface_weights = Eigen::VectorXd::Zero(nb);
  std::vector<Triplet> ks;
  if (mesh.dim == 1) {
    sys.surface_weights.setOnes();
  } else {
    std::vector<Index> local(static_cast<std::size_t>(n), -1);
    for (Index k = 0; k < nb; ++k)
      local[static_cast<std::size_t>(mesh.boundary_nodes[static_cast<std::size_t>(k)])] = k;
    for (auto [i, j] : mesh.boundary_edges) {
      const Index a = local[static_cast<std::size_t>(i)];
      const Index b = local[static_cast<std::size_t>(j)];
      const double len = (mesh.nodes.row(i) - mesh.nodes.row(j)).norm();
      sys.surface_weights(a) += 0.5 * len;
      sys.surface_weights(b) += 0.5 * len;
      const double s = 1.0 / len;
      ks.emplace_back(a, a, s);
      ks.emplace_back(b, b, s);
      ks.emplace_back(a, b, -s);
      ks.emplace_back(b, a, -s);
    }
  }
  sys.surface_stiffness.resize(nb, nb);
  sys.surface_stiffness.setFromTriplets(ks.begin(), ks.end());

  sys.mass = sys.bulk_mass;
  std::vector<Triplet> kt;
  std::vector<Triplet> bt;
  for (Index k = 0; k < nb; ++k) {
    const Index node = mesh.boundary_nodes[static_cast<std::size_t>(k)];
    sys.mass(node) += sys.surface_weights(k);
    kt.emplace_back(node, node, sys.surface_weights(k) * beta(k));
    bt.emplace_back(node, k, sys.surface_weights(k));
  }
  if (delta > 0.0) {
    for (Index col = 0; col < sys.surface_stiffness.outerSize(); ++col)
      for (SparseMatrix::InnerIterator it(sys.surface_stiffness, col); it; ++it)
        kt.emplace_back(mesh.boundary_nodes[static_cast<std::size_t>(it.row())],
                        mesh.boundary_nodes[static_cast<std::size_t>(it.col())], delta * it.value());
  }
  SparseMatrix extra(n, n);
  extra.setFromTriplets(kt.begin(), kt.end());
  sys.K = gamma * sys.bulk_stiffness + extra;
  sys.K.makeCompressed();

  sys.B.resize(n, nb);
  sys.B.setFromTriplets(bt.begin(), bt.end());
  return sys;
}

inline DiscreteSystem assemble(const BulkSurfaceMesh& mesh, double gamma, double delta, double beta)
{
  return assemble(mesh, gamma, delta, Eigen::VectorXd::Constant(mesh.num_boundary(), beta));
}

/// beta evaluated at boundary node coordinates.
inline DiscreteSystem assemble(const BulkSurfaceMesh& mesh, double gamma, double delta,
                               const std::function<double(const Eigen::VectorXd&)>& beta)
{
  Eigen::VectorXd values(mesh.num_boundary());
  for (Index k = 0; k < mesh.num_boundary(); ++k)
    values(k) = beta(mesh.point(mesh.boundary_nodes[static_cast<std::size_t>(k)]));
  return assemble(mesh, gamma, delta, values);
}

inline double inner_X2(const DiscreteSystem& sys, const Eigen::VectorXd& u, const Eigen::VectorXd& v)
{
  if (u.size() != sys.size() || v.size() != sys.size())
    throw std::invalid_argument("inner_X2: dimension mismatch");
  return (u.array() * sys.mass.array() * v.array()).sum();
}

inline double norm_X2(const DiscreteSystem& sys, const Eigen::VectorXd& u)
{
  return std::sqrt(inner_X2(sys, u, u));
}

/// Lumped L2(Gamma) inner product of two boundary fields.
inline double inner_boundary(const DiscreteSystem& sys, const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
  if (a.size() != sys.num_boundary() || b.size() != sys.num_boundary())
    throw std::invalid_argument("inner_boundary: dimension mismatch");
  return (a.array() * sys.surface_weights.array() * b.array()).sum();
}

struct CoercivityEstimate {
  double value = 0.0;          // smallest generalized eigenvalue of (K, M)
  Eigen::VectorXd eigenvector; // M-normalized, positive first nonzero entry
  int iterations = 0;
};

/// Inverse power iteration for the smallest eigenvalue of K x = c M x.
inline CoercivityEstimate estimate_coercivity(const DiscreteSystem& sys, double tol = 1e-10,
                                              int max_iterations = 10000)
{
  if (!(sys.beta0 > 0.0))
    throw std::invalid_argument("estimate_coercivity: requires beta >= beta0 > 0");

  Eigen::SimplicialLDLT<SparseMatrix> solver(sys.K);
  if (solver.info() != Eigen::Success)
    throw NumericalError("estimate_coercivity: factorization of K failed");

  Eigen::VectorXd x = Eigen::VectorXd::Ones(sys.size());
  x /= norm_X2(sys, x);
  double rayleigh = x.dot(sys.K * x);
  for (int it = 1; it <= max_iterations; ++it) {
    Eigen::VectorXd y = solver.solve(sys.mass.cwiseProduct(x));
    y /= norm_X2(sys, y);
    const double next = y.dot(sys.K * y);
    x = std::move(y);
    if (std::abs(next - rayleigh) <= tol * std::abs(next)) {
      if (x(0) < 0.0)
        x = -x;
      return {next, x, it};
    }
    rayleigh = next;
  }
  throw NumericalError("estimate_coercivity: inverse iteration did not converge in " +
                       std::to_string(max_iterations) + " iterations");
}

/// Writes "row col value" lines, one per stored entry, 0-based indices.
inline void write_coordinate(std::ostream& out, const SparseMatrix& a)
{
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  out << "% " << a.rows() << ' ' << a.cols() << ' ' << a.nonZeros() << '\n';
  for (Index col = 0; col < a.outerSize(); ++col)
    for (SparseMatrix::InnerIterator it(a, col); it; ++it)
      out << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
  out.precision(old);
}

} // namespace wentzell
