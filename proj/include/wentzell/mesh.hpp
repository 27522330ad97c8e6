#pragma once

// Bulk/surface meshes for 1D and 2D model domains together with the
// auxiliary function eta used by the Carleman weights.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace wentzell {

using Index = Eigen::Index;

enum class Geometry { Interval, Rectangle, Disk };

inline std::string to_string(Geometry g)
{
  switch (g) {
    case Geometry::Interval: return "interval";
    case Geometry::Rectangle: return "rect";
    case Geometry::Disk: return "disk";
  }
  return "unknown";
}

/// Simplicial mesh of a bounded domain plus the explicit boundary structure.
///
/// In 1D the boundary consists of the two endpoints and `boundary_edges` is
/// empty; in 2D the boundary is a closed polygon whose edges are stored as
/// pairs of bulk node indices, oriented counterclockwise.
struct BulkSurfaceMesh {
  int dim = 1;
  Geometry geometry = Geometry::Interval;
  Eigen::MatrixXd nodes;            // (num_nodes x dim)
  Eigen::MatrixXi cells;            // (num_cells x dim+1)
  std::vector<Index> boundary_nodes;
  std::vector<std::pair<Index, Index>> boundary_edges;
  Eigen::MatrixXd normals;          // (num_boundary x dim), outward, unit
  double h = 0.0;

  // Shape parameters kept so eta can be evaluated in closed form.
  std::vector<double> extents;

  Index num_nodes() const { return nodes.rows(); }
  Index num_cells() const { return cells.rows(); }
  Index num_boundary() const { return static_cast<Index>(boundary_nodes.size()); }

  Eigen::VectorXd point(Index i) const { return nodes.row(i).transpose(); }
};

namespace detail {

inline double cell_diameter(const BulkSurfaceMesh& mesh, Index c)
{
  double d = 0.0;
  const Index k = mesh.cells.cols();
  for (Index a = 0; a < k; ++a)
    for (Index b = a + 1; b < k; ++b)
      d = std::max(d, (mesh.nodes.row(mesh.cells(c, a)) - mesh.nodes.row(mesh.cells(c, b))).norm());
  return d;
}

inline void finalize(BulkSurfaceMesh& mesh)
{
  mesh.h = 0.0;
  for (Index c = 0; c < mesh.num_cells(); ++c)
    mesh.h = std::max(mesh.h, cell_diameter(mesh, c));
}

} // namespace detail

/// Volume and barycentric-coordinate gradients of one simplex.
struct CellGeometry {
  double volume = 0.0;
  Eigen::MatrixXd grads; // (dim x dim+1), column a is grad lambda_a
};

inline CellGeometry cell_geometry(const BulkSurfaceMesh& mesh, Index c)
{
  CellGeometry g;
  if (mesh.dim == 1) {
    const double x0 = mesh.nodes(mesh.cells(c, 0), 0);
    const double x1 = mesh.nodes(mesh.cells(c, 1), 0);
    const double len = x1 - x0;
    g.volume = std::abs(len);
    g.grads.resize(1, 2);
    g.grads << -1.0 / len, 1.0 / len;
    return g;
  }
  const Eigen::Vector2d p0 = mesh.nodes.row(mesh.cells(c, 0)).transpose();
  const Eigen::Vector2d p1 = mesh.nodes.row(mesh.cells(c, 1)).transpose();
  const Eigen::Vector2d p2 = mesh.nodes.row(mesh.cells(c, 2)).transpose();
  const double twice_area = (p1.x() - p0.x()) * (p2.y() - p0.y()) - (p1.y() - p0.y()) * (p2.x() - p0.x());
  g.volume = 0.5 * std::abs(twice_area);
  g.grads.resize(2, 3);
  g.grads.col(0) << p1.y() - p2.y(), p2.x() - p1.x();
  g.grads.col(1) << p2.y() - p0.y(), p0.x() - p2.x();
  g.grads.col(2) << p0.y() - p1.y(), p1.x() - p0.x();
  g.grads /= twice_area;
  return g;
}

/// Uniform partition of [a, b] into n cells.
inline BulkSurfaceMesh build_interval_mesh(double a, double b, Index n)
{
  if (!(a < b))
    throw std::invalid_argument("build_interval_mesh: requires a < b");
  if (n < 2)
    throw std::invalid_argument("build_interval_mesh: requires n >= 2");

  BulkSurfaceMesh mesh;
  mesh.dim = 1;
  mesh.geometry = Geometry::Interval;
  mesh.extents = {a, b};
  mesh.nodes.resize(n + 1, 1);
  const double dx = (b - a) / static_cast<double>(n);
  for (Index i = 0; i <= n; ++i)
    mesh.nodes(i, 0) = (i == n) ? b : a + dx * static_cast<double>(i);
  mesh.cells.resize(n, 2);
  for (Index i = 0; i < n; ++i) {
    mesh.cells(i, 0) = static_cast<int>(i);
    mesh.cells(i, 1) = static_cast<int>(i + 1);
  }
  mesh.boundary_nodes = {0, n};
  mesh.normals.resize(2, 1);
  mesh.normals << -1.0, 1.0;
  detail::finalize(mesh);
  return mesh;
}

/// Structured triangulation of [0, lx] x [0, ly]; every square is split along
/// its (0,0)-(1,1) diagonal. Boundary nodes run counterclockwise from the
/// origin.
inline BulkSurfaceMesh build_rect_mesh(double lx, double ly, Index nx, Index ny)
{
  if (!(lx > 0.0) || !(ly > 0.0))
    throw std::invalid_argument("build_rect_mesh: side lengths must be positive");
  if (nx < 2 || ny < 2)
    throw std::invalid_argument("build_rect_mesh: cell counts must be >= 2");

  BulkSurfaceMesh mesh;
  mesh.dim = 2;
  mesh.geometry = Geometry::Rectangle;
  mesh.extents = {lx, ly};
  const auto id = [nx](Index i, Index j) { return j * (nx + 1) + i; };

  mesh.nodes.resize((nx + 1) * (ny + 1), 2);
  for (Index j = 0; j <= ny; ++j)
    for (Index i = 0; i <= nx; ++i) {
      mesh.nodes(id(i, j), 0) = (i == nx) ? lx : lx * static_cast<double>(i) / static_cast<double>(nx);
      mesh.nodes(id(i, j), 1) = (j == ny) ? ly : ly * static_cast<double>(j) / static_cast<double>(ny);
    }

  mesh.cells.resize(2 * nx * ny, 3);
  Index c = 0;
  for (Index j = 0; j < ny; ++j)
    for (Index i = 0; i < nx; ++i) {
      const int p00 = static_cast<int>(id(i, j));
      const int p10 = static_cast<int>(id(i + 1, j));
      const int p01 = static_cast<int>(id(i, j + 1));
      const int p11 = static_cast<int>(id(i + 1, j + 1));
      mesh.cells.row(c++) << p00, p10, p11;
      mesh.cells.row(c++) << p00, p11, p01;
    }

  std::vector<Eigen::Vector2d> normal_list;
  const double r2 = 1.0 / std::sqrt(2.0);
  for (Index i = 0; i < nx; ++i) { // bottom, left to right
    mesh.boundary_nodes.push_back(id(i, 0));
    normal_list.push_back(i == 0 ? Eigen::Vector2d(-r2, -r2) : Eigen::Vector2d(0.0, -1.0));
  }
  for (Index j = 0; j < ny; ++j) { // right, bottom to top
    mesh.boundary_nodes.push_back(id(nx, j));
    normal_list.push_back(j == 0 ? Eigen::Vector2d(r2, -r2) : Eigen::Vector2d(1.0, 0.0));
  }
  for (Index i = nx; i > 0; --i) { // top, right to left
    mesh.boundary_nodes.push_back(id(i, ny));
    normal_list.push_back(i == nx ? Eigen::Vector2d(r2, r2) : Eigen::Vector2d(0.0, 1.0));
  }
  for (Index j = ny; j > 0; --j) { // left, top to bottom
    mesh.boundary_nodes.push_back(id(0, j));
    normal_list.push_back(j == ny ? Eigen::Vector2d(-r2, r2) : Eigen::Vector2d(-1.0, 0.0));
  }

  const Index nb = mesh.num_boundary();
  mesh.normals.resize(nb, 2);
  for (Index k = 0; k < nb; ++k) {
    mesh.normals.row(k) = normal_list[static_cast<std::size_t>(k)].transpose();
    mesh.boundary_edges.emplace_back(mesh.boundary_nodes[static_cast<std::size_t>(k)],
                                     mesh.boundary_nodes[static_cast<std::size_t>((k + 1) % nb)]);
  }
  detail::finalize(mesh);
  return mesh;
}

/// Disk of radius rho centred at the origin: a centre node plus nr concentric
/// rings of ntheta nodes each. The outermost ring is the boundary polygon.
inline BulkSurfaceMesh build_disk_mesh(double rho, Index nr, Index ntheta)
{
  if (!(rho > 0.0))
    throw std::invalid_argument("build_disk_mesh: radius must be positive");
  if (nr < 2)
    throw std::invalid_argument("build_disk_mesh: nr must be >= 2");
  if (ntheta < 8)
    throw std::invalid_argument("build_disk_mesh: ntheta must be >= 8");

  BulkSurfaceMesh mesh;
  mesh.dim = 2;
  mesh.geometry = Geometry::Disk;
  mesh.extents = {rho};
  const auto id = [ntheta](Index ring, Index k) { return 1 + (ring - 1) * ntheta + (k % ntheta); };

  mesh.nodes.resize(1 + nr * ntheta, 2);
  mesh.nodes.row(0).setZero();
  for (Index ring = 1; ring <= nr; ++ring) {
    const double r = (ring == nr) ? rho : rho * static_cast<double>(ring) / static_cast<double>(nr);
    for (Index k = 0; k < ntheta; ++k) {
      const double phi = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(ntheta);
      mesh.nodes(id(ring, k), 0) = r * std::cos(phi);
      mesh.nodes(id(ring, k), 1) = r * std::sin(phi);
    }
  }

  mesh.cells.resize(ntheta + 2 * (nr - 1) * ntheta, 3);
  Index c = 0;
  for (Index k = 0; k < ntheta; ++k)
    mesh.cells.row(c++) << 0, static_cast<int>(id(1, k)), static_cast<int>(id(1, k + 1));
  for (Index ring = 1; ring < nr; ++ring)
    for (Index k = 0; k < ntheta; ++k) {
      const int a = static_cast<int>(id(ring, k));
      const int b = static_cast<int>(id(ring, k + 1));
      const int a2 = static_cast<int>(id(ring + 1, k));
      const int b2 = static_cast<int>(id(ring + 1, k + 1));
      mesh.cells.row(c++) << a, a2, b2;
      mesh.cells.row(c++) << a, b2, b;
    }

  mesh.normals.resize(ntheta, 2);
  for (Index k = 0; k < ntheta; ++k) {
    mesh.boundary_nodes.push_back(id(nr, k));
    const double phi = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(ntheta);
    mesh.normals(k, 0) = std::cos(phi);
    mesh.normals(k, 1) = std::sin(phi);
  }
  for (Index k = 0; k < ntheta; ++k)
    mesh.boundary_edges.emplace_back(id(nr, k), id(nr, k + 1));
  detail::finalize(mesh);
  return mesh;
}

/// Boundary facets of the cell complex: endpoints in 1D, edges that belong to
/// exactly one triangle in 2D (as sorted index pairs).
inline std::vector<std::pair<Index, Index>> cell_complex_boundary(const BulkSurfaceMesh& mesh)
{
  std::vector<std::pair<Index, Index>> out;
  if (mesh.dim == 1) {
    std::map<Index, int> count;
    for (Index c = 0; c < mesh.num_cells(); ++c)
      for (Index a = 0; a < 2; ++a)
        ++count[mesh.cells(c, a)];
    for (const auto& [node, k] : count)
      if (k == 1)
        out.emplace_back(node, node);
    return out;
  }
  std::map<std::pair<Index, Index>, int> count;
  for (Index c = 0; c < mesh.num_cells(); ++c)
    for (Index a = 0; a < 3; ++a) {
      Index i = mesh.cells(c, a);
      Index j = mesh.cells(c, (a + 1) % 3);
      if (i > j)
        std::swap(i, j);
      ++count[{i, j}];
    }
  for (const auto& [edge, k] : count)
    if (k == 1)
      out.push_back(edge);
  return out;
}

/// Checks the structural invariants; returns an empty string when the mesh is
/// valid, otherwise a description of the first violation.
inline std::string validate(const BulkSurfaceMesh& mesh)
{
  if (mesh.dim != 1 && mesh.dim != 2)
    return "dim must be 1 or 2";
  if (mesh.nodes.cols() != mesh.dim)
    return "node coordinate width does not match dim";
  if (mesh.cells.cols() != mesh.dim + 1)
    return "cell arity does not match dim";
  for (Index b : mesh.boundary_nodes)
    if (b < 0 || b >= mesh.num_nodes())
      return "boundary node index out of range";
  if (mesh.normals.rows() != mesh.num_boundary() || mesh.normals.cols() != mesh.dim)
    return "normals shape mismatch";
  for (Index k = 0; k < mesh.num_boundary(); ++k)
    if (std::abs(mesh.normals.row(k).norm() - 1.0) > 1e-12)
      return "normal " + std::to_string(k) + " is not unit length";

  const auto facets = cell_complex_boundary(mesh);
  if (mesh.dim == 1) {
    if (mesh.num_boundary() != 2 || !mesh.boundary_edges.empty())
      return "1D boundary must be two nodes without edges";
    std::vector<Index> expect{facets.size() == 2 ? facets[0].first : -1,
                              facets.size() == 2 ? facets[1].first : -1};
    std::vector<Index> have = mesh.boundary_nodes;
    std::sort(have.begin(), have.end());
    if (have != expect)
      return "boundary nodes differ from cell-complex boundary";
    return {};
  }

  std::vector<std::pair<Index, Index>> have;
  for (auto [i, j] : mesh.boundary_edges)
    have.emplace_back(std::min(i, j), std::max(i, j));
  std::sort(have.begin(), have.end());
  if (have != facets)
    return "boundary edges differ from cell-complex boundary";
  std::vector<Index> from_edges;
  for (auto [i, j] : facets) {
    from_edges.push_back(i);
    from_edges.push_back(j);
  }
  std::sort(from_edges.begin(), from_edges.end());
  from_edges.erase(std::unique(from_edges.begin(), from_edges.end()), from_edges.end());
  std::vector<Index> nodes = mesh.boundary_nodes;
  std::sort(nodes.begin(), nodes.end());
  if (nodes != from_edges)
    return "boundary nodes differ from boundary edge endpoints";
  return {};
}

/// Total boundary measure: 2 (counting measure) in 1D, perimeter in 2D.
inline double boundary_measure(const BulkSurfaceMesh& mesh)
{
  if (mesh.dim == 1)
    return 2.0;
  double total = 0.0;
  for (auto [i, j] : mesh.boundary_edges)
    total += (mesh.nodes.row(i) - mesh.nodes.row(j)).norm();
  return total;
}

/// Nodal samples of a function that is positive in the domain, vanishes on the
/// boundary and has a negative outward normal derivative away from corners.
struct EtaField {
  Eigen::VectorXd values;              // per bulk node
  Eigen::MatrixXd gradient;            // (num_nodes x dim)
  Eigen::VectorXd laplacian;           // per bulk node
  double sup_norm = 0.0;
  Eigen::VectorXd boundary_normal_derivative; // per boundary node
  std::vector<Index> degenerate_boundary_nodes; // where d_nu eta == 0 (corners)
};

inline EtaField build_eta(const BulkSurfaceMesh& mesh)
{
  if (const auto err = validate(mesh); !err.empty())
    throw std::invalid_argument("build_eta: invalid mesh: " + err);

  const Index n = mesh.num_nodes();
  EtaField eta;
  eta.values.resize(n);
  eta.gradient.resize(n, mesh.dim);
  eta.laplacian.resize(n);

  switch (mesh.geometry) {
    case Geometry::Interval: {
      const double a = mesh.extents[0];
      const double b = mesh.extents[1];
      for (Index i = 0; i < n; ++i) {
        const double x = mesh.nodes(i, 0);
        eta.values(i) = (x - a) * (b - x);
        eta.gradient(i, 0) = a + b - 2.0 * x;
        eta.laplacian(i) = -2.0;
      }
      break;
    }
    case Geometry::Disk: {
      const double rho = mesh.extents[0];
      for (Index i = 0; i < n; ++i) {
        const double x = mesh.nodes(i, 0);
        const double y = mesh.nodes(i, 1);
        eta.values(i) = rho * rho - (x * x + y * y);
        eta.gradient(i, 0) = -2.0 * x;
        eta.gradient(i, 1) = -2.0 * y;
        eta.laplacian(i) = -4.0;
      }
      break;
    }
    case Geometry::Rectangle: {
      const double lx = mesh.extents[0];
      const double ly = mesh.extents[1];
      const double scale = 1.0 / (0.25 * lx * lx * 0.25 * ly * ly);
      for (Index i = 0; i < n; ++i) {
        const double x = mesh.nodes(i, 0);
        const double y = mesh.nodes(i, 1);
        const double fx = x * (lx - x);
        const double fy = y * (ly - y);
        eta.values(i) = scale * fx * fy;
        eta.gradient(i, 0) = scale * (lx - 2.0 * x) * fy;
        eta.gradient(i, 1) = scale * fx * (ly - 2.0 * y);
        eta.laplacian(i) = scale * (-2.0 * fy - 2.0 * fx);
      }
      break;
    }
  }

  // eta vanishes on the boundary by construction; remove coordinate roundoff.
  for (Index b : mesh.boundary_nodes)
    eta.values(b) = 0.0;
  eta.sup_norm = eta.values.maxCoeff();

  eta.boundary_normal_derivative.resize(mesh.num_boundary());
  for (Index k = 0; k < mesh.num_boundary(); ++k) {
    const Index node = mesh.boundary_nodes[static_cast<std::size_t>(k)];
    double dn = eta.gradient.row(node).dot(mesh.normals.row(k));
    if (std::abs(dn) < 1e-14) {
      dn = 0.0;
      eta.degenerate_boundary_nodes.push_back(k);
    }
    eta.boundary_normal_derivative(k) = dn;
  }
  return eta;
}

/// Nodes where lambda fails the pointwise threshold lambda > 2|lap eta|/|grad eta|^2.
/// Such nodes always exist (eta has an interior maximum); they are reported,
/// not treated as an error.
inline std::vector<Index> lambda_condition_failures(const EtaField& eta, double lambda)
{
  std::vector<Index> out;
  for (Index i = 0; i < eta.values.size(); ++i) {
    const double g2 = eta.gradient.row(i).squaredNorm();
    if (g2 == 0.0 || lambda <= 2.0 * std::abs(eta.laplacian(i)) / g2)
      out.push_back(i);
  }
  return out;
}

} // namespace wentzell
