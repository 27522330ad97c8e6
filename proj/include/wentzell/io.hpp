#pragma once

// CSV, JSON and coordinate-text exports. Every CSV starts with a
// "# config_hash=<hex>" line followed by the column header; numbers use the
// shortest representation that round-trips, so output is byte-stable.

#include "wentzell/assembly.hpp"
#include "wentzell/carleman.hpp"
#include "wentzell/control.hpp"
#include "wentzell/evolution.hpp"
#include "wentzell/mesh.hpp"
#include "wentzell/observability.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace wentzell {

using json = nlohmann::ordered_json;

inline std::string format_number(double x)
{
  if (std::isnan(x))
    return "nan";
  if (std::isinf(x))
    return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

/// Non-finite values have no JSON literal; they are written as strings.
inline json json_number(double x)
{
  if (std::isfinite(x))
    return x;
  return format_number(x);
}

class CsvWriter {
public:
  CsvWriter(std::ostream& out, const std::string& config_hash, const std::vector<std::string>& columns)
      : out_(out)
  {
    out_ << "# config_hash=" << config_hash << '\n';
    for (std::size_t i = 0; i < columns.size(); ++i)
      out_ << (i ? "," : "") << columns[i];
    out_ << '\n';
  }

  CsvWriter& cell(double x)
  {
    sep();
    out_ << format_number(x);
    return *this;
  }

  CsvWriter& cell(Index i)
  {
    sep();
    out_ << i;
    return *this;
  }

  CsvWriter& cell(int i) { return cell(static_cast<Index>(i)); }

  CsvWriter& cell(bool b)
  {
    sep();
    out_ << (b ? 1 : 0);
    return *this;
  }

  void end()
  {
    out_ << '\n';
    first_ = true;
  }

private:
  void sep()
  {
    if (!first_)
      out_ << ',';
    first_ = false;
  }

  std::ostream& out_;
  bool first_ = true;
};

inline json mesh_to_json(const BulkSurfaceMesh& mesh)
{
  json j;
  j["dim"] = mesh.dim;
  json nodes = json::array();
  for (Index i = 0; i < mesh.num_nodes(); ++i) {
    json p = json::array();
    for (int d = 0; d < mesh.dim; ++d)
      p.push_back(mesh.nodes(i, d));
    nodes.push_back(p);
  }
  j["nodes"] = nodes;
  json cells = json::array();
  for (Index c = 0; c < mesh.num_cells(); ++c) {
    json t = json::array();
    for (int a = 0; a <= mesh.dim; ++a)
      t.push_back(mesh.cells(c, a));
    cells.push_back(t);
  }
  j["cells"] = cells;
  j["boundary_nodes"] = mesh.boundary_nodes;
  json edges = json::array();
  for (auto [a, b] : mesh.boundary_edges)
    edges.push_back(json::array({a, b}));
  j["boundary_edges"] = edges;
  json normals = json::array();
  for (Index k = 0; k < mesh.num_boundary(); ++k) {
    json v = json::array();
    for (int d = 0; d < mesh.dim; ++d)
      v.push_back(mesh.normals(k, d));
    normals.push_back(v);
  }
  j["normals"] = normals;
  return j;
}

/// One row per (time, node).
inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const std::string& hash)
{
  CsvWriter w(out, hash, {"t", "node_id", "value"});
  for (Index k = 0; k < traj.states.cols(); ++k)
    for (Index i = 0; i < traj.states.rows(); ++i)
      w.cell(traj.times(k)).cell(i).cell(traj.states(i, k)).end();
}

inline json trajectory_summary(const DiscreteSystem& sys, const Trajectory& traj, const std::string& hash)
{
  json j;
  j["config_hash"] = hash;
  j["theta"] = traj.theta;
  j["dt"] = traj.dt;
  json steps = json::array();
  for (Index k = 0; k < traj.states.cols(); ++k) {
    const Eigen::VectorXd u = traj.state(k);
    json s;
    s["step"] = k;
    s["t"] = traj.times(k);
    s["norm_X2"] = json_number(norm_X2(sys, u));
    s["max_abs"] = json_number(u.cwiseAbs().maxCoeff());
    s["min"] = json_number(u.minCoeff());
    steps.push_back(s);
  }
  j["steps"] = steps;
  return j;
}

inline void write_flux_csv(std::ostream& out, const BulkSurfaceMesh& mesh, const FluxRecovery& flux,
                           const std::string& hash)
{
  CsvWriter w(out, hash, {"t", "boundary_node", "variational", "equation"});
  for (Index n = 0; n < flux.times.size(); ++n)
    for (Index k = 0; k < flux.variational.rows(); ++k)
      w.cell(flux.times(n))
          .cell(mesh.boundary_nodes[static_cast<std::size_t>(k)])
          .cell(flux.variational(k, n))
          .cell(flux.equation(k, n))
          .end();
}

inline void write_carleman_csv(std::ostream& out, const SweepResult& sweep, const std::string& hash)
{
  CsvWriter w(out, hash, {"lambda", "R", "sample_id", "lhs", "rhs", "ratio"});
  for (const auto& r : sweep.rows)
    w.cell(r.lambda).cell(r.R).cell(r.sample_id).cell(r.lhs).cell(r.rhs).cell(r.ratio).end();
}

inline json carleman_summary(const SweepResult& sweep, const std::string& hash)
{
  json j;
  j["config_hash"] = hash;
  json cells = json::array();
  for (const auto& c : sweep.cells)
    cells.push_back({{"lambda", c.lambda}, {"R", c.R}, {"max_ratio", json_number(c.max_ratio)}});
  j["max_ratio"] = cells;
  return j;
}

inline void write_observability_csv(std::ostream& out, const ObservabilityReport& report, const std::string& hash)
{
  CsvWriter w(out, hash, {"sample_id", "initial_energy", "observation_energy", "ratio", "extremal"});
  Index id = 0;
  for (const auto& s : report.per_sample)
    w.cell(id++).cell(s.initial_energy).cell(s.observation_energy).cell(s.ratio).cell(s.extremal).end();
}

inline json observability_summary(const ObservabilityReport& report, const std::string& hash)
{
  json j;
  j["config_hash"] = hash;
  j["CT_estimate"] = json_number(report.CT_estimate);
  j["samples"] = report.samples;
  j["T"] = report.T;
  json rows = json::array();
  for (const auto& s : report.per_sample)
    rows.push_back({{"initial_energy", json_number(s.initial_energy)},
                    {"observation_energy", json_number(s.observation_energy)},
                    {"ratio", json_number(s.ratio)},
                    {"extremal", s.extremal}});
  j["per_sample"] = rows;
  return j;
}

/// Control values are written at the level time t_n + theta dt where they act.
inline void write_control_csv(std::ostream& out, const BulkSurfaceMesh& mesh, const BoundarySignal& g, double T,
                              double theta, const std::string& hash)
{
  CsvWriter w(out, hash, {"t", "boundary_node", "g"});
  const double dt = T / static_cast<double>(g.steps());
  for (Index n = 0; n < g.steps(); ++n) {
    const double t = (static_cast<double>(n) + theta) * dt;
    for (Index k = 0; k < g.num_boundary(); ++k)
      w.cell(t).cell(mesh.boundary_nodes[static_cast<std::size_t>(k)]).cell(g.values(k, n)).end();
  }
}

inline json control_summary(const ControlResult& r, const NullVerification& v, double eps, const std::string& hash)
{
  json j;
  j["config_hash"] = hash;
  j["eps"] = eps;
  j["final_norm"] = json_number(r.final_norm);
  j["control_norm"] = json_number(r.control_norm);
  j["iterations"] = r.iterations;
  j["cost"] = json_number(r.cost);
  j["converged"] = r.converged;
  j["cg_relative_residual"] = json_number(r.relative_residual);
  j["refined_final_norm"] = json_number(v.refined_final_norm);
  j["optimality_residual"] = json_number(v.optimality_residual);
  j["duality_residual"] = json_number(v.duality_residual);
  return j;
}

inline void write_text(const std::string& path, const std::string& text)
{
  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw std::runtime_error("cannot open " + path + " for writing");
  f << text;
  if (!f)
    throw std::runtime_error("write failed: " + path);
}

inline void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

} // namespace wentzell
