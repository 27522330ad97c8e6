#pragma once

// Experiment configs and the batch pipeline behind the command-line tool.

#include "wentzell/assembly.hpp"
#include "wentzell/carleman.hpp"
#include "wentzell/control.hpp"
#include "wentzell/errors.hpp"
#include "wentzell/evolution.hpp"
#include "wentzell/io.hpp"
#include "wentzell/mesh.hpp"
#include "wentzell/observability.hpp"
#include "wentzell/parallel.hpp"
#include "wentzell/random.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef WENTZELL_VERSION
#define WENTZELL_VERSION "0.1.0"
#endif

namespace wentzell {

/// Invalid configuration; `field()` is the dotted path of the offending entry.
class ConfigError : public std::invalid_argument {
public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)), message_(message)
  {
  }

  const std::string& field() const { return field_; }
  const std::string& message() const { return message_; }

  /// Single-line JSON for machine consumption.
  std::string to_line() const
  {
    json j;
    j["error"] = "invalid_config";
    j["field"] = field_;
    j["message"] = message_;
    return j.dump();
  }

private:
  std::string field_;
  std::string message_;
};

enum class Task { Simulate, Adjoint, Carleman, Observability, Control };

inline std::string to_string(Task t)
{
  switch (t) {
  case Task::Simulate:
    return "simulate";
  case Task::Adjoint:
    return "adjoint";
  case Task::Carleman:
    return "carleman";
  case Task::Observability:
    return "observability";
  case Task::Control:
    return "control";
  }
  return "unknown";
}

struct GeometrySpec {
  Geometry type = Geometry::Interval;
  double a = 0.0;
  double b = 1.0;
  Index n = 32;
  double lx = 1.0;
  double ly = 1.0;
  Index nx = 8;
  Index ny = 8;
  double rho = 1.0;
  Index nr = 8;
  Index ntheta = 32;
};

/// beta = value (constant) or c0 + cx x + cy y (affine) at boundary nodes.
struct BetaSpec {
  std::string profile = "constant";
  double value = 1.0;
  double c0 = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

/// Initial (or final, for adjoint runs) state and boundary data.
/// Kinds: zero, constant, eigenmode (lowest (K, M) eigenvector), random.
struct DataSpec {
  std::string kind = "zero";
  double value = 0.0;
};

struct CarlemanSpec {
  std::vector<double> lambdas{2.0};
  std::vector<double> Rs{2.0, 4.0, 8.0};
  double m = 2.0;
  Index samples = 20;
};

struct ObservabilitySpec {
  Index samples = 100;
  bool include_extremal = true;
};

struct ControlSpec {
  std::vector<double> eps{1e-6};
  double cg_tol = 1e-10;
  int cg_maxit = 1000;
};

struct ExperimentConfig {
  GeometrySpec geometry;
  double gamma = 1.0;
  double delta = 0.0;
  BetaSpec beta;
  std::optional<double> beta0;
  double T = 1.0;
  Index nt = 128;
  double theta = 1.0;
  Task task = Task::Simulate;
  std::uint64_t seed = 0;
  DataSpec initial{"zero", 0.0};
  DataSpec boundary{"zero", 0.0};
  CarlemanSpec carleman;
  ObservabilitySpec observability;
  ControlSpec control;
  bool export_matrices = false;
  std::optional<std::string> output;
};

namespace detail {

inline std::string join_path(const std::string& base, const std::string& key)
{
  return base.empty() ? key : base + "." + key;
}

inline void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed)
{
  if (!obj.is_object())
    throw ConfigError(path.empty() ? "$" : path, "expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError(join_path(path, it.key()), "unknown field");
}

inline double read_number(const json& obj, const std::string& key, const std::string& path, double fallback)
{
  if (!obj.contains(key))
    return fallback;
  const json& v = obj.at(key);
  if (!v.is_number())
    throw ConfigError(join_path(path, key), "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x))
    throw ConfigError(join_path(path, key), "must be finite");
  return x;
}

inline std::int64_t read_integer(const json& obj, const std::string& key, const std::string& path,
                                 std::int64_t fallback)
{
  if (!obj.contains(key))
    return fallback;
  const json& v = obj.at(key);
  if (v.is_number_integer())
    return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double x = v.get<double>();
    if (std::isfinite(x) && x == std::floor(x) && std::abs(x) < 9.0e15)
      return static_cast<std::int64_t>(x);
  }
  throw ConfigError(join_path(path, key), "expected an integer");
}

inline std::string read_string(const json& obj, const std::string& key, const std::string& path,
                               const std::string& fallback)
{
  if (!obj.contains(key))
    return fallback;
  if (!obj.at(key).is_string())
    throw ConfigError(join_path(path, key), "expected a string");
  return obj.at(key).get<std::string>();
}

inline bool read_bool(const json& obj, const std::string& key, const std::string& path, bool fallback)
{
  if (!obj.contains(key))
    return fallback;
  if (!obj.at(key).is_boolean())
    throw ConfigError(join_path(path, key), "expected true or false");
  return obj.at(key).get<bool>();
}

/// A number or a nonempty array of numbers.
inline std::vector<double> read_list(const json& obj, const std::string& key, const std::string& path,
                                     const std::vector<double>& fallback)
{
  if (!obj.contains(key))
    return fallback;
  const json& v = obj.at(key);
  const std::string field = join_path(path, key);
  std::vector<double> out;
  if (v.is_number()) {
    out.push_back(v.get<double>());
  } else if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number())
        throw ConfigError(field + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
  } else {
    throw ConfigError(field, "expected a number or an array of numbers");
  }
  if (out.empty())
    throw ConfigError(field, "must not be empty");
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!std::isfinite(out[i]))
      throw ConfigError(field + "[" + std::to_string(i) + "]", "must be finite");
  return out;
}

inline DataSpec read_data(const json& root, const std::string& key, const DataSpec& fallback)
{
  if (!root.contains(key))
    return fallback;
  const json& obj = root.at(key);
  check_keys(obj, key, {"kind", "value"});
  DataSpec d;
  d.kind = read_string(obj, "kind", key, fallback.kind);
  d.value = read_number(obj, "value", key, 0.0);
  return d;
}

} // namespace detail

/// Parses and validates a config. Throws ConfigError naming the offending field.
inline ExperimentConfig config_from_json(const json& root)
{
  using namespace detail;
  check_keys(root, "",
             {"geometry", "gamma", "delta", "beta", "beta0", "T", "nt", "theta", "task", "seed", "initial",
              "boundary", "carleman", "observability", "control", "export_matrices", "output"});
  ExperimentConfig c;

  if (!root.contains("geometry"))
    throw ConfigError("geometry", "missing");
  const json& g = root.at("geometry");
  if (!g.is_object())
    throw ConfigError("geometry", "expected an object");
  const std::string type = read_string(g, "type", "geometry", "");
  if (type == "interval") {
    check_keys(g, "geometry", {"type", "a", "b", "n"});
    c.geometry.type = Geometry::Interval;
    c.geometry.a = read_number(g, "a", "geometry", 0.0);
    c.geometry.b = read_number(g, "b", "geometry", 1.0);
    c.geometry.n = read_integer(g, "n", "geometry", 32);
    if (!(c.geometry.a < c.geometry.b))
      throw ConfigError("geometry.b", "must exceed geometry.a");
    if (c.geometry.n < 2)
      throw ConfigError("geometry.n", "must be >= 2");
  } else if (type == "rect") {
    check_keys(g, "geometry", {"type", "lx", "ly", "nx", "ny"});
    c.geometry.type = Geometry::Rectangle;
    c.geometry.lx = read_number(g, "lx", "geometry", 1.0);
    c.geometry.ly = read_number(g, "ly", "geometry", 1.0);
    c.geometry.nx = read_integer(g, "nx", "geometry", 8);
    c.geometry.ny = read_integer(g, "ny", "geometry", 8);
    if (!(c.geometry.lx > 0.0))
      throw ConfigError("geometry.lx", "must be positive");
    if (!(c.geometry.ly > 0.0))
      throw ConfigError("geometry.ly", "must be positive");
    if (c.geometry.nx < 2)
      throw ConfigError("geometry.nx", "must be >= 2");
    if (c.geometry.ny < 2)
      throw ConfigError("geometry.ny", "must be >= 2");
  } else if (type == "disk") {
    check_keys(g, "geometry", {"type", "rho", "nr", "ntheta"});
    c.geometry.type = Geometry::Disk;
    c.geometry.rho = read_number(g, "rho", "geometry", 1.0);
    c.geometry.nr = read_integer(g, "nr", "geometry", 8);
    c.geometry.ntheta = read_integer(g, "ntheta", "geometry", 32);
    if (!(c.geometry.rho > 0.0))
      throw ConfigError("geometry.rho", "must be positive");
    if (c.geometry.nr < 2)
      throw ConfigError("geometry.nr", "must be >= 2");
    if (c.geometry.ntheta < 8)
      throw ConfigError("geometry.ntheta", "must be >= 8");
  } else {
    throw ConfigError("geometry.type", "must be one of interval, rect, disk");
  }

  c.gamma = read_number(root, "gamma", "", 1.0);
  if (!(c.gamma > 0.0))
    throw ConfigError("gamma", "must be positive");
  c.delta = read_number(root, "delta", "", 0.0);
  if (!(c.delta >= 0.0))
    throw ConfigError("delta", "must be nonnegative");

  if (root.contains("beta")) {
    const json& b = root.at("beta");
    if (b.is_number()) {
      c.beta.profile = "constant";
      c.beta.value = read_number(root, "beta", "", 1.0);
    } else {
      if (!b.is_object())
        throw ConfigError("beta", "expected a number or an object");
      c.beta.profile = read_string(b, "profile", "beta", "constant");
      if (c.beta.profile == "constant") {
        check_keys(b, "beta", {"profile", "value"});
        c.beta.value = read_number(b, "value", "beta", 1.0);
      } else if (c.beta.profile == "affine") {
        check_keys(b, "beta", {"profile", "c0", "cx", "cy"});
        c.beta.c0 = read_number(b, "c0", "beta", 1.0);
        c.beta.cx = read_number(b, "cx", "beta", 0.0);
        c.beta.cy = read_number(b, "cy", "beta", 0.0);
      } else {
        throw ConfigError("beta.profile", "must be constant or affine");
      }
    }
  }
  if (c.beta.profile == "constant" && !(c.beta.value >= 0.0))
    throw ConfigError("beta", "must be nonnegative");
  if (root.contains("beta0")) {
    c.beta0 = read_number(root, "beta0", "", 0.0);
    if (!(*c.beta0 >= 0.0))
      throw ConfigError("beta0", "must be nonnegative");
  }

  c.T = read_number(root, "T", "", 1.0);
  if (!(c.T > 0.0))
    throw ConfigError("T", "must be positive");
  c.nt = read_integer(root, "nt", "", 128);
  if (c.nt < 1)
    throw ConfigError("nt", "must be >= 1");
  c.theta = read_number(root, "theta", "", 1.0);
  if (!(c.theta >= 0.5 && c.theta <= 1.0))
    throw ConfigError("theta", "must lie in [0.5, 1]");

  const std::string task = read_string(root, "task", "", "simulate");
  if (task == "simulate")
    c.task = Task::Simulate;
  else if (task == "adjoint")
    c.task = Task::Adjoint;
  else if (task == "carleman")
    c.task = Task::Carleman;
  else if (task == "observability")
    c.task = Task::Observability;
  else if (task == "control")
    c.task = Task::Control;
  else
    throw ConfigError("task", "must be one of simulate, adjoint, carleman, observability, control");

  const std::int64_t seed = read_integer(root, "seed", "", 0);
  if (seed < 0)
    throw ConfigError("seed", "must be nonnegative");
  c.seed = static_cast<std::uint64_t>(seed);

  c.initial = read_data(root, "initial", c.initial);
  if (c.initial.kind != "zero" && c.initial.kind != "constant" && c.initial.kind != "eigenmode" &&
      c.initial.kind != "random")
    throw ConfigError("initial.kind", "must be one of zero, constant, eigenmode, random");
  c.boundary = read_data(root, "boundary", c.boundary);
  if (c.boundary.kind != "zero" && c.boundary.kind != "constant")
    throw ConfigError("boundary.kind", "must be zero or constant");

  if (root.contains("carleman")) {
    const json& o = root.at("carleman");
    check_keys(o, "carleman", {"lambdas", "Rs", "m", "samples"});
    c.carleman.lambdas = read_list(o, "lambdas", "carleman", c.carleman.lambdas);
    c.carleman.Rs = read_list(o, "Rs", "carleman", c.carleman.Rs);
    c.carleman.m = read_number(o, "m", "carleman", c.carleman.m);
    c.carleman.samples = read_integer(o, "samples", "carleman", c.carleman.samples);
  }
  for (std::size_t i = 0; i < c.carleman.lambdas.size(); ++i)
    if (!(c.carleman.lambdas[i] > 0.0))
      throw ConfigError("carleman.lambdas[" + std::to_string(i) + "]", "must be positive");
  for (std::size_t i = 0; i < c.carleman.Rs.size(); ++i)
    if (!(c.carleman.Rs[i] > 0.0))
      throw ConfigError("carleman.Rs[" + std::to_string(i) + "]", "must be positive");
  if (!(c.carleman.m > 1.0))
    throw ConfigError("carleman.m", "must exceed 1");
  if (c.carleman.samples < 1)
    throw ConfigError("carleman.samples", "must be >= 1");

  if (root.contains("observability")) {
    const json& o = root.at("observability");
    check_keys(o, "observability", {"samples", "include_extremal"});
    c.observability.samples = read_integer(o, "samples", "observability", c.observability.samples);
    c.observability.include_extremal =
        read_bool(o, "include_extremal", "observability", c.observability.include_extremal);
  }
  if (c.observability.samples < 1)
    throw ConfigError("observability.samples", "must be >= 1");

  if (root.contains("control")) {
    const json& o = root.at("control");
    check_keys(o, "control", {"eps", "cg_tol", "cg_maxit"});
    c.control.eps = read_list(o, "eps", "control", c.control.eps);
    c.control.cg_tol = read_number(o, "cg_tol", "control", c.control.cg_tol);
    const std::int64_t maxit = read_integer(o, "cg_maxit", "control", c.control.cg_maxit);
    if (maxit < 0 || maxit > 1000000)
      throw ConfigError("control.cg_maxit", "must lie in [0, 1000000]");
    c.control.cg_maxit = static_cast<int>(maxit);
  }
  for (std::size_t i = 0; i < c.control.eps.size(); ++i)
    if (!(c.control.eps[i] > 0.0))
      throw ConfigError("control.eps[" + std::to_string(i) + "]", "must be positive");
  if (!(c.control.cg_tol > 0.0 && c.control.cg_tol < 1.0))
    throw ConfigError("control.cg_tol", "must lie in (0, 1)");

  c.export_matrices = read_bool(root, "export_matrices", "", false);
  if (root.contains("output"))
    c.output = read_string(root, "output", "", "");

  // Task-level requirements.
  if ((c.task == Task::Carleman || c.task == Task::Control || c.task == Task::Adjoint) && c.nt < 2)
    throw ConfigError("nt", "must be >= 2 for task " + task);
  const bool needs_positive_beta = c.task == Task::Observability || c.initial.kind == "eigenmode";
  if (needs_positive_beta && c.beta.profile == "constant" && !(c.beta.value > 0.0))
    throw ConfigError("beta", "must be positive for task " + task + " with initial.kind " + c.initial.kind);
  if (c.task == Task::Observability && c.beta0 && !(*c.beta0 > 0.0))
    throw ConfigError("beta0", "must be positive for task observability");
  return c;
}

/// Canonical form; `config_from_json(config_to_json(c))` reproduces `c`.
inline json config_to_json(const ExperimentConfig& c)
{
  json j;
  json g;
  switch (c.geometry.type) {
  case Geometry::Interval:
    g = {{"type", "interval"}, {"a", c.geometry.a}, {"b", c.geometry.b}, {"n", c.geometry.n}};
    break;
  case Geometry::Rectangle:
    g = {{"type", "rect"}, {"lx", c.geometry.lx}, {"ly", c.geometry.ly}, {"nx", c.geometry.nx}, {"ny", c.geometry.ny}};
    break;
  case Geometry::Disk:
    g = {{"type", "disk"}, {"rho", c.geometry.rho}, {"nr", c.geometry.nr}, {"ntheta", c.geometry.ntheta}};
    break;
  }
  j["geometry"] = g;
  j["gamma"] = c.gamma;
  j["delta"] = c.delta;
  if (c.beta.profile == "constant")
    j["beta"] = {{"profile", "constant"}, {"value", c.beta.value}};
  else
    j["beta"] = {{"profile", "affine"}, {"c0", c.beta.c0}, {"cx", c.beta.cx}, {"cy", c.beta.cy}};
  if (c.beta0)
    j["beta0"] = *c.beta0;
  j["T"] = c.T;
  j["nt"] = c.nt;
  j["theta"] = c.theta;
  j["task"] = to_string(c.task);
  j["seed"] = c.seed;
  j["initial"] = {{"kind", c.initial.kind}, {"value", c.initial.value}};
  j["boundary"] = {{"kind", c.boundary.kind}, {"value", c.boundary.value}};
  j["carleman"] = {{"lambdas", c.carleman.lambdas},
                   {"Rs", c.carleman.Rs},
                   {"m", c.carleman.m},
                   {"samples", c.carleman.samples}};
  j["observability"] = {{"samples", c.observability.samples},
                        {"include_extremal", c.observability.include_extremal}};
  j["control"] = {{"eps", c.control.eps}, {"cg_tol", c.control.cg_tol}, {"cg_maxit", c.control.cg_maxit}};
  j["export_matrices"] = c.export_matrices;
  if (c.output)
    j["output"] = *c.output;
  return j;
}

inline ExperimentConfig load_config(const std::string& path)
{
  std::ifstream f(path);
  if (!f)
    throw ConfigError("$", "cannot open config file " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("$", std::string("malformed JSON: ") + e.what());
  }
  return config_from_json(j);
}

/// 64-bit FNV-1a of the canonical config, output location excluded.
inline std::string config_hash(const ExperimentConfig& c)
{
  json j = config_to_json(c);
  j.erase("output");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

inline BulkSurfaceMesh build_mesh(const GeometrySpec& g)
{
  switch (g.type) {
  case Geometry::Interval:
    return build_interval_mesh(g.a, g.b, g.n);
  case Geometry::Rectangle:
    return build_rect_mesh(g.lx, g.ly, g.nx, g.ny);
  case Geometry::Disk:
    return build_disk_mesh(g.rho, g.nr, g.ntheta);
  }
  throw std::invalid_argument("build_mesh: unknown geometry");
}

/// Assembles the system; nodal beta values are checked against beta >= 0 and beta0.
inline DiscreteSystem build_system(const ExperimentConfig& c)
{
  const BulkSurfaceMesh mesh = build_mesh(c.geometry);
  Eigen::VectorXd beta(mesh.num_boundary());
  for (Index k = 0; k < mesh.num_boundary(); ++k) {
    if (c.beta.profile == "constant") {
      beta(k) = c.beta.value;
    } else {
      const Index node = mesh.boundary_nodes[static_cast<std::size_t>(k)];
      const double x = mesh.nodes(node, 0);
      const double y = mesh.dim > 1 ? mesh.nodes(node, 1) : 0.0;
      beta(k) = c.beta.c0 + c.beta.cx * x + c.beta.cy * y;
    }
    if (!(beta(k) >= 0.0))
      throw ConfigError("beta", "negative at boundary node " +
                                    std::to_string(mesh.boundary_nodes[static_cast<std::size_t>(k)]));
    if (c.beta0 && beta(k) < *c.beta0)
      throw ConfigError("beta0", "exceeds beta at boundary node " +
                                     std::to_string(mesh.boundary_nodes[static_cast<std::size_t>(k)]));
  }
  const bool needs_positive =
      c.task == Task::Observability || c.initial.kind == "eigenmode";
  if (needs_positive && !(beta.minCoeff() > 0.0))
    throw ConfigError("beta", "must be positive at every boundary node for this task");
  return assemble(mesh, c.gamma, c.delta, beta);
}

inline Eigen::VectorXd build_state(const DiscreteSystem& sys, const DataSpec& d, std::uint64_t seed)
{
  if (d.kind == "zero")
    return Eigen::VectorXd::Zero(sys.size());
  if (d.kind == "constant")
    return Eigen::VectorXd::Constant(sys.size(), d.value);
  if (d.kind == "eigenmode")
    return estimate_coercivity(sys).eigenvector;
  if (d.kind == "random")
    return random_unit_state(sys, seed, 0);
  throw ConfigError("initial.kind", "unknown kind " + d.kind);
}

struct RunOptions {
  std::string out_dir = "wentzell_out";
  unsigned threads = 1;
};

struct RunOutcome {
  int exit_code = 0;
  json manifest;
};

namespace detail {

inline void require_finite(double x, const std::string& what)
{
  if (!std::isfinite(x))
    throw NumericalError(what + " is not finite");
}

inline void require_finite(const Eigen::MatrixXd& x, const std::string& what)
{
  if (!x.allFinite())
    throw NumericalError(what + " has non-finite entries");
}

class RunContext {
public:
  RunContext(std::filesystem::path dir, std::string hash) : dir_(std::move(dir)), hash_(std::move(hash)) {}

  const std::string& hash() const { return hash_; }

  template <class Fn> void csv(const std::string& name, Fn&& fn)
  {
    std::ostringstream s;
    fn(s);
    write_text((dir_ / name).string(), s.str());
    files.push_back(name);
  }

  void json_file(const std::string& name, const json& j)
  {
    write_json((dir_ / name).string(), j);
    files.push_back(name);
  }

  void text(const std::string& name, const std::string& t)
  {
    write_text((dir_ / name).string(), t);
    files.push_back(name);
  }

  std::vector<std::string> files;
  json summary = json::object();

private:
  std::filesystem::path dir_;
  std::string hash_;
};

// '%' opens comment lines in the coordinate format.
inline std::string coordinate_text(const SparseMatrix& a, const std::string& hash)
{
  std::ostringstream s;
  s << "% config_hash=" << hash << '\n';
  write_coordinate(s, a);
  return s.str();
}

inline void run_simulate(const ExperimentConfig& c, const DiscreteSystem& sys, RunContext& ctx)
{
  const Eigen::VectorXd u0 = build_state(sys, c.initial, c.seed);
  const BoundarySignal g = BoundarySignal::constant(sys.num_boundary(), c.nt,
                                                    c.boundary.kind == "constant" ? c.boundary.value : 0.0);
  const Trajectory traj = solve_forward(sys, u0, g, c.T, c.nt, c.theta);
  require_finite(traj.states, "trajectory");
  ctx.csv("trajectory.csv", [&](std::ostream& o) { write_trajectory_csv(o, traj, ctx.hash()); });
  const double initial_norm = norm_X2(sys, u0);
  const double final_norm = norm_X2(sys, traj.final_state());
  require_finite(initial_norm, "initial_norm");
  require_finite(final_norm, "final_norm");
  ctx.json_file("trajectory_summary.json", trajectory_summary(sys, traj, ctx.hash()));
  ctx.summary["initial_norm"] = initial_norm;
  ctx.summary["final_norm"] = final_norm;
  ctx.summary["final_max_abs"] = traj.final_state().cwiseAbs().maxCoeff();
}

inline void run_adjoint(const ExperimentConfig& c, const DiscreteSystem& sys, RunContext& ctx)
{
  const Eigen::VectorXd phi_T = build_state(sys, c.initial, c.seed);
  const Trajectory traj = solve_backward(sys, phi_T, c.T, c.nt, c.theta);
  require_finite(traj.states, "adjoint trajectory");
  const FluxRecovery flux = recover_normal_flux(sys, traj);
  const double energy = check_energy_identity(sys, traj);
  ctx.csv("adjoint.csv", [&](std::ostream& o) { write_trajectory_csv(o, traj, ctx.hash()); });
  ctx.csv("flux.csv", [&](std::ostream& o) { write_flux_csv(o, sys.mesh, flux, ctx.hash()); });
  json s = trajectory_summary(sys, traj, ctx.hash());
  s["flux_discrepancy"] = json_number(flux.discrepancy);
  s["energy_identity_residual"] = json_number(energy);
  ctx.json_file("adjoint_summary.json", s);
  ctx.summary["final_data_norm"] = norm_X2(sys, phi_T);
  ctx.summary["initial_norm"] = norm_X2(sys, traj.initial_state());
  ctx.summary["flux_discrepancy"] = json_number(flux.discrepancy);
  ctx.summary["energy_identity_residual"] = json_number(energy);
}

inline void run_carleman(const ExperimentConfig& c, const DiscreteSystem& sys, RunContext& ctx, unsigned threads)
{
  CarlemanGrid grid{c.carleman.lambdas, c.carleman.Rs, c.carleman.m, c.T, c.nt, c.theta};
  const SweepResult sweep = carleman_sweep(sys, grid, c.carleman.samples, c.seed, threads);
  for (const auto& r : sweep.rows)
    if (!std::isfinite(r.lhs) || !std::isfinite(r.rhs))
      throw NumericalError("carleman: non-finite side at lambda=" + format_number(r.lambda) +
                           " R=" + format_number(r.R));
  ctx.csv("carleman.csv", [&](std::ostream& o) { write_carleman_csv(o, sweep, ctx.hash()); });

  json j = carleman_summary(sweep, ctx.hash());
  const EtaField eta = build_eta(sys.mesh);
  json bounds = json::array();
  for (const auto& cell : sweep.cells) {
    const CarlemanParams params{cell.lambda, cell.R, c.carleman.m, c.T, eta};
    const WeightBounds b = weight_bounds(params, sys.mesh, c.nt);
    bounds.push_back({{"lambda", cell.lambda},
                      {"R", cell.R},
                      {"floor_middle", json_number(b.floor_middle)},
                      {"log_floor_middle", json_number(b.log_floor_middle)},
                      {"ceiling_boundary", json_number(b.ceiling_boundary)},
                      {"alpha_t_constant", json_number(b.alpha_t_constant)},
                      {"theta_xi_min", json_number(b.theta_xi_min)},
                      {"theta_xi_lower_bound", json_number(b.theta_xi_lower_bound)},
                      {"lambda_condition_failures", lambda_condition_failures(eta, cell.lambda).size()}});
  }
  j["weight_bounds"] = bounds;
  j["degenerate_boundary_nodes"] = eta.degenerate_boundary_nodes;
  ctx.json_file("carleman.json", j);
  ctx.summary["max_ratio"] = j["max_ratio"];
}

inline void run_observability(const ExperimentConfig& c, const DiscreteSystem& sys, RunContext& ctx,
                              unsigned threads)
{
  const ObservabilityReport r = estimate_CT(sys, c.T, c.nt, c.observability.samples, c.seed, c.theta,
                                            c.observability.include_extremal, threads);
  require_finite(r.CT_estimate, "CT_estimate");
  ctx.json_file("observability.json", observability_summary(r, ctx.hash()));
  ctx.csv("observability.csv", [&](std::ostream& o) { write_observability_csv(o, r, ctx.hash()); });
  ctx.summary["CT_estimate"] = r.CT_estimate;
}

inline void run_control(const ExperimentConfig& c, const DiscreteSystem& sys, RunContext& ctx, unsigned threads)
{
  const Eigen::VectorXd u0 = build_state(sys, c.initial, c.seed);
  const std::size_t ne = c.control.eps.size();
  std::vector<ControlProblem> problems;
  for (double eps : c.control.eps)
    problems.push_back({sys, u0, c.T, c.nt, c.theta, eps, c.control.cg_tol, c.control.cg_maxit});
  std::vector<ControlResult> results(ne);
  std::vector<NullVerification> checks(ne);
  parallel_for(ne, threads, [&](std::size_t i) {
    results[i] = synthesize_control(problems[i]);
    checks[i] = verify_null(problems[i], results[i]);
  });

  const double u0_norm = norm_X2(sys, u0);
  json rows = json::array();
  for (std::size_t i = 0; i < ne; ++i) {
    require_finite(results[i].final_norm, "final_norm");
    require_finite(results[i].g.values, "control");
    const std::string k = std::to_string(i);
    ctx.csv("control_" + k + ".csv", [&](std::ostream& o) {
      write_control_csv(o, sys.mesh, results[i].g, c.T, c.theta, ctx.hash());
    });
    json r = control_summary(results[i], checks[i], c.control.eps[i], ctx.hash());
    r["initial_norm"] = u0_norm;
    ctx.json_file("control_result_" + k + ".json", r);
    rows.push_back({{"eps", c.control.eps[i]},
                    {"final_norm", json_number(results[i].final_norm)},
                    {"iterations", results[i].iterations},
                    {"converged", results[i].converged}});
  }
  ctx.csv("control_scaling.csv", [&](std::ostream& o) {
    CsvWriter w(o, ctx.hash(),
                {"eps", "final_norm", "control_norm", "iterations", "converged", "refined_final_norm",
                 "ratio_to_previous"});
    for (std::size_t i = 0; i < ne; ++i) {
      const double ratio = i == 0 ? std::nan("") : results[i - 1].final_norm / results[i].final_norm;
      w.cell(c.control.eps[i])
          .cell(results[i].final_norm)
          .cell(results[i].control_norm)
          .cell(results[i].iterations)
          .cell(results[i].converged)
          .cell(checks[i].refined_final_norm)
          .cell(ratio)
          .end();
    }
  });
  ctx.summary["initial_norm"] = u0_norm;
  ctx.summary["runs"] = rows;
}

} // namespace detail

/// Runs one experiment into `opts.out_dir`. Exit codes: 0 success, 3 numerical
/// failure (manifest flagged partial). Invalid configs throw ConfigError
/// before anything is written.
inline RunOutcome run_experiment(const ExperimentConfig& c, const RunOptions& opts)
{
  const std::string hash = config_hash(c);
  const DiscreteSystem sys = build_system(c);

  const std::filesystem::path dir(opts.out_dir);
  std::filesystem::create_directories(dir);
  detail::RunContext ctx(dir, hash);

  RunOutcome out;
  json& m = out.manifest;
  m["config_hash"] = hash;
  m["task"] = to_string(c.task);
  m["versions"] = {{"wentzell", WENTZELL_VERSION},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  m["config"] = config_to_json(c);
  m["threads"] = opts.threads;

  try {
    json mesh = json{{"config_hash", hash}};
    mesh.update(mesh_to_json(sys.mesh));
    ctx.json_file("mesh.json", mesh);
    if (c.export_matrices) {
      ctx.text("mass.txt", detail::coordinate_text(sys.mass_matrix(), hash));
      ctx.text("stiffness.txt", detail::coordinate_text(sys.K, hash));
      ctx.text("injection.txt", detail::coordinate_text(sys.B, hash));
    }
    ctx.summary["dofs"] = sys.size();
    ctx.summary["boundary_nodes"] = sys.num_boundary();
    ctx.summary["h"] = sys.mesh.h;
    switch (c.task) {
    case Task::Simulate:
      detail::run_simulate(c, sys, ctx);
      break;
    case Task::Adjoint:
      detail::run_adjoint(c, sys, ctx);
      break;
    case Task::Carleman:
      detail::run_carleman(c, sys, ctx, opts.threads);
      break;
    case Task::Observability:
      detail::run_observability(c, sys, ctx, opts.threads);
      break;
    case Task::Control:
      detail::run_control(c, sys, ctx, opts.threads);
      break;
    }
    m["status"] = "complete";
    m["partial"] = false;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    m["status"] = "failed";
    m["partial"] = true;
    m["error"] = e.what();
    out.exit_code = 3;
  }
  m["summary"] = ctx.summary;
  m["files"] = ctx.files;
  write_json((dir / "manifest.json").string(), m);
  return out;
}

} // namespace wentzell
