#pragma once

// JSON run configuration, schema_version 1. Every object rejects keys it does
// not know; error messages name the offending key by its dotted path.

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "shapeopt/control.hpp"
#include "shapeopt/errors.hpp"
#include "shapeopt/metric.hpp"
#include "shapeopt/optim.hpp"

namespace shapeopt::app {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

struct MeshConfig {
  std::string generator = "channel";  // channel | bent_channel | cantilever | file
  std::string file;
  double length = 3.0;
  double height = 1.0;
  double offset = 0.0;  // bent_channel only
  int nx = 36;
  int ny = 12;
};

struct PhysicsConfig {
  double nu = 0.1;
  double convection = 1.0;
  double inflow_peak = 1.0;
  double lambda = 1.0;
  double mu = 1.0;
  std::array<double, 2> traction{0.0, -1.0};
};

struct TaylorConfig {
  int directions = 3;
  double epsilon = 1e-4;
  int halvings = 3;
  double base_scale = 0.0;  // base point = base_scale * random G-unit control
};

struct RunConfig {
  std::string problem = "pipe2d";  // pipe2d | cantilever2d
  MeshConfig mesh;
  PhysicsConfig physics;
  ControlSpec control = NodalControl{};
  MetricSpec metric;
  std::string objective;  // dissipation | compliance | volume | penalty (default: by problem)
  bool volume_constraint = true;
  double alpha_reg = 10.0;
  double quality_threshold = 0.01;
  AugmentedLagrangianOptions optimizer;
  TaylorConfig taylor;
  unsigned seed = 42;
  std::string output = "output";
  bool write_vtk = true;
};

namespace detail {

/// Walks one JSON object, remembering which keys were read.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + " must be an object");
  }

  std::string where(const std::string& key) const {
    if (path_.empty()) return key.empty() ? "config" : key;
    return key.empty() ? path_ : path_ + "." + key;
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = raw(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
    if constexpr (std::is_floating_point_v<T>) {
      if (!std::isfinite(out)) throw ConfigError(where(key) + " must be finite");
    }
  }

  ObjectReader child(const std::string& key) { return ObjectReader(raw(key), where(key)); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + where(it.key()));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + " " + what);
}

inline std::set<int> parse_dims(ObjectReader& r, const std::string& key) {
  std::set<int> out;
  if (!r.has(key)) return out;
  const json& a = r.raw(key);
  require(a.is_array(), r.where(key), "must be an array of \"x\"/\"y\"");
  for (const auto& d : a) {
    require(d.is_string() && (d == "x" || d == "y"), r.where(key), "entries must be \"x\" or \"y\"");
    out.insert(d == "x" ? 0 : 1);
  }
  return out;
}

inline std::array<int, 2> int_pair(ObjectReader& r, const std::string& key, std::array<int, 2> def) {
  if (!r.has(key)) return def;
  const json& a = r.raw(key);
  if (a.is_number_integer()) return {a.get<int>(), a.get<int>()};
  require(a.is_array() && a.size() == 2 && a[0].is_number_integer() && a[1].is_number_integer(), r.where(key),
          "must be an integer or a pair of integers");
  return {a[0].get<int>(), a[1].get<int>()};
}

inline ControlSpec parse_control(ObjectReader r) {
  std::string type = "nodal";
  r.get("type", type);
  if (type == "nodal") {
    NodalControl c;
    if (r.has("fixed_markers")) {
      try {
        for (int m : r.raw("fixed_markers").get<std::vector<int>>()) c.fixed_markers.insert(m);
      } catch (const json::exception&) {
        throw ConfigError(r.where("fixed_markers") + " must be an array of integers");
      }
    }
    c.fixed_dims = parse_dims(r, "fixed_dims");
    r.finish();
    return c;
  }
  require(type == "bspline", r.where("type"), "must be \"nodal\" or \"bspline\"");
  BSplineControl c;
  if (r.has("bbox")) {
    std::vector<std::vector<double>> box;
    try {
      box = r.raw("bbox").get<std::vector<std::vector<double>>>();
    } catch (const json::exception&) {
      throw ConfigError(r.where("bbox") + " must be [[xmin, ymin], [xmax, ymax]]");
    }
    require(box.size() == 2 && box[0].size() == 2 && box[1].size() == 2, r.where("bbox"),
            "must be [[xmin, ymin], [xmax, ymax]]");
    c.lower = {box[0][0], box[0][1]};
    c.upper = {box[1][0], box[1][1]};
    require(c.upper.x() > c.lower.x() && c.upper.y() > c.lower.y(), r.where("bbox"), "is degenerate");
  }
  c.level = int_pair(r, "level", c.level);
  r.get("order", c.degree);
  c.boundary_regularity = int_pair(r, "boundary_regularity", c.boundary_regularity);
  c.fixed_dims = parse_dims(r, "fixed_dims");
  r.finish();
  try {
    for (int a = 0; a < 2; ++a) bspline_count(c.degree, c.level[a], c.boundary_regularity[a]);
  } catch (const ConfigError& e) {
    throw ConfigError(r.where("") + ": " + e.what());
  }
  return c;
}

}  // namespace detail

inline RunConfig parse_config(const json& j) {
  using detail::require;
  detail::ObjectReader root(j, "");
  RunConfig c;
  require(root.has("schema_version"), "schema_version", "is required");
  int version = 0;
  root.get("schema_version", version);
  require(version == kSchemaVersion, "schema_version", "must be " + std::to_string(kSchemaVersion));
  root.get("problem", c.problem);
  require(c.problem == "pipe2d" || c.problem == "cantilever2d", "problem", "must be \"pipe2d\" or \"cantilever2d\"");
  const bool pipe = c.problem == "pipe2d";

  // problem-dependent defaults
  if (!pipe) {
    c.mesh.generator = "cantilever";
    c.mesh.length = 2.0;
    c.mesh.height = 1.0;
    c.mesh.nx = 40;
    c.mesh.ny = 20;
    c.control = NodalControl{{markers::kClamped, markers::kLoaded}, {}};
    c.metric.kind = MetricKind::Elasticity;
  } else {
    BSplineControl b;
    b.lower = {0.5, -0.6};
    b.upper = {2.5, 0.6};
    b.level = {4, 2};
    b.boundary_regularity = {1, 0};
    b.fixed_dims = {0};
    c.control = b;
    c.metric.kind = MetricKind::H1;
  }

  if (root.has("mesh")) {
    auto r = root.child("mesh");
    r.get("generator", c.mesh.generator);
    r.get("file", c.mesh.file);
    r.get("length", c.mesh.length);
    r.get("height", c.mesh.height);
    r.get("offset", c.mesh.offset);
    r.get("nx", c.mesh.nx);
    r.get("ny", c.mesh.ny);
    r.finish();
    const auto& g = c.mesh.generator;
    require(g == "channel" || g == "bent_channel" || g == "cantilever" || g == "file", "mesh.generator",
            "must be channel, bent_channel, cantilever or file");
    require(g != "file" || !c.mesh.file.empty(), "mesh.file", "is required when mesh.generator is \"file\"");
    require(c.mesh.length > 0.0, "mesh.length", "must be positive");
    require(c.mesh.height > 0.0, "mesh.height", "must be positive");
    require(c.mesh.nx >= 2, "mesh.nx", "must be at least 2");
    require(c.mesh.ny >= 2, "mesh.ny", "must be at least 2");
  }
  if (root.has("physics")) {
    auto r = root.child("physics");
    if (pipe) {
      r.get("nu", c.physics.nu);
      r.get("convection", c.physics.convection);
      r.get("inflow_peak", c.physics.inflow_peak);
      require(c.physics.nu > 0.0, "physics.nu", "must be positive");
    } else {
      r.get("lambda", c.physics.lambda);
      r.get("mu", c.physics.mu);
      if (r.has("traction")) {
        try {
          const auto t = r.raw("traction").get<std::vector<double>>();
          require(t.size() == 2, "physics.traction", "must have two components");
          c.physics.traction = {t[0], t[1]};
        } catch (const json::exception&) {
          throw ConfigError("physics.traction must be an array of two numbers");
        }
      }
      require(c.physics.mu > 0.0, "physics.mu", "must be positive");
      require(c.physics.lambda >= 0.0, "physics.lambda", "must be non-negative");
    }
    r.finish();
  }
  if (root.has("control")) c.control = detail::parse_control(root.child("control"));
  if (root.has("metric")) {
    auto r = root.child("metric");
    std::string kind;
    r.get("kind", kind);
    if (!kind.empty()) {
      require(kind == "h1" || kind == "laplace" || kind == "elasticity", "metric.kind",
              "must be h1, laplace or elasticity");
      c.metric.kind = kind == "h1" ? MetricKind::H1 : kind == "laplace" ? MetricKind::Laplace : MetricKind::Elasticity;
    }
    r.get("cauchy_riemann_weight", c.metric.cauchy_riemann_weight);
    require(c.metric.cauchy_riemann_weight >= 0.0, "metric.cauchy_riemann_weight", "must be non-negative");
    r.finish();
  }
  if (const auto* n = std::get_if<NodalControl>(&c.control)) c.metric.fixed_markers = n->fixed_markers;

  root.get("objective", c.objective);
  if (c.objective.empty()) c.objective = pipe ? "dissipation" : "compliance";
  require(c.objective == "volume" || c.objective == "penalty" ||
              c.objective == (pipe ? std::string("dissipation") : std::string("compliance")),
          "objective", pipe ? "must be dissipation, volume or penalty" : "must be compliance, volume or penalty");
  std::string constraint = "volume";
  root.get("constraint", constraint);
  require(constraint == "volume" || constraint == "none", "constraint", "must be \"volume\" or \"none\"");
  c.volume_constraint = constraint == "volume";
  root.get("alpha_reg", c.alpha_reg);
  require(c.alpha_reg >= 0.0, "alpha_reg", "must be non-negative");
  root.get("quality_threshold", c.quality_threshold);
  require(c.quality_threshold >= 0.0 && c.quality_threshold < 1.0, "quality_threshold", "must lie in [0, 1)");

  if (root.has("optimizer")) {
    auto r = root.child("optimizer");
    auto& o = c.optimizer;
    r.get("mu0", o.mu0);
    r.get("omega0", o.omega0);
    r.get("eta0", o.eta0);
    r.get("omega_star", o.omega_star);
    r.get("eta_star", o.eta_star);
    r.get("max_outer", o.max_outer);
    r.get("initial_radius", o.trust_region.initial_radius);
    r.get("step_min", o.trust_region.step_min);
    r.get("max_inner", o.trust_region.max_iterations);
    r.get("memory", o.trust_region.memory);
    r.finish();
    require(o.mu0 > 0.0, "optimizer.mu0", "must be positive");
    require(o.omega0 > 0.0 && o.omega_star > 0.0, "optimizer.omega0/omega_star", "must be positive");
    require(o.eta0 > 0.0 && o.eta_star > 0.0, "optimizer.eta0/eta_star", "must be positive");
    require(o.max_outer >= 1, "optimizer.max_outer", "must be at least 1");
    require(o.trust_region.initial_radius > 0.0, "optimizer.initial_radius", "must be positive");
    require(o.trust_region.step_min > 0.0, "optimizer.step_min", "must be positive");
    require(o.trust_region.max_iterations >= 1, "optimizer.max_inner", "must be at least 1");
    require(o.trust_region.memory >= 1, "optimizer.memory", "must be at least 1");
  }
  if (root.has("taylor")) {
    auto r = root.child("taylor");
    r.get("directions", c.taylor.directions);
    r.get("epsilon", c.taylor.epsilon);
    r.get("halvings", c.taylor.halvings);
    r.get("base_scale", c.taylor.base_scale);
    r.finish();
    require(c.taylor.directions >= 1, "taylor.directions", "must be at least 1");
    require(c.taylor.epsilon > 0.0, "taylor.epsilon", "must be positive");
    require(c.taylor.halvings >= 1, "taylor.halvings", "must be at least 1");
  }
  if (root.has("seed")) {
    long long s = 0;
    root.get("seed", s);
    require(s >= 0, "seed", "must be non-negative");
    c.seed = static_cast<unsigned>(s);
  }
  root.get("output", c.output);
  root.get("write_vtk", c.write_vtk);
  root.finish();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j);
}

/// Fully resolved configuration, defaults included.
inline json to_json(const RunConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["problem"] = c.problem;
  json mesh = {{"generator", c.mesh.generator}};
  if (c.mesh.generator == "file") {
    mesh["file"] = c.mesh.file;
  } else {
    mesh.update({{"length", c.mesh.length}, {"height", c.mesh.height}, {"nx", c.mesh.nx}, {"ny", c.mesh.ny}});
    if (c.mesh.generator == "bent_channel") mesh["offset"] = c.mesh.offset;
  }
  j["mesh"] = mesh;
  if (c.problem == "pipe2d") {
    j["physics"] = {{"nu", c.physics.nu}, {"convection", c.physics.convection}, {"inflow_peak", c.physics.inflow_peak}};
  } else {
    j["physics"] = {{"lambda", c.physics.lambda}, {"mu", c.physics.mu}, {"traction", c.physics.traction}};
  }
  auto dims = [](const std::set<int>& d) {
    json a = json::array();
    for (int x : d) a.push_back(x == 0 ? "x" : "y");
    return a;
  };
  if (const auto* n = std::get_if<NodalControl>(&c.control)) {
    j["control"] = {{"type", "nodal"}, {"fixed_markers", n->fixed_markers}, {"fixed_dims", dims(n->fixed_dims)}};
  } else {
    const auto& b = std::get<BSplineControl>(c.control);
    j["control"] = {{"type", "bspline"},
                    {"bbox", {{b.lower.x(), b.lower.y()}, {b.upper.x(), b.upper.y()}}},
                    {"level", b.level},
                    {"order", b.degree},
                    {"boundary_regularity", b.boundary_regularity},
                    {"fixed_dims", dims(b.fixed_dims)}};
  }
  const char* kind = c.metric.kind == MetricKind::H1 ? "h1" : c.metric.kind == MetricKind::Laplace ? "laplace" : "elasticity";
  j["metric"] = {{"kind", kind}, {"cauchy_riemann_weight", c.metric.cauchy_riemann_weight}};
  j["objective"] = c.objective;
  j["constraint"] = c.volume_constraint ? "volume" : "none";
  j["alpha_reg"] = c.alpha_reg;
  j["quality_threshold"] = c.quality_threshold;
  const auto& o = c.optimizer;
  j["optimizer"] = {{"mu0", o.mu0},
                    {"omega0", o.omega0},
                    {"eta0", o.eta0},
                    {"omega_star", o.omega_star},
                    {"eta_star", o.eta_star},
                    {"max_outer", o.max_outer},
                    {"initial_radius", o.trust_region.initial_radius},
                    {"step_min", o.trust_region.step_min},
                    {"max_inner", o.trust_region.max_iterations},
                    {"memory", o.trust_region.memory}};
  j["taylor"] = {{"directions", c.taylor.directions},
                 {"epsilon", c.taylor.epsilon},
                 {"halvings", c.taylor.halvings},
                 {"base_scale", c.taylor.base_scale}};
  j["seed"] = c.seed;
  j["output"] = c.output;
  j["write_vtk"] = c.write_vtk;
  return j;
}

}  // namespace shapeopt::app
