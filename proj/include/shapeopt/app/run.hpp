#pragma once

// Problem setup and the run / taylor drivers behind the command-line tool.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <random>
#include <sstream>

#include "shapeopt/app/config.hpp"
#include "shapeopt/functional.hpp"
#include "shapeopt/mesh_io.hpp"
#include "shapeopt/metric.hpp"
#include "shapeopt/optim.hpp"

namespace shapeopt::app {

namespace fs = std::filesystem;

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

inline TriMesh make_mesh(const MeshConfig& m) {
  if (m.generator == "channel") return gen_channel(m.length, m.height, m.nx, m.ny);
  if (m.generator == "bent_channel") return gen_bent_channel(m.length, m.height, m.offset, m.nx, m.ny);
  if (m.generator == "cantilever") return gen_cantilever(m.length, m.height, m.nx, m.ny);
  try {
    return parse_mesh_file_text(read_text_file(m.file));
  } catch (const ParseError& e) {
    throw ParseError(m.file + ": " + e.what(), e.line());
  }
}

/// Everything one run needs, built from a validated config.
struct Setup {
  Setup(RunConfig c, TriMesh m) : config(std::move(c)), mesh(std::move(m)) {}
  RunConfig config;
  TriMesh mesh;
  std::shared_ptr<StateProblem> problem;
  FormExpr objective;
  std::unique_ptr<ReducedFunctional> functional;
  std::unique_ptr<VolumeConstraint> volume;
  std::unique_ptr<GramOperator> gram;
};

inline std::unique_ptr<Setup> build_setup(const RunConfig& cfg) {
  auto s = std::make_unique<Setup>(cfg, make_mesh(cfg.mesh));
  std::shared_ptr<StateProblem> problem;
  if (cfg.problem == "pipe2d") {
    auto flow = std::make_shared<FlowProblem>();
    flow->nu = cfg.physics.nu;
    flow->convection_coefficient = cfg.physics.convection;
    flow->inflow_peak = cfg.physics.inflow_peak;
    problem = flow;
    if (cfg.objective == "dissipation") s->objective = flow->dissipation();
  } else {
    auto el = std::make_shared<ElasticityProblem>();
    el->lambda = cfg.physics.lambda;
    el->mu = cfg.physics.mu;
    el->traction = {cfg.physics.traction[0], cfg.physics.traction[1]};
    problem = el;
    if (cfg.objective == "compliance") s->objective = el->compliance();
  }
  if (cfg.objective == "volume") s->objective = volume_one();
  // geometric objectives need no state
  if (cfg.objective == "volume" || cfg.objective == "penalty") problem = nullptr;
  s->problem = problem;

  ControlMap map = build_control_map(cfg.control, s->mesh);
  MetricSpec metric = cfg.metric;
  metric.fixed_markers = map.fixed_markers(s->mesh);
  s->gram = std::make_unique<GramOperator>(assemble_gram(metric, map, s->mesh));
  s->volume = std::make_unique<VolumeConstraint>(s->mesh, map);
  s->functional = std::make_unique<ReducedFunctional>(s->mesh, std::move(map), problem, s->objective,
                                                      FunctionalOptions{cfg.alpha_reg, cfg.quality_threshold});
  return s;
}

/// Constraint used when the config asks for none.
struct NoConstraint {
  double value(const Vector&) const { return 0.0; }
  Vector gradient(const Vector& x) const { return Vector::Zero(x.size()); }
};

/// Point fields of the state (vertex values) plus the displacement.
inline std::vector<PointField> state_point_fields(const Evaluation& e, const Vector& displacement) {
  const int nv = e.mesh->num_vertices();
  std::vector<PointField> out;
  out.push_back({"displacement", 2, std::vector<double>(displacement.data(), displacement.data() + displacement.size())});
  if (e.state && !e.state->failed_to_solve) {
    for (const auto& u : e.state->unknowns) {
      const Field f = e.state->field(u.state);
      out.push_back({u.state, f.space->components(), vertex_values(f, nv)});
    }
  }
  return out;
}

inline std::string snapshot_vtk(const Setup& s, const Vector& control) {
  const Evaluation& e = s.functional->evaluate(control);
  const Vector v = s.functional->control_map().apply(control);
  const auto det = det_ratios(s.mesh, displacement_from_interleaved(v));
  return write_vtk(*e.mesh, state_point_fields(e, v), {{"detDT", det}});
}

struct RunSummary {
  OuterTermination reason = OuterTermination::MaxOuter;
  int exit_code = 0;
  int outer_iterations = 0;
  double initial_objective = kNaN;
  double final_objective = kNaN;
  double volume_target = 0.0;
  double final_volume_error = kNaN;  // |volume - target| / target
  double final_min_det_ratio = kNaN;
  double lambda = 0.0;
  ConvergenceRecord history;
  Vector control;
};

inline int exit_code(OuterTermination t) { return t == OuterTermination::Stalled ? 2 : 0; }

/// Runs the augmented-Lagrangian optimization and writes all output files into
/// `out_dir` (created if missing). Progress lines go to `log` when given.
inline RunSummary run_optimization(const RunConfig& cfg, const fs::path& out_dir, std::ostream* log = nullptr) {
  auto setup = build_setup(cfg);
  Setup& s = *setup;
  fs::create_directories(out_dir);
  write_text_file(out_dir / "config.json", to_json(cfg).dump(2) + "\n");

  int snapshot = 0;
  auto on_iterate = [&](const Vector& x, const IterationRecord& r) {
    if (cfg.write_vtk) {
      char name[32];
      std::snprintf(name, sizeof name, "u_%04d.vtk", snapshot);
      write_text_file(out_dir / name, snapshot_vtk(s, x));
    }
    ++snapshot;
    if (log) {
      *log << "outer " << r.outer_iter << " inner " << r.inner_iter << "  J " << format_real(r.objective)
           << "  c " << format_real(r.constraint) << "  |g| " << format_real(r.grad_norm) << "  radius "
           << format_real(r.tr_radius) << "  min det " << format_real(r.min_det_ratio) << "\n";
    }
  };

  const Vector x0 = Vector::Zero(s.functional->dim());
  AugmentedLagrangianResult res;
  if (cfg.volume_constraint) {
    res = augmented_lagrangian_solve(*s.functional, *s.volume, *s.gram, x0, cfg.optimizer, on_iterate);
  } else {
    NoConstraint none;
    res = augmented_lagrangian_solve(*s.functional, none, *s.gram, x0, cfg.optimizer, on_iterate);
  }

  RunSummary out;
  out.reason = res.reason;
  out.exit_code = exit_code(res.reason);
  out.outer_iterations = res.outer_iterations;
  out.lambda = res.lambda;
  out.history = res.record;
  out.control = res.x;
  out.volume_target = s.volume->target();
  out.initial_objective = res.record.front().objective;
  const Evaluation& e = s.functional->evaluate(res.x);
  out.final_objective = e.objective;
  out.final_min_det_ratio = e.min_det_ratio;
  out.final_volume_error = std::abs(s.volume->value(res.x)) / s.volume->target();

  write_text_file(out_dir / "history.csv", write_history_csv(res.record));
  write_text_file(out_dir / "final_mesh.msh2d", write_native(*e.mesh));
  write_text_file(out_dir / "final_mesh.vtk", snapshot_vtk(s, res.x));
  if (log) {
    *log << "termination: " << to_string(res.reason) << " after " << res.outer_iterations << " outer iterations\n"
         << "J: " << format_real(out.initial_objective) << " -> " << format_real(out.final_objective)
         << "  volume error " << format_real(out.final_volume_error) << "  min det ratio "
         << format_real(out.final_min_det_ratio) << "\n";
  }
  return out;
}

struct TaylorSummary {
  std::vector<TaylorReport> reports;
  bool pass = false;
};

/// Taylor remainder test of the reduced functional along seeded random
/// directions of unit metric norm. Throws ContractError at an infeasible base.
inline TaylorSummary run_taylor(const RunConfig& cfg, std::ostream* log = nullptr) {
  auto setup = build_setup(cfg);
  Setup& s = *setup;
  auto& rf = *s.functional;
  std::mt19937 rng(cfg.seed);
  std::normal_distribution<double> normal;
  auto direction = [&] {
    Vector d(rf.dim());
    for (int i = 0; i < d.size(); ++i) d[i] = normal(rng);
    const double n = s.gram->norm(d);
    return Vector(d / n);
  };
  const Vector c = cfg.taylor.base_scale > 0.0 ? Vector(cfg.taylor.base_scale * direction()) : Vector::Zero(rf.dim());
  if (!std::isfinite(rf.value(c))) throw ContractError("functional is NaN at the Taylor base point; reduce taylor.base_scale");
  const Vector g = rf.gradient(c);
  TaylorSummary out;
  out.pass = true;
  for (int k = 0; k < cfg.taylor.directions; ++k) {
    const Vector d = direction();
    auto rep = taylor_test([&](const Vector& x) { return rf.value(x); }, c, g, d, cfg.taylor.epsilon,
                           cfg.taylor.halvings + 1);
    out.pass = out.pass && rep.pass;
    if (log) {
      *log << "direction " << k << ":";
      if (rep.exact) {
        *log << " exact (remainders at rounding level)";
      } else {
        for (double q : rep.ratios) *log << " " << format_real(q);
      }
      *log << (rep.pass ? "  PASS" : "  FAIL") << "\n";
    }
    out.reports.push_back(std::move(rep));
  }
  if (log) *log << (out.pass ? "PASS" : "FAIL") << "\n";
  return out;
}

/// Text report for `info`.
inline std::string mesh_report(const TriMesh& mesh) {
  std::ostringstream s;
  s << "vertices " << mesh.num_vertices() << "\ntriangles " << mesh.num_triangles() << "\nboundary_edges "
    << mesh.boundary_edges().size() << "\n";
  std::map<int, int> count;
  for (const auto& e : mesh.boundary_edges()) ++count[e.marker];
  s << "markers";
  for (const auto& [m, n] : count) s << " " << m << "(" << n << ")";
  double qmin = std::numeric_limits<double>::infinity(), qmax = -qmin;
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const double q = shape_quality(mesh, t);
    qmin = std::min(qmin, q);
    qmax = std::max(qmax, q);
  }
  s << "\nquality min " << format_real(qmin) << " max " << format_real(qmax) << "\narea " << format_real(mesh.volume())
    << "\n";
  return s.str();
}

}  // namespace shapeopt::app
