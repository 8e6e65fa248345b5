#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "shapeopt/errors.hpp"
#include "shapeopt/fem.hpp"
#include "shapeopt/forms.hpp"
#include "shapeopt/mesh.hpp"

namespace shapeopt {

/// One block of the state: the state field, its test-function name and its space family.
struct Unknown {
  std::string state;
  std::string test;
  Family family;
};

/// Solution of a state problem (or its adjoint) on one mesh. Owns its spaces,
/// so fields handed out stay valid as long as the solution lives.
struct StateSolution {
  std::vector<Unknown> unknowns;
  std::vector<std::shared_ptr<const FunctionSpace>> spaces;
  Vector values;
  bool converged = false;
  bool failed_to_solve = false;
  int iterations = 0;
  double residual_norm = std::numeric_limits<double>::quiet_NaN();

  /// Block layout named by state fields (as_test = false) or test fields.
  MixedLayout layout(bool as_test = false) const {
    MixedLayout l;
    for (std::size_t i = 0; i < unknowns.size(); ++i) {
      l.add(as_test ? unknowns[i].test : unknowns[i].state, spaces[i].get());
    }
    return l;
  }

  /// Field of block i (by state or test name).
  Field field(const std::string& name) const {
    int offset = 0;
    for (std::size_t i = 0; i < unknowns.size(); ++i) {
      const int n = spaces[i]->dim();
      if (unknowns[i].state == name || unknowns[i].test == name) return Field(*spaces[i], values.segment(offset, n));
      offset += n;
    }
    throw ContractError("state has no field '" + name + "'");
  }
};

/// Owning storage plus the FieldMap view the forms engine consumes.
class FieldBinding {
 public:
  void bind(const StateSolution& s, bool as_test) {
    for (const auto& u : s.unknowns) {
      const std::string& name = as_test ? u.test : u.state;
      storage_.push_back(std::make_unique<Field>(s.field(u.state)));
      map_[name] = storage_.back().get();
    }
  }
  void bind_zero(const StateSolution& s) {
    for (std::size_t i = 0; i < s.unknowns.size(); ++i) {
      storage_.push_back(std::make_unique<Field>(*s.spaces[i]));
      map_[s.unknowns[i].test] = storage_.back().get();
    }
  }
  const FieldMap& map() const noexcept { return map_; }

 private:
  std::vector<std::unique_ptr<Field>> storage_;
  FieldMap map_;
};

struct NewtonOptions {
  int max_iterations = 100;
  double relative_tolerance = 1e-10;
  double absolute_tolerance = 1e-12;
};

/// A stationary state equation R(state; test) = 0 written as a FormExpr that is
/// linear in the test fields.
class StateProblem {
 public:
  virtual ~StateProblem() = default;
  virtual std::vector<Unknown> unknowns() const = 0;
  virtual FormExpr residual() const = 0;
  /// Dirichlet conditions for each unknown (same order as unknowns()).
  virtual std::vector<std::vector<DirichletCondition>> dirichlet(const TriMesh& mesh) const = 0;
  /// Boundary markers carrying loads; the control space must keep them fixed.
  virtual std::set<int> load_markers() const { return {}; }
  /// Boundary markers carrying non-homogeneous Dirichlet data; must stay fixed too.
  virtual std::set<int> data_markers() const { return {}; }
  virtual void check_mesh(const TriMesh& mesh) const = 0;
  NewtonOptions newton;
};

/// Steady incompressible flow on Taylor-Hood P2-P1:
///   2 nu eps(u):eps(v) + c (grad u) u . v - p div v + q div u = 0,
/// parabolic inflow on marker 10, no-slip walls 12/13. The outlet 11 is
/// traction-free in the normal direction and has zero transverse velocity,
/// which keeps Poiseuille flow an exact discrete solution.
class FlowProblem : public StateProblem {
 public:
  double nu = 0.1;
  double convection_coefficient = 1.0;  // 0 gives Stokes
  double inflow_peak = 1.0;
  int inlet = markers::kInlet;
  int outlet = markers::kOutlet;
  std::set<int> walls{markers::kBottomWall, markers::kTopWall};

  std::vector<Unknown> unknowns() const override {
    return {{"u", "v", Family::P2Vector}, {"p", "q", Family::P1Scalar}};
  }

  FormExpr residual() const override {
    if (!(nu > 0.0) || !std::isfinite(nu)) throw ParameterError("viscosity must be positive");
    FormExpr r = sym_grad_sym_grad("u", "v", nu) + pressure_div("p", "v") + div_constraint("q", "u");
    if (convection_coefficient != 0.0) r = r + convection_coefficient * convection("v", "u");
    return r;
  }

  std::vector<std::vector<DirichletCondition>> dirichlet(const TriMesh& mesh) const override {
    double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
    for (int v : mesh.vertices_on_markers({inlet})) {
      ymin = std::min(ymin, mesh.vertices()[v].y());
      ymax = std::max(ymax, mesh.vertices()[v].y());
    }
    const double yc = 0.5 * (ymin + ymax), half = 0.5 * (ymax - ymin), peak = inflow_peak;
    std::vector<DirichletCondition> bcs;
    bcs.push_back({inlet, {}, [=](const Point& x) {
                     const double s = (x.y() - yc) / half;
                     return Eigen::Vector2d(peak * (1.0 - s * s), 0.0);
                   }});
    for (int w : walls) bcs.push_back({w, {}});
    bcs.push_back({outlet, {1}});
    return {bcs, {}};
  }

  std::set<int> data_markers() const override { return {inlet}; }

  void check_mesh(const TriMesh& mesh) const override {
    const auto present = mesh.markers();
    if (!present.count(outlet)) throw ConfigError("flow problem needs an outflow boundary to fix the pressure");
    if (!present.count(inlet)) throw ConfigError("flow problem needs an inflow boundary");
  }

  /// Dissipation nu eps(u):eps(u), the pipe objective.
  FormExpr dissipation() const { return dissipation_energy("u", nu); }
};

/// Linear elasticity on P1 vectors: sigma(u):eps(v) - g.v on marker 2, clamped on marker 1.
class ElasticityProblem : public StateProblem {
 public:
  double lambda = 1.0;
  double mu = 1.0;
  Eigen::Vector2d traction{0.0, -1.0};
  int clamped = markers::kClamped;
  int loaded = markers::kLoaded;

  std::vector<Unknown> unknowns() const override { return {{"u", "v", Family::P1Vector}}; }

  FormExpr residual() const override {
    if (!(mu > 0.0) || !(lambda >= 0.0)) throw ParameterError("Lame constants need mu > 0 and lambda >= 0");
    const Eigen::Vector2d g = traction;
    return stress_strain("u", "v", lambda, mu) - boundary_traction([g](const Point&) { return g; }, "v", loaded);
  }

  std::vector<std::vector<DirichletCondition>> dirichlet(const TriMesh&) const override {
    return {{DirichletCondition{clamped, {}}}};
  }

  std::set<int> load_markers() const override { return {loaded}; }

  void check_mesh(const TriMesh& mesh) const override {
    const auto present = mesh.markers();
    if (!present.count(clamped)) throw ConfigError("elasticity problem needs a clamped boundary");
    if (!present.count(loaded)) throw ConfigError("elasticity problem needs a loaded boundary");
  }

  FormExpr compliance() const { return compliance_energy("u", lambda, mu); }
};

namespace detail {

inline StateSolution empty_solution(const StateProblem& problem, const TriMesh& mesh) {
  StateSolution s;
  s.unknowns = problem.unknowns();
  int dim = 0;
  for (const auto& u : s.unknowns) {
    s.spaces.push_back(std::make_shared<const FunctionSpace>(mesh, u.family));
    dim += s.spaces.back()->dim();
  }
  s.values = Vector::Zero(dim);
  return s;
}

inline std::map<int, double> constrained_dofs(const StateProblem& problem, const StateSolution& s,
                                              const TriMesh& mesh) {
  std::map<int, double> out;
  const auto bcs = problem.dirichlet(mesh);
  int offset = 0;
  for (std::size_t i = 0; i < s.unknowns.size(); ++i) {
    out.merge(dirichlet_values(*s.spaces[i], mesh, bcs[i], offset));
    offset += s.spaces[i]->dim();
  }
  return out;
}

inline bool tangled(const TriMesh& mesh) {
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    if (!(mesh.signed_area(t) > 0.0)) return true;
  }
  return false;
}

}  // namespace detail

/// d R / d state with Dirichlet rows replaced, at the given state.
inline SparseMatrix state_jacobian(const StateProblem& problem, const TriMesh& mesh, const StateSolution& s,
                                   bool apply_bcs = true) {
  FieldBinding b;
  b.bind(s, false);
  b.bind_zero(s);
  SparseMatrix k = assemble_jacobian(problem.residual(), mesh, b.map(), s.layout(true), s.layout(false));
  if (apply_bcs) {
    Vector dummy = Vector::Zero(k.rows());
    std::map<int, double> zeros;
    for (const auto& [dof, v] : detail::constrained_dofs(problem, s, mesh)) zeros[dof] = 0.0;
    apply_dirichlet(k, dummy, zeros);
  }
  return k;
}

/// Newton's method on the full residual with the exact Jacobian, no damping.
/// Never throws for numerical trouble: a tangled mesh, a singular or
/// inaccurate linear solve, non-finite values or an exhausted budget all come
/// back as failed_to_solve.
inline StateSolution solve_state(const StateProblem& problem, const TriMesh& mesh,
                                 const StateSolution* initial_guess = nullptr) {
  problem.check_mesh(mesh);
  StateSolution s = detail::empty_solution(problem, mesh);
  const FormExpr residual = problem.residual();
  const auto bcs = detail::constrained_dofs(problem, s, mesh);
  if (detail::tangled(mesh)) {
    s.failed_to_solve = true;
    return s;
  }
  if (initial_guess && !initial_guess->failed_to_solve && initial_guess->values.size() == s.values.size()) {
    s.values = initial_guess->values;
  }
  for (const auto& [dof, v] : bcs) s.values[dof] = v;
  std::map<int, double> zeros;
  for (const auto& [dof, v] : bcs) zeros[dof] = 0.0;
  const MixedLayout test = s.layout(true), trial = s.layout(false);

  double r0 = -1.0;
  for (int it = 0;; ++it) {
    FieldBinding b;
    b.bind(s, false);
    b.bind_zero(s);
    Vector r = assemble_residual(residual, mesh, b.map(), test);
    for (const auto& [dof, v] : zeros) r[dof] = 0.0;
    const double rn = r.norm();
    s.residual_norm = rn;
    if (!std::isfinite(rn)) break;
    if (r0 < 0.0) r0 = rn;
    if (rn <= problem.newton.absolute_tolerance || rn <= problem.newton.relative_tolerance * r0) {
      s.converged = true;
      s.iterations = it;
      return s;
    }
    if (it >= problem.newton.max_iterations) break;
    SparseMatrix k = assemble_jacobian(residual, mesh, b.map(), test, trial);
    Vector rhs = -r;
    apply_dirichlet(k, rhs, zeros);
    try {
      s.values += solve_linear(k, rhs);
    } catch (const SolverError&) {
      break;
    }
    s.iterations = it + 1;
  }
  s.failed_to_solve = true;
  s.converged = false;
  return s;
}

/// Dual state: K^T dual = -dJ/dstate with homogeneous conditions on every
/// Dirichlet-constrained dof. The dual is laid out over the test fields.
inline StateSolution solve_adjoint(const StateProblem& problem, const FormExpr& objective, const StateSolution& state,
                                   const TriMesh& mesh) {
  if (state.failed_to_solve) throw ContractError("adjoint requested for a failed state solve");
  FieldBinding b;
  b.bind(state, false);
  b.bind_zero(state);
  const SparseMatrix k = assemble_jacobian(problem.residual(), mesh, b.map(), state.layout(true), state.layout(false));
  SparseMatrix kt = k.transpose();
  Vector rhs = -assemble_residual(objective, mesh, b.map(), state.layout(false));
  std::map<int, double> zeros;
  for (const auto& [dof, v] : detail::constrained_dofs(problem, state, mesh)) zeros[dof] = 0.0;
  apply_dirichlet(kt, rhs, zeros);
  StateSolution dual = state;
  dual.values = solve_linear(kt, rhs);
  dual.iterations = 1;
  dual.converged = true;
  return dual;
}

}  // namespace shapeopt
