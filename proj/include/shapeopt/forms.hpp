#pragma once

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "shapeopt/errors.hpp"
#include "shapeopt/fem.hpp"
#include "shapeopt/mesh.hpp"

namespace shapeopt {

// A FormExpr is a weighted sum of integrand atoms. Every atom is a multilinear
// function of its arguments' pointwise (value, gradient) data; an atom that is
// quadratic in a field simply names that field in two argument positions. From
// this single evaluation routine the engine derives
//
//   value            sum over terms of  c * int atom(args) dx
//   state partials   replace each argument bound to the field by a basis function
//   Jacobians        replace two distinct argument positions
//   shape derivative pull back along a P1 displacement W with dof values fixed:
//                      d(dx) = div W dx,  d(Du) = -(Du)(DW)
//
// so the derivative assembly can never drift from the value assembly.

enum class AtomKind {
  SymGradSymGrad,     // 2 nu eps(a) : eps(b)
  StressStrain,       // sigma(a) : eps(b)
  PressureDiv,        // -p div b
  DivConstraint,      // q div a
  Convection,         // b . (grad a) a
  DissipationEnergy,  // nu eps(a) : eps(a)
  ComplianceEnergy,   // sigma(a) : eps(a)
  VolumeOne,          // 1
  BoundaryTraction,   // g . b on a marked boundary
};

enum class SlotKind { Vector, Scalar };

struct Atom {
  AtomKind kind = AtomKind::VolumeOne;
  std::vector<std::string> args;  // field bound to each multilinear argument
  double nu = 0.0;
  double lambda = 0.0;
  double mu = 0.0;
  int marker = -1;
  std::function<Eigen::Vector2d(const Point&)> traction;
};

struct Term {
  double coefficient = 1.0;
  Atom atom;
};

class FormExpr {
 public:
  FormExpr() = default;
  explicit FormExpr(Atom atom) { terms_.push_back({1.0, std::move(atom)}); }

  const std::vector<Term>& terms() const noexcept { return terms_; }
  bool empty() const noexcept { return terms_.empty(); }

  friend FormExpr operator+(FormExpr a, const FormExpr& b) {
    a.terms_.insert(a.terms_.end(), b.terms_.begin(), b.terms_.end());
    return a;
  }
  friend FormExpr operator*(double s, FormExpr f) {
    for (auto& t : f.terms_) t.coefficient *= s;
    return f;
  }
  friend FormExpr operator-(FormExpr a, const FormExpr& b) { return std::move(a) + (-1.0) * b; }

  /// Field names referenced by any term.
  std::set<std::string> fields() const {
    std::set<std::string> out;
    for (const auto& t : terms_) out.insert(t.atom.args.begin(), t.atom.args.end());
    return out;
  }

 private:
  std::vector<Term> terms_;
};

inline FormExpr sym_grad_sym_grad(const std::string& a, const std::string& b, double nu) {
  return FormExpr(Atom{AtomKind::SymGradSymGrad, {a, b}, nu});
}
inline FormExpr stress_strain(const std::string& a, const std::string& b, double lambda, double mu) {
  return FormExpr(Atom{AtomKind::StressStrain, {a, b}, 0.0, lambda, mu});
}
inline FormExpr pressure_div(const std::string& p, const std::string& b) {
  return FormExpr(Atom{AtomKind::PressureDiv, {p, b}});
}
inline FormExpr div_constraint(const std::string& q, const std::string& a) {
  return FormExpr(Atom{AtomKind::DivConstraint, {q, a}});
}
inline FormExpr convection(const std::string& b, const std::string& a) {
  return FormExpr(Atom{AtomKind::Convection, {b, a, a}});
}
inline FormExpr dissipation_energy(const std::string& a, double nu) {
  return FormExpr(Atom{AtomKind::DissipationEnergy, {a, a}, nu});
}
inline FormExpr compliance_energy(const std::string& a, double lambda, double mu) {
  return FormExpr(Atom{AtomKind::ComplianceEnergy, {a, a}, 0.0, lambda, mu});
}
inline FormExpr volume_one() { return FormExpr(Atom{AtomKind::VolumeOne, {}}); }
inline FormExpr boundary_traction(std::function<Eigen::Vector2d(const Point&)> g, const std::string& b, int marker) {
  Atom a{AtomKind::BoundaryTraction, {b}};
  a.marker = marker;
  a.traction = std::move(g);
  return FormExpr(std::move(a));
}

/// Named fields bound to form slots. Fields are borrowed.
using FieldMap = std::map<std::string, const Field*>;

/// Pointwise data of a field or basis function: value and gradient
/// (Du)_{ij} = d u_i / d x_j. Scalars use val[0] and grad.row(0).
struct PointValue {
  Eigen::Vector2d val = Eigen::Vector2d::Zero();
  Eigen::Matrix2d grad = Eigen::Matrix2d::Zero();
};

namespace detail {

inline SlotKind slot_kind(AtomKind kind, std::size_t arg) {
  switch (kind) {
    case AtomKind::PressureDiv:
    case AtomKind::DivConstraint: return arg == 0 ? SlotKind::Scalar : SlotKind::Vector;
    default: return SlotKind::Vector;
  }
}

inline double sym_inner(const Eigen::Matrix2d& a, const Eigen::Matrix2d& b) {
  const Eigen::Matrix2d sb = 0.5 * (b + b.transpose());
  return (a.array() * sb.array()).sum();
}

/// The multilinear integrand of a volume atom.
inline double eval_atom(const Atom& atom, const PointValue* a) {
  switch (atom.kind) {
    case AtomKind::SymGradSymGrad: return 2.0 * atom.nu * sym_inner(a[0].grad, a[1].grad);
    case AtomKind::DissipationEnergy: return atom.nu * sym_inner(a[0].grad, a[1].grad);
    case AtomKind::StressStrain:
    case AtomKind::ComplianceEnergy:
      return atom.lambda * a[0].grad.trace() * a[1].grad.trace() + 2.0 * atom.mu * sym_inner(a[0].grad, a[1].grad);
    case AtomKind::PressureDiv: return -a[0].val[0] * a[1].grad.trace();
    case AtomKind::DivConstraint: return a[0].val[0] * a[1].grad.trace();
    case AtomKind::Convection: return a[0].val.dot(a[1].grad * a[2].val);
    case AtomKind::VolumeOne: return 1.0;
    case AtomKind::BoundaryTraction: break;
  }
  throw ContractError("boundary atom evaluated as a volume atom");
}

inline const Field& bound_field(const FieldMap& fields, const std::string& name) {
  auto it = fields.find(name);
  if (it == fields.end() || it->second == nullptr) throw ContractError("no field supplied for slot '" + name + "'");
  return *it->second;
}

inline void check_pairing(const Atom& atom, const FieldMap& fields, const TriMesh& mesh) {
  for (std::size_t i = 0; i < atom.args.size(); ++i) {
    const auto& f = bound_field(fields, atom.args[i]);
    f.space->check_mesh(mesh);
    const bool want_vector = slot_kind(atom.kind, i) == SlotKind::Vector;
    if (want_vector != (f.space->components() == 2)) {
      throw ConfigError("field '" + atom.args[i] + "' (" + to_string(f.space->family()) +
                        ") cannot fill a " + (want_vector ? "vector" : "scalar") + " slot");
    }
  }
}

/// Lowest rule exact for the atom on affine elements: 2 when every field is P1, else 4.
inline int quadrature_degree(const Atom& atom, const FieldMap& fields) {
  for (const auto& name : atom.args) {
    if (bound_field(fields, name).space->degree() > 1) return 4;
  }
  return 2;
}

/// Basis function k of a space as point data: node k / components, component k % components.
inline PointValue basis_point(int components, int k, double value, const Eigen::Vector2d& grad) {
  PointValue p;
  const int c = k % components;
  p.val[c] = value;
  p.grad.row(c) = grad.transpose();
  return p;
}

/// Per-element, per-quadrature-point evaluation context for one atom.
class ElementContext {
 public:
  ElementContext(const Atom& atom, const FieldMap& fields, int quad_degree)
      : atom_(atom), rule_(quadrature(quad_degree)) {
    for (const auto& name : atom.args) {
      if (slots_.count(name)) continue;
      const Field& f = bound_field(fields, name);
      slots_.emplace(name, Slot{&f, &basis_table(f.space->degree(), quad_degree)});
    }
  }

  void bind(int t, const ElementGeometry& geo) {
    t_ = t;
    geo_ = &geo;
    for (auto& [name, s] : slots_) {
      const int npe = s.table->num_basis;
      const int nc = s.field->space->components();
      s.nodes.resize(npe);
      for (int k = 0; k < npe; ++k) s.nodes[k] = s.field->space->node(t, k);
      s.grads.assign(rule_.points.size(), std::vector<Eigen::Vector2d>(npe));
      s.point.assign(rule_.points.size(), PointValue{});
      for (std::size_t q = 0; q < rule_.points.size(); ++q) {
        auto& pv = s.point[q];
        for (int k = 0; k < npe; ++k) {
          const Eigen::Vector2d g = geo.inv_t * s.table->ref_grads[q][k];
          s.grads[q][k] = g;
          for (int c = 0; c < nc; ++c) {
            const double coef = s.field->values[s.nodes[k] * nc + c];
            pv.val[c] += coef * s.table->values[q][k];
            pv.grad.row(c) += coef * g.transpose();
          }
        }
      }
    }
  }

  std::size_t num_points() const { return rule_.points.size(); }
  double weight(std::size_t q) const { return rule_.weights[q] * geo_->det; }

  /// Argument data at quadrature point q.
  std::array<PointValue, 3> args(std::size_t q) const {
    std::array<PointValue, 3> a{};
    for (std::size_t i = 0; i < atom_.args.size(); ++i) a[i] = slots_.at(atom_.args[i]).point[q];
    return a;
  }

  int local_dofs(const std::string& name) const {
    const auto& s = slots_.at(name);
    return static_cast<int>(s.nodes.size()) * s.field->space->components();
  }

  int global_dof(const std::string& name, int k) const {
    const auto& s = slots_.at(name);
    const int nc = s.field->space->components();
    return s.nodes[k / nc] * nc + k % nc;
  }

  PointValue basis(const std::string& name, std::size_t q, int k) const {
    const auto& s = slots_.at(name);
    const int nc = s.field->space->components();
    return basis_point(nc, k, s.table->values[q][k / nc], s.grads[q][k / nc]);
  }

  bool has_slot(const std::string& name) const { return slots_.count(name) > 0; }

 private:
  struct Slot {
    const Field* field;
    const BasisTable* table;
    std::vector<int> nodes;
    std::vector<std::vector<Eigen::Vector2d>> grads;  // [q][node]
    std::vector<PointValue> point;                   // field data at [q]
  };

  const Atom& atom_;
  const QuadratureRule& rule_;
  std::map<std::string, Slot> slots_;
  int t_ = -1;
  const ElementGeometry* geo_ = nullptr;
};

/// Visits Gauss points of the atom's marked boundary edges:
/// fn(owner triangle, reference point, physical point, weight * length).
template <class Fn>
void for_each_boundary_point(const TriMesh& mesh, int marker, Fn&& fn) {
  static const EdgeRule rule;
  const auto& owners = mesh.boundary_edge_owners();
  for (std::size_t e = 0; e < mesh.boundary_edges().size(); ++e) {
    if (mesh.boundary_edges()[e].marker != marker) continue;
    const auto& own = owners[e];
    const auto& tri = mesh.triangles()[own.triangle];
    const Point& xa = mesh.vertices()[tri[kLocalEdges[own.local_edge][0]]];
    const Point& xb = mesh.vertices()[tri[kLocalEdges[own.local_edge][1]]];
    const double length = (xb - xa).norm();
    for (int g = 0; g < 2; ++g) {
      const double s = rule.points[g];
      fn(own.triangle, edge_point(own.local_edge, s), Point(xa + s * (xb - xa)), rule.weights[g] * length);
    }
  }
}

inline double traction_value(const Atom& atom, const TriMesh& mesh, const FieldMap& fields) {
  const Field& f = bound_field(fields, atom.args[0]);
  const int deg = f.space->degree();
  double sum = 0.0;
  for_each_boundary_point(mesh, atom.marker, [&](int t, const Eigen::Vector2d& xi, const Point& x, double w) {
    double vals[6];
    Eigen::Vector2d grads[6];
    lagrange_basis(deg, xi, vals, grads);
    Eigen::Vector2d u = Eigen::Vector2d::Zero();
    for (int k = 0; k < nodes_per_element(deg); ++k) {
      const int n = f.space->node(t, k);
      u += vals[k] * Eigen::Vector2d(f.values[2 * n], f.values[2 * n + 1]);
    }
    sum += w * atom.traction(x).dot(u);
  });
  return sum;
}

inline void traction_derivative(const Atom& atom, const TriMesh& mesh, const FieldMap& fields, double coef,
                                Vector& out, int offset) {
  const Field& f = bound_field(fields, atom.args[0]);
  const int deg = f.space->degree();
  for_each_boundary_point(mesh, atom.marker, [&](int t, const Eigen::Vector2d& xi, const Point& x, double w) {
    double vals[6];
    Eigen::Vector2d grads[6];
    lagrange_basis(deg, xi, vals, grads);
    const Eigen::Vector2d g = atom.traction(x);
    for (int k = 0; k < nodes_per_element(deg); ++k) {
      const int n = f.space->node(t, k);
      out[offset + 2 * n] += coef * w * g.x() * vals[k];
      out[offset + 2 * n + 1] += coef * w * g.y() * vals[k];
    }
  });
}

}  // namespace detail

/// int form dx on the current mesh.
inline double assemble_value(const FormExpr& form, const TriMesh& mesh, const FieldMap& fields) {
  const auto geos = element_geometries(mesh);
  double total = 0.0;
  for (const auto& term : form.terms()) {
    const auto& atom = term.atom;
    detail::check_pairing(atom, fields, mesh);
    double sum = 0.0;
    if (atom.kind == AtomKind::BoundaryTraction) {
      sum = detail::traction_value(atom, mesh, fields);
    } else {
      detail::ElementContext ctx(atom, fields, detail::quadrature_degree(atom, fields));
      for (int t = 0; t < mesh.num_triangles(); ++t) {
        ctx.bind(t, geos[t]);
        for (std::size_t q = 0; q < ctx.num_points(); ++q) {
          const auto a = ctx.args(q);
          sum += ctx.weight(q) * detail::eval_atom(atom, a.data());
        }
      }
    }
    total += term.coefficient * sum;
  }
  return total;
}

namespace detail {

inline void accumulate_partial(const FormExpr& form, const TriMesh& mesh, const FieldMap& fields,
                               const std::string& slot, Vector& out, int offset,
                               const std::vector<ElementGeometry>& geos) {
  for (const auto& term : form.terms()) {
    const auto& atom = term.atom;
    check_pairing(atom, fields, mesh);
    bool uses = false;
    for (const auto& a : atom.args) uses = uses || a == slot;
    if (!uses) continue;
    if (atom.kind == AtomKind::BoundaryTraction) {
      traction_derivative(atom, mesh, fields, term.coefficient, out, offset);
      continue;
    }
    ElementContext ctx(atom, fields, quadrature_degree(atom, fields));
    const std::size_t nargs = atom.args.size();
    for (int t = 0; t < mesh.num_triangles(); ++t) {
      ctx.bind(t, geos[t]);
      const int nloc = ctx.local_dofs(slot);
      for (std::size_t q = 0; q < ctx.num_points(); ++q) {
        const auto base = ctx.args(q);
        const double w = term.coefficient * ctx.weight(q);
        for (int k = 0; k < nloc; ++k) {
          const PointValue psi = ctx.basis(slot, q, k);
          double s = 0.0;
          for (std::size_t i = 0; i < nargs; ++i) {
            if (atom.args[i] != slot) continue;
            auto a = base;
            a[i] = psi;
            s += eval_atom(atom, a.data());
          }
          out[offset + ctx.global_dof(slot, k)] += w * s;
        }
      }
    }
  }
}

}  // namespace detail

/// d(form)/d(slot): one entry per dof of the slot's space.
inline Vector state_partial(const FormExpr& form, const TriMesh& mesh, const FieldMap& fields,
                            const std::string& slot) {
  const Field& f = detail::bound_field(fields, slot);
  Vector out = Vector::Zero(f.space->dim());
  detail::accumulate_partial(form, mesh, fields, slot, out, 0, element_geometries(mesh));
  return out;
}

/// Stacked partials over the blocks of a layout (e.g. the residual w.r.t. test functions).
inline Vector assemble_residual(const FormExpr& form, const TriMesh& mesh, const FieldMap& fields,
                                const MixedLayout& layout) {
  Vector out = Vector::Zero(layout.dim());
  const auto geos = element_geometries(mesh);
  for (const auto& b : layout.blocks()) {
    if (detail::bound_field(fields, b.name).space != b.space) throw ContractError("layout/field space mismatch");
    detail::accumulate_partial(form, mesh, fields, b.name, out, b.offset, geos);
  }
  return out;
}

/// Second partials: rows indexed by the test layout, columns by the trial layout.
inline SparseMatrix assemble_jacobian(const FormExpr& form, const TriMesh& mesh, const FieldMap& fields,
                                      const MixedLayout& test, const MixedLayout& trial) {
  const auto geos = element_geometries(mesh);
  Triplets trip;
  for (const auto& term : form.terms()) {
    const auto& atom = term.atom;
    detail::check_pairing(atom, fields, mesh);
    const std::size_t nargs = atom.args.size();
    if (nargs < 2) continue;
    detail::ElementContext ctx(atom, fields, detail::quadrature_degree(atom, fields));
    for (const auto& rb : test.blocks()) {
      for (const auto& cb : trial.blocks()) {
        bool pair = false;
        for (std::size_t i = 0; i < nargs; ++i) {
          for (std::size_t j = 0; j < nargs; ++j) pair = pair || (i != j && atom.args[i] == rb.name && atom.args[j] == cb.name);
        }
        if (!pair) continue;
        for (int t = 0; t < mesh.num_triangles(); ++t) {
          ctx.bind(t, geos[t]);
          const int nr = ctx.local_dofs(rb.name), nc = ctx.local_dofs(cb.name);
          Eigen::MatrixXd local = Eigen::MatrixXd::Zero(nr, nc);
          for (std::size_t q = 0; q < ctx.num_points(); ++q) {
            const auto base = ctx.args(q);
            const double w = term.coefficient * ctx.weight(q);
            for (int k = 0; k < nr; ++k) {
              const PointValue psi = ctx.basis(rb.name, q, k);
              for (int l = 0; l < nc; ++l) {
                const PointValue chi = ctx.basis(cb.name, q, l);
                double s = 0.0;
                for (std::size_t i = 0; i < nargs; ++i) {
                  if (atom.args[i] != rb.name) continue;
                  for (std::size_t j = 0; j < nargs; ++j) {
                    if (j == i || atom.args[j] != cb.name) continue;
                    auto a = base;
                    a[i] = psi;
                    a[j] = chi;
                    s += detail::eval_atom(atom, a.data());
                  }
                }
                local(k, l) += w * s;
              }
            }
          }
          for (int k = 0; k < nr; ++k) {
            for (int l = 0; l < nc; ++l) {
              if (local(k, l) != 0.0) {
                trip.emplace_back(rb.offset + ctx.global_dof(rb.name, k), cb.offset + ctx.global_dof(cb.name, l),
                                  local(k, l));
              }
            }
          }
        }
      }
    }
  }
  SparseMatrix m(test.dim(), trial.dim());
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

/// Discrete shape derivative: entry 2*v + c is d/de at e = 0 of the form
/// assembled on the mesh with vertex v moved by e in direction c, all dof
/// values held fixed. Boundary atoms must sit on markers listed in
/// fixed_markers (they contribute nothing there).
inline Vector shape_derivative(const FormExpr& form, const TriMesh& mesh, const FieldMap& fields,
                               const std::set<int>& fixed_markers = {}) {
  const auto geos = element_geometries(mesh);
  const BasisTable& p1 = basis_table(1, 2);  // P1 gradients are constant per element
  Vector total = Vector::Zero(2 * mesh.num_vertices());
  for (const auto& term : form.terms()) {
    const auto& atom = term.atom;
    detail::check_pairing(atom, fields, mesh);
    if (atom.kind == AtomKind::BoundaryTraction) {
      if (!fixed_markers.count(atom.marker)) {
        throw ConfigError("boundary load on marker " + std::to_string(atom.marker) +
                          " requires that boundary to be fixed by the control space");
      }
      continue;
    }
    Vector out = Vector::Zero(total.size());
    detail::ElementContext ctx(atom, fields, detail::quadrature_degree(atom, fields));
    const std::size_t nargs = atom.args.size();
    for (int t = 0; t < mesh.num_triangles(); ++t) {
      ctx.bind(t, geos[t]);
      Eigen::Vector2d dphi[3];
      for (int a = 0; a < 3; ++a) dphi[a] = geos[t].inv_t * p1.ref_grads[0][a];
      double local[3][2] = {};
      for (std::size_t q = 0; q < ctx.num_points(); ++q) {
        const auto base = ctx.args(q);
        const double f = detail::eval_atom(atom, base.data());
        const double w = ctx.weight(q);
        for (int a = 0; a < 3; ++a) {
          for (int c = 0; c < 2; ++c) {
            // W = e_c phi_a: DW = e_c dphi_a^T, div W = dphi_a[c].
            double s = f * dphi[a][c];
            for (std::size_t i = 0; i < nargs; ++i) {
              auto args = base;
              args[i].val.setZero();
              args[i].grad = -base[i].grad.col(c) * dphi[a].transpose();
              s += detail::eval_atom(atom, args.data());
            }
            local[a][c] += w * s;
          }
        }
      }
      const auto& tri = mesh.triangles()[t];
      for (int a = 0; a < 3; ++a) {
        out[2 * tri[a]] += local[a][0];
        out[2 * tri[a] + 1] += local[a][1];
      }
    }
    total += term.coefficient * out;
  }
  return total;
}

}  // namespace shapeopt
