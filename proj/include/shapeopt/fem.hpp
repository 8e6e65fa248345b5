#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "shapeopt/errors.hpp"
#include "shapeopt/mesh.hpp"

namespace shapeopt {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplets = std::vector<Eigen::Triplet<double>>;

// ---------------------------------------------------------------------------
// Quadrature on the reference triangle {xi >= 0, eta >= 0, xi + eta <= 1}

struct QuadratureRule {
  int degree = 0;
  std::vector<Eigen::Vector2d> points;
  std::vector<double> weights;  // sum to 1/2
};

/// Symmetric rules exact up to the given polynomial degree (2 or 4).
inline const QuadratureRule& quadrature(int degree) {
  static const QuadratureRule rule2 = [] {
    QuadratureRule r;
    r.degree = 2;
    r.points = {{1.0 / 6.0, 1.0 / 6.0}, {2.0 / 3.0, 1.0 / 6.0}, {1.0 / 6.0, 2.0 / 3.0}};
    r.weights = {1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0};
    return r;
  }();
  static const QuadratureRule rule4 = [] {
    // Dunavant, 6 points.
    const double a = 0.44594849091596488631832925388305;
    const double wa = 0.22338158967801146569500700843312;
    const double b = 0.091576213509770743459571463402202;
    const double wb = 0.10995174365532186763832632490021;
    QuadratureRule r;
    r.degree = 4;
    r.points = {{a, a}, {1.0 - 2.0 * a, a}, {a, 1.0 - 2.0 * a}, {b, b}, {1.0 - 2.0 * b, b}, {b, 1.0 - 2.0 * b}};
    r.weights = {0.5 * wa, 0.5 * wa, 0.5 * wa, 0.5 * wb, 0.5 * wb, 0.5 * wb};
    return r;
  }();
  if (degree == 2) return rule2;
  if (degree == 4) return rule4;
  throw ParameterError("unsupported quadrature degree " + std::to_string(degree));
}

/// Two-point Gauss rule on [0, 1] (exact to degree 3).
struct EdgeRule {
  std::array<double, 2> points{0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
  std::array<double, 2> weights{0.5, 0.5};
};

// ---------------------------------------------------------------------------
// Lagrange bases on the reference triangle. Local node order: vertices 0,1,2,
// then (P2) edge nodes on local edges (0,1), (1,2), (2,0).

inline constexpr std::array<std::array<int, 2>, 3> kLocalEdges{{{0, 1}, {1, 2}, {2, 0}}};

inline int nodes_per_element(int degree) { return degree == 1 ? 3 : 6; }

inline void lagrange_basis(int degree, const Eigen::Vector2d& xi, double* values, Eigen::Vector2d* grads) {
  const double l[3] = {1.0 - xi.x() - xi.y(), xi.x(), xi.y()};
  static const Eigen::Vector2d dl[3] = {{-1.0, -1.0}, {1.0, 0.0}, {0.0, 1.0}};
  if (degree == 1) {
    for (int i = 0; i < 3; ++i) {
      values[i] = l[i];
      grads[i] = dl[i];
    }
    return;
  }
  for (int i = 0; i < 3; ++i) {
    values[i] = l[i] * (2.0 * l[i] - 1.0);
    grads[i] = (4.0 * l[i] - 1.0) * dl[i];
  }
  for (int e = 0; e < 3; ++e) {
    const int i = kLocalEdges[e][0], j = kLocalEdges[e][1];
    values[3 + e] = 4.0 * l[i] * l[j];
    grads[3 + e] = 4.0 * (l[j] * dl[i] + l[i] * dl[j]);
  }
}

/// Basis values and reference gradients tabulated at quadrature points.
struct BasisTable {
  int degree = 1;
  int num_basis = 3;
  std::vector<std::vector<double>> values;               // [q][k]
  std::vector<std::vector<Eigen::Vector2d>> ref_grads;  // [q][k]
};

inline BasisTable tabulate(int degree, const std::vector<Eigen::Vector2d>& points) {
  BasisTable t;
  t.degree = degree;
  t.num_basis = nodes_per_element(degree);
  t.values.assign(points.size(), std::vector<double>(t.num_basis));
  t.ref_grads.assign(points.size(), std::vector<Eigen::Vector2d>(t.num_basis));
  for (std::size_t q = 0; q < points.size(); ++q) lagrange_basis(degree, points[q], t.values[q].data(), t.ref_grads[q].data());
  return t;
}

inline const BasisTable& basis_table(int degree, int quad_degree) {
  static const std::array<BasisTable, 4> tables = {tabulate(1, quadrature(2).points), tabulate(1, quadrature(4).points),
                                                   tabulate(2, quadrature(2).points), tabulate(2, quadrature(4).points)};
  return tables[(degree - 1) * 2 + (quad_degree == 4 ? 1 : 0)];
}

/// Reference coordinates of a point at parameter s along local edge e.
inline Eigen::Vector2d edge_point(int e, double s) {
  static const Eigen::Vector2d corners[3] = {{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}};
  return (1.0 - s) * corners[kLocalEdges[e][0]] + s * corners[kLocalEdges[e][1]];
}

// ---------------------------------------------------------------------------
// Function spaces

enum class Family { P1Scalar, P2Scalar, P1Vector, P2Vector };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::P1Scalar: return "P1";
    case Family::P2Scalar: return "P2";
    case Family::P1Vector: return "P1-vector";
    case Family::P2Vector: return "P2-vector";
  }
  return "?";
}

/// Scalar or 2-vector Lagrange space. Topology only: the same space serves a
/// mesh and all of its deformed images. Vector dofs are interleaved:
/// dof = 2 * node + component.
class FunctionSpace {
 public:
  FunctionSpace(const TriMesh& mesh, Family family) : family_(family) {
    degree_ = (family == Family::P1Scalar || family == Family::P1Vector) ? 1 : 2;
    components_ = (family == Family::P1Vector || family == Family::P2Vector) ? 2 : 1;
    num_vertices_ = mesh.num_vertices();
    num_triangles_ = mesh.num_triangles();
    const int npe = shapeopt::nodes_per_element(degree_);
    element_nodes_.assign(static_cast<std::size_t>(num_triangles_) * npe, 0);
    std::map<std::pair<int, int>, int> edge_index;
    if (degree_ == 2) {
      for (const auto& tri : mesh.triangles()) {
        for (const auto& le : kLocalEdges) edge_index.emplace(std::minmax(tri[le[0]], tri[le[1]]), 0);
      }
      int next = num_vertices_;
      for (auto& [edge, idx] : edge_index) {
        idx = next++;
        edges_.push_back(edge);
      }
    }
    num_nodes_ = num_vertices_ + static_cast<int>(edges_.size());
    for (int t = 0; t < num_triangles_; ++t) {
      const auto& tri = mesh.triangles()[t];
      for (int k = 0; k < 3; ++k) element_nodes_[t * npe + k] = tri[k];
      if (degree_ == 2) {
        for (int e = 0; e < 3; ++e) {
          element_nodes_[t * npe + 3 + e] = edge_index.at(std::minmax(tri[kLocalEdges[e][0]], tri[kLocalEdges[e][1]]));
        }
      }
    }
    for (const auto& be : mesh.boundary_edges()) {
      auto& nodes = boundary_nodes_[be.marker];
      nodes.insert(be.v[0]);
      nodes.insert(be.v[1]);
      if (degree_ == 2) nodes.insert(edge_index.at(std::minmax(be.v[0], be.v[1])));
    }
  }

  Family family() const noexcept { return family_; }
  int degree() const noexcept { return degree_; }
  int components() const noexcept { return components_; }
  int num_nodes() const noexcept { return num_nodes_; }
  int dim() const noexcept { return num_nodes_ * components_; }
  int nodes_per_element() const noexcept { return shapeopt::nodes_per_element(degree_); }
  int num_triangles() const noexcept { return num_triangles_; }

  int node(int t, int k) const { return element_nodes_[static_cast<std::size_t>(t) * nodes_per_element() + k]; }

  /// Scalar node indices on edges carrying the marker (empty if absent).
  const std::set<int>& boundary_nodes(int marker) const {
    static const std::set<int> empty;
    auto it = boundary_nodes_.find(marker);
    return it == boundary_nodes_.end() ? empty : it->second;
  }

  bool has_marker(int marker) const { return boundary_nodes_.count(marker) > 0; }

  /// Node coordinates on the given mesh (vertices, then edge midpoints).
  Point node_coordinate(const TriMesh& mesh, int node) const {
    if (node < num_vertices_) return mesh.vertices()[node];
    const auto& e = edges_[node - num_vertices_];
    return 0.5 * (mesh.vertices()[e.first] + mesh.vertices()[e.second]);
  }

  void check_mesh(const TriMesh& mesh) const {
    if (mesh.num_vertices() != num_vertices_ || mesh.num_triangles() != num_triangles_) {
      throw ShapeError("function space was built for a different mesh");
    }
  }

  friend bool operator==(const FunctionSpace& a, const FunctionSpace& b) {
    return a.family_ == b.family_ && a.num_nodes_ == b.num_nodes_ && a.element_nodes_ == b.element_nodes_ &&
           a.boundary_nodes_ == b.boundary_nodes_;
  }

 private:
  Family family_;
  int degree_ = 1;
  int components_ = 1;
  int num_vertices_ = 0;
  int num_triangles_ = 0;
  int num_nodes_ = 0;
  std::vector<int> element_nodes_;
  std::vector<std::pair<int, int>> edges_;
  std::map<int, std::set<int>> boundary_nodes_;
};

inline FunctionSpace build_space(const TriMesh& mesh, Family family) { return FunctionSpace(mesh, family); }

/// A named block of a (possibly mixed) system: dofs [offset, offset + dim).
struct Block {
  std::string name;
  const FunctionSpace* space = nullptr;
  int offset = 0;
};

/// Ordered concatenation of spaces, e.g. Taylor-Hood = [P2-vector | P1].
class MixedLayout {
 public:
  MixedLayout() = default;
  MixedLayout(std::initializer_list<std::pair<std::string, const FunctionSpace*>> blocks) {
    for (const auto& [name, space] : blocks) add(name, space);
  }

  void add(const std::string& name, const FunctionSpace* space) {
    blocks_.push_back({name, space, dim_});
    dim_ += space->dim();
  }

  int dim() const noexcept { return dim_; }
  const std::vector<Block>& blocks() const noexcept { return blocks_; }

  const Block& block(const std::string& name) const {
    for (const auto& b : blocks_) {
      if (b.name == name) return b;
    }
    throw ContractError("layout has no block '" + name + "'");
  }

 private:
  std::vector<Block> blocks_;
  int dim_ = 0;
};

/// Coefficient vector over a space.
struct Field {
  const FunctionSpace* space = nullptr;
  Vector values;

  Field() = default;
  explicit Field(const FunctionSpace& s) : space(&s), values(Vector::Zero(s.dim())) {}
  Field(const FunctionSpace& s, Vector v) : space(&s), values(std::move(v)) {
    if (values.size() != s.dim()) throw ShapeError("field length does not match space dimension");
  }
};

/// Nodal interpolation of f(x) -> (component values).
inline Vector interpolate(const FunctionSpace& space, const TriMesh& mesh,
                          const std::function<Eigen::Vector2d(const Point&)>& f) {
  space.check_mesh(mesh);
  Vector out(space.dim());
  for (int n = 0; n < space.num_nodes(); ++n) {
    const auto v = f(space.node_coordinate(mesh, n));
    for (int c = 0; c < space.components(); ++c) out[n * space.components() + c] = v[c];
  }
  return out;
}

/// Values of a field at the mesh vertices (nodes 0..nv-1), interleaved for vectors.
inline std::vector<double> vertex_values(const Field& field, int num_vertices) {
  const int nc = field.space->components();
  std::vector<double> out(static_cast<std::size_t>(num_vertices) * nc);
  for (int i = 0; i < num_vertices * nc; ++i) out[i] = field.values[i];
  return out;
}

// ---------------------------------------------------------------------------
// Dirichlet conditions

struct DirichletCondition {
  int marker = 0;
  std::vector<int> components;  // empty: all components
  std::function<Eigen::Vector2d(const Point&)> value = [](const Point&) { return Eigen::Vector2d::Zero(); };
};

/// Global (offset-shifted) dof -> prescribed value, ascending by dof.
inline std::map<int, double> dirichlet_values(const FunctionSpace& space, const TriMesh& mesh,
                                              const std::vector<DirichletCondition>& bcs, int offset = 0) {
  std::map<int, double> out;
  for (const auto& bc : bcs) {
    if (!space.has_marker(bc.marker)) throw ConfigError("unknown boundary marker " + std::to_string(bc.marker));
    std::vector<int> comps = bc.components;
    if (comps.empty()) {
      for (int c = 0; c < space.components(); ++c) comps.push_back(c);
    }
    for (int n : space.boundary_nodes(bc.marker)) {
      const auto v = bc.value(space.node_coordinate(mesh, n));
      for (int c : comps) out[offset + n * space.components() + c] = v[c];
    }
  }
  return out;
}

/// Row replacement: each constrained row becomes a unit row and its rhs the prescribed value.
inline void apply_dirichlet(SparseMatrix& a, Vector& rhs, const std::map<int, double>& constrained) {
  for (const auto& [dof, value] : constrained) {
    for (SparseMatrix::InnerIterator it(a, dof); it; ++it) it.valueRef() = 0.0;
    a.coeffRef(dof, dof) = 1.0;
    rhs[dof] = value;
  }
}

inline void apply_dirichlet(SparseMatrix& a, Vector& rhs, const FunctionSpace& space, const TriMesh& mesh,
                            const std::vector<DirichletCondition>& bcs) {
  apply_dirichlet(a, rhs, dirichlet_values(space, mesh, bcs));
}

// ---------------------------------------------------------------------------
// Linear solves

struct LinearSolveOptions {
  double tolerance = 1e-10;
  int refinement_steps = 3;
};

/// Sparse LU with iterative refinement; throws SolverError unless
/// ||Ax - b|| <= tolerance * ||b||.
inline Vector solve_linear(const SparseMatrix& a, const Vector& b, const LinearSolveOptions& opts = {}) {
  if (a.rows() != a.cols() || a.rows() != b.size()) throw ShapeError("linear system dimensions do not match");
  Eigen::SparseMatrix<double> col(a);
  col.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(col);
  if (lu.info() != Eigen::Success) throw SolverError("sparse LU factorization failed", std::nan(""));
  const double bnorm = b.norm();
  Vector x = lu.solve(b);
  if (bnorm == 0.0) return x;
  double rel = (b - a * x).norm() / bnorm;
  for (int k = 0; k < opts.refinement_steps && !(rel <= opts.tolerance); ++k) {
    x += lu.solve(b - a * x);
    rel = (b - a * x).norm() / bnorm;
  }
  if (!(rel <= opts.tolerance)) throw SolverError("linear solve missed residual tolerance", rel);
  return x;
}

}  // namespace shapeopt
