#pragma once

#include <Eigen/SparseCholesky>

#include <cmath>
#include <memory>
#include <set>

#include "shapeopt/control.hpp"
#include "shapeopt/errors.hpp"
#include "shapeopt/fem.hpp"
#include "shapeopt/mesh.hpp"

namespace shapeopt {

enum class MetricKind { H1, Laplace, Elasticity };

struct MetricSpec {
  MetricKind kind = MetricKind::Elasticity;
  double cauchy_riemann_weight = 0.0;
  std::set<int> fixed_markers;  // vertex dofs eliminated before projection
};

/// Inner product on control coordinates: G = I^T A I + delta * Id with
/// delta = 1e-10 * trace / dim. Factorized once; immutable afterwards.
class GramOperator {
 public:
  explicit GramOperator(Eigen::SparseMatrix<double> g) : g_(std::move(g)) {
    g_.makeCompressed();
    ldlt_ = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>(g_);
    if (ldlt_->info() != Eigen::Success) throw MetricError("Gram matrix factorization failed");
  }

  int dim() const noexcept { return static_cast<int>(g_.rows()); }
  const Eigen::SparseMatrix<double>& matrix() const noexcept { return g_; }

  Vector apply(const Vector& x) const { return g_ * x; }
  Vector solve(const Vector& g) const {
    Vector x = ldlt_->solve(g);
    if (ldlt_->info() != Eigen::Success || !x.allFinite()) throw MetricError("Gram solve failed");
    return x;
  }
  double inner(const Vector& a, const Vector& b) const { return a.dot(g_ * b); }
  double norm(const Vector& a) const { return std::sqrt(std::max(inner(a, a), 0.0)); }
  /// Norm of a dual vector: sqrt(g^T G^{-1} g).
  double dual_norm(const Vector& g) const { return std::sqrt(std::max(g.dot(solve(g)), 0.0)); }

 private:
  Eigen::SparseMatrix<double> g_;
  std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> ldlt_;
};

/// A on the P1-vector space of the mesh, interleaved dofs, before any elimination.
inline SparseMatrix assemble_metric_operator(const MetricSpec& spec, const TriMesh& mesh) {
  if (!std::isfinite(spec.cauchy_riemann_weight) || spec.cauchy_riemann_weight < 0.0) {
    throw ParameterError("Cauchy-Riemann weight must be finite and non-negative");
  }
  const BasisTable& p1 = basis_table(1, 2);
  const QuadratureRule& rule = quadrature(2);
  const double gamma = spec.cauchy_riemann_weight;
  Triplets trip;
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto geo = element_geometry(mesh, t);
    const double area = 0.5 * geo.det;
    Eigen::Vector2d d[3];
    for (int a = 0; a < 3; ++a) d[a] = geo.inv_t * p1.ref_grads[0][a];
    // Gradient of basis (a, c): row c of DV equals d[a].
    auto grad = [&](int a, int c) {
      Eigen::Matrix2d g = Eigen::Matrix2d::Zero();
      g.row(c) = d[a].transpose();
      return g;
    };
    Eigen::Matrix<double, 6, 6> local = Eigen::Matrix<double, 6, 6>::Zero();
    for (int a = 0; a < 3; ++a) {
      for (int c = 0; c < 2; ++c) {
        const Eigen::Matrix2d ga = grad(a, c);
        for (int b = 0; b < 3; ++b) {
          for (int e = 0; e < 2; ++e) {
            const Eigen::Matrix2d gb = grad(b, e);
            double v = 0.0;
            if (spec.kind == MetricKind::Elasticity) {
              const Eigen::Matrix2d ea = 0.5 * (ga + ga.transpose()), eb = 0.5 * (gb + gb.transpose());
              v = (ea.array() * eb.array()).sum();
            } else {
              v = (ga.array() * gb.array()).sum();
            }
            if (gamma > 0.0) {
              const double ra = ga(0, 0) - ga(1, 1), sa = ga(0, 1) + ga(1, 0);
              const double rb = gb(0, 0) - gb(1, 1), sb = gb(0, 1) + gb(1, 0);
              v += gamma * (ra * rb + sa * sb);
            }
            v *= area;
            if (spec.kind == MetricKind::H1 && c == e) {
              double m = 0.0;
              for (std::size_t q = 0; q < rule.points.size(); ++q) {
                m += rule.weights[q] * geo.det * p1.values[q][a] * p1.values[q][b];
              }
              v += m;
            }
            local(2 * a + c, 2 * b + e) = v;
          }
        }
      }
    }
    const auto& tri = mesh.triangles()[t];
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) trip.emplace_back(2 * tri[i / 2] + i % 2, 2 * tri[j / 2] + j % 2, local(i, j));
    }
  }
  SparseMatrix a(2 * mesh.num_vertices(), 2 * mesh.num_vertices());
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

inline GramOperator assemble_gram(const MetricSpec& spec, const ControlMap& map, const TriMesh& base_mesh) {
  SparseMatrix a = assemble_metric_operator(spec, base_mesh);
  // Eliminate fixed vertex dofs symmetrically: unit diagonal, zero row and column.
  std::vector<bool> fixed(a.rows(), false);
  for (int v : base_mesh.vertices_on_markers(spec.fixed_markers)) fixed[2 * v] = fixed[2 * v + 1] = true;
  for (int r = 0; r < a.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(a, r); it; ++it) {
      if (fixed[it.row()] || fixed[it.col()]) it.valueRef() = it.row() == it.col() ? 1.0 : 0.0;
    }
  }
  const Eigen::SparseMatrix<double> im(map.matrix());
  Eigen::SparseMatrix<double> g = Eigen::SparseMatrix<double>(im.transpose()) * Eigen::SparseMatrix<double>(a) * im;
  g = 0.5 * (g + Eigen::SparseMatrix<double>(g.transpose()));
  for (int k = 0; k < g.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(g, k); it; ++it) {
      if (!std::isfinite(it.value())) throw MetricError("non-finite entry in Gram matrix");
    }
  }
  double trace = 0.0;
  for (int i = 0; i < g.rows(); ++i) trace += g.coeff(i, i);
  const double delta = g.rows() > 0 ? 1e-10 * trace / g.rows() : 0.0;
  Eigen::SparseMatrix<double> id(g.rows(), g.cols());
  id.setIdentity();
  g += (delta > 0.0 ? delta : 1e-10) * id;
  return GramOperator(std::move(g));
}

/// d with G d = -g: the Riesz representative of -dJ (not normalized).
inline Vector riesz_descent(const GramOperator& g, const Vector& dual) {
  if (dual.size() != g.dim()) throw ShapeError("gradient has wrong length for the metric");
  return -g.solve(dual);
}

}  // namespace shapeopt
