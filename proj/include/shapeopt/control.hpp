#pragma once

#include <array>
#include <cmath>
#include <set>
#include <variant>
#include <vector>

#include "shapeopt/errors.hpp"
#include "shapeopt/fem.hpp"
#include "shapeopt/mesh.hpp"

namespace shapeopt {

/// Displacement given directly by the P1 vertex values of the mesh.
struct NodalControl {
  std::set<int> fixed_markers;
  std::set<int> fixed_dims;  // 0: x, 1: y
};

/// Tensor-product B-splines on an axis-aligned box. `degree` is the polynomial
/// degree (2 = quadratic). Each axis has 2^level uniform cells and
/// 2^level + degree - 2r active functions after dropping r per end.
struct BSplineControl {
  Eigen::Vector2d lower{0.0, 0.0};
  Eigen::Vector2d upper{1.0, 1.0};
  std::array<int, 2> level{3, 3};
  int degree = 2;
  std::array<int, 2> boundary_regularity{0, 0};
  std::set<int> fixed_dims;
};

using ControlSpec = std::variant<NodalControl, BSplineControl>;

/// Number of active 1D functions, or a ConfigError if the combination is invalid.
inline int bspline_count(int degree, int level, int r) {
  if (degree < 1) throw ConfigError("B-spline degree must be at least 1");
  if (level < 0 || level > 12) throw ConfigError("B-spline level must lie in [0, 12]");
  if (r < 0 || r > degree) throw ConfigError("boundary regularity must lie in [0, degree]");
  const int n = (1 << level) + degree - 2 * r;
  if (n < 1) throw ConfigError("B-spline basis is empty after imposing boundary regularity");
  return n;
}

/// Active clamped-uniform B-splines at x on [a, b] (Cox-de Boor). Points
/// outside the interval give all zeros.
inline std::vector<double> bspline_eval_1d(int degree, int level, int r, double a, double b, double x) {
  const int n = bspline_count(degree, level, r);
  if (!(b > a)) throw ConfigError("B-spline interval is degenerate");
  std::vector<double> out(n, 0.0);
  if (!(x >= a && x <= b)) return out;
  const int cells = 1 << level;
  const int full = cells + degree;
  std::vector<double> knots(full + degree + 1);
  for (int i = 0; i < static_cast<int>(knots.size()); ++i) {
    const int k = std::clamp(i - degree, 0, cells);
    knots[i] = k == cells ? b : a + (b - a) * k / cells;
  }
  // span containing x; the right end belongs to the last cell
  int span = degree + std::min(static_cast<int>(std::floor((x - a) / (b - a) * cells)), cells - 1);
  while (span > degree && x < knots[span]) --span;
  while (span < full - 1 && x >= knots[span + 1]) ++span;
  // degree-0 functions, then raise the degree in place
  std::vector<double> basis(full + degree, 0.0);
  basis[span] = 1.0;
  for (int p = 1; p <= degree; ++p) {
    for (int i = span - p; i <= span; ++i) {
      double v = 0.0;
      const double d1 = knots[i + p] - knots[i];
      const double d2 = knots[i + p + 1] - knots[i + 1];
      if (d1 > 0.0) v += (x - knots[i]) / d1 * basis[i];
      if (d2 > 0.0) v += (knots[i + p + 1] - x) / d2 * basis[i + 1];
      basis[i] = v;
    }
  }
  for (int i = 0; i < n; ++i) out[i] = basis[i + r];
  return out;
}

/// Linear map from control coefficients to interleaved vertex displacements of the base mesh.
class ControlMap {
 public:
  ControlMap() = default;
  explicit ControlMap(SparseMatrix m) : m_(std::move(m)) {}

  int control_dim() const noexcept { return static_cast<int>(m_.cols()); }
  int displacement_dim() const noexcept { return static_cast<int>(m_.rows()); }
  const SparseMatrix& matrix() const noexcept { return m_; }

  Vector apply(const Vector& c) const {
    if (c.size() != m_.cols()) throw ShapeError("control vector has wrong length");
    return m_ * c;
  }
  Vector apply_transpose(const Vector& g) const {
    if (g.size() != m_.rows()) throw ShapeError("shape gradient has wrong length");
    return m_.transpose() * g;
  }

  /// Markers whose every vertex has identically zero displacement.
  std::set<int> fixed_markers(const TriMesh& mesh) const {
    std::vector<bool> moves(mesh.num_vertices(), false);
    for (int r = 0; r < m_.outerSize(); ++r) {
      for (SparseMatrix::InnerIterator it(m_, r); it; ++it) {
        if (it.value() != 0.0) moves[r / 2] = true;
      }
    }
    std::set<int> out;
    for (int marker : mesh.markers()) {
      bool fixed = true;
      for (int v : mesh.vertices_on_markers({marker})) fixed = fixed && !moves[v];
      if (fixed) out.insert(marker);
    }
    return out;
  }

 private:
  SparseMatrix m_;
};

namespace detail {

inline void check_dims(const std::set<int>& dims) {
  for (int d : dims) {
    if (d != 0 && d != 1) throw ConfigError("fixed_dims entries must be 0 (x) or 1 (y)");
  }
}

inline ControlMap nodal_map(const NodalControl& spec, const TriMesh& mesh) {
  check_dims(spec.fixed_dims);
  const auto present = mesh.markers();
  for (int m : spec.fixed_markers) {
    if (!present.count(m)) throw ConfigError("fixed marker " + std::to_string(m) + " is not on the mesh");
  }
  const auto pinned = mesh.vertices_on_markers(spec.fixed_markers);
  std::vector<bool> fixed(mesh.num_vertices(), false);
  for (int v : pinned) fixed[v] = true;
  Triplets trip;
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    for (int c = 0; c < 2; ++c) {
      if (!fixed[v] && !spec.fixed_dims.count(c)) trip.emplace_back(2 * v + c, 2 * v + c, 1.0);
    }
  }
  SparseMatrix m(2 * mesh.num_vertices(), 2 * mesh.num_vertices());
  m.setFromTriplets(trip.begin(), trip.end());
  return ControlMap(std::move(m));
}

// Control layout: free dims in increasing order (dim-major), then ix * ny + iy.
inline ControlMap bspline_map(const BSplineControl& spec, const TriMesh& mesh) {
  check_dims(spec.fixed_dims);
  if (!(spec.upper.x() > spec.lower.x()) || !(spec.upper.y() > spec.lower.y())) {
    throw ConfigError("B-spline bounding box is degenerate");
  }
  const int nx = bspline_count(spec.degree, spec.level[0], spec.boundary_regularity[0]);
  const int ny = bspline_count(spec.degree, spec.level[1], spec.boundary_regularity[1]);
  std::vector<int> free_dims;
  for (int c = 0; c < 2; ++c) {
    if (!spec.fixed_dims.count(c)) free_dims.push_back(c);
  }
  if (free_dims.empty()) throw ConfigError("every displacement direction is fixed");
  Triplets trip;
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    const Point& x = mesh.vertices()[v];
    const auto bx = bspline_eval_1d(spec.degree, spec.level[0], spec.boundary_regularity[0], spec.lower.x(),
                                    spec.upper.x(), x.x());
    const auto by = bspline_eval_1d(spec.degree, spec.level[1], spec.boundary_regularity[1], spec.lower.y(),
                                    spec.upper.y(), x.y());
    for (int i = 0; i < nx; ++i) {
      if (bx[i] == 0.0) continue;
      for (int j = 0; j < ny; ++j) {
        const double w = bx[i] * by[j];
        if (w == 0.0) continue;
        for (std::size_t k = 0; k < free_dims.size(); ++k) {
          trip.emplace_back(2 * v + free_dims[k], static_cast<int>(k) * nx * ny + i * ny + j, w);
        }
      }
    }
  }
  SparseMatrix m(2 * mesh.num_vertices(), static_cast<int>(free_dims.size()) * nx * ny);
  m.setFromTriplets(trip.begin(), trip.end());
  return ControlMap(std::move(m));
}

}  // namespace detail

/// Built once on the base mesh; displacements are always measured from it.
inline ControlMap build_control_map(const ControlSpec& spec, const TriMesh& base_mesh) {
  return std::visit(
      [&](const auto& s) {
        if constexpr (std::is_same_v<std::decay_t<decltype(s)>, NodalControl>) {
          return detail::nodal_map(s, base_mesh);
        } else {
          return detail::bspline_map(s, base_mesh);
        }
      },
      spec);
}

}  // namespace shapeopt
