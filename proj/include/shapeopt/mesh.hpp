#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "shapeopt/errors.hpp"

namespace shapeopt {

using Point = Eigen::Vector2d;
using Triangle = std::array<int, 3>;

struct BoundaryEdge {
  std::array<int, 2> v;
  int marker = 0;

  friend bool operator==(const BoundaryEdge&, const BoundaryEdge&) = default;
};

/// Triangle owning a boundary edge. Local edge k joins local vertices k and (k+1)%3.
struct EdgeOwner {
  int triangle = -1;
  int local_edge = -1;
};

/// Unstructured triangular mesh with marked boundary edges.
///
/// The public constructor validates the input and flips clockwise triangles,
/// so every mesh built from user data has strictly positive element areas.
/// Meshes produced by deform() keep the connectivity of their source and are
/// not re-validated: a large displacement may tangle them, which quality()
/// reports.
class TriMesh {
 public:
  TriMesh(std::vector<Point> vertices, std::vector<Triangle> triangles,
          std::vector<BoundaryEdge> boundary_edges)
      : vertices_(std::move(vertices)),
        triangles_(std::move(triangles)),
        boundary_edges_(std::move(boundary_edges)) {
    validate_and_orient();
    build_owners();
  }

  const std::vector<Point>& vertices() const noexcept { return vertices_; }
  const std::vector<Triangle>& triangles() const noexcept { return triangles_; }
  const std::vector<BoundaryEdge>& boundary_edges() const noexcept { return boundary_edges_; }
  const std::vector<EdgeOwner>& boundary_edge_owners() const noexcept { return owners_; }

  int num_vertices() const noexcept { return static_cast<int>(vertices_.size()); }
  int num_triangles() const noexcept { return static_cast<int>(triangles_.size()); }

  double signed_area(int t) const {
    const auto& tri = triangles_[t];
    return signed_area(vertices_[tri[0]], vertices_[tri[1]], vertices_[tri[2]]);
  }

  static double signed_area(const Point& a, const Point& b, const Point& c) {
    return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
  }

  /// Sum of signed element areas.
  double volume() const {
    double v = 0.0;
    for (int t = 0; t < num_triangles(); ++t) v += signed_area(t);
    return v;
  }

  std::set<int> markers() const {
    std::set<int> out;
    for (const auto& e : boundary_edges_) out.insert(e.marker);
    return out;
  }

  /// Sorted, unique vertices lying on edges with any of the given markers.
  std::vector<int> vertices_on_markers(const std::set<int>& markers) const {
    std::set<int> vs;
    for (const auto& e : boundary_edges_) {
      if (markers.count(e.marker)) {
        vs.insert(e.v[0]);
        vs.insert(e.v[1]);
      }
    }
    return {vs.begin(), vs.end()};
  }

  friend bool operator==(const TriMesh& a, const TriMesh& b) {
    return a.vertices_ == b.vertices_ && a.triangles_ == b.triangles_ &&
           a.boundary_edges_ == b.boundary_edges_;
  }

  /// Same connectivity, new coordinates. No orientation check.
  TriMesh with_vertices(std::vector<Point> vertices) const {
    if (vertices.size() != vertices_.size()) {
      throw ShapeError("vertex count mismatch: " + std::to_string(vertices.size()) + " vs " +
                       std::to_string(vertices_.size()));
    }
    TriMesh out = *this;
    out.vertices_ = std::move(vertices);
    return out;
  }

 private:
  void validate_and_orient() {
    const int nv = num_vertices();
    for (auto& tri : triangles_) {
      for (int k = 0; k < 3; ++k) {
        if (tri[k] < 0 || tri[k] >= nv) throw MeshError("triangle references missing vertex");
      }
      if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) {
        throw MeshError("triangle with repeated vertex");
      }
      const double a = signed_area(vertices_[tri[0]], vertices_[tri[1]], vertices_[tri[2]]);
      if (!(std::abs(a) > 0.0) || !std::isfinite(a)) throw MeshError("degenerate triangle");
      if (a < 0.0) std::swap(tri[1], tri[2]);
    }
    std::set<std::pair<int, int>> seen;
    for (const auto& e : boundary_edges_) {
      if (e.marker < 0) throw MeshError("negative boundary marker");
      if (e.v[0] < 0 || e.v[0] >= nv || e.v[1] < 0 || e.v[1] >= nv || e.v[0] == e.v[1]) {
        throw MeshError("invalid boundary edge");
      }
      auto key = std::minmax(e.v[0], e.v[1]);
      if (!seen.insert(key).second) throw MeshError("boundary edge listed twice");
    }
  }

  void build_owners() {
    std::map<std::pair<int, int>, std::vector<EdgeOwner>> edge_map;
    for (int t = 0; t < num_triangles(); ++t) {
      for (int k = 0; k < 3; ++k) {
        auto key = std::minmax(triangles_[t][k], triangles_[t][(k + 1) % 3]);
        edge_map[key].push_back({t, k});
      }
    }
    owners_.clear();
    owners_.reserve(boundary_edges_.size());
    for (const auto& e : boundary_edges_) {
      auto it = edge_map.find(std::minmax(e.v[0], e.v[1]));
      if (it == edge_map.end() || it->second.size() != 1) {
        throw MeshError("boundary edge (" + std::to_string(e.v[0]) + "," + std::to_string(e.v[1]) +
                        ") does not belong to exactly one triangle");
      }
      owners_.push_back(it->second.front());
    }
  }

  std::vector<Point> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<BoundaryEdge> boundary_edges_;
  std::vector<EdgeOwner> owners_;
};

/// Affine map from the reference triangle: x = x0 + jac * xi.
struct ElementGeometry {
  Eigen::Matrix2d jac;
  double det = 0.0;
  Eigen::Matrix2d inv_t;  // jac^{-T}; maps reference gradients to physical ones
};

inline ElementGeometry element_geometry(const TriMesh& mesh, int t) {
  const auto& tri = mesh.triangles()[t];
  const auto& v = mesh.vertices();
  ElementGeometry g;
  g.jac.col(0) = v[tri[1]] - v[tri[0]];
  g.jac.col(1) = v[tri[2]] - v[tri[0]];
  g.det = g.jac.determinant();
  g.inv_t = g.jac.inverse().transpose();
  return g;
}

inline std::vector<ElementGeometry> element_geometries(const TriMesh& mesh) {
  std::vector<ElementGeometry> out;
  out.reserve(mesh.num_triangles());
  for (int t = 0; t < mesh.num_triangles(); ++t) out.push_back(element_geometry(mesh, t));
  return out;
}

/// Per-vertex 2D displacement.
using Displacement = std::vector<Point>;

/// Unpacks an interleaved (x0, y0, x1, y1, ...) vector.
inline Displacement displacement_from_interleaved(const Eigen::VectorXd& v) {
  if (v.size() % 2 != 0) throw ShapeError("interleaved displacement has odd length");
  Displacement out(v.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Point(v[2 * i], v[2 * i + 1]);
  return out;
}

inline TriMesh deform(const TriMesh& mesh, const Displacement& displacement) {
  if (static_cast<int>(displacement.size()) != mesh.num_vertices()) {
    throw ShapeError("displacement has " + std::to_string(displacement.size()) +
                     " entries for a mesh with " + std::to_string(mesh.num_vertices()) + " vertices");
  }
  std::vector<Point> moved(mesh.vertices());
  for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += displacement[i];
  return mesh.with_vertices(std::move(moved));
}

struct QualityReport {
  double min_det_ratio = 1.0;
  double max_displacement_gradient = 0.0;
};

/// Spectral norm of a 2x2 matrix.
inline double spectral_norm(const Eigen::Matrix2d& a) {
  const Eigen::Matrix2d m = a.transpose() * a;
  const double half_tr = 0.5 * m.trace();
  const double disc = std::max(half_tr * half_tr - m.determinant(), 0.0);
  return std::sqrt(std::max(half_tr + std::sqrt(disc), 0.0));
}

/// det(I + DV) on each element of mesh0, exact for the piecewise affine T = I + V.
inline std::vector<double> det_ratios(const TriMesh& mesh0, const Displacement& displacement) {
  const TriMesh moved = deform(mesh0, displacement);
  std::vector<double> out(mesh0.num_triangles());
  for (int t = 0; t < mesh0.num_triangles(); ++t) out[t] = moved.signed_area(t) / mesh0.signed_area(t);
  return out;
}

inline QualityReport quality(const TriMesh& mesh0, const Displacement& displacement) {
  const TriMesh moved = deform(mesh0, displacement);
  QualityReport r;
  r.min_det_ratio = std::numeric_limits<double>::infinity();
  for (int t = 0; t < mesh0.num_triangles(); ++t) {
    const auto g0 = element_geometry(mesh0, t);
    const auto g1 = element_geometry(moved, t);
    r.min_det_ratio = std::min(r.min_det_ratio, g1.det / g0.det);
    const Eigen::Matrix2d dv = (g1.jac - g0.jac) * g0.jac.inverse();
    r.max_displacement_gradient = std::max(r.max_displacement_gradient, spectral_norm(dv));
  }
  if (mesh0.num_triangles() == 0) r.min_det_ratio = 1.0;
  return r;
}

/// Mean-ratio shape quality 4*sqrt(3)*A / sum(l^2): 1 for equilateral, <= 0 when inverted.
inline double shape_quality(const TriMesh& mesh, int t) {
  const auto& tri = mesh.triangles()[t];
  const auto& v = mesh.vertices();
  double l2 = 0.0;
  for (int k = 0; k < 3; ++k) l2 += (v[tri[(k + 1) % 3]] - v[tri[k]]).squaredNorm();
  return 4.0 * std::sqrt(3.0) * mesh.signed_area(t) / l2;
}

namespace markers {
inline constexpr int kInlet = 10;
inline constexpr int kOutlet = 11;
inline constexpr int kBottomWall = 12;
inline constexpr int kTopWall = 13;

inline constexpr int kClamped = 1;
inline constexpr int kLoaded = 2;
inline constexpr int kFree = 3;
}  // namespace markers

namespace detail {

struct SideMarkers {
  int left, right, bottom, top;
};

// Rectangle [0, length] x [-height/2, height/2] split into nx*ny cells, each cut
// along an alternating diagonal (checkerboard), giving a mirror-symmetric mesh.
inline TriMesh structured_rectangle(double length, double height, int nx, int ny, SideMarkers m) {
  if (!(length > 0.0) || !(height > 0.0) || !std::isfinite(length) || !std::isfinite(height)) {
    throw ParameterError("rectangle dimensions must be positive");
  }
  if (nx < 2 || ny < 2) throw ParameterError("nx and ny must be at least 2");
  auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
  std::vector<Point> vertices;
  vertices.reserve((nx + 1) * (ny + 1));
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      vertices.emplace_back(length * i / nx, -0.5 * height + height * j / ny);
    }
  }
  std::vector<Triangle> triangles;
  triangles.reserve(2 * nx * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
      if ((i + j) % 2 == 0) {
        triangles.push_back({a, b, c});
        triangles.push_back({a, c, d});
      } else {
        triangles.push_back({a, b, d});
        triangles.push_back({b, c, d});
      }
    }
  }
  std::vector<BoundaryEdge> edges;
  edges.reserve(2 * (nx + ny));
  for (int i = 0; i < nx; ++i) edges.push_back({{id(i, 0), id(i + 1, 0)}, m.bottom});
  for (int j = 0; j < ny; ++j) edges.push_back({{id(nx, j), id(nx, j + 1)}, m.right});
  for (int i = nx; i > 0; --i) edges.push_back({{id(i, ny), id(i - 1, ny)}, m.top});
  for (int j = ny; j > 0; --j) edges.push_back({{id(0, j), id(0, j - 1)}, m.left});
  return TriMesh(std::move(vertices), std::move(triangles), std::move(edges));
}

}  // namespace detail

/// Straight channel [0,L] x [-H/2,H/2]: inlet 10 (x=0), outlet 11 (x=L), walls 12 (bottom), 13 (top).
/// (nx+1)(ny+1) vertices, 2 nx ny triangles, 2(nx+ny) boundary edges.
inline TriMesh gen_channel(double length, double height, int nx, int ny) {
  return detail::structured_rectangle(
      length, height, nx, ny,
      {markers::kInlet, markers::kOutlet, markers::kBottomWall, markers::kTopWall});
}

/// Channel whose centre line rises by `offset` through a smooth step over the
/// middle third of its length (a 2D counterpart of an S-bent pipe). Inlet and
/// outlet sections stay straight and vertical; markers as in gen_channel.
inline TriMesh gen_bent_channel(double length, double height, double offset, int nx, int ny) {
  if (!std::isfinite(offset)) throw ParameterError("bend offset must be finite");
  TriMesh m = gen_channel(length, height, nx, ny);
  auto v = m.vertices();
  for (auto& p : v) {
    const double s = std::clamp((p.x() - length / 3.0) / (length / 3.0), 0.0, 1.0);
    p.y() += offset * s * s * (3.0 - 2.0 * s);
  }
  return TriMesh(std::move(v), m.triangles(), m.boundary_edges());
}

/// Cantilever [0,L] x [-H/2,H/2]: clamped wall 1 (x=0), loaded edge 2 (x=L), free boundary 3.
inline TriMesh gen_cantilever(double length, double height, int nx, int ny) {
  return detail::structured_rectangle(
      length, height, nx, ny, {markers::kClamped, markers::kLoaded, markers::kFree, markers::kFree});
}

}  // namespace shapeopt
