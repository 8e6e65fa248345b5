#include <gtest/gtest.h>

#include <random>

#include "shapeopt/control.hpp"

using namespace shapeopt;

namespace {

// Textbook recursive Cox-de Boor on an explicit clamped knot vector; the
// library evaluates in place with a span search, so the two share no code.
double cox_de_boor(const std::vector<double>& t, int i, int p, double x) {
  if (p == 0) {
    const bool last = t[i + 1] == t.back() && x == t.back() && t[i] < t[i + 1];
    return (t[i] <= x && x < t[i + 1]) || last ? 1.0 : 0.0;
  }
  double v = 0.0;
  if (t[i + p] > t[i]) v += (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(t, i, p - 1, x);
  if (t[i + p + 1] > t[i + 1]) v += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(t, i + 1, p - 1, x);
  return v;
}

std::vector<double> clamped_knots(int p, int cells, double a, double b) {
  std::vector<double> t(p, a);
  for (int k = 0; k <= cells; ++k) t.push_back(a + (b - a) * k / cells);
  t.back() = b;
  for (int k = 0; k < p; ++k) t.push_back(b);
  return t;
}

}  // namespace

TEST(BSpline, QuadraticCentralValueAtCellMidpoint) {
  // level 3 on [0, 1]: cells of width 1/8; cell [3/8, 4/8] is interior.
  const auto v = bspline_eval_1d(2, 3, 0, 0.0, 1.0, 7.0 / 16.0);
  // the function centred on that cell is index 3 + 1 = 4 in the full basis
  EXPECT_NEAR(v[4], 0.75, 1e-15);
  EXPECT_NEAR(v[3], 0.125, 1e-15);
  EXPECT_NEAR(v[5], 0.125, 1e-15);
}

TEST(BSpline, MatchesRecursiveOracle) {
  for (int p : {1, 2, 3}) {
    for (int level : {0, 1, 3}) {
      const auto t = clamped_knots(p, 1 << level, -0.5, 2.0);
      const int n = (1 << level) + p;
      for (int s = 0; s <= 40; ++s) {
        const double x = -0.5 + 2.5 * s / 40.0;
        const auto v = bspline_eval_1d(p, level, 0, -0.5, 2.0, x);
        ASSERT_EQ(static_cast<int>(v.size()), n);
        for (int i = 0; i < n; ++i) EXPECT_NEAR(v[i], cox_de_boor(t, i, p, x), 1e-14) << p << " " << level << " " << x;
      }
    }
  }
}

TEST(BSpline, PartitionOfUnity) {
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int k = 0; k < 200; ++k) {
    const auto v = bspline_eval_1d(2, 4, 0, 0.0, 3.0, u(rng));
    double s = 0.0;
    for (double x : v) s += x;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(BSpline, BoundaryRegularityVanishesAtEnds) {
  for (int r : {1, 2}) {
    for (double x : {0.0, 1.0}) {
      for (double v : bspline_eval_1d(2, 3, r, 0.0, 1.0, x)) EXPECT_LE(std::abs(v), 1e-12);
    }
    // first derivative also vanishes for r = 2 (one-sided difference)
    if (r == 2) {
      const double h = 1e-7;
      const auto a = bspline_eval_1d(2, 3, r, 0.0, 1.0, h);
      for (double v : a) EXPECT_LE(std::abs(v) / h, 1e-5);
    }
  }
}

TEST(BSpline, CountsAndErrors) {
  EXPECT_EQ(bspline_eval_1d(2, 3, 1, 0.0, 1.0, 0.5).size(), 8u);
  EXPECT_EQ(bspline_count(2, 3, 0), 10);
  EXPECT_THROW(bspline_count(2, 3, 3), ConfigError);
  EXPECT_THROW(bspline_count(1, 0, 1), ConfigError);  // 1 + 1 - 2 = 0 functions
  for (double v : bspline_eval_1d(2, 2, 0, 0.0, 1.0, 1.5)) EXPECT_EQ(v, 0.0);
}

TEST(ControlMap, NodalIdentityAndFixedRows) {
  const TriMesh mesh = gen_channel(2.0, 1.0, 6, 3);
  const auto free = build_control_map(NodalControl{}, mesh);
  std::mt19937 rng(2);
  std::normal_distribution<double> n;
  Vector c(free.control_dim());
  for (int i = 0; i < c.size(); ++i) c[i] = n(rng);
  EXPECT_EQ(free.apply(c), c);
  EXPECT_EQ(free.apply(Vector::Zero(c.size())).norm(), 0.0);

  const auto fixed = build_control_map(NodalControl{{markers::kInlet, markers::kOutlet}, {0}}, mesh);
  const Vector v = fixed.apply(c);
  for (int vid : mesh.vertices_on_markers({markers::kInlet, markers::kOutlet})) {
    EXPECT_EQ(v[2 * vid], 0.0);
    EXPECT_EQ(v[2 * vid + 1], 0.0);
  }
  for (int i = 0; i < mesh.num_vertices(); ++i) EXPECT_EQ(v[2 * i], 0.0);
  EXPECT_EQ(fixed.fixed_markers(mesh), (std::set<int>{markers::kInlet, markers::kOutlet}));
  EXPECT_THROW(build_control_map(NodalControl{{99}, {}}, mesh), ConfigError);
}

TEST(ControlMap, BSplineRowsOutsideBoxAndFixedDims) {
  const TriMesh mesh = gen_channel(3.0, 1.0, 12, 4);
  BSplineControl spec;
  spec.lower = {0.5, -0.6};
  spec.upper = {2.5, 0.6};
  spec.level = {3, 2};
  spec.fixed_dims = {0};
  const auto map = build_control_map(spec, mesh);
  EXPECT_EQ(map.control_dim(), (8 + 2) * (4 + 2));
  const Eigen::SparseMatrix<double> m(map.matrix());
  Eigen::VectorXd row_abs = Eigen::VectorXd::Zero(m.rows());
  for (int k = 0; k < m.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(m, k); it; ++it) row_abs[it.row()] += std::abs(it.value());
  }
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    const Point& x = mesh.vertices()[v];
    EXPECT_EQ(row_abs[2 * v], 0.0);
    if (x.x() < 0.5 || x.x() > 2.5) EXPECT_EQ(row_abs[2 * v + 1], 0.0);
  }
  EXPECT_TRUE(map.fixed_markers(mesh).count(markers::kInlet));
  EXPECT_TRUE(map.fixed_markers(mesh).count(markers::kOutlet));
  EXPECT_FALSE(map.fixed_markers(mesh).count(markers::kTopWall));
}

TEST(ControlMap, TensorPartitionOfUnityInsideBox) {
  const TriMesh mesh = gen_channel(1.0, 1.0, 8, 8);
  BSplineControl spec;
  spec.lower = {-0.1, -0.6};
  spec.upper = {1.1, 0.6};
  const auto map = build_control_map(spec, mesh);
  // sum over all y-coefficients of the x displacement
  Vector ones = Vector::Ones(map.control_dim());
  const int half = map.control_dim() / 2;
  ones.tail(half).setZero();
  const Vector v = map.apply(ones);
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    EXPECT_NEAR(v[2 * i], 1.0, 1e-12);
    EXPECT_EQ(v[2 * i + 1], 0.0);
  }
}

TEST(ControlMap, AdjointIdentity) {
  const TriMesh mesh = gen_channel(3.0, 1.0, 12, 4);
  BSplineControl spec;
  spec.lower = {0.5, -0.6};
  spec.upper = {2.5, 0.6};
  spec.boundary_regularity = {1, 0};
  const auto map = build_control_map(spec, mesh);
  std::mt19937 rng(4);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 10; ++trial) {
    Vector c(map.control_dim()), g(map.displacement_dim());
    for (int i = 0; i < c.size(); ++i) c[i] = n(rng);
    for (int i = 0; i < g.size(); ++i) g[i] = n(rng);
    const double lhs = map.apply(c).dot(g), rhs = c.dot(map.apply_transpose(g));
    EXPECT_LE(std::abs(lhs - rhs), 1e-13 * std::max(std::abs(lhs), 1.0));
  }
  EXPECT_THROW(map.apply(Vector::Zero(3)), ShapeError);
  EXPECT_THROW(map.apply_transpose(Vector::Zero(3)), ShapeError);
}
