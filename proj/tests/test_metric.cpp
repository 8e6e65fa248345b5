#include <gtest/gtest.h>

#include <random>

#include "shapeopt/metric.hpp"

using namespace shapeopt;

namespace {

Vector randn(int n, std::mt19937& rng) {
  std::normal_distribution<double> d;
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

TriMesh test_mesh() { return gen_channel(2.0, 1.0, 6, 4); }

}  // namespace

TEST(Metric, H1IsLaplacePlusMass) {
  const TriMesh mesh = test_mesh();
  const SparseMatrix lap = assemble_metric_operator({MetricKind::Laplace}, mesh);
  const SparseMatrix h1 = assemble_metric_operator({MetricKind::H1}, mesh);
  // mass oracle: P1 element mass |T|/12 (1 + delta_ab)
  Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(lap.rows(), lap.cols());
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 2; ++c) mass(2 * tri[a] + c, 2 * tri[b] + c) += mesh.signed_area(t) / 12.0 * (a == b ? 2 : 1);
  }
  EXPECT_LE((Eigen::MatrixXd(h1) - Eigen::MatrixXd(lap) - mass).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Metric, ElasticityVanishesOnTranslationAndRotation) {
  const TriMesh mesh = test_mesh();
  const SparseMatrix a = assemble_metric_operator({MetricKind::Elasticity}, mesh);
  Vector t(a.rows()), r(a.rows());
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    t.segment<2>(2 * i) = Eigen::Vector2d(0.4, -1.1);
    r.segment<2>(2 * i) = Eigen::Vector2d(-mesh.vertices()[i].y(), mesh.vertices()[i].x());
  }
  EXPECT_LE(std::abs(t.dot(a * t)), 1e-13);
  EXPECT_LE(std::abs(r.dot(a * r)), 1e-13);
  // the Gram form adds only the delta shift on top
  const auto map = build_control_map(NodalControl{}, mesh);
  const GramOperator g = assemble_gram({MetricKind::Elasticity}, map, mesh);
  EXPECT_LE(g.inner(t, t), 1e-8 * t.squaredNorm());
}

TEST(Metric, GramIsSymmetricPositiveDefinite) {
  const TriMesh mesh = test_mesh();
  std::mt19937 rng(7);
  for (MetricKind kind : {MetricKind::H1, MetricKind::Laplace, MetricKind::Elasticity}) {
    MetricSpec spec{kind, 0.5, {markers::kInlet}};
    BSplineControl bs;
    bs.lower = {0.2, -0.6};
    bs.upper = {1.8, 0.6};
    bs.level = {2, 2};
    for (const ControlSpec& cs : {ControlSpec(NodalControl{{markers::kInlet}, {}}), ControlSpec(bs)}) {
      const auto map = build_control_map(cs, mesh);
      const GramOperator g = assemble_gram(spec, map, mesh);
      const Eigen::MatrixXd dense(g.matrix());
      EXPECT_LE((dense - dense.transpose()).cwiseAbs().maxCoeff(), 1e-13);
      for (int k = 0; k < 100; ++k) {
        const Vector c = randn(g.dim(), rng);
        EXPECT_GT(g.inner(c, c), 0.0);
      }
    }
  }
}

TEST(Metric, CauchyRiemannAugmentationIsSemidefinite) {
  const TriMesh mesh = test_mesh();
  const auto map = build_control_map(NodalControl{}, mesh);
  const GramOperator g0 = assemble_gram({MetricKind::Elasticity, 0.0}, map, mesh);
  const GramOperator g1 = assemble_gram({MetricKind::Elasticity, 2.0}, map, mesh);
  std::mt19937 rng(8);
  for (int k = 0; k < 50; ++k) {
    const Vector c = randn(g0.dim(), rng);
    // g1 also has a slightly larger delta shift, which only helps
    EXPECT_GE(g1.inner(c, c), g0.inner(c, c) * (1 - 1e-12));
  }
  EXPECT_THROW(assemble_metric_operator({MetricKind::H1, -1.0}, mesh), ParameterError);
}

TEST(Riesz, IdentityAndDescentProperties) {
  const TriMesh mesh = test_mesh();
  const auto map = build_control_map(NodalControl{{markers::kInlet, markers::kOutlet}, {}}, mesh);
  const GramOperator g = assemble_gram({MetricKind::H1, 0.0, {markers::kInlet, markers::kOutlet}}, map, mesh);
  std::mt19937 rng(9);
  const Vector grad = map.apply_transpose(randn(map.displacement_dim(), rng));
  const Vector d = riesz_descent(g, grad);
  EXPECT_LT(d.dot(grad), 0.0);
  EXPECT_NEAR(g.inner(d, d), -grad.dot(d), 1e-10 * std::abs(grad.dot(d)));
  const Vector d3 = riesz_descent(g, 3.0 * grad);
  EXPECT_LE((d3 - 3.0 * d).norm(), 1e-12 * d3.norm());
}

TEST(Riesz, IdentityGramGivesNegativeGradient) {
  Eigen::SparseMatrix<double> id(3, 3);
  id.setIdentity();
  const GramOperator g(id);
  const Vector grad = Eigen::Vector3d(1.0, -2.0, 0.5);
  EXPECT_EQ(riesz_descent(g, grad), -grad);
}

TEST(Riesz, NormalizedDirectionMinimizesOverUnitSphere) {
  // 2-dof toy: brute force over the G-unit circle.
  Eigen::SparseMatrix<double> m(2, 2);
  m.insert(0, 0) = 3.0;
  m.insert(0, 1) = 1.0;
  m.insert(1, 0) = 1.0;
  m.insert(1, 1) = 2.0;
  const GramOperator g(m);
  const Vector grad = Eigen::Vector2d(0.7, -1.3);
  const Vector d = riesz_descent(g, grad);
  const Vector dn = d / g.norm(d);
  double best = 1e300;
  Vector arg;
  for (int k = 0; k < 200000; ++k) {
    const double th = 2 * M_PI * k / 200000.0;
    Vector v = Eigen::Vector2d(std::cos(th), std::sin(th));
    v /= g.norm(v);
    if (grad.dot(v) < best) {
      best = grad.dot(v);
      arg = v;
    }
  }
  EXPECT_LE((arg - dn).norm(), 1e-4);
  EXPECT_NEAR(grad.dot(dn), best, 1e-9);
}
