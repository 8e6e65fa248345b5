#include <gtest/gtest.h>

#include <random>

#include "shapeopt/functional.hpp"
#include "shapeopt/metric.hpp"

using namespace shapeopt;

namespace {

Vector unit_direction(const GramOperator& g, std::mt19937& rng) {
  std::normal_distribution<double> n;
  Vector d(g.dim());
  for (int i = 0; i < d.size(); ++i) d[i] = n(rng);
  return d / g.norm(d);
}

struct Setup {
  TriMesh mesh;
  ControlMap map;
  GramOperator gram;
};

Setup cantilever_nodal() {
  TriMesh mesh = gen_cantilever(2.0, 1.0, 10, 5);
  const NodalControl nc{{markers::kClamped, markers::kLoaded}, {}};
  auto map = build_control_map(nc, mesh);
  auto gram = assemble_gram({MetricKind::Elasticity, 0.0, nc.fixed_markers}, map, mesh);
  return {std::move(mesh), std::move(map), std::move(gram)};
}

Setup channel_bspline() {
  TriMesh mesh = gen_channel(3.0, 1.0, 18, 6);
  BSplineControl bs;
  bs.lower = {0.5, -0.6};
  bs.upper = {2.5, 0.6};
  bs.level = {2, 1};
  auto map = build_control_map(bs, mesh);
  auto gram = assemble_gram({MetricKind::H1}, map, mesh);
  return {std::move(mesh), std::move(map), std::move(gram)};
}

void expect_taylor_pass(ReducedFunctional& rf, const GramOperator& gram, const Vector& c, unsigned seed) {
  std::mt19937 rng(seed);
  const Vector g = rf.gradient(c);
  for (int k = 0; k < 2; ++k) {
    const Vector d = unit_direction(gram, rng);
    const auto rep = taylor_test([&](const Vector& x) { return rf.value(x); }, c, g, d);
    EXPECT_TRUE(rep.pass) << "ratios " << (rep.ratios.empty() ? -1 : rep.ratios[0]) << " "
                          << (rep.ratios.size() > 2 ? rep.ratios[2] : -1);
  }
}

}  // namespace

TEST(Penalty, DiagonalStretchAndZero) {
  const TriMesh mesh = gen_channel(1.0, 1.0, 4, 4);
  Vector v(2 * mesh.num_vertices());
  for (int i = 0; i < mesh.num_vertices(); ++i) v.segment<2>(2 * i) = Eigen::Vector2d(mesh.vertices()[i].x(), 0.0);
  EXPECT_NEAR(spectral_penalty(mesh, v), 1.0, 1e-13);
  const Vector z = Vector::Zero(v.size());
  EXPECT_EQ(spectral_penalty(mesh, z), 0.0);
  EXPECT_EQ(spectral_penalty_gradient(mesh, z).norm(), 0.0);
}

TEST(Penalty, GradientMatchesCentralDifference) {
  const TriMesh mesh = gen_channel(1.0, 1.0, 5, 4);
  std::mt19937 rng(11);
  std::normal_distribution<double> n;
  Vector v(2 * mesh.num_vertices()), w(v.size());
  for (int i = 0; i < v.size(); ++i) {
    v[i] = 0.1 * n(rng);
    w[i] = n(rng);
  }
  const double h = 1e-6;
  const double fd = (spectral_penalty(mesh, v + h * w) - spectral_penalty(mesh, v - h * w)) / (2 * h);
  EXPECT_NEAR(spectral_penalty_gradient(mesh, v).dot(w), fd, 1e-5 * std::abs(fd));
}

TEST(Functional, ChannelValueAtZeroIsPoiseuilleDissipation) {
  auto s = channel_bspline();
  auto flow = std::make_shared<FlowProblem>();
  flow->nu = 0.1;
  ReducedFunctional rf(s.mesh, s.map, flow, flow->dissipation());
  EXPECT_NEAR(rf.value(Vector::Zero(rf.dim())), 0.1 * 8.0 / 3.0 * 3.0, 1e-10);
}

TEST(Functional, ComplianceTaylorNodal) {
  auto s = cantilever_nodal();
  auto el = std::make_shared<ElasticityProblem>();
  ReducedFunctional rf(s.mesh, s.map, el, el->compliance(), {0.0, 0.01});
  std::mt19937 rng(1);
  const Vector c = 0.05 * unit_direction(s.gram, rng);
  expect_taylor_pass(rf, s.gram, c, 2);
}

TEST(Functional, ComplianceWithPenaltyTaylorNodal) {
  auto s = cantilever_nodal();
  auto el = std::make_shared<ElasticityProblem>();
  ReducedFunctional rf(s.mesh, s.map, el, el->compliance(), {10.0, 0.01});
  std::mt19937 rng(3);
  const Vector c = 0.05 * unit_direction(s.gram, rng);
  expect_taylor_pass(rf, s.gram, c, 4);
}

TEST(Functional, StokesDissipationTaylorBSpline) {
  auto s = channel_bspline();
  auto flow = std::make_shared<FlowProblem>();
  flow->nu = 1.0;
  flow->convection_coefficient = 0.0;
  ReducedFunctional rf(s.mesh, s.map, flow, flow->dissipation(), {0.0, 0.01});
  std::mt19937 rng(5);
  const Vector c = 0.05 * unit_direction(s.gram, rng);
  expect_taylor_pass(rf, s.gram, c, 6);
}

TEST(Functional, NavierStokesDissipationTaylorBSpline) {
  auto s = channel_bspline();
  auto flow = std::make_shared<FlowProblem>();
  flow->nu = 0.1;
  ReducedFunctional rf(s.mesh, s.map, flow, flow->dissipation(), {0.0, 0.01});
  std::mt19937 rng(7);
  const Vector c = 0.05 * unit_direction(s.gram, rng);
  expect_taylor_pass(rf, s.gram, c, 8);
}

TEST(Functional, VolumeGradientIsPulledBackDivergence) {
  auto s = cantilever_nodal();
  ReducedFunctional rf(s.mesh, s.map, nullptr, volume_one(), {0.0, 0.01});
  const Vector c = Vector::Zero(rf.dim());
  const Vector expected = s.map.apply_transpose(shape_derivative(volume_one(), s.mesh, {}));
  EXPECT_EQ(rf.gradient(c), expected);
}

TEST(Functional, VolumeConstraintValueAndTaylor) {
  const TriMesh mesh = gen_channel(1.0, 1.0, 4, 4);
  const auto map = build_control_map(NodalControl{}, mesh);
  VolumeConstraint vc(mesh, map);
  Vector c(map.control_dim());
  for (int i = 0; i < mesh.num_vertices(); ++i) c.segment<2>(2 * i) = Eigen::Vector2d(mesh.vertices()[i].x(), 0.0);
  EXPECT_EQ(vc.value(Vector::Zero(c.size())), 0.0);
  EXPECT_NEAR(vc.value(c), 1.0, 1e-14);
  const auto gram = assemble_gram({MetricKind::H1}, map, mesh);
  std::mt19937 rng(12);
  const Vector c0 = 0.05 * unit_direction(gram, rng);
  const Vector d = unit_direction(gram, rng);
  // area is quadratic in the vertex motion: the remainder is exactly eps^2 * q(d)
  const auto rep = taylor_test([&](const Vector& x) { return vc.value(x); }, c0, vc.gradient(c0), d);
  EXPECT_TRUE(rep.pass);
}

TEST(Functional, PenaltyOnlyTaylor) {
  auto s = channel_bspline();
  ReducedFunctional rf(s.mesh, s.map, nullptr, FormExpr{}, {1.0, 0.01});
  std::mt19937 rng(13);
  const Vector c = 0.2 * unit_direction(s.gram, rng);
  expect_taylor_pass(rf, s.gram, c, 14);
}

TEST(Functional, TangledControlGivesNaNAndScaledBackIsFinite) {
  auto s = cantilever_nodal();
  auto el = std::make_shared<ElasticityProblem>();
  ReducedFunctional rf(s.mesh, s.map, el, el->compliance());
  // push one interior vertex across its neighbours
  const int v = 2 * 11 + 3;  // interior vertex (i=3, j=2)
  Vector c = Vector::Zero(rf.dim());
  c[2 * v] = 0.5;
  EXPECT_TRUE(std::isnan(rf.value(c)));
  EXPECT_THROW(rf.gradient(c), ContractError);
  // quality along s*c is affine in s; s = 0.1 keeps every element healthy
  EXPECT_TRUE(std::isfinite(rf.value(0.1 * c)));
}

TEST(Functional, ZeroLoadGivesZeroAndIsDeterministic) {
  auto s = cantilever_nodal();
  auto el = std::make_shared<ElasticityProblem>();
  el->traction.setZero();
  ReducedFunctional rf(s.mesh, s.map, el, el->compliance());
  EXPECT_EQ(rf.value(Vector::Zero(rf.dim())), 0.0);

  auto flow = std::make_shared<FlowProblem>();
  auto ch = channel_bspline();
  ReducedFunctional a(ch.mesh, ch.map, flow, flow->dissipation());
  std::mt19937 rng(15);
  const Vector c1 = 0.05 * unit_direction(ch.gram, rng), c2 = 0.05 * unit_direction(ch.gram, rng);
  const double first = a.value(c1);
  a.value(c2);
  EXPECT_EQ(a.value(c1), first);  // independent of the evaluation history
}

TEST(Functional, RejectsMovingLoadBoundary) {
  const TriMesh mesh = gen_cantilever(2.0, 1.0, 4, 2);
  auto el = std::make_shared<ElasticityProblem>();
  EXPECT_THROW(ReducedFunctional(mesh, build_control_map(NodalControl{{markers::kClamped}, {}}, mesh), el,
                                 el->compliance()),
               ConfigError);
}
