#include <gtest/gtest.h>

#include <random>

#include "shapeopt/forms.hpp"

using namespace shapeopt;

namespace {

Vector random_vector(int n, unsigned seed, double scale = 1.0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

// Perturbed channel so that no symmetry hides sign errors.
TriMesh wobbly_mesh() {
  TriMesh m = gen_channel(1.3, 0.9, 5, 4);
  auto v = m.vertices();
  for (auto& p : v) p += Point(0.03 * std::sin(5 * p.y()), 0.02 * std::cos(3 * p.x()));
  return m.with_vertices(v);
}

TriMesh moved(const TriMesh& m, const Vector& w, double eps) {
  auto v = m.vertices();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += eps * Point(w[2 * i], w[2 * i + 1]);
  return m.with_vertices(v);
}

// Central difference of the assembled value along a mesh motion, dofs held fixed.
double fd_shape(const FormExpr& f, const TriMesh& m, const FieldMap& fields, const Vector& w, double eps) {
  return (assemble_value(f, moved(m, w, eps), fields) - assemble_value(f, moved(m, w, -eps), fields)) / (2 * eps);
}

}  // namespace

TEST(Forms, VolumeOneIsArea) {
  const TriMesh m = wobbly_mesh();
  EXPECT_NEAR(assemble_value(volume_one(), m, {}), m.volume(), 1e-14);
}

TEST(Forms, VolumeShapeDerivativeUnitSquareStretch) {
  const TriMesh m = gen_channel(1.0, 1.0, 4, 4);
  Vector w(2 * m.num_vertices());
  for (int i = 0; i < m.num_vertices(); ++i) {
    w[2 * i] = m.vertices()[i].x();
    w[2 * i + 1] = 0.0;
  }
  const Vector g = shape_derivative(volume_one(), m, {});
  EXPECT_NEAR(g.dot(w), 1.0, 1e-13);
  Vector t(2 * m.num_vertices());
  for (int i = 0; i < m.num_vertices(); ++i) t.segment<2>(2 * i) = Eigen::Vector2d(0.3, -0.7);
  EXPECT_NEAR(g.dot(t), 0.0, 1e-13);
}

TEST(Forms, VolumeShapeDerivativeIsIntegralOfDivergence) {
  const TriMesh m = wobbly_mesh();
  // Independent oracle: int div(phi_a e_c) = |T| dphi_a[c] summed per element.
  Vector oracle = Vector::Zero(2 * m.num_vertices());
  for (int t = 0; t < m.num_triangles(); ++t) {
    const auto& tri = m.triangles()[t];
    const auto& v = m.vertices();
    const double area = m.signed_area(t);
    for (int a = 0; a < 3; ++a) {
      const Point& p = v[tri[(a + 1) % 3]];
      const Point& q = v[tri[(a + 2) % 3]];
      // gradient of the hat function: rotated opposite edge / (2 area)
      const Eigen::Vector2d grad(p.y() - q.y(), q.x() - p.x());
      oracle.segment<2>(2 * tri[a]) += 0.5 * grad;
      (void)area;
    }
  }
  const Vector g = shape_derivative(volume_one(), m, {});
  EXPECT_LE((g - oracle).lpNorm<Eigen::Infinity>(), 1e-14);
}

TEST(Forms, DissipationShapeDerivativeMatchesFiniteDifference) {
  const TriMesh m = wobbly_mesh();
  const auto v2 = build_space(m, Family::P2Vector);
  const Field u(v2, random_vector(v2.dim(), 1));
  const FieldMap fields{{"u", &u}};
  const FormExpr j = dissipation_energy("u", 0.37);
  const Vector g = shape_derivative(j, m, fields);
  for (unsigned s = 0; s < 3; ++s) {
    const Vector w = random_vector(2 * m.num_vertices(), 10 + s);
    const double fd = fd_shape(j, m, fields, w, 1e-6);
    EXPECT_NEAR(g.dot(w), fd, 1e-6 * std::abs(fd));
  }
}

TEST(Forms, EveryVolumeAtomShapeDerivativeMatchesFiniteDifference) {
  const TriMesh m = wobbly_mesh();
  const auto v2 = build_space(m, Family::P2Vector);
  const auto p1 = build_space(m, Family::P1Scalar);
  const auto v1 = build_space(m, Family::P1Vector);
  const Field u(v2, random_vector(v2.dim(), 2)), v(v2, random_vector(v2.dim(), 3));
  const Field p(p1, random_vector(p1.dim(), 4)), d(v1, random_vector(v1.dim(), 5));
  const FieldMap fields{{"u", &u}, {"v", &v}, {"p", &p}, {"d", &d}};
  const std::vector<FormExpr> forms = {sym_grad_sym_grad("u", "v", 0.4), stress_strain("d", "d", 1.3, 0.8),
                                       pressure_div("p", "v"), div_constraint("p", "u"),
                                       convection("v", "u"), compliance_energy("d", 2.0, 0.5)};
  const Vector w = random_vector(2 * m.num_vertices(), 77);
  for (const auto& f : forms) {
    const double sd = shape_derivative(f, m, fields).dot(w);
    // Richardson: central-difference error is O(eps^2).
    const double r1 = std::abs(fd_shape(f, m, fields, w, 1e-3) - sd);
    const double r2 = std::abs(fd_shape(f, m, fields, w, 5e-4) - sd);
    // det(J) J^{-1} is affine in the motion, so div and convection atoms are
    // differentiated exactly by the central difference.
    if (r1 < 1e-10 * std::abs(sd)) continue;
    EXPECT_GT(r1 / r2, 3.5);
    EXPECT_LT(r1 / r2, 4.5);
  }
}

TEST(Forms, ShapeDerivativeIsLinearInTheForm) {
  const TriMesh m = wobbly_mesh();
  const auto v2 = build_space(m, Family::P2Vector);
  const Field u(v2, random_vector(v2.dim(), 8));
  const FieldMap fields{{"u", &u}};
  const FormExpr f = dissipation_energy("u", 1.0), g = volume_one();
  const Vector lhs = shape_derivative(2.5 * f + (-0.75) * g, m, fields);
  const Vector rhs = 2.5 * shape_derivative(f, m, fields) + (-0.75) * shape_derivative(g, m, fields);
  EXPECT_EQ(lhs, rhs);
}

TEST(Forms, StatePartialOfQuadraticEnergyIsTwiceTheBilinearForm) {
  const TriMesh m = wobbly_mesh();
  const auto v1 = build_space(m, Family::P1Vector);
  const Field u(v1, random_vector(v1.dim(), 9)), w(v1, random_vector(v1.dim(), 10));
  const FieldMap fields{{"u", &u}, {"w", &w}};
  const double pairing = state_partial(compliance_energy("u", 1.5, 0.7), m, fields, "u").dot(w.values);
  const double bilinear = assemble_value(stress_strain("u", "w", 1.5, 0.7), m, fields);
  EXPECT_NEAR(pairing, 2 * bilinear, 1e-12 * std::abs(bilinear));
}

TEST(Forms, StatePartialMatchesFiniteDifference) {
  const TriMesh m = wobbly_mesh();
  const auto v2 = build_space(m, Family::P2Vector);
  const Field u(v2, random_vector(v2.dim(), 11));
  const Vector w = random_vector(v2.dim(), 12);
  const FormExpr j = dissipation_energy("u", 0.1) + convection("u", "u");
  const double eps = 1e-6;
  Field up(v2, u.values + eps * w), um(v2, u.values - eps * w);
  const double fd = (assemble_value(j, m, {{"u", &up}}) - assemble_value(j, m, {{"u", &um}})) / (2 * eps);
  const double an = state_partial(j, m, {{"u", &u}}, "u").dot(w);
  EXPECT_NEAR(an, fd, 1e-6 * std::abs(fd));
}

TEST(Forms, StatePartialOfVolumeIsZero) {
  const TriMesh m = wobbly_mesh();
  const auto v1 = build_space(m, Family::P1Vector);
  const Field u(v1, random_vector(v1.dim(), 13));
  EXPECT_EQ(state_partial(volume_one(), m, {{"u", &u}}, "u").norm(), 0.0);
  EXPECT_THROW(state_partial(volume_one(), m, {}, "u"), ContractError);
}

TEST(Forms, JacobianIsDerivativeOfResidual) {
  const TriMesh m = wobbly_mesh();
  const auto v2 = build_space(m, Family::P2Vector);
  const auto p1 = build_space(m, Family::P1Scalar);
  const MixedLayout layout{{"v", &v2}, {"q", &p1}};
  const MixedLayout trial{{"u", &v2}, {"p", &p1}};
  const Field u(v2, random_vector(v2.dim(), 14)), p(p1, random_vector(p1.dim(), 15));
  const Field v(v2), q(p1);
  const FormExpr res = sym_grad_sym_grad("u", "v", 0.3) + convection("v", "u") + pressure_div("p", "v") +
                       div_constraint("q", "u");
  const FieldMap fields{{"u", &u}, {"p", &p}, {"v", &v}, {"q", &q}};
  const SparseMatrix jac = assemble_jacobian(res, m, fields, layout, trial);
  const Vector du = random_vector(trial.dim(), 16);
  const double eps = 1e-6;
  auto residual_at = [&](double s) {
    Field us(v2, u.values + s * du.head(v2.dim())), ps(p1, p.values + s * du.tail(p1.dim()));
    return assemble_residual(res, m, {{"u", &us}, {"p", &ps}, {"v", &v}, {"q", &q}}, layout);
  };
  const Vector fd = (residual_at(eps) - residual_at(-eps)) / (2 * eps);
  EXPECT_LE((jac * du - fd).norm(), 1e-7 * fd.norm());
}

TEST(Forms, TractionWorkAndPairingChecks) {
  const TriMesh m = gen_cantilever(2.0, 1.0, 4, 2);
  const auto v1 = build_space(m, Family::P1Vector);
  Field u(v1, interpolate(v1, m, [](const Point& x) { return Eigen::Vector2d(x.x(), 2.0); }));
  const auto g = [](const Point&) { return Eigen::Vector2d(0.0, -1.0); };
  // g.u = -2 over the loaded edge of length 1.
  EXPECT_NEAR(assemble_value(boundary_traction(g, "u", markers::kLoaded), m, {{"u", &u}}), -2.0, 1e-14);
  EXPECT_THROW(shape_derivative(boundary_traction(g, "u", markers::kLoaded), m, {{"u", &u}}), ConfigError);
  EXPECT_NO_THROW(shape_derivative(boundary_traction(g, "u", markers::kLoaded), m, {{"u", &u}}, {markers::kLoaded}));
  const auto p1 = build_space(m, Family::P1Scalar);
  const Field p(p1);
  EXPECT_THROW(assemble_value(pressure_div("u", "u"), m, {{"u", &u}}), ConfigError);
  EXPECT_THROW(assemble_value(dissipation_energy("p", 1.0), m, {{"p", &p}}), ConfigError);
}
