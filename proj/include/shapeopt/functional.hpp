#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "shapeopt/control.hpp"
#include "shapeopt/errors.hpp"
#include "shapeopt/forms.hpp"
#include "shapeopt/history.hpp"
#include "shapeopt/mesh.hpp"
#include "shapeopt/pde.hpp"

namespace shapeopt {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Spectral-norm regularizer: int over the base mesh of lambda_max(DV^T DV).

namespace detail {

inline constexpr double kDiscriminantFloor = 1e-30;

/// DV on element t of the base mesh for an interleaved displacement.
inline Eigen::Matrix2d displacement_gradient(const TriMesh& base, const ElementGeometry& geo, int t,
                                             const Vector& v) {
  const BasisTable& p1 = basis_table(1, 2);
  Eigen::Matrix2d dv = Eigen::Matrix2d::Zero();
  const auto& tri = base.triangles()[t];
  for (int a = 0; a < 3; ++a) {
    dv += Eigen::Vector2d(v[2 * tri[a]], v[2 * tri[a] + 1]) * (geo.inv_t * p1.ref_grads[0][a]).transpose();
  }
  return dv;
}

/// Largest eigenvalue of DV^T DV with the discriminant floored at 1e-30. The
/// constant sqrt(floor) is subtracted again so that V = 0 costs exactly 0.
inline double lambda_max(const Eigen::Matrix2d& dv) {
  const Eigen::Matrix2d m = dv.transpose() * dv;
  const double h = 0.5 * m.trace();
  return h + std::sqrt(std::max(h * h - m.determinant(), kDiscriminantFloor)) - std::sqrt(kDiscriminantFloor);
}

/// d lambda_max / d DV.
inline Eigen::Matrix2d lambda_max_gradient(const Eigen::Matrix2d& dv) {
  const Eigen::Matrix2d m = dv.transpose() * dv;
  const double h = 0.5 * m.trace();
  const double disc = h * h - m.determinant();
  const Eigen::Matrix2d dtr = 2.0 * dv;  // d tr(M)
  Eigen::Matrix2d cof;
  cof << dv(1, 1), -dv(1, 0), -dv(0, 1), dv(0, 0);
  const Eigen::Matrix2d ddet = 2.0 * dv.determinant() * cof;  // d det(M) = d det(DV)^2
  Eigen::Matrix2d g = 0.5 * dtr;
  if (disc > kDiscriminantFloor) g += (h * dtr - ddet) / (2.0 * std::sqrt(disc));  // d disc = h dtr - d det
  return g;
}

}  // namespace detail

inline double spectral_penalty(const TriMesh& base, const Vector& displacement) {
  double sum = 0.0;
  for (int t = 0; t < base.num_triangles(); ++t) {
    const auto geo = element_geometry(base, t);
    sum += 0.5 * geo.det * detail::lambda_max(detail::displacement_gradient(base, geo, t, displacement));
  }
  return sum;
}

/// Gradient with respect to the interleaved vertex displacement.
inline Vector spectral_penalty_gradient(const TriMesh& base, const Vector& displacement) {
  const BasisTable& p1 = basis_table(1, 2);
  Vector g = Vector::Zero(displacement.size());
  for (int t = 0; t < base.num_triangles(); ++t) {
    const auto geo = element_geometry(base, t);
    const Eigen::Matrix2d dl =
        0.5 * geo.det * detail::lambda_max_gradient(detail::displacement_gradient(base, geo, t, displacement));
    const auto& tri = base.triangles()[t];
    for (int a = 0; a < 3; ++a) g.segment<2>(2 * tri[a]) += dl * (geo.inv_t * p1.ref_grads[0][a]);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Reduced functional

struct FunctionalOptions {
  double alpha_reg = 10.0;
  double quality_threshold = 0.01;  // min_det_ratio floor
};

/// One evaluation at a control point. `value` is NaN when the quality guard
/// or the state solve failed; objective/penalty keep whatever was computed.
struct Evaluation {
  Vector control;
  double value = kNaN;
  double objective = kNaN;
  double penalty = kNaN;
  double min_det_ratio = kNaN;
  std::shared_ptr<const TriMesh> mesh;
  std::shared_ptr<const StateSolution> state;  // null without a state problem
  bool feasible() const { return std::isfinite(value); }
};

/// c -> deform base mesh -> quality guard -> state -> J + alpha * penalty.
/// Caches the most recent evaluation; not safe to share between threads.
class ReducedFunctional {
 public:
  ReducedFunctional(TriMesh base, ControlMap map, std::shared_ptr<const StateProblem> problem, FormExpr objective,
                    FunctionalOptions options = {})
      : base_(std::move(base)),
        map_(std::move(map)),
        problem_(std::move(problem)),
        objective_(std::move(objective)),
        options_(options) {
    if (!(options_.alpha_reg >= 0.0) || !std::isfinite(options_.alpha_reg)) {
      throw ParameterError("alpha_reg must be finite and non-negative");
    }
    if (!(options_.quality_threshold >= 0.0) || !(options_.quality_threshold < 1.0)) {
      throw ParameterError("quality threshold must lie in [0, 1)");
    }
    if (map_.displacement_dim() != 2 * base_.num_vertices()) throw ShapeError("control map does not fit the mesh");
    fixed_ = map_.fixed_markers(base_);
    if (problem_) {
      problem_->check_mesh(base_);
      auto must_fix = problem_->load_markers();
      must_fix.merge(problem_->data_markers());
      for (int m : must_fix) {
        if (!fixed_.count(m)) {
          throw ConfigError("boundary marker " + std::to_string(m) +
                            " carries loads or inflow data and must be kept fixed by the control space");
        }
      }
    }
  }

  int dim() const noexcept { return map_.control_dim(); }
  const TriMesh& base_mesh() const noexcept { return base_; }
  const ControlMap& control_map() const noexcept { return map_; }
  const FunctionalOptions& options() const noexcept { return options_; }
  const std::set<int>& fixed_markers() const noexcept { return fixed_; }

  const Evaluation& evaluate(const Vector& c) {
    if (c.size() != dim()) throw ShapeError("control vector has wrong length");
    if (last_ && last_->control.size() == c.size() && last_->control == c) return *last_;
    Evaluation e;
    e.control = c;
    const Vector v = map_.apply(c);
    const Displacement d = displacement_from_interleaved(v);
    const auto q = quality(base_, d);
    e.min_det_ratio = q.min_det_ratio;
    e.mesh = std::make_shared<const TriMesh>(deform(base_, d));
    e.penalty = options_.alpha_reg > 0.0 ? spectral_penalty(base_, v) : 0.0;
    if (!c.allFinite() || !(q.min_det_ratio >= options_.quality_threshold)) {
      last_ = std::move(e);
      return *last_;
    }
    FieldMap fields;
    FieldBinding binding;
    if (problem_) {
      auto state = std::make_shared<const StateSolution>(solve_state(*problem_, *e.mesh, warm_start()));
      e.state = state;
      if (state->failed_to_solve) {
        last_ = std::move(e);
        return *last_;
      }
      binding.bind(*state, false);
      fields = binding.map();
    }
    e.objective = objective_.empty() ? 0.0 : assemble_value(objective_, *e.mesh, fields);
    e.value = e.objective + options_.alpha_reg * e.penalty;
    if (!std::isfinite(e.value)) e.value = kNaN;
    last_ = std::move(e);
    return *last_;
  }

  double value(const Vector& c) { return evaluate(c).value; }

  /// History fields: J without the regularizer, the regularizer, mesh quality.
  void annotate(const Vector& c, IterationRecord& r) {
    const Evaluation& e = evaluate(c);
    r.objective = e.objective;
    r.penalty = e.penalty;
    r.min_det_ratio = e.min_det_ratio;
  }

  Vector gradient(const Vector& c) {
    const Evaluation e = evaluate(c);
    if (!e.feasible()) throw ContractError("gradient requested at an infeasible control");
    Vector shape = Vector::Zero(2 * base_.num_vertices());
    if (problem_) {
      const StateSolution dual = solve_adjoint(*problem_, objective_, *e.state, *e.mesh);
      FieldBinding b;
      b.bind(*e.state, false);
      b.bind(dual, true);
      shape = shape_derivative(objective_ + problem_->residual(), *e.mesh, b.map(), fixed_);
    } else if (!objective_.empty()) {
      shape = shape_derivative(objective_, *e.mesh, {}, fixed_);
    }
    Vector g = map_.apply_transpose(shape);
    if (options_.alpha_reg > 0.0) {
      g += options_.alpha_reg * map_.apply_transpose(spectral_penalty_gradient(base_, map_.apply(c)));
    }
    return g;
  }

 private:
  // Always the base state, so value(c) does not depend on the call history.
  const StateSolution* warm_start() {
    if (!base_state_) base_state_ = solve_state(*problem_, base_);
    return base_state_->failed_to_solve ? nullptr : &*base_state_;
  }

  TriMesh base_;
  ControlMap map_;
  std::shared_ptr<const StateProblem> problem_;
  FormExpr objective_;
  FunctionalOptions options_;
  std::set<int> fixed_;
  std::optional<StateSolution> base_state_;
  std::optional<Evaluation> last_;
};

/// Volume equality: |T(Omega)| - |Omega|.
class VolumeConstraint {
 public:
  VolumeConstraint(TriMesh base, ControlMap map)
      : base_(std::move(base)), map_(std::move(map)), target_(base_.volume()) {}

  double target() const noexcept { return target_; }

  double value(const Vector& c) const {
    return deform(base_, displacement_from_interleaved(map_.apply(c))).volume() - target_;
  }

  Vector gradient(const Vector& c) const {
    const TriMesh m = deform(base_, displacement_from_interleaved(map_.apply(c)));
    return map_.apply_transpose(shape_derivative(volume_one(), m, {}));
  }

 private:
  TriMesh base_;
  ControlMap map_;
  double target_;
};

// ---------------------------------------------------------------------------
// Taylor remainder test

struct TaylorReport {
  std::vector<double> epsilons;
  std::vector<double> remainders;
  std::vector<double> ratios;  // remainders[i] / remainders[i + 1]
  bool exact = false;          // all remainders at rounding level
  bool pass = false;
  bool base_nan = false;
};

/// r(eps) = |j(c + eps d) - j(c) - eps <g, d>| over eps0, eps0/2, ...; passes
/// when every successive ratio lies in [lo, hi] or all remainders are at
/// rounding level.
template <class Value>
TaylorReport taylor_test(Value&& value, const Vector& c, const Vector& g, const Vector& d, double eps0 = 1e-4,
                         int count = 4, double lo = 3.5, double hi = 4.5) {
  TaylorReport r;
  const double j0 = value(c);
  if (!std::isfinite(j0)) {
    r.base_nan = true;
    return r;
  }
  const double slope = g.dot(d);
  double eps = eps0;
  double floor = 0.0;
  for (int i = 0; i < count; ++i, eps *= 0.5) {
    const double j = value(Vector(c + eps * d));
    r.epsilons.push_back(eps);
    r.remainders.push_back(std::abs(j - j0 - eps * slope));
    floor = std::max(floor, 64.0 * std::numeric_limits<double>::epsilon() *
                                (std::abs(j0) + std::abs(j) + std::abs(eps * slope)));
  }
  r.exact = true;
  for (double rem : r.remainders) r.exact = r.exact && std::isfinite(rem) && rem <= floor;
  r.pass = r.exact;
  if (!r.exact) {
    r.pass = true;
    for (std::size_t i = 0; i + 1 < r.remainders.size(); ++i) {
      const double q = r.remainders[i] / r.remainders[i + 1];
      r.ratios.push_back(q);
      r.pass = r.pass && q >= lo && q <= hi;
    }
  }
  return r;
}

}  // namespace shapeopt
