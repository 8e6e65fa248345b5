#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <deque>
#include <functional>
#include <limits>
#include <string>

#include "shapeopt/fem.hpp"
#include "shapeopt/history.hpp"

namespace shapeopt {

template <class F>
concept DifferentiableObjective = requires(F f, const Vector& x) {
  { f.value(x) } -> std::convertible_to<double>;
  { f.gradient(x) } -> std::convertible_to<Vector>;
};

/// SPD operator defining the control inner product.
template <class M>
concept InnerProduct = requires(const M m, const Vector& x) {
  { m.apply(x) } -> std::convertible_to<Vector>;
  { m.solve(x) } -> std::convertible_to<Vector>;
};

/// Objectives may add their own fields (penalty, mesh quality) to a record.
template <class F>
concept Annotating = requires(F f, const Vector& x, IterationRecord& r) { f.annotate(x, r); };

/// Euclidean inner product.
struct IdentityMetric {
  Vector apply(const Vector& x) const { return x; }
  Vector solve(const Vector& x) const { return x; }
};

enum class Termination { Converged, StepTooSmall, MaxIterations };

inline std::string to_string(Termination t) {
  switch (t) {
    case Termination::Converged: return "converged";
    case Termination::StepTooSmall: return "step-too-small";
    case Termination::MaxIterations: return "max-iterations";
  }
  return "?";
}

struct TrustRegionOptions {
  double initial_radius = 1.0;
  double max_radius = 1e3;
  double step_min = 1e-4;
  double eta_accept = 0.05;
  double eta_shrink = 0.25;
  double eta_grow = 0.75;
  int memory = 10;
  int max_iterations = 100;
  int max_cg_iterations = 200;
};

/// Limited-memory BFGS model B = gamma G - W M^{-1} W^T in compact form, with
/// the Gram operator G as the seed matrix.
template <InnerProduct M>
class LbfgsModel {
 public:
  LbfgsModel(const M& metric, int memory) : metric_(metric), memory_(memory) {}

  void reset() {
    s_.clear();
    y_.clear();
    gs_.clear();
    gamma_ = 1.0;
    dirty_ = true;
  }

  /// Stores (s, y) when the curvature s^T y is positive; returns whether it was kept.
  bool update(const Vector& s, const Vector& y) {
    const double sy = s.dot(y);
    if (!(sy > 0.0) || !std::isfinite(sy)) return false;
    const double yhy = y.dot(metric_.solve(y));
    if (!(yhy > 0.0)) return false;
    gamma_ = yhy / sy;  // B0 = gamma G with gamma = y^T G^{-1} y / s^T y
    s_.push_back(s);
    y_.push_back(y);
    gs_.push_back(metric_.apply(s));
    if (static_cast<int>(s_.size()) > memory_) {
      s_.pop_front();
      y_.pop_front();
      gs_.pop_front();
    }
    dirty_ = true;
    return true;
  }

  double gamma() const { return gamma_; }
  int size() const { return static_cast<int>(s_.size()); }

  Vector apply(const Vector& v) const {
    Vector out = gamma_ * metric_.apply(v);
    if (s_.empty()) return out;
    refresh();
    Vector wv(2 * s_.size());
    for (std::size_t i = 0; i < s_.size(); ++i) {
      wv[i] = gamma_ * gs_[i].dot(v);
      wv[s_.size() + i] = y_[i].dot(v);
    }
    const Vector z = middle_.solve(wv);
    for (std::size_t i = 0; i < s_.size(); ++i) out -= z[i] * gamma_ * gs_[i] + z[s_.size() + i] * y_[i];
    return out;
  }

  /// Preconditioner: the seed matrix inverse.
  Vector precondition(const Vector& r) const { return metric_.solve(r) / gamma_; }

 private:
  void refresh() const {
    if (!dirty_) return;
    const int k = static_cast<int>(s_.size());
    Eigen::MatrixXd m(2 * k, 2 * k);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        m(i, j) = gamma_ * s_[i].dot(gs_[j]);
        const double sy = s_[i].dot(y_[j]);
        m(i, k + j) = i > j ? sy : 0.0;   // L
        m(k + j, i) = i > j ? sy : 0.0;   // L^T
        m(k + i, k + j) = i == j ? -s_[i].dot(y_[i]) : 0.0;  // -D
      }
    }
    middle_ = m.fullPivLu();
    dirty_ = false;
  }

  const M& metric_;
  int memory_;
  std::deque<Vector> s_, y_, gs_;
  double gamma_ = 1.0;
  mutable bool dirty_ = true;
  mutable Eigen::FullPivLU<Eigen::MatrixXd> middle_;
};

struct SteihaugResult {
  Vector step;
  bool on_boundary = false;
};

/// Truncated CG on the model g.p + p.Bp/2 with ||p||_G <= radius, preconditioned by G.
template <InnerProduct M>
SteihaugResult steihaug(const LbfgsModel<M>& model, const M& metric, const Vector& g, double radius,
                        int max_iterations) {
  const int n = static_cast<int>(g.size());
  Vector p = Vector::Zero(n), r = g;
  Vector z = model.precondition(r);
  Vector d = -z;
  double rz = r.dot(z);
  const double tol = std::min(0.5, std::sqrt(std::sqrt(std::max(rz, 0.0)))) * std::sqrt(std::max(rz, 0.0));
  auto to_boundary = [&](const Vector& d) {
    // tau >= 0 with ||p + tau d||_G = radius
    const Vector gd = metric.apply(d);
    const double a = d.dot(gd), b = 2.0 * p.dot(gd), c = p.dot(metric.apply(p)) - radius * radius;
    const double tau = (-b + std::sqrt(std::max(b * b - 4.0 * a * c, 0.0))) / (2.0 * a);
    return SteihaugResult{p + tau * d, true};
  };
  if (!(rz > 0.0)) return {p, false};
  for (int it = 0; it < max_iterations; ++it) {
    const Vector bd = model.apply(d);
    const double kappa = d.dot(bd);
    if (!(kappa > 0.0)) return to_boundary(d);
    const double alpha = rz / kappa;
    const Vector next = p + alpha * d;
    if (std::sqrt(std::max(next.dot(metric.apply(next)), 0.0)) >= radius) return to_boundary(d);
    p = next;
    r += alpha * bd;
    z = model.precondition(r);
    const double rz_next = r.dot(z);
    if (std::sqrt(std::max(rz_next, 0.0)) <= tol) break;
    d = -z + (rz_next / rz) * d;
    rz = rz_next;
  }
  return {p, false};
}

struct InnerResult {
  Vector x;
  double value = 0.0;
  Vector gradient;
  Termination reason = Termination::MaxIterations;
  int iterations = 0;  // accepted steps
  double radius = 0.0;
};

/// Per accepted step: (x, value, dual gradient norm, step norm, radius).
struct InnerStep {
  const Vector& x;
  double value;
  double grad_norm;
  double step_norm;
  double radius;
  int iteration;
};

/// Trust-region L-BFGS minimization in the metric G. A candidate with a
/// non-finite value is rejected like any bad step (rho = -inf) and the
/// radius shrinks; the objective is never asked for a gradient there.
template <DifferentiableObjective F, InnerProduct M>
InnerResult inner_solve(F& f, const M& metric, Vector x, double tolerance, double& radius,
                        const TrustRegionOptions& opts = {},
                        const std::function<void(const InnerStep&)>& on_accept = nullptr) {
  LbfgsModel<M> model(metric, opts.memory);
  InnerResult res;
  double fx = f.value(x);
  Vector g = f.gradient(x);
  for (;;) {
    const double gnorm = std::sqrt(std::max(g.dot(metric.solve(g)), 0.0));
    if (gnorm <= tolerance) {
      res.reason = Termination::Converged;
      break;
    }
    if (radius < opts.step_min) {
      res.reason = Termination::StepTooSmall;
      break;
    }
    if (res.iterations >= opts.max_iterations) {
      res.reason = Termination::MaxIterations;
      break;
    }
    const auto [p, boundary] = steihaug(model, metric, g, radius, opts.max_cg_iterations);
    const double pnorm = std::sqrt(std::max(p.dot(metric.apply(p)), 0.0));
    const double predicted = -(g.dot(p) + 0.5 * p.dot(model.apply(p)));
    const Vector trial = x + p;
    const double ft = f.value(trial);
    double rho = -std::numeric_limits<double>::infinity();
    if (std::isfinite(ft) && predicted > 0.0) rho = (fx - ft) / predicted;
    if (rho < opts.eta_shrink) {
      radius = 0.25 * std::min(radius, pnorm);
    } else if (rho > opts.eta_grow && boundary) {
      radius = std::min(2.0 * radius, opts.max_radius);
    }
    if (rho > opts.eta_accept) {
      const Vector gt = f.gradient(trial);
      model.update(p, gt - g);
      x = trial;
      fx = ft;
      g = gt;
      ++res.iterations;
      if (on_accept) {
        on_accept({x, fx, std::sqrt(std::max(g.dot(metric.solve(g)), 0.0)), pnorm, radius, res.iterations});
      }
      if (pnorm < opts.step_min) {
        res.reason = Termination::StepTooSmall;
        break;
      }
    }
  }
  res.x = std::move(x);
  res.value = fx;
  res.gradient = std::move(g);
  res.radius = radius;
  return res;
}

// ---------------------------------------------------------------------------
// Augmented Lagrangian

struct AugmentedLagrangianOptions {
  double mu0 = 10.0;
  double lambda0 = 0.0;
  double omega0 = 1e-2;
  double eta0 = 1e-2;
  double omega_star = 1e-6;
  double eta_star = 1e-4;
  int max_outer = 10;
  TrustRegionOptions trust_region;
};

enum class OuterTermination { Converged, MaxOuter, Stalled };

inline std::string to_string(OuterTermination t) {
  switch (t) {
    case OuterTermination::Converged: return "converged";
    case OuterTermination::MaxOuter: return "max-outer";
    case OuterTermination::Stalled: return "step-too-small";
  }
  return "?";
}

struct AugmentedLagrangianResult {
  Vector x;
  double lambda = 0.0;
  double mu = 0.0;
  ConvergenceRecord record;
  OuterTermination reason = OuterTermination::MaxOuter;
  int outer_iterations = 0;
};

namespace detail {

/// f + lambda c + mu/2 c^2 as an objective.
template <class F, class C>
struct AugmentedModel {
  F& f;
  C& c;
  double lambda;
  double mu;
  double value(const Vector& x) {
    const double fv = f.value(x);
    if (!std::isfinite(fv)) return std::numeric_limits<double>::quiet_NaN();
    const double cv = c.value(x);
    return fv + lambda * cv + 0.5 * mu * cv * cv;
  }
  Vector gradient(const Vector& x) {
    const double cv = c.value(x);
    return f.gradient(x) + (lambda + mu * cv) * c.gradient(x);
  }
};

}  // namespace detail

/// Called after every accepted iterate (and once for the starting point) with
/// the record appended for it.
using IterateCallback = std::function<void(const Vector& x, const IterationRecord& record)>;

template <DifferentiableObjective F, DifferentiableObjective C, InnerProduct M>
AugmentedLagrangianResult augmented_lagrangian_solve(F& f, C& c, const M& metric, Vector x,
                                                     const AugmentedLagrangianOptions& opts = {},
                                                     const IterateCallback& on_iterate = nullptr) {
  AugmentedLagrangianResult res;
  res.lambda = opts.lambda0;
  res.mu = opts.mu0;
  double omega = opts.omega0, eta = opts.eta0;
  double radius = opts.trust_region.initial_radius;

  auto record = [&](int outer, int inner, const Vector& xi, double grad_norm, double step_norm) {
    IterationRecord r;
    r.outer_iter = outer;
    r.inner_iter = inner;
    r.objective = f.value(xi);
    r.constraint = c.value(xi);
    r.penalty = 0.0;
    r.multiplier = res.lambda;
    r.tr_radius = radius;
    r.step_norm = step_norm;
    r.grad_norm = grad_norm;
    r.min_det_ratio = 1.0;
    if constexpr (Annotating<F>) f.annotate(xi, r);
    res.record.push_back(r);
    if (on_iterate) on_iterate(xi, r);
  };

  {
    detail::AugmentedModel<F, C> model{f, c, res.lambda, res.mu};
    const Vector g = model.gradient(x);
    record(0, 0, x, std::sqrt(std::max(g.dot(metric.solve(g)), 0.0)), 0.0);
  }

  for (int k = 0; k < opts.max_outer; ++k) {
    res.outer_iterations = k + 1;
    // a radius carried over can already sit below step_min, which would end
    // every later subproblem before its first trial step
    radius = opts.trust_region.initial_radius;
    detail::AugmentedModel<F, C> model{f, c, res.lambda, res.mu};
    const auto inner = inner_solve(model, metric, x, omega, radius, opts.trust_region, [&](const InnerStep& s) {
      record(k, s.iteration, s.x, s.grad_norm, s.step_norm);
      res.record.back().tr_radius = s.radius;
    });
    x = inner.x;
    const double cv = c.value(x);
    if (std::abs(cv) <= eta) {
      res.lambda += res.mu * cv;
      omega = std::max(0.5 * omega, opts.omega_star);
      eta = std::max(0.5 * eta, opts.eta_star);
    } else {
      res.mu *= 10.0;
    }
    const Vector gl = f.gradient(x) + res.lambda * c.gradient(x);
    const double lagrangian_grad = std::sqrt(std::max(gl.dot(metric.solve(gl)), 0.0));
    if (std::abs(cv) <= opts.eta_star && lagrangian_grad <= opts.omega_star) {
      res.reason = OuterTermination::Converged;
      break;
    }
    if (inner.reason == Termination::StepTooSmall && inner.iterations == 0 && std::abs(cv) <= eta) {
      res.reason = OuterTermination::Stalled;
      break;
    }
    res.reason = OuterTermination::MaxOuter;
  }
  res.x = std::move(x);
  return res;
}

}  // namespace shapeopt
