#pragma once

// Conditional MAP over the force/input variables x = (u, lambda) at a fixed
// configuration q. The energy is convex in x, so Newton's method with the
// Gauss-Newton Hessian and an exact linesearch finds the global minimizer.
// The gradient of the optimal value V(q) follows from the envelope theorem
// and only needs partial derivatives of the factors in q.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "cfg/errors.hpp"
#include "cfg/graph.hpp"

namespace cfg {

struct LinesearchOptions {
  int max_expansions = 60;
  int max_iterations = 200;
  double tolerance = 1e-12;  // on |phi'(alpha)| relative to |phi'(0)|
  double alpha_max = 1e6;
};

struct InnerOptions {
  double tolerance = 1e-10;
  int max_iterations = 100;
  double hessian_regularization = 1e-10;
  LinesearchOptions linesearch;
  bool dense_factorization = false;  // ignore the elimination plan (reference path)
};

struct LineSample {
  double value = 0.0;
  double slope = 0.0;
  double curvature = 0.0;
};

/// Minimizes a convex 1D function given value/slope/curvature along a descent
/// direction: doubling bracket on the slope, then safeguarded Newton.
inline double exact_linesearch(const std::function<LineSample(double)>& phi,
                               const LinesearchOptions& opt = {}) {
  const double d0 = phi(0.0).slope;
  if (!(d0 < 0.0)) throw InvalidArgument("linesearch direction is not a descent direction");
  const double tol = opt.tolerance * std::abs(d0);
  double lo = 0.0, hi = std::min(1.0, opt.alpha_max);
  LineSample at_hi = phi(hi);
  for (int e = 0; at_hi.slope < 0.0; ++e) {
    if (hi >= opt.alpha_max) return opt.alpha_max;
    if (e >= opt.max_expansions) return hi;
    lo = hi;
    hi = std::min(2.0 * hi, opt.alpha_max);
    at_hi = phi(hi);
  }
  if (std::abs(at_hi.slope) <= tol) return hi;

  double alpha = 0.5 * (lo + hi);
  double best = hi, best_slope = std::abs(at_hi.slope);
  for (int it = 0; it < opt.max_iterations; ++it) {
    const LineSample s = phi(alpha);
    if (std::abs(s.slope) < best_slope) {
      best = alpha;
      best_slope = std::abs(s.slope);
    }
    if (std::abs(s.slope) <= tol) return alpha;
    if (s.slope < 0.0) lo = alpha;
    else hi = alpha;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) break;
    double next = s.curvature > 0.0 ? alpha - s.slope / s.curvature : lo - 1.0;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    alpha = next;
  }
  return best;
}

struct InnerIterate {
  int iteration = 0;
  double energy = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
};

struct InnerSolution {
  VectorXd x;  // (u*, lambda*) stacked per the layout
  double optimal_energy = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  VectorXd score;  // grad_q log p(q) = -dV/dq
  std::vector<InnerIterate> trace;
};

namespace detail {

/// Energy, gradient and Gauss-Newton blocks of the conditional problem.
class ConditionalProblem {
 public:
  ConditionalProblem(const ContactFactorGraph& g, const Linearization& lin)
      : graph_(g), lin_(lin), dim_(g.layout().dim_x) {}

  int dim() const { return dim_; }

  double energy(const VectorXd& x) const {
    double e = 0.0;
    for (const auto& f : lin_.factors) e += f.energy(x);
    return e;
  }

  /// Gradient and per-group (or dense) Hessian blocks at x.
  /// `scale` collects |w| |G|^T |dE/dr| per column, which bounds the
  /// rounding error of the summed gradient.
  void derivatives(const VectorXd& x, bool dense, VectorXd& grad, std::vector<MatrixXd>& blocks,
                   VectorXd* scale = nullptr) const {
    const auto& plan = graph_.plan();
    grad = VectorXd::Zero(dim_);
    if (scale) *scale = VectorXd::Zero(dim_);
    if (dense) blocks.assign(1, MatrixXd::Zero(dim_, dim_));
    else {
      blocks.resize(plan.groups.size());
      for (std::size_t i = 0; i < plan.groups.size(); ++i) {
        const auto n = static_cast<Eigen::Index>(plan.groups[i].size());
        blocks[i] = MatrixXd::Zero(n, n);
      }
    }
    for (const auto& f : lin_.factors) {
      if (f.x_cols.empty()) continue;
      const auto d = energy_derivatives(f.kind, f.residual(x), f.axis);
      const VectorXd gl = f.weight * (f.G.transpose() * d.gradient);
      if (scale) {
        const VectorXd sl = std::abs(f.weight) * (f.G.cwiseAbs().transpose() * d.gradient.cwiseAbs());
        for (std::size_t a = 0; a < f.x_cols.size(); ++a) (*scale)(f.x_cols[a]) += sl(static_cast<Eigen::Index>(a));
      }
      const MatrixXd hl = f.weight * (f.G.transpose() * d.hessian * f.G);
      MatrixXd& H = dense ? blocks[0]
                          : blocks[static_cast<std::size_t>(plan.group_of[static_cast<std::size_t>(f.x_cols[0])])];
      for (std::size_t a = 0; a < f.x_cols.size(); ++a) {
        const int ca = f.x_cols[a];
        grad(ca) += gl(static_cast<Eigen::Index>(a));
        const int ia = dense ? ca : plan.local_index[static_cast<std::size_t>(ca)];
        for (std::size_t b = 0; b < f.x_cols.size(); ++b) {
          const int cb = f.x_cols[b];
          const int ib = dense ? cb : plan.local_index[static_cast<std::size_t>(cb)];
          H(ia, ib) += hl(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        }
      }
    }
  }

  /// Solves (H + eps I) dx = -grad group by group.
  VectorXd newton_direction(const VectorXd& grad, const std::vector<MatrixXd>& blocks, bool dense,
                            double eps) const {
    VectorXd dx = VectorXd::Zero(dim_);
    auto solve = [&](MatrixXd H, const VectorXd& rhs) -> VectorXd {
      H.diagonal().array() += eps;
      Eigen::LLT<MatrixXd> llt(H);
      if (llt.info() == Eigen::Success) return llt.solve(rhs);
      return H.ldlt().solve(rhs);
    };
    if (dense) return solve(blocks[0], -grad);
    const auto& plan = graph_.plan();
    for (std::size_t i = 0; i < plan.groups.size(); ++i) {
      const auto& vars = plan.groups[i];
      VectorXd rhs(static_cast<Eigen::Index>(vars.size()));
      for (std::size_t j = 0; j < vars.size(); ++j) rhs(static_cast<Eigen::Index>(j)) = -grad(vars[j]);
      const VectorXd sol = solve(blocks[i], rhs);
      for (std::size_t j = 0; j < vars.size(); ++j) dx(vars[j]) = sol(static_cast<Eigen::Index>(j));
    }
    return dx;
  }

  /// phi(alpha) = E(x + alpha dx) with slope and curvature.
  std::function<LineSample(double)> line(const VectorXd& x, const VectorXd& dx) const {
    struct Term {
      const AffineFactor* f;
      VectorXd r0, d;
    };
    auto terms = std::make_shared<std::vector<Term>>();
    for (const auto& f : lin_.factors) {
      if (f.x_cols.empty()) continue;
      VectorXd d = VectorXd::Zero(f.rows());
      for (std::size_t j = 0; j < f.x_cols.size(); ++j) d += f.G.col(static_cast<Eigen::Index>(j)) * dx(f.x_cols[j]);
      terms->push_back({&f, f.residual(x), std::move(d)});
    }
    return [terms](double alpha) {
      LineSample s;
      for (const auto& t : *terms) {
        const VectorXd r = t.r0 + alpha * t.d;
        const auto d = energy_derivatives(t.f->kind, r, t.f->axis);
        s.value += t.f->weight * cfg::energy(t.f->kind, r, t.f->axis);
        s.slope += t.f->weight * d.gradient.dot(t.d);
        s.curvature += t.f->weight * t.d.dot(d.hessian * t.d);
      }
      return s;
    };
  }

 private:
  const ContactFactorGraph& graph_;
  const Linearization& lin_;
  int dim_;
};

}  // namespace detail

/// Score grad_q log p(q) = -sum_i df_i/dq at the conditional optimum x*.
inline VectorXd envelope_score(const ContactFactorGraph& g, const Linearization& lin, const VectorXd& x_star) {
  return -energy_q_gradient(lin, x_star, g.layout().dim_q);
}

inline VectorXd envelope_score(const ContactFactorGraph& g, const VectorXd& q, const InnerSolution& inner) {
  return envelope_score(g, g.linearize(q, true), inner.x);
}

/// Solves the conditional problem at q from a linearization. `warm` seeds
/// the iteration when it has lower energy than the zero point.
inline InnerSolution solve_conditional(const ContactFactorGraph& g, const Linearization& lin,
                                       const InnerOptions& opt = {}, const VectorXd* warm = nullptr) {
  if (!(opt.tolerance > 0.0) || opt.max_iterations <= 0 || !(opt.hessian_regularization > 0.0))
    throw InvalidArgument("inner solver options must be positive");
  const detail::ConditionalProblem prob(g, lin);
  InnerSolution sol;
  VectorXd x = VectorXd::Zero(prob.dim());
  double e = prob.energy(x);
  if (warm && warm->size() == prob.dim() && warm->allFinite()) {
    const double ew = prob.energy(*warm);
    if (ew < e) {
      x = *warm;
      e = ew;
    }
  }
  VectorXd grad, scale;
  std::vector<MatrixXd> blocks;
  // Gradients below the rounding floor of their own summation are as good as zero.
  const double floor_factor = 64.0 * std::numeric_limits<double>::epsilon();
  for (int it = 0;; ++it) {
    prob.derivatives(x, opt.dense_factorization, grad, blocks, &scale);
    const double gn = grad.norm();
    sol.trace.push_back({it, e, gn, 0.0});
    if (gn <= std::max(opt.tolerance, floor_factor * scale.norm())) {
      sol.iterations = it;
      sol.grad_norm = gn;
      break;
    }
    if (it >= opt.max_iterations)
      throw NonConvergence("inner solver did not reach the gradient tolerance", it, gn);
    VectorXd dx = prob.newton_direction(grad, blocks, opt.dense_factorization, opt.hessian_regularization);
    if (!(grad.dot(dx) < 0.0)) dx = -grad;
    const auto phi = prob.line(x, dx);
    const double alpha = exact_linesearch(phi, opt.linesearch);
    const VectorXd next = x + alpha * dx;
    const double en = prob.energy(next);
    if (en > e + floor_factor * std::abs(e))
      throw NonConvergence("inner linesearch failed to decrease the energy", it, gn);
    x = next;
    e = en;
    sol.trace.back().step = alpha;
  }
  sol.x = std::move(x);
  sol.optimal_energy = e;
  sol.score = envelope_score(g, lin, sol.x);
  return sol;
}

inline InnerSolution solve_conditional(const ContactFactorGraph& g, const VectorXd& q, const InnerOptions& opt = {},
                                       const VectorXd* warm = nullptr) {
  return solve_conditional(g, g.linearize(q, true), opt, warm);
}

/// V(q) = min_x E(q, x).
inline double conditional_energy(const ContactFactorGraph& g, const VectorXd& q, const InnerOptions& opt = {},
                                 const VectorXd* warm = nullptr) {
  return solve_conditional(g, g.linearize(q, false), opt, warm).optimal_energy;
}

}  // namespace cfg
