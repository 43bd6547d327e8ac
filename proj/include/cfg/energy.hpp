#pragma once

// Energy forms for the three constraint kinds:
//   Equality    r = 0       ->  1/2 |r|^2
//   Inequality  r >= 0      ->  1/2 |min(r, 0)|^2
//   Cone        r in C_n    ->  1/2 dist(r, C_n)^2
// C_n is the self-dual Lorentz cone {x : <n, x> >= |(I - n n^T) x|}. A cone
// residual may stack several 2D blocks that share the same axis.

#include <Eigen/Dense>

#include <cmath>

#include "cfg/errors.hpp"
#include "cfg/geometry.hpp"

namespace cfg {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class ConstraintKind { Equality, Inequality, Cone };

inline const char* to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::Equality: return "equality";
    case ConstraintKind::Inequality: return "inequality";
    case ConstraintKind::Cone: return "cone";
  }
  return "?";
}

class LorentzCone {
 public:
  explicit LorentzCone(const Vec2& axis) {
    const double len = axis.norm();
    if (!(len > 0.0) || !std::isfinite(len)) throw InvalidArgument("cone axis must be non-zero");
    axis_ = axis / len;
  }

  const Vec2& axis() const { return axis_; }

  enum class Region { Interior, Polar, Boundary };

  Region region(const Vec2& x) const {
    const double s = axis_.dot(x), t = std::abs(cross(axis_, x));
    if (t <= s) return Region::Interior;
    if (t <= -s) return Region::Polar;
    return Region::Boundary;
  }

  bool contains(const Vec2& x, double tol = 0.0) const { return distance(x) <= tol; }

  Vec2 project(const Vec2& x) const {
    const double s = axis_.dot(x);
    const Vec2 tangential = x - s * axis_;
    const double t = tangential.norm();
    if (t <= s) return x;
    if (t <= -s) return Vec2::Zero();
    return 0.5 * (s + t) * (axis_ + tangential / t);
  }

  double distance(const Vec2& x) const { return (x - project(x)).norm(); }

  /// I - dProj/dx, with the interior/polar side chosen on the boundary sets.
  Mat2 distance_hessian(const Vec2& x) const {
    switch (region(x)) {
      case Region::Interior: return Mat2::Zero();
      case Region::Polar: return Mat2::Identity();
      case Region::Boundary: break;
    }
    const double s = axis_.dot(x);
    const Vec2 w = (x - s * axis_).normalized();
    const Vec2 u = (axis_ - w) / std::sqrt(2.0);
    return u * u.transpose();
  }

  /// Gradient of 1/2 dist(x, C_n)^2 with respect to the axis n (tangential
  /// part is the meaningful one; n is constrained to the unit circle).
  Vec2 axis_gradient(const Vec2& x) const {
    if (region(x) != Region::Boundary) return Vec2::Zero();
    const double s = axis_.dot(x);
    const double t = std::abs(cross(axis_, x));
    return -((t * t - s * s) / (2.0 * t)) * x;
  }

 private:
  Vec2 axis_;
};

inline void check_cone_residual(const VectorXd& r) {
  if (r.size() % 2 != 0) throw InvalidArgument("cone residual must stack 2D blocks");
}

inline double energy(ConstraintKind kind, const VectorXd& r, const Vec2& axis = Vec2::UnitY()) {
  switch (kind) {
    case ConstraintKind::Equality: return 0.5 * r.squaredNorm();
    case ConstraintKind::Inequality: return 0.5 * r.cwiseMin(0.0).squaredNorm();
    case ConstraintKind::Cone: break;
  }
  check_cone_residual(r);
  const LorentzCone cone(axis);
  double e = 0.0;
  for (Eigen::Index i = 0; i < r.size(); i += 2) {
    const Vec2 x = r.segment<2>(i);
    e += 0.5 * (x - cone.project(x)).squaredNorm();
  }
  return e;
}

struct EnergyDerivatives {
  VectorXd gradient;
  MatrixXd hessian;  // Gauss-Newton (generalised) Hessian, symmetric PSD
};

inline EnergyDerivatives energy_derivatives(ConstraintKind kind, const VectorXd& r,
                                            const Vec2& axis = Vec2::UnitY()) {
  const auto m = r.size();
  EnergyDerivatives d{VectorXd::Zero(m), MatrixXd::Zero(m, m)};
  switch (kind) {
    case ConstraintKind::Equality:
      d.gradient = r;
      d.hessian.setIdentity();
      return d;
    case ConstraintKind::Inequality:
      for (Eigen::Index i = 0; i < m; ++i) {
        if (r(i) < 0.0) {
          d.gradient(i) = r(i);
          d.hessian(i, i) = 1.0;
        }
      }
      return d;
    case ConstraintKind::Cone: break;
  }
  check_cone_residual(r);
  const LorentzCone cone(axis);
  for (Eigen::Index i = 0; i < m; i += 2) {
    const Vec2 x = r.segment<2>(i);
    d.gradient.segment<2>(i) = x - cone.project(x);
    d.hessian.block<2, 2>(i, i) = cone.distance_hessian(x);
  }
  return d;
}

/// d energy / d axis for a (stacked) cone residual at fixed r.
inline Vec2 cone_energy_axis_gradient(const VectorXd& r, const Vec2& axis) {
  check_cone_residual(r);
  const LorentzCone cone(axis);
  Vec2 g = Vec2::Zero();
  for (Eigen::Index i = 0; i < r.size(); i += 2) g += cone.axis_gradient(r.segment<2>(i));
  return g;
}

}  // namespace cfg
