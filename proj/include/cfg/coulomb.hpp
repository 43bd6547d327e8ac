#pragma once

// Coulomb friction written as a cone complementarity condition,
//   C_n  contains  mu*lambda_n + lambda_t  perp  beta*n + v_t  in C_n,
// with beta eliminated as |v_t|, plus the maximal-dissipation KKT form used
// as an independent check.

#include <cmath>

#include "cfg/energy.hpp"
#include "cfg/errors.hpp"
#include "cfg/geometry.hpp"

namespace cfg {

struct CoulombResiduals {
  Vec2 force_cone = Vec2::Zero();     // must lie in C_n
  Vec2 velocity_cone = Vec2::Zero();  // lies in C_n by construction
  double perp = 0.0;                  // must vanish

  double energy(const Vec2& normal) const {
    return cfg::energy(ConstraintKind::Cone, force_cone, normal) +
           cfg::energy(ConstraintKind::Cone, velocity_cone, normal) + 0.5 * perp * perp;
  }
};

/// mu*lambda_n + lambda_t = (I + (mu - 1) n n^T) lambda.
inline Mat2 friction_scaling(const Vec2& normal, double mu) {
  return Mat2::Identity() + (mu - 1.0) * normal * normal.transpose();
}

inline Vec2 tangential(const Vec2& normal, const Vec2& v) { return v - normal.dot(v) * normal; }

inline CoulombResiduals coulomb_residuals(const Vec2& normal, double mu, const Vec2& lambda,
                                          const Vec2& v_t) {
  if (!(mu >= 0.0)) throw InvalidArgument("friction coefficient must be >= 0");
  CoulombResiduals r;
  const Vec2 vt = tangential(normal, v_t);
  const double beta = vt.norm();
  r.force_cone = friction_scaling(normal, mu) * lambda;
  r.velocity_cone = beta * normal + vt;
  r.perp = r.force_cone.dot(r.velocity_cone);
  return r;
}

/// Maximal-dissipation KKT conditions:
///   0 <= |v_t|  perp  mu*lambda_n - |lambda_t| >= 0,
///   |v_t| lambda_t + mu*lambda_n v_t = 0.
inline bool check_coulomb_kkt(const Vec2& lambda, const Vec2& v_t, double mu, const Vec2& normal,
                              double tol) {
  if (!(tol > 0.0)) throw InvalidArgument("tolerance must be positive");
  const Vec2 n = normal.normalized();
  const double lambda_n = n.dot(lambda);
  const Vec2 lambda_t = tangential(n, lambda);
  const Vec2 vt = tangential(n, v_t);
  const double speed = vt.norm();
  const double slack = mu * lambda_n - lambda_t.norm();
  if (slack < -tol) return false;
  if (std::abs(speed * slack) > tol) return false;
  return (speed * lambda_t + mu * lambda_n * vt).norm() <= tol;
}

}  // namespace cfg
