#pragma once

// Shared fixtures for the unit tests and the acceptance runner: small random
// conditional problems and an independent first-order oracle for them.

#include <Eigen/Dense>

#include <memory>
#include <random>
#include <string>

#include "cfg/graph.hpp"

namespace cfg::testing {

inline std::string scene_path(const std::string& name) {
  return std::string(CFG_SOURCE_DIR) + "/scenes/" + name;
}

struct SmallInstance {
  std::unique_ptr<ContactFactorGraph> graph;
  VectorXd q;
};

/// Random static problems with at most 6 force/input variables: a rounded
/// triangle (3 contacts), a disc, or an actuated disc, posed near the ground.
inline SmallInstance random_small_instance(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Scene s;
  s.friction = 0.1 + 1.4 * u(rng);
  s.time_step = 0.02 + 0.08 * u(rng);
  s.environment.push_back({"ground", Shape::half_plane({0.0, 1.0}, 0.0), Pose2{}});
  Body b;
  b.name = "b";
  b.mass = 0.2 + 2.0 * u(rng);
  const int kind = static_cast<int>(3.0 * u(rng));
  double size = 0.1;
  if (kind == 0) {
    b.shapes = {Shape::polygon({{-0.1, -0.06}, {0.1, -0.06}, {0.0, 0.1}}, 0.005)};
  } else {
    size = 0.05 + 0.1 * u(rng);
    b.shapes = {Shape::circle(size)};
    b.actuated = kind == 2;
  }
  b.inertia = detail::default_inertia(b.shapes, b.mass);
  s.bodies.push_back(b);
  if (u(rng) < 0.5) s.perturbations = {};
  SmallInstance inst;
  inst.graph = std::make_unique<ContactFactorGraph>(s, AssemblyTask::Static, 1);
  inst.q = Vec3(0.2 * (u(rng) - 0.5), size * (0.5 + 1.2 * u(rng)), 6.0 * (u(rng) - 0.5));
  return inst;
}

/// Accelerated gradient descent with gradient-based restarts, step 1/L where
/// L bounds the Hessian (every energy Hessian is below the identity).
inline double gradient_oracle(const Linearization& lin, int dim, double tol = 1e-12, long max_iter = 2000000) {
  MatrixXd bound = MatrixXd::Zero(dim, dim);
  for (const auto& f : lin.factors) {
    const MatrixXd gg = f.weight * f.G.transpose() * f.G;
    for (std::size_t a = 0; a < f.x_cols.size(); ++a)
      for (std::size_t b = 0; b < f.x_cols.size(); ++b)
        bound(f.x_cols[a], f.x_cols[b]) += gg(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  }
  const double L = std::max(1e-12, Eigen::SelfAdjointEigenSolver<MatrixXd>(bound).eigenvalues().maxCoeff());
  auto energy = [&](const VectorXd& x) {
    double e = 0.0;
    for (const auto& f : lin.factors) e += f.energy(x);
    return e;
  };
  auto gradient = [&](const VectorXd& x) {
    VectorXd g = VectorXd::Zero(dim);
    for (const auto& f : lin.factors) {
      if (f.x_cols.empty()) continue;
      const auto d = energy_derivatives(f.kind, f.residual(x), f.axis);
      const VectorXd gl = f.weight * f.G.transpose() * d.gradient;
      for (std::size_t a = 0; a < f.x_cols.size(); ++a) g(f.x_cols[a]) += gl(static_cast<Eigen::Index>(a));
    }
    return g;
  };
  VectorXd x = VectorXd::Zero(dim), y = x;
  double t = 1.0;
  for (long it = 0; it < max_iter; ++it) {
    const VectorXd gy = gradient(y);
    if (gy.norm() <= tol) {
      x = y;
      break;
    }
    const VectorXd xn = y - gy / L;
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (gy.dot(xn - x) > 0.0) {
      y = xn;
      t = 1.0;
    } else {
      y = xn + ((t - 1.0) / tn) * (xn - x);
      t = tn;
    }
    x = xn;
  }
  return energy(x);
}

}  // namespace cfg::testing
