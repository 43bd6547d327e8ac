#pragma once

// Physical validation of solutions and the pivot scenario. A pose counts as
// stable when the static problem (nominal load plus every perturbation
// wrench) is solvable with zero residual and a short quasi-static relaxation
// from it does not drift.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cfg/outer.hpp"

namespace cfg {

enum class Verdict { Stable, Unstable, Inconclusive };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Stable: return "stable";
    case Verdict::Unstable: return "unstable";
    case Verdict::Inconclusive: return "inconclusive";
  }
  return "?";
}

struct FactorResidual {
  FactorLabel label;
  int knot = 0;
  int case_index = 0;
  int contact = -1;
  int body = -1;
  double magnitude = 0.0;  // distance of the residual to its feasible set
};

struct ValidationReport {
  std::vector<FactorResidual> factors;
  double complementarity = 0.0;  // max |g lambda|
  double cone = 0.0;             // max cone distance of the scaled force
  double dynamics = 0.0;         // max equilibrium / quasi-dynamics residual
  double penetration = 0.0;      // max(-g, 0) over non-penetration factors
  double touch = 0.0;            // max |g| over maintained contacts
  double no_slip = 0.0;
  double perp = 0.0;
  double tolerance = 0.0;
  bool residuals_ok = false;
  double drift_position = 0.0;
  double drift_angle = 0.0;
  Verdict verdict = Verdict::Inconclusive;
  std::string message;

  double max_violation() const {
    return std::max({complementarity, cone, dynamics, penetration, touch, no_slip, perp});
  }
};

/// Constraint residuals of (q, x) on a graph. Goal, prior and input-prior
/// factors are objectives and do not enter the verdict.
inline ValidationReport kkt_residuals(const ContactFactorGraph& g, const VectorXd& q, const VectorXd& x, double tol) {
  if (x.size() != g.layout().dim_x) throw InvalidArgument("force vector does not match the layout");
  const auto lin = g.linearize(q, false);
  ValidationReport rep;
  rep.tolerance = tol;
  for (const auto& f : lin.factors) {
    const auto& spec = g.factors()[static_cast<std::size_t>(f.spec)];
    const VectorXd r = f.residual(x);
    const double m = std::sqrt(2.0 * cfg::energy(f.kind, r, f.axis));
    rep.factors.push_back({f.label, spec.knot, spec.case_index, spec.contact, spec.body, m});
    switch (f.label) {
      case FactorLabel::Complementarity: rep.complementarity = std::max(rep.complementarity, m); break;
      case FactorLabel::CoulombCone: rep.cone = std::max(rep.cone, m); break;
      case FactorLabel::QuasiDynamics: rep.dynamics = std::max(rep.dynamics, m); break;
      case FactorLabel::NonPenetration: rep.penetration = std::max(rep.penetration, m); break;
      case FactorLabel::Touch: rep.touch = std::max(rep.touch, m); break;
      case FactorLabel::NoSlip: rep.no_slip = std::max(rep.no_slip, m); break;
      case FactorLabel::CoulombPerp: rep.perp = std::max(rep.perp, m); break;
      default: break;
    }
  }
  rep.residuals_ok = rep.max_violation() < tol;
  rep.verdict = rep.residuals_ok ? Verdict::Stable : Verdict::Unstable;
  return rep;
}

struct ValidationOptions {
  double tol = 1e-6;
  double drift_position = 1e-3;
  double drift_angle = 1e-2;
  int relax_steps = 20;
  InnerOptions inner;
  BfgsOptions relax;  // per relaxation step

  ValidationOptions() {
    relax.tol = 1e-10;
    relax.max_iterations = 100;
  }
  static ValidationOptions from(const SolverSettings::Validation& v) {
    ValidationOptions o;
    o.tol = v.tol;
    o.drift_position = v.drift_position;
    o.drift_angle = v.drift_angle;
    o.relax_steps = v.relax_steps;
    return o;
  }
};

/// One quasi-static step from the poses stored in `scene`: every body starts
/// fixed at its pose and the next configuration minimizes the conditional
/// energy of the free-contact dynamics. Returns the new poses.
inline std::vector<Pose2> relaxation_step(const Scene& scene, const ValidationOptions& opt) {
  Scene s = scene;
  for (auto& b : s.bodies) b.fixed_initial = true;
  s.goals.clear();
  s.priors.clear();
  ContactFactorGraph g(std::move(s), AssemblyTask::Dynamic, 1);
  MapOptions mo;
  mo.bfgs = opt.relax;
  mo.inner = opt.inner;
  const VectorXd q = map_infer(g, g.initial_q(), mo).q;
  std::vector<Pose2> out;
  for (std::size_t b = 0; b < scene.bodies.size(); ++b) out.push_back(g.body_pose(q, static_cast<int>(b), 1));
  return out;
}

/// Stability of the static configuration q (poses of every body, stacked).
inline ValidationReport validate_stable(const Scene& scene, const VectorXd& q, const ValidationOptions& opt = {}) {
  if (!q.allFinite()) throw InvalidArgument("configuration must be finite");
  Scene s = scene;
  s.task = Task::Static;
  ContactFactorGraph g(s, AssemblyTask::Static, 1);
  if (q.size() != g.layout().dim_q) throw InvalidArgument("configuration does not match the static layout");
  ValidationReport rep;
  try {
    const auto sol = solve_conditional(g, q, opt.inner);
    rep = kkt_residuals(g, q, sol.x, opt.tol);
  } catch (const Error& e) {
    rep.tolerance = opt.tol;
    rep.verdict = Verdict::Inconclusive;
    rep.message = std::string("equilibrium re-solve failed: ") + e.what();
    return rep;
  }
  if (!rep.residuals_ok) {
    rep.verdict = Verdict::Unstable;
    rep.message = "equilibrium residuals exceed the tolerance";
    return rep;
  }

  // Quasi-static relaxation from q.
  Scene cur = s;
  for (std::size_t b = 0; b < cur.bodies.size(); ++b) cur.bodies[b].pose = g.body_pose(q, static_cast<int>(b), 0);
  const Scene start = cur;
  for (int step = 0; step < opt.relax_steps; ++step) {
    std::vector<Pose2> next;
    try {
      next = relaxation_step(cur, opt);
    } catch (const Error& e) {
      rep.verdict = Verdict::Inconclusive;
      rep.message = std::string("relaxation failed: ") + e.what();
      return rep;
    }
    for (std::size_t b = 0; b < cur.bodies.size(); ++b) {
      cur.bodies[b].pose = next[b];
      const Pose2& p0 = start.bodies[b].pose;
      rep.drift_position = std::max(rep.drift_position, (cur.bodies[b].pose.position - p0.position).norm());
      rep.drift_angle = std::max(rep.drift_angle, std::abs(cur.bodies[b].pose.angle - p0.angle));
    }
    if (rep.drift_position > opt.drift_position || rep.drift_angle > opt.drift_angle) {
      rep.verdict = Verdict::Unstable;
      rep.message = "relaxation drifts away from the pose";
      return rep;
    }
  }
  rep.verdict = Verdict::Stable;
  return rep;
}

/// Stick-task pivot problem with its sampling initializer.
struct PivotScenario {
  std::unique_ptr<ContactFactorGraph> graph;
  int object = -1;
  int manipulator = -1;
  int pivot_vertex = 0;
  int ground = 0;
  double target_angle = 0.0;

  /// Samples the manipulator contact uniformly over the object's surface
  /// (rejecting points that would put it inside the environment) and rolls
  /// the object about its pivot corner towards the target, carrying the
  /// manipulator along.
  VectorXd initialize(std::mt19937_64& rng) const;

  /// Face of the object nearest the manipulator at knot 0.
  int push_face(const VectorXd& q) const;
};

inline PivotScenario pivot_scenario(const Scene& scene, int horizon, double target_angle) {
  PivotScenario sc;
  for (std::size_t b = 0; b < scene.bodies.size(); ++b) {
    if (scene.bodies[b].actuated) {
      if (sc.manipulator >= 0) throw ModelError("pivot scene needs exactly one manipulator");
      sc.manipulator = static_cast<int>(b);
    } else {
      if (sc.object >= 0) throw ModelError("pivot scene needs exactly one object");
      sc.object = static_cast<int>(b);
    }
  }
  if (sc.manipulator < 0) throw ModelError("pivot scene has no manipulator (actuated body)");
  if (sc.object < 0) throw ModelError("pivot scene has no object");
  const auto& obj = scene.bodies[static_cast<std::size_t>(sc.object)];
  if (obj.shapes.size() != 1 || !obj.shapes[0].is_polygon()) throw ModelError("pivot object must be one polygon");
  const auto& man = scene.bodies[static_cast<std::size_t>(sc.manipulator)];
  if (man.shapes.size() != 1 || !man.shapes[0].is_circle() || !man.translation_only)
    throw ModelError("pivot manipulator must be a translation-only disc");
  sc.ground = -1;
  for (std::size_t e = 0; e < scene.environment.size(); ++e)
    if (scene.environment[e].shape.is_half_plane()) {
      sc.ground = static_cast<int>(e);
      break;
    }
  if (sc.ground < 0) throw ModelError("pivot scene has no ground half-plane");

  Scene s = scene;
  s.task = Task::Stick;
  s.horizon = horizon;
  s.bodies[static_cast<std::size_t>(sc.object)].fixed_initial = true;
  if (s.contacts.empty()) {
    s.contacts.push_back({obj.name, 0, 0, s.environment[static_cast<std::size_t>(sc.ground)].name, 0, std::nullopt,
                          ContactMode::Stick});
    s.contacts.push_back({man.name, 0, -1, obj.name, 0, std::nullopt, ContactMode::Stick});
  }
  for (const auto& c : s.contacts)
    if (c.a == obj.name && c.b == s.environment[static_cast<std::size_t>(sc.ground)].name) sc.pivot_vertex = c.vertex;
  std::erase_if(s.goals, [&](const GoalSpec& g) { return g.body == obj.name && g.angle; });
  GoalSpec goal;
  goal.body = obj.name;
  goal.knot = -1;
  goal.angle = obj.pose.angle + target_angle;
  s.goals.push_back(goal);
  sc.target_angle = target_angle;
  sc.graph = std::make_unique<ContactFactorGraph>(std::move(s), AssemblyTask::Stick, horizon);
  return sc;
}

inline VectorXd PivotScenario::initialize(std::mt19937_64& rng) const {
  const auto& g = *graph;
  const Scene& s = g.scene();
  const auto& obj = s.bodies[static_cast<std::size_t>(object)];
  const Shape& poly = obj.shapes[0];
  const double rf = s.bodies[static_cast<std::size_t>(manipulator)].shapes[0].radius();
  const auto& ground_obj = s.environment[static_cast<std::size_t>(ground)];
  const Vec2 n_ground = ground_obj.pose.rotation() * ground_obj.shape.normal();
  const double ground_offset = ground_obj.shape.offset() + n_ground.dot(ground_obj.pose.position);
  const auto& verts = poly.vertices();
  std::vector<double> cum{0.0};
  for (std::size_t i = 0; i < verts.size(); ++i)
    cum.push_back(cum.back() + (verts[(i + 1) % verts.size()] - verts[i]).norm());
  std::uniform_real_distribution<double> u(0.0, cum.back());

  // Rolls the rounded pivot corner without slip, carrying a finger that
  // touches the surface at c (body frame) with outward normal n.
  const Vec2 v0 = obj.pose.transform(verts[static_cast<std::size_t>(pivot_vertex)]);
  const Vec2 roll_dir = perp(n_ground);
  const int N = g.horizon();
  auto path = [&](const Vec2& c, const Vec2& n, VectorXd* q) {
    bool clear = true;
    for (int k = 0; k <= N; ++k) {
      const double dth = target_angle * k / N;
      const Vec2 vk = v0 + poly.radius() * dth * roll_dir;
      const Mat2 R = rotation(dth);
      Pose2 pk;
      pk.position = vk + R * (obj.pose.position - v0);
      pk.angle = obj.pose.angle + dth;
      Pose2 fk;
      fk.position = vk + R * (obj.pose.transform(c) - v0) + rf * (pk.rotation() * n);
      clear = clear && n_ground.dot(fk.position) - ground_offset - rf > 1e-9;
      if (q) {
        g.set_body_pose(*q, object, k, pk);
        g.set_body_pose(*q, manipulator, k, fk);
      }
    }
    return clear;
  };

  // Contact point and outward normal, uniform over the surface among the
  // locations whose finger path stays clear of the ground.
  for (int attempt = 0; attempt <= 10000; ++attempt) {
    const double t = u(rng);
    const std::size_t e = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), t) - cum.begin() - 1);
    const Vec2 a = verts[e], b = verts[(e + 1) % verts.size()];
    const double w = (t - cum[e]) / (cum[e + 1] - cum[e]);
    const Vec2 n0 = poly.edge_normal(e);
    const Vec2 c0 = a + w * (b - a) + poly.radius() * n0;
    if (!path(c0, n0, nullptr)) continue;
    VectorXd q = g.initial_q();
    path(c0, n0, &q);
    return q;
  }
  throw ModelError("no contact location keeps the manipulator clear of the environment");
}

inline int PivotScenario::push_face(const VectorXd& q) const {
  const auto& g = *graph;
  const Shape& poly = g.scene().bodies[static_cast<std::size_t>(object)].shapes[0];
  const Vec2 p = g.body_pose(q, object, 0).inverse_transform(g.body_pose(q, manipulator, 0).position);
  const auto& v = poly.vertices();
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec2 a = v[i], e = v[(i + 1) % v.size()] - a;
    const double t = std::clamp((p - a).dot(e) / e.squaredNorm(), 0.0, 1.0);
    const double d = (p - a - t * e).norm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace cfg
