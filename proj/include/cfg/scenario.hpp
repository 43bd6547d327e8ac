#pragma once

// Inference problems built from scene files, with their seeded initializers.

#include <memory>
#include <optional>
#include <random>

#include "cfg/validate.hpp"

namespace cfg {

struct Problem {
  std::unique_ptr<ContactFactorGraph> own;
  std::optional<PivotScenario> pivot;

  const ContactFactorGraph& graph() const { return pivot ? *pivot->graph : *own; }

  /// Static scenes: every pose uniform over the sampling region. Pivot scenes:
  /// the pivot initializer. Other stick scenes: the scene's poses.
  VectorXd initialize(std::mt19937_64& rng) const {
    if (pivot) return pivot->initialize(rng);
    const ContactFactorGraph& g = graph();
    if (g.task() != AssemblyTask::Static) return g.initial_q();
    const SamplingRegion& r = g.scene().sampling;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    VectorXd q = g.initial_q();
    for (std::size_t b = 0; b < g.scene().bodies.size(); ++b) {
      Pose2 p;
      p.position.x() = r.position_lo.x() + (r.position_hi.x() - r.position_lo.x()) * u(rng);
      p.position.y() = r.position_lo.y() + (r.position_hi.y() - r.position_lo.y()) * u(rng);
      p.angle = r.angle_lo + (r.angle_hi - r.angle_lo) * u(rng);
      g.set_body_pose(q, static_cast<int>(b), 0, p);
    }
    return q;
  }
};

namespace detail {

inline bool is_pivot_scene(const Scene& s) {
  int actuated = 0, passive = 0;
  for (const auto& b : s.bodies) (b.actuated ? actuated : passive) += 1;
  if (actuated != 1 || passive != 1) return false;
  for (const auto& b : s.bodies) {
    if (b.shapes.size() != 1) return false;
    if (b.actuated && !(b.shapes[0].is_circle() && b.translation_only)) return false;
    if (!b.actuated && !b.shapes[0].is_polygon()) return false;
  }
  for (const auto& e : s.environment)
    if (e.shape.is_half_plane()) return true;
  return false;
}

}  // namespace detail

inline Problem make_problem(const Scene& scene) {
  Problem p;
  if (scene.task == Task::Static) {
    p.own = std::make_unique<ContactFactorGraph>(scene, AssemblyTask::Static, 1);
    return p;
  }
  if (detail::is_pivot_scene(scene)) {
    const Body* obj = nullptr;
    for (const auto& b : scene.bodies)
      if (!b.actuated) obj = &b;
    double target = 0.0;
    for (const auto& g : scene.goals)
      if (g.body == obj->name && g.angle) target = *g.angle - obj->pose.angle;
    p.pivot = pivot_scenario(scene, scene.horizon, target);
    return p;
  }
  p.own = std::make_unique<ContactFactorGraph>(scene, AssemblyTask::Stick, scene.horizon);
  return p;
}

}  // namespace cfg
