#pragma once

// Scene description: bodies, environment, physical parameters, task, goals and
// solver settings, loaded from a strict JSON schema.

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cfg/errors.hpp"
#include "cfg/geometry.hpp"

namespace cfg {

enum class Task { Static, Stick };

inline const char* to_string(Task t) { return t == Task::Static ? "static" : "stick"; }

struct Body {
  std::string name;
  std::vector<Shape> shapes;  // convex parts in the body frame
  double mass = 1.0;
  double inertia = 1.0;  // about the body origin
  Pose2 pose;            // initial pose
  bool translation_only = false;
  bool actuated = false;       // carries a world-frame force input u
  bool fixed_initial = false;  // pose at knot 0 is a constant (stick task)
};

struct EnvironmentObject {
  std::string name;
  Shape shape;
  Pose2 pose;
};

enum class ContactMode { Free, Stick };

/// A user-declared contact pair. Vertex/shape indices select the point source
/// on `a` (a circle ignores `vertex`).
struct ContactSpec {
  std::string a;
  int a_shape = 0;
  int vertex = -1;
  std::string b;
  int b_shape = 0;
  std::optional<double> friction;
  ContactMode mode = ContactMode::Free;
};

struct GoalSpec {
  std::string body;
  int knot = -1;  // negative counts from the end
  std::optional<double> angle;
  std::optional<Vec2> position;
  double weight = 1.0;
};

struct PriorSpec {
  std::string body;
  int knot = 0;
  Vec3 pose = Vec3::Zero();
  double weight = 1.0;
};

struct SamplingRegion {
  Vec2 position_lo = Vec2(-0.1, 0.05);
  Vec2 position_hi = Vec2(0.1, 0.3);
  double angle_lo = -std::numbers::pi;
  double angle_hi = std::numbers::pi;
};

/// Per-method defaults carried by the scene; the CLI can override them.
struct SolverSettings {
  struct Map {
    double tol = 1e-6;
    int max_iters = 200;
  } map;
  struct Svgd {
    int particles = 30;
    int iterations = 300;
    double step = 0.0;  // 0: 0.1 * characteristic length
    double temperature = 1.0;
    double tol = 1e-6;
    double bandwidth = 0.0;  // 0: median heuristic
  } svgd;
  struct Mcmc {
    int walkers = 0;  // 0: 2*dim + 2
    int steps = 200;
    int burn_in = 50;
    double temperature = 1.0;
  } mcmc;
  struct Annealing {
    double t0 = 1.0;
    double decay = 0.995;
    int steps = 2000;
    double scale = 0.0;  // 0: 0.1 * characteristic length
  } sa;
  struct Validation {
    double tol = 1e-6;
    double drift_position = 1e-3;
    double drift_angle = 1e-2;
    int relax_steps = 20;
  } validation;
};

struct Scene {
  std::string name;
  std::vector<Body> bodies;
  std::vector<EnvironmentObject> environment;
  Vec2 gravity = Vec2(0.0, -9.81);
  double friction = 0.5;
  double time_step = 0.05;
  Task task = Task::Static;
  int horizon = 1;
  std::vector<Vec3> perturbations;  // wrenches (fx, fy, torque)
  std::vector<ContactSpec> contacts;
  bool coulomb_perp = false;
  std::vector<GoalSpec> goals;
  std::vector<PriorSpec> priors;
  std::map<std::string, double> weights;  // factor label -> weight override
  SamplingRegion sampling;
  SolverSettings solver;

  int body_index(const std::string& n) const {
    for (std::size_t i = 0; i < bodies.size(); ++i)
      if (bodies[i].name == n) return static_cast<int>(i);
    return -1;
  }
  int environment_index(const std::string& n) const {
    for (std::size_t i = 0; i < environment.size(); ++i)
      if (environment[i].name == n) return static_cast<int>(i);
    return -1;
  }

  double characteristic_length() const {
    double l = 0.0;
    for (const auto& b : bodies)
      for (const auto& s : b.shapes) l = std::max(l, s.bounding_radius());
    return l > 0.0 ? l : 1.0;
  }

  /// Largest gravity impulse over the passive bodies; used to scale dynamics factors.
  double characteristic_impulse() const {
    double s = 0.0;
    for (const auto& b : bodies)
      if (!b.actuated) s = std::max(s, b.mass * gravity.norm() * time_step);
    return s > 0.0 ? s : 1.0;
  }

  /// +-tau about the out-of-plane axis, tau = 0.05 m g L per passive body.
  std::vector<Vec3> default_perturbations() const {
    double tau = 0.0;
    for (const auto& b : bodies)
      if (!b.actuated) {
        double l = 0.0;
        for (const auto& s : b.shapes) l = std::max(l, s.bounding_radius());
        tau = std::max(tau, 0.05 * b.mass * gravity.norm() * l);
      }
    if (tau == 0.0) return {};
    return {Vec3(0.0, 0.0, tau), Vec3(0.0, 0.0, -tau)};
  }
};

namespace detail {

using nlohmann::json;

inline void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path, "expected an object");
}

inline void reject_unknown(const json& j, const std::string& path,
                           const std::set<std::string>& allowed) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw SchemaError(path + "." + it.key(), "unknown key");
}

inline const json& field(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) throw SchemaError(path + "." + key, "missing required key");
  return j.at(key);
}

inline double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw SchemaError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw SchemaError(path, "must be finite");
  return v;
}

inline int integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw SchemaError(path, "expected an integer");
  return j.get<int>();
}

inline bool boolean(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw SchemaError(path, "expected true or false");
  return j.get<bool>();
}

inline std::string string(const json& j, const std::string& path) {
  if (!j.is_string()) throw SchemaError(path, "expected a string");
  return j.get<std::string>();
}

inline Vec2 vec2(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) throw SchemaError(path, "expected [x, y]");
  return {number(j[0], path + "[0]"), number(j[1], path + "[1]")};
}

inline Vec3 vec3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw SchemaError(path, "expected [x, y, angle]");
  return {number(j[0], path + "[0]"), number(j[1], path + "[1]"), number(j[2], path + "[2]")};
}

inline double positive(const json& j, const std::string& path) {
  const double v = number(j, path);
  if (!(v > 0.0)) throw SchemaError(path, "must be > 0");
  return v;
}

inline double non_negative(const json& j, const std::string& path) {
  const double v = number(j, path);
  if (!(v >= 0.0)) throw SchemaError(path, "must be >= 0");
  return v;
}

inline Shape parse_shape(const json& j, const std::string& path, bool allow_half_plane) {
  require_object(j, path);
  const std::string type = string(field(j, path, "type"), path + ".type");
  try {
    if (type == "circle") {
      reject_unknown(j, path, {"type", "radius"});
      return Shape::circle(non_negative(field(j, path, "radius"), path + ".radius"));
    }
    if (type == "polygon") {
      reject_unknown(j, path, {"type", "vertices", "rounding"});
      const auto& vj = field(j, path, "vertices");
      if (!vj.is_array()) throw SchemaError(path + ".vertices", "expected an array");
      std::vector<Vec2> verts;
      for (std::size_t i = 0; i < vj.size(); ++i)
        verts.push_back(vec2(vj[i], path + ".vertices[" + std::to_string(i) + "]"));
      const double r = number(field(j, path, "rounding"), path + ".rounding");
      if (!(r > 0.0))
        throw SchemaError(path + ".rounding", "polygons in contact need a rounding radius > 0");
      return Shape::polygon(std::move(verts), r);
    }
    if (type == "halfplane") {
      if (!allow_half_plane) throw SchemaError(path + ".type", "half-planes are environment-only");
      reject_unknown(j, path, {"type", "normal", "offset"});
      return Shape::half_plane(vec2(field(j, path, "normal"), path + ".normal"),
                               number(field(j, path, "offset"), path + ".offset"));
    }
  } catch (const InvalidArgument& e) {
    throw SchemaError(path, e.what());
  }
  throw SchemaError(path + ".type", "unknown shape type '" + type + "'");
}

/// Second moment of area about the body origin times mass / area.
inline double default_inertia(const std::vector<Shape>& shapes, double mass) {
  double area = 0.0, second = 0.0;
  for (const auto& s : shapes) {
    if (s.is_circle()) {
      const double a = std::numbers::pi * s.radius() * s.radius();
      area += a;
      second += 0.5 * a * s.radius() * s.radius();
    } else if (s.is_polygon()) {
      const auto& v = s.vertices();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const Vec2& p = v[i];
        const Vec2& q = v[(i + 1) % v.size()];
        const double c = cross(p, q);
        area += 0.5 * c;
        second += c * (p.squaredNorm() + p.dot(q) + q.squaredNorm()) / 12.0;
      }
    }
  }
  if (!(area > 0.0)) return mass;
  return mass * second / area;
}

inline void parse_solver(const json& j, const std::string& path, SolverSettings& s) {
  require_object(j, path);
  reject_unknown(j, path, {"map", "svgd", "mcmc", "sa", "validation"});
  if (j.contains("map")) {
    const auto& m = j["map"];
    const std::string p = path + ".map";
    require_object(m, p);
    reject_unknown(m, p, {"tol", "max_iters"});
    if (m.contains("tol")) s.map.tol = positive(m["tol"], p + ".tol");
    if (m.contains("max_iters")) s.map.max_iters = integer(m["max_iters"], p + ".max_iters");
  }
  if (j.contains("svgd")) {
    const auto& m = j["svgd"];
    const std::string p = path + ".svgd";
    require_object(m, p);
    reject_unknown(m, p, {"particles", "iterations", "step", "temperature", "tol", "bandwidth"});
    if (m.contains("particles")) s.svgd.particles = integer(m["particles"], p + ".particles");
    if (m.contains("iterations")) s.svgd.iterations = integer(m["iterations"], p + ".iterations");
    if (m.contains("step")) s.svgd.step = positive(m["step"], p + ".step");
    if (m.contains("temperature")) s.svgd.temperature = positive(m["temperature"], p + ".temperature");
    if (m.contains("tol")) s.svgd.tol = positive(m["tol"], p + ".tol");
    if (m.contains("bandwidth")) s.svgd.bandwidth = positive(m["bandwidth"], p + ".bandwidth");
  }
  if (j.contains("mcmc")) {
    const auto& m = j["mcmc"];
    const std::string p = path + ".mcmc";
    require_object(m, p);
    reject_unknown(m, p, {"walkers", "steps", "burn_in", "temperature"});
    if (m.contains("walkers")) s.mcmc.walkers = integer(m["walkers"], p + ".walkers");
    if (m.contains("steps")) s.mcmc.steps = integer(m["steps"], p + ".steps");
    if (m.contains("burn_in")) s.mcmc.burn_in = integer(m["burn_in"], p + ".burn_in");
    if (m.contains("temperature")) s.mcmc.temperature = positive(m["temperature"], p + ".temperature");
  }
  if (j.contains("sa")) {
    const auto& m = j["sa"];
    const std::string p = path + ".sa";
    require_object(m, p);
    reject_unknown(m, p, {"t0", "decay", "steps", "scale"});
    if (m.contains("t0")) s.sa.t0 = positive(m["t0"], p + ".t0");
    if (m.contains("decay")) s.sa.decay = positive(m["decay"], p + ".decay");
    if (m.contains("steps")) s.sa.steps = integer(m["steps"], p + ".steps");
    if (m.contains("scale")) s.sa.scale = positive(m["scale"], p + ".scale");
  }
  if (j.contains("validation")) {
    const auto& m = j["validation"];
    const std::string p = path + ".validation";
    require_object(m, p);
    reject_unknown(m, p, {"tol", "drift_position", "drift_angle", "relax_steps"});
    if (m.contains("tol")) s.validation.tol = positive(m["tol"], p + ".tol");
    if (m.contains("drift_position"))
      s.validation.drift_position = positive(m["drift_position"], p + ".drift_position");
    if (m.contains("drift_angle"))
      s.validation.drift_angle = positive(m["drift_angle"], p + ".drift_angle");
    if (m.contains("relax_steps"))
      s.validation.relax_steps = integer(m["relax_steps"], p + ".relax_steps");
  }
}

}  // namespace detail

inline const std::set<std::string>& factor_label_names() {
  static const std::set<std::string> names = {
      "non-penetration", "complementarity", "coulomb-cone", "coulomb-perp", "quasi-dynamics",
      "touch", "no-slip", "goal", "input-prior", "pose-prior"};
  return names;
}

inline Scene parse_scene(const nlohmann::json& j) {
  using namespace detail;
  const std::string root = "scene";
  require_object(j, root);
  reject_unknown(j, root,
                 {"name", "bodies", "environment", "gravity", "friction", "time_step", "factors",
                  "horizon", "perturbations", "contacts", "coulomb_perp", "goals", "priors",
                  "weights", "sampling", "solver"});
  Scene s;
  if (j.contains("name")) s.name = string(j["name"], root + ".name");

  const std::string task = string(field(j, root, "factors"), root + ".factors");
  if (task == "static") s.task = Task::Static;
  else if (task == "stick") s.task = Task::Stick;
  else throw SchemaError(root + ".factors", "expected \"static\" or \"stick\"");

  if (j.contains("gravity")) s.gravity = vec2(j["gravity"], root + ".gravity");
  if (j.contains("friction")) s.friction = non_negative(j["friction"], root + ".friction");
  if (j.contains("time_step")) s.time_step = positive(j["time_step"], root + ".time_step");
  if (j.contains("horizon")) {
    s.horizon = integer(j["horizon"], root + ".horizon");
    if (s.horizon < 1) throw SchemaError(root + ".horizon", "must be >= 1");
  }
  if (j.contains("coulomb_perp")) s.coulomb_perp = boolean(j["coulomb_perp"], root + ".coulomb_perp");

  const auto& bj = field(j, root, "bodies");
  if (!bj.is_array()) throw SchemaError(root + ".bodies", "expected an array");
  std::set<std::string> names;
  for (std::size_t i = 0; i < bj.size(); ++i) {
    const std::string p = root + ".bodies[" + std::to_string(i) + "]";
    const auto& b = bj[i];
    require_object(b, p);
    reject_unknown(b, p,
                   {"name", "shape", "shapes", "mass", "inertia", "pose", "translation_only",
                    "actuated", "fixed_initial"});
    Body body;
    body.name = string(field(b, p, "name"), p + ".name");
    if (!names.insert(body.name).second) throw SchemaError(p + ".name", "duplicate name");
    if (b.contains("shape") == b.contains("shapes"))
      throw SchemaError(p, "exactly one of \"shape\" or \"shapes\" is required");
    if (b.contains("shape")) {
      body.shapes.push_back(parse_shape(b["shape"], p + ".shape", false));
    } else {
      const auto& sj = b["shapes"];
      if (!sj.is_array() || sj.empty()) throw SchemaError(p + ".shapes", "expected a non-empty array");
      for (std::size_t k = 0; k < sj.size(); ++k)
        body.shapes.push_back(parse_shape(sj[k], p + ".shapes[" + std::to_string(k) + "]", false));
    }
    body.mass = positive(field(b, p, "mass"), p + ".mass");
    body.inertia = b.contains("inertia") ? positive(b["inertia"], p + ".inertia")
                                         : default_inertia(body.shapes, body.mass);
    if (b.contains("pose")) body.pose = Pose2::from(vec3(b["pose"], p + ".pose"));
    if (b.contains("translation_only"))
      body.translation_only = boolean(b["translation_only"], p + ".translation_only");
    if (b.contains("actuated")) body.actuated = boolean(b["actuated"], p + ".actuated");
    if (b.contains("fixed_initial"))
      body.fixed_initial = boolean(b["fixed_initial"], p + ".fixed_initial");
    s.bodies.push_back(std::move(body));
  }
  if (s.bodies.empty()) throw SchemaError(root + ".bodies", "scene has no bodies");

  if (j.contains("environment")) {
    const auto& ej = j["environment"];
    if (!ej.is_array()) throw SchemaError(root + ".environment", "expected an array");
    for (std::size_t i = 0; i < ej.size(); ++i) {
      const std::string p = root + ".environment[" + std::to_string(i) + "]";
      const auto& e = ej[i];
      require_object(e, p);
      reject_unknown(e, p, {"name", "shape", "pose"});
      const std::string name = string(field(e, p, "name"), p + ".name");
      if (!names.insert(name).second) throw SchemaError(p + ".name", "duplicate name");
      EnvironmentObject obj{name, parse_shape(field(e, p, "shape"), p + ".shape", true), Pose2{}};
      if (e.contains("pose")) obj.pose = Pose2::from(vec3(e["pose"], p + ".pose"));
      s.environment.push_back(std::move(obj));
    }
  }

  if (j.contains("perturbations")) {
    const auto& pj = j["perturbations"];
    if (!pj.is_array()) throw SchemaError(root + ".perturbations", "expected an array");
    for (std::size_t i = 0; i < pj.size(); ++i)
      s.perturbations.push_back(vec3(pj[i], root + ".perturbations[" + std::to_string(i) + "]"));
  } else if (s.task == Task::Static) {
    s.perturbations = s.default_perturbations();
  }

  auto known = [&](const std::string& n) { return s.body_index(n) >= 0 || s.environment_index(n) >= 0; };

  if (j.contains("contacts")) {
    const auto& cj = j["contacts"];
    if (!cj.is_array()) throw SchemaError(root + ".contacts", "expected an array");
    for (std::size_t i = 0; i < cj.size(); ++i) {
      const std::string p = root + ".contacts[" + std::to_string(i) + "]";
      const auto& c = cj[i];
      require_object(c, p);
      reject_unknown(c, p, {"a", "a_shape", "vertex", "b", "b_shape", "friction", "mode"});
      ContactSpec spec;
      spec.a = string(field(c, p, "a"), p + ".a");
      spec.b = string(field(c, p, "b"), p + ".b");
      if (s.body_index(spec.a) < 0) throw SchemaError(p + ".a", "unknown body '" + spec.a + "'");
      if (!known(spec.b)) throw SchemaError(p + ".b", "unknown body '" + spec.b + "'");
      if (spec.a == spec.b) throw SchemaError(p, "a contact needs two distinct bodies");
      if (c.contains("a_shape")) spec.a_shape = integer(c["a_shape"], p + ".a_shape");
      if (c.contains("b_shape")) spec.b_shape = integer(c["b_shape"], p + ".b_shape");
      if (c.contains("vertex")) spec.vertex = integer(c["vertex"], p + ".vertex");
      if (c.contains("friction")) spec.friction = non_negative(c["friction"], p + ".friction");
      if (c.contains("mode")) {
        const std::string m = string(c["mode"], p + ".mode");
        if (m == "stick") spec.mode = ContactMode::Stick;
        else if (m == "free") spec.mode = ContactMode::Free;
        else throw SchemaError(p + ".mode", "expected \"free\" or \"stick\"");
      }
      const auto& a = s.bodies[static_cast<std::size_t>(s.body_index(spec.a))];
      if (spec.a_shape < 0 || static_cast<std::size_t>(spec.a_shape) >= a.shapes.size())
        throw SchemaError(p + ".a_shape", "shape index out of range");
      const auto& sa = a.shapes[static_cast<std::size_t>(spec.a_shape)];
      if (sa.is_polygon() &&
          (spec.vertex < 0 || static_cast<std::size_t>(spec.vertex) >= sa.vertices().size()))
        throw SchemaError(p + ".vertex", "polygon contacts need a valid vertex index");
      const int bi = s.body_index(spec.b);
      const std::size_t nb = bi >= 0 ? s.bodies[static_cast<std::size_t>(bi)].shapes.size() : 1;
      if (spec.b_shape < 0 || static_cast<std::size_t>(spec.b_shape) >= nb)
        throw SchemaError(p + ".b_shape", "shape index out of range");
      s.contacts.push_back(spec);
    }
  }

  if (j.contains("goals")) {
    const auto& gj = j["goals"];
    if (!gj.is_array()) throw SchemaError(root + ".goals", "expected an array");
    for (std::size_t i = 0; i < gj.size(); ++i) {
      const std::string p = root + ".goals[" + std::to_string(i) + "]";
      const auto& g = gj[i];
      require_object(g, p);
      reject_unknown(g, p, {"body", "knot", "angle", "position", "weight"});
      GoalSpec goal;
      goal.body = string(field(g, p, "body"), p + ".body");
      if (s.body_index(goal.body) < 0) throw SchemaError(p + ".body", "unknown body");
      if (g.contains("knot")) goal.knot = integer(g["knot"], p + ".knot");
      if (g.contains("angle")) goal.angle = number(g["angle"], p + ".angle");
      if (g.contains("position")) goal.position = vec2(g["position"], p + ".position");
      if (g.contains("weight")) goal.weight = positive(g["weight"], p + ".weight");
      if (!goal.angle && !goal.position) throw SchemaError(p, "goal needs an angle or a position");
      s.goals.push_back(goal);
    }
  }

  if (j.contains("priors")) {
    const auto& pj = j["priors"];
    if (!pj.is_array()) throw SchemaError(root + ".priors", "expected an array");
    for (std::size_t i = 0; i < pj.size(); ++i) {
      const std::string p = root + ".priors[" + std::to_string(i) + "]";
      const auto& g = pj[i];
      require_object(g, p);
      reject_unknown(g, p, {"body", "knot", "pose", "weight"});
      PriorSpec prior;
      prior.body = string(field(g, p, "body"), p + ".body");
      if (s.body_index(prior.body) < 0) throw SchemaError(p + ".body", "unknown body");
      if (g.contains("knot")) prior.knot = integer(g["knot"], p + ".knot");
      prior.pose = vec3(field(g, p, "pose"), p + ".pose");
      if (g.contains("weight")) prior.weight = positive(g["weight"], p + ".weight");
      s.priors.push_back(prior);
    }
  }

  if (j.contains("weights")) {
    const auto& wj = j["weights"];
    const std::string p = root + ".weights";
    require_object(wj, p);
    for (auto it = wj.begin(); it != wj.end(); ++it) {
      if (!factor_label_names().count(it.key()))
        throw SchemaError(p + "." + it.key(), "unknown factor label");
      s.weights[it.key()] = non_negative(it.value(), p + "." + it.key());
    }
  }

  if (j.contains("sampling")) {
    const auto& sj = j["sampling"];
    const std::string p = root + ".sampling";
    require_object(sj, p);
    reject_unknown(sj, p, {"position_lo", "position_hi", "angle_range"});
    if (sj.contains("position_lo")) s.sampling.position_lo = vec2(sj["position_lo"], p + ".position_lo");
    if (sj.contains("position_hi")) s.sampling.position_hi = vec2(sj["position_hi"], p + ".position_hi");
    if (sj.contains("angle_range")) {
      const Vec2 r = vec2(sj["angle_range"], p + ".angle_range");
      s.sampling.angle_lo = r.x();
      s.sampling.angle_hi = r.y();
    }
  }

  if (j.contains("solver")) parse_solver(j["solver"], root + ".solver", s.solver);
  return s;
}

inline Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("", "cannot open scene file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("", "parse error in '" + path + "': " + e.what());
  }
  return parse_scene(j);
}

}  // namespace cfg
