#pragma once

// Contact factor graph: variable layout for X = (q, u, lambda), contact
// candidates, factor assembly, linearization at a configuration, joint
// energy, and the knot-block elimination plan used by the inner solver.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cfg/errors.hpp"
#include "cfg/factors.hpp"
#include "cfg/geometry.hpp"
#include "cfg/scene.hpp"

namespace cfg {

/// A scene object: a free body or a fixed environment entry.
struct ObjectRef {
  int body = -1;
  int env = -1;
  bool is_body() const { return body >= 0; }
  bool operator==(const ObjectRef&) const = default;
};

/// Point core on `a` (circle centre or polygon vertex) against shape `b_shape` of `b`.
struct Candidate {
  ObjectRef a;
  int a_shape = 0;
  int a_vertex = -1;
  ObjectRef b;
  int b_shape = 0;
  double friction = 0.5;
  ContactMode mode = ContactMode::Free;

  bool same_pair(const Candidate& o) const {
    return a == o.a && a_shape == o.a_shape && a_vertex == o.a_vertex && b == o.b &&
           b_shape == o.b_shape;
  }
};

/// Stacked variables X = (q, x) with x = (u, lambda).
struct Variables {
  VectorXd q;
  VectorXd x;
};

struct VariableLayout {
  int num_knots = 1;
  int num_cases = 1;
  std::vector<int> dynamics_knots;
  std::vector<int> body_dofs;              // 3, or 2 for translation-only bodies
  std::vector<std::vector<int>> q_offset;  // [knot][body]; -1 when the slot is fixed
  int dim_q = 0;
  std::vector<std::vector<std::vector<int>>> u_offset;       // [knot][case][body]; -1 if none
  std::vector<std::vector<std::vector<int>>> lambda_offset;  // [knot][case][contact]; -1 if none
  std::vector<int> x_knot;
  int dim_x = 0;

  /// Global q index of (knot, body, dof) or -1 when not a variable.
  int q_index(int knot, int body, int dof) const {
    if (body < 0) return -1;
    const int o = q_offset.at(static_cast<std::size_t>(knot)).at(static_cast<std::size_t>(body));
    if (o < 0 || dof >= body_dofs[static_cast<std::size_t>(body)]) return -1;
    return o + dof;
  }
  int u_index(int knot, int c, int body) const {
    return u_offset.at(static_cast<std::size_t>(knot)).at(static_cast<std::size_t>(c)).at(static_cast<std::size_t>(body));
  }
  int lambda_index(int knot, int c, int contact) const {
    return lambda_offset.at(static_cast<std::size_t>(knot)).at(static_cast<std::size_t>(c)).at(static_cast<std::size_t>(contact));
  }

  VectorXd pack(const Variables& v) const {
    if (v.q.size() != dim_q || v.x.size() != dim_x) throw InvalidArgument("variables do not match the layout");
    VectorXd out(dim_q + dim_x);
    out << v.q, v.x;
    return out;
  }
  Variables unpack(const VectorXd& flat) const {
    if (flat.size() != dim_q + dim_x) throw InvalidArgument("flat vector does not match the layout");
    return {flat.head(dim_q), flat.tail(dim_x)};
  }
};

/// Knot-block ordering of the (u, lambda) Hessian. Each block holds the
/// variables of one knot, split into groups that no factor couples; groups are
/// factorized independently.
struct EliminationPlan {
  struct Block {
    int knot = 0;
    std::vector<std::vector<int>> groups;
    std::vector<int> ordering() const {
      std::vector<int> o;
      for (const auto& g : groups) o.insert(o.end(), g.begin(), g.end());
      return o;
    }
  };
  std::vector<Block> blocks;
  std::vector<int> group_of;     // x var -> flat group id
  std::vector<int> local_index;  // x var -> position within its group
  std::vector<std::vector<int>> groups;  // flat list of groups

  static EliminationPlan build(int dim_x, const std::vector<std::vector<int>>& factor_cols,
                               const std::vector<int>& x_knot) {
    std::vector<int> parent(static_cast<std::size_t>(dim_x));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int v) {
      while (parent[static_cast<std::size_t>(v)] != v) {
        parent[static_cast<std::size_t>(v)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(v)])];
        v = parent[static_cast<std::size_t>(v)];
      }
      return v;
    };
    for (const auto& cols : factor_cols) {
      for (int c : cols) {
        if (c < 0 || c >= dim_x) throw GraphInconsistency("factor references an x variable outside the layout");
        if (x_knot[static_cast<std::size_t>(c)] != x_knot[static_cast<std::size_t>(cols.front())])
          throw GraphInconsistency("factor couples force/input variables across knots");
        parent[static_cast<std::size_t>(find(c))] = find(cols.front());
      }
    }
    std::map<int, std::vector<int>> components;
    for (int v = 0; v < dim_x; ++v) components[find(v)].push_back(v);
    std::vector<std::vector<int>> comps;
    for (auto& [root, vars] : components) comps.push_back(std::move(vars));
    std::sort(comps.begin(), comps.end(), [&](const auto& l, const auto& r) {
      const int kl = x_knot[static_cast<std::size_t>(l.front())], kr = x_knot[static_cast<std::size_t>(r.front())];
      return kl != kr ? kl < kr : l.front() < r.front();
    });
    EliminationPlan plan;
    plan.group_of.assign(static_cast<std::size_t>(dim_x), -1);
    plan.local_index.assign(static_cast<std::size_t>(dim_x), -1);
    for (auto& comp : comps) {
      const int knot = x_knot[static_cast<std::size_t>(comp.front())];
      if (plan.blocks.empty() || plan.blocks.back().knot != knot) plan.blocks.push_back({knot, {}});
      const int gid = static_cast<int>(plan.groups.size());
      for (std::size_t i = 0; i < comp.size(); ++i) {
        plan.group_of[static_cast<std::size_t>(comp[i])] = gid;
        plan.local_index[static_cast<std::size_t>(comp[i])] = static_cast<int>(i);
      }
      plan.blocks.back().groups.push_back(comp);
      plan.groups.push_back(std::move(comp));
    }
    return plan;
  }
};

/// Contact features at one knot plus the q indices of the Jacobian columns.
struct FeatureEntry {
  FeatureWithJacobians value;
  std::array<int, 6> q_cols{-1, -1, -1, -1, -1, -1};
};

struct Linearization {
  std::vector<AffineFactor> factors;
  std::vector<std::vector<std::optional<FeatureEntry>>> features;  // [knot][contact]
};

/// Internal task used by validation: every candidate is a free contact and the
/// quasi-dynamics connect consecutive knots.
enum class AssemblyTask { Static, Stick, Dynamic };

class ContactFactorGraph {
 public:
  ContactFactorGraph(Scene scene, AssemblyTask task, int horizon)
      : scene_(std::move(scene)), task_(task), horizon_(horizon) {
    if (scene_.bodies.empty()) throw ModelError("scene has no bodies");
    if (horizon_ < 1) throw InvalidArgument("horizon must be >= 1");
    enumerate_candidates();
    build_layout();
    build_factors();
    std::vector<std::vector<int>> cols;
    for (const auto& f : specs_) {
      auto c = x_columns(f);
      if (!c.empty()) cols.push_back(std::move(c));
    }
    plan_ = EliminationPlan::build(layout_.dim_x, cols, layout_.x_knot);
  }

  const Scene& scene() const { return scene_; }
  AssemblyTask task() const { return task_; }
  int horizon() const { return horizon_; }
  const VariableLayout& layout() const { return layout_; }
  const std::vector<Candidate>& candidates() const { return candidates_; }
  const std::vector<FactorSpec>& factors() const { return specs_; }
  const EliminationPlan& plan() const { return plan_; }
  double characteristic_length() const { return scene_.characteristic_length(); }

  Pose2 pose(const VectorXd& q, ObjectRef obj, int knot) const {
    if (!obj.is_body()) return scene_.environment.at(static_cast<std::size_t>(obj.env)).pose;
    const auto& body = scene_.bodies.at(static_cast<std::size_t>(obj.body));
    const int o = layout_.q_offset.at(static_cast<std::size_t>(knot)).at(static_cast<std::size_t>(obj.body));
    if (o < 0) return body.pose;
    Pose2 p;
    p.position = Vec2(q(o), q(o + 1));
    p.angle = body.translation_only ? body.pose.angle : q(o + 2);
    return p;
  }

  Pose2 body_pose(const VectorXd& q, int body, int knot) const { return pose(q, ObjectRef{body, -1}, knot); }

  void set_body_pose(VectorXd& q, int body, int knot, const Pose2& p) const {
    const int o = layout_.q_offset.at(static_cast<std::size_t>(knot)).at(static_cast<std::size_t>(body));
    if (o < 0) return;
    q(o) = p.position.x();
    q(o + 1) = p.position.y();
    if (!scene_.bodies[static_cast<std::size_t>(body)].translation_only) q(o + 2) = p.angle;
  }

  /// Configuration with every free slot at the scene's initial pose.
  VectorXd initial_q() const {
    VectorXd q = VectorXd::Zero(layout_.dim_q);
    for (int k = 0; k < layout_.num_knots; ++k)
      for (std::size_t b = 0; b < scene_.bodies.size(); ++b)
        set_body_pose(q, static_cast<int>(b), k, scene_.bodies[b].pose);
    return q;
  }

  const Shape& shape(ObjectRef obj, int index) const {
    if (obj.is_body()) return scene_.bodies.at(static_cast<std::size_t>(obj.body)).shapes.at(static_cast<std::size_t>(index));
    return scene_.environment.at(static_cast<std::size_t>(obj.env)).shape;
  }

  FeatureEntry feature(const VectorXd& q, int contact, int knot) const {
    const auto& c = candidates_.at(static_cast<std::size_t>(contact));
    FeatureEntry e;
    e.value = point_contact(shape(c.a, c.a_shape), c.a_vertex, pose(q, c.a, knot), shape(c.b, c.b_shape),
                            pose(q, c.b, knot));
    e.value.feature.body_a = c.a.is_body() ? c.a.body : -1 - c.a.env;
    e.value.feature.body_b = c.b.is_body() ? c.b.body : -1 - c.b.env;
    for (int d = 0; d < 3; ++d) {
      e.q_cols[static_cast<std::size_t>(d)] = layout_.q_index(knot, c.a.body, d);
      e.q_cols[static_cast<std::size_t>(d + 3)] = layout_.q_index(knot, c.b.body, d);
    }
    return e;
  }

  /// Relative velocity Jacobian of a contact point at `knot`, over the full q
  /// vector: rows give v_A(c) - v_B(c).
  MatrixXd contact_velocity_jacobian(const VectorXd& q, int contact, int knot) const {
    if (contact < 0 || contact >= static_cast<int>(candidates_.size()))
      throw GraphInconsistency("unknown contact candidate");
    const auto& c = candidates_[static_cast<std::size_t>(contact)];
    const Vec2 point = feature(q, contact, knot).value.feature.point;
    MatrixXd J = MatrixXd::Zero(2, layout_.dim_q);
    for (auto [obj, sign] : {std::pair{c.a, 1.0}, std::pair{c.b, -1.0}}) {
      if (!obj.is_body()) continue;
      const Mat23 jb = point_velocity_jacobian(point, pose(q, obj, knot).position);
      for (int d = 0; d < 3; ++d) {
        const int col = layout_.q_index(knot, obj.body, d);
        if (col >= 0) J.col(col) += sign * jb.col(d);
      }
    }
    return J;
  }

  std::vector<int> x_columns(const FactorSpec& f) const {
    std::vector<int> cols;
    const int k = f.knot;
    auto lam = [&](int c, int contact) {
      const int o = layout_.lambda_index(k, c, contact);
      if (o >= 0) {
        cols.push_back(o);
        cols.push_back(o + 1);
      }
    };
    switch (f.label) {
      case FactorLabel::Complementarity:
      case FactorLabel::CoulombCone:
        for (int c = 0; c < layout_.num_cases; ++c) lam(c, f.contact);
        break;
      case FactorLabel::CoulombPerp: lam(0, f.contact); break;
      case FactorLabel::QuasiDynamics: {
        const int u = layout_.u_index(k, f.case_index, f.body);
        if (u >= 0) {
          cols.push_back(u);
          cols.push_back(u + 1);
        }
        for (std::size_t c = 0; c < candidates_.size(); ++c)
          if (candidates_[c].a.body == f.body || candidates_[c].b.body == f.body)
            lam(f.case_index, static_cast<int>(c));
        break;
      }
      case FactorLabel::InputPrior: {
        const int u = layout_.u_index(k, f.case_index, f.body);
        cols.push_back(u);
        cols.push_back(u + 1);
        break;
      }
      default: break;
    }
    return cols;
  }

  Linearization linearize(const VectorXd& q, bool with_q_derivatives = true) const {
    if (q.size() != layout_.dim_q) throw InvalidArgument("configuration does not match the layout");
    Linearization lin;
    lin.features.assign(static_cast<std::size_t>(layout_.num_knots),
                        std::vector<std::optional<FeatureEntry>>(candidates_.size()));
    auto feat = [&](int contact, int knot) -> const FeatureEntry& {
      auto& slot = lin.features[static_cast<std::size_t>(knot)][static_cast<std::size_t>(contact)];
      if (!slot) slot = feature(q, contact, knot);
      return *slot;
    };
    lin.factors.reserve(specs_.size());
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      AffineFactor a = linearize_factor(specs_[i], q, feat, with_q_derivatives);
      a.spec = static_cast<int>(i);
      a.label = specs_[i].label;
      a.kind = specs_[i].kind;
      a.weight = specs_[i].weight;
      lin.factors.push_back(std::move(a));
    }
    return lin;
  }

 private:
  using FeatureFn = std::function<const FeatureEntry&(int, int)>;

  void enumerate_candidates() {
    std::vector<Candidate> all;
    const auto& bodies = scene_.bodies;
    auto add_pair = [&](ObjectRef a, int sa_idx, const Shape& sa, ObjectRef b, int sb_idx, const Shape& sb) {
      Candidate c;
      c.friction = scene_.friction;
      if (sb.is_half_plane()) {
        if (sa.is_circle()) all.push_back({a, sa_idx, -1, b, sb_idx, c.friction, ContactMode::Free});
        else
          for (std::size_t v = 0; v < sa.vertices().size(); ++v)
            all.push_back({a, sa_idx, static_cast<int>(v), b, sb_idx, c.friction, ContactMode::Free});
        return;
      }
      if (sa.is_circle()) {
        all.push_back({a, sa_idx, -1, b, sb_idx, c.friction, ContactMode::Free});
      } else if (sb.is_circle()) {
        all.push_back({b, sb_idx, -1, a, sa_idx, c.friction, ContactMode::Free});
      } else {
        for (std::size_t v = 0; v < sa.vertices().size(); ++v)
          all.push_back({a, sa_idx, static_cast<int>(v), b, sb_idx, c.friction, ContactMode::Free});
        for (std::size_t v = 0; v < sb.vertices().size(); ++v)
          all.push_back({b, sb_idx, static_cast<int>(v), a, sa_idx, c.friction, ContactMode::Free});
      }
    };
    for (std::size_t i = 0; i < bodies.size(); ++i) {
      for (std::size_t si = 0; si < bodies[i].shapes.size(); ++si) {
        const ObjectRef a{static_cast<int>(i), -1};
        for (std::size_t j = i + 1; j < bodies.size(); ++j)
          for (std::size_t sj = 0; sj < bodies[j].shapes.size(); ++sj)
            add_pair(a, static_cast<int>(si), bodies[i].shapes[si], ObjectRef{static_cast<int>(j), -1},
                     static_cast<int>(sj), bodies[j].shapes[sj]);
        for (std::size_t e = 0; e < scene_.environment.size(); ++e)
          add_pair(a, static_cast<int>(si), bodies[i].shapes[si], ObjectRef{-1, static_cast<int>(e)}, 0,
                   scene_.environment[e].shape);
      }
    }

    auto resolve = [&](const ContactSpec& s) {
      Candidate c;
      c.a = ObjectRef{scene_.body_index(s.a), -1};
      c.a_shape = s.a_shape;
      c.a_vertex = shape(c.a, s.a_shape).is_polygon() ? s.vertex : -1;
      const int bb = scene_.body_index(s.b);
      c.b = bb >= 0 ? ObjectRef{bb, -1} : ObjectRef{-1, scene_.environment_index(s.b)};
      c.b_shape = s.b_shape;
      c.friction = s.friction.value_or(scene_.friction);
      c.mode = s.mode;
      return c;
    };

    if (task_ == AssemblyTask::Static && !scene_.contacts.empty()) {
      for (const auto& s : scene_.contacts) candidates_.push_back(resolve(s));
    } else if (task_ == AssemblyTask::Stick) {
      for (const auto& s : scene_.contacts) candidates_.push_back(resolve(s));
      for (const auto& c : all) {
        const bool listed = std::any_of(candidates_.begin(), candidates_.end(),
                                        [&](const Candidate& d) { return d.same_pair(c); });
        if (!listed) candidates_.push_back(c);
      }
    } else {
      for (const auto& s : scene_.contacts) {
        Candidate c = resolve(s);
        c.mode = ContactMode::Free;
        candidates_.push_back(c);
      }
      for (const auto& c : all) {
        const bool listed = std::any_of(candidates_.begin(), candidates_.end(),
                                        [&](const Candidate& d) { return d.same_pair(c); });
        if (!listed) candidates_.push_back(c);
      }
    }
    if (task_ != AssemblyTask::Stick)
      for (auto& c : candidates_) c.mode = ContactMode::Free;
  }

  void build_layout() {
    auto& L = layout_;
    const std::size_t nb = scene_.bodies.size();
    const bool is_static = task_ == AssemblyTask::Static;
    L.num_knots = is_static ? 1 : horizon_ + 1;
    L.num_cases = is_static ? 1 + static_cast<int>(scene_.perturbations.size()) : 1;
    L.dynamics_knots.clear();
    if (is_static) L.dynamics_knots = {0};
    else
      for (int k = 1; k <= horizon_; ++k) L.dynamics_knots.push_back(k);
    L.body_dofs.resize(nb);
    for (std::size_t b = 0; b < nb; ++b) L.body_dofs[b] = scene_.bodies[b].translation_only ? 2 : 3;
    L.q_offset.assign(static_cast<std::size_t>(L.num_knots), std::vector<int>(nb, -1));
    L.dim_q = 0;
    for (int k = 0; k < L.num_knots; ++k)
      for (std::size_t b = 0; b < nb; ++b) {
        if (k == 0 && task_ != AssemblyTask::Static && scene_.bodies[b].fixed_initial) continue;
        L.q_offset[static_cast<std::size_t>(k)][b] = L.dim_q;
        L.dim_q += L.body_dofs[b];
      }

    const std::size_t nc = candidates_.size();
    L.u_offset.assign(static_cast<std::size_t>(L.num_knots),
                      std::vector<std::vector<int>>(static_cast<std::size_t>(L.num_cases), std::vector<int>(nb, -1)));
    L.lambda_offset.assign(static_cast<std::size_t>(L.num_knots),
                           std::vector<std::vector<int>>(static_cast<std::size_t>(L.num_cases), std::vector<int>(nc, -1)));
    L.dim_x = 0;
    L.x_knot.clear();
    for (int k : L.dynamics_knots)
      for (int c = 0; c < L.num_cases; ++c) {
        for (std::size_t b = 0; b < nb; ++b)
          if (scene_.bodies[b].actuated) {
            L.u_offset[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)][b] = L.dim_x;
            L.dim_x += 2;
            L.x_knot.insert(L.x_knot.end(), 2, k);
          }
        for (std::size_t j = 0; j < nc; ++j) {
          L.lambda_offset[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)][j] = L.dim_x;
          L.dim_x += 2;
          L.x_knot.insert(L.x_knot.end(), 2, k);
        }
      }
  }

  double label_weight(FactorLabel l, double fallback) const {
    const auto it = scene_.weights.find(to_string(l));
    return it != scene_.weights.end() ? it->second : fallback;
  }

  void build_factors() {
    std::vector<CandidateMode> modes;
    for (const auto& c : candidates_) modes.push_back({c.mode});
    FactorSetOptions opt;
    opt.dynamics_knots = layout_.dynamics_knots;
    opt.cases = layout_.num_cases;
    opt.coulomb_perp = scene_.coulomb_perp;
    const int nb = static_cast<int>(scene_.bodies.size());
    if (task_ == AssemblyTask::Dynamic) specs_ = build_free_dynamic_set(nb, modes.size(), opt);
    else specs_ = build_factor_set(task_ == AssemblyTask::Stick ? Task::Stick : Task::Static, nb, modes, opt);

    if (task_ != AssemblyTask::Static) {
      // Knot 0 holds the initial configuration: geometric factors only.
      for (std::size_t c = 0; c < candidates_.size(); ++c) {
        FactorSpec f;
        f.label = candidates_[c].mode == ContactMode::Stick ? FactorLabel::Touch : FactorLabel::NonPenetration;
        f.kind = kind_of(f.label);
        f.knot = 0;
        f.contact = static_cast<int>(c);
        specs_.push_back(f);
      }
    }
    for (const auto& g : scene_.goals) {
      FactorSpec f;
      f.label = FactorLabel::Goal;
      f.kind = ConstraintKind::Equality;
      f.body = scene_.body_index(g.body);
      f.knot = g.knot < 0 ? layout_.num_knots + g.knot : g.knot;
      if (f.knot < 0 || f.knot >= layout_.num_knots) throw ModelError("goal knot out of range");
      f.target_angle = g.angle;
      f.target_position = g.position;
      f.weight = g.weight;
      specs_.push_back(f);
    }
    for (const auto& p : scene_.priors) {
      FactorSpec f;
      f.label = FactorLabel::PosePrior;
      f.kind = ConstraintKind::Equality;
      f.body = scene_.body_index(p.body);
      f.knot = p.knot < 0 ? layout_.num_knots + p.knot : p.knot;
      if (f.knot < 0 || f.knot >= layout_.num_knots) throw ModelError("prior knot out of range");
      f.reference = p.pose;
      f.weight = p.weight;
      specs_.push_back(f);
    }
    const double input_weight = label_weight(FactorLabel::InputPrior, 0.0);
    if (input_weight > 0.0) {
      for (int k : layout_.dynamics_knots)
        for (int c = 0; c < layout_.num_cases; ++c)
          for (std::size_t b = 0; b < scene_.bodies.size(); ++b)
            if (layout_.u_index(k, c, static_cast<int>(b)) >= 0) {
              FactorSpec f;
              f.label = FactorLabel::InputPrior;
              f.kind = ConstraintKind::Equality;
              f.knot = k;
              f.case_index = c;
              f.body = static_cast<int>(b);
              specs_.push_back(f);
            }
    }
    const double impulse = scene_.characteristic_impulse();
    for (auto& f : specs_) {
      if (f.label == FactorLabel::Goal || f.label == FactorLabel::PosePrior) {
        const auto it = scene_.weights.find(to_string(f.label));
        if (it != scene_.weights.end()) f.weight *= it->second;
        continue;
      }
      const double fallback = f.label == FactorLabel::QuasiDynamics ? 1.0 / (impulse * impulse) : 1.0;
      f.weight = label_weight(f.label, fallback);
    }
  }

  static std::vector<FactorSpec> build_free_dynamic_set(int bodies, std::size_t contacts,
                                                        const FactorSetOptions& opt) {
    if (contacts == 0) throw ModelError("task requires at least one contact candidate");
    std::vector<FactorSpec> out;
    for (int knot : opt.dynamics_knots) {
      for (std::size_t c = 0; c < contacts; ++c)
        for (auto l : {FactorLabel::NonPenetration, FactorLabel::Complementarity, FactorLabel::CoulombCone}) {
          FactorSpec f;
          f.label = l;
          f.kind = kind_of(l);
          f.knot = knot;
          f.contact = static_cast<int>(c);
          out.push_back(f);
        }
      for (int b = 0; b < bodies; ++b) {
        FactorSpec f;
        f.label = FactorLabel::QuasiDynamics;
        f.knot = knot;
        f.body = b;
        out.push_back(f);
      }
    }
    return out;
  }

  AffineFactor linearize_factor(const FactorSpec& f, const VectorXd& q, const FeatureFn& feat,
                                bool derivs) const;

  Scene scene_;
  AssemblyTask task_;
  int horizon_;
  std::vector<Candidate> candidates_;
  VariableLayout layout_;
  std::vector<FactorSpec> specs_;
  EliminationPlan plan_;
};

namespace detail {

/// Scatters the columns of a (rows x 6) pose Jacobian into a (rows x nq) matrix.
template <typename M>
MatrixXd expand_q(const Eigen::MatrixBase<M>& m, const std::array<int, 6>& cols, int nq) {
  MatrixXd out = MatrixXd::Zero(m.rows(), nq);
  for (std::size_t l = 0; l < 6; ++l)
    if (cols[l] >= 0) out.col(cols[l]) += m.col(static_cast<Eigen::Index>(l));
  return out;
}

inline MatrixXd perp_rows(const MatrixXd& m) {
  MatrixXd out(2, m.cols());
  out.row(0) = -m.row(1);
  out.row(1) = m.row(0);
  return out;
}

}  // namespace detail

inline AffineFactor ContactFactorGraph::linearize_factor(const FactorSpec& f, const VectorXd& q,
                                                         const FeatureFn& feat, bool derivs) const {
  const int nq = layout_.dim_q;
  const int k = f.knot;
  AffineFactor a;
  a.x_cols = x_columns(f);
  const auto nx = static_cast<Eigen::Index>(a.x_cols.size());
  MatrixXd dh;
  std::vector<MatrixXd> dG;
  Eigen::Matrix2Xd dax(2, 0);

  auto init = [&](Eigen::Index rows) {
    a.h = VectorXd::Zero(rows);
    a.G = MatrixXd::Zero(rows, nx);
    if (derivs) {
      dh = MatrixXd::Zero(rows, nq);
      dG.assign(static_cast<std::size_t>(nx), MatrixXd::Zero(rows, nq));
    }
  };

  // Relative sliding displacement at the contact point between knots k-1 and k.
  struct Slip {
    Vec2 w = Vec2::Zero();
    MatrixXd dw;
  };
  auto slip = [&](const FeatureEntry& fe, int contact) {
    const auto& cand = candidates_[static_cast<std::size_t>(contact)];
    Slip out;
    if (derivs) out.dw = MatrixXd::Zero(2, nq);
    const MatrixXd dc = derivs ? detail::expand_q(fe.value.jacobians.dpoint, fe.q_cols, nq) : MatrixXd();
    const Vec2 c = fe.value.feature.point;
    for (auto [obj, sign] : {std::pair{cand.a, 1.0}, std::pair{cand.b, -1.0}}) {
      if (!obj.is_body()) continue;
      const Pose2 now = pose(q, obj, k), prev = pose(q, obj, k - 1);
      const Vec3 delta(now.position.x() - prev.position.x(), now.position.y() - prev.position.y(),
                       now.angle - prev.angle);
      const Mat23 J = point_velocity_jacobian(c, now.position);
      out.w += sign * J * delta;
      if (!derivs) continue;
      for (int d = 0; d < 3; ++d) {
        const int cn = layout_.q_index(k, obj.body, d), cp = layout_.q_index(k - 1, obj.body, d);
        if (cn >= 0) out.dw.col(cn) += sign * J.col(d);
        if (cp >= 0) out.dw.col(cp) -= sign * J.col(d);
      }
      MatrixXd dr = dc;
      for (int d = 0; d < 2; ++d) {
        const int cn = layout_.q_index(k, obj.body, d);
        if (cn >= 0) dr(d, cn) -= 1.0;
      }
      out.dw += sign * delta.z() * detail::perp_rows(dr);
    }
    return out;
  };

  switch (f.label) {
    case FactorLabel::NonPenetration:
    case FactorLabel::Touch: {
      const auto& fe = feat(f.contact, k);
      init(1);
      a.h(0) = fe.value.feature.gap;
      if (derivs) dh = detail::expand_q(fe.value.jacobians.dgap, fe.q_cols, nq);
      break;
    }
    case FactorLabel::Complementarity: {
      const auto& fe = feat(f.contact, k);
      init(nx);
      a.G.diagonal().setConstant(fe.value.feature.gap);
      if (derivs) {
        const MatrixXd dg = detail::expand_q(fe.value.jacobians.dgap, fe.q_cols, nq);
        for (Eigen::Index j = 0; j < nx; ++j) dG[static_cast<std::size_t>(j)].row(j) = dg;
      }
      break;
    }
    case FactorLabel::CoulombCone: {
      const auto& fe = feat(f.contact, k);
      const double mu = candidates_[static_cast<std::size_t>(f.contact)].friction;
      const Vec2 n = fe.value.feature.normal;
      const Mat2 M = friction_scaling(n, mu);
      init(nx);
      a.axis = n;
      for (Eigen::Index b = 0; b < nx; b += 2) a.G.block<2, 2>(b, b) = M;
      if (derivs) {
        const MatrixXd dn = detail::expand_q(fe.value.jacobians.dnormal, fe.q_cols, nq);
        dax = dn;
        for (Eigen::Index b = 0; b < nx; b += 2)
          for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
              dG[static_cast<std::size_t>(b + j)].row(b + i) = (mu - 1.0) * (n(j) * dn.row(i) + n(i) * dn.row(j));
      }
      break;
    }
    case FactorLabel::NoSlip: {
      const auto& fe = feat(f.contact, k);
      const Vec2 n = fe.value.feature.normal;
      const Mat2 P = Mat2::Identity() - n * n.transpose();
      const Slip s = slip(fe, f.contact);
      init(2);
      a.h = P * s.w;
      if (derivs) {
        const MatrixXd dn = detail::expand_q(fe.value.jacobians.dnormal, fe.q_cols, nq);
        dh = P * s.dw - dn * n.dot(s.w) - n * (s.w.transpose() * dn);
      }
      break;
    }
    case FactorLabel::CoulombPerp: {
      const auto& fe = feat(f.contact, k);
      const double mu = candidates_[static_cast<std::size_t>(f.contact)].friction;
      const Vec2 n = fe.value.feature.normal;
      const Mat2 P = Mat2::Identity() - n * n.transpose();
      const Mat2 M = friction_scaling(n, mu);
      const Slip s = slip(fe, f.contact);
      const Vec2 vt = P * s.w;
      const double beta = vt.norm();
      const Vec2 y = beta * n + vt;
      const Vec2 My = M * y;
      init(1);
      a.G(0, 0) = My(0);
      a.G(0, 1) = My(1);
      if (derivs) {
        const MatrixXd dn = detail::expand_q(fe.value.jacobians.dnormal, fe.q_cols, nq);
        const MatrixXd dvt = P * s.dw - dn * n.dot(s.w) - n * (s.w.transpose() * dn);
        Eigen::RowVectorXd dbeta = Eigen::RowVectorXd::Zero(nq);
        if (beta > 0.0) dbeta = vt.transpose() * dvt / beta;
        const MatrixXd dy = n * dbeta + beta * dn + dvt;
        const MatrixXd dMy = (mu - 1.0) * (dn * n.dot(y) + n * (y.transpose() * dn)) + M * dy;
        dG[0].row(0) = dMy.row(0);
        dG[1].row(0) = dMy.row(1);
      }
      break;
    }
    case FactorLabel::QuasiDynamics: {
      const int b = f.body;
      const auto& body = scene_.bodies[static_cast<std::size_t>(b)];
      const int dofs = layout_.body_dofs[static_cast<std::size_t>(b)];
      const double dt = scene_.time_step;
      init(dofs);
      Vec3 A(body.mass / dt, body.mass / dt, body.inertia / dt);
      Vec3 rhs(body.mass * scene_.gravity.x() * dt, body.mass * scene_.gravity.y() * dt, 0.0);
      if (task_ == AssemblyTask::Static && f.case_index > 0 && !body.actuated)
        rhs += scene_.perturbations[static_cast<std::size_t>(f.case_index - 1)] * dt;
      const Pose2 now = pose(q, ObjectRef{b, -1}, k);
      if (task_ == AssemblyTask::Static) {
        a.h = -rhs.head(dofs);
      } else {
        const Pose2 prev = pose(q, ObjectRef{b, -1}, k - 1);
        const Vec3 delta(now.position.x() - prev.position.x(), now.position.y() - prev.position.y(),
                         now.angle - prev.angle);
        a.h = (A.cwiseProduct(delta) - rhs).head(dofs);
        if (derivs)
          for (int d = 0; d < dofs; ++d) {
            const int cn = layout_.q_index(k, b, d), cp = layout_.q_index(k - 1, b, d);
            if (cn >= 0) dh(d, cn) += A(d);
            if (cp >= 0) dh(d, cp) -= A(d);
          }
      }
      Eigen::Index col = 0;
      if (layout_.u_index(k, f.case_index, b) >= 0) {
        a.G.block(0, 0, 2, 2) = -Mat2::Identity();
        col = 2;
      }
      for (std::size_t c = 0; c < candidates_.size(); ++c) {
        const auto& cand = candidates_[c];
        if (cand.a.body != b && cand.b.body != b) continue;
        const double sgn = cand.a.body == b ? 1.0 : -1.0;
        a.G.block(0, col, 2, 2) = -sgn * Mat2::Identity();
        if (dofs == 3) {
          const auto& fe = feat(static_cast<int>(c), k);
          const Vec2 r = fe.value.feature.point - now.position;
          a.G(2, col) = sgn * r.y();
          a.G(2, col + 1) = -sgn * r.x();
          if (derivs) {
            MatrixXd dr = detail::expand_q(fe.value.jacobians.dpoint, fe.q_cols, nq);
            for (int d = 0; d < 2; ++d) {
              const int cn = layout_.q_index(k, b, d);
              if (cn >= 0) dr(d, cn) -= 1.0;
            }
            dG[static_cast<std::size_t>(col)].row(2) = sgn * dr.row(1);
            dG[static_cast<std::size_t>(col + 1)].row(2) = -sgn * dr.row(0);
          }
        }
        col += 2;
      }
      break;
    }
    case FactorLabel::Goal: {
      const Pose2 p = pose(q, ObjectRef{f.body, -1}, k);
      init((f.target_angle ? 1 : 0) + (f.target_position ? 2 : 0));
      Eigen::Index row = 0;
      if (f.target_angle) {
        a.h(row) = p.angle - *f.target_angle;
        const int c = layout_.q_index(k, f.body, 2);
        if (derivs && c >= 0) dh(row, c) = 1.0;
        ++row;
      }
      if (f.target_position) {
        for (int d = 0; d < 2; ++d) {
          a.h(row + d) = p.position(d) - (*f.target_position)(d);
          const int c = layout_.q_index(k, f.body, d);
          if (derivs && c >= 0) dh(row + d, c) = 1.0;
        }
      }
      break;
    }
    case FactorLabel::PosePrior: {
      const Vec3 v = pose(q, ObjectRef{f.body, -1}, k).vector();
      init(3);
      a.h = v - f.reference;
      if (derivs)
        for (int d = 0; d < 3; ++d) {
          const int c = layout_.q_index(k, f.body, d);
          if (c >= 0) dh(d, c) = 1.0;
        }
      break;
    }
    case FactorLabel::InputPrior: {
      init(2);
      a.G.setIdentity();
      break;
    }
  }

  if (!derivs) {
    a.dh_dq = MatrixXd::Zero(a.h.size(), 0);
    return a;
  }
  // Keep only the q columns with a non-zero partial derivative.
  for (int c = 0; c < nq; ++c) {
    bool used = dh.col(c).squaredNorm() > 0.0 || (dax.cols() > 0 && dax.col(c).squaredNorm() > 0.0);
    for (std::size_t j = 0; j < dG.size() && !used; ++j) used = dG[j].col(c).squaredNorm() > 0.0;
    if (used) a.q_cols.push_back(c);
  }
  const auto nl = static_cast<Eigen::Index>(a.q_cols.size());
  a.dh_dq.resize(a.h.size(), nl);
  a.dG_dq.assign(dG.size(), MatrixXd(a.h.size(), nl));
  if (dax.cols() > 0) a.daxis_dq.resize(2, nl);
  for (Eigen::Index l = 0; l < nl; ++l) {
    const int c = a.q_cols[static_cast<std::size_t>(l)];
    a.dh_dq.col(l) = dh.col(c);
    for (std::size_t j = 0; j < dG.size(); ++j) a.dG_dq[j].col(l) = dG[j].col(c);
    if (dax.cols() > 0) a.daxis_dq.col(l) = dax.col(c);
  }
  return a;
}

/// Sum of factor energies at (q, x) and the per-label breakdown.
struct JointEnergy {
  double total = 0.0;
  std::map<std::string, double> by_label;
  std::vector<double> per_factor;
};

inline JointEnergy joint_energy(const Linearization& lin, const VectorXd& x) {
  JointEnergy e;
  e.per_factor.reserve(lin.factors.size());
  for (const auto& f : lin.factors) {
    const double v = f.energy(x);
    e.per_factor.push_back(v);
    e.total += v;
    e.by_label[to_string(f.label)] += v;
  }
  return e;
}

inline JointEnergy joint_energy(const ContactFactorGraph& g, const Variables& v) {
  return joint_energy(g.linearize(v.q, false), v.x);
}

/// Gradient of the joint energy with respect to q at fixed x.
inline VectorXd energy_q_gradient(const Linearization& lin, const VectorXd& x, int dim_q) {
  VectorXd g = VectorXd::Zero(dim_q);
  for (const auto& f : lin.factors) {
    if (f.q_cols.empty()) continue;
    const Eigen::RowVectorXd local = f.energy_q_gradient(x);
    for (std::size_t l = 0; l < f.q_cols.size(); ++l) g(f.q_cols[l]) += local(static_cast<Eigen::Index>(l));
  }
  return g;
}

/// Gradient of the joint energy with respect to x at fixed q.
inline VectorXd energy_x_gradient(const Linearization& lin, const VectorXd& x) {
  VectorXd g = VectorXd::Zero(x.size());
  for (const auto& f : lin.factors) {
    if (f.x_cols.empty()) continue;
    const VectorXd local = f.weight * (f.G.transpose() * energy_derivatives(f.kind, f.residual(x), f.axis).gradient);
    for (std::size_t a = 0; a < f.x_cols.size(); ++a) g(f.x_cols[a]) += local(static_cast<Eigen::Index>(a));
  }
  return g;
}

}  // namespace cfg
