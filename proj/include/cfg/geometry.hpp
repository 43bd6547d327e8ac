#pragma once

// Planar convex shapes described through support functions, and the
// differentiable contact features (gap, point, normal) between them.
//
// Conventions
//   * the normal points from B's witness point toward A's;
//   * the gap is the signed distance between the rounded shapes;
//   * the contact point is the midpoint of the two surface witness points;
//   * Jacobians are taken with respect to [poseA (x, y, angle), poseB (x, y, angle)].

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "cfg/errors.hpp"

namespace cfg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Row2 = Eigen::RowVector2d;
using Row3 = Eigen::RowVector3d;
using Row6 = Eigen::Matrix<double, 1, 6>;
using Mat26 = Eigen::Matrix<double, 2, 6>;

/// Counter-clockwise rotation of a vector by 90 degrees.
inline Vec2 perp(const Vec2& v) { return {-v.y(), v.x()}; }

/// z-component of the planar cross product.
inline double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

inline Mat2 rotation(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat2 r;
  r << c, -s, s, c;
  return r;
}

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::remainder(a, two_pi);
  if (w <= -std::numbers::pi) w += two_pi;
  return w;
}

struct Pose2 {
  Vec2 position = Vec2::Zero();
  double angle = 0.0;  // unwrapped

  Mat2 rotation() const { return cfg::rotation(angle); }
  Vec2 transform(const Vec2& local) const { return position + rotation() * local; }
  Vec2 inverse_transform(const Vec2& world) const {
    return rotation().transpose() * (world - position);
  }
  Vec3 vector() const { return {position.x(), position.y(), angle}; }
  static Pose2 from(const Vec3& v) { return {Vec2(v.x(), v.y()), v.z()}; }
};

class Shape {
 public:
  enum class Kind { Circle, Polygon, HalfPlane };

  static Shape circle(double radius) {
    if (!(radius >= 0.0) || !std::isfinite(radius))
      throw InvalidArgument("circle radius must be finite and >= 0");
    Shape s;
    s.kind_ = Kind::Circle;
    s.radius_ = radius;
    return s;
  }

  /// Vertices in counter-clockwise order, strictly convex; `rounding` is the
  /// radius of the disc Minkowski-added to the core polygon.
  static Shape polygon(std::vector<Vec2> vertices, double rounding) {
    if (vertices.size() < 3) throw InvalidArgument("polygon needs at least 3 vertices");
    if (!(rounding >= 0.0) || !std::isfinite(rounding))
      throw InvalidArgument("polygon rounding must be finite and >= 0");
    const std::size_t n = vertices.size();
    double scale = 0.0;
    for (const auto& v : vertices) scale = std::max(scale, v.norm());
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& a = vertices[i];
      const Vec2& b = vertices[(i + 1) % n];
      const Vec2& c = vertices[(i + 2) % n];
      if (!(cross(b - a, c - b) > 1e-12 * std::max(scale * scale, 1e-300)))
        throw InvalidArgument("polygon vertices must be counter-clockwise and strictly convex");
    }
    Shape s;
    s.kind_ = Kind::Polygon;
    s.vertices_ = std::move(vertices);
    s.radius_ = rounding;
    return s;
  }

  /// The region {x : <normal, x> <= offset} in the shape's frame.
  static Shape half_plane(const Vec2& normal, double offset) {
    const double len = normal.norm();
    if (!(len > 0.0) || !std::isfinite(len) || !std::isfinite(offset))
      throw InvalidArgument("half-plane normal must be non-zero and finite");
    Shape s;
    s.kind_ = Kind::HalfPlane;
    s.normal_ = normal / len;
    s.offset_ = offset / len;
    return s;
  }

  Kind kind() const { return kind_; }
  bool is_circle() const { return kind_ == Kind::Circle; }
  bool is_polygon() const { return kind_ == Kind::Polygon; }
  bool is_half_plane() const { return kind_ == Kind::HalfPlane; }
  const std::vector<Vec2>& vertices() const { return vertices_; }
  /// Circle radius, or polygon rounding radius. Zero for half-planes.
  double radius() const { return radius_; }
  const Vec2& normal() const { return normal_; }
  double offset() const { return offset_; }

  /// Outward unit normal of edge i (from vertex i to vertex i+1), body frame.
  Vec2 edge_normal(std::size_t i) const {
    const Vec2 e = vertices_[(i + 1) % vertices_.size()] - vertices_[i];
    return Vec2(e.y(), -e.x()).normalized();
  }

  double bounding_radius() const {
    double r = 0.0;
    for (const auto& v : vertices_) r = std::max(r, v.norm());
    return r + radius_;
  }

 private:
  Shape() = default;
  Kind kind_ = Kind::Circle;
  std::vector<Vec2> vertices_;
  double radius_ = 0.0;
  Vec2 normal_ = Vec2::UnitY();
  double offset_ = 0.0;
};

struct ContactFeature {
  double gap = 0.0;
  Vec2 point = Vec2::Zero();
  Vec2 normal = Vec2::UnitY();
  int body_a = -1;
  int body_b = -1;
  /// Surface witness points on A and B.
  Vec2 witness_a = Vec2::Zero();
  Vec2 witness_b = Vec2::Zero();
};

/// Derivatives of a ContactFeature with respect to [poseA, poseB].
struct FeatureJacobians {
  Row6 dgap = Row6::Zero();
  Mat26 dnormal = Mat26::Zero();
  Mat26 dpoint = Mat26::Zero();
};

struct FeatureWithJacobians {
  ContactFeature feature;
  FeatureJacobians jacobians;
};

namespace detail {

inline std::size_t lowest_index_argmax(const std::vector<Vec2>& pts, const Vec2& d) {
  std::size_t best = 0;
  double best_val = pts[0].dot(d);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double v = pts[i].dot(d);
    const double tie = 1e-12 * std::max({1.0, std::abs(v), std::abs(best_val)});
    if (v > best_val + tie) {
      best_val = v;
      best = i;
    }
  }
  return best;
}

/// Closest point of a shape core (circle centre, core polygon, half-plane
/// boundary) to a world point p, with derivatives in p and in the shape pose.
struct CoreProximity {
  double distance = 0.0;  // signed; negative when p is inside the core
  Vec2 normal = Vec2::UnitY();
  Vec2 closest = Vec2::Zero();
  Row2 dd_dp = Row2::Zero();
  Row3 dd_dpose = Row3::Zero();
  Mat2 dn_dp = Mat2::Zero();
  Mat23 dn_dpose = Mat23::Zero();
  Mat2 dc_dp = Mat2::Zero();
  Mat23 dc_dpose = Mat23::Zero();
};

// p measured against the line through `a` with outward unit normal `m`, both
// attached rigidly to the pose.
inline CoreProximity face_proximity(const Vec2& p, const Vec2& m, const Vec2& a,
                                    const Vec2& origin) {
  CoreProximity r;
  const double s = m.dot(p - a);
  const Vec2 pm = perp(m);
  r.distance = s;
  r.normal = m;
  r.closest = p - s * m;
  r.dd_dp = m.transpose();
  r.dd_dpose << -m.x(), -m.y(), pm.dot(p - origin);
  r.dn_dpose.col(2) = pm;
  r.dc_dp = Mat2::Identity() - m * m.transpose();
  r.dc_dpose.leftCols<2>() = m * m.transpose();
  r.dc_dpose.col(2) = -m * r.dd_dpose(2) - s * pm;
  return r;
}

// p measured against a point `v` attached rigidly to the pose.
inline CoreProximity point_proximity(const Vec2& p, const Vec2& v, const Vec2& origin,
                                     bool rotates) {
  CoreProximity r;
  const Vec2 d = p - v;
  const double s = d.norm();
  if (!(s > 1e-12)) throw DegenerateContact("coincident core points: contact normal is ambiguous");
  const Vec2 n = d / s;
  const Mat2 P = Mat2::Identity() - n * n.transpose();
  const Vec2 lever = rotates ? perp(v - origin) : Vec2::Zero();
  r.distance = s;
  r.normal = n;
  r.closest = v;
  r.dd_dp = n.transpose();
  r.dd_dpose << -n.x(), -n.y(), -n.dot(lever);
  r.dn_dp = P / s;
  r.dn_dpose.leftCols<2>() = -P / s;
  r.dn_dpose.col(2) = -P * lever / s;
  r.dc_dpose.leftCols<2>() = Mat2::Identity();
  r.dc_dpose.col(2) = lever;
  return r;
}

inline CoreProximity core_proximity(const Vec2& p, const Shape& shape, const Pose2& pose) {
  switch (shape.kind()) {
    case Shape::Kind::Circle:
      return point_proximity(p, pose.position, pose.position, false);
    case Shape::Kind::HalfPlane: {
      const Mat2 R = pose.rotation();
      const Vec2 m = R * shape.normal();
      const Vec2 a = pose.transform(shape.offset() * shape.normal());
      return face_proximity(p, m, a, pose.position);
    }
    case Shape::Kind::Polygon: break;
  }
  const auto& verts = shape.vertices();
  const std::size_t n = verts.size();
  const Mat2 R = pose.rotation();
  const Vec2 pl = pose.inverse_transform(p);

  bool inside = true;
  std::size_t deepest = 0;
  double deepest_s = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double s = shape.edge_normal(i).dot(pl - verts[i]);
    if (s > 0.0) inside = false;
    if (s > deepest_s) {
      deepest_s = s;
      deepest = i;
    }
  }
  if (inside) {
    return face_proximity(p, R * shape.edge_normal(deepest), pose.transform(verts[deepest]),
                          pose.position);
  }

  // Closest feature on the boundary: edge interior or vertex.
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_edge = 0;
  int best_vertex = -1;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = verts[i];
    const Vec2 e = verts[(i + 1) % n] - a;
    const double t = (pl - a).dot(e) / e.squaredNorm();
    int vertex = -1;
    Vec2 q;
    if (t <= 0.0) {
      vertex = static_cast<int>(i);
      q = a;
    } else if (t >= 1.0) {
      vertex = static_cast<int>((i + 1) % n);
      q = a + e;
    } else {
      q = a + t * e;
    }
    const double dist = (pl - q).norm();
    if (dist < best) {
      best = dist;
      best_edge = i;
      best_vertex = vertex;
    }
  }
  if (best_vertex < 0) {
    return face_proximity(p, R * shape.edge_normal(best_edge), pose.transform(verts[best_edge]),
                          pose.position);
  }
  return point_proximity(p, pose.transform(verts[static_cast<std::size_t>(best_vertex)]),
                         pose.position, true);
}

inline FeatureWithJacobians swap_roles(FeatureWithJacobians f) {
  FeatureWithJacobians out;
  out.feature = f.feature;
  std::swap(out.feature.body_a, out.feature.body_b);
  std::swap(out.feature.witness_a, out.feature.witness_b);
  out.feature.normal = -f.feature.normal;
  const auto& j = f.jacobians;
  out.jacobians.dgap << j.dgap.rightCols<3>(), j.dgap.leftCols<3>();
  out.jacobians.dnormal << -j.dnormal.rightCols<3>(), -j.dnormal.leftCols<3>();
  out.jacobians.dpoint << j.dpoint.rightCols<3>(), j.dpoint.leftCols<3>();
  return out;
}

}  // namespace detail

/// Support point of `shape` (body frame) in unit direction `d`, rounding included.
inline Vec2 support(const Shape& shape, const Vec2& direction) {
  const double len = direction.norm();
  if (!(len > 0.0) || !std::isfinite(len)) throw InvalidArgument("support direction must be non-zero");
  const Vec2 d = direction / len;
  switch (shape.kind()) {
    case Shape::Kind::Circle: return shape.radius() * d;
    case Shape::Kind::Polygon:
      return shape.vertices()[detail::lowest_index_argmax(shape.vertices(), d)] +
             shape.radius() * d;
    case Shape::Kind::HalfPlane:
      if (d.dot(shape.normal()) < 1.0 - 1e-12)
        throw InvalidArgument("half-plane support is unbounded in this direction");
      return shape.offset() * shape.normal();
  }
  return Vec2::Zero();
}

/// Contact between a point core attached to A (the circle centre, or polygon
/// vertex `vertex`) inflated by A's radius, and shape B.
inline FeatureWithJacobians point_contact(const Shape& a, int vertex, const Pose2& pose_a,
                                          const Shape& b, const Pose2& pose_b) {
  Vec2 local = Vec2::Zero();
  if (a.is_polygon()) {
    if (vertex < 0 || static_cast<std::size_t>(vertex) >= a.vertices().size())
      throw InvalidArgument("vertex index out of range");
    local = a.vertices()[static_cast<std::size_t>(vertex)];
  } else if (!a.is_circle()) {
    throw InvalidArgument("point contact source must be a circle or polygon vertex");
  }
  const Vec2 p = pose_a.transform(local);
  Mat23 dp;
  dp.leftCols<2>() = Mat2::Identity();
  dp.col(2) = perp(p - pose_a.position);

  const auto prox = detail::core_proximity(p, b, pose_b);
  const double ra = a.radius(), rb = b.radius();
  FeatureWithJacobians out;
  auto& f = out.feature;
  f.gap = prox.distance - ra - rb;
  f.normal = prox.normal;
  f.witness_a = p - ra * prox.normal;
  f.witness_b = prox.closest + rb * prox.normal;
  f.point = 0.5 * (f.witness_a + f.witness_b);

  auto& j = out.jacobians;
  j.dgap.leftCols<3>() = prox.dd_dp * dp;
  j.dgap.rightCols<3>() = prox.dd_dpose;
  const Mat23 dn_a = prox.dn_dp * dp;
  j.dnormal.leftCols<3>() = dn_a;
  j.dnormal.rightCols<3>() = prox.dn_dpose;
  j.dpoint.leftCols<3>() = 0.5 * (dp + prox.dc_dp * dp + (rb - ra) * dn_a);
  j.dpoint.rightCols<3>() = 0.5 * (prox.dc_dpose + (rb - ra) * prox.dn_dpose);
  return out;
}

/// Features and Jacobians for any supported pair of shapes.
inline FeatureWithJacobians contact_features_with_jacobians(const Shape& a, const Pose2& pose_a,
                                                            const Shape& b, const Pose2& pose_b) {
  using K = Shape::Kind;
  if (a.is_half_plane() && b.is_half_plane())
    throw InvalidArgument("half-plane versus half-plane contact is undefined");
  if (a.is_half_plane()) return detail::swap_roles(contact_features_with_jacobians(b, pose_b, a, pose_a));
  if (a.is_circle()) return point_contact(a, -1, pose_a, b, pose_b);
  // a is a polygon
  if (b.kind() == K::Circle) return detail::swap_roles(point_contact(b, -1, pose_b, a, pose_a));
  if (b.kind() == K::HalfPlane) {
    const Vec2 toward_a = pose_b.rotation() * b.normal();
    const Vec2 d = pose_a.rotation().transpose() * (-toward_a);
    const auto v = detail::lowest_index_argmax(a.vertices(), d);
    return point_contact(a, static_cast<int>(v), pose_a, b, pose_b);
  }
  // polygon versus polygon: the closest pair always involves a vertex of one side
  std::optional<FeatureWithJacobians> best;
  for (std::size_t i = 0; i < a.vertices().size(); ++i) {
    auto f = point_contact(a, static_cast<int>(i), pose_a, b, pose_b);
    if (!best || f.feature.gap < best->feature.gap) best = f;
  }
  for (std::size_t i = 0; i < b.vertices().size(); ++i) {
    auto f = detail::swap_roles(point_contact(b, static_cast<int>(i), pose_b, a, pose_a));
    if (f.feature.gap < best->feature.gap) best = f;
  }
  return *best;
}

inline ContactFeature contact_features(const Shape& a, const Pose2& pose_a, const Shape& b,
                                       const Pose2& pose_b) {
  return contact_features_with_jacobians(a, pose_a, b, pose_b).feature;
}

inline FeatureJacobians feature_derivatives(const Shape& a, const Pose2& pose_a, const Shape& b,
                                            const Pose2& pose_b) {
  return contact_features_with_jacobians(a, pose_a, b, pose_b).jacobians;
}

/// Velocity of the material point of a body at world point `c` as a linear map
/// of the body twist (vx, vy, omega): [I, perp(c - x)].
inline Mat23 point_velocity_jacobian(const Vec2& c, const Vec2& body_position) {
  Mat23 j;
  j.leftCols<2>() = Mat2::Identity();
  j.col(2) = perp(c - body_position);
  return j;
}

}  // namespace cfg
