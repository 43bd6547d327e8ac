#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cfg/geometry.hpp"

using namespace cfg;

namespace {

Shape square(double half, double rounding) {
  return Shape::polygon({{-half, -half}, {half, -half}, {half, half}, {-half, half}}, rounding);
}

Shape ground() { return Shape::half_plane({0.0, 1.0}, 0.0); }

double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

// Central differences of gap, normal and point with respect to [poseA, poseB].
void expect_fd_match(const Shape& a, const Pose2& pa, const Shape& b, const Pose2& pb, double tol) {
  const auto j = feature_derivatives(a, pa, b, pb);
  const double h = 1e-6;
  for (int col = 0; col < 6; ++col) {
    Vec3 va = pa.vector(), vb = pb.vector();
    Vec3 wa = va, wb = vb;
    (col < 3 ? va : vb)(col % 3) += h;
    (col < 3 ? wa : wb)(col % 3) -= h;
    const auto fp = contact_features(a, Pose2::from(va), b, Pose2::from(vb));
    const auto fm = contact_features(a, Pose2::from(wa), b, Pose2::from(wb));
    EXPECT_LT(rel_err((fp.gap - fm.gap) / (2 * h), j.dgap(col)), tol) << "gap col " << col;
    for (int r = 0; r < 2; ++r) {
      EXPECT_LT(rel_err((fp.normal(r) - fm.normal(r)) / (2 * h), j.dnormal(r, col)), tol)
          << "normal row " << r << " col " << col;
      EXPECT_LT(rel_err((fp.point(r) - fm.point(r)) / (2 * h), j.dpoint(r, col)), tol)
          << "point row " << r << " col " << col;
    }
  }
}

}  // namespace

TEST(Support, CircleIsRadiusTimesDirection) {
  const Vec2 s = support(Shape::circle(1.0), Vec2(1.0, 0.0));
  EXPECT_NEAR(s.x(), 1.0, 1e-15);
  EXPECT_NEAR(s.y(), 0.0, 1e-15);
}

TEST(Support, TieBreaksOnLowestVertexIndex) {
  const Shape sq = Shape::polygon({{-1, 1}, {-1, -1}, {1, -1}, {1, 1}}, 0.1);
  const Vec2 s = support(sq, Vec2(0.0, 1.0));
  EXPECT_NEAR(s.x(), -1.0, 1e-15);
  EXPECT_NEAR(s.y(), 1.1, 1e-15);
}

TEST(Support, UniqueVertexInFirstQuadrant) {
  const double a = 10.0 * std::numbers::pi / 180.0;
  const Vec2 s = support(square(1.0, 0.0), Vec2(std::cos(a), std::sin(a)));
  EXPECT_NEAR(s.x(), 1.0, 1e-15);
  EXPECT_NEAR(s.y(), 1.0, 1e-15);
}

TEST(Support, ZeroDirectionThrows) { EXPECT_THROW(support(Shape::circle(1.0), Vec2::Zero()), InvalidArgument); }

TEST(Support, MaximizesOverAllVertices) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
  const Shape hex = Shape::polygon({{1, 0}, {0.5, 0.8}, {-0.5, 0.8}, {-1, 0}, {-0.5, -0.8}, {0.5, -0.8}}, 0.0);
  for (int i = 0; i < 200; ++i) {
    const Vec2 d(std::cos(ang(rng)), std::sin(ang(rng)));
    const double best = support(hex, d).dot(d);
    for (const auto& v : hex.vertices()) EXPECT_LE(v.dot(d), best + 1e-12);
  }
}

TEST(Shape, RejectsClockwiseOrCollinearPolygons) {
  EXPECT_THROW(Shape::polygon({{0, 0}, {0, 1}, {1, 1}, {1, 0}}, 0.1), InvalidArgument);
  EXPECT_THROW(Shape::polygon({{0, 0}, {1, 0}, {2, 0}, {1, 1}}, 0.1), InvalidArgument);
  EXPECT_THROW(Shape::circle(-1.0), InvalidArgument);
}

TEST(ContactFeatures, CollinearCircles) {
  const auto f = contact_features(Shape::circle(1.0), Pose2{}, Shape::circle(1.0), Pose2{{3.0, 0.0}, 0.0});
  EXPECT_NEAR(f.gap, 1.0, 1e-14);
  EXPECT_NEAR(f.normal.x(), -1.0, 1e-14);
  EXPECT_NEAR(f.normal.y(), 0.0, 1e-14);
  EXPECT_NEAR(f.point.x(), 1.5, 1e-14);
  EXPECT_NEAR(f.point.y(), 0.0, 1e-14);
}

TEST(ContactFeatures, CircleOverHalfPlane) {
  const auto f = contact_features(Shape::circle(1.0), Pose2{{0.0, 1.5}, 0.0}, ground(), Pose2{});
  EXPECT_NEAR(f.gap, 0.5, 1e-14);
  EXPECT_NEAR(f.normal.x(), 0.0, 1e-14);
  EXPECT_NEAR(f.normal.y(), 1.0, 1e-14);
  EXPECT_NEAR(f.point.x(), 0.0, 1e-14);
  EXPECT_NEAR(f.point.y(), 0.25, 1e-14);
}

TEST(ContactFeatures, RestingRoundedSquareMatchesSampledSurface) {
  const Shape sq = square(0.5, 0.05);
  const Pose2 pose{{0.0, 0.55}, 0.0};
  const auto f = contact_features(sq, pose, ground(), Pose2{});
  EXPECT_NEAR(f.gap, 0.0, 1e-9);
  EXPECT_NEAR(f.normal.x(), 0.0, 1e-12);
  EXPECT_NEAR(f.normal.y(), 1.0, 1e-12);
  // Dense sampling of the rounded boundary: lowest surface point over support directions.
  double lowest = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 20000; ++i) {
    const double a = 2.0 * std::numbers::pi * i / 20000.0;
    const Vec2 d(std::cos(a), std::sin(a));
    lowest = std::min(lowest, pose.transform(support(sq, d)).y());
  }
  EXPECT_NEAR(f.gap, lowest, 1e-9);
}

TEST(ContactFeatures, ConcentricCirclesAreDegenerate) {
  EXPECT_THROW(contact_features(Shape::circle(1.0), Pose2{}, Shape::circle(0.5), Pose2{}), DegenerateContact);
}

TEST(ContactFeatures, HalfPlanePairIsRejected) {
  EXPECT_THROW(contact_features(ground(), Pose2{}, ground(), Pose2{}), InvalidArgument);
}

TEST(ContactFeatures, SeparatedGapIsWitnessDistanceMinusRadii) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Shape a = square(0.3, 0.04);
  const Shape b = Shape::polygon({{-0.4, -0.2}, {0.4, -0.2}, {0.0, 0.3}}, 0.02);
  int checked = 0;
  for (int i = 0; i < 200; ++i) {
    const Pose2 pa{{u(rng), u(rng)}, 3.0 * u(rng)};
    const Pose2 pb{{u(rng) + 2.0, u(rng)}, 3.0 * u(rng)};
    const auto f = contact_features(a, pa, b, pb);
    if (f.gap <= 0.0) continue;
    // Core witness points: undo the rounding offsets of the surface witnesses.
    const Vec2 core_a = f.witness_a + a.radius() * f.normal;
    const Vec2 core_b = f.witness_b - b.radius() * f.normal;
    EXPECT_NEAR(f.gap, (core_a - core_b).norm() - a.radius() - b.radius(), 1e-12);
    EXPECT_NEAR(f.normal.norm(), 1.0, 1e-12);
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(ContactFeatures, SwapNegatesNormalAndKeepsGap) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Shape a = square(0.3, 0.05);
  const Shape b = Shape::circle(0.25);
  const Shape c = Shape::polygon({{-0.4, -0.2}, {0.4, -0.2}, {0.0, 0.3}}, 0.02);
  for (int i = 0; i < 100; ++i) {
    const Pose2 pa{{u(rng), u(rng)}, 3.0 * u(rng)};
    const Pose2 pb{{u(rng) + 1.5, u(rng)}, 3.0 * u(rng)};
    for (const Shape* other : {&b, &c}) {
      const auto ab = contact_features(a, pa, *other, pb);
      const auto ba = contact_features(*other, pb, a, pa);
      EXPECT_NEAR(ab.gap, ba.gap, 1e-12);
      EXPECT_NEAR((ab.normal + ba.normal).norm(), 0.0, 1e-12);
    }
  }
}

TEST(FeatureDerivatives, CirclePairGapGradient) {
  const auto j = feature_derivatives(Shape::circle(1.0), Pose2{}, Shape::circle(1.0), Pose2{{3.0, 0.0}, 0.0});
  // Moving A along +x closes the gap: dgap/dxA = n_x = -1.
  EXPECT_NEAR(j.dgap(0), -1.0, 1e-12);
  EXPECT_NEAR(j.dgap(1), 0.0, 1e-12);
  EXPECT_NEAR(j.dgap(3), 1.0, 1e-12);
  expect_fd_match(Shape::circle(1.0), Pose2{}, Shape::circle(1.0), Pose2{{3.0, 0.0}, 0.0}, 1e-5);
}

TEST(FeatureDerivatives, CircleOverHalfPlane) {
  const auto j = feature_derivatives(Shape::circle(1.0), Pose2{{0.0, 1.5}, 0.0}, ground(), Pose2{});
  EXPECT_NEAR(j.dgap(0), 0.0, 1e-12);
  EXPECT_NEAR(j.dgap(1), 1.0, 1e-12);
  EXPECT_NEAR(j.dgap(2), 0.0, 1e-12);
}

class FeatureFd : public ::testing::TestWithParam<int> {};

TEST_P(FeatureFd, RandomPosesMatchCentralDifferences) {
  std::mt19937_64 rng(100 + GetParam());
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Shape sq = square(0.3, 0.05);
  const Shape tri = Shape::polygon({{-0.4, -0.2}, {0.4, -0.2}, {0.0, 0.3}}, 0.03);
  const Shape disc = Shape::circle(0.2);
  const Shape tilted = Shape::half_plane({0.2, 1.0}, -0.1);
  int done = 0;
  for (int i = 0; i < 100; ++i) {
    const Pose2 pa{{u(rng), 0.8 + 0.5 * u(rng)}, 3.0 * u(rng)};
    const Pose2 pb{{u(rng) + 0.2, 0.5 * u(rng) - 0.4}, 3.0 * u(rng)};
    try {
      switch (GetParam()) {
        case 0: expect_fd_match(sq, pa, Shape::half_plane({0, 1}, 0), Pose2{}, 1e-5); break;
        case 1: expect_fd_match(disc, pa, disc, pb, 1e-5); break;
        case 2: expect_fd_match(disc, pa, tilted, pb, 1e-5); break;
        case 3: expect_fd_match(sq, pa, disc, pb, 1e-5); break;
        case 4: expect_fd_match(sq, pa, tri, pb, 1e-5); break;
        case 5: expect_fd_match(tri, pa, tilted, pb, 1e-5); break;
      }
      ++done;
    } catch (const DegenerateContact&) {
    }
  }
  EXPECT_GT(done, 95);
}

INSTANTIATE_TEST_SUITE_P(Pairings, FeatureFd, ::testing::Range(0, 6));

TEST(ContactVelocityJacobian, LeverArm) {
  const Mat23 j = point_velocity_jacobian(Vec2(1.0, 2.0), Vec2::Zero());
  Mat23 expected;
  expected << 1, 0, -2, 0, 1, 1;
  EXPECT_LT((j - expected).norm(), 1e-15);
  EXPECT_LT(point_velocity_jacobian(Vec2(0.3, -0.2), Vec2(0.3, -0.2)).col(2).norm(), 1e-15);
}

TEST(ContactVelocityJacobian, MatchesFiniteDifferenceOfMaterialPoint) {
  const Pose2 pose{{0.4, -0.3}, 0.7};
  const Vec2 c(1.1, 0.5);
  const Vec2 local = pose.inverse_transform(c);
  const Mat23 j = point_velocity_jacobian(c, pose.position);
  const double h = 1e-6;
  for (int d = 0; d < 3; ++d) {
    Vec3 p = pose.vector(), m = pose.vector();
    p(d) += h;
    m(d) -= h;
    const Vec2 fd = (Pose2::from(p).transform(local) - Pose2::from(m).transform(local)) / (2 * h);
    EXPECT_LT((fd - j.col(d)).norm(), 1e-8);
  }
}

TEST(ContactFeatures, GapIsLipschitzAlongPaths) {
  const Shape sq = square(0.3, 0.05);
  const Shape tri = Shape::polygon({{-0.4, -0.2}, {0.4, -0.2}, {0.0, 0.3}}, 0.03);
  const Vec3 a0(0.0, 0.9, 0.2), a1(0.5, 0.2, 2.5);
  const Pose2 pb{{0.1, -0.2}, 0.3};
  const double lever = 1.0 + sq.bounding_radius() + 2.0;
  auto prev = contact_features(sq, Pose2::from(a0), tri, pb);
  for (int i = 1; i <= 1000; ++i) {
    const Vec3 a = a0 + (a1 - a0) * (i / 1000.0);
    const auto f = contact_features(sq, Pose2::from(a), tri, pb);
    EXPECT_LE(std::abs(f.gap - prev.gap), (a1 - a0).norm() / 1000.0 * lever);
    prev = f;
  }
}
