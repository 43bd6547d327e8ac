#include <gtest/gtest.h>

#include <random>

#include "cfg/graph.hpp"

using namespace cfg;

namespace {

Scene load(const std::string& name) { return load_scene(std::string(CFG_SOURCE_DIR) + "/scenes/" + name); }

int count(const std::vector<FactorSpec>& fs, FactorLabel l) {
  return static_cast<int>(std::count_if(fs.begin(), fs.end(), [&](const auto& f) { return f.label == l; }));
}

// Central differences of every factor's residual and energy in q at fixed x.
void expect_q_derivatives_match(const ContactFactorGraph& g, const VectorXd& q, const VectorXd& x) {
  const auto lin = g.linearize(q, true);
  const double h = 1e-6;
  for (int c = 0; c < g.layout().dim_q; ++c) {
    VectorXd qp = q, qm = q;
    qp(c) += h;
    qm(c) -= h;
    const auto lp = g.linearize(qp, false), lm = g.linearize(qm, false);
    for (std::size_t i = 0; i < lin.factors.size(); ++i) {
      const auto& f = lin.factors[i];
      const VectorXd fd = (lp.factors[i].residual(x) - lm.factors[i].residual(x)) / (2 * h);
      const double efd = (lp.factors[i].energy(x) - lm.factors[i].energy(x)) / (2 * h);
      VectorXd an = VectorXd::Zero(f.rows());
      double ean = 0.0;
      const auto it = std::find(f.q_cols.begin(), f.q_cols.end(), c);
      if (it != f.q_cols.end()) {
        const auto l = static_cast<Eigen::Index>(it - f.q_cols.begin());
        an = f.residual_q_jacobian(x).col(l);
        ean = f.energy_q_gradient(x)(l);
      }
      const double scale = std::max(1.0, fd.lpNorm<Eigen::Infinity>());
      EXPECT_LT((fd - an).lpNorm<Eigen::Infinity>(), 1e-5 * scale)
          << to_string(f.label) << " factor " << i << " q col " << c;
      EXPECT_LT(std::abs(efd - ean), 1e-5 * std::max(1.0, std::abs(efd)))
          << to_string(f.label) << " energy, factor " << i << " q col " << c;
    }
  }
}

}  // namespace

TEST(FactorSet, StaticCounting) {
  std::vector<CandidateMode> modes(3);
  FactorSetOptions opt;
  opt.cases = 3;
  const auto fs = build_factor_set(Task::Static, 1, modes, opt);
  EXPECT_EQ(fs.size(), 3u * 3u + 3u);
  EXPECT_EQ(count(fs, FactorLabel::NonPenetration), 3);
  EXPECT_EQ(count(fs, FactorLabel::Complementarity), 3);
  EXPECT_EQ(count(fs, FactorLabel::CoulombCone), 3);
  EXPECT_EQ(count(fs, FactorLabel::QuasiDynamics), 3);
}

TEST(FactorSet, StickCounting) {
  std::vector<CandidateMode> modes{{ContactMode::Stick}};
  FactorSetOptions opt;
  opt.dynamics_knots = {1, 2, 3, 4};
  const auto fs = build_factor_set(Task::Stick, 1, modes, opt);
  EXPECT_EQ(count(fs, FactorLabel::Touch), 4);
  EXPECT_EQ(count(fs, FactorLabel::NoSlip), 4);
  EXPECT_EQ(count(fs, FactorLabel::CoulombCone), 4);
  EXPECT_EQ(count(fs, FactorLabel::QuasiDynamics), 4);
  EXPECT_EQ(fs.size(), 16u);
}

TEST(FactorSet, EmptyContactsIsModelError) {
  EXPECT_THROW(build_factor_set(Task::Static, 1, {}, {}), ModelError);
  std::vector<CandidateMode> free_only(2);
  EXPECT_THROW(build_factor_set(Task::Stick, 1, free_only, {}), ModelError);
}

TEST(QuasiDynamics, ResidualExamples) {
  const MatrixXd A = Vec3(1, 1, 0.1).asDiagonal();
  const VectorXd b = Vec3(0, -1, 0);
  const VectorXd dq = Vec3::Zero();
  // Disc resting on the ground: the contact impulse at the bottom point cancels gravity.
  MatrixXd Jc(2, 3);
  Jc << 1, 0, 0.1, 0, 1, 0;  // contact at (0, -0.1) relative to the centre
  const VectorXd r = quasi_dynamics_residual(A, dq, b, MatrixXd(0, 3), VectorXd(0), Jc, Vec2(0, 1));
  EXPECT_LT((r - Vec3(0, 0, 0)).norm(), 1e-15);
  const VectorXd r0 = quasi_dynamics_residual(A, dq, b, MatrixXd(0, 3), VectorXd(0), Jc, Vec2::Zero());
  EXPECT_LT((r0 + b).norm(), 1e-15);
  // Inputs spanning every DOF: u = A dq - b zeroes the residual.
  const VectorXd dq2 = Vec3(0.1, -0.2, 0.3);
  const VectorXd u = A * dq2 - b;
  const VectorXd r2 = quasi_dynamics_residual(A, dq2, b, MatrixXd::Identity(3, 3), u, MatrixXd(0, 3), VectorXd(0));
  EXPECT_LT(r2.norm(), 1e-15);
  EXPECT_THROW(quasi_dynamics_residual(A, dq, b, MatrixXd(0, 3), VectorXd(0), Jc, Vec3::Zero()), InvalidArgument);
}

TEST(FactorDerivatives, PlacementFactorsMatchFiniteDifferences) {
  ContactFactorGraph g(load("placement_square.json"), AssemblyTask::Static, 1);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    VectorXd q(3);
    q << 0.1 * u(rng), 0.15 + 0.1 * u(rng), 3.0 * u(rng);
    VectorXd x(g.layout().dim_x);
    for (int i = 0; i < x.size(); ++i) x(i) = u(rng);
    expect_q_derivatives_match(g, q, x);
  }
}

TEST(FactorDerivatives, PivotFactorsMatchFiniteDifferences) {
  Scene s = load("pivot_box.json");
  s.coulomb_perp = true;
  s.weights["input-prior"] = 0.5;
  s.priors.push_back({"finger", 2, Vec3(0.1, 0.2, 0.0), 1.0});
  ContactFactorGraph g(s, AssemblyTask::Stick, 3);
  EXPECT_GT(std::count_if(g.factors().begin(), g.factors().end(),
                          [](const auto& f) { return f.label == FactorLabel::CoulombPerp; }),
            0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    VectorXd q = g.initial_q();
    for (int i = 0; i < q.size(); ++i) q(i) += 0.03 * u(rng);
    VectorXd x(g.layout().dim_x);
    for (int i = 0; i < x.size(); ++i) x(i) = u(rng);
    expect_q_derivatives_match(g, q, x);
  }
}

TEST(FactorDerivatives, LShapeFactorsMatchFiniteDifferences) {
  ContactFactorGraph g(load("placement_Lshape.json"), AssemblyTask::Static, 1);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    VectorXd q(3);
    q << 0.1 * u(rng), 0.2 + 0.1 * u(rng), 3.0 * u(rng);
    VectorXd x(g.layout().dim_x);
    for (int i = 0; i < x.size(); ++i) x(i) = u(rng);
    expect_q_derivatives_match(g, q, x);
  }
}

TEST(Factors, ResidualsAreAffineInX) {
  ContactFactorGraph g(load("pivot_box.json"), AssemblyTask::Stick, 3);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VectorXd q = g.initial_q();
  for (int i = 0; i < q.size(); ++i) q(i) += 0.02 * u(rng);
  const auto lin = g.linearize(q, false);
  VectorXd a(g.layout().dim_x), b(g.layout().dim_x);
  for (int i = 0; i < a.size(); ++i) {
    a(i) = u(rng);
    b(i) = u(rng);
  }
  for (const auto& f : lin.factors) {
    const VectorXd mid = f.residual(0.3 * a + 0.7 * b);
    EXPECT_LT((mid - (0.3 * f.residual(a) + 0.7 * f.residual(b))).norm(), 1e-12);
  }
}
