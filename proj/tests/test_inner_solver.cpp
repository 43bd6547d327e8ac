#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cfg/inner_solver.hpp"
#include "support.hpp"

using namespace cfg;
using cfg::testing::scene_path;

namespace {

LineSample quad(double a) { return {(a - 1) * (a - 1), 2 * (a - 1), 2.0}; }

}  // namespace

TEST(ExactLinesearch, Quadratic) { EXPECT_NEAR(exact_linesearch(quad), 1.0, 1e-14); }

TEST(ExactLinesearch, PiecewiseQuadraticMatchesGrid) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    VectorXd r0(6), d(6);
    for (int i = 0; i < 6; ++i) {
      r0(i) = n(rng);
      d(i) = n(rng);
    }
    auto phi = [&](double a) {
      const VectorXd r = r0 + a * d;
      LineSample s;
      for (int i = 0; i < 6; ++i)
        if (r(i) < 0.0) {
          s.value += 0.5 * r(i) * r(i);
          s.slope += r(i) * d(i);
          s.curvature += d(i) * d(i);
        }
      return s;
    };
    if (!(phi(0.0).slope < 0.0)) continue;
    const double alpha = exact_linesearch(phi);
    // Dense grid oracle refined around its best cell.
    double best = 0.0, best_v = phi(0.0).value;
    for (int i = 1; i <= 200000; ++i) {
      const double a = 20.0 * i / 200000.0;
      if (phi(a).value < best_v) {
        best_v = phi(a).value;
        best = a;
      }
    }
    if (best >= 20.0 - 1e-9) continue;  // minimizer beyond the grid
    EXPECT_LE(phi(alpha).value, best_v + 1e-12);
    EXPECT_LT(std::abs(phi(alpha).slope), 1e-10);
    // The minimizer is unique only where some active term has curvature.
    if (phi(best).curvature > 1e-8) {
      EXPECT_NEAR(alpha, best, 2e-4);
    }
  }
}

TEST(ExactLinesearch, DecreasingReturnsBoundary) {
  LinesearchOptions opt;
  opt.alpha_max = 8.0;
  EXPECT_EQ(exact_linesearch([](double a) { return LineSample{-a, -1.0, 0.0}; }, opt), 8.0);
}

TEST(ExactLinesearch, AscentDirectionThrows) {
  EXPECT_THROW(exact_linesearch([](double a) { return LineSample{a, 1.0, 0.0}; }), InvalidArgument);
}

TEST(SolveConditional, DiscOnGround) {
  ContactFactorGraph g(load_scene(scene_path("disc_ground.json")), AssemblyTask::Static, 1);
  const auto sol = solve_conditional(g, Vec3(0.0, 0.1, 0.0));
  const int l = g.layout().lambda_index(0, 0, 0);
  EXPECT_NEAR(sol.x(l), 0.0, 1e-9);
  EXPECT_NEAR(sol.x(l + 1), 1.0, 1e-9);
  EXPECT_LT(sol.optimal_energy, 1e-12);
  EXPECT_LE(sol.grad_norm, 1e-10);
  EXPECT_EQ(sol.score.size(), 3);
  EXPECT_LT(sol.score.norm(), 1e-8);
}

TEST(SolveConditional, FloatingActuatedDiscTakesOneNewtonStep) {
  Scene s = load_scene(scene_path("disc_ground.json"));
  s.bodies[0].actuated = true;
  ContactFactorGraph g(s, AssemblyTask::Static, 1);
  const auto sol = solve_conditional(g, Vec3(0.0, 2.0, 0.0));
  EXPECT_EQ(sol.iterations, 1);
  const int u = g.layout().u_index(0, 0, 0);
  EXPECT_NEAR(sol.x(u), 0.0, 1e-9);
  EXPECT_NEAR(sol.x(u + 1), 1.0, 1e-9);  // input holds the disc against gravity
  EXPECT_LT(sol.optimal_energy, 1e-18);
}

TEST(SolveConditional, SeparatedContactImpulseFadesWithGap) {
  ContactFactorGraph g(load_scene(scene_path("disc_ground.json")), AssemblyTask::Static, 1);
  const int l = g.layout().lambda_index(0, 0, 0);
  double previous = 2.0;
  for (double gap : {0.5, 2.0, 10.0}) {
    const VectorXd q = Vec3(0.0, 0.1 + gap, 0.0);
    const auto lin = g.linearize(q, true);
    const auto sol = solve_conditional(g, lin);
    // Complementarity (g lambda_n)^2 trades against the unit gravity impulse:
    // lambda_n = 1 / (1 + g^2).
    EXPECT_NEAR(sol.x(l), 0.0, 1e-9);
    EXPECT_NEAR(sol.x(l + 1), 1.0 / (1.0 + gap * gap), 1e-9);
    EXPECT_LT(sol.x(l + 1), previous);
    previous = sol.x(l + 1);
    EXPECT_NEAR(sol.optimal_energy, cfg::testing::gradient_oracle(lin, g.layout().dim_x), 1e-9);
  }
  EXPECT_LT(previous, 0.01);
}

TEST(SolveConditional, MatchesFirstOrderOracleOnRandomInstances) {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 60; ++i) {
    auto inst = cfg::testing::random_small_instance(rng);
    const auto lin = inst.graph->linearize(inst.q, true);
    const auto sol = solve_conditional(*inst.graph, lin);
    ASSERT_LE(inst.graph->layout().dim_x, 6 * inst.graph->layout().num_cases);
    EXPECT_LE(sol.grad_norm, 1e-10);
    EXPECT_LE(sol.iterations, 100);
    EXPECT_NEAR(sol.optimal_energy, cfg::testing::gradient_oracle(lin, inst.graph->layout().dim_x), 1e-9);
    for (std::size_t k = 1; k < sol.trace.size(); ++k) EXPECT_LE(sol.trace[k].energy, sol.trace[k - 1].energy);
  }
}

TEST(SolveConditional, BlockFactorizationMatchesDense) {
  ContactFactorGraph g(load_scene(scene_path("pivot_box.json")), AssemblyTask::Stick, 5);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 5; ++trial) {
    VectorXd q = g.initial_q();
    for (int i = 0; i < q.size(); ++i) q(i) += 0.01 * n(rng);
    const auto lin = g.linearize(q, true);
    InnerOptions dense;
    dense.dense_factorization = true;
    const auto a = solve_conditional(g, lin);
    const auto b = solve_conditional(g, lin, dense);
    EXPECT_NEAR(a.optimal_energy, b.optimal_energy, 1e-12);
    // Same linear solve from the same point, whether or not the minimizer is unique.
    const detail::ConditionalProblem prob(g, lin);
    VectorXd x(g.layout().dim_x);
    for (int i = 0; i < x.size(); ++i) x(i) = n(rng);
    VectorXd ga, gb;
    std::vector<MatrixXd> ba, bb;
    prob.derivatives(x, false, ga, ba);
    prob.derivatives(x, true, gb, bb);
    EXPECT_LT((ga - gb).norm(), 1e-12 * std::max(1.0, ga.norm()));
    // The dense Hessian is exactly the direct sum of the group blocks.
    MatrixXd assembled = MatrixXd::Zero(x.size(), x.size());
    const auto& groups = g.plan().groups;
    for (std::size_t k = 0; k < groups.size(); ++k)
      for (std::size_t i = 0; i < groups[k].size(); ++i)
        for (std::size_t j = 0; j < groups[k].size(); ++j)
          assembled(groups[k][i], groups[k][j]) = ba[k](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    EXPECT_LT((assembled - bb[0]).norm(), 1e-12 * std::max(1.0, bb[0].norm()));
    // Both directions solve the dense regularized system up to backward error.
    MatrixXd Hr = bb[0];
    Hr.diagonal().array() += 1e-10;
    for (const VectorXd& d : {prob.newton_direction(ga, ba, false, 1e-10), prob.newton_direction(gb, bb, true, 1e-10)})
      EXPECT_LT((Hr * d + gb).norm(), 1e-10 * (Hr.norm() * d.norm() + gb.norm()));
  }
  // On small problems with a unique minimizer the solutions themselves agree.
  std::mt19937_64 rng2(12);
  for (int i = 0; i < 30; ++i) {
    auto inst = cfg::testing::random_small_instance(rng2);
    const auto lin = inst.graph->linearize(inst.q, false);
    InnerOptions dense;
    dense.dense_factorization = true;
    const auto a = solve_conditional(*inst.graph, lin);
    const auto b = solve_conditional(*inst.graph, lin, dense);
    VectorXd gr;
    std::vector<MatrixXd> H;
    detail::ConditionalProblem(*inst.graph, lin).derivatives(a.x, true, gr, H);
    if (Eigen::SelfAdjointEigenSolver<MatrixXd>(H[0]).eigenvalues().minCoeff() < 1e-6) continue;
    EXPECT_LT((a.x - b.x).lpNorm<Eigen::Infinity>(), 1e-10);
  }
}

TEST(SolveConditional, KnotBlocksAreIndependent) {
  ContactFactorGraph g(load_scene(scene_path("pivot_box.json")), AssemblyTask::Stick, 5);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  VectorXd q = g.initial_q();
  for (int i = 0; i < q.size(); ++i) q(i) += 0.01 * n(rng);
  const auto lin = g.linearize(q, true);
  const auto base = solve_conditional(g, lin);
  const auto& plan = g.plan();
  // Perturb the start of knot 3 only; every other knot is unaffected.
  VectorXd warm = base.x;
  for (int v : plan.blocks[2].ordering()) warm(v) = 0.0;
  InnerOptions opt;
  opt.max_iterations = 100;
  const auto again = solve_conditional(g, lin, opt, &warm);
  for (const auto& blk : plan.blocks) {
    if (blk.knot == 3) continue;
    for (int v : blk.ordering()) EXPECT_NEAR(again.x(v), base.x(v), 1e-10);
  }
}

TEST(SolveConditional, WarmStartNeverRaisesEnergy) {
  ContactFactorGraph g(load_scene(scene_path("placement_square.json")), AssemblyTask::Static, 1);
  const VectorXd q = Vec3(0.01, 0.12, 0.3);
  const auto lin = g.linearize(q, true);
  const VectorXd bad = VectorXd::Constant(g.layout().dim_x, 50.0);
  const auto a = solve_conditional(g, lin, {}, &bad);
  const auto b = solve_conditional(g, lin);
  EXPECT_NEAR(a.optimal_energy, b.optimal_energy, 1e-12);
}

TEST(SolveConditional, IterationLimitRaisesNonConvergence) {
  ContactFactorGraph g(load_scene(scene_path("pivot_box.json")), AssemblyTask::Stick, 5);
  InnerOptions opt;
  opt.max_iterations = 1;
  VectorXd q = g.initial_q();
  q.array() += 0.02;
  try {
    solve_conditional(g, q, opt);
    FAIL() << "expected non-convergence";
  } catch (const NonConvergence& e) {
    EXPECT_EQ(e.iterations(), 1);
    EXPECT_GT(e.residual(), 1e-10);
  }
}

TEST(SolveConditional, SuperlinearTail) {
  ContactFactorGraph g(load_scene(scene_path("placement_square.json")), AssemblyTask::Static, 1);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const VectorXd q = Vec3(0.05 * u(rng), 0.12 + 0.03 * u(rng), 3.0 * u(rng));
    const auto sol = solve_conditional(g, q);
    const auto& t = sol.trace;
    if (t.size() < 4) continue;
    const std::size_t n = t.size();
    for (std::size_t k = n - 3; k + 1 < n; ++k) {
      if (t[k].grad_norm < 1e-12 || t[k].grad_norm > 1e-2) continue;
      EXPECT_LE(t[k + 1].grad_norm, 1e3 * std::pow(t[k].grad_norm, 1.5));
      ++checked;
    }
  }
  EXPECT_GT(checked, 0);
}

TEST(EnvelopeScore, MatchesFiniteDifferencesOfOptimalValue) {
  ContactFactorGraph g(load_scene(scene_path("placement_square.json")), AssemblyTask::Static, 1);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  InnerOptions opt;
  opt.tolerance = 1e-12;
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const VectorXd q = Vec3(0.1 * u(rng), 0.15 + 0.08 * u(rng), 3.0 * u(rng));
    const auto sol = solve_conditional(g, q, opt);
    for (int c = 0; c < 3; ++c) {
      VectorXd qp = q, qm = q;
      qp(c) += h;
      qm(c) -= h;
      const double fd = (conditional_energy(g, qp, opt) - conditional_energy(g, qm, opt)) / (2 * h);
      EXPECT_LE(std::abs(-sol.score(c) - fd), 1e-4 * std::max(std::abs(fd), std::abs(sol.score(c))) + 1e-9)
          << "trial " << trial << " coord " << c;
    }
  }
}

TEST(EnvelopeScore, ErrorShrinksQuadraticallyWithStep) {
  ContactFactorGraph g(load_scene(scene_path("placement_square.json")), AssemblyTask::Static, 1);
  InnerOptions opt;
  opt.tolerance = 1e-12;
  const VectorXd q = Vec3(0.02, 0.13, 0.35);
  const auto sol = solve_conditional(g, q, opt);
  const VectorXd e = Vec3(0.3, 0.5, 0.8).normalized();
  auto err = [&](double h) {
    const double fd = (conditional_energy(g, q + h * e, opt) - conditional_energy(g, q - h * e, opt)) / (2 * h);
    return std::abs(fd + sol.score.dot(e));
  };
  const double e1 = err(1e-2), e2 = err(5e-3);
  EXPECT_LT(e2, 0.35 * e1);
}
