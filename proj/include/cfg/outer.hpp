#pragma once

// Inference over configurations q on p(q) ∝ exp(-V(q)), where V is the
// conditional optimal energy. MAP runs BFGS with Armijo backtracking; SVGD
// moves a particle ensemble with kernel-averaged scores plus repulsion.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "cfg/errors.hpp"
#include "cfg/inner_solver.hpp"
#include "cfg/parallel.hpp"

namespace cfg {

/// Value and gradient of an energy over q. `x` carries the inner solution
/// (forces and inputs) when the energy comes from a conditional solve.
struct Evaluation {
  double energy = 0.0;
  VectorXd gradient;
  VectorXd x;
  int inner_iterations = 0;
};

/// Energy oracle. `warm` is the previous inner solution, or null. Failures
/// are reported by throwing a cfg::Error.
using Objective = std::function<Evaluation(const VectorXd& q, const VectorXd* warm)>;

/// V(q) and dV/dq = -score through the conditional solve.
inline Objective conditional_objective(const ContactFactorGraph& g, InnerOptions opt = {}) {
  return [&g, opt](const VectorXd& q, const VectorXd* warm) {
    const auto sol = solve_conditional(g, q, opt, warm);
    return Evaluation{sol.optimal_energy, -sol.score, sol.x, sol.iterations};
  };
}

namespace detail {

struct Stopwatch {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  }
};

}  // namespace detail

struct BfgsOptions {
  double tol = 1e-6;  // on the gradient norm
  int max_iterations = 200;
  double c1 = 1e-4;
  double shrink = 0.5;
  int max_backtracks = 40;
  long max_evaluations = 0;  // 0: unlimited
  double curvature_eps = 1e-12;
  std::function<void(int, const MatrixXd&)> on_inverse_hessian;  // called after every update
};

struct OuterIterate {
  int iteration = 0;
  double energy = 0.0;
  double grad_norm = 0.0;
  int inner_iterations = 0;
  double step = 0.0;
  long evaluations = 0;
  double elapsed_ms = 0.0;  // wall clock since the start of the run
};

struct MapResult {
  VectorXd q;
  Evaluation at;  // energy, gradient and inner solution at q
  bool converged = false;
  int iterations = 0;
  long evaluations = 0;
  std::vector<OuterIterate> trace;
  MatrixXd inverse_hessian;
  std::string message;
};

/// Quasi-Newton descent on a smooth energy: inverse-Hessian BFGS with Armijo
/// backtracking. Failed trial evaluations shrink the step.
inline MapResult bfgs_minimize(const Objective& f, const VectorXd& z0, const BfgsOptions& opt = {}) {
  if (!z0.allFinite()) throw InvalidArgument("initial point must be finite");
  if (!(opt.tol > 0.0) || opt.max_iterations < 0 || !(opt.c1 > 0.0 && opt.c1 < 1.0) ||
      !(opt.shrink > 0.0 && opt.shrink < 1.0))
    throw InvalidArgument("invalid BFGS options");
  const detail::Stopwatch clock;
  MapResult res;
  res.q = z0;
  res.at = f(z0, nullptr);
  res.evaluations = 1;
  const auto n = z0.size();
  auto scaled_identity = [&](const VectorXd& g) {
    const double gn = g.norm();
    return MatrixXd(MatrixXd::Identity(n, n) / (gn > 0.0 ? gn : 1.0));
  };
  MatrixXd B = scaled_identity(res.at.gradient);
  int inner = res.at.inner_iterations;
  for (int l = 0;; ++l) {
    const double gn = res.at.gradient.norm();
    res.trace.push_back({l, res.at.energy, gn, inner, 0.0, res.evaluations, clock.ms()});
    res.iterations = l;
    if (gn < opt.tol) {
      res.converged = true;
      break;
    }
    if (l >= opt.max_iterations) {
      res.message = "iteration limit reached";
      break;
    }
    inner = 0;
    bool accepted = false, budget = false;
    Evaluation trial;
    VectorXd next;
    double alpha = 1.0;
    for (int attempt = 0; attempt < 2 && !accepted && !budget; ++attempt) {
      if (attempt == 1) B = scaled_identity(res.at.gradient);  // restart from steepest descent
      VectorXd d = -B * res.at.gradient;
      double slope = res.at.gradient.dot(d);
      if (!(slope < 0.0)) {
        B = scaled_identity(res.at.gradient);
        d = -B * res.at.gradient;
        slope = res.at.gradient.dot(d);
      }
      alpha = 1.0;
      for (int bt = 0; bt <= opt.max_backtracks; ++bt, alpha *= opt.shrink) {
        if (opt.max_evaluations > 0 && res.evaluations >= opt.max_evaluations) {
          budget = true;
          break;
        }
        next = res.q + alpha * d;
        ++res.evaluations;
        try {
          trial = f(next, &res.at.x);
        } catch (const Error&) {
          continue;
        }
        inner += trial.inner_iterations;
        if (trial.energy <= res.at.energy + opt.c1 * alpha * slope) {
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) {
      res.message = budget ? "evaluation budget exhausted" : "linesearch failed";
      res.trace.back().inner_iterations += inner;
      break;
    }
    const VectorXd s = next - res.q;
    const VectorXd y = trial.gradient - res.at.gradient;
    const double sy = s.dot(y);
    if (sy > opt.curvature_eps) {
      const double rho = 1.0 / sy;
      const MatrixXd V = MatrixXd::Identity(n, n) - rho * y * s.transpose();
      B = V.transpose() * B * V + rho * s * s.transpose();
      B = 0.5 * (B + B.transpose());
      if (opt.on_inverse_hessian) opt.on_inverse_hessian(l, B);
    }
    res.q = next;
    res.at = std::move(trial);
    res.trace.back().step = alpha;
  }
  res.inverse_hessian = B;
  return res;
}

struct MapOptions {
  BfgsOptions bfgs;
  InnerOptions inner;
};

/// MAP over q for a generic energy oracle.
inline MapResult map_infer(const Objective& f, const VectorXd& q0, const BfgsOptions& opt = {}) {
  return bfgs_minimize(f, q0, opt);
}

/// MAP over q on the conditioned distribution of a contact factor graph.
/// Throws if the inner problem cannot be solved at q0.
inline MapResult map_infer(const ContactFactorGraph& g, const VectorXd& q0, const MapOptions& opt = {}) {
  if (q0.size() != g.layout().dim_q) throw InvalidArgument("q0 does not match the layout");
  return bfgs_minimize(conditional_objective(g, opt.inner), q0, opt.bfgs);
}

struct KernelValue {
  double value = 0.0;
  VectorXd gradient;  // with respect to qa
};

inline KernelValue rbf_kernel(const VectorXd& qa, const VectorXd& qb, double h) {
  if (!(h > 0.0)) throw InvalidArgument("kernel bandwidth must be positive");
  if (qa.size() != qb.size()) throw InvalidArgument("kernel arguments differ in dimension");
  const VectorXd d = qa - qb;
  const double v = std::exp(-d.squaredNorm() / (2.0 * h * h));
  return {v, -d / (h * h) * v};
}

/// Median heuristic: h^2 = median pairwise squared distance / (2 log(S + 1)).
inline double median_bandwidth(const std::vector<VectorXd>& particles) {
  const std::size_t s = particles.size();
  std::vector<double> d2;
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = i + 1; j < s; ++j) d2.push_back((particles[i] - particles[j]).squaredNorm());
  if (d2.empty()) return 1.0;
  const auto mid = d2.begin() + static_cast<std::ptrdiff_t>(d2.size() / 2);
  std::nth_element(d2.begin(), mid, d2.end());
  double med = *mid;
  if (d2.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d2.begin(), mid));
  med = std::max(med, 1e-24);
  return std::sqrt(med / (2.0 * std::log(static_cast<double>(s) + 1.0)));
}

struct SvgdOptions {
  int iterations = 300;
  double step = 0.1;         // base step of the per-coordinate adaptive scheme
  double temperature = 1.0;  // target exp(-V / T)
  double tol = 1e-6;         // stop when the mean update norm falls below
  double bandwidth = 0.0;    // 0: median heuristic every iteration
  int threads = 1;
  double adagrad_eps = 1e-12;
};

struct SvgdIterate {
  int iteration = 0;
  double mean_energy = 0.0;
  double mean_eta_norm = 0.0;
  double mean_update_norm = 0.0;
  double bandwidth = 0.0;
  int frozen = 0;
  int inner_iterations = 0;
  long evaluations = 0;
  double elapsed_ms = 0.0;
};

struct ParticleEnsemble {
  std::vector<VectorXd> particles;
  std::vector<double> energy;  // V at the final particles
  std::vector<VectorXd> score;  // -dV/dq (untempered)
  std::vector<VectorXd> x;      // inner solutions
  std::vector<bool> valid;      // final evaluation succeeded
  int iterations = 0;
  double bandwidth = 0.0;
  bool converged = false;
  long evaluations = 0;
  std::vector<SvgdIterate> trace;
};

namespace detail {

struct ParticleEval {
  bool ok = false;
  Evaluation e;
};

inline std::vector<ParticleEval> evaluate_particles(const Objective& f, const std::vector<VectorXd>& q,
                                                    const std::vector<VectorXd>& warm, int threads) {
  std::vector<ParticleEval> out(q.size());
  parallel_for(static_cast<int>(q.size()), threads, [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      out[k].e = f(q[k], warm[k].size() ? &warm[k] : nullptr);
      out[k].ok = out[k].e.gradient.allFinite() && std::isfinite(out[k].e.energy);
    } catch (const Error&) {
      out[k].ok = false;
    }
  });
  return out;
}

}  // namespace detail

/// Stein variational gradient descent. Particles whose evaluation fails are
/// frozen for that iteration and contribute nothing to the others.
inline ParticleEnsemble svgd_infer(const Objective& f, std::vector<VectorXd> particles, const SvgdOptions& opt = {}) {
  if (particles.empty()) throw InvalidArgument("SVGD needs at least one particle");
  const auto dim = particles[0].size();
  for (const auto& p : particles)
    if (p.size() != dim || !p.allFinite()) throw InvalidArgument("particles must be finite and equally sized");
  if (!(opt.step > 0.0) || !(opt.temperature > 0.0) || opt.iterations < 0)
    throw InvalidArgument("invalid SVGD options");
  const std::size_t S = particles.size();
  const detail::Stopwatch clock;
  ParticleEnsemble ens;
  std::vector<VectorXd> warm(S), accum(S, VectorXd::Zero(dim));
  for (int t = 0;; ++t) {
    const auto evals = detail::evaluate_particles(f, particles, warm, opt.threads);
    ens.evaluations += static_cast<long>(S);
    std::vector<std::size_t> active;
    SvgdIterate rec;
    rec.iteration = t;
    for (std::size_t i = 0; i < S; ++i) {
      if (evals[i].ok) {
        active.push_back(i);
        warm[i] = evals[i].e.x;
        rec.mean_energy += evals[i].e.energy;
        rec.inner_iterations += evals[i].e.inner_iterations;
      }
    }
    rec.frozen = static_cast<int>(S - active.size());
    rec.evaluations = ens.evaluations;
    rec.elapsed_ms = clock.ms();
    if (active.empty()) throw EnsembleError("every particle failed its inner solve");
    rec.mean_energy /= static_cast<double>(active.size());

    const bool last = t >= opt.iterations || (t > 0 && ens.trace.back().mean_update_norm < opt.tol);
    if (last) {
      ens.converged = t > 0 && ens.trace.back().mean_update_norm < opt.tol;
      ens.iterations = t;
      ens.energy.assign(S, std::numeric_limits<double>::quiet_NaN());
      ens.score.assign(S, VectorXd());
      ens.x.assign(S, VectorXd());
      ens.valid.assign(S, false);
      for (std::size_t i : active) {
        ens.energy[i] = evals[i].e.energy;
        ens.score[i] = -evals[i].e.gradient;
        ens.x[i] = evals[i].e.x;
        ens.valid[i] = true;
      }
      ens.particles = particles;
      ens.trace.push_back(rec);
      break;
    }

    const double h = opt.bandwidth > 0.0 ? opt.bandwidth : median_bandwidth(particles);
    rec.bandwidth = h;
    ens.bandwidth = h;
    const double inv_s = 1.0 / static_cast<double>(active.size());
    std::vector<VectorXd> eta(S, VectorXd::Zero(dim));
    for (std::size_t i : active) {
      for (std::size_t j : active) {
        const KernelValue k = rbf_kernel(particles[j], particles[i], h);
        eta[i] += k.value * (-evals[j].e.gradient / opt.temperature) + k.gradient;
      }
      eta[i] *= inv_s;
    }
    for (std::size_t i : active) {
      accum[i].array() += eta[i].array().square();
      const VectorXd delta =
          opt.step * (eta[i].array() / (opt.adagrad_eps + accum[i].array().sqrt())).matrix();
      particles[i] += delta;
      rec.mean_eta_norm += eta[i].norm();
      rec.mean_update_norm += delta.norm();
    }
    rec.mean_eta_norm *= inv_s;
    rec.mean_update_norm *= inv_s;
    ens.trace.push_back(rec);
  }
  return ens;
}

/// SVGD on the conditioned distribution of a contact factor graph.
inline ParticleEnsemble svgd_infer(const ContactFactorGraph& g, std::vector<VectorXd> particles,
                                   const SvgdOptions& opt = {}, const InnerOptions& inner = {}) {
  for (const auto& p : particles)
    if (p.size() != g.layout().dim_q) throw InvalidArgument("particle does not match the layout");
  return svgd_infer(conditional_objective(g, inner), std::move(particles), opt);
}

}  // namespace cfg
