#pragma once

// Comparison methods that use the same energies as the primary inference:
// direct quasi-Newton descent on the joint (q, x), an affine-invariant
// ensemble sampler, and simulated annealing.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "cfg/outer.hpp"

namespace cfg {

struct BaselineResult {
  std::string method;
  VectorXd q;
  VectorXd x;
  double energy = std::numeric_limits<double>::infinity();
  bool converged = false;
  long evaluations = 0;
  // Samplers store the mean move in grad_norm, and the acceptance (MCMC) or
  // temperature (SA) in step.
  std::vector<OuterIterate> trace;
  std::vector<VectorXd> samples;
  double acceptance_rate = 0.0;
  std::string message;
};

/// Joint energy E(q, x) over the stacked vector z = (q, x), or over x alone
/// at the fixed `q` when `optimize_q` is false.
inline Objective joint_objective(const ContactFactorGraph& g, bool optimize_q, VectorXd q_fixed = VectorXd()) {
  const int nq = g.layout().dim_q, nx = g.layout().dim_x;
  if (!optimize_q && q_fixed.size() != nq) throw InvalidArgument("fixed configuration does not match the layout");
  return [&g, optimize_q, q_fixed, nq, nx](const VectorXd& z, const VectorXd*) {
    if (z.size() != (optimize_q ? nq + nx : nx)) throw InvalidArgument("joint vector does not match the layout");
    const VectorXd q = optimize_q ? VectorXd(z.head(nq)) : q_fixed;
    const VectorXd x = z.tail(nx);
    const auto lin = g.linearize(q, optimize_q);
    Evaluation e;
    e.energy = joint_energy(lin, x).total;
    const VectorXd gx = energy_x_gradient(lin, x);
    if (optimize_q) {
      e.gradient.resize(nq + nx);
      e.gradient << energy_q_gradient(lin, x, nq), gx;
    } else {
      e.gradient = gx;
    }
    e.x = x;
    return e;
  };
}

/// Quasi-Newton descent on a generic energy, with the same rules as MAP.
inline BaselineResult direct_joint_opt(const Objective& f, const VectorXd& z0, const BfgsOptions& opt = {}) {
  const MapResult r = bfgs_minimize(f, z0, opt);
  BaselineResult out;
  out.method = "direct";
  out.q = r.q;
  out.energy = r.at.energy;
  out.converged = r.converged;
  out.evaluations = r.evaluations;
  out.trace = r.trace;
  out.message = r.message;
  return out;
}

/// Direct descent on the joint energy of a graph from (q0, x0).
inline BaselineResult direct_joint_opt(const ContactFactorGraph& g, const VectorXd& q0, const VectorXd& x0,
                                       const BfgsOptions& opt = {}) {
  const int nq = g.layout().dim_q, nx = g.layout().dim_x;
  if (q0.size() != nq || x0.size() != nx) throw InvalidArgument("initial point does not match the layout");
  VectorXd z0(nq + nx);
  z0 << q0, x0;
  BaselineResult out = direct_joint_opt(joint_objective(g, true), z0, opt);
  out.x = out.q.tail(nx);
  out.q = VectorXd(out.q.head(nq));
  return out;
}

using LogDensity = std::function<double(const VectorXd&)>;

struct McmcOptions {
  int steps = 200;
  int burn_in = 50;
  double a = 2.0;  // stretch scale
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Stretch scale z drawn from g(z) ∝ 1/sqrt(z) on [1/a, a].
inline double draw_stretch(std::mt19937_64& rng, double a) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double t = (a - 1.0) * u(rng) + 1.0;
  return t * t / a;
}

/// Log acceptance ratio of a stretch proposal in dimension d.
inline double stretch_log_ratio(Eigen::Index d, double z, double lp_new, double lp_old) {
  return static_cast<double>(d - 1) * std::log(z) + lp_new - lp_old;
}

/// Affine-invariant ensemble sampler. Walkers update in two halves, each
/// against the other half's current positions. Densities that throw count as
/// zero.
inline BaselineResult ensemble_mcmc(const LogDensity& log_p, std::vector<VectorXd> walkers,
                                    const McmcOptions& opt = {}) {
  if (walkers.empty()) throw InvalidArgument("no walkers");
  const auto d = walkers[0].size();
  for (const auto& w : walkers)
    if (w.size() != d || !w.allFinite()) throw InvalidArgument("walkers must be finite and equally sized");
  const int n = static_cast<int>(walkers.size());
  if (n < 2 * d + 2) throw InvalidArgument("ensemble needs at least 2 * dim + 2 walkers");
  if (!(opt.a > 1.0) || opt.steps < 0 || opt.burn_in < 0) throw InvalidArgument("invalid sampler options");
  const detail::Stopwatch clock;
  auto safe_log_p = [&](const VectorXd& q) {
    try {
      const double v = log_p(q);
      return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
    } catch (const Error&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  BaselineResult out;
  out.method = "mcmc";
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> lp(static_cast<std::size_t>(n));
  parallel_for(n, opt.threads, [&](int i) { lp[static_cast<std::size_t>(i)] = safe_log_p(walkers[static_cast<std::size_t>(i)]); });
  out.evaluations = n;
  long accepted_total = 0, proposed_total = 0;
  const int half = n / 2;
  for (int step = 0; step < opt.steps; ++step) {
    long accepted = 0;
    double moved = 0.0;
    for (int part = 0; part < 2; ++part) {
      const int lo = part == 0 ? 0 : half, hi = part == 0 ? half : n;
      const int olo = part == 0 ? half : 0, ohi = part == 0 ? n : half;
      const int m = hi - lo;
      std::vector<VectorXd> prop(static_cast<std::size_t>(m));
      std::vector<double> z(static_cast<std::size_t>(m)), r(static_cast<std::size_t>(m));
      std::uniform_int_distribution<int> pick(olo, ohi - 1);
      for (int k = 0; k < m; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        z[kk] = draw_stretch(rng, opt.a);
        const VectorXd& other = walkers[static_cast<std::size_t>(pick(rng))];
        prop[kk] = other + z[kk] * (walkers[static_cast<std::size_t>(lo + k)] - other);
        r[kk] = u(rng);
      }
      std::vector<double> lp_new(static_cast<std::size_t>(m));
      parallel_for(m, opt.threads, [&](int k) { lp_new[static_cast<std::size_t>(k)] = safe_log_p(prop[static_cast<std::size_t>(k)]); });
      out.evaluations += m;
      for (int k = 0; k < m; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        const auto i = static_cast<std::size_t>(lo + k);
        if (std::log(r[kk]) < stretch_log_ratio(d, z[kk], lp_new[kk], lp[i])) {
          moved += (prop[kk] - walkers[i]).norm();
          walkers[i] = prop[kk];
          lp[i] = lp_new[kk];
          ++accepted;
        }
      }
    }
    accepted_total += accepted;
    proposed_total += n;
    double mean_energy = 0.0, best = -std::numeric_limits<double>::infinity();
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < walkers.size(); ++i) {
      mean_energy -= lp[i];
      if (lp[i] > best) best = lp[i], best_i = i;
    }
    if (-best < out.energy) {
      out.energy = -best;
      out.q = walkers[best_i];
    }
    out.trace.push_back(
        {step, mean_energy / n, moved / n, 0, static_cast<double>(accepted) / n, out.evaluations, clock.ms()});
    if (step >= opt.burn_in) out.samples.insert(out.samples.end(), walkers.begin(), walkers.end());
  }
  out.acceptance_rate = proposed_total ? static_cast<double>(accepted_total) / static_cast<double>(proposed_total) : 0.0;
  out.converged = true;
  return out;
}

/// Log density -V(q)/T through the conditional solve.
inline LogDensity conditional_log_density(const ContactFactorGraph& g, double temperature = 1.0,
                                          InnerOptions opt = {}) {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  return [&g, temperature, opt](const VectorXd& q) {
    return -solve_conditional(g, g.linearize(q, false), opt).optimal_energy / temperature;
  };
}

using EnergyFn = std::function<double(const VectorXd&)>;

struct SaOptions {
  double t0 = 1.0;
  double decay = 0.995;
  int steps = 2000;
  double scale = 0.1;  // proposal standard deviation at T = t0
  std::uint64_t seed = 0;
};

/// Metropolis sampling on exp(-V/T) with a geometric schedule T_k = t0 decay^k
/// and proposal spread scale * sqrt(T_k / t0). Returns the best point seen.
inline BaselineResult simulated_annealing(const EnergyFn& energy, const VectorXd& q0, const SaOptions& opt = {}) {
  if (!(opt.decay > 0.0 && opt.decay < 1.0) || opt.t0 < 0.0 || opt.scale < 0.0 || opt.steps < 0)
    throw InvalidArgument("invalid annealing schedule");
  const detail::Stopwatch clock;
  auto safe_energy = [&](const VectorXd& q) {
    try {
      const double v = energy(q);
      return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  BaselineResult out;
  out.method = "sa";
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VectorXd q = q0;
  double e = safe_energy(q);
  out.evaluations = 1;
  out.q = q;
  out.energy = e;
  double T = opt.t0;
  long accepted = 0;
  for (int k = 0; k < opt.steps; ++k, T *= opt.decay) {
    const double spread = opt.t0 > 0.0 ? opt.scale * std::sqrt(T / opt.t0) : opt.scale;
    VectorXd prop = q;
    for (Eigen::Index i = 0; i < q.size(); ++i) prop(i) += spread * n01(rng);
    const double ep = safe_energy(prop);
    ++out.evaluations;
    const double r = u(rng);
    const double de = ep - e;
    const bool accept = de <= 0.0 || (T > 0.0 && std::isfinite(ep) && r < std::exp(-de / T));
    double moved = 0.0;
    if (accept) {
      moved = (prop - q).norm();
      q = prop;
      e = ep;
      ++accepted;
      if (e < out.energy) {
        out.energy = e;
        out.q = q;
      }
    }
    out.trace.push_back({k, out.energy, moved, 0, T, out.evaluations, clock.ms()});
  }
  out.acceptance_rate = opt.steps ? static_cast<double>(accepted) / opt.steps : 0.0;
  out.converged = true;
  return out;
}

/// Annealing on V(q) through the conditional solve.
inline EnergyFn conditional_energy_fn(const ContactFactorGraph& g, InnerOptions opt = {}) {
  return [&g, opt](const VectorXd& q) { return conditional_energy(g, q, opt); };
}

}  // namespace cfg
