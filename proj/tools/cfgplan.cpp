// cfgplan: run an inference method on a scene and write trace.jsonl,
// solution.json and (ensemble methods) particles.csv.
//
// Exit codes: 0 success, 2 configuration error, 3 no physically valid result.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cfg/cfg.hpp"

namespace {

using cfg::VectorXd;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kNotConverged = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string scene;
  std::string method = "map";
  std::optional<int> particles;
  std::uint64_t seed = 0;
  std::optional<int> max_iters;
  std::optional<double> tol;
  std::string out = ".";
  int threads = 1;
  bool timing = false;
};

struct TraceRow {
  int iter = 0;
  double energy = 0.0;
  const char* norm_key = "grad_norm";
  double norm = 0.0;
  int inner_iterations = 0;
  long evaluations = 0;
  double elapsed_ms = 0.0;
  std::optional<std::pair<const char*, double>> extra;
};

struct Particle {
  VectorXd q;
  VectorXd x;
  double energy = std::numeric_limits<double>::quiet_NaN();
  bool valid = false;
};

struct Outcome {
  VectorXd q, x;
  double energy = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  bool ok = false;
  int iterations = 0;
  long evaluations = 0;
  std::string message;
  std::vector<TraceRow> trace;
  std::vector<Particle> particles;  // ensemble methods only
  json extra = json::object();
};

std::vector<double> to_vector(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json report_json(const cfg::ValidationReport& r) {
  json factors = json::array();
  for (const auto& f : r.factors)
    factors.push_back({{"label", cfg::to_string(f.label)},
                       {"knot", f.knot},
                       {"case", f.case_index},
                       {"contact", f.contact},
                       {"body", f.body},
                       {"magnitude", f.magnitude}});
  return {{"verdict", cfg::to_string(r.verdict)},
          {"message", r.message},
          {"tolerance", r.tolerance},
          {"residuals_ok", r.residuals_ok},
          {"max_violation", r.max_violation()},
          {"complementarity", r.complementarity},
          {"cone", r.cone},
          {"dynamics", r.dynamics},
          {"penetration", r.penetration},
          {"touch", r.touch},
          {"no_slip", r.no_slip},
          {"perp", r.perp},
          {"drift_position", r.drift_position},
          {"drift_angle", r.drift_angle},
          {"factors", factors}};
}

bool passes_kkt(const cfg::ContactFactorGraph& g, const VectorXd& q, const VectorXd& x, double tol) {
  if (x.size() != g.layout().dim_x) return false;
  return cfg::kkt_residuals(g, q, x, tol).residuals_ok;
}

void from_outer_trace(Outcome& o, const std::vector<cfg::OuterIterate>& t) {
  for (const auto& it : t)
    o.trace.push_back({it.iteration, it.energy, "grad_norm", it.grad_norm, it.inner_iterations, it.evaluations,
                       it.elapsed_ms, std::nullopt});
}

Outcome run_map(const cfg::Problem& p, const cfg::Scene& s, const RunConfig& c, std::mt19937_64& rng,
                double tol) {
  const VectorXd q0 = p.initialize(rng);
  cfg::MapOptions mo;
  mo.bfgs.tol = c.tol.value_or(s.solver.map.tol);
  mo.bfgs.max_iterations = c.max_iters.value_or(s.solver.map.max_iters);
  const auto r = cfg::map_infer(p.graph(), q0, mo);
  Outcome o;
  o.q = r.q;
  o.x = r.at.x;
  o.energy = r.at.energy;
  o.converged = r.converged;
  o.iterations = r.iterations;
  o.evaluations = r.evaluations;
  o.message = r.message;
  from_outer_trace(o, r.trace);
  o.ok = o.converged && passes_kkt(p.graph(), o.q, o.x, tol);
  return o;
}

Outcome run_direct(const cfg::Problem& p, const cfg::Scene& s, const RunConfig& c, std::mt19937_64& rng,
                   double tol) {
  const VectorXd q0 = p.initialize(rng);
  cfg::BfgsOptions bo;
  bo.tol = c.tol.value_or(s.solver.map.tol);
  bo.max_iterations = c.max_iters.value_or(s.solver.map.max_iters);
  const auto r = cfg::direct_joint_opt(p.graph(), q0, VectorXd::Zero(p.graph().layout().dim_x), bo);
  Outcome o;
  o.q = r.q;
  o.x = r.x;
  o.energy = r.energy;
  o.converged = r.converged;
  o.iterations = r.trace.empty() ? 0 : r.trace.back().iteration;
  o.evaluations = r.evaluations;
  o.message = r.message;
  from_outer_trace(o, r.trace);
  o.ok = o.converged && passes_kkt(p.graph(), o.q, o.x, tol);
  return o;
}

Outcome run_sa(const cfg::Problem& p, const cfg::Scene& s, const RunConfig& c, std::mt19937_64& rng, double tol) {
  const auto& g = p.graph();
  const VectorXd q0 = p.initialize(rng);
  cfg::SaOptions so;
  so.t0 = s.solver.sa.t0;
  so.decay = s.solver.sa.decay;
  so.steps = c.max_iters.value_or(s.solver.sa.steps);
  so.scale = s.solver.sa.scale > 0.0 ? s.solver.sa.scale : 0.1 * g.characteristic_length();
  so.seed = rng();
  const auto r = cfg::simulated_annealing(cfg::conditional_energy_fn(g), q0, so);
  Outcome o;
  o.q = r.q;
  const auto sol = cfg::solve_conditional(g, r.q);
  o.x = sol.x;
  o.energy = sol.optimal_energy;
  o.converged = true;
  o.iterations = so.steps;
  o.evaluations = r.evaluations;
  o.message = "annealing schedule completed";
  for (const auto& it : r.trace)
    o.trace.push_back({it.iteration, it.energy, "update_norm", it.grad_norm, 0, it.evaluations, it.elapsed_ms,
                       std::make_pair("temperature", it.step)});
  o.ok = passes_kkt(g, o.q, o.x, tol);
  o.extra["acceptance_rate"] = r.acceptance_rate;
  return o;
}

void finish_ensemble(Outcome& o, const cfg::ContactFactorGraph& g, double tol) {
  std::size_t best = 0;
  bool have = false;
  int valid = 0;
  for (std::size_t i = 0; i < o.particles.size(); ++i) {
    auto& pt = o.particles[i];
    pt.valid = std::isfinite(pt.energy) && passes_kkt(g, pt.q, pt.x, tol);
    valid += pt.valid;
    // Prefer valid particles, then lower energy, then lower index.
    const auto better = [&](const Particle& a, const Particle& b) {
      if (a.valid != b.valid) return a.valid;
      if (!std::isfinite(b.energy)) return std::isfinite(a.energy);
      return a.energy < b.energy;
    };
    if (!have || better(pt, o.particles[best])) best = i, have = true;
  }
  const auto& b = o.particles[best];
  o.q = b.q;
  o.x = b.x;
  o.energy = b.energy;
  o.ok = valid > 0;
  o.extra["particles"] = o.particles.size();
  o.extra["valid_particles"] = valid;
  o.extra["best_particle"] = best;
}

Outcome run_svgd(const cfg::Problem& p, const cfg::Scene& s, const RunConfig& c, std::mt19937_64& rng,
                 double tol) {
  const auto& g = p.graph();
  const int S = c.particles.value_or(s.solver.svgd.particles);
  if (S < 2) throw ConfigError("svgd needs --particles >= 2 (got " + std::to_string(S) + ")");
  std::vector<VectorXd> init;
  for (int i = 0; i < S; ++i) init.push_back(p.initialize(rng));
  cfg::SvgdOptions so;
  so.iterations = c.max_iters.value_or(s.solver.svgd.iterations);
  so.step = s.solver.svgd.step > 0.0 ? s.solver.svgd.step : 0.1 * g.characteristic_length();
  so.temperature = s.solver.svgd.temperature;
  so.tol = c.tol.value_or(s.solver.svgd.tol);
  so.bandwidth = s.solver.svgd.bandwidth;
  so.threads = c.threads;
  const auto e = cfg::svgd_infer(g, init, so);
  Outcome o;
  o.converged = e.converged;
  o.iterations = e.iterations;
  o.evaluations = e.evaluations;
  o.message = e.converged ? "mean update below tolerance" : "iteration budget used";
  for (const auto& it : e.trace)
    o.trace.push_back({it.iteration, it.mean_energy, "update_norm", it.mean_update_norm, it.inner_iterations,
                       it.evaluations, it.elapsed_ms, std::make_pair("bandwidth", it.bandwidth)});
  for (std::size_t i = 0; i < e.particles.size(); ++i)
    o.particles.push_back({e.particles[i], e.valid[i] ? e.x[i] : VectorXd(), e.energy[i], false});
  finish_ensemble(o, g, tol);
  return o;
}

Outcome run_mcmc(const cfg::Problem& p, const cfg::Scene& s, const RunConfig& c, std::mt19937_64& rng,
                 double tol) {
  const auto& g = p.graph();
  const int d = g.layout().dim_q;
  const int n = c.particles.value_or(s.solver.mcmc.walkers > 0 ? s.solver.mcmc.walkers : 2 * d + 2);
  if (n < 2 * d + 2)
    throw ConfigError("mcmc needs --particles >= 2 * dim + 2 = " + std::to_string(2 * d + 2) + " (got " +
                      std::to_string(n) + ")");
  std::vector<VectorXd> walkers;
  for (int i = 0; i < n; ++i) walkers.push_back(p.initialize(rng));
  cfg::McmcOptions mo;
  mo.steps = c.max_iters.value_or(s.solver.mcmc.steps);
  mo.burn_in = std::min(s.solver.mcmc.burn_in, mo.steps);
  mo.seed = rng();
  mo.threads = c.threads;
  const auto r = cfg::ensemble_mcmc(cfg::conditional_log_density(g, s.solver.mcmc.temperature), walkers, mo);
  Outcome o;
  o.converged = true;
  o.iterations = mo.steps;
  o.evaluations = r.evaluations;
  o.message = "sampler completed";
  for (const auto& it : r.trace)
    o.trace.push_back({it.iteration, it.energy, "update_norm", it.grad_norm, 0, it.evaluations, it.elapsed_ms,
                       std::make_pair("acceptance", it.step)});
  // Final walker positions.
  if (r.samples.size() >= static_cast<std::size_t>(n))
    walkers.assign(r.samples.end() - n, r.samples.end());
  std::vector<Particle> parts(static_cast<std::size_t>(n));
  cfg::parallel_for(n, c.threads, [&](int i) {
    auto& pt = parts[static_cast<std::size_t>(i)];
    pt.q = walkers[static_cast<std::size_t>(i)];
    try {
      const auto sol = cfg::solve_conditional(g, pt.q);
      pt.x = sol.x;
      pt.energy = sol.optimal_energy;
    } catch (const cfg::Error&) {
    }
  });
  o.particles = std::move(parts);
  o.extra["acceptance_rate"] = r.acceptance_rate;
  finish_ensemble(o, g, tol);
  return o;
}

void write_trace(const std::filesystem::path& path, const std::string& method, const Outcome& o, bool timing) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : o.trace) {
    json j = {{"method", method},
              {"iter", r.iter},
              {"energy", number_or_null(r.energy)},
              {r.norm_key, number_or_null(r.norm)},
              {"inner_iterations", r.inner_iterations},
              {"evaluations", r.evaluations},
              {"elapsed_ms", timing ? json(r.elapsed_ms) : json(nullptr)}};
    if (r.extra) j[r.extra->first] = number_or_null(r.extra->second);
    f << j.dump() << '\n';
  }
}

void write_particles(const std::filesystem::path& path, const Outcome& o, int dim) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "idx";
  for (int i = 0; i < dim; ++i) f << ",q_" << i;
  f << ",energy,valid\n";
  f << std::setprecision(17);
  for (std::size_t i = 0; i < o.particles.size(); ++i) {
    const auto& p = o.particles[i];
    f << i;
    for (int k = 0; k < dim; ++k) f << ',' << p.q(k);
    f << ',';
    if (std::isfinite(p.energy))
      f << p.energy;
    else
      f << "nan";
    f << ',' << (p.valid ? 1 : 0) << '\n';
  }
}

json solution_json(const cfg::Problem& p, const cfg::Scene& scene, const RunConfig& c, const Outcome& o,
                   double elapsed_ms) {
  const auto& g = p.graph();
  json j;
  j["scene"] = scene.name;
  j["method"] = c.method;
  j["seed"] = c.seed;
  j["status"] = o.ok ? "success" : "not_converged";
  j["converged"] = o.converged;
  j["message"] = o.message;
  j["iterations"] = o.iterations;
  j["evaluations"] = o.evaluations;
  j["energy"] = number_or_null(o.energy);
  j["q"] = to_vector(o.q);
  j["x"] = to_vector(o.x);
  j["elapsed_ms"] = c.timing ? json(elapsed_ms) : json(nullptr);
  for (auto it = o.extra.begin(); it != o.extra.end(); ++it) j[it.key()] = it.value();

  const double tol = scene.solver.validation.tol;
  json factors = json::array();
  json by_label = json::object();
  if (o.x.size() == g.layout().dim_x) {
    const auto lin = g.linearize(o.q, false);
    const auto e = cfg::joint_energy(lin, o.x);
    for (std::size_t i = 0; i < lin.factors.size(); ++i) {
      const auto& spec = g.factors()[static_cast<std::size_t>(lin.factors[i].spec)];
      factors.push_back({{"label", cfg::to_string(spec.label)},
                         {"knot", spec.knot},
                         {"case", spec.case_index},
                         {"contact", spec.contact},
                         {"body", spec.body},
                         {"energy", e.per_factor[i]}});
    }
    for (const auto& [label, v] : e.by_label) by_label[label] = v;
    if (g.task() == cfg::AssemblyTask::Static) {
      const auto rep = cfg::validate_stable(g.scene(), o.q, cfg::ValidationOptions::from(scene.solver.validation));
      j["report"] = report_json(rep);
    } else {
      j["report"] = report_json(cfg::kkt_residuals(g, o.q, o.x, tol));
    }
  } else {
    j["report"] = nullptr;
  }
  j["factor_energies"] = factors;
  j["energy_by_label"] = by_label;
  return j;
}

int run(const RunConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg::Scene scene;
  try {
    scene = cfg::load_scene(c.scene);
  } catch (const cfg::Error& e) {
    throw ConfigError(e.what());
  }
  if (c.threads < 1) throw ConfigError("--threads must be >= 1");
  if (c.max_iters && *c.max_iters < 0) throw ConfigError("--max-iters must be >= 0");
  if (c.tol && !(*c.tol > 0.0)) throw ConfigError("--tol must be > 0");
  if (c.particles && c.method != "svgd" && c.method != "mcmc")
    throw ConfigError("--particles only applies to svgd and mcmc");
  cfg::Problem problem;
  try {
    problem = cfg::make_problem(scene);
  } catch (const cfg::ModelError& e) {
    throw ConfigError(e.what());
  }
  cfg::log::info("scene '", scene.name, "': ", problem.graph().layout().dim_q, " pose and ",
                 problem.graph().layout().dim_x, " force/input variables");

  std::mt19937_64 rng(c.seed);
  const double tol = scene.solver.validation.tol;
  Outcome o;
  if (c.method == "map")
    o = run_map(problem, scene, c, rng, tol);
  else if (c.method == "direct")
    o = run_direct(problem, scene, c, rng, tol);
  else if (c.method == "svgd")
    o = run_svgd(problem, scene, c, rng, tol);
  else if (c.method == "mcmc")
    o = run_mcmc(problem, scene, c, rng, tol);
  else if (c.method == "sa")
    o = run_sa(problem, scene, c, rng, tol);
  else
    throw ConfigError("unknown method '" + c.method + "'");
  if (cfg::log::enabled(cfg::log::Level::Debug))
    for (const auto& r : o.trace) cfg::log::debug("iter ", r.iter, " energy ", r.energy, " ", r.norm_key, " ", r.norm);
  cfg::log::info(c.method, ": ", o.message, ", energy ", o.energy, ", ", o.ok ? "success" : "no valid result");

  const std::filesystem::path out(c.out);
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out.string());
  const double elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  write_trace(out / "trace.jsonl", c.method, o, c.timing);
  if (!o.particles.empty()) write_particles(out / "particles.csv", o, problem.graph().layout().dim_q);
  std::ofstream sol(out / "solution.json");
  if (!sol) throw std::runtime_error("cannot write solution.json");
  sol << solution_json(problem, scene, c, o, elapsed).dump(2) << '\n';
  return o.ok ? kOk : kNotConverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contact factor graph planner"};
  app.require_subcommand(1);
  RunConfig c;
  auto* run_cmd = app.add_subcommand("run", "run an inference method on a scene");
  run_cmd->add_option("--scene", c.scene, "scene file (JSON)")->required();
  run_cmd->add_option("--method", c.method, "map | svgd | direct | mcmc | sa")
      ->check(CLI::IsMember({"map", "svgd", "direct", "mcmc", "sa"}));
  run_cmd->add_option("--particles", c.particles, "particles (svgd) or walkers (mcmc)");
  run_cmd->add_option("--seed", c.seed, "random seed");
  run_cmd->add_option("--max-iters", c.max_iters, "outer iterations / steps");
  run_cmd->add_option("--tol", c.tol, "outer tolerance");
  run_cmd->add_option("--out", c.out, "output directory");
  run_cmd->add_option("--threads", c.threads, "worker threads (1 is bitwise deterministic)");
  run_cmd->add_flag("--timing", c.timing, "record wall-clock times in the outputs");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  try {
    cfg::log::set_level(cfg::log::level_from_env());
  } catch (const cfg::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
  try {
    return run(c);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const cfg::NonConvergence& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNotConverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
