#pragma once

// Batch-run implementations behind the CLI subcommands. Every run resolves
// its configuration into a RunManifest (model document embedded, every knob
// and seed pinned), writes its artifacts as CSV plus a short report, and can
// be replayed byte-for-byte from the manifest alone.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfcq/csv.hpp"
#include "mfcq/fixed_point.hpp"
#include "mfcq/hamiltonian.hpp"
#include "mfcq/mc_eval.hpp"
#include "mfcq/model.hpp"
#include "mfcq/particle.hpp"
#include "mfcq/riccati.hpp"
#include "mfcq/version.hpp"

namespace mfcq::runner {

using nlohmann::json;

// CLI exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitInvariant = 4;
inline constexpr int kExitInconclusive = 5;

struct RunRequest {
  std::string command;    // solve | policy | simulate | fixed-point |
                          // convergence | improve | hjb-check
  std::string model_text; // embedded model document
  json options;           // resolved knobs, defaults already applied
};

struct RunOutcome {
  int exit_code = kExitOk;
  std::vector<std::string> outputs;  // file names written into out_dir
  std::string message;
};

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << content;
}

inline double opt_num(const json& j, const char* key, double fallback) {
  return j.contains(key) ? j.at(key).get<double>() : fallback;
}

inline int opt_int(const json& j, const char* key, int fallback) {
  return j.contains(key) ? j.at(key).get<int>() : fallback;
}

inline SimConfig sim_config_from(const json& o, const LQModel& model) {
  SimConfig cfg;
  cfg.particles = opt_int(o, "particles", 1000);
  cfg.dt = opt_num(o, "dt", 0.01);
  cfg.seed = o.contains("seed") ? o.at("seed").get<std::uint64_t>() : 0;
  cfg.replication = static_cast<std::uint32_t>(opt_int(o, "replication", 0));
  double spacing = opt_num(o, "action_spacing", 0.1);
  if (o.contains("action_grid"))
    cfg.action_grid = o.at("action_grid").get<std::vector<double>>();
  else
    cfg.action_grid = SimConfig::uniform_grid(model.horizon, spacing);
  double mean = opt_num(o, "init_mean", 0.0);
  double var = opt_num(o, "init_var", 1.0);
  cfg.init_mean = Vector::Constant(model.d, mean);
  cfg.init_cov = var * Matrix::Identity(model.d, model.d);
  return cfg;
}

}  // namespace detail

/// Executes one request into out_dir and returns the outcome; the caller is
/// responsible for writing the manifest (so that replays do not differ by
/// their manifests' timing fields).
inline RunOutcome execute(const RunRequest& req, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  LQModel model = load_model(req.model_text);
  const json& o = req.options;
  RunOutcome outcome;

  const int steps = detail::opt_int(o, "steps", 1000);
  const double delta = detail::opt_num(o, "delta", 1e-8);
  const bool force = o.contains("force") && o.at("force").get<bool>();
  const int threads = detail::opt_int(o, "threads", 1);
  const int gh_order = detail::opt_int(o, "quad_order", 20);

  if (req.command == "solve") {
    ConditionHReport report = validate_condition_h(model, delta);
    detail::write_file(out_dir / "condition_h.txt", report.summary());
    outcome.outputs.push_back("condition_h.txt");
    if (!report.holds && !force) {
      outcome.exit_code = kExitConfig;
      outcome.message = "condition (H) fails; rerun with force to proceed";
      return outcome;
    }
    SolveOptions opts;
    opts.warn_only = force;
    opts.delta = delta;
    RiccatiSolution sol = solve_backward(model, steps, opts);
    std::ostringstream csv;
    csv::write_solution(sol, csv);
    detail::write_file(out_dir / "riccati.csv", csv.str());
    outcome.outputs.push_back("riccati.csv");
    outcome.message = "solved " + std::to_string(steps) + " steps";
    return outcome;
  }

  if (req.command == "policy") {
    RiccatiSolution sol = solve_backward(model, steps, {true, force, delta, 201});
    GaussianPolicy pi = optimal_policy(sol, model);
    std::ostringstream csv;
    csv::write_policy(pi, csv);
    detail::write_file(out_dir / "policy.csv", csv.str());
    outcome.outputs.push_back("policy.csv");
    return outcome;
  }

  if (req.command == "simulate") {
    RiccatiSolution sol = solve_backward(model, steps, {true, force, delta, 201});
    GaussianPolicy pi = optimal_policy(sol, model);
    SimConfig cfg = detail::sim_config_from(o, model);
    const std::string mode = o.contains("mode") ? o.at("mode").get<std::string>() : "sampled";
    Trajectory traj = mode == "relaxed" ? simulate_relaxed(model, PolicyView(pi), cfg)
                                        : simulate_sampled(model, PolicyView(pi), cfg);
    std::ostringstream csv;
    write_trajectory_csv(traj, csv);
    detail::write_file(out_dir / "trajectory.csv", csv.str());
    outcome.outputs.push_back("trajectory.csv");
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "mode %s\nrunning %.17g\nentropy %.17g\nterminal %.17g\ntotal %.17g\n",
                  mode.c_str(), traj.reward_running, traj.reward_entropy, traj.reward_terminal,
                  traj.total());
    detail::write_file(out_dir / "rewards.txt", buf);
    outcome.outputs.push_back("rewards.txt");
    return outcome;
  }

  if (req.command == "fixed-point") {
    GaussianPolicy start = GaussianPolicy::constant(
        model.horizon, Matrix::Zero(model.p, model.d), Matrix::Zero(model.p, model.d),
        Vector::Zero(model.p), Matrix::Identity(model.p, model.p));
    TwoLayerOptions opts;
    opts.tol = detail::opt_num(o, "tol", 1e-8);
    opts.max_outer = detail::opt_int(o, "max_outer", 100);
    opts.steps = steps;
    TwoLayerResult res = two_layer_solve(model, start, opts);
    std::ostringstream trace;
    write_trace_csv(res.trace, trace);
    detail::write_file(out_dir / "trace.csv", trace.str());
    std::ostringstream pol;
    csv::write_policy(res.policy, pol);
    detail::write_file(out_dir / "policy.csv", pol.str());
    outcome.outputs = {"trace.csv", "policy.csv"};
    if (!res.trace.converged) {
      outcome.exit_code = kExitNumerical;
      outcome.message = "outer iteration did not converge";
    }
    return outcome;
  }

  if (req.command == "convergence") {
    RiccatiSolution sol = solve_backward(model, steps, {true, force, delta, 201});
    GaussianPolicy pi = optimal_policy(sol, model);
    double sigma_scale = detail::opt_num(o, "sigma_scale", 1.0);
    if (sigma_scale != 1.0) {
      std::vector<Matrix> sigma = pi.sigma_nodes();
      for (auto& s : sigma) s *= sigma_scale;
      pi = GaussianPolicy(std::vector<double>(pi.times()), std::vector<Matrix>(pi.k_nodes()),
                          std::vector<Matrix>(pi.kbar_nodes()),
                          std::vector<Vector>(pi.k0_nodes()), std::move(sigma));
    }
    std::vector<double> grids = o.contains("grids")
                                    ? o.at("grids").get<std::vector<double>>()
                                    : std::vector<double>{0.2, 0.1, 0.05, 0.025};
    SimConfig cfg = detail::sim_config_from(o, model);
    McOptions mc;
    mc.replications = detail::opt_int(o, "replications", 100);
    mc.threads = threads;
    double reference = evaluate_policy(model, pi, steps)
                           .value(0.0, cfg.init_mean, cfg.init_cov);
    RateStudy study = convergence_study(model, PolicyView(pi), grids, cfg, mc, reference);
    std::ostringstream csv;
    write_study_csv(study, csv);
    detail::write_file(out_dir / "study.csv", csv.str());
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "reference %.17g\nslope %.17g\nintercept %.17g\nparticles %d\n%s\n",
                  reference, study.slope, study.intercept, study.particles,
                  study.conclusive ? "conclusive" : "inconclusive");
    std::string report = buf;
    int total_failures = 0;
    for (int f : study.failures) total_failures += f;
    if (total_failures > 0)
      report += "warning: " + std::to_string(total_failures) +
                " replications diverged and were excluded\n";
    detail::write_file(out_dir / "report.txt", report);
    outcome.outputs = {"study.csv", "report.txt"};
    if (!study.conclusive) {
      outcome.exit_code = kExitInconclusive;
      outcome.message = "no gap cleared 3x its standard error";
    }
    return outcome;
  }

  if (req.command == "improve") {
    RiccatiSolution sol = solve_backward(model, steps, {true, force, delta, 201});
    GaussianPolicy pi = optimal_policy(sol, model);
    double perturb = detail::opt_num(o, "perturb", 0.0);
    std::uint64_t pseed = o.contains("perturb_seed")
                              ? o.at("perturb_seed").get<std::uint64_t>()
                              : 7;
    if (perturb != 0.0) pi = perturb_policy(pi, perturb, pseed);
    SimConfig cfg = detail::sim_config_from(o, model);
    McOptions mc;
    mc.replications = detail::opt_int(o, "replications", 50);
    mc.threads = threads;
    ImprovementOptions iopts;
    iopts.steps = steps;
    ImprovementReport report = improvement_check(model, pi, cfg, mc, iopts);
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "J(pi) closed %.17g\nJ(I(pi)) closed %.17g\ngap closed %.17g\n"
                  "J(pi) mc %.17g +- %.17g\nJ(I(pi)) mc %.17g +- %.17g\n"
                  "gap mc %.17g +- %.17g\nclosed %s\nmc %s\n",
                  report.j_policy_closed, report.j_improved_closed, report.gap_closed,
                  report.j_policy_mc.estimate, report.j_policy_mc.standard_error,
                  report.j_improved_mc.estimate, report.j_improved_mc.standard_error,
                  report.gap_mc, report.gap_mc_stderr,
                  report.passes_closed ? "pass" : "FAIL",
                  report.passes_mc ? "pass" : "FAIL");
    std::string text = buf;
    int total_failures = report.j_policy_mc.failures + report.j_improved_mc.failures;
    if (total_failures > 0)
      text += "warning: " + std::to_string(total_failures) +
              " replications diverged and were excluded\n";
    detail::write_file(out_dir / "improvement.txt", text);
    outcome.outputs = {"improvement.txt"};
    if (!report.passes_closed) {
      outcome.exit_code = kExitInvariant;
      outcome.message = "closed-form improvement violated";
    }
    return outcome;
  }

  if (req.command == "hjb-check") {
    RiccatiSolution sol = solve_backward(model, steps, {true, force, delta, 201});
    GaussianPolicy pi = optimal_policy(sol, model);
    std::vector<double> times = o.contains("times")
                                    ? o.at("times").get<std::vector<double>>()
                                    : std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0};
    double mean = detail::opt_num(o, "mu_mean", 0.0);
    double var = detail::opt_num(o, "mu_var", 1.0);
    MeasureSlice mu = MeasureSlice::gaussian(Vector::Constant(model.d, mean),
                                             var * Matrix::Identity(model.d, model.d));
    std::string csv = "t,mu_mean,mu_var,residual\n";
    for (double t : times) {
      double r = hjb_residual(model, t, mu, sol, pi, gh_order);
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", t, mean, var, r);
      csv += buf;
    }
    detail::write_file(out_dir / "residuals.csv", csv);
    outcome.outputs = {"residuals.csv"};
    return outcome;
  }

  throw ConfigError("unknown command: " + req.command);
}

/// Writes the manifest next to the outputs. Seeds and every resolved knob
/// are embedded along with the model document so the manifest alone
/// reproduces the run.
inline void write_manifest(const RunRequest& req, const RunOutcome& outcome,
                           const std::filesystem::path& out_dir, double wall_seconds) {
  json manifest;
  manifest["artifact_version"] = kVersion;
  manifest["command"] = req.command;
  manifest["model"] = req.model_text;
  manifest["options"] = req.options;
  manifest["outputs"] = outcome.outputs;
  manifest["exit_code"] = outcome.exit_code;
  manifest["wall_seconds"] = wall_seconds;
  detail::write_file(out_dir / "manifest.json", manifest.dump(2));
}

inline RunRequest request_from_manifest(const std::string& manifest_text) {
  json manifest;
  try {
    manifest = json::parse(manifest_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest is not valid JSON: ") + e.what());
  }
  for (const auto* key : {"command", "model", "options"})
    if (!manifest.contains(key)) throw ConfigError(std::string("manifest missing ") + key);
  RunRequest req;
  req.command = manifest.at("command").get<std::string>();
  req.model_text = manifest.at("model").get<std::string>();
  req.options = manifest.at("options");
  return req;
}

/// Full run: execute + manifest.
inline RunOutcome run(const RunRequest& req, const std::filesystem::path& out_dir) {
  auto start = std::chrono::steady_clock::now();
  RunOutcome outcome = execute(req, out_dir);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(req, outcome, out_dir, wall);
  return outcome;
}

}  // namespace mfcq::runner
