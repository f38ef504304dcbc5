// Command-line driver: reproducible batch runs of the solver, simulators and
// studies. Every run writes its artifacts plus a manifest.json that replays
// the run byte-for-byte via `mfcq rerun`.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mfcq/runner.hpp"

namespace {

using mfcq::runner::RunOutcome;
using mfcq::runner::RunRequest;
namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw mfcq::ConfigError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string default_out_dir() {
  if (const char* env = std::getenv("MFCQ_OUTPUT_DIR")) return env;
  return "out";
}

int dispatch(const RunRequest& req, const std::string& out_dir) {
  try {
    RunOutcome outcome = mfcq::runner::run(req, out_dir);
    if (!outcome.message.empty()) std::cerr << outcome.message << "\n";
    for (const auto& f : outcome.outputs)
      std::cout << (fs::path(out_dir) / f).string() << "\n";
    return outcome.exit_code;
  } catch (const mfcq::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return mfcq::runner::kExitConfig;
  } catch (const mfcq::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return mfcq::runner::kExitNumerical;
  } catch (const mfcq::InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return mfcq::runner::kExitInvariant;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entropy-regularized LQ mean-field control toolkit"};
  app.require_subcommand(1);

  std::string model_path, out_dir = default_out_dir();
  int steps = 1000, threads = 1, replications = 50, particles = 10000, quad_order = 20;
  int max_outer = 100;
  double delta = 1e-8, dt = 0.01, action_spacing = 0.1, tol = 1e-8;
  double init_mean = 0.0, init_var = 1.0, sigma_scale = 1.0, perturb = 0.0;
  double mu_mean = 0.0, mu_var = 1.0;
  std::uint64_t seed = 0, perturb_seed = 7;
  bool force = false;
  std::string mode = "sampled";
  std::vector<double> grids{0.2, 0.1, 0.05, 0.025};
  std::vector<double> times{0.0, 0.25, 0.5, 0.75, 1.0};
  std::string manifest_path;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--model", model_path, "model configuration file (JSON)")->required();
    cmd->add_option("--out", out_dir, "output directory (default: $MFCQ_OUTPUT_DIR or ./out)");
    cmd->add_option("--steps", steps, "backward ODE steps (default 1000)");
    cmd->add_option("--delta", delta, "condition (H) strictness delta (default 1e-8)");
    cmd->add_flag("--force", force, "proceed past a failed condition (H) check");
    cmd->add_option("--threads", threads, "worker threads for replications (default 1)");
  };

  CLI::App* solve = app.add_subcommand("solve", "solve the backward Riccati system");
  add_common(solve);

  CLI::App* policy = app.add_subcommand("policy", "export the optimal Gaussian policy");
  add_common(policy);

  CLI::App* simulate = app.add_subcommand("simulate", "run the particle system");
  add_common(simulate);
  simulate->add_option("--mode", mode, "sampled | relaxed (default sampled)");
  simulate->add_option("--particles", particles, "ensemble size (default 10000)");
  simulate->add_option("--dt", dt, "simulation step (default 0.01)");
  simulate->add_option("--action-spacing", action_spacing,
                       "uniform action grid spacing (default 0.1)");
  simulate->add_option("--seed", seed, "master seed (default 0)");
  simulate->add_option("--init-mean", init_mean, "initial mean (default 0)");
  simulate->add_option("--init-var", init_var, "initial variance (default 1)");

  CLI::App* fixed_point = app.add_subcommand("fixed-point", "two-layer policy iteration");
  add_common(fixed_point);
  fixed_point->add_option("--tol", tol, "outer block tolerance (default 1e-8)");
  fixed_point->add_option("--max-outer", max_outer, "outer iteration cap (default 100)");

  CLI::App* convergence = app.add_subcommand("convergence", "grid-refinement value study");
  add_common(convergence);
  convergence->add_option("--grids", grids, "action grid spacings (default 0.2 0.1 0.05 0.025)");
  convergence->add_option("--particles", particles, "ensemble size (default 10000)");
  convergence->add_option("--dt", dt, "simulation step (default 0.01)");
  convergence->add_option("--replications", replications, "replications (default 50)");
  convergence->add_option("--seed", seed, "master seed (default 0)");
  convergence->add_option("--sigma-scale", sigma_scale, "inflate policy covariance (default 1)");
  convergence->add_option("--init-mean", init_mean, "initial mean (default 0)");
  convergence->add_option("--init-var", init_var, "initial variance (default 1)");

  CLI::App* improve = app.add_subcommand("improve", "policy improvement check");
  add_common(improve);
  improve->add_option("--perturb", perturb, "perturbation magnitude (default 0: optimal)");
  improve->add_option("--seed", perturb_seed, "perturbation seed (default 7)");
  improve->add_option("--particles", particles, "ensemble size (default 10000)");
  improve->add_option("--dt", dt, "simulation step (default 0.01)");
  improve->add_option("--action-spacing", action_spacing, "action grid spacing (default 0.1)");
  improve->add_option("--replications", replications, "replications (default 50)");

  CLI::App* hjb = app.add_subcommand("hjb-check", "exploratory HJB residual sweep");
  add_common(hjb);
  hjb->add_option("--times", times, "evaluation times (default 0 .25 .5 .75 1)");
  hjb->add_option("--quad-order", quad_order, "Gauss-Hermite order (default 20)");
  hjb->add_option("--mu-mean", mu_mean, "measure mean (default 0)");
  hjb->add_option("--mu-var", mu_var, "measure variance (default 1)");

  CLI::App* rerun = app.add_subcommand("rerun", "replay a run from its manifest");
  rerun->add_option("--manifest", manifest_path, "manifest.json of a previous run")->required();
  rerun->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (rerun->parsed()) {
      RunRequest req = mfcq::runner::request_from_manifest(read_file(manifest_path));
      return dispatch(req, out_dir);
    }

    RunRequest req;
    req.model_text = read_file(model_path);
    nlohmann::json o;
    o["steps"] = steps;
    o["delta"] = delta;
    o["force"] = force;
    o["threads"] = threads;
    if (solve->parsed()) req.command = "solve";
    if (policy->parsed()) req.command = "policy";
    if (simulate->parsed()) {
      req.command = "simulate";
      o["mode"] = mode;
      o["particles"] = particles;
      o["dt"] = dt;
      o["action_spacing"] = action_spacing;
      o["seed"] = seed;
      o["init_mean"] = init_mean;
      o["init_var"] = init_var;
    }
    if (fixed_point->parsed()) {
      req.command = "fixed-point";
      o["tol"] = tol;
      o["max_outer"] = max_outer;
    }
    if (convergence->parsed()) {
      req.command = "convergence";
      o["grids"] = grids;
      o["particles"] = particles;
      o["dt"] = dt;
      o["replications"] = replications;
      o["seed"] = seed;
      o["sigma_scale"] = sigma_scale;
      o["init_mean"] = init_mean;
      o["init_var"] = init_var;
    }
    if (improve->parsed()) {
      req.command = "improve";
      o["perturb"] = perturb;
      o["perturb_seed"] = perturb_seed;
      o["particles"] = particles;
      o["dt"] = dt;
      o["action_spacing"] = action_spacing;
      o["replications"] = replications;
      o["seed"] = seed;
    }
    if (hjb->parsed()) {
      req.command = "hjb-check";
      o["times"] = times;
      o["quad_order"] = quad_order;
      o["mu_mean"] = mu_mean;
      o["mu_var"] = mu_var;
    }
    req.options = o;
    return dispatch(req, out_dir);
  } catch (const mfcq::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return mfcq::runner::kExitConfig;
  }
}
