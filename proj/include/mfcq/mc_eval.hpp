#pragma once

// Monte Carlo estimation of the sampled value functional, the grid-refinement
// convergence study (sampled vs relaxed value, the relaxed side supplied in
// closed form), and the policy-improvement check. Replications run on
// per-replication counter streams and are embarrassingly parallel; results
// are aggregated in replication order, so thread count never changes output.

#include <atomic>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <thread>
#include <vector>

#include "mfcq/fixed_point.hpp"
#include "mfcq/model.hpp"
#include "mfcq/particle.hpp"
#include "mfcq/policy.hpp"

namespace mfcq {

namespace detail {

inline void parallel_replications(int replications, int threads,
                                  const std::function<void(int)>& body) {
  threads = std::max(1, threads);
  if (threads == 1) {
    for (int r = 0; r < replications; ++r) body(r);
    return;
  }
  std::atomic<int> index{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&]() {
      for (int r = index.fetch_add(1); r < replications; r = index.fetch_add(1)) body(r);
    });
  for (auto& th : pool) th.join();
}

inline double sample_stddev(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace detail

struct ValueEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
  int replications = 0;
  double running = 0.0, entropy = 0.0, terminal = 0.0;  // breakdown means
  int failures = 0;
  std::optional<double> reference;
  std::optional<double> gap;  // estimate - reference
  std::vector<double> per_replication;
};

struct McOptions {
  int replications = 50;
  int threads = 1;
  bool relaxed = false;  // estimate the relaxed functional instead
};

/// Population-average value functional averaged over replications. Divergent
/// replications are excluded with a failure count if they stay under 1% of
/// the total, otherwise the error propagates.
inline ValueEstimate estimate_value(const LQModel& model, const PolicyView& policy,
                                    const SimConfig& base, const McOptions& mc,
                                    std::optional<double> reference = std::nullopt) {
  std::vector<std::optional<Trajectory>> results(static_cast<std::size_t>(mc.replications));
  std::vector<std::string> failures(static_cast<std::size_t>(mc.replications));
  detail::parallel_replications(mc.replications, mc.threads, [&](int r) {
    SimConfig cfg = base;
    cfg.replication = base.replication + static_cast<std::uint32_t>(r);
    try {
      results[static_cast<std::size_t>(r)] =
          mc.relaxed ? simulate_relaxed(model, policy, cfg) : simulate_sampled(model, policy, cfg);
    } catch (const NumericalError& e) {
      failures[static_cast<std::size_t>(r)] = e.what();
    }
  });

  ValueEstimate est;
  est.reference = reference;
  for (int r = 0; r < mc.replications; ++r) {
    const auto& traj = results[static_cast<std::size_t>(r)];
    if (!traj) {
      ++est.failures;
      continue;
    }
    est.per_replication.push_back(traj->total());
    est.running += traj->reward_running;
    est.entropy += traj->reward_entropy;
    est.terminal += traj->reward_terminal;
  }
  if (est.failures > 0 &&
      est.failures * 100 >= mc.replications)  // >= 1% of replications: systematic
    throw NumericalError("at least 1% of replications diverged (" +
                         std::to_string(est.failures) + "/" + std::to_string(mc.replications) +
                         ")");
  est.replications = static_cast<int>(est.per_replication.size());
  if (est.replications == 0) throw NumericalError("all replications diverged");
  const double inv = 1.0 / est.replications;
  est.running *= inv;
  est.entropy *= inv;
  est.terminal *= inv;
  est.estimate = est.running + est.entropy + est.terminal;
  est.standard_error = detail::sample_stddev(est.per_replication, est.estimate) *
                       std::sqrt(inv);
  if (reference) est.gap = est.estimate - *reference;
  return est;
}

inline ValueEstimate estimate_value_sampled(const LQModel& model, const PolicyView& policy,
                                            const SimConfig& base, const McOptions& mc,
                                            std::optional<double> reference = std::nullopt) {
  return estimate_value(model, policy, base, mc, reference);
}

// --- convergence study --------------------------------------------------------

struct RateStudy {
  std::vector<double> grid_sizes;  // |D| per level
  std::vector<double> gaps;        // |J^D - J_ref|
  std::vector<double> stderrs;
  std::vector<bool> used_in_fit;   // gap > 3 stderr
  std::vector<int> failures;       // excluded replications per level
  double slope = 0.0;
  double intercept = 0.0;
  bool conclusive = false;
  int particles = 0;
  int replications = 0;
  std::vector<std::vector<double>> per_replication;  // per level
};

/// Sampled-vs-relaxed value gap across action-grid refinements with common
/// random numbers: one fixed simulation grid and one seed serve every level,
/// so only the resampling frequency changes. The log-log slope is fitted on
/// the gaps that clear 3x their standard error.
inline RateStudy convergence_study(const LQModel& model, const PolicyView& policy,
                                   const std::vector<double>& grid_sizes, const SimConfig& base,
                                   const McOptions& mc, double reference) {
  if (grid_sizes.size() < 3) throw ConfigError("convergence study needs >= 3 grid sizes");
  RateStudy study;
  study.grid_sizes = grid_sizes;
  study.particles = base.particles;
  study.replications = mc.replications;

  for (double spacing : grid_sizes) {
    SimConfig cfg = base;
    cfg.action_grid = SimConfig::uniform_grid(model.horizon, spacing);
    ValueEstimate est = estimate_value(model, policy, cfg, mc, reference);
    study.gaps.push_back(std::abs(*est.gap));
    study.stderrs.push_back(est.standard_error);
    study.failures.push_back(est.failures);
    study.per_replication.push_back(est.per_replication);
  }

  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < study.gaps.size(); ++i) {
    bool use = study.gaps[i] > 3.0 * study.stderrs[i];
    study.used_in_fit.push_back(use);
    if (!use) continue;
    double x = std::log(study.grid_sizes[i]);
    double y = std::log(study.gaps[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++used;
  }
  if (used >= 2) {
    double denom = used * sxx - sx * sx;
    study.slope = (used * sxy - sx * sy) / denom;
    study.intercept = (sy - study.slope * sx) / used;
    study.conclusive = true;
  }
  return study;
}

inline void write_study_csv(const RateStudy& study, std::ostream& os) {
  os << "grid_size,gap,stderr,used_in_fit,replications\n";
  char buf[160];
  for (std::size_t i = 0; i < study.grid_sizes.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%d,%d\n", study.grid_sizes[i],
                  study.gaps[i], study.stderrs[i], study.used_in_fit[i] ? 1 : 0,
                  study.replications);
    os << buf;
  }
}

// --- policy improvement -------------------------------------------------------

struct ImprovementReport {
  double j_policy_closed = 0.0;
  double j_improved_closed = 0.0;
  double gap_closed = 0.0;
  ValueEstimate j_policy_mc;
  ValueEstimate j_improved_mc;
  double gap_mc = 0.0;
  double gap_mc_stderr = 0.0;
  bool passes_closed = false;
  bool passes_mc = false;
};

struct ImprovementOptions {
  int steps = 1000;
  Vector mu_ref_mean;  // defaults to zero / identity
  Matrix mu_ref_cov;
};

/// J(I(pi)) >= J(pi): exactly (>= -1e-9) for the closed-form values, and the
/// Monte Carlo gap must sit within 3 pooled standard errors of the
/// closed-form gap. A closed-form violation is an invariant violation.
inline ImprovementReport improvement_check(const LQModel& model, const GaussianPolicy& policy,
                                           const SimConfig& base, const McOptions& mc,
                                           const ImprovementOptions& opts = {}) {
  Vector ref_mean = opts.mu_ref_mean.size() ? opts.mu_ref_mean : Vector::Zero(model.d);
  Matrix ref_cov = opts.mu_ref_cov.size() ? opts.mu_ref_cov : Matrix::Identity(model.d, model.d);

  ImprovementReport report;
  OuterResult improved = outer_iterate(model, policy, opts.steps);
  report.j_policy_closed = improved.value.value(0.0, ref_mean, ref_cov);
  PolicyValueSolution improved_value = evaluate_policy(model, improved.policy, opts.steps);
  report.j_improved_closed = improved_value.value(0.0, ref_mean, ref_cov);
  report.gap_closed = report.j_improved_closed - report.j_policy_closed;
  report.passes_closed = report.gap_closed >= -1e-9;

  SimConfig cfg = base;
  cfg.init_mean = ref_mean;
  cfg.init_cov = ref_cov;
  report.j_policy_mc =
      estimate_value(model, PolicyView(policy), cfg, mc, report.j_policy_closed);
  report.j_improved_mc =
      estimate_value(model, PolicyView(improved.policy), cfg, mc, report.j_improved_closed);
  report.gap_mc = report.j_improved_mc.estimate - report.j_policy_mc.estimate;
  report.gap_mc_stderr = std::sqrt(report.j_policy_mc.standard_error *
                                       report.j_policy_mc.standard_error +
                                   report.j_improved_mc.standard_error *
                                       report.j_improved_mc.standard_error);
  report.passes_mc =
      std::abs(report.gap_mc - report.gap_closed) <= 3.0 * report.gap_mc_stderr;
  return report;
}

/// Seeded random perturbation of a Gaussian policy: constant shifts on K,
/// Kbar, K0 and a multiplicative bump of Sigma, all of magnitude <= scale.
inline GaussianPolicy perturb_policy(const GaussianPolicy& policy, double scale,
                                     std::uint64_t seed) {
  rng::Stream stream(seed, 0);
  const Eigen::Index p = policy.action_dim();
  const Eigen::Index d = policy.state_dim();
  Matrix dk(p, d), dkbar(p, d);
  Vector dk0(p);
  std::uint32_t idx = 0;
  auto draw = [&]() { return scale * (2.0 * stream.uniform(0, 0, rng::Channel::kInit, idx++) - 1.0); };
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      dk(i, j) = draw();
      dkbar(i, j) = draw();
    }
    dk0[i] = draw();
  }
  double sigma_factor = std::exp(draw());

  std::vector<Matrix> k, kbar, sigma;
  std::vector<Vector> k0;
  for (std::size_t i = 0; i < policy.times().size(); ++i) {
    k.push_back(policy.k_nodes()[i] + dk);
    kbar.push_back(policy.kbar_nodes()[i] + dkbar);
    k0.push_back(policy.k0_nodes()[i] + dk0);
    sigma.push_back(sigma_factor * policy.sigma_nodes()[i]);
  }
  return GaussianPolicy(policy.times(), std::move(k), std::move(kbar), std::move(k0),
                        std::move(sigma));
}

}  // namespace mfcq
