#pragma once

// Finite-N cooperative particle system sharing one common-noise path, as the
// computable stand-in for the conditional McKean-Vlasov dynamics. Two modes:
//
//  * sampled  - Euler-Maruyama with actions drawn from the policy only at
//               the nodes of an action grid D and frozen in between; the
//               reward integrand freezes the entropy at the grid node.
//  * relaxed  - dynamics driven by the policy moments b_pi, sigma_pi,
//               sigma_{o,pi} plus the std_pi(sigma), std_pi(sigma_o)
//               auxiliary-noise terms.
//
// The common increment dB is shared by all particles; dW and the auxiliary
// increments are idiosyncratic. All draws are counter-addressed, so a run is
// a pure function of (seed, replication).

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "mfcq/hamiltonian.hpp"
#include "mfcq/model.hpp"
#include "mfcq/policy.hpp"
#include "mfcq/rng.hpp"

namespace mfcq {

struct SimConfig {
  int particles = 1000;
  double dt = 0.01;
  std::vector<double> action_grid;  // sampled mode; node times in [0, T), first must be 0
  std::uint64_t seed = 0;
  std::uint32_t replication = 0;
  Vector init_mean;         // mu_0 Gaussian summary; zero cov = point mass
  Matrix init_cov;
  int snapshot_stride = 0;  // record every k-th step; 0 = auto (~100 snapshots)
  bool common_bbar = false; // experimental: share dBbar across particles

  static std::vector<double> uniform_grid(double horizon, double spacing) {
    std::vector<double> g;
    for (double t = 0.0; t < horizon - 1e-12; t += spacing) g.push_back(t);
    return g;
  }
};

struct EnsembleSnapshot {
  double t = 0.0;
  Vector mean;
  Matrix cov;
  double running_reward = 0.0;  // cumulative population-average so far
  double running_entropy = 0.0;
};

struct Trajectory {
  std::vector<EnsembleSnapshot> snapshots;
  std::vector<Vector> final_states;
  double reward_running = 0.0;
  double reward_entropy = 0.0;
  double reward_terminal = 0.0;
  double total() const { return reward_running + reward_entropy + reward_terminal; }
};

/// Empirical mean and unbiased covariance of an ensemble.
inline std::pair<Vector, Matrix> conditional_moments(const std::vector<Vector>& states) {
  if (states.size() < 2) throw ConfigError("conditional moments need N >= 2 particles");
  const Eigen::Index d = states.front().size();
  Vector mean = Vector::Zero(d);
  for (const auto& x : states) mean += x;
  mean /= static_cast<double>(states.size());
  Matrix cov = Matrix::Zero(d, d);
  for (const auto& x : states) cov += (x - mean) * (x - mean).transpose();
  cov /= static_cast<double>(states.size() - 1);
  return {mean, cov};
}

namespace detail {

inline void check_finite(const std::vector<Vector>& states, int step) {
  for (const auto& x : states)
    if (!x.allFinite())
      throw NumericalError("particle state diverged at step " + std::to_string(step));
}

inline std::vector<Vector> draw_initial(const SimConfig& cfg, const rng::Stream& stream,
                                        Eigen::Index d) {
  Vector mean = cfg.init_mean.size() ? cfg.init_mean : Vector::Zero(d);
  Matrix cov = cfg.init_cov.size() ? cfg.init_cov : Matrix::Zero(d, d);
  Matrix root = cov.cwiseAbs().maxCoeff() == 0.0
                    ? Matrix::Zero(d, d)
                    : symmetric_sqrt(cov, 1e-10, "initial covariance");
  std::vector<Vector> states(static_cast<std::size_t>(cfg.particles));
  for (std::size_t j = 0; j < states.size(); ++j) {
    Vector z = stream.normal_vector(d, static_cast<std::uint32_t>(j), 0, rng::Channel::kInit);
    states[j] = mean + root * z;
  }
  return states;
}

inline int auto_stride(int n_steps, int requested) {
  if (requested > 0) return requested;
  return std::max(1, n_steps / 100);
}

}  // namespace detail

/// Exploratory discretely-sampled dynamics: actions are redrawn at the nodes
/// of cfg.action_grid and held constant in between while the state follows
/// the controlled SDE under the shared common noise.
inline Trajectory simulate_sampled(const LQModel& model, const PolicyView& policy,
                                   const SimConfig& cfg) {
  if (cfg.particles < 2) throw ConfigError("need at least 2 particles");
  if (cfg.action_grid.empty() || std::abs(cfg.action_grid.front()) > 1e-12)
    throw ConfigError("action grid must start at t=0");
  const int n_steps = static_cast<int>(std::llround(model.horizon / cfg.dt));
  if (std::abs(n_steps * cfg.dt - model.horizon) > 1e-9)
    throw ConfigError("dt must divide the horizon");

  std::vector<bool> is_node(static_cast<std::size_t>(n_steps), false);
  for (double s : cfg.action_grid) {
    if (s >= model.horizon - 1e-12) continue;  // a node at T has no interval after it
    double ratio = s / cfg.dt;
    auto k = static_cast<long long>(std::llround(ratio));
    if (std::abs(ratio - static_cast<double>(k)) > 1e-9)
      throw ConfigError("action grid node " + std::to_string(s) + " is not on the dt grid");
    is_node[static_cast<std::size_t>(k)] = true;
  }

  rng::Stream stream(cfg.seed, cfg.replication);
  const Eigen::Index d = model.d;
  const Eigen::Index p = model.p;
  std::vector<Vector> states = detail::draw_initial(cfg, stream, d);
  const auto n = static_cast<std::size_t>(cfg.particles);
  const double inv_n = 1.0 / static_cast<double>(cfg.particles);
  const double sqrt_dt = std::sqrt(cfg.dt);

  std::vector<Vector> actions(n, Vector::Zero(p));
  double entropy_node_mean = 0.0;
  double running = 0.0, entropy_acc = 0.0;

  Trajectory traj;
  const int stride = detail::auto_stride(n_steps, cfg.snapshot_stride);
  auto snapshot = [&](double t) {
    auto [mean, cov] = conditional_moments(states);
    traj.snapshots.push_back({t, mean, cov, running, entropy_acc});
  };

  Vector next(d);
  for (int k = 0; k < n_steps; ++k) {
    const double t = k * cfg.dt;
    CoefficientSlice c = model.coefficients_at(t);
    Vector mu_mean = Vector::Zero(d);
    for (const auto& x : states) mu_mean += x;
    mu_mean *= inv_n;

    if (is_node[static_cast<std::size_t>(k)]) {
      entropy_node_mean = 0.0;
      Matrix pk, pkbar, pchol;
      Vector pk0;
      double gaussian_entropy = 0.0;
      if (policy.is_gaussian()) {
        const GaussianPolicy& g = *policy.gaussian();
        pk = g.k_at(t);
        pkbar = g.kbar_at(t);
        pk0 = g.k0_at(t);
        pchol = Eigen::LLT<Matrix>(g.sigma_at(t)).matrixL();
        gaussian_entropy = g.entropy(t);
      }
      for (std::size_t j = 0; j < n; ++j) {
        const auto pj = static_cast<std::uint32_t>(j);
        if (policy.is_gaussian()) {
          Vector z = stream.normal_vector(p, pj, static_cast<std::uint32_t>(k),
                                          rng::Channel::kAction);
          actions[j] = pk * (states[j] - mu_mean) + pkbar * mu_mean + pk0 + pchol * z;
          entropy_node_mean += gaussian_entropy;
        } else {
          double u = stream.uniform(pj, static_cast<std::uint32_t>(k), rng::Channel::kAction);
          actions[j] = policy.tabular()->sample(states[j], u);
          entropy_node_mean += policy.entropy(t, states[j]);
        }
      }
      entropy_node_mean *= inv_n;
    }

    if (k % stride == 0) snapshot(t);

    // left-endpoint quadrature of the reward integral
    double r_mean = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      r_mean += model.running_reward(c, states[j], mu_mean, actions[j]);
    running += cfg.dt * r_mean * inv_n;
    entropy_acc += cfg.dt * model.gamma * entropy_node_mean;

    const double db = sqrt_dt * stream.normal(rng::kSharedParticle,
                                              static_cast<std::uint32_t>(k),
                                              rng::Channel::kCommonNoise);
    for (std::size_t j = 0; j < n; ++j) {
      const double dw = sqrt_dt * stream.normal(static_cast<std::uint32_t>(j),
                                                static_cast<std::uint32_t>(k),
                                                rng::Channel::kIdiosyncratic);
      const Vector& x = states[j];
      const Vector& a = actions[j];
      for (Eigen::Index i = 0; i < d; ++i) {
        double drift = c.b0[i] + c.B.row(i).dot(x) + c.Bbar.row(i).dot(mu_mean) +
                       c.C.row(i).dot(a);
        double sig = c.theta[i] + c.D.row(i).dot(x) + c.Dbar.row(i).dot(mu_mean) +
                     c.F.row(i).dot(a);
        double sig_o = c.theta_o[i] + c.Do.row(i).dot(x) + c.Dbar_o.row(i).dot(mu_mean) +
                       c.Fo.row(i).dot(a);
        next[i] = x[i] + cfg.dt * drift + sig * dw + sig_o * db;
      }
      states[j] = next;
    }
    detail::check_finite(states, k);
  }

  Vector mu_mean = Vector::Zero(d);
  for (const auto& x : states) mu_mean += x;
  mu_mean *= inv_n;
  double terminal = 0.0;
  for (const auto& x : states) terminal += model.terminal_reward(x, mu_mean);
  traj.reward_running = running;
  traj.reward_entropy = entropy_acc;
  traj.reward_terminal = terminal * inv_n;
  snapshot(model.horizon);
  traj.final_states = std::move(states);
  return traj;
}

/// Relaxed dynamics driven by policy moments plus auxiliary noises:
///   dX = b_pi dt + sigma_pi dW + sigma_{o,pi} dB
///        + std_pi(sigma) dWbar + std_pi(sigma_o) dBbar,
/// with dB shared and dW, dWbar, dBbar idiosyncratic (dBbar optionally
/// shared behind cfg.common_bbar, which changes the conditional covariance
/// and is kept only as an experimental switch).
inline Trajectory simulate_relaxed(const LQModel& model, const PolicyView& policy,
                                   const SimConfig& cfg) {
  if (cfg.particles < 2) throw ConfigError("need at least 2 particles");
  const int n_steps = static_cast<int>(std::llround(model.horizon / cfg.dt));
  if (std::abs(n_steps * cfg.dt - model.horizon) > 1e-9)
    throw ConfigError("dt must divide the horizon");

  rng::Stream stream(cfg.seed, cfg.replication);
  const Eigen::Index d = model.d;
  std::vector<Vector> states = detail::draw_initial(cfg, stream, d);
  const auto n = static_cast<std::size_t>(cfg.particles);
  const double inv_n = 1.0 / static_cast<double>(cfg.particles);
  const double sqrt_dt = std::sqrt(cfg.dt);

  double running = 0.0, entropy_acc = 0.0;
  Trajectory traj;
  const int stride = detail::auto_stride(n_steps, cfg.snapshot_stride);
  auto snapshot = [&](double t) {
    auto [mean, cov] = conditional_moments(states);
    traj.snapshots.push_back({t, mean, cov, running, entropy_acc});
  };

  Vector next(d);
  for (int k = 0; k < n_steps; ++k) {
    const double t = k * cfg.dt;
    CoefficientSlice c = model.coefficients_at(t);
    Vector mu_mean = Vector::Zero(d);
    for (const auto& x : states) mu_mean += x;
    mu_mean *= inv_n;

    // action covariance is state-free for both policy kinds, so the std
    // factors are shared by the whole ensemble within a step
    Matrix pk, pkbar;
    Vector pk0;
    Matrix a_cov;
    double gaussian_entropy = 0.0;
    if (policy.is_gaussian()) {
      const GaussianPolicy& g = *policy.gaussian();
      pk = g.k_at(t);
      pkbar = g.kbar_at(t);
      pk0 = g.k0_at(t);
      a_cov = g.sigma_at(t);
      gaussian_entropy = g.entropy(t);
    } else {
      a_cov = policy.tabular()->action_cov(policy.tabular()->nearest_state(mu_mean));
    }
    auto action_mean = [&](const Vector& x) -> Vector {
      if (policy.is_gaussian()) return pk * (x - mu_mean) + pkbar * mu_mean + pk0;
      return policy.tabular()->action_mean(policy.tabular()->nearest_state(x));
    };
    Matrix std_sigma = symmetric_sqrt(c.F * a_cov * c.F.transpose(), 1e-10, "cov(sigma)");
    Matrix std_sigma_o = symmetric_sqrt(c.Fo * a_cov * c.Fo.transpose(), 1e-10, "cov(sigma_o)");
    const double r_cov = (c.R * a_cov).trace();

    if (k % stride == 0) snapshot(t);

    double r_mean = 0.0, e_mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      r_mean += model.running_reward(c, states[j], mu_mean, action_mean(states[j])) + r_cov;
      e_mean += policy.is_gaussian() ? gaussian_entropy : policy.entropy(t, states[j]);
    }
    running += cfg.dt * r_mean * inv_n;
    entropy_acc += cfg.dt * model.gamma * e_mean * inv_n;

    const double db = sqrt_dt * stream.normal(rng::kSharedParticle,
                                              static_cast<std::uint32_t>(k),
                                              rng::Channel::kCommonNoise);
    Vector dbbar_shared;
    if (cfg.common_bbar)
      dbbar_shared = sqrt_dt * stream.normal_vector(d, rng::kSharedParticle,
                                                    static_cast<std::uint32_t>(k),
                                                    rng::Channel::kCommonBar);
    for (std::size_t j = 0; j < n; ++j) {
      const auto pj = static_cast<std::uint32_t>(j);
      const auto sk = static_cast<std::uint32_t>(k);
      const double dw = sqrt_dt * stream.normal(pj, sk, rng::Channel::kIdiosyncratic);
      Vector dwbar = sqrt_dt * stream.normal_vector(d, pj, sk, rng::Channel::kActionBar);
      Vector dbbar = cfg.common_bbar
                         ? dbbar_shared
                         : Vector(sqrt_dt * stream.normal_vector(d, pj, sk,
                                                                 rng::Channel::kCommonBar));
      const Vector& x = states[j];
      Vector a_mean = action_mean(x);
      for (Eigen::Index i = 0; i < d; ++i) {
        double drift = c.b0[i] + c.B.row(i).dot(x) + c.Bbar.row(i).dot(mu_mean) +
                       c.C.row(i).dot(a_mean);
        double sig = c.theta[i] + c.D.row(i).dot(x) + c.Dbar.row(i).dot(mu_mean) +
                     c.F.row(i).dot(a_mean);
        double sig_o = c.theta_o[i] + c.Do.row(i).dot(x) + c.Dbar_o.row(i).dot(mu_mean) +
                       c.Fo.row(i).dot(a_mean);
        next[i] = x[i] + cfg.dt * drift + sig * dw + sig_o * db +
                  std_sigma.row(i).dot(dwbar) + std_sigma_o.row(i).dot(dbbar);
      }
      states[j] = next;
    }
    detail::check_finite(states, k);
  }

  Vector mu_mean = Vector::Zero(d);
  for (const auto& x : states) mu_mean += x;
  mu_mean *= inv_n;
  double terminal = 0.0;
  for (const auto& x : states) terminal += model.terminal_reward(x, mu_mean);
  traj.reward_running = running;
  traj.reward_entropy = entropy_acc;
  traj.reward_terminal = terminal * inv_n;
  snapshot(model.horizon);
  traj.final_states = std::move(states);
  return traj;
}

inline void write_trajectory_csv(const Trajectory& traj, std::ostream& os) {
  if (traj.snapshots.empty()) return;
  const Eigen::Index d = traj.snapshots.front().mean.size();
  std::string header = "t";
  for (Eigen::Index i = 0; i < d; ++i) header += ",mean[" + std::to_string(i) + "]";
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      header += ",cov[" + std::to_string(i) + "][" + std::to_string(j) + "]";
  header += ",running_reward,running_entropy";
  os << header << "\n";
  char buf[64];
  for (const auto& s : traj.snapshots) {
    std::string line;
    auto put = [&](double v) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      line += buf;
    };
    put(s.t);
    for (Eigen::Index i = 0; i < d; ++i) {
      line += ",";
      put(s.mean[i]);
    }
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) {
        line += ",";
        put(s.cov(i, j));
      }
    line += ",";
    put(s.running_reward);
    line += ",";
    put(s.running_entropy);
    os << line << "\n";
  }
}

}  // namespace mfcq
