#pragma once

// Feedback policies. GaussianPolicy is the closed family of the LQ problem:
// mean K(t)(x - mu) + Kbar(t) mu + K0(t), covariance Sigma(t), with all four
// blocks piecewise linear in t. TabularPolicy is a grid density over
// states x actions attached to one (t, mu) slice, used by the inner Gibbs
// fixed-point iteration.

#include <cmath>
#include <vector>

#include "mfcq/model.hpp"
#include "mfcq/types.hpp"

namespace mfcq {

class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(std::vector<double> times, std::vector<Matrix> k, std::vector<Matrix> kbar,
                 std::vector<Vector> k0, std::vector<Matrix> sigma)
      : times_(std::move(times)),
        k_(std::move(k)),
        kbar_(std::move(kbar)),
        k0_(std::move(k0)),
        sigma_(std::move(sigma)) {
    validate();
  }

  /// Time-constant policy on [0, horizon].
  static GaussianPolicy constant(double horizon, const Matrix& k, const Matrix& kbar,
                                 const Vector& k0, const Matrix& sigma) {
    return GaussianPolicy({0.0, horizon}, {k, k}, {kbar, kbar}, {k0, k0}, {sigma, sigma});
  }

  void validate() const {
    if (times_.size() < 2 || k_.size() != times_.size() || kbar_.size() != times_.size() ||
        k0_.size() != times_.size() || sigma_.size() != times_.size())
      throw ConfigError("gaussian policy needs >= 2 nodes with matching block lists");
    for (const auto& s : sigma_) {
      if (!is_symmetric(s, 1e-10)) throw ConfigError("policy covariance must be symmetric");
      Eigen::LLT<Matrix> llt(s);
      if (llt.info() != Eigen::Success)
        throw NumericalError("policy covariance is not positive definite");
    }
  }

  const std::vector<double>& times() const { return times_; }
  const std::vector<Matrix>& k_nodes() const { return k_; }
  const std::vector<Matrix>& kbar_nodes() const { return kbar_; }
  const std::vector<Vector>& k0_nodes() const { return k0_; }
  const std::vector<Matrix>& sigma_nodes() const { return sigma_; }

  Eigen::Index state_dim() const { return k_.front().cols(); }
  Eigen::Index action_dim() const { return k_.front().rows(); }

  Matrix k_at(double t) const { return lerp_nodes(times_, k_, t); }
  Matrix kbar_at(double t) const { return lerp_nodes(times_, kbar_, t); }
  Vector k0_at(double t) const { return lerp_nodes(times_, k0_, t); }
  Matrix sigma_at(double t) const { return lerp_nodes(times_, sigma_, t); }

  Vector mean(double t, const Vector& x, const Vector& mu_mean) const {
    return k_at(t) * (x - mu_mean) + kbar_at(t) * mu_mean + k0_at(t);
  }

  double density(double t, const Vector& x, const Vector& mu_mean, const Vector& a) const {
    Matrix sigma = sigma_at(t);
    Eigen::LLT<Matrix> llt(sigma);
    Vector diff = a - mean(t, x, mu_mean);
    Vector y = llt.matrixL().solve(diff);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < sigma.rows(); ++i) log_det += std::log(llt.matrixL()(i, i));
    double log_density =
        -0.5 * y.squaredNorm() - log_det - 0.5 * action_dim() * std::log(2.0 * kPi);
    return std::exp(log_density);
  }

  /// Action for a caller-supplied standard normal draw z: mean + chol(Sigma) z.
  Vector sample(double t, const Vector& x, const Vector& mu_mean, const Vector& z) const {
    Matrix sigma = sigma_at(t);
    Eigen::LLT<Matrix> llt(sigma);
    return mean(t, x, mu_mean) + Matrix(llt.matrixL()) * z;
  }

  /// Differential entropy 0.5 log((2 pi e)^p det Sigma(t)); state-free.
  double entropy(double t) const {
    Matrix sigma = sigma_at(t);
    Eigen::LLT<Matrix> llt(sigma);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < sigma.rows(); ++i)
      log_det += 2.0 * std::log(llt.matrixL()(i, i));
    return 0.5 * (action_dim() * std::log(2.0 * kPi * std::exp(1.0)) + log_det);
  }

  /// Max block deviation from `other`, evaluated at this policy's nodes
  /// (interpolating `other`, so the grids need not coincide).
  double max_block_difference(const GaussianPolicy& other) const {
    double m = 0.0;
    for (std::size_t i = 0; i < times_.size(); ++i) {
      double t = times_[i];
      m = std::max(m, (k_[i] - other.k_at(t)).cwiseAbs().maxCoeff());
      m = std::max(m, (kbar_[i] - other.kbar_at(t)).cwiseAbs().maxCoeff());
      m = std::max(m, (k0_[i] - other.k0_at(t)).cwiseAbs().maxCoeff());
      m = std::max(m, (sigma_[i] - other.sigma_at(t)).cwiseAbs().maxCoeff());
    }
    return m;
  }

 private:
  std::vector<double> times_;
  std::vector<Matrix> k_, kbar_;
  std::vector<Vector> k0_;
  std::vector<Matrix> sigma_;
};

/// Grid density over state nodes x action cells at one (t, mu) slice. The
/// state nodes carry the quadrature weights of mu; actions live on a uniform
/// tensor grid with cell volume `cell_volume`, truncating the unbounded
/// action space.
class TabularPolicy {
 public:
  TabularPolicy() = default;
  TabularPolicy(double t, Vector mu_mean, std::vector<Vector> states,
                std::vector<double> state_weights, std::vector<Vector> actions,
                double cell_volume, Matrix density)
      : t_(t),
        mu_mean_(std::move(mu_mean)),
        states_(std::move(states)),
        state_weights_(std::move(state_weights)),
        actions_(std::move(actions)),
        cell_volume_(cell_volume),
        density_(std::move(density)) {
    if (density_.rows() != static_cast<Eigen::Index>(states_.size()) ||
        density_.cols() != static_cast<Eigen::Index>(actions_.size()))
      throw ConfigError("tabular density shape does not match node lists");
  }

  /// Uniform kernel on the box [lo, hi]^p tiled by `cells_per_axis` cells
  /// per axis; action nodes are the cell centers, so the cells cover the box
  /// exactly and the cell volumes sum to its volume.
  static TabularPolicy uniform(double t, Vector mu_mean, std::vector<Vector> states,
                               std::vector<double> state_weights, const Vector& lo,
                               const Vector& hi, int cells_per_axis) {
    if (cells_per_axis < 2) throw ConfigError("need >= 2 action cells per axis");
    const Eigen::Index p = lo.size();
    double volume = 1.0;
    for (Eigen::Index i = 0; i < p; ++i) {
      if (!(hi[i] > lo[i])) throw ConfigError("action box must have positive extent");
      volume *= (hi[i] - lo[i]) / cells_per_axis;
    }
    std::vector<Vector> actions;
    std::vector<int> idx(p, 0);
    while (true) {
      Vector a(p);
      for (Eigen::Index i = 0; i < p; ++i)
        a[i] = lo[i] + (hi[i] - lo[i]) * (idx[i] + 0.5) / cells_per_axis;
      actions.push_back(a);
      Eigen::Index axis = 0;
      while (axis < p && ++idx[axis] == cells_per_axis) idx[axis++] = 0;
      if (axis == p) break;
    }
    const auto n_actions = static_cast<Eigen::Index>(actions.size());
    Matrix density = Matrix::Constant(static_cast<Eigen::Index>(states.size()), n_actions,
                                      1.0 / (volume * static_cast<double>(n_actions)));
    return TabularPolicy(t, std::move(mu_mean), std::move(states), std::move(state_weights),
                         std::move(actions), volume, std::move(density));
  }

  double t() const { return t_; }
  const Vector& mu_mean() const { return mu_mean_; }
  const std::vector<Vector>& states() const { return states_; }
  const std::vector<double>& state_weights() const { return state_weights_; }
  const std::vector<Vector>& actions() const { return actions_; }
  double cell_volume() const { return cell_volume_; }
  const Matrix& density() const { return density_; }
  Matrix& density() { return density_; }

  std::size_t nearest_state(const Vector& x) const {
    std::size_t best = 0;
    double best_dist = (states_[0] - x).squaredNorm();
    for (std::size_t g = 1; g < states_.size(); ++g) {
      double dist = (states_[g] - x).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = g;
      }
    }
    return best;
  }

  bool is_normalized(double tol = 1e-9) const {
    for (Eigen::Index g = 0; g < density_.rows(); ++g)
      if (std::abs(density_.row(g).sum() * cell_volume_ - 1.0) > tol) return false;
    return true;
  }

  Vector action_mean(std::size_t g) const {
    Vector m = Vector::Zero(actions_.front().size());
    for (std::size_t j = 0; j < actions_.size(); ++j)
      m += density_(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(j)) * actions_[j];
    return cell_volume_ * m;
  }

  Matrix action_cov(std::size_t g) const {
    Vector m = action_mean(g);
    Matrix c = Matrix::Zero(m.size(), m.size());
    for (std::size_t j = 0; j < actions_.size(); ++j) {
      Vector diff = actions_[j] - m;
      c += density_(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(j)) * diff *
           diff.transpose();
    }
    return cell_volume_ * c;
  }

  /// -w sum rho log rho over the cells of state node g (0 log 0 = 0).
  double entropy(std::size_t g) const {
    double h = 0.0;
    for (Eigen::Index j = 0; j < density_.cols(); ++j) {
      double rho = density_(static_cast<Eigen::Index>(g), j);
      if (rho > 0.0) h -= rho * std::log(rho);
    }
    return cell_volume_ * h;
  }

  /// Inverse-CDF draw over the cells of the state node nearest to x.
  Vector sample(const Vector& x, double u) const {
    std::size_t g = nearest_state(x);
    double target = u / cell_volume_;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < density_.cols(); ++j) {
      acc += density_(static_cast<Eigen::Index>(g), j);
      if (acc >= target) return actions_[static_cast<std::size_t>(j)];
    }
    return actions_.back();
  }

  double sup_difference(const TabularPolicy& other) const {
    return (density_ - other.density_).cwiseAbs().maxCoeff();
  }

 private:
  double t_ = 0.0;
  Vector mu_mean_;
  std::vector<Vector> states_;
  std::vector<double> state_weights_;
  std::vector<Vector> actions_;
  double cell_volume_ = 0.0;
  Matrix density_;  // states x actions
};

// --- policy moments of the LQ coefficients -----------------------------------

/// Exact policy moments of the LQ coefficient functions at (t, x, mu):
/// means use the policy's action mean (coefficients affine in a), and
/// cov(sigma) = F Sa F', cov(sigma_o) = Fo Sa Fo' with Sa the action
/// covariance. std factors are symmetric square roots.
struct PolicyMoments {
  Vector action_mean;
  Matrix action_cov;
  Vector b, sigma, sigma_o;
  Matrix cov_sigma, cov_sigma_o;
  Matrix std_sigma, std_sigma_o;
};

namespace detail {

inline PolicyMoments moments_from_action_law(const CoefficientSlice& c, const Vector& x,
                                             const Vector& mu_mean, const Vector& a_mean,
                                             const Matrix& a_cov) {
  PolicyMoments pm;
  pm.action_mean = a_mean;
  pm.action_cov = a_cov;
  pm.b = c.b0 + c.B * x + c.Bbar * mu_mean + c.C * a_mean;
  pm.sigma = c.theta + c.D * x + c.Dbar * mu_mean + c.F * a_mean;
  pm.sigma_o = c.theta_o + c.Do * x + c.Dbar_o * mu_mean + c.Fo * a_mean;
  pm.cov_sigma = c.F * a_cov * c.F.transpose();
  pm.cov_sigma_o = c.Fo * a_cov * c.Fo.transpose();
  pm.std_sigma = symmetric_sqrt(pm.cov_sigma, 1e-10, "cov(sigma)");
  pm.std_sigma_o = symmetric_sqrt(pm.cov_sigma_o, 1e-10, "cov(sigma_o)");
  return pm;
}

}  // namespace detail

inline PolicyMoments coefficient_moments(const LQModel& model, const GaussianPolicy& policy,
                                         double t, const Vector& x, const Vector& mu_mean) {
  CoefficientSlice c = model.coefficients_at(t);
  return detail::moments_from_action_law(c, x, mu_mean, policy.mean(t, x, mu_mean),
                                         policy.sigma_at(t));
}

inline PolicyMoments coefficient_moments(const LQModel& model, const TabularPolicy& policy,
                                         double t, const Vector& x, const Vector& mu_mean) {
  CoefficientSlice c = model.coefficients_at(t);
  std::size_t g = policy.nearest_state(x);
  return detail::moments_from_action_law(c, x, mu_mean, policy.action_mean(g),
                                         policy.action_cov(g));
}

}  // namespace mfcq
