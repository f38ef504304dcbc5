#pragma once

// Hamiltonian machinery: the pointwise Hamiltonian H, the integrated
// Hamiltonian over a state measure and a policy kernel (with the
// common-noise double-measure term), its partial linear functional
// derivative with respect to the kernel, the Iq-function, and the
// exploratory HJB residual.
//
// Measure integrals use Gauss-Hermite quadrature for Gaussian summaries and
// plain averaging for particle clouds. The second-order measure derivative
// supplied by a bundle is constant in (x, x'), so the double integral
// factorizes through the measure-level mean of sigma_{o,h}; a pairwise
// evaluation is kept behind an option for cross-checking.

#include <functional>
#include <memory>
#include <variant>
#include <vector>

#include "mfcq/model.hpp"
#include "mfcq/policy.hpp"
#include "mfcq/quadrature.hpp"
#include "mfcq/riccati.hpp"

namespace mfcq {

/// One-time representation of the conditional state measure mu: Gaussian
/// summary (mean, cov) or an equally weighted particle cloud.
class MeasureSlice {
 public:
  static MeasureSlice gaussian(Vector mean, Matrix cov) {
    MeasureSlice m;
    m.gaussian_ = true;
    m.mean_ = std::move(mean);
    m.cov_ = std::move(cov);
    return m;
  }

  static MeasureSlice point_mass(const Vector& x) {
    return gaussian(x, Matrix::Zero(x.size(), x.size()));
  }

  static MeasureSlice cloud(std::vector<Vector> particles) {
    if (particles.empty()) throw ConfigError("particle cloud must be non-empty");
    MeasureSlice m;
    m.gaussian_ = false;
    m.particles_ = std::move(particles);
    return m;
  }

  bool is_gaussian() const { return gaussian_; }
  const std::vector<Vector>& particles() const { return particles_; }

  Vector mean() const {
    if (gaussian_) return mean_;
    Vector m = Vector::Zero(particles_.front().size());
    for (const auto& x : particles_) m += x;
    return m / static_cast<double>(particles_.size());
  }

  Matrix cov() const {
    if (gaussian_) return cov_;
    Vector m = mean();
    Matrix c = Matrix::Zero(m.size(), m.size());
    for (const auto& x : particles_) c += (x - m) * (x - m).transpose();
    return c / std::max<double>(1.0, static_cast<double>(particles_.size() - 1));
  }

  struct Nodes {
    std::vector<Vector> points;
    std::vector<double> weights;
  };

  /// Integration rule for int f dmu: tensor Gauss-Hermite for Gaussian
  /// summaries, equal weights for clouds.
  Nodes nodes(int gh_order) const {
    Nodes n;
    if (gaussian_) {
      GaussianQuadrature q = GaussianQuadrature::build(mean_, cov_, gh_order);
      n.points = std::move(q.points);
      n.weights = std::move(q.weights);
    } else {
      n.points = particles_;
      n.weights.assign(particles_.size(), 1.0 / static_cast<double>(particles_.size()));
    }
    return n;
  }

 private:
  bool gaussian_ = true;
  Vector mean_;
  Matrix cov_;
  std::vector<Vector> particles_;
};

/// Evaluators of the value-derivative closures backing the integrated
/// Hamiltonian and the Iq-function. For solutions of the quadratic ansatz,
///   dj_dmu = 2 Lambda (x - mu) + 2 Gamma mu + zeta,
///   dx_dmu = 2 Lambda,  d2_mu = 2 (Gamma - Lambda),
/// and dj_dt comes from the ODE right-hand sides.
struct ValueDerivativeBundle {
  std::function<Vector(double, const Vector&, const Vector&)> dj_dmu;  // (t, x, mu_mean)
  std::function<Matrix(double)> dx_dmu;
  std::function<Matrix(double)> d2_mu;
  std::function<double(double, const Vector&, const Matrix&)> dj_dt;  // (t, mean, cov)
  std::string provenance = "user";
};

inline ValueDerivativeBundle bundle_from(const QuadraticValueSolution& sol) {
  auto s = std::make_shared<const QuadraticValueSolution>(sol);
  ValueDerivativeBundle b;
  b.provenance = "riccati";
  b.dj_dmu = [s](double t, const Vector& x, const Vector& mu_mean) -> Vector {
    return 2.0 * s->lambda_at(t) * (x - mu_mean) + 2.0 * s->gamma_at(t) * mu_mean +
           s->zeta_at(t);
  };
  b.dx_dmu = [s](double t) -> Matrix { return 2.0 * s->lambda_at(t); };
  b.d2_mu = [s](double t) -> Matrix { return 2.0 * (s->gamma_at(t) - s->lambda_at(t)); };
  b.dj_dt = [s](double t, const Vector& mean, const Matrix& cov) {
    return s->value_time_derivative(t, mean, cov);
  };
  return b;
}

/// Either policy representation, viewed as a transition kernel at one time.
class PolicyView {
 public:
  PolicyView(const GaussianPolicy& g) : gaussian_(&g) {}
  PolicyView(const TabularPolicy& t) : tabular_(&t) {}

  bool is_gaussian() const { return gaussian_ != nullptr; }
  const GaussianPolicy* gaussian() const { return gaussian_; }
  const TabularPolicy* tabular() const { return tabular_; }

  Vector action_mean(double t, const Vector& x, const Vector& mu_mean) const {
    if (gaussian_) return gaussian_->mean(t, x, mu_mean);
    return tabular_->action_mean(tabular_->nearest_state(x));
  }

  /// Discrete rule for int f(a) h(a|x) da; weights sum to ~1.
  std::vector<std::pair<Vector, double>> action_rule(double t, const Vector& x,
                                                     const Vector& mu_mean, int gh_order) const {
    std::vector<std::pair<Vector, double>> rule;
    if (gaussian_) {
      GaussianQuadrature q = GaussianQuadrature::build(gaussian_->mean(t, x, mu_mean),
                                                       gaussian_->sigma_at(t), gh_order);
      rule.reserve(q.points.size());
      for (std::size_t i = 0; i < q.points.size(); ++i)
        rule.emplace_back(q.points[i], q.weights[i]);
    } else {
      std::size_t g = tabular_->nearest_state(x);
      const auto& actions = tabular_->actions();
      rule.reserve(actions.size());
      for (std::size_t j = 0; j < actions.size(); ++j)
        rule.emplace_back(actions[j],
                          tabular_->cell_volume() *
                              tabular_->density()(static_cast<Eigen::Index>(g),
                                                  static_cast<Eigen::Index>(j)));
    }
    return rule;
  }

  double entropy(double t, const Vector& x) const {
    if (gaussian_) return gaussian_->entropy(t);
    return tabular_->entropy(tabular_->nearest_state(x));
  }

 private:
  const GaussianPolicy* gaussian_ = nullptr;
  const TabularPolicy* tabular_ = nullptr;
};

/// H(t, x, mu, a, p, q) = b'p + 0.5 Tr((ss' + so so') q) + r with the LQ
/// coefficient forms.
inline double hamiltonian(const LQModel& model, double t, const Vector& x, const Vector& mu_mean,
                          const Vector& a, const Vector& p_vec, const Matrix& q_mat) {
  CoefficientSlice c = model.coefficients_at(t);
  Vector b = c.b0 + c.B * x + c.Bbar * mu_mean + c.C * a;
  Vector sig = c.theta + c.D * x + c.Dbar * mu_mean + c.F * a;
  Vector sig_o = c.theta_o + c.Do * x + c.Dbar_o * mu_mean + c.Fo * a;
  return b.dot(p_vec) + 0.5 * (sig.dot(q_mat * sig) + sig_o.dot(q_mat * sig_o)) +
         model.running_reward(c, x, mu_mean, a);
}

namespace detail {

/// State-node rule for int . dmu. Tabular kernels carry their own state
/// nodes and weights (the measure quadrature they were built on).
inline MeasureSlice::Nodes measure_nodes(const MeasureSlice& mu, const PolicyView& h,
                                         int gh_order) {
  if (!h.is_gaussian()) {
    MeasureSlice::Nodes n;
    n.points = h.tabular()->states();
    n.weights = h.tabular()->state_weights();
    return n;
  }
  return mu.nodes(gh_order);
}

/// Measure-level mean of sigma_{o,h}: int sigma_o(t, x, mu, .) dh dmu.
inline Vector sigma_o_policy_mean(const CoefficientSlice& c, const MeasureSlice::Nodes& nodes,
                                  const PolicyView& h, double t, const Vector& mu_mean) {
  Vector s = Vector::Zero(c.theta_o.size());
  for (std::size_t g = 0; g < nodes.points.size(); ++g) {
    const Vector& x = nodes.points[g];
    Vector so = c.theta_o + c.Do * x + c.Dbar_o * mu_mean + c.Fo * h.action_mean(t, x, mu_mean);
    s += nodes.weights[g] * so;
  }
  return s;
}

}  // namespace detail

struct HamiltonianOptions {
  int gh_order = 20;
  bool regularized = false;        // add gamma * E(t, mu, h)
  bool pairwise_double_term = false;  // O(n^2) evaluation of the mu x mu term
};

/// Integrated Hamiltonian
///   script-H(t, mu, h; pi) = int int H(., a, dJ, dxdJ) h(a|x) da mu(dx)
///     + 0.5 int int Tr(sigma_{o,h}(x) sigma_{o,h}(x')' d2J) mu(dx) mu(dx'),
/// optionally plus gamma E(t, mu, h). The bundle carries the pi-dependence.
inline double integrated_hamiltonian(const LQModel& model, double t, const MeasureSlice& mu,
                                     const PolicyView& h, const ValueDerivativeBundle& bundle,
                                     const HamiltonianOptions& opts = {}) {
  CoefficientSlice c = model.coefficients_at(t);
  Vector mu_mean = mu.mean();
  MeasureSlice::Nodes nodes = detail::measure_nodes(mu, h, opts.gh_order);
  Matrix q_mat = bundle.dx_dmu(t);

  double first = 0.0;
  double entropy = 0.0;
  for (std::size_t g = 0; g < nodes.points.size(); ++g) {
    const Vector& x = nodes.points[g];
    Vector p_vec = bundle.dj_dmu(t, x, mu_mean);
    double inner = 0.0;
    for (const auto& [a, w] : h.action_rule(t, x, mu_mean, opts.gh_order)) {
      Vector b = c.b0 + c.B * x + c.Bbar * mu_mean + c.C * a;
      Vector sig = c.theta + c.D * x + c.Dbar * mu_mean + c.F * a;
      Vector sig_o = c.theta_o + c.Do * x + c.Dbar_o * mu_mean + c.Fo * a;
      double ham = b.dot(p_vec) + 0.5 * (sig.dot(q_mat * sig) + sig_o.dot(q_mat * sig_o)) +
                   model.running_reward(c, x, mu_mean, a);
      inner += w * ham;
    }
    first += nodes.weights[g] * inner;
    if (opts.regularized) entropy += nodes.weights[g] * h.entropy(t, x);
  }

  Matrix d2 = bundle.d2_mu(t);
  double second;
  if (opts.pairwise_double_term) {
    second = 0.0;
    std::vector<Vector> so(nodes.points.size());
    for (std::size_t g = 0; g < nodes.points.size(); ++g) {
      const Vector& x = nodes.points[g];
      so[g] = c.theta_o + c.Do * x + c.Dbar_o * mu_mean +
              c.Fo * h.action_mean(t, x, mu_mean);
    }
    for (std::size_t g = 0; g < nodes.points.size(); ++g)
      for (std::size_t g2 = 0; g2 < nodes.points.size(); ++g2)
        second += 0.5 * nodes.weights[g] * nodes.weights[g2] * so[g].dot(d2 * so[g2]);
  } else {
    Vector sbar = detail::sigma_o_policy_mean(c, nodes, h, t, mu_mean);
    second = 0.5 * sbar.dot(d2 * sbar);
  }

  return first + second + (opts.regularized ? model.gamma * entropy : 0.0);
}

/// gamma-weighted aggregated entropy gamma * int E_h dmu.
inline double aggregated_entropy(const LQModel& model, double t, const MeasureSlice& mu,
                                 const PolicyView& h, int gh_order = 20) {
  MeasureSlice::Nodes nodes = detail::measure_nodes(mu, h, gh_order);
  double e = 0.0;
  for (std::size_t g = 0; g < nodes.points.size(); ++g)
    e += nodes.weights[g] * h.entropy(t, nodes.points[g]);
  return model.gamma * e;
}

/// Partial linear functional derivative of the integrated Hamiltonian with
/// respect to the kernel h, evaluated at (x, a):
///   H(t, x, mu, a, dJ(x), dxdJ) + int Tr(sigma_o(x,a) sigma_{o,h}(x')' d2J) mu(dx').
inline double variational_derivative(const LQModel& model, double t, const MeasureSlice& mu,
                                     const PolicyView& h, const ValueDerivativeBundle& bundle,
                                     const Vector& x, const Vector& a, int gh_order = 20) {
  CoefficientSlice c = model.coefficients_at(t);
  Vector mu_mean = mu.mean();
  MeasureSlice::Nodes nodes = detail::measure_nodes(mu, h, gh_order);
  Vector sbar = detail::sigma_o_policy_mean(c, nodes, h, t, mu_mean);
  Vector p_vec = bundle.dj_dmu(t, x, mu_mean);
  Matrix q_mat = bundle.dx_dmu(t);
  Vector sig_o = c.theta_o + c.Do * x + c.Dbar_o * mu_mean + c.Fo * a;
  double base = hamiltonian(model, t, x, mu_mean, a, p_vec, q_mat);
  return base + sig_o.dot(bundle.d2_mu(t) * sbar);
}

struct IqValue {
  double q_gamma = 0.0;      // dJ/dt - discount * J + script-H^gamma
  double q0 = 0.0;           // q_gamma - gamma E
  double entropy_term = 0.0; // gamma E(t, mu, h)
};

/// Continuous-time integrated q-function at (t, mu, h) for the policy behind
/// the bundle; `value` is J(t, mu; pi), entering through the discount term
/// (zero here, the discount rate is fixed to 0).
inline IqValue iq_function(const LQModel& model, double t, const MeasureSlice& mu,
                           const PolicyView& h, const ValueDerivativeBundle& bundle,
                           double value, const HamiltonianOptions& opts = {}) {
  constexpr double discount = 0.0;
  HamiltonianOptions reg = opts;
  reg.regularized = true;
  IqValue q;
  q.entropy_term = aggregated_entropy(model, t, mu, h, opts.gh_order);
  q.q_gamma = bundle.dj_dt(t, mu.mean(), mu.cov()) - discount * value +
              integrated_hamiltonian(model, t, mu, h, bundle, reg);
  q.q0 = q.q_gamma - q.entropy_term;
  return q;
}

/// Signed residual of the exploratory HJB equation at (t, mu) for a solved
/// quadratic value and its policy: dJ/dt + script-H^gamma(t, mu, pi; pi).
inline double hjb_residual(const LQModel& model, double t, const MeasureSlice& mu,
                           const QuadraticValueSolution& sol, const GaussianPolicy& policy,
                           int gh_order = 20) {
  ValueDerivativeBundle bundle = bundle_from(sol);
  HamiltonianOptions opts;
  opts.gh_order = gh_order;
  opts.regularized = true;
  return sol.value_time_derivative(t, mu.mean(), mu.cov()) +
         integrated_hamiltonian(model, t, mu, PolicyView(policy), bundle, opts);
}

inline double hjb_residual(const LQModel& model, double t, const MeasureSlice& mu,
                           const RiccatiSolution& sol, int gh_order = 20) {
  return hjb_residual(model, t, mu, sol, optimal_policy(sol, model), gh_order);
}

}  // namespace mfcq
