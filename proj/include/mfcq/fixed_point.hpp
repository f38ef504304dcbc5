#pragma once

// Two-layer fixed-point machinery. Inner layer: damped iteration of the
// Gibbs map h -> exp((1/gamma) dH/dh) / normalizer on a tabular action grid,
// whose fixed point is the optimal one-step iterated policy at one (t, mu).
// Outer layer: policy evaluation (Lyapunov ODEs for the quadratic value of a
// fixed Gaussian policy) followed by the closed-form improvement in the
// Gaussian family, iterated until the policy blocks stop moving.

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "mfcq/hamiltonian.hpp"
#include "mfcq/model.hpp"
#include "mfcq/policy.hpp"
#include "mfcq/riccati.hpp"

namespace mfcq {

struct FixedPointTrace {
  struct Record {
    int iteration = 0;
    double change = 0.0;   // sup-cell |Phi(h)-h| (inner), max policy block delta (outer)
    double value = 0.0;    // J(0, mu_ref; pi^n) for the outer loop
    double damping = 1.0;
    // outer-loop detail: per-block policy deltas and the max node change of
    // the value coefficients (Lambda, Gamma, zeta, chi)
    double delta_k = 0.0, delta_kbar = 0.0, delta_k0 = 0.0, delta_sigma = 0.0;
    double value_coeff_change = 0.0;
  };
  std::vector<Record> records;
  bool converged = false;
  int iterations = 0;  // damped updates actually applied
};

/// One application of the Gibbs map: rho'(a|x) proportional to
/// exp((1/gamma) dH/dh(t, mu, h)(x, a)), normalized per state node over the
/// truncated action grid. Exponents are max-shifted per node before
/// exponentiation.
inline TabularPolicy gibbs_map(const LQModel& model, double t, const MeasureSlice& mu,
                               const TabularPolicy& h, const ValueDerivativeBundle& bundle) {
  CoefficientSlice c = model.coefficients_at(t);
  Vector mu_mean = mu.mean();
  PolicyView view(h);
  MeasureSlice::Nodes nodes{h.states(), h.state_weights()};
  Vector sbar = detail::sigma_o_policy_mean(c, nodes, view, t, mu_mean);
  Matrix d2 = bundle.d2_mu(t);
  Matrix q_mat = bundle.dx_dmu(t);

  TabularPolicy out = h;
  Matrix& rho = out.density();
  const auto& actions = h.actions();
  for (std::size_t g = 0; g < h.states().size(); ++g) {
    const Vector& x = h.states()[g];
    Vector p_vec = bundle.dj_dmu(t, x, mu_mean);
    Vector expo(actions.size());
    for (std::size_t j = 0; j < actions.size(); ++j) {
      const Vector& a = actions[j];
      Vector sig_o = c.theta_o + c.Do * x + c.Dbar_o * mu_mean + c.Fo * a;
      double dh = hamiltonian(model, t, x, mu_mean, a, p_vec, q_mat) + sig_o.dot(d2 * sbar);
      expo[static_cast<Eigen::Index>(j)] = dh / model.gamma;
    }
    double shift = expo.maxCoeff();
    if (!std::isfinite(shift))
      throw NumericalError("gibbs map degenerate at state node " + std::to_string(g));
    double norm = 0.0;
    for (Eigen::Index j = 0; j < expo.size(); ++j) {
      expo[j] = std::exp(expo[j] - shift);
      norm += expo[j];
    }
    norm *= h.cell_volume();
    for (Eigen::Index j = 0; j < expo.size(); ++j)
      rho(static_cast<Eigen::Index>(g), j) = expo[j] / norm;
  }
  return out;
}

struct InnerResult {
  TabularPolicy policy;
  FixedPointTrace trace;
};

/// Damped iteration h <- (1-theta) h + theta Phi(h). The recorded change is
/// the fixed-point residual sup|Phi(h)-h|; convergence is checked before a
/// further update, so a constant map (Fo = 0) converges after exactly one
/// update at theta = 1. Non-convergence is reported in the trace, not thrown.
inline InnerResult inner_fixed_point(const LQModel& model, double t, const MeasureSlice& mu,
                                     const ValueDerivativeBundle& bundle, const TabularPolicy& h0,
                                     double theta = 0.5, double tol = 1e-10, int max_iter = 500) {
  if (!(theta > 0.0 && theta <= 1.0)) throw ConfigError("damping theta must be in (0, 1]");
  if (!h0.is_normalized()) throw ConfigError("initial tabular policy is not normalized");
  InnerResult result{h0, {}};
  for (int k = 0; k <= max_iter; ++k) {
    TabularPolicy mapped = gibbs_map(model, t, mu, result.policy, bundle);
    double change = mapped.sup_difference(result.policy);
    result.trace.records.push_back({k, change, 0.0, theta});
    if (change <= tol) {
      result.trace.converged = true;
      return result;
    }
    if (k == max_iter) break;  // out of budget, report as-is
    result.policy.density() =
        (1.0 - theta) * result.policy.density() + theta * mapped.density();
    result.trace.iterations = k + 1;
  }
  result.trace.converged = false;
  return result;
}

// --- policy evaluation (Lyapunov ODEs) ---------------------------------------

/// Right-hand sides for the quadratic value of a fixed Gaussian policy with
/// blocks (K, Kbar, K0, Sigma): collecting the Var(mu)(.), mu'(.)mu, mu and
/// constant coefficients of the exploratory HJB under the quadratic ansatz
/// gives four linear ODEs. The common-noise double-measure term turns every
/// (Do + Dbar_o + Fo Kbar)-congruence from Lambda into Gamma.
inline QuadraticDerivatives policy_value_rhs(const LQModel& model, double t, const Matrix& lambda,
                                             const Matrix& gamma_mat, const Vector& zeta,
                                             const GaussianPolicy& policy) {
  CoefficientSlice c = model.coefficients_at(t);
  Matrix k = policy.k_at(t);
  Matrix kbar = policy.kbar_at(t);
  Vector k0 = policy.k0_at(t);
  Matrix sigma = policy.sigma_at(t);

  Matrix bk = c.B + c.C * k;
  Matrix dk = c.D + c.F * k;
  Matrix dok = c.Do + c.Fo * k;
  QuadraticDerivatives d;
  d.dlambda = -(bk.transpose() * lambda + lambda * bk + dk.transpose() * lambda * dk +
                dok.transpose() * lambda * dok + c.M + k.transpose() * c.R * k);

  Matrix bkb = c.B + c.Bbar + c.C * kbar;
  Matrix dkb = c.D + c.Dbar + c.F * kbar;
  Matrix dokb = c.Do + c.Dbar_o + c.Fo * kbar;
  d.dgamma = -(bkb.transpose() * gamma_mat + gamma_mat * bkb + dkb.transpose() * lambda * dkb +
               dokb.transpose() * gamma_mat * dokb + c.M + c.Mbar +
               kbar.transpose() * c.R * kbar);

  Vector drift0 = c.b0 + c.C * k0;
  Vector sig0 = c.theta + c.F * k0;
  Vector sigo0 = c.theta_o + c.Fo * k0;
  d.dzeta = -(bkb.transpose() * zeta + 2.0 * gamma_mat * drift0 +
              2.0 * dkb.transpose() * lambda * sig0 + 2.0 * dokb.transpose() * gamma_mat * sigo0 +
              2.0 * kbar.transpose() * c.R * k0 + c.O);

  Matrix u = c.F.transpose() * lambda * c.F + c.Fo.transpose() * lambda * c.Fo + c.R;
  Eigen::LLT<Matrix> llt(sigma);
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < sigma.rows(); ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
  double entropy = 0.5 * (model.p * std::log(2.0 * kPi * std::exp(1.0)) + log_det);
  d.dchi = -(drift0.dot(zeta) + sig0.dot(lambda * sig0) + sigo0.dot(gamma_mat * sigo0) +
             k0.dot(c.R * k0) + (u * sigma).trace() + model.gamma * entropy);
  return d;
}

/// Quadratic value coefficients of J(.,.; pi) for a fixed Gaussian policy,
/// integrated backward from (P, P+Pbar, 0, 0). The coefficient collection is
/// derived once; its correctness is anchored to the optimal-policy
/// consistency and Monte Carlo oracles in the test suite.
inline PolicyValueSolution evaluate_policy(const LQModel& model, const GaussianPolicy& policy,
                                           int steps) {
  PolicyValueSolution sol = detail::integrate_backward(
      model, steps,
      [&](double t, const Matrix& l, const Matrix& g, const Vector& z, double /*chi*/) {
        return policy_value_rhs(model, t, l, g, z, policy);
      });
  sol.method = "rk4-policy";
  sol.blocks.reserve(sol.times.size());
  for (std::size_t i = 0; i < sol.times.size(); ++i)
    sol.blocks.push_back(
        auxiliary_blocks(model, sol.times[i], sol.lambda[i], sol.gamma[i], sol.zeta[i]));
  return sol;
}

struct OuterResult {
  GaussianPolicy policy;
  PolicyValueSolution value;  // value of the *input* policy
};

/// One outer step pi -> I(pi): evaluate pi, then build the improved Gaussian
/// policy from the blocks of (Lambda^pi, Gamma^pi, zeta^pi). This is the
/// closed-form inner fixed point in the Gaussian family; the tabular inner
/// iteration cross-checks it at spot (t, mu) pairs in the tests.
inline OuterResult outer_iterate(const LQModel& model, const GaussianPolicy& policy, int steps) {
  PolicyValueSolution value = evaluate_policy(model, policy, steps);
  std::vector<Matrix> k, kbar, sigma;
  std::vector<Vector> k0;
  for (std::size_t i = 0; i < value.times.size(); ++i) {
    const AuxiliaryBlocks& b = value.blocks[i];
    double t = value.times[i];
    Eigen::LLT<Matrix> llt_u, llt_v;
    try {
      llt_u = detail::factor_negated(b.U, t, "U");
      llt_v = detail::factor_negated(b.V, t, "V");
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) +
                           " (policy iteration block indefinite; check condition (H) or damp)");
    }
    k.push_back(llt_u.solve(b.S));
    kbar.push_back(llt_v.solve(b.Z));
    k0.push_back(0.5 * llt_v.solve(b.Y));
    sigma.push_back(
        symmetrized(0.5 * model.gamma * llt_u.solve(Matrix::Identity(model.p, model.p))));
  }
  return {GaussianPolicy(value.times, std::move(k), std::move(kbar), std::move(k0),
                         std::move(sigma)),
          std::move(value)};
}

struct TwoLayerResult {
  GaussianPolicy policy;
  PolicyValueSolution value;  // value of the returned policy
  FixedPointTrace trace;
};

struct TwoLayerOptions {
  double tol = 1e-8;
  int max_outer = 100;
  int steps = 1000;
  Vector mu_ref_mean;  // defaults to 0
  Matrix mu_ref_cov;   // defaults to identity
};

/// Full two-layer driver: repeat outer_iterate until the max block
/// difference drops below tol. Records J(0, mu_ref; pi^n) per iteration,
/// which policy improvement makes non-decreasing.
inline TwoLayerResult two_layer_solve(const LQModel& model, const GaussianPolicy& pi0,
                                      const TwoLayerOptions& opts = {}) {
  Vector ref_mean =
      opts.mu_ref_mean.size() ? opts.mu_ref_mean : Vector::Zero(model.d);
  Matrix ref_cov =
      opts.mu_ref_cov.size() ? opts.mu_ref_cov : Matrix::Identity(model.d, model.d);

  TwoLayerResult result{pi0, {}, {}};
  bool have_previous_value = false;
  for (int n = 0; n < opts.max_outer; ++n) {
    OuterResult step = outer_iterate(model, result.policy, opts.steps);
    double change = step.policy.max_block_difference(result.policy);

    FixedPointTrace::Record rec;
    rec.iteration = n;
    rec.change = change;
    rec.value = step.value.value(0.0, ref_mean, ref_cov);
    for (std::size_t i = 0; i < step.policy.times().size(); ++i) {
      double t = step.policy.times()[i];
      rec.delta_k = std::max(
          rec.delta_k, (step.policy.k_nodes()[i] - result.policy.k_at(t)).cwiseAbs().maxCoeff());
      rec.delta_kbar =
          std::max(rec.delta_kbar, (step.policy.kbar_nodes()[i] - result.policy.kbar_at(t))
                                       .cwiseAbs()
                                       .maxCoeff());
      rec.delta_k0 = std::max(rec.delta_k0, (step.policy.k0_nodes()[i] -
                                             result.policy.k0_at(t))
                                                .cwiseAbs()
                                                .maxCoeff());
      rec.delta_sigma =
          std::max(rec.delta_sigma, (step.policy.sigma_nodes()[i] - result.policy.sigma_at(t))
                                        .cwiseAbs()
                                        .maxCoeff());
    }
    if (have_previous_value) rec.value_coeff_change = step.value.max_node_difference(result.value);
    result.trace.records.push_back(rec);

    result.policy = step.policy;
    result.value = std::move(step.value);
    have_previous_value = true;
    result.trace.iterations = n + 1;
    if (change <= opts.tol) {
      result.trace.converged = true;
      // value of the converged policy (records hold the pre-update values)
      result.value = evaluate_policy(model, result.policy, opts.steps);
      return result;
    }
  }
  result.trace.converged = false;
  return result;
}

inline void write_trace_csv(const FixedPointTrace& trace, std::ostream& os) {
  os << "iteration,change,value,damping,delta_K,delta_Kbar,delta_K0,delta_Sigma,"
        "value_coeff_change\n";
  for (const auto& r : trace.records) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.iteration, r.change, r.value, r.damping, r.delta_k, r.delta_kbar, r.delta_k0,
                  r.delta_sigma, r.value_coeff_change);
    os << buf;
  }
}

}  // namespace mfcq
