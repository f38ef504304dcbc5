#pragma once

// Backward matrix Riccati system for the entropy-regularized LQ mean-field
// problem with controlled common noise, and the Gaussian optimal policy it
// induces. The value function is the quadratic form
//   J(t, mu) = Var(mu)(Lambda(t)) + mu' Gamma(t) mu + mu' zeta(t) + chi(t),
// where Var(mu)(A) = int (x-mu)' A (x-mu) mu(dx).

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "mfcq/model.hpp"
#include "mfcq/policy.hpp"
#include "mfcq/types.hpp"

namespace mfcq {

/// The action-space blocks entering the Riccati right-hand sides and the
/// optimal policy: U, V are p x p, S, Z are p x d, Y is p.
struct AuxiliaryBlocks {
  Matrix U, V, S, Z;
  Vector Y;
};

inline AuxiliaryBlocks auxiliary_blocks(const CoefficientSlice& c, const Matrix& lambda,
                                        const Matrix& gamma_mat, const Vector& zeta) {
  AuxiliaryBlocks b;
  b.U = c.F.transpose() * lambda * c.F + c.Fo.transpose() * lambda * c.Fo + c.R;
  b.V = c.F.transpose() * lambda * c.F + c.Fo.transpose() * gamma_mat * c.Fo + c.R;
  b.S = c.C.transpose() * lambda + c.F.transpose() * lambda * c.D +
        c.Fo.transpose() * lambda * c.Do;
  b.Z = c.C.transpose() * gamma_mat + c.F.transpose() * lambda * (c.D + c.Dbar) +
        c.Fo.transpose() * gamma_mat * (c.Do + c.Dbar_o);
  b.Y = c.C.transpose() * zeta + 2.0 * c.F.transpose() * lambda * c.theta +
        2.0 * c.Fo.transpose() * gamma_mat * c.theta_o;
  return b;
}

inline AuxiliaryBlocks auxiliary_blocks(const LQModel& model, double t, const Matrix& lambda,
                                        const Matrix& gamma_mat, const Vector& zeta) {
  return auxiliary_blocks(model.coefficients_at(t), lambda, gamma_mat, zeta);
}

namespace detail {

/// Cholesky factor of the negated block. U and V are negative definite under
/// condition (H); failure here is the singularity/indefiniteness guard.
inline Eigen::LLT<Matrix> factor_negated(const Matrix& block, double t, const char* name) {
  Eigen::LLT<Matrix> llt(Matrix(-block));
  if (llt.info() != Eigen::Success) {
    std::ostringstream os;
    os << "block " << name << " at t=" << t << " is not negative definite; eigenvalues:";
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(block), Eigen::EigenvaluesOnly);
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
      os << " " << es.eigenvalues()[i];
    throw NumericalError(os.str());
  }
  return llt;
}

inline double log_det_from_llt(const Eigen::LLT<Matrix>& llt) {
  double s = 0.0;
  Matrix l = llt.matrixL();
  for (Eigen::Index i = 0; i < l.rows(); ++i) s += 2.0 * std::log(l(i, i));
  return s;
}

}  // namespace detail

struct QuadraticDerivatives {
  Matrix dlambda, dgamma;
  Vector dzeta;
  double dchi = 0.0;
};

/// Right-hand sides of the backward ODEs solved for the primed terms. The
/// chi equation carries the entropy contribution
/// (gamma/2) log((-gamma pi)^p det U^{-1}) = (gamma/2)(p log(gamma pi) - log det(-U)),
/// whose argument is positive exactly because U < 0.
inline QuadraticDerivatives riccati_rhs(const LQModel& model, double t, const Matrix& lambda,
                                        const Matrix& gamma_mat, const Vector& zeta,
                                        double /*chi*/) {
  CoefficientSlice c = model.coefficients_at(t);
  AuxiliaryBlocks b = auxiliary_blocks(c, lambda, gamma_mat, zeta);
  auto llt_u = detail::factor_negated(b.U, t, "U");
  auto llt_v = detail::factor_negated(b.V, t, "V");
  Matrix uinv_s = -llt_u.solve(b.S);  // U^{-1} S
  Matrix vinv_z = -llt_v.solve(b.Z);
  Vector vinv_y = -llt_v.solve(b.Y);

  QuadraticDerivatives d;
  d.dlambda = -(c.M + c.D.transpose() * lambda * c.D + c.Do.transpose() * lambda * c.Do +
                c.B.transpose() * lambda + lambda * c.B - b.S.transpose() * uinv_s);
  Matrix dd = c.D + c.Dbar;
  Matrix ddo = c.Do + c.Dbar_o;
  Matrix bb = c.B + c.Bbar;
  d.dgamma = -(c.M + c.Mbar + dd.transpose() * lambda * dd + ddo.transpose() * gamma_mat * ddo +
               bb.transpose() * gamma_mat + gamma_mat * bb - b.Z.transpose() * vinv_z);
  d.dzeta = -(bb.transpose() * zeta + 2.0 * gamma_mat * c.b0 +
              2.0 * dd.transpose() * lambda * c.theta +
              2.0 * ddo.transpose() * gamma_mat * c.theta_o - b.Z.transpose() * vinv_y + c.O);
  double entropy_term = 0.5 * model.gamma *
                        (model.p * std::log(model.gamma * kPi) - detail::log_det_from_llt(llt_u));
  d.dchi = -(c.theta.dot(lambda * c.theta) + c.theta_o.dot(gamma_mat * c.theta_o) +
             c.b0.dot(zeta) - 0.25 * b.Y.dot(vinv_y) + entropy_term);
  return d;
}

/// Time-gridded quadratic value coefficients. Produced by solve_backward for
/// the optimal problem and by evaluate_policy for a fixed Gaussian policy;
/// both share the quadratic ansatz, so the container is common.
struct QuadraticValueSolution {
  std::vector<double> times;  // ascending, times.front()=0, times.back()=T
  std::vector<Matrix> lambda, gamma;
  std::vector<Vector> zeta;
  std::vector<double> chi;
  std::vector<QuadraticDerivatives> derivs;  // d/dt at each node
  std::vector<AuxiliaryBlocks> blocks;       // cached per node
  int steps = 0;
  std::string method = "rk4";

  Matrix lambda_at(double t) const { return lerp_nodes(times, lambda, t); }
  Matrix gamma_at(double t) const { return lerp_nodes(times, gamma, t); }
  Vector zeta_at(double t) const { return lerp_nodes(times, zeta, t); }
  double chi_at(double t) const { return lerp_nodes(times, chi, t); }

  /// J(t, mu) for a Gaussian summary (mean, cov) of mu.
  double value(double t, const Vector& mean, const Matrix& cov) const {
    return (lambda_at(t) * cov).trace() + mean.dot(gamma_at(t) * mean) + mean.dot(zeta_at(t)) +
           chi_at(t);
  }

  /// dJ/dt(t, mu) from the ODE right-hand sides (no finite differences).
  double value_time_derivative(double t, const Vector& mean, const Matrix& cov) const {
    auto [i, w] = interp_coords(times, t);
    auto eval = [&](const QuadraticDerivatives& d) {
      return (d.dlambda * cov).trace() + mean.dot(d.dgamma * mean) + mean.dot(d.dzeta) + d.dchi;
    };
    if (w == 0.0) return eval(derivs[i]);
    return (1.0 - w) * eval(derivs[i]) + w * eval(derivs[i + 1]);
  }

  double max_node_difference(const QuadraticValueSolution& other) const {
    if (other.times.size() != times.size())
      throw ConfigError("solutions live on different grids");
    double m = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      m = std::max(m, (lambda[i] - other.lambda[i]).cwiseAbs().maxCoeff());
      m = std::max(m, (gamma[i] - other.gamma[i]).cwiseAbs().maxCoeff());
      m = std::max(m, (zeta[i] - other.zeta[i]).cwiseAbs().maxCoeff());
      m = std::max(m, std::abs(chi[i] - other.chi[i]));
    }
    return m;
  }
};

using RiccatiSolution = QuadraticValueSolution;
using PolicyValueSolution = QuadraticValueSolution;

namespace detail {

struct QuadState {
  Matrix l, g;
  Vector z;
  double chi;
};

inline QuadState axpy(const QuadState& y, double a, const QuadraticDerivatives& d) {
  return {y.l + a * d.dlambda, y.g + a * d.dgamma, y.z + a * d.dzeta, y.chi + a * d.dchi};
}

/// Classical fixed-step RK4 from T down to 0; nodes returned ascending.
/// Lambda and Gamma are re-symmetrized after every step so floating-point
/// asymmetry cannot leak into eigenvalue checks.
template <typename Rhs>
QuadraticValueSolution integrate_backward(const LQModel& model, int steps, const Rhs& rhs) {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  const double h = model.horizon / steps;
  const Eigen::Index d = model.d;

  QuadraticValueSolution sol;
  sol.steps = steps;
  sol.times.resize(steps + 1);
  sol.lambda.resize(steps + 1);
  sol.gamma.resize(steps + 1);
  sol.zeta.resize(steps + 1);
  sol.chi.resize(steps + 1);
  sol.derivs.resize(steps + 1);

  // terminal conditions, exactly
  QuadState y{model.P, model.P + model.Pbar, Vector::Zero(d), 0.0};
  sol.times[steps] = model.horizon;
  sol.lambda[steps] = y.l;
  sol.gamma[steps] = y.g;
  sol.zeta[steps] = y.z;
  sol.chi[steps] = y.chi;
  sol.derivs[steps] = rhs(model.horizon, y.l, y.g, y.z, y.chi);

  double t = model.horizon;
  for (int k = steps; k > 0; --k) {
    QuadraticDerivatives k1 = rhs(t, y.l, y.g, y.z, y.chi);
    QuadState y2 = axpy(y, -0.5 * h, k1);
    QuadraticDerivatives k2 = rhs(t - 0.5 * h, y2.l, y2.g, y2.z, y2.chi);
    QuadState y3 = axpy(y, -0.5 * h, k2);
    QuadraticDerivatives k3 = rhs(t - 0.5 * h, y3.l, y3.g, y3.z, y3.chi);
    QuadState y4 = axpy(y, -h, k3);
    QuadraticDerivatives k4 = rhs(t - h, y4.l, y4.g, y4.z, y4.chi);

    y.l -= (h / 6.0) * (k1.dlambda + 2.0 * k2.dlambda + 2.0 * k3.dlambda + k4.dlambda);
    y.g -= (h / 6.0) * (k1.dgamma + 2.0 * k2.dgamma + 2.0 * k3.dgamma + k4.dgamma);
    y.z -= (h / 6.0) * (k1.dzeta + 2.0 * k2.dzeta + 2.0 * k3.dzeta + k4.dzeta);
    y.chi -= (h / 6.0) * (k1.dchi + 2.0 * k2.dchi + 2.0 * k3.dchi + k4.dchi);
    y.l = symmetrized(y.l);
    y.g = symmetrized(y.g);
    t = model.horizon * (k - 1) / steps;

    if (!y.l.allFinite() || !y.g.allFinite() || !y.z.allFinite() || !std::isfinite(y.chi))
      throw NumericalError("backward integration diverged; last valid t=" +
                           std::to_string(t + h));

    sol.times[k - 1] = t;
    sol.lambda[k - 1] = y.l;
    sol.gamma[k - 1] = y.g;
    sol.zeta[k - 1] = y.z;
    sol.chi[k - 1] = y.chi;
    sol.derivs[k - 1] = rhs(t, y.l, y.g, y.z, y.chi);
  }
  return sol;
}

}  // namespace detail

struct SolveOptions {
  bool check_condition_h = true;
  bool warn_only = false;  // proceed on a failed condition (H) check
  double delta = 1e-8;
  int condition_samples = 201;
};

/// Solves the optimal backward system with terminal values
/// (P, P+Pbar, 0, 0) and caches the auxiliary blocks per node.
inline RiccatiSolution solve_backward(const LQModel& model, int steps,
                                      const SolveOptions& opts = {}) {
  model.validate();
  if (opts.check_condition_h) {
    ConditionHReport report = validate_condition_h(model, opts.delta, opts.condition_samples);
    if (!report.holds && !opts.warn_only)
      throw ConfigError("condition (H) fails:\n" + report.summary());
  }
  RiccatiSolution sol = detail::integrate_backward(
      model, steps,
      [&](double t, const Matrix& l, const Matrix& g, const Vector& z, double chi) {
        return riccati_rhs(model, t, l, g, z, chi);
      });
  sol.method = "rk4-optimal";
  sol.blocks.reserve(sol.times.size());
  for (std::size_t i = 0; i < sol.times.size(); ++i)
    sol.blocks.push_back(
        auxiliary_blocks(model, sol.times[i], sol.lambda[i], sol.gamma[i], sol.zeta[i]));
  return sol;
}

/// Gaussian optimal policy per node: K = -U^{-1}S, Kbar = -V^{-1}Z,
/// K0 = -0.5 V^{-1}Y, Sigma = -(gamma/2) U^{-1}. Kbar comes from the linear
/// solve V Kbar = -Z; the proof's fixed-point characterization
/// (U + Fo'(Gamma-Lambda)Fo) Kbar = -Z is the same equation because
/// U + Fo'(Gamma-Lambda)Fo = V, and the residual is verified per node.
inline GaussianPolicy optimal_policy(const RiccatiSolution& sol, const LQModel& model) {
  if (sol.blocks.size() != sol.times.size())
    throw ConfigError("solution has no cached auxiliary blocks");
  std::vector<Matrix> k, kbar, sigma;
  std::vector<Vector> k0;
  for (std::size_t i = 0; i < sol.times.size(); ++i) {
    const AuxiliaryBlocks& b = sol.blocks[i];
    double t = sol.times[i];
    auto llt_u = detail::factor_negated(b.U, t, "U");
    auto llt_v = detail::factor_negated(b.V, t, "V");
    k.push_back(llt_u.solve(b.S));        // -U^{-1} S
    kbar.push_back(llt_v.solve(b.Z));     // -V^{-1} Z
    k0.push_back(0.5 * llt_v.solve(b.Y)); // -0.5 V^{-1} Y
    Matrix neg_u_inv = llt_u.solve(Matrix::Identity(model.p, model.p));
    sigma.push_back(symmetrized(0.5 * model.gamma * neg_u_inv));

    double residual = (b.V * kbar.back() + b.Z).cwiseAbs().maxCoeff();
    if (residual > 1e-10)
      throw InvariantViolation("Kbar fixed-point residual " + std::to_string(residual) +
                               " at t=" + std::to_string(t));
  }
  return GaussianPolicy(sol.times, std::move(k), std::move(kbar), std::move(k0),
                        std::move(sigma));
}

}  // namespace mfcq
