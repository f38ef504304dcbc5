#pragma once

// Shared test fixtures and small statistical helpers.

#include <cmath>
#include <vector>

#include "mfcq/model.hpp"
#include "mfcq/types.hpp"

namespace mfcq::test {

inline Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

/// d = p = 1, T = 1, gamma = 1, C = 1, R = -0.5, P = -0.5, everything else 0.
/// Closed forms: Lambda(t) = Gamma(t) = 1/(2t-4), zeta = 0,
/// chi(t) = 0.5 log(2 pi) (1 - t).
inline LQModel m1() {
  LQModel m;
  m.d = 1;
  m.p = 1;
  m.horizon = 1.0;
  m.gamma = 1.0;
  for (Coefficient* c : {&m.b0, &m.theta, &m.theta_o, &m.O}) *c = Coefficient::zero(1, 1);
  for (Coefficient* c : {&m.B, &m.Bbar, &m.D, &m.Dbar, &m.Do, &m.Dbar_o, &m.M, &m.Mbar})
    *c = Coefficient::zero(1, 1);
  m.C = Coefficient(scalar(1.0));
  m.F = Coefficient::zero(1, 1);
  m.Fo = Coefficient::zero(1, 1);
  m.R = Coefficient(scalar(-0.5));
  m.P = scalar(-0.5);
  m.Pbar = scalar(0.0);
  return m;
}

/// M1 with controlled common noise: Fo = 0.5.
inline LQModel m2() {
  LQModel m = m1();
  m.Fo = Coefficient(scalar(0.5));
  return m;
}

/// Pure-noise model for simulator oracles: dX = B x dt + theta dW + theta_o dB
/// with B = -0.5, theta = 0.3, theta_o = 0.2, rewards zero.
inline LQModel m3() {
  LQModel m = m1();
  m.C = Coefficient::zero(1, 1);
  m.R = Coefficient::zero(1, 1);
  m.P = scalar(0.0);
  m.B = Coefficient(scalar(-0.5));
  m.theta = Coefficient(scalar(0.3));
  m.theta_o = Coefficient(scalar(0.2));
  return m;
}

inline constexpr double kHalfLog2Pi = 0.9189385332046727;    // 0.5 log(2 pi)
inline constexpr double kGaussEntropy = 1.4189385332046727;  // 0.5 log(2 pi e)

/// Two-sample Kolmogorov-Smirnov p-value (asymptotic with the usual
/// small-sample correction).
inline double ks_two_sample_pvalue(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d_stat = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j])
      ++i;
    else
      ++j;
    double fa = static_cast<double>(i) / a.size();
    double fb = static_cast<double>(j) / b.size();
    d_stat = std::max(d_stat, std::abs(fa - fb));
  }
  double ne = static_cast<double>(a.size()) * b.size() / (a.size() + b.size());
  double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d_stat;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k)
    p += 2.0 * (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

/// 5-point Gauss-Legendre rule on [0, 1].
struct GaussLegendre5 {
  static constexpr double nodes[5] = {0.5 - 0.45308992296933193, 0.5 - 0.26923465505284155, 0.5,
                                      0.5 + 0.26923465505284155, 0.5 + 0.45308992296933193};
  static constexpr double weights[5] = {0.5 * 0.23692688505618908, 0.5 * 0.47862867049936647,
                                        0.5 * 0.5688888888888889, 0.5 * 0.47862867049936647,
                                        0.5 * 0.23692688505618908};
};

}  // namespace mfcq::test
