#pragma once

// Gauss-Hermite rules (physicists' weight exp(-x^2)) via Golub-Welsch, and
// their lift to expectations over multivariate Gaussians. LQ integrands are
// polynomials of degree <= 2 in each variable, so modest orders integrate
// them exactly.

#include <vector>

#include "mfcq/types.hpp"

namespace mfcq {

struct GaussHermite {
  Vector nodes;    // ascending
  Vector weights;  // sum = sqrt(pi)

  static GaussHermite rule(int order) {
    if (order < 1) throw ConfigError("quadrature order must be >= 1");
    Matrix jacobi = Matrix::Zero(order, order);
    for (int k = 1; k < order; ++k) {
      double off = std::sqrt(k / 2.0);
      jacobi(k, k - 1) = off;
      jacobi(k - 1, k) = off;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(jacobi);
    GaussHermite gh;
    gh.nodes = es.eigenvalues();
    gh.weights = Vector(order);
    const double mu0 = std::sqrt(kPi);  // integral of the weight
    for (int k = 0; k < order; ++k) {
      double v0 = es.eigenvectors()(0, k);
      gh.weights[k] = mu0 * v0 * v0;
    }
    return gh;
  }
};

/// Tensor-product quadrature for E[f(X)], X ~ N(mean, cov). Weights sum to 1.
/// A zero covariance collapses to the single point `mean`.
struct GaussianQuadrature {
  std::vector<Vector> points;
  std::vector<double> weights;

  static GaussianQuadrature build(const Vector& mean, const Matrix& cov, int order_per_axis) {
    const Eigen::Index k = mean.size();
    GaussianQuadrature q;
    if (cov.cwiseAbs().maxCoeff() == 0.0) {
      q.points = {mean};
      q.weights = {1.0};
      return q;
    }
    GaussHermite gh = GaussHermite::rule(order_per_axis);
    Matrix root = symmetric_sqrt(cov, 1e-10, "measure covariance");
    const int n = order_per_axis;
    std::vector<int> idx(k, 0);
    const double norm = std::pow(kPi, -0.5 * static_cast<double>(k));
    while (true) {
      Vector z(k);
      double w = norm;
      for (Eigen::Index i = 0; i < k; ++i) {
        z[i] = gh.nodes[idx[i]];
        w *= gh.weights[idx[i]];
      }
      q.points.push_back(mean + std::sqrt(2.0) * (root * z));
      q.weights.push_back(w);
      Eigen::Index axis = 0;
      while (axis < k && ++idx[axis] == n) idx[axis++] = 0;
      if (axis == k) break;
    }
    return q;
  }
};

}  // namespace mfcq
