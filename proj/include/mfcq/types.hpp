#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "mfcq/errors.hpp"

namespace mfcq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;

inline bool is_symmetric(const Matrix& m, double tol = 1e-12) {
  return m.rows() == m.cols() && (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Largest eigenvalue of a symmetric matrix.
inline double max_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

/// Symmetric PSD square root via spectral decomposition. Eigenvalues below
/// -neg_tol raise a NumericalError; small negatives are clamped to zero.
inline Matrix symmetric_sqrt(const Matrix& m, double neg_tol = 1e-10,
                             const std::string& what = "matrix") {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m));
  Vector ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -neg_tol)
      throw NumericalError(what + " is not positive semidefinite (eigenvalue " +
                           std::to_string(ev[i]) + ")");
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Locate t in an ascending grid and return (left index, interpolation weight).
inline std::pair<std::size_t, double> interp_coords(const std::vector<double>& ts, double t) {
  if (ts.size() == 1 || t <= ts.front()) return {0, 0.0};
  if (t >= ts.back()) return {ts.size() - 2, 1.0};
  auto it = std::upper_bound(ts.begin(), ts.end(), t);
  std::size_t i = static_cast<std::size_t>(it - ts.begin()) - 1;
  double w = (t - ts[i]) / (ts[i + 1] - ts[i]);
  return {i, w};
}

template <typename T>
T lerp_nodes(const std::vector<double>& ts, const std::vector<T>& vs, double t) {
  auto [i, w] = interp_coords(ts, t);
  if (w == 0.0) return vs[i];
  return (1.0 - w) * vs[i] + w * vs[i + 1];
}

}  // namespace mfcq
