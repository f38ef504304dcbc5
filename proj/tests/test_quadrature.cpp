#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mfcq/quadrature.hpp"

using namespace mfcq;

TEST_CASE("gauss-hermite 5-point rule matches reference values") {
  auto gh = GaussHermite::rule(5);
  // fastGHQuad::gaussHermiteData(5)
  const double x[5] = {-2.0201828704560856, -0.9585724646138187, 0.0, 0.9585724646138187,
                       2.0201828704560856};
  const double w[5] = {0.0199532420590459, 0.3936193231522411, 0.9453087204829413,
                       0.3936193231522411, 0.0199532420590459};
  for (int i = 0; i < 5; ++i) {
    CHECK(gh.nodes[i] == Catch::Approx(x[i]).margin(1e-12));
    CHECK(gh.weights[i] == Catch::Approx(w[i]).margin(1e-12));
  }
}

TEST_CASE("gauss-hermite integrates gaussian moments exactly") {
  for (int order : {8, 12, 20}) {
    auto gh = GaussHermite::rule(order);
    // E[X^k] for X ~ N(1, 4): substitute x = 1 + sqrt(2)*2*z
    double m1 = 0.0, m2 = 0.0, m4 = 0.0;
    for (int i = 0; i < order; ++i) {
      double x = 1.0 + std::sqrt(2.0) * 2.0 * gh.nodes[i];
      double w = gh.weights[i] / std::sqrt(kPi);
      m1 += w * x;
      m2 += w * x * x;
      m4 += w * std::pow(x - 1.0, 4);
    }
    CHECK(m1 == Catch::Approx(1.0).margin(1e-12));
    CHECK(m2 == Catch::Approx(1.0 + 4.0).margin(1e-11));
    CHECK(m4 == Catch::Approx(3.0 * 16.0).margin(1e-10));  // 3 sigma^4
  }
}

TEST_CASE("gaussian quadrature handles multivariate covariance and point masses") {
  Vector mean(2);
  mean << 1.0, -2.0;
  Matrix cov(2, 2);
  cov << 2.0, 0.5, 0.5, 1.0;
  auto q = GaussianQuadrature::build(mean, cov, 10);

  double w_total = 0.0;
  Vector m = Vector::Zero(2);
  Matrix c = Matrix::Zero(2, 2);
  for (std::size_t i = 0; i < q.points.size(); ++i) {
    w_total += q.weights[i];
    m += q.weights[i] * q.points[i];
  }
  for (std::size_t i = 0; i < q.points.size(); ++i)
    c += q.weights[i] * (q.points[i] - m) * (q.points[i] - m).transpose();
  CHECK(w_total == Catch::Approx(1.0).margin(1e-12));
  CHECK((m - mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((c - cov).cwiseAbs().maxCoeff() < 1e-10);

  auto point = GaussianQuadrature::build(mean, Matrix::Zero(2, 2), 10);
  REQUIRE(point.points.size() == 1);
  CHECK(point.weights[0] == 1.0);
  CHECK((point.points[0] - mean).cwiseAbs().maxCoeff() == 0.0);
}
