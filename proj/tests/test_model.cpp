#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "mfcq/model.hpp"

using namespace mfcq;
using test::scalar;

namespace {

const char* kM1Json = R"({
  "dims": {"d": 1, "p": 1},
  "horizon": 1.0,
  "gamma": 1.0,
  "coeffs": {"C": 1.0, "R": -0.5},
  "terminal": {"P": -0.5}
})";

}  // namespace

TEST_CASE("condition (H) holds on M1 with delta = 0.4") {
  auto report = validate_condition_h(test::m1(), 0.4);
  CHECK(report.holds);
  // scalar conditions: P = -0.5, P+Pbar = -0.5, M = 0, M+Mbar = 0, R+0.4 = -0.1
  REQUIRE(report.margins.size() == 5);
  CHECK(report.margins[0].margin == Catch::Approx(0.5));
  CHECK(report.margins[4].margin == Catch::Approx(0.1));
}

TEST_CASE("condition (H) rejects positive R and names it") {
  LQModel bad = test::m1();
  bad.R = Coefficient(scalar(1.0));
  auto report = validate_condition_h(bad, 0.4);
  CHECK_FALSE(report.holds);
  auto r_entry = report.margins[4];
  CHECK(r_entry.name == "R+delta*I");
  CHECK(r_entry.margin < 0.0);
}

TEST_CASE("P = 0 is a boundary pass") {
  LQModel m = test::m1();
  m.P = scalar(0.0);
  CHECK(validate_condition_h(m, 0.4).holds);
}

TEST_CASE("condition (H) is monotone in delta") {
  LQModel m = test::m1();
  auto wide = validate_condition_h(m, 0.4);
  REQUIRE(wide.holds);
  for (double delta : {0.3, 0.2, 0.1, 0.01})
    CHECK(validate_condition_h(m, delta).holds);
}

TEST_CASE("non-symmetric R is rejected with the coefficient named") {
  LQModel m = test::m1();
  m.d = 2;
  m.p = 2;
  for (Coefficient* c : {&m.b0, &m.theta, &m.theta_o, &m.O}) *c = Coefficient::zero(2, 1);
  for (Coefficient* c : {&m.B, &m.Bbar, &m.D, &m.Dbar, &m.Do, &m.Dbar_o, &m.M, &m.Mbar})
    *c = Coefficient::zero(2, 2);
  m.C = Coefficient::zero(2, 2);
  m.F = Coefficient::zero(2, 2);
  m.Fo = Coefficient::zero(2, 2);
  Matrix r(2, 2);
  r << -1.0, 0.3, -0.3, -1.0;
  m.R = Coefficient(r);
  m.P = -Matrix::Identity(2, 2);
  m.Pbar = Matrix::Zero(2, 2);
  CHECK_THROWS_WITH(validate_condition_h(m, 0.1), Catch::Matchers::ContainsSubstring("R"));
}

TEST_CASE("coefficients_at returns constants and interpolates tables") {
  LQModel m = test::m1();
  auto slice = m.coefficients_at(0.3);
  CHECK(slice.C(0, 0) == 1.0);
  CHECK(slice.R(0, 0) == -0.5);

  m.B = Coefficient({0.0, 1.0}, {scalar(0.0), scalar(2.0)});
  CHECK(m.coefficients_at(0.5).B(0, 0) == Catch::Approx(1.0));
  CHECK(m.coefficients_at(0.0).B(0, 0) == 0.0);  // exact at nodes
  CHECK(m.coefficients_at(1.0).B(0, 0) == 2.0);

  CHECK_THROWS_AS(m.coefficients_at(1.2), ConfigError);
  CHECK_THROWS_AS(m.coefficients_at(-0.1), ConfigError);
}

TEST_CASE("coefficients_at is piecewise linear between nodes") {
  LQModel m = test::m1();
  m.B = Coefficient({0.0, 0.5, 1.0}, {scalar(0.0), scalar(1.0), scalar(0.0)});
  for (double t : {0.1, 0.2, 0.3, 0.4}) {
    double left = m.coefficients_at(t).B(0, 0);
    CHECK(left == Catch::Approx(2.0 * t));
  }
  CHECK(m.coefficients_at(0.75).B(0, 0) == Catch::Approx(0.5));
}

TEST_CASE("load_model parses the M1 document") {
  LQModel m = load_model(kM1Json);
  CHECK(m.d == 1);
  CHECK(m.p == 1);
  CHECK(m.gamma == 1.0);
  CHECK(m.C.at(0.0)(0, 0) == 1.0);
  CHECK(m.R.at(0.0)(0, 0) == -0.5);
  CHECK(m.P(0, 0) == -0.5);
  CHECK(m.Pbar(0, 0) == 0.0);  // defaults to zero
  CHECK(m.b0.at(0.5)(0, 0) == 0.0);
}

TEST_CASE("load_model rejects malformed documents") {
  CHECK_THROWS_WITH(load_model(R"({"dims": {"d":1,"p":1}, "horizon":1, "terminal":{"P":0}})"),
                    Catch::Matchers::ContainsSubstring("gamma"));
  // R shaped 2x1 under p = 1
  CHECK_THROWS_AS(load_model(R"({
    "dims": {"d":1,"p":1}, "horizon":1, "gamma":1,
    "coeffs": {"R": [[-1.0],[0.0]]}, "terminal": {"P": -0.5}
  })"),
                  ConfigError);
  CHECK_THROWS_AS(load_model("not json"), ConfigError);
  // non-finite entry
  CHECK_THROWS_AS(load_model(R"({
    "dims": {"d":1,"p":1}, "horizon":1, "gamma":1,
    "coeffs": {"R": -0.5}, "terminal": {"P": -0.5}, "beta": 0.1
  })"),
                  ConfigError);
}

TEST_CASE("asymmetric terminal matrix beyond 1e-12 is rejected, below is healed") {
  std::string doc = R"({
    "dims": {"d":2,"p":1}, "horizon":1, "gamma":1,
    "coeffs": {"R": -0.5},
    "terminal": {"P": [[-1.0, 0.1], [0.0, -1.0]]}
  })";
  CHECK_THROWS_AS(load_model(doc), ConfigError);

  std::string near = R"({
    "dims": {"d":2,"p":1}, "horizon":1, "gamma":1,
    "coeffs": {"R": -0.5},
    "terminal": {"P": [[-1.0, 1e-13], [0.0, -1.0]]}
  })";
  LQModel m = load_model(near);
  CHECK(m.P(0, 1) == m.P(1, 0));
}

TEST_CASE("serialize / load_model round-trip is the identity") {
  LQModel m = test::m2();
  m.B = Coefficient({0.0, 0.5, 1.0}, {scalar(0.1), scalar(0.4), scalar(-0.2)});
  m.theta = Coefficient(scalar(0.25));
  LQModel back = load_model(serialize(m));
  CHECK(back.d == m.d);
  CHECK(back.horizon == m.horizon);
  CHECK(back.gamma == m.gamma);
  CHECK(back.Fo.at(0.3)(0, 0) == m.Fo.at(0.3)(0, 0));
  CHECK(back.B.times() == m.B.times());
  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0})
    CHECK(back.B.at(t)(0, 0) == m.B.at(t)(0, 0));
  CHECK(back.P(0, 0) == m.P(0, 0));
  // and a second round-trip is byte-identical
  CHECK(serialize(back) == serialize(m));
}
