#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "mfcq/fixed_point.hpp"
#include "mfcq/hamiltonian.hpp"
#include "mfcq/riccati.hpp"

using namespace mfcq;
using test::scalar;

namespace {

Vector vec1(double v) { return Vector::Constant(1, v); }

/// Uniform tabular kernel over [lo, hi] on the Gauss-Hermite nodes of mu.
TabularPolicy tabular_on(const LQModel& model, double t, const MeasureSlice& mu, double lo,
                         double hi, int cells, int gh_order = 20) {
  (void)model;
  auto nodes = mu.nodes(gh_order);
  return TabularPolicy::uniform(t, mu.mean(), nodes.points, nodes.weights, vec1(lo), vec1(hi),
                                cells);
}

/// Discretized Gaussian kernel on the tabular grid of `shape`.
TabularPolicy discretize_gaussian(const TabularPolicy& shape, const GaussianPolicy& g, double t,
                                  const Vector& mu_mean) {
  TabularPolicy out = shape;
  for (std::size_t gi = 0; gi < shape.states().size(); ++gi) {
    double total = 0.0;
    for (std::size_t j = 0; j < shape.actions().size(); ++j) {
      double rho = g.density(t, shape.states()[gi], mu_mean, shape.actions()[j]);
      out.density()(static_cast<Eigen::Index>(gi), static_cast<Eigen::Index>(j)) = rho;
      total += rho;
    }
    out.density().row(static_cast<Eigen::Index>(gi)) /= total * shape.cell_volume();
  }
  return out;
}

}  // namespace

TEST_CASE("pointwise hamiltonian: hand values") {
  // toy slice: b = a, sigma = sigma_o = 0, r = -a^2
  LQModel toy = test::m1();
  toy.R = Coefficient(scalar(-1.0));
  CHECK(hamiltonian(toy, 0.0, vec1(0.0), vec1(0.0), vec1(0.5), vec1(1.0), scalar(0.0)) ==
        Catch::Approx(0.25));

  // zero action: only r(t, x, mu, 0) = x'Mx + ... remains (here 0)
  CHECK(hamiltonian(toy, 0.0, vec1(2.0), vec1(0.0), vec1(0.0), vec1(1.0), scalar(0.0)) ==
        Catch::Approx(0.0));

  // M2 diffusion contribution: 0.5 (0.5 a)^2 q
  LQModel m2 = test::m2();
  double with_q = hamiltonian(m2, 0.0, vec1(0.0), vec1(0.0), vec1(2.0), vec1(0.0), scalar(3.0));
  // b'p = 0, 0.5 * (Fo a)^2 * q = 0.5 * 1 * 3, r = -0.5 * 4
  CHECK(with_q == Catch::Approx(1.5 - 2.0));
}

TEST_CASE("integrated hamiltonian at the optimum satisfies the HJB identity") {
  LQModel m = test::m1();
  RiccatiSolution sol = solve_backward(m, 1000);
  GaussianPolicy pi = optimal_policy(sol, m);
  ValueDerivativeBundle bundle = bundle_from(sol);

  MeasureSlice delta0 = MeasureSlice::point_mass(vec1(0.0));
  HamiltonianOptions opts;
  opts.regularized = true;
  double hg = integrated_hamiltonian(m, 0.0, delta0, PolicyView(pi), bundle, opts);
  CHECK(hg == Catch::Approx(test::kHalfLog2Pi).margin(1e-6));  // = -dchi/dt(0)

  // doubling the quadrature order moves the value by < 1e-8
  HamiltonianOptions dense = opts;
  dense.gh_order = 40;
  double hg2 =
      integrated_hamiltonian(m, 0.0, MeasureSlice::gaussian(vec1(0.3), scalar(0.7)),
                             PolicyView(pi), bundle, opts);
  double hg2d =
      integrated_hamiltonian(m, 0.0, MeasureSlice::gaussian(vec1(0.3), scalar(0.7)),
                             PolicyView(pi), bundle, dense);
  CHECK(std::abs(hg2 - hg2d) < 1e-8);
}

TEST_CASE("factorized and pairwise double-measure terms agree") {
  LQModel m = test::m2();
  RiccatiSolution sol = solve_backward(m, 500);
  GaussianPolicy pi = optimal_policy(sol, m);
  ValueDerivativeBundle bundle = bundle_from(sol);
  MeasureSlice mu = MeasureSlice::gaussian(vec1(0.4), scalar(1.3));

  HamiltonianOptions fact;
  HamiltonianOptions pair;
  pair.pairwise_double_term = true;
  double a = integrated_hamiltonian(m, 0.2, mu, PolicyView(pi), bundle, fact);
  double b = integrated_hamiltonian(m, 0.2, mu, PolicyView(pi), bundle, pair);
  CHECK(a == Catch::Approx(b).margin(1e-12));
}

TEST_CASE("script-H is affine in the kernel when Fo = 0") {
  LQModel m = test::m1();
  RiccatiSolution sol = solve_backward(m, 500);
  ValueDerivativeBundle bundle = bundle_from(sol);
  MeasureSlice mu = MeasureSlice::gaussian(vec1(0.0), scalar(1.0));

  TabularPolicy grid = tabular_on(m, 0.0, mu, -8.0, 8.0, 161);
  GaussianPolicy g1 = GaussianPolicy::constant(1.0, scalar(-0.4), scalar(-0.2), vec1(0.1),
                                               scalar(0.8));
  GaussianPolicy g2 = GaussianPolicy::constant(1.0, scalar(0.3), scalar(-0.6), vec1(-0.2),
                                               scalar(1.5));
  TabularPolicy h1 = discretize_gaussian(grid, g1, 0.0, mu.mean());
  TabularPolicy h2 = discretize_gaussian(grid, g2, 0.0, mu.mean());

  auto script_h = [&](const TabularPolicy& h) {
    return integrated_hamiltonian(m, 0.0, mu, PolicyView(h), bundle);
  };
  const double lambda = 0.35;
  TabularPolicy mix = h1;
  mix.density() = lambda * h1.density() + (1.0 - lambda) * h2.density();
  CHECK(script_h(mix) ==
        Catch::Approx(lambda * script_h(h1) + (1.0 - lambda) * script_h(h2)).margin(1e-10));
}

TEST_CASE("variational derivative reduces to the hamiltonian when Fo = 0") {
  LQModel m = test::m1();
  RiccatiSolution sol = solve_backward(m, 500);
  GaussianPolicy pi = optimal_policy(sol, m);
  ValueDerivativeBundle bundle = bundle_from(sol);
  MeasureSlice mu = MeasureSlice::gaussian(vec1(0.5), scalar(2.0));

  Vector x = vec1(0.7), a = vec1(-0.3);
  double dh = variational_derivative(m, 0.3, mu, PolicyView(pi), bundle, x, a);
  double h = hamiltonian(m, 0.3, x, mu.mean(), a, bundle.dj_dmu(0.3, x, mu.mean()),
                         bundle.dx_dmu(0.3));
  CHECK(dh == Catch::Approx(h).margin(1e-12));
}

TEST_CASE("variational derivative common-noise term: scalar substitution") {
  // M2 with a kernel of uniform action mean mbar at mu = delta_0:
  // term2 = (Fo a) (Fo mbar) d2J
  LQModel m = test::m2();
  RiccatiSolution sol = solve_backward(m, 500);
  ValueDerivativeBundle bundle = bundle_from(sol);
  MeasureSlice delta0 = MeasureSlice::point_mass(vec1(0.0));

  const double mbar = 0.8;
  GaussianPolicy h = GaussianPolicy::constant(1.0, scalar(0.0), scalar(0.0), vec1(mbar),
                                              scalar(0.5));
  Vector x = vec1(0.0), a = vec1(1.7);
  double dh = variational_derivative(m, 0.0, delta0, PolicyView(h), bundle, x, a);
  double base = hamiltonian(m, 0.0, x, delta0.mean(), a, bundle.dj_dmu(0.0, x, delta0.mean()),
                            bundle.dx_dmu(0.0));
  double d2 = bundle.d2_mu(0.0)(0, 0);
  CHECK(dh - base == Catch::Approx(0.5 * a(0) * 0.5 * mbar * d2).margin(1e-12));
}

TEST_CASE("term two of the derivative is linear in the kernel") {
  LQModel m = test::m2();
  RiccatiSolution sol = solve_backward(m, 500);
  ValueDerivativeBundle bundle = bundle_from(sol);
  MeasureSlice mu = MeasureSlice::gaussian(vec1(0.2), scalar(1.0));

  TabularPolicy grid = tabular_on(m, 0.0, mu, -8.0, 8.0, 161);
  GaussianPolicy g1 = GaussianPolicy::constant(1.0, scalar(-0.4), scalar(0.0), vec1(0.5),
                                               scalar(1.0));
  GaussianPolicy g2 = GaussianPolicy::constant(1.0, scalar(0.2), scalar(-0.3), vec1(-0.7),
                                               scalar(0.6));
  TabularPolicy h1 = discretize_gaussian(grid, g1, 0.0, mu.mean());
  TabularPolicy h2 = discretize_gaussian(grid, g2, 0.0, mu.mean());
  TabularPolicy mix = h1;
  const double lambda = 0.6;
  mix.density() = lambda * h1.density() + (1.0 - lambda) * h2.density();

  Vector x = vec1(0.4), a = vec1(-1.1);
  auto term2 = [&](const TabularPolicy& h) {
    return variational_derivative(m, 0.0, mu, PolicyView(h), bundle, x, a) -
           hamiltonian(m, 0.0, x, mu.mean(), a, bundle.dj_dmu(0.0, x, mu.mean()),
                       bundle.dx_dmu(0.0));
  };
  CHECK(term2(mix) ==
        Catch::Approx(lambda * term2(h1) + (1.0 - lambda) * term2(h2)).margin(1e-12));
}

TEST_CASE("derivative consistency: script-H increments integrate the derivative") {
  // Definition-style check along the mixing path with 5-point Gauss-Legendre
  LQModel m = test::m2();
  RiccatiSolution sol = solve_backward(m, 500);
  ValueDerivativeBundle bundle = bundle_from(sol);
  MeasureSlice mu = MeasureSlice::gaussian(vec1(0.0), scalar(1.0));

  TabularPolicy grid = tabular_on(m, 0.0, mu, -9.0, 9.0, 201);
  TabularPolicy h = discretize_gaussian(
      grid, GaussianPolicy::constant(1.0, scalar(-0.3), scalar(-0.3), vec1(0.0), scalar(1.2)),
      0.0, mu.mean());
  TabularPolicy hp = discretize_gaussian(
      grid, GaussianPolicy::constant(1.0, scalar(0.1), scalar(-0.5), vec1(0.4), scalar(0.7)),
      0.0, mu.mean());

  auto script_h = [&](const TabularPolicy& k) {
    return integrated_hamiltonian(m, 0.0, mu, PolicyView(k), bundle);
  };
  double lhs = script_h(hp) - script_h(h);

  double rhs = 0.0;
  const auto& nodes = h.states();
  const auto& weights = h.state_weights();
  for (int q = 0; q < 5; ++q) {
    double lam = test::GaussLegendre5::nodes[q];
    TabularPolicy mid = h;
    mid.density() = (1.0 - lam) * h.density() + lam * hp.density();
    double inner = 0.0;
    for (std::size_t gi = 0; gi < nodes.size(); ++gi)
      for (std::size_t j = 0; j < h.actions().size(); ++j) {
        double diff = hp.density()(static_cast<Eigen::Index>(gi), static_cast<Eigen::Index>(j)) -
                      h.density()(static_cast<Eigen::Index>(gi), static_cast<Eigen::Index>(j));
        if (diff == 0.0) continue;
        double dval = variational_derivative(m, 0.0, mu, PolicyView(mid), bundle, nodes[gi],
                                             h.actions()[j]);
        inner += weights[gi] * h.cell_volume() * dval * diff;
      }
    rhs += test::GaussLegendre5::weights[q] * inner;
  }
  CHECK(lhs == Catch::Approx(rhs).margin(1e-8));
}

TEST_CASE("iq-function: optimal policy gives zero, definitional bookkeeping") {
  LQModel m = test::m1();
  RiccatiSolution sol = solve_backward(m, 1000);
  GaussianPolicy pi = optimal_policy(sol, m);
  ValueDerivativeBundle bundle = bundle_from(sol);

  for (auto [mean, var] : {std::pair{0.0, 1.0}, {0.7, 0.4}, {-1.2, 2.5}}) {
    MeasureSlice mu = MeasureSlice::gaussian(vec1(mean), scalar(var));
    double value = sol.value(0.4, mu.mean(), mu.cov());
    IqValue q = iq_function(m, 0.4, mu, PolicyView(pi), bundle, value);
    CHECK(q.q_gamma == Catch::Approx(0.0).margin(1e-6));
    CHECK(q.q_gamma - q.q0 == Catch::Approx(q.entropy_term).margin(1e-12));
  }

  // inflating Sigma strictly lowers q_gamma (pi* is the unique maximizer)
  GaussianPolicy inflated(pi.times(), std::vector<Matrix>(pi.k_nodes()),
                          std::vector<Matrix>(pi.kbar_nodes()),
                          std::vector<Vector>(pi.k0_nodes()), [&] {
                            std::vector<Matrix> s = pi.sigma_nodes();
                            for (auto& v : s) v *= 2.0;
                            return s;
                          }());
  MeasureSlice mu = MeasureSlice::gaussian(vec1(0.0), scalar(1.0));
  IqValue q = iq_function(m, 0.4, mu, PolicyView(inflated), bundle,
                          sol.value(0.4, mu.mean(), mu.cov()));
  CHECK(q.q_gamma < -1e-3);
}

TEST_CASE("hjb residual: zero at the solution, sensitive to perturbations") {
  LQModel m = test::m1();
  RiccatiSolution sol = solve_backward(m, 1000);
  GaussianPolicy pi = optimal_policy(sol, m);
  MeasureSlice mu = MeasureSlice::gaussian(vec1(0.0), scalar(1.0));

  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0})
    CHECK(std::abs(hjb_residual(m, t, mu, sol, pi)) <= 1e-6);

  // power: shifting Lambda by +0.1 must light up the residual
  RiccatiSolution bumped = sol;
  for (auto& l : bumped.lambda) l.array() += 0.1;
  CHECK(std::abs(hjb_residual(m, 0.5, mu, bumped, optimal_policy(bumped, m))) > 0.01);
}

TEST_CASE("hjb residual vanishes under refinement on condition-(H) models") {
  LQModel m = test::m2();
  MeasureSlice mu = MeasureSlice::gaussian(vec1(0.3), scalar(0.8));
  RiccatiSolution coarse = solve_backward(m, 100);
  RiccatiSolution fine = solve_backward(m, 1000);
  // 0.3735 sits between nodes of both grids, so the piecewise-linear
  // interpolation error is what the refinement shrinks
  double r_coarse = std::abs(hjb_residual(m, 0.3735, mu, coarse));
  double r_fine = std::abs(hjb_residual(m, 0.3735, mu, fine));
  CHECK(r_fine < r_coarse);
  CHECK(r_fine < 1e-6);
}
