#include <doctest.h>

#include "fbsde/pricing.hpp"
#include "oracles.hpp"

#include <cmath>
#include <limits>

using namespace fbsde;
using pricing::ConstraintInterval;

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

SpaceTimeGrid pricing_grid(int steps = 128, int cells = 240) {
  return SpaceTimeGrid::centered(0.0, 6.0, 0.0, 1.0, steps, cells);
}

}  // namespace

TEST_CASE("projection onto an interval") {
  const auto r = pricing::project_onto_interval(2.5, ConstraintInterval::real_line());
  CHECK(r.point == 2.5);
  CHECK(r.distance == 0.0);
  const auto half = pricing::project_onto_interval(-1.0, {0.0, inf});
  CHECK(half.point == 0.0);
  CHECK(half.distance == 1.0);
  const auto unit = pricing::project_onto_interval(2.0, {0.0, 1.0});
  CHECK(unit.point == 1.0);
  CHECK(unit.distance == 1.0);

  // idempotent and 1-Lipschitz
  const ConstraintInterval C{-0.5, 1.25};
  for (double a = -3.0; a <= 3.0; a += 0.125) {
    const double p = pricing::project_onto_interval(a, C).point;
    CHECK(pricing::project_onto_interval(p, C).point == p);
    for (double b = -3.0; b <= 3.0; b += 0.375) {
      const double q = pricing::project_onto_interval(b, C).point;
      CHECK(std::abs(p - q) <= std::abs(a - b));
    }
  }

  CHECK_THROWS_AS((ConstraintInterval{1.0, 0.0}).validate(), Error);
}

TEST_CASE("indifference driver values") {
  const double alpha = 0.2, gamma = 1.0;
  CHECK(pricing::indifference_driver(-1.0, alpha, gamma, {0.0, inf}) == doctest::Approx(-0.5));
  for (double z : {-2.0, -0.3, 0.0, 0.7, 3.0}) {
    const double free = z * alpha + alpha * alpha / (2.0 * gamma);
    CHECK(pricing::indifference_driver(z, alpha, gamma, ConstraintInterval::real_line()) ==
          doctest::Approx(free));
  }
  // z + alpha/gamma inside C: distance term vanishes
  CHECK(pricing::indifference_driver(0.5, alpha, gamma, {0.0, inf}) ==
        doctest::Approx(0.5 * alpha + alpha * alpha / 2.0));
}

TEST_CASE("indifference driver has quadratic growth") {
  const double A = 0.7;
  for (double gamma : {0.3, 1.0, 4.0}) {
    const double Cg = pricing::driver_growth_constant(A, gamma);
    for (const ConstraintInterval& C :
         {ConstraintInterval::real_line(), ConstraintInterval{0.0, inf}, ConstraintInterval{-1.0, 0.5}}) {
      for (double alpha = -A; alpha <= A; alpha += 0.35) {
        for (double z = -10.0; z <= 10.0; z += 0.25) {
          CHECK(pricing::indifference_driver(z, alpha, gamma, C) <= Cg * (1.0 + z * z) + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("zero payoff prices to zero") {
  PricingParams prm;
  prm.lambda = 0.1;
  prm.lambda_hat = 0.3;
  prm.sigma = 0.8;
  prm.alpha = [](double, double x) { return 0.3 * std::tanh(x); };
  prm.alpha_sup = 0.3;
  prm.gamma = 2.0;
  prm.C = {0.0, inf};
  const auto pair = builtin_pricing_model(prm, 1.0, 0.0);
  const auto g = pricing_grid(64, 160);
  const auto s = price_and_hedge(pair, g);
  CHECK(s.p.cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.delta_grad.cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.delta_proj.cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.pi_star == s.pi_star_hat);
  CHECK(s.pi_star.minCoeff() >= 0.0);

  const auto vf = value_functions(s, {-1.0, 0.0, 2.0});
  CHECK(vf.residual == 0.0);
  for (std::size_t i = 0; i < vf.nu.size(); ++i) CHECK(vf.V0[i] == vf.VF[i]);
}

TEST_CASE("linear case price is the expected payoff") {
  PricingParams prm;
  prm.lambda = prm.lambda_hat = 0.2;
  prm.sigma = 0.6;
  prm.payoff = ramp_payoff(0.0, 0.5);
  prm.payoff_sup = 1.0;
  const auto pair = builtin_pricing_model(prm, 1.0, 0.0);
  const auto g = pricing_grid(256, 480);
  const auto s = price_and_hedge(pair, g, {}, 2);
  CHECK(s.v_field.v.cwiseAbs().maxCoeff() < 1e-12);

  const double drift = -(prm.lambda + 0.5 * prm.sigma * prm.sigma);
  const auto F = pair.params.payoff;
  double worst = 0.0;
  for (int m = 0; m < g.time.steps; m += 32) {
    const double tau = 1.0 - g.time.time(m);
    for (int j = 120; j <= 360; j += 10) {
      const double x = g.space.x(j);
      const double expect = oracle::normal_expectation_simpson(
          [&](double y) { return F(y); }, x + drift * tau, prm.sigma * std::sqrt(tau));
      worst = std::max(worst, std::abs(s.p(m, j) - expect));
    }
  }
  MESSAGE("sup |p - E F| = " << worst);
  CHECK(worst < 1e-3);
}

TEST_CASE("hedge from the projection matches the price gradient") {
  PricingParams prm;
  prm.lambda = 0.1;
  prm.lambda_hat = 0.4;
  prm.R = 0.3;
  prm.sigma = 0.8;
  prm.alpha = [](double, double) { return 0.25; };
  prm.alpha_sup = 0.25;
  prm.gamma = 1.5;
  prm.payoff = ramp_payoff(-0.2, 1.0);
  prm.payoff_sup = 1.0;
  const auto pair = builtin_pricing_model(prm, 1.0, 0.0);
  const auto g = pricing_grid(128, 240);
  const auto s = price_and_hedge(pair, g);
  MESSAGE("hedge gap " << s.hedge_gap << " (unscaled " << s.hedge_gap_unscaled << "), 10 dx = "
                       << 10 * g.space.dx());
  CHECK(s.hedge_gap <= 10.0 * g.space.dx());
  CHECK(s.hedge_gap_unscaled > s.hedge_gap);

  // a buyer's price lies between the payoff's bounds
  CHECK(s.p.minCoeff() >= -1e-6);
  CHECK(s.p.maxCoeff() <= 1.0 + 1e-6);

  const auto vf = value_functions(s, {-0.5, 0.0, 0.5, 1.5});
  CHECK(vf.residual <= 1e-10);
}

TEST_CASE("constrained strategies stay in C") {
  PricingParams prm;
  prm.lambda = prm.lambda_hat = 0.2;
  prm.sigma = 1.0;
  prm.alpha = [](double, double x) { return 0.5 * std::sin(x); };
  prm.alpha_sup = 0.5;
  prm.gamma = 1.0;
  prm.C = {-0.2, 0.4};
  prm.payoff = ramp_payoff(0.5, 0.5);
  prm.payoff_sup = 1.0;
  const auto s = price_and_hedge(builtin_pricing_model(prm, 1.0, 0.0), pricing_grid(64, 160));
  CHECK(s.pi_star.minCoeff() >= -0.2);
  CHECK(s.pi_star.maxCoeff() <= 0.4);
  CHECK(s.pi_star_hat.minCoeff() >= -0.2);
  CHECK(s.delta_proj.maxCoeff() <= 0.4);
  CHECK(s.p.minCoeff() >= -1e-6);
  CHECK(s.p.maxCoeff() <= 1.0 + 1e-6);
}

TEST_CASE("exponential value function rises with risk aversion when nu > Y") {
  PricingParams prm;
  prm.payoff = ramp_payoff(0.0, 1.0);
  prm.payoff_sup = 1.0;
  const auto s = price_and_hedge(builtin_pricing_model(prm, 1.0, 0.0), pricing_grid(32, 80));
  auto lo = s, hi = s;
  lo.gamma = 0.5;
  hi.gamma = 2.0;
  const auto a = value_functions(lo, {1.0}), b = value_functions(hi, {1.0});
  // v = 0 here, so nu - Y = 1 > 0 everywhere
  CHECK((b.V0[0].array() > a.V0[0].array()).all());
}

TEST_CASE("regime switching with equal levels and no coupling") {
  RegimeSwitchingParams rp;
  rp.k1 = rp.k2 = 0.5;
  rp.beta = 1.0;
  rp.phi = [](double) { return 0.3; };
  rp.phi_prime = [](double) { return 0.0; };
  rp.h_prime = [](double) { return 0.0; };
  rp.phi_sup = 0.3;
  const auto g = pricing_grid(256, 240);
  RegimeSwitchingConfig cfg;
  cfg.n_paths = 20000;
  cfg.seed = 7;
  const auto r = regime_switching_experiment(rp, 1.0, 0.0, g, cfg);

  double worst = 0.0;
  for (int m = 0; m <= 256; ++m) {
    const double expect = 0.3 + (1.0 - g.time.time(m));
    worst = std::max(worst, (r.field.v.row(m).array() - expect).abs().maxCoeff());
  }
  CHECK(worst < 1e-9);
  CHECK(r.triple.Z.cwiseAbs().maxCoeff() < 1e-8);

  const Vector XT = r.triple.X.col(256);
  const double mean = XT.mean();
  const double var = (XT.array() - mean).square().sum() / static_cast<double>(XT.size() - 1);
  const double mean_exact = 0.5 * (1.0 - std::exp(-1.0));
  const double var_exact = 0.5 * (1.0 - std::exp(-2.0));
  const double n = static_cast<double>(XT.size());
  CHECK(std::abs(mean - mean_exact) <= 4.0 * std::sqrt(var_exact / n));
  CHECK(std::abs(var - var_exact) <= 4.0 * var_exact * std::sqrt(2.0 / (n - 1.0)));
  CHECK(r.mean_DX_T == doctest::Approx(std::exp(-1.0)).epsilon(1e-3));
  CHECK(r.switching.preserved);
  CHECK(r.x_bounds.has_value());
  CHECK_FALSE(r.y_bounds.has_value());  // Y is deterministic here
  CHECK_FALSE(r.y_bounds_error.empty());
}

TEST_CASE("regime switching without h matches nested quadrature") {
  RegimeSwitchingParams rp;
  rp.k1 = rp.k2 = -0.2;
  rp.beta = 0.7;
  rp.phi = [](double x) { return oracle::logistic(2.0 * x); };
  rp.phi_sup = 1.0;
  const auto g = pricing_grid(256, 480);
  const auto model = builtin_regime_switching(rp, 1.0, 0.0);
  const auto field = solve_decoupling_field(model, g);
  double worst = 0.0;
  for (int m = 0; m < 256; m += 32) {
    const double tau = 1.0 - g.time.time(m);
    const double e = std::exp(-rp.beta * tau);
    const double sd = std::sqrt((1.0 - e * e) / (2.0 * rp.beta));
    for (int j = 120; j <= 360; j += 12) {
      const double x = g.space.x(j);
      const double mean = x * e + rp.k1 / rp.beta * (1.0 - e);
      const double expect = oracle::normal_expectation(rp.phi, mean, sd) + tau;
      worst = std::max(worst, std::abs(field.v(m, j) - expect));
    }
  }
  MESSAGE("sup |v - quadrature| = " << worst);
  CHECK(worst < 1e-3);
}

TEST_CASE("regime switching keeps two drift levels per slice") {
  RegimeSwitchingParams rp;
  rp.k1 = 1.0;
  rp.k2 = -1.0;
  rp.alpha = 0.6;
  rp.beta = 0.5;
  rp.phi = [](double x) { return oracle::logistic(3.0 * x); };
  rp.h = [](double x) { return 0.2 * std::cos(x); };
  rp.h_sup = 0.2;
  rp.phi_sup = 1.0;
  RegimeSwitchingConfig cfg;
  cfg.n_paths = 4000;
  const auto r = regime_switching_experiment(rp, 1.0, 0.0, pricing_grid(128, 240), cfg);
  MESSAGE("two-valued slices " << r.switching.slices_two_valued << " / " << r.switching.slices);
  CHECK(r.switching.preserved);
  CHECK(r.switching.max_distinct == 2);
  CHECK(r.switching.slices_two_valued > 0);
  CHECK(r.residual.mean_abs < 0.05);
  CHECK(std::isfinite(r.mean_DX_T));
  CHECK(r.x_bounds.has_value());
}
