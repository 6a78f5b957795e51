#include <doctest.h>

#include "fbsde/zvonkin.hpp"

#include <cmath>

using namespace fbsde;

namespace {

const DiffusionFn unit = [](double, double) { return 1.0; };

SpaceTimeGrid window(int steps, int cells = 320) {
  return SpaceTimeGrid::centered(0.0, 6.0, 0.0, 1.0, steps, cells);
}

double closed_form_U(double c, double mu, double T, double t) {
  return c / mu * (1.0 - std::exp(-mu * (T - t)));
}

}  // namespace

TEST_CASE("zero drift gives the identity transform") {
  const auto g = window(64, 80);
  const auto z = build_transform(two_level_drift(g, 0.0, 0.0, 0.0), unit);
  CHECK(z.identity());
  CHECK(z.mu == 1.0);
  CHECK(z.doublings == 0);
  CHECK(z.psi(0.3, 1.7) == 1.7);
  CHECK(z.psi_inverse(0.3, -2.2) == -2.2);
  CHECK(z.round_trip_error() == 0.0);

  const auto c = transformed_coefficients(z, unit, 1.0);
  CHECK(c.identity);
  CHECK(c.b1.values().cwiseAbs().maxCoeff() == 0.0);
  CHECK(c.sigma1.values().minCoeff() == 1.0);
  CHECK(c.sigma1.values().maxCoeff() == 1.0);
  CHECK(c.drift()(0.2, 3.0) == 0.0);
  CHECK(c.diffusion()(0.2, 3.0) == 1.0);
}

TEST_CASE("constant drift has the closed-form transform") {
  const double cst = 0.8;
  const auto g = window(128, 120);
  const auto z = build_transform(two_level_drift(g, cst, cst, 0.0), unit);
  CHECK(z.mu == 1.0);
  CHECK(z.sup_DU < 1e-8);
  double worst = 0.0, worst_inv = 0.0;
  for (int m = 0; m <= 128; m += 8) {
    const double t = g.time.time(m);
    const double U = closed_form_U(cst, z.mu, 1.0, t);
    for (double x : {-3.0, -0.4, 0.0, 1.1, 2.5}) {
      worst = std::max(worst, std::abs(z.psi(t, x) - (x + U)));
      worst_inv = std::max(worst_inv, std::abs(z.psi_inverse(t, x) - (x - U)));
    }
  }
  // Crank-Nicolson error, O(dt^2) with dt = 1/128
  CHECK(worst < 1e-4);
  CHECK(worst_inv < 1e-4);

  const auto c = transformed_coefficients(z, unit, 1.0);
  for (int m = 0; m <= 128; m += 16) {
    const double t = g.time.time(m);
    CHECK(std::abs(c.b1(t, 0.5) - cst * (1.0 - std::exp(-z.mu * (1.0 - t)))) < 1e-4);
    CHECK(c.sigma1(t, 0.5) == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("round trip through the inverse is exact to 1e-10") {
  const auto g = window(64, 160);
  const auto z = build_transform(two_level_drift(g, 1.5, -1.5, 0.3, 0.2, 0.5), unit);
  CHECK_FALSE(z.identity());
  CHECK(z.sup_DU <= 0.5);
  CHECK(z.round_trip_error() <= 1e-10);
  // monotone slices
  for (int m = 0; m <= 64; m += 16) {
    const double t = g.time.time(m);
    double prev = z.psi(t, g.space.x_min);
    for (int j = 1; j <= g.space.cells; ++j) {
      const double cur = z.psi(t, g.space.x(j));
      CHECK(cur > prev);
      prev = cur;
    }
  }
}

TEST_CASE("mu search doubles until sup |DU| <= 1/2") {
  const auto g = window(128, 240);
  const auto b = two_level_drift(g, 6.0, -6.0, 0.0);
  const auto z = build_transform(b, unit);
  CHECK(z.doublings >= 1);
  CHECK(z.sup_DU <= 0.5);
  REQUIRE(z.search.size() == static_cast<std::size_t>(z.doublings + 1));
  CHECK(z.search.front().second > 0.5);
  for (std::size_t i = 1; i < z.search.size(); ++i) {
    CHECK(z.search[i].first == 2.0 * z.search[i - 1].first);
    CHECK(z.search[i].second < z.search[i - 1].second);
  }

  ZvonkinConfig capped;
  capped.max_doublings = 0;
  try {
    build_transform(b, unit, capped);
    FAIL("expected MuSearchFailed");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::mu_search_failed);
  }

  const auto c = transformed_coefficients(z, unit, 1.0);
  CHECK(c.min_sigma1_sq >= 0.25);
  CHECK(c.quarter_bound);
}

TEST_CASE("degenerate transformed diffusion is refused") {
  const auto g = window(64, 160);
  const auto z = build_transform(two_level_drift(g, 1.0, -1.0, 0.0, 0.1, 1.0), unit);
  // a diffusion far below the claimed ellipticity constant
  const DiffusionFn weak = [](double, double) { return 0.1; };
  try {
    transformed_coefficients(z, weak, 1.0);
    FAIL("expected DegeneracyDetected");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::degeneracy_detected);
  }
}

TEST_CASE("identity transform reproduces the direct simulation bit for bit") {
  const auto g = window(128, 80);
  const auto b = two_level_drift(g, 0.0, 0.0, 0.0);
  const auto z = build_transform(b, unit);
  const auto c = transformed_coefficients(z, unit, 1.0);
  const auto r = correspondence_check(b, unit, z, c, 0.0, g.time, 5000, 3);
  CHECK(r.sup_rms == 0.0);
  CHECK(r.ks == 0.0);
  CHECK(r.ks_pass);

  const auto m = flow_route_cross_check(b, 1.0, z, c, 0.0, g.time, 200, 3);
  CHECK(m.max_relative_gap == 0.0);
}

TEST_CASE("constant drift correspondence error halves with dt") {
  const double cst = 0.8;
  auto rms_at = [&](int steps) {
    const auto g = window(steps, 120);
    const auto b = two_level_drift(g, cst, cst, 0.0);
    const auto z = build_transform(b, unit);
    const auto c = transformed_coefficients(z, unit, 1.0);
    CorrespondenceConfig cfg;
    cfg.noise_substeps = 512 / steps;
    return correspondence_check(b, unit, z, c, 0.0, g.time, 4000, 11, cfg).sup_rms;
  };
  const double coarse = rms_at(64), fine = rms_at(128);
  MESSAGE("rms " << coarse << " -> " << fine);
  CHECK(coarse > 0.0);
  CHECK(fine / coarse == doctest::Approx(0.5).epsilon(0.3));

  // sigma1 = 1 and b1 depends on t only, so both derivative routes coincide
  const auto g = window(64, 120);
  const auto b = two_level_drift(g, cst, cst, 0.0);
  const auto z = build_transform(b, unit);
  const auto c = transformed_coefficients(z, unit, 1.0);
  CHECK(flow_route_cross_check(b, 1.0, z, c, 0.0, g.time, 200, 5).max_relative_gap < 1e-6);
}

TEST_CASE("Hoelder two-level drift: laws at T agree at dt = T/2048") {
  const auto g = window(2048, 240);
  const auto b = two_level_drift(g, 1.0, -1.0, 0.2, 0.1, 0.5);
  const auto z = build_transform(b, unit);
  const auto c = transformed_coefficients(z, unit, 1.0);
  const auto r = correspondence_check(b, unit, z, c, 0.0, g.time, 20000, 21);
  MESSAGE("mu " << r.mu << " sup|DU| " << r.sup_DU << " sup rms " << r.sup_rms << " ks " << r.ks
                << " / " << r.ks_critical);
  CHECK(r.sup_DU <= 0.5);
  CHECK(r.ks_pass);
  CHECK(r.exits.paths_exited == 0);

  const auto m = flow_route_cross_check(b, 1.0, z, c, 0.0, g.time, 500, 21);
  MESSAGE("transformed-route mean gap " << m.mean_relative_gap << " max " << m.max_relative_gap);
  CHECK(std::isfinite(m.mean_relative_gap));
}

TEST_CASE("density transfers through the transform") {
  const auto g = window(256, 240);
  const auto b = two_level_drift(g, 1.0, -1.0, 0.2, 0.1, 0.5);
  const auto z = build_transform(b, unit);
  const auto c = transformed_coefficients(z, unit, 1.0);
  const auto r = density_transfer_check(b, unit, z, c, 0.0, g.time, 128, 200000, 8);
  MESSAGE("max relative deviation " << r.max_relative_deviation << " at t = " << r.t);
  CHECK(r.t == doctest::Approx(0.5));
  CHECK(r.max_relative_deviation <= 0.15);
}
