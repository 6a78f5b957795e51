#include <doctest.h>

#include "fbsde/malliavin.hpp"
#include "fbsde/sde.hpp"

#include <cmath>

using namespace fbsde;

namespace {

// dX = sin(X) dt + dW with a zero driver: smooth, bounded, nonlinear flow.
ModelInstance sine_drift(double T) {
  auto m = builtin_heat([](double x) { return sigmoid(x); }, {}, {}, T, 0.2, "sine");
  auto& c = m.coefficients;
  c.drift = [](double, double x, double, double) { return std::sin(x); };
  c.derivatives.b_x = [](double, double x, double, double) { return std::cos(x); };
  c.derivatives.b_y = c.derivatives.b_z = [](double, double, double, double) { return 0.0; };
  c.drift_state_only = true;
  return m;
}

struct Setup {
  ModelInstance model;
  SpaceTimeGrid grid;
  DecouplingField field;
  PathEnsemble paths;
};

Setup run(ModelInstance model, int steps, std::size_t n, std::uint64_t seed) {
  Setup s{std::move(model), SpaceTimeGrid::centered(0.0, 8.0, 0.0, 1.0, steps, 320), {}, {}};
  s.field = solve_decoupling_field(s.model, s.grid);
  s.paths = simulate_forward(forward_spec(s.model, s.field, s.grid.time), n, seed);
  return s;
}

}  // namespace

TEST_CASE("zero drift and unit diffusion give D_sX_t = 1") {
  auto s = run(builtin_heat([](double x) { return sigmoid(x); }, {}, {}, 1.0, 0.0), 64, 50, 1);
  const auto ms = malliavin_forward(s.paths, s.field, s.model);
  for (Eigen::Index p = 0; p < 50; ++p) {
    for (int t = 0; t <= 64; t += 8) {
      for (int u = 0; u <= t; u += 4) CHECK(ms.DX(p, u, t) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  CHECK(ms.DX(0, 10, 5) == 0.0);
}

TEST_CASE("OU derivative is sigma exp(-beta (t - s))") {
  const double beta = 0.8, sigma = 0.7;
  auto s = run(builtin_ou(beta, sigma, [](double x) { return sigmoid(x); }, 1.0, 0.3), 100, 20, 2);
  const auto ms = malliavin_forward(s.paths, s.field, s.model);
  const double dt = s.grid.time.dt();
  for (int t = 0; t <= 100; t += 10) {
    for (int u = 0; u <= t; u += 5) {
      const double expect = sigma * std::exp(-beta * (t - u) * dt);
      CHECK(ms.DX(3, u, t) == doctest::Approx(expect).epsilon(1e-10));
    }
  }
}

TEST_CASE("D_0 X_T matches the finite-difference flow derivative") {
  auto s = run(sine_drift(1.0), 512, 400, 11);
  const auto ms = malliavin_forward(s.paths, s.field, s.model);
  const auto fd = finite_difference_flow(forward_spec(s.model, s.field, s.grid.time), 1e-4, 400, 11,
                                         512);
  double rel = 0.0;
  for (Eigen::Index p = 0; p < 400; ++p) rel += std::abs(ms.DX(p, 0, 512) / fd(p) - 1.0);
  rel /= 400.0;
  MESSAGE("mean relative gap " << rel);
  CHECK(rel < 0.01);
}

TEST_CASE("cocycle: D_sX_t = D_rX_t D_sX_r for unit diffusion") {
  auto s = run(sine_drift(1.0), 128, 30, 5);
  const auto ms = malliavin_forward(s.paths, s.field, s.model);
  for (Eigen::Index p = 0; p < 30; ++p) {
    CHECK(ms.DX(p, 10, 100) == doctest::Approx(ms.DX(p, 60, 100) * ms.DX(p, 10, 60)).epsilon(1e-12));
  }
}

TEST_CASE("backward derivatives: D_tY_t = v_x and D_sZ_t = v_xx D_sX_t") {
  auto s = run(sine_drift(1.0), 128, 30, 6);
  auto ms = malliavin_forward(s.paths, s.field, s.model);
  const auto tr = reconstruct_triple(s.field, s.paths, s.model.coefficients.diffusion);
  malliavin_backward(tr, s.field, s.model, ms);
  const double dt = s.grid.time.dt();
  for (Eigen::Index p = 0; p < 30; ++p) {
    const double x = tr.X(p, 90);
    CHECK(ms.DY(p, 90, 90) == doctest::Approx(s.field.v_x_fn(90 * dt, x)));
    CHECK(ms.DY(p, 90, 90) == doctest::Approx(tr.Z(p, 90)));
    CHECK(ms.DZ(p, 20, 90) ==
          doctest::Approx(s.field.v_xx_fn(90 * dt, x) * ms.DX(p, 20, 90)).epsilon(1e-12));
  }
}

TEST_CASE("covariance bounds for W_T and an OU terminal") {
  SimulationSpec bm;
  bm.time = TimeGrid{0.0, 1.0, 100};
  const auto e = simulate_forward(bm, 2000, 9);
  Matrix DF = Matrix::Ones(2000, 100);
  const Matrix Xs = e.X.leftCols(100);
  const auto rep = covariance_bounds(DF, Xs, 0.01);
  CHECK(rep.l_hat == doctest::Approx(1.0));
  CHECK(rep.L_hat == doctest::Approx(1.0));

  const double beta = 0.6;
  auto s = run(builtin_ou(beta, 1.0, [](double x) { return sigmoid(x); }, 1.0, 0.0), 200, 1000, 3);
  const auto ms = malliavin_forward(s.paths, s.field, s.model);
  const Matrix D = ms.DX_at(200);
  const auto ou = covariance_bounds(D, s.paths.X.leftCols(200), s.grid.time.dt());
  const double var = (1.0 - std::exp(-2.0 * beta)) / (2.0 * beta);
  CHECK(ou.l_hat == doctest::Approx(var).epsilon(0.01));
  CHECK(ou.L_hat == doctest::Approx(var).epsilon(0.01));

  CovarianceBoundsConfig cfg;
  cfg.bins = 50;
  CHECK_THROWS_AS(covariance_bounds(Matrix::Ones(100, 4), Matrix::Random(100, 4), 0.25, cfg), Error);
  cfg.l = 1.1;
  cfg.L = 2.0;
  CHECK(covariance_bounds(DF, Xs, 0.01, cfg).violation_fraction == 1.0);
}

TEST_CASE("second derivative vanishes for OU") {
  auto s = run(builtin_ou(0.5, 1.0, [](double x) { return sigmoid(x); }, 1.0, 0.0), 1024, 100, 4);
  SecondMalliavinConfig cfg;
  cfg.stride = 128;
  const auto sm = second_malliavin(s.paths, s.field, s.model, cfg);
  double worst = 0.0, mean = 0.0;
  for (double v : sm.DDX) {
    worst = std::max(worst, std::abs(v));
    mean += std::abs(v);
  }
  mean /= static_cast<double>(sm.DDX.size());
  MESSAGE("OU second derivative: mean " << mean << " sup " << worst);
  CHECK(mean < 1e-3);
  CHECK(worst < 1e-2);
}

namespace {

// Mean |D_0 D_0 X_T - second flow difference| / mean |flow difference|.
double second_flow_gap(int steps) {
  auto s = run(sine_drift(1.0), steps, 300, 21);
  SecondMalliavinConfig cfg;
  cfg.stride = steps / 4;
  const auto sm = second_malliavin(s.paths, s.field, s.model, cfg);
  const auto K = sm.nodes();
  const auto spec = forward_spec(s.model, s.field, s.grid.time);
  const double h = 1e-3;
  std::vector<double> dW(static_cast<std::size_t>(steps)), X(dW.size() + 1);
  double err = 0.0, scale = 0.0;
  for (std::size_t p = 0; p < 300; ++p) {
    brownian_increments(21, p, s.grid.time.dt(), 1, dW);
    double xs[3];
    for (int k = -1; k <= 1; ++k) {
      auto sp = spec;
      sp.x0 = spec.x0 + k * h;
      euler_path(sp, dW, X);
      xs[k + 1] = X.back();
    }
    const double fd = (xs[2] - 2.0 * xs[1] + xs[0]) / (h * h);
    err += std::abs(sm.DDX[sm.index(p, 0, 0, K - 1)] - fd);
    scale += std::abs(fd);
  }
  return err / scale;
}

}  // namespace

TEST_CASE("D_0 D_0 X_T approaches the second flow derivative") {
  // The dW integral carries strong error of order sqrt(dt).
  const double coarse = second_flow_gap(256), fine = second_flow_gap(1024);
  MESSAGE("relative L1 gaps " << coarse << " " << fine);
  CHECK(fine < 0.05);
  CHECK(coarse / fine > 1.6);
}

TEST_CASE("second derivatives refuse non-smooth drift and non-unit diffusion") {
  RegimeSwitchingParams rp;
  rp.k1 = 0.0;
  rp.k2 = 1.0;
  rp.phi = [](double x) { return sigmoid(x); };
  rp.phi_sup = 1.0;
  auto s = run(builtin_regime_switching(rp, 1.0, 0.0), 32, 10, 1);
  try {
    second_malliavin(s.paths, s.field, s.model);
    FAIL("expected SmoothnessViolation");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::smoothness_violation);
  }
  auto o = run(builtin_ou(0.5, 2.0, [](double x) { return sigmoid(x); }, 1.0, 0.0), 32, 10, 1);
  CHECK_THROWS_AS(second_malliavin(o.paths, o.field, o.model), Error);
}
