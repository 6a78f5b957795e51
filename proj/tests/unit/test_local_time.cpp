#include <doctest.h>

#include "fbsde/local_time.hpp"
#include "fbsde/malliavin.hpp"
#include "oracles.hpp"

#include <cmath>
#include <numbers>

using namespace fbsde;

namespace {

SimulationSpec brownian(int steps, double x0 = 0.0, int substeps = 1) {
  SimulationSpec s;
  s.time = TimeGrid{0.0, 1.0, steps};
  s.x0 = x0;
  s.noise_substeps = substeps;
  return s;
}

// E of the occupation estimate with half-width eps in continuous time:
// the average over a in (R - eps, R + eps) of E L^a_T = E|W_T - a| - |a|.
double windowed_local_time_mean(double R, double eps, double T) {
  const auto EL = [T](double a) {
    const double s = std::sqrt(T);
    return a * (2.0 * oracle::normal_cdf(a / s) - 1.0) + 2.0 * s * oracle::normal_pdf(a / s, 0.0, 1.0) -
           std::abs(a);
  };
  // Split at the kink in a = 0 when the window contains it.
  if (R - eps < 0.0 && R + eps > 0.0) {
    return (oracle::simpson(EL, R - eps, 0.0, 200) + oracle::simpson(EL, 0.0, R + eps, 200)) /
           (2.0 * eps);
  }
  return oracle::simpson(EL, R - eps, R + eps, 400) / (2.0 * eps);
}

}  // namespace

TEST_CASE("occupation estimate vanishes away from the level") {
  const TimeGrid tg{0.0, 1.0, 4};
  const std::vector<double> X{0.0, 0.1, -0.2, 0.3, 0.0};
  CHECK(level_local_time(X, tg, 2.0, 0.5).value == 0.0);
  const auto r = level_local_time(X, tg, 0.0, 0.15);
  CHECK(r.value == doctest::Approx(2.0 * 0.25 / 0.3));
  CHECK_THROWS_AS(level_local_time(X, tg, 0.0, 0.0), Error);
}

TEST_CASE("Brownian local time at the start level") {
  const auto spec = brownian(1024);
  const double eps = default_epsilon(spec.time.dt());
  const auto a = level_local_time(spec, 20000, 3, 0.0, eps);
  const double exact = std::sqrt(2.0 / std::numbers::pi);
  const double windowed = windowed_local_time_mean(0.0, eps, 1.0);
  MESSAGE("mean " << a.value << " se " << a.se << " windowed oracle " << windowed);
  CHECK(std::abs(a.value - windowed) < 4.0 * a.se);
  // The window costs eps / 2 at the kink of a -> E L^a.
  CHECK(std::abs(windowed - exact) <= 0.5 * eps + 1e-3);
}

TEST_CASE("occupation estimate is stable under halving eps away from the start") {
  const auto spec = brownian(1024);
  const double eps = default_epsilon(spec.time.dt());
  const auto a = level_local_time(spec, 20000, 3, 0.6, eps);
  const auto b = level_local_time(spec, 20000, 3, 0.6, eps / 2.0);
  MESSAGE("eps " << a.value << " eps/2 " << b.value << " se " << a.se);
  CHECK(std::abs(a.value - b.value) < 2.0 * a.se);
  CHECK(std::abs(a.value - windowed_local_time_mean(0.6, eps, 1.0)) < 4.0 * a.se);
}

TEST_CASE("decomposition: phi = z has mean -T, phi constant has mean 0") {
  const auto spec = brownian(512);
  const auto lin = spacetime_local_time_integral([](double, double z) { return z; }, spec, 20000, 5,
                                                 [](double, double) { return 1.0; });
  CHECK(std::abs(lin.stats.mean + 1.0) < 4.0 * lin.stats.se);
  CHECK(lin.rms_gap < 5.0 * std::sqrt(spec.time.dt()));

  const auto c = spacetime_local_time_integral([](double, double) { return 0.7; }, spec, 20000, 5);
  CHECK(std::abs(c.stats.mean) < 4.0 * c.stats.se + 1e-12);
}

TEST_CASE("decomposition of z^2 tracks -int 2 W ds pathwise and refines") {
  const auto phi = [](double, double z) { return z * z; };
  const auto phi_x = [](double, double z) { return 2.0 * z; };
  const auto coarse = spacetime_local_time_integral(phi, brownian(256, 0.0, 4), 4000, 8, phi_x);
  const auto fine = spacetime_local_time_integral(phi, brownian(1024), 4000, 8, phi_x);
  MESSAGE("rms " << coarse.rms_gap << " -> " << fine.rms_gap);
  CHECK(fine.rms_gap <= 5.0 * std::sqrt(fine.dt));
  CHECK(std::log(coarse.rms_gap / fine.rms_gap) / std::log(4.0) >= 0.4);
  const Vector diff = fine.values - fine.smooth;
  CHECK(std::abs(diff.mean()) < 5.0 * fine.rms_gap / std::sqrt(4000.0));
}

TEST_CASE("decomposition refuses drifted ensembles") {
  auto spec = brownian(16);
  spec.drift = [](double, double) { return 1.0; };
  CHECK_THROWS_AS(spacetime_local_time_integral([](double, double z) { return z; }, spec, 10, 1),
                  Error);
  const auto e = simulate_forward(spec, 10, 1);
  CHECK_THROWS_AS(spacetime_local_time_integral([](double, double z) { return z; }, e), Error);
}

TEST_CASE("stored and streamed ensembles agree") {
  const auto spec = brownian(64);
  const auto e = simulate_forward(spec, 300, 12);
  const auto phi = [](double t, double z) { return std::sin(z) + t; };
  const auto a = spacetime_local_time_integral(phi, e);
  const auto b = spacetime_local_time_integral(phi, spec, 300, 12);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("exponential moments of the local-time integral") {
  const auto spec = brownian(256);
  const auto zero = exponential_moment_check([](double, double) { return 0.0; }, 2.0, spec, 500, 1);
  CHECK(zero.estimate == 1.0);
  const auto lam0 = exponential_moment_check([](double, double z) { return z; }, 0.0, spec, 500, 1);
  CHECK(lam0.estimate == 1.0);
  const double lambda = 0.8;
  const auto b = [](double, double z) { return std::tanh(z); };
  const auto r = exponential_moment_check(b, lambda, spec, 20000, 2);
  CHECK(std::isfinite(r.estimate));
  CHECK(r.estimate <= std::exp(lambda * 1.0) * (1.0 + 5.0 * r.se / r.estimate));
  const auto r2 = exponential_moment_check(b, lambda, spec, 40000, 2);
  CHECK(std::abs(r2.estimate - r.estimate) < 5.0 * r.se);
}

TEST_CASE("flow derivative: trivial drift, route agreement, positivity") {
  const auto spec = brownian(512, 0.3);
  const auto zero = sobolev_flow_smooth(spec, [](double, double) { return 0.0; }, 100, 1);
  CHECK((zero.xi.array() == 1.0).all());
  const auto zd = sobolev_flow_decomposition(spec, [](double, double) { return 0.0; }, 100, 1);
  CHECK((zd.xi.array() == 1.0).all());

  const auto bt = [](double, double x) { return std::sin(x); };
  const auto bx = [](double, double x) { return std::cos(x); };
  const auto s = sobolev_flow_smooth(spec, bx, 2000, 4);
  const auto d = sobolev_flow_decomposition(spec, bt, 2000, 4);
  const double rms = std::sqrt((s.xi - d.xi).squaredNorm() / 2000.0);
  MESSAGE("route RMS " << rms);
  CHECK(rms <= 5.0 * std::sqrt(spec.time.dt()));
  CHECK(d.xi.minCoeff() > 0.0);
  CHECK(s.xi.minCoeff() > 0.0);

  auto drifted = spec;
  drifted.drift = bt;
  CHECK_THROWS_AS(sobolev_flow_decomposition(drifted, bt, 10, 1), Error);
  CHECK_THROWS_AS(sobolev_flow_smooth(spec, {}, 10, 1), Error);
}

TEST_CASE("flow derivative of a jump drift matches finite differences") {
  const double c = 1.0, R = 0.2;
  const auto bt = [=](double, double x) { return x >= R ? c : 0.0; };
  const auto spec = brownian(1024, 0.0);
  const auto d = sobolev_flow_decomposition(spec, bt, 20000, 6);
  auto drifted = spec;
  drifted.drift = bt;
  const Vector fd = finite_difference_flow(drifted, 1e-3, 20000, 6, 1024);
  std::vector<double> v(fd.data(), fd.data() + fd.size());
  const auto f = mean_se(v);
  MESSAGE("weighted xi " << d.mean.mean << " +- " << d.mean.se << ", fd " << f.mean << " +- " << f.se);
  CHECK(std::abs(d.mean.mean - f.mean) < 4.0 * std::hypot(d.mean.se, f.se));
}
