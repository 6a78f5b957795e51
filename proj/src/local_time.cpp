#include "fbsde/local_time.hpp"

#include "fbsde/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace fbsde {

const char* to_string(LocalTimeEstimator e) {
  switch (e) {
    case LocalTimeEstimator::occupation: return "occupation";
    case LocalTimeEstimator::decomposition: return "decomposition";
    case LocalTimeEstimator::smooth_route: return "smooth_route";
  }
  return "unknown";
}

LocalTimeResult level_local_time(std::span<const double> X, const TimeGrid& time, double R,
                                 double epsilon, const DiffusionFn& sigma) {
  require(epsilon > 0.0, Errc::invalid_argument, "occupation half-width must be positive");
  const double dt = time.dt();
  double acc = 0.0;
  for (int m = 0; m < time.steps; ++m) {
    const double x = X[static_cast<std::size_t>(m)];
    if (std::abs(x - R) < epsilon) {
      const double s = sigma ? sigma(time.time(m), x) : 1.0;
      acc += s * s;
    }
  }
  LocalTimeResult r;
  r.value = acc * dt / (2.0 * epsilon);
  r.estimator = LocalTimeEstimator::occupation;
  r.epsilon = epsilon;
  r.dt = dt;
  return r;
}

LocalTimeResult level_local_time(const SimulationSpec& spec, std::size_t n_paths,
                                 std::uint64_t seed, double R, double epsilon, int threads) {
  std::vector<double> v(n_paths);
  stream_paths(
      spec, n_paths, seed,
      [&](const PathView& p) {
        v[p.index] = level_local_time(p.X, spec.time, R, epsilon, spec.sigma).value;
      },
      threads);
  const auto s = mean_se(v);
  LocalTimeResult r;
  r.value = s.mean;
  r.se = s.se;
  r.n = n_paths;
  r.epsilon = epsilon;
  r.dt = spec.time.dt();
  return r;
}

DecompositionParts local_time_decomposition(const SpaceTimeFn& phi, const TimeGrid& time,
                                            double x0, std::span<const double> X,
                                            std::span<const double> dW,
                                            std::span<const double> W_hat,
                                            std::span<const double> dB) {
  const int M = time.steps;
  const double dt = time.dt();
  DecompositionParts d;
  for (int m = 0; m < M; ++m) {
    const auto k = static_cast<std::size_t>(m);
    d.forward += phi(time.time(m), X[k]) * dW[k];
    // Reversed index m sits at forward time t_{M-m}.
    const double f = phi(time.time(M - m), W_hat[k]);
    d.backward += f * dB[k];
    d.correction += f * (W_hat[k] - x0) / (static_cast<double>(M - m) * dt) * dt;
  }
  return d;
}

double smooth_route_integral(const SpaceTimeFn& phi_x, const TimeGrid& time,
                             std::span<const double> X) {
  double acc = 0.0;
  for (int m = 0; m < time.steps; ++m) acc += phi_x(time.time(m), X[static_cast<std::size_t>(m)]);
  return acc * time.dt();
}

namespace {

void require_brownian(const SimulationSpec& spec) {
  require(spec.pure_brownian(), Errc::not_brownian,
          "the local-time decomposition is defined on Brownian paths; drifted paths need "
          "Girsanov weights");
}

struct PathDecomposition {
  double value = 0.0;
  double sup_phi = 0.0;
  double last_gap = 0.0;  ///< |What_{M-1} - x0|
};

PathDecomposition decompose(const SpaceTimeFn& phi, const TimeGrid& time, double x0,
                            std::span<const double> X, std::span<const double> dW,
                            std::vector<double>& W_hat, std::vector<double>& dB) {
  const double T = time.T - time.t0;
  reverse_path(X, x0, T, time.dt(), W_hat, dB);
  PathDecomposition out;
  out.value = local_time_decomposition(phi, time, x0, X, dW, W_hat, dB).value();
  const std::size_t M = dB.size();
  out.sup_phi = std::abs(phi(time.time(1), W_hat[M - 1]));
  out.last_gap = std::abs(W_hat[M - 1] - x0);
  return out;
}

LocalTimeIntegral finish(std::vector<double>&& values, std::vector<double>&& smooth,
                         const std::vector<double>& sup_phi, const std::vector<double>& gap,
                         double dt) {
  LocalTimeIntegral r;
  r.dt = dt;
  r.values = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
  r.stats = mean_se(values);
  if (!smooth.empty()) {
    r.smooth = Eigen::Map<const Vector>(smooth.data(), static_cast<Eigen::Index>(smooth.size()));
    r.rms_gap = std::sqrt((r.values - r.smooth).squaredNorm() / static_cast<double>(values.size()));
  }
  const double sup = sup_phi.empty() ? 0.0 : *std::max_element(sup_phi.begin(), sup_phi.end());
  r.last_step_bias = sup * mean_se(gap).mean;
  return r;
}

}  // namespace

LocalTimeIntegral spacetime_local_time_integral(const SpaceTimeFn& phi, const SimulationSpec& spec,
                                                std::size_t n_paths, std::uint64_t seed,
                                                const SpaceTimeFn& phi_x, int threads) {
  require_brownian(spec);
  const auto M = static_cast<std::size_t>(spec.time.steps);
  std::vector<double> values(n_paths), smooth(phi_x ? n_paths : 0), sup_phi(n_paths), gap(n_paths);
  stream_paths(
      spec, n_paths, seed,
      [&](const PathView& p) {
        thread_local std::vector<double> W_hat, dB;
        W_hat.resize(M + 1);
        dB.resize(M);
        const auto d = decompose(phi, spec.time, spec.x0, p.X, p.dW, W_hat, dB);
        values[p.index] = d.value;
        sup_phi[p.index] = d.sup_phi;
        gap[p.index] = d.last_gap;
        if (phi_x) smooth[p.index] = -smooth_route_integral(phi_x, spec.time, p.X);
      },
      threads);
  return finish(std::move(values), std::move(smooth), sup_phi, gap, spec.time.dt());
}

LocalTimeIntegral spacetime_local_time_integral(const SpaceTimeFn& phi, const PathEnsemble& ensemble,
                                                const SpaceTimeFn& phi_x, int threads) {
  require(ensemble.brownian, Errc::not_brownian,
          "the local-time decomposition is defined on Brownian paths");
  const std::size_t n = ensemble.paths();
  const auto M = static_cast<std::size_t>(ensemble.time.steps);
  std::vector<double> values(n), smooth(phi_x ? n : 0), sup_phi(n), gap(n);
  parallel_for(
      n,
      [&](std::size_t p) {
        const auto r = static_cast<Eigen::Index>(p);
        std::vector<double> W_hat(M + 1), dB(M);
        const std::span<const double> X{ensemble.X.row(r).data(), M + 1};
        const auto d = decompose(phi, ensemble.time, ensemble.x0, X,
                                 {ensemble.dW.row(r).data(), M}, W_hat, dB);
        values[p] = d.value;
        sup_phi[p] = d.sup_phi;
        gap[p] = d.last_gap;
        if (phi_x) smooth[p] = -smooth_route_integral(phi_x, ensemble.time, X);
      },
      threads);
  return finish(std::move(values), std::move(smooth), sup_phi, gap, ensemble.time.dt());
}

ExponentialMomentReport exponential_moment_check(const SpaceTimeFn& b, double lambda,
                                                 const SimulationSpec& spec, std::size_t n_paths,
                                                 std::uint64_t seed, int threads) {
  const auto lt = spacetime_local_time_integral(b, spec, n_paths, seed, {}, threads);
  std::vector<double> e(n_paths);
  ExponentialMomentReport r;
  r.n = n_paths;
  for (std::size_t p = 0; p < n_paths; ++p) {
    const double x = lambda * lt.values(static_cast<Eigen::Index>(p));
    r.max_exponent = std::max(r.max_exponent, x);
    e[p] = std::exp(x);
  }
  const auto s = mean_se(e);
  r.estimate = s.mean;
  r.se = s.se;
  return r;
}

SobolevFlowResult sobolev_flow_smooth(const SimulationSpec& spec, const SpaceTimeFn& b_tilde_x,
                                      std::size_t n_paths, std::uint64_t seed, int threads) {
  require(static_cast<bool>(b_tilde_x), Errc::missing_derivatives,
          "the smooth route needs d_x b~");
  std::vector<double> xi(n_paths);
  const auto& tg = spec.time;
  stream_paths(
      spec, n_paths, seed,
      [&](const PathView& p) {
        double acc = 0.0;
        for (int m = 0; m < tg.steps; ++m) {
          const double x = p.X[static_cast<std::size_t>(m)];
          acc += b_tilde_x(tg.time(m), spec.window ? spec.window->clamp(x) : x);
        }
        xi[p.index] = std::exp(acc * tg.dt());
      },
      threads);
  SobolevFlowResult r;
  r.route = FlowRoute::smooth;
  r.dt = tg.dt();
  r.mean = mean_se(xi);
  r.xi = Eigen::Map<const Vector>(xi.data(), static_cast<Eigen::Index>(n_paths));
  return r;
}

SobolevFlowResult sobolev_flow_decomposition(const SimulationSpec& brownian, const SpaceTimeFn& b_tilde,
                                             std::size_t n_paths, std::uint64_t seed, int threads) {
  require_brownian(brownian);
  const auto& tg = brownian.time;
  const auto M = static_cast<std::size_t>(tg.steps);
  std::vector<double> xi(n_paths), w(n_paths), weighted(n_paths);
  const DriftFn drift = [&b_tilde](double t, double x) { return b_tilde(t, x); };
  stream_paths(
      brownian, n_paths, seed,
      [&](const PathView& p) {
        thread_local std::vector<double> W_hat, dB;
        W_hat.resize(M + 1);
        dB.resize(M);
        const auto d = decompose(b_tilde, tg, brownian.x0, p.X, p.dW, W_hat, dB);
        xi[p.index] = std::exp(-d.value);
        w[p.index] = std::exp(girsanov_log_weight(tg, p.X, p.dW, drift));
        weighted[p.index] = xi[p.index] * w[p.index];
      },
      threads);
  SobolevFlowResult r;
  r.route = FlowRoute::decomposition;
  r.dt = tg.dt();
  r.mean = mean_se(weighted);
  r.xi = Eigen::Map<const Vector>(xi.data(), static_cast<Eigen::Index>(n_paths));
  r.weight = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(n_paths));
  return r;
}

}  // namespace fbsde
