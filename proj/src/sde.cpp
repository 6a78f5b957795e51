#include "fbsde/sde.hpp"

#include "fbsde/parallel.hpp"
#include "fbsde/rng.hpp"

#include <cmath>

namespace fbsde {

void parallel_chunks(std::size_t n,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn,
                     int threads) {
  const std::size_t chunks = chunk_count(n);
  parallel_for(
      chunks,
      [&](std::size_t c) {
        const std::size_t begin = c * kReductionChunk;
        fn(c, begin, std::min(n, begin + kReductionChunk));
      },
      threads);
}

void brownian_increments(std::uint64_t seed, std::size_t path, double dt, int substeps,
                         std::span<double> dW) {
  CounterRng rng(seed, path);
  if (substeps <= 1) {
    const double scale = std::sqrt(dt);
    for (double& w : dW) w = scale * rng.normal();
    return;
  }
  const double scale = std::sqrt(dt / substeps);
  for (double& w : dW) {
    double acc = 0.0;
    for (int k = 0; k < substeps; ++k) acc += rng.normal();
    w = scale * acc;
  }
}

void euler_path(const SimulationSpec& spec, std::span<const double> dW, std::span<double> X) {
  const TimeGrid& tg = spec.time;
  const double dt = tg.dt();
  X[0] = spec.x0;
  const bool clamp = spec.window.has_value();
  for (int m = 0; m < tg.steps; ++m) {
    const double t = tg.time(m);
    const double x = X[static_cast<std::size_t>(m)];
    const double xl = clamp ? spec.window->clamp(x) : x;
    const double b = spec.drift ? spec.drift(t, xl) : 0.0;
    const double s = spec.sigma ? spec.sigma(t, xl) : 1.0;
    X[static_cast<std::size_t>(m) + 1] = x + b * dt + s * dW[static_cast<std::size_t>(m)];
  }
}

namespace {

NoiseSanity finish_sanity(const std::vector<double>& sum, const std::vector<double>& sq,
                          std::size_t n, double dt) {
  NoiseSanity s;
  if (n < 2) return s;
  const double nn = static_cast<double>(n);
  for (std::size_t m = 0; m < sum.size(); ++m) {
    const double mean = sum[m] / nn;
    const double var = (sq[m] - nn * mean * mean) / (nn - 1.0);
    const double zm = std::abs(mean) / std::sqrt(dt / nn);
    const double zv = std::abs(var - dt) / (dt * std::sqrt(2.0 / nn));
    s.max_mean_z = std::max(s.max_mean_z, zm);
    s.max_variance_z = std::max(s.max_variance_z, zv);
    if (zm > 5.0 || zv > 5.0) ++s.flagged_columns;
  }
  return s;
}

}  // namespace

StreamSummary stream_paths(const SimulationSpec& spec, std::size_t n_paths, std::uint64_t seed,
                           const std::function<void(const PathView&)>& visit, int threads) {
  spec.time.validate();
  require(n_paths >= 1, Errc::invalid_argument, "need at least one path");
  const auto M = static_cast<std::size_t>(spec.time.steps);
  const double dt = spec.time.dt();
  const std::size_t chunks = chunk_count(n_paths);
  std::vector<double> col_sum(chunks * M, 0.0), col_sq(chunks * M, 0.0);
  std::vector<std::size_t> exits(chunks, 0);

  parallel_chunks(
      n_paths,
      [&](std::size_t c, std::size_t begin, std::size_t end) {
        std::vector<double> X(M + 1), dW(M);
        double* sum = col_sum.data() + c * M;
        double* sq = col_sq.data() + c * M;
        for (std::size_t p = begin; p < end; ++p) {
          brownian_increments(seed, p, dt, spec.noise_substeps, dW);
          euler_path(spec, dW, X);
          for (std::size_t m = 0; m < M; ++m) {
            sum[m] += dW[m];
            sq[m] += dW[m] * dW[m];
          }
          if (spec.window) {
            for (double x : X) {
              if (!spec.window->contains(x)) {
                ++exits[c];
                break;
              }
            }
          }
          visit(PathView{p, X, dW});
        }
      },
      threads);

  std::vector<double> sum(M, 0.0), sq(M, 0.0);
  StreamSummary out;
  for (std::size_t c = 0; c < chunks; ++c) {
    for (std::size_t m = 0; m < M; ++m) {
      sum[m] += col_sum[c * M + m];
      sq[m] += col_sq[c * M + m];
    }
    out.exits.paths_exited += exits[c];
  }
  out.exits.fraction = static_cast<double>(out.exits.paths_exited) / static_cast<double>(n_paths);
  out.sanity = finish_sanity(sum, sq, n_paths, dt);
  return out;
}

PathEnsemble simulate_forward(const SimulationSpec& spec, std::size_t n_paths, std::uint64_t seed,
                              int threads) {
  PathEnsemble e;
  e.time = spec.time;
  e.seed = seed;
  e.x0 = spec.x0;
  e.brownian = spec.pure_brownian();
  const auto M = static_cast<Eigen::Index>(spec.time.steps);
  e.X.resize(static_cast<Eigen::Index>(n_paths), M + 1);
  e.dW.resize(static_cast<Eigen::Index>(n_paths), M);
  const auto summary = stream_paths(
      spec, n_paths, seed,
      [&](const PathView& v) {
        const auto p = static_cast<Eigen::Index>(v.index);
        std::copy(v.X.begin(), v.X.end(), e.X.row(p).data());
        std::copy(v.dW.begin(), v.dW.end(), e.dW.row(p).data());
      },
      threads);
  e.exits = summary.exits;
  e.sanity = summary.sanity;
  return e;
}

void reverse_path(std::span<const double> X, double x0, double T, double dt,
                  std::span<double> W_hat, std::span<double> dB) {
  const std::size_t M = dB.size();
  for (std::size_t m = 0; m <= M; ++m) W_hat[m] = X[M - m];
  for (std::size_t m = 0; m < M; ++m) {
    const double s = static_cast<double>(m) * dt;
    const double remaining = std::max(T - s, dt);
    dB[m] = W_hat[m + 1] - W_hat[m] + (W_hat[m] - x0) / remaining * dt;
  }
}

ReversedEnsemble time_reversed_paths(const PathEnsemble& ensemble) {
  require(ensemble.brownian, Errc::not_brownian,
          "time reversal needs a zero-drift, unit-diffusion ensemble");
  ReversedEnsemble r;
  r.time = ensemble.time;
  r.x0 = ensemble.x0;
  const Eigen::Index N = ensemble.X.rows();
  const Eigen::Index M = ensemble.time.steps;
  r.W_hat.resize(N, M + 1);
  r.dB.resize(N, M);
  const double T = ensemble.time.T - ensemble.time.t0;
  const double dt = ensemble.time.dt();
  double acc = 0.0;
  for (Eigen::Index p = 0; p < N; ++p) {
    reverse_path({ensemble.X.row(p).data(), static_cast<std::size_t>(M + 1)}, ensemble.x0, T, dt,
                 {r.W_hat.row(p).data(), static_cast<std::size_t>(M + 1)},
                 {r.dB.row(p).data(), static_cast<std::size_t>(M)});
    acc += std::abs(r.W_hat(p, M - 1) - ensemble.x0);
  }
  r.last_kernel_mean = N > 0 ? acc / static_cast<double>(N) : 0.0;
  return r;
}

double girsanov_log_weight(const TimeGrid& time, std::span<const double> X,
                           std::span<const double> dW, const DriftFn& drift) {
  if (!drift) return 0.0;
  const double dt = time.dt();
  double acc = 0.0;
  for (std::size_t m = 0; m < dW.size(); ++m) {
    const double h = drift(time.time(static_cast<int>(m)), X[m]);
    acc += h * dW[m] - 0.5 * h * h * dt;
  }
  return acc;
}

Vector girsanov_weight(const PathEnsemble& ensemble, const DriftFn& drift, int threads) {
  const Eigen::Index N = ensemble.X.rows();
  Vector w(N);
  const auto M = static_cast<std::size_t>(ensemble.time.steps);
  parallel_for(
      static_cast<std::size_t>(N),
      [&](std::size_t p) {
        const auto row = static_cast<Eigen::Index>(p);
        w(row) = std::exp(girsanov_log_weight(ensemble.time, {ensemble.X.row(row).data(), M + 1},
                                              {ensemble.dW.row(row).data(), M}, drift));
      },
      threads);
  return w;
}

}  // namespace fbsde
