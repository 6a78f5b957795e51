#include "fbsde/zvonkin.hpp"

#include "fbsde/density.hpp"
#include "fbsde/parallel.hpp"
#include "fbsde/stats.hpp"

#include <algorithm>
#include <cmath>

namespace fbsde {

GridFunction two_level_drift(const SpaceTimeGrid& grid, double low, double high, double R,
                             double width, double theta) {
  require(width >= 0.0 && theta > 0.0 && theta <= 1.0, Errc::invalid_argument,
          "two-level drift needs width >= 0 and theta in (0, 1]");
  Matrix b(grid.time.nodes(), grid.space.nodes());
  for (int j = 0; j < grid.space.nodes(); ++j) {
    const double x = grid.space.x(j);
    double h;
    if (width == 0.0) {
      h = x < R ? 0.0 : 1.0;
    } else {
      const double u = std::clamp((x - R) / width, -1.0, 1.0);
      h = 0.5 * (1.0 + std::copysign(std::pow(std::abs(u), theta), u));
    }
    b.col(j).setConstant(low + (high - low) * h);
  }
  return GridFunction(grid, std::move(b));
}

double ZvonkinTransform::psi_inverse(double t, double zeta) const {
  if (identity()) return zeta;
  double lo = zeta - sup_U - 1.0, hi = zeta + sup_U + 1.0;
  while (hi - lo > bisection_tolerance) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (psi(t, mid) < zeta) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double ZvonkinTransform::round_trip_error() const {
  double worst = 0.0;
  for (int m = 0; m <= grid.time.steps; ++m) {
    const double t = grid.time.time(m);
    for (int j = 0; j <= grid.space.cells; ++j) {
      const double x = grid.space.x(j);
      worst = std::max(worst, std::abs(psi_inverse(t, psi(t, x)) - x));
    }
  }
  return worst;
}

ZvonkinTransform build_transform(const GridFunction& b_tilde, const DiffusionFn& sigma,
                                 const ZvonkinConfig& cfg) {
  require(cfg.mu_initial > 0.0, Errc::invalid_argument, "mu must be positive");
  require(b_tilde.values().allFinite(), Errc::invalid_argument, "b~ must be bounded on the grid");
  ZvonkinTransform z;
  z.grid = b_tilde.grid();
  z.bisection_tolerance = cfg.bisection_tolerance;
  double mu = cfg.mu_initial;
  for (int k = 0; k <= cfg.max_doublings; ++k, mu *= 2.0) {
    auto sol = solve_kolmogorov_U(b_tilde, sigma, mu, z.grid, cfg.solver);
    const double sup = sol.DU.cwiseAbs().maxCoeff();
    z.search.emplace_back(mu, sup);
    if (sup <= 0.5) {
      z.mu = mu;
      z.doublings = k;
      z.sup_DU = sup;
      z.sup_U = sol.U.cwiseAbs().maxCoeff();
      z.U = GridFunction(z.grid, std::move(sol.U));
      z.DU = GridFunction(z.grid, std::move(sol.DU));
      return z;
    }
  }
  throw Error(Errc::mu_search_failed,
              "sup|DU| = " + std::to_string(z.search.back().second) + " > 1/2 after " +
                  std::to_string(cfg.max_doublings) + " doublings (mu = " +
                  std::to_string(z.search.back().first) + ")");
}

DriftFn TransformedCoefficients::drift() const {
  if (identity) return [](double, double) { return 0.0; };
  return [b = b1](double t, double x) { return b(t, x); };
}

DiffusionFn TransformedCoefficients::diffusion() const {
  if (identity) return sigma;
  return [s = sigma1](double t, double x) { return s(t, x); };
}

TransformedCoefficients transformed_coefficients(const ZvonkinTransform& z, const DiffusionFn& sigma,
                                                 double lambda) {
  const auto& g = z.grid;
  const auto rows = static_cast<Eigen::Index>(g.time.steps + 1);
  const auto cols = static_cast<Eigen::Index>(g.space.nodes());
  Matrix b1(rows, cols), s1(rows, cols);
  parallel_for(static_cast<std::size_t>(rows), [&](std::size_t mu) {
    const int m = static_cast<int>(mu);
    const double t = g.time.time(m);
    const auto r = static_cast<Eigen::Index>(m);
    for (int j = 0; j < g.space.nodes(); ++j) {
      const double x = z.psi_inverse(t, g.space.x(j));
      b1(r, j) = z.identity() ? 0.0 : z.mu * z.U(t, x);
      s1(r, j) = z.dpsi(t, x) * sigma(t, x);
    }
  });
  TransformedCoefficients c;
  c.identity = z.identity();
  c.sigma = sigma;
  c.lambda = lambda;
  c.min_sigma1_sq = s1.array().square().minCoeff();
  c.quarter_bound = c.min_sigma1_sq >= lambda / 4.0 * (1.0 - 1e-12);
  c.half_bound = c.min_sigma1_sq >= lambda / 2.0;
  c.b1 = GridFunction(g, std::move(b1));
  c.sigma1 = GridFunction(g, std::move(s1));
  c.b1_x = differentiate_x(c.b1);
  c.sigma1_x = differentiate_x(c.sigma1);
  if (!c.quarter_bound) {
    throw Error(Errc::degeneracy_detected,
                "min sigma1^2 = " + std::to_string(c.min_sigma1_sq) + " < lambda/4 = " +
                    std::to_string(lambda / 4.0));
  }
  return c;
}

namespace {

SimulationSpec direct_spec(const GridFunction& b_tilde, const DiffusionFn& sigma, double x0,
                           const TimeGrid& time, int substeps) {
  SimulationSpec s;
  s.drift = [&b_tilde](double t, double x) { return b_tilde(t, x); };
  s.sigma = sigma;
  s.x0 = x0;
  s.time = time;
  s.window = b_tilde.grid().space;
  s.noise_substeps = substeps;
  return s;
}

SimulationSpec tilde_spec(const ZvonkinTransform& z, const TransformedCoefficients& c, double x0,
                          const TimeGrid& time, int substeps) {
  SimulationSpec s;
  s.drift = c.drift();
  s.sigma = c.diffusion();
  s.x0 = z.psi(time.t0, x0);
  s.time = time;
  s.window = z.grid.space;
  s.noise_substeps = substeps;
  return s;
}

}  // namespace

CorrespondenceReport correspondence_check(const GridFunction& b_tilde, const DiffusionFn& sigma,
                                          const ZvonkinTransform& z,
                                          const TransformedCoefficients& c, double x0,
                                          const TimeGrid& time, std::size_t n_paths,
                                          std::uint64_t seed, const CorrespondenceConfig& cfg) {
  const auto direct = direct_spec(b_tilde, sigma, x0, time, cfg.noise_substeps);
  const auto tilde = tilde_spec(z, c, x0, time, cfg.noise_substeps);
  const int M = time.steps;
  std::vector<int> idx;
  const int every = std::max(1, M / std::max(1, cfg.checkpoints));
  for (int m = every; m < M; m += every) idx.push_back(m);
  idx.push_back(M);
  const std::size_t K = idx.size();

  const std::size_t chunks = chunk_count(n_paths);
  std::vector<double> sq(chunks * K, 0.0);
  std::vector<std::size_t> exits(chunks, 0);
  std::vector<double> XT(n_paths), XtT(n_paths);
  const auto Mu = static_cast<std::size_t>(M);
  parallel_chunks(
      n_paths,
      [&](std::size_t ch, std::size_t begin, std::size_t end) {
        std::vector<double> dW(Mu), X(Mu + 1), Xt(Mu + 1);
        for (std::size_t p = begin; p < end; ++p) {
          brownian_increments(seed, p, time.dt(), cfg.noise_substeps, dW);
          euler_path(direct, dW, X);
          euler_path(tilde, dW, Xt);
          for (std::size_t k = 0; k < K; ++k) {
            const auto m = static_cast<std::size_t>(idx[k]);
            const double back = z.psi_inverse(time.time(idx[k]), Xt[m]);
            sq[ch * K + k] += (X[m] - back) * (X[m] - back);
            if (idx[k] == M) XtT[p] = back;
          }
          XT[p] = X[Mu];
          for (double x : X) {
            if (!direct.window->contains(x)) {
              ++exits[ch];
              break;
            }
          }
        }
      },
      cfg.threads);

  CorrespondenceReport r;
  r.mu = z.mu;
  r.sup_DU = z.sup_DU;
  r.times.resize(K);
  r.rms.assign(K, 0.0);
  for (std::size_t ch = 0; ch < chunks; ++ch) {
    for (std::size_t k = 0; k < K; ++k) r.rms[k] += sq[ch * K + k];
    r.exits.paths_exited += exits[ch];
  }
  for (std::size_t k = 0; k < K; ++k) {
    r.times[k] = time.time(idx[k]);
    r.rms[k] = std::sqrt(r.rms[k] / static_cast<double>(n_paths));
    r.sup_rms = std::max(r.sup_rms, r.rms[k]);
  }
  r.exits.fraction = static_cast<double>(r.exits.paths_exited) / static_cast<double>(n_paths);
  r.ks = ks_statistic(XT, XtT);
  r.ks_critical = ks_critical_1pct(n_paths, n_paths);
  r.ks_pass = r.ks < r.ks_critical;
  return r;
}

DensityTransferReport density_transfer_check(const GridFunction& b_tilde, const DiffusionFn& sigma,
                                             const ZvonkinTransform& z,
                                             const TransformedCoefficients& c, double x0,
                                             const TimeGrid& time, int m, std::size_t n_paths,
                                             std::uint64_t seed, int threads) {
  require(m >= 1 && m <= time.steps, Errc::invalid_argument, "time index out of range");
  const TimeGrid head{time.t0, time.time(m), m};
  const auto direct = direct_spec(b_tilde, sigma, x0, head, 1);
  const auto tilde = tilde_spec(z, c, x0, head, 1);
  std::vector<double> X(n_paths), Xt(n_paths);
  stream_paths(direct, n_paths, seed, [&](const PathView& p) { X[p.index] = p.X.back(); }, threads);
  stream_paths(tilde, n_paths, seed, [&](const PathView& p) { Xt[p.index] = p.X.back(); }, threads);

  std::vector<double> sorted = X;
  std::sort(sorted.begin(), sorted.end());
  const double lo = quantile_sorted(sorted, 0.01), hi = quantile_sorted(sorted, 0.99);
  const double t = head.T;
  KdeConfig kx;
  kx.bootstrap = 0;
  for (int i = 0; i < 200; ++i) kx.probe_grid.push_back(lo + (hi - lo) * i / 199.0);
  const auto dx = kde(X, kx);
  KdeConfig kt = kx;
  for (double& p : kt.probe_grid) p = z.psi(t, p);
  const auto dt = kde(Xt, kt);

  DensityTransferReport r;
  r.t = t;
  r.probes = static_cast<int>(kx.probe_grid.size());
  for (std::size_t i = 0; i < kx.probe_grid.size(); ++i) {
    const double transferred = z.dpsi(t, kx.probe_grid[i]) * dt.density[i];
    r.max_relative_deviation =
        std::max(r.max_relative_deviation, std::abs(dx.density[i] / transferred - 1.0));
  }
  return r;
}

FlowRouteReport flow_route_cross_check(const GridFunction& b_tilde, double sigma, const ZvonkinTransform& z,
                                       const TransformedCoefficients& c, double x0, const TimeGrid& time,
                                       std::size_t n_paths, std::uint64_t seed, int threads) {
  const GridFunction bx = differentiate_x(b_tilde);
  const DiffusionFn sig = [sigma](double, double) { return sigma; };
  const auto direct = direct_spec(b_tilde, sig, x0, time, 1);
  const auto tilde = tilde_spec(z, c, x0, time, 1);
  const auto M = static_cast<std::size_t>(time.steps);
  const double dt = time.dt();
  std::vector<double> gap(n_paths);
  parallel_for(
      n_paths,
      [&](std::size_t p) {
        std::vector<double> dW(M), X(M + 1), Xt(M + 1);
        brownian_increments(seed, p, dt, 1, dW);
        euler_path(direct, dW, X);
        euler_path(tilde, dW, Xt);
        double a = 0.0, e = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
          const double t = time.time(static_cast<int>(m));
          a += bx(t, X[m]) * dt;
          const double s1x = c.sigma1_x(t, Xt[m]);
          e += (c.b1_x(t, Xt[m]) - 0.5 * s1x * s1x) * dt + s1x * dW[m];
        }
        const double T = time.T;
        const double via_direct = sigma * std::exp(a);
        const double dpsi_inv = 1.0 / z.dpsi(T, z.psi_inverse(T, Xt[M]));
        const double via_tilde = dpsi_inv * c.sigma1(time.t0, Xt[0]) * std::exp(e);
        gap[p] = std::abs(via_tilde / via_direct - 1.0);
      },
      threads);
  FlowRouteReport r;
  r.paths = n_paths;
  r.mean_relative_gap = mean_se(gap).mean;
  r.max_relative_gap = *std::max_element(gap.begin(), gap.end());
  return r;
}

}  // namespace fbsde
