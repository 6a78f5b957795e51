#include "fbsde/density.hpp"

#include "fbsde/malliavin.hpp"
#include "fbsde/parallel.hpp"
#include "fbsde/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fbsde {

double DensityEstimate::mass() const {
  double acc = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    acc += 0.5 * (density[i] + density[i - 1]) * (x[i] - x[i - 1]);
  }
  return acc;
}

double silverman_bandwidth(std::span<const double> samples) {
  const auto s = mean_se(samples);
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  double spread = s.sd;
  if (iqr > 0.0) spread = std::min(spread, iqr / 1.34);
  return 0.9 * spread * std::pow(static_cast<double>(samples.size()), -0.2);
}

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = a + (b - a) * i / (n - 1);
  return x;
}

struct Binning {
  double origin = 0.0;
  double width = 1.0;
  std::size_t bins = 0;

  void add(std::vector<double>& counts, double x) const {
    const double u = (x - origin) / width;
    const auto j = std::min(static_cast<std::size_t>(std::max(u, 0.0)), bins - 2);
    const double f = std::clamp(u - static_cast<double>(j), 0.0, 1.0);
    counts[j] += 1.0 - f;
    counts[j + 1] += f;
  }
};

void evaluate(const Binning& b, const std::vector<double>& counts, double h, double n,
              const std::vector<double>& probes, std::vector<double>& out) {
  const double reach = 8.0 * h;
  const double scale = kInvSqrt2Pi / (n * h);
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const double x = probes[i];
    const double lo = (x - reach - b.origin) / b.width;
    const double hi = (x + reach - b.origin) / b.width;
    if (hi < 0.0 || lo > static_cast<double>(b.bins - 1)) {
      out[i] = 0.0;
      continue;
    }
    const auto j0 = static_cast<std::size_t>(std::max(lo, 0.0));
    const auto j1 = std::min(b.bins - 1, static_cast<std::size_t>(std::max(hi, 0.0)));
    double acc = 0.0;
    for (std::size_t j = j0; j <= j1; ++j) {
      if (counts[j] == 0.0) continue;
      const double z = (x - (b.origin + static_cast<double>(j) * b.width)) / h;
      acc += counts[j] * std::exp(-0.5 * z * z);
    }
    out[i] = acc * scale;
  }
}

}  // namespace

DensityEstimate kde(std::span<const double> samples, const KdeConfig& cfg) {
  const std::size_t n = samples.size();
  if (n < cfg.min_samples) {
    throw Error(Errc::too_few_samples,
                std::to_string(n) + " samples, need " + std::to_string(cfg.min_samples));
  }
  const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
  const double h = cfg.bandwidth > 0.0 ? cfg.bandwidth : silverman_bandwidth(samples);
  if (!(h > 0.0) || !std::isfinite(h) || *mx == *mn) {
    throw Error(Errc::degenerate, "KDE bandwidth collapsed (samples are all equal)");
  }

  DensityEstimate d;
  d.bandwidth = h;
  d.n_samples = n;
  d.x = cfg.probe_grid.empty() ? linspace(*mn - 3.0 * h, *mx + 3.0 * h, cfg.probes) : cfg.probe_grid;

  Binning b;
  b.origin = *mn;
  const double range = *mx - *mn;
  b.bins = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(range / (h / 20.0))) + 1, 64,
                                   std::size_t{1} << 20);
  b.width = range / static_cast<double>(b.bins - 1);

  std::vector<double> counts(b.bins, 0.0);
  for (double x : samples) b.add(counts, x);
  d.density.resize(d.x.size());
  evaluate(b, counts, h, static_cast<double>(n), d.x, d.density);

  d.se.assign(d.x.size(), 0.0);
  if (cfg.bootstrap > 1) {
    const auto R = static_cast<std::size_t>(cfg.bootstrap);
    std::vector<std::vector<double>> boot(R, std::vector<double>(d.x.size()));
    parallel_for(R, [&](std::size_t r) {
      CounterRng rng(cfg.seed, r);
      std::vector<double> c(b.bins, 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        const auto idx = std::min(n - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)));
        b.add(c, samples[idx]);
      }
      evaluate(b, c, h, static_cast<double>(n), d.x, boot[r]);
    });
    for (std::size_t i = 0; i < d.x.size(); ++i) {
      double m = 0.0, s = 0.0;
      for (std::size_t r = 0; r < R; ++r) m += boot[r][i];
      m /= static_cast<double>(R);
      for (std::size_t r = 0; r < R; ++r) s += (boot[r][i] - m) * (boot[r][i] - m);
      d.se[i] = std::sqrt(s / static_cast<double>(R - 1));
    }
  }
  return d;
}

TailReport tail_check(std::span<const double> samples, double L, double mean) {
  require(L > 0.0, Errc::bad_bounds, "tail check needs L > 0");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  TailReport rep;
  for (int i = 1; i <= 8; ++i) {
    const double k = 0.5 * i;
    const double bound = std::exp(-0.5 * k * k);
    const double se = std::sqrt(bound * (1.0 - bound) / n);
    for (bool upper : {true, false}) {
      TailProbe p;
      p.upper = upper;
      p.bound = bound;
      p.se = se;
      p.x = upper ? mean + k * std::sqrt(L) : mean - k * std::sqrt(L);
      const auto count = upper ? static_cast<double>(sorted.end() -
                                                     std::lower_bound(sorted.begin(), sorted.end(), p.x))
                               : static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), p.x) -
                                                     sorted.begin());
      p.empirical = count / n;
      p.violated = p.empirical - bound > 3.0 * se;
      if (p.violated) ++rep.violations;
      rep.probes.push_back(p);
    }
  }
  return rep;
}

BoundReport gaussian_sandwich_check(std::span<const double> samples, double l, double L,
                                    const KdeConfig& cfg) {
  require(l > 0.0 && L > 0.0 && std::isfinite(L), Errc::bad_bounds, "bounds must be positive");
  if (l > L) throw Error(Errc::bad_bounds, "l = " + std::to_string(l) + " exceeds L = " + std::to_string(L));
  BoundReport r;
  r.l = l;
  r.L = L;
  r.mean = mean_se(samples).mean;
  double dev = 0.0;
  for (double x : samples) dev += std::abs(x - r.mean);
  r.abs_dev = dev / static_cast<double>(samples.size());
  r.kde = kde(samples, cfg);
  const std::size_t P = r.kde.x.size();
  r.lower.resize(P);
  r.upper.resize(P);
  for (std::size_t i = 0; i < P; ++i) {
    const double q = (r.kde.x[i] - r.mean) * (r.kde.x[i] - r.mean);
    r.lower[i] = r.abs_dev / (2.0 * L) * std::exp(-q / (2.0 * l));
    r.upper[i] = r.abs_dev / (2.0 * l) * std::exp(-q / (2.0 * L));
    const double k = r.kde.density[i];
    const double eta = k > 0.0 ? 3.0 * r.kde.se[i] / k : 1.0;
    if (!(k > 0.0) || eta >= 1.0) continue;
    ++r.resolvable;
    if (k < r.lower[i] * (1.0 - eta) || k > r.upper[i] * (1.0 + eta)) ++r.violations;
  }
  r.violation_fraction = r.resolvable > 0 ? static_cast<double>(r.violations) / r.resolvable : 1.0;
  r.tails = tail_check(samples, L, r.mean);
  return r;
}

OccupiedRegion OccupiedRegion::of(const Matrix& X, const TimeGrid& time) {
  OccupiedRegion r;
  r.time = time;
  const auto cols = static_cast<std::size_t>(X.cols());
  r.lo.resize(cols);
  r.hi.resize(cols);
  for (Eigen::Index m = 0; m < X.cols(); ++m) {
    r.lo[static_cast<std::size_t>(m)] = X.col(m).minCoeff();
    r.hi[static_cast<std::size_t>(m)] = X.col(m).maxCoeff();
  }
  return r;
}

void OccupiedRegion::merge(const OccupiedRegion& other) {
  if (lo.empty()) {
    *this = other;
    return;
  }
  require(other.lo.size() == lo.size(), Errc::grid_mismatch, "occupied regions on different grids");
  for (std::size_t m = 0; m < lo.size(); ++m) {
    lo[m] = std::min(lo[m], other.lo[m]);
    hi[m] = std::max(hi[m], other.hi[m]);
  }
}

namespace {

/// Grid nodes inside [lo, hi] plus the two ends.
std::vector<double> region_points(const SpaceGrid& space, double lo, double hi) {
  std::vector<double> pts{space.clamp(lo)};
  for (int j = 0; j < space.nodes(); ++j) {
    const double x = space.x(j);
    if (x > lo && x < hi) pts.push_back(x);
  }
  pts.push_back(space.clamp(hi));
  return pts;
}

BoundConstants forward_constants(int m, const OccupiedRegion& region, const DecouplingField& field,
                                 const ModelInstance& model) {
  require(static_cast<int>(region.lo.size()) == field.grid.time.steps + 1, Errc::grid_mismatch,
          "occupied region and field use different time grids");
  require(m >= 1 && m <= field.grid.time.steps, Errc::invalid_argument,
          "density bounds need 0 < t <= T");
  const auto data = prepare_forward_derivatives(field, model);
  BoundConstants c;
  c.t = field.grid.time.time(m) - field.grid.time.t0;
  double smin = std::numeric_limits<double>::infinity(), smax = 0.0;
  for (int k = 0; k <= m; ++k) {
    const double t = field.grid.time.time(k);
    const auto ku = static_cast<std::size_t>(k);
    for (double x : region_points(field.grid.space, region.lo[ku], region.hi[ku])) {
      if (k < m) c.K = std::max(c.K, std::abs(data.exponent_rate(t, x)));
      const double s = std::abs(model.coefficients.diffusion(t, x));
      smin = std::min(smin, s);
      smax = std::max(smax, s);
    }
  }
  c.lambda = smin;
  c.Lambda = std::max(1.0, smax);
  return c;
}

BoundReport finish_derivative_bounds(std::span<const double> samples, BoundConstants c,
                                     const std::vector<double>& g, const char* what,
                                     const KdeConfig& cfg) {
  double gmin = std::numeric_limits<double>::infinity(), gmax = -gmin, amin = gmin, amax = 0.0;
  for (double v : g) {
    gmin = std::min(gmin, v);
    gmax = std::max(gmax, v);
    amin = std::min(amin, std::abs(v));
    amax = std::max(amax, std::abs(v));
  }
  if ((gmin <= 0.0 && gmax >= 0.0) || amin <= 1e-12 * std::max(1.0, amax)) {
    throw Error(Errc::degenerate, std::string(what) + " vanishes or changes sign on the occupied region "
                                  "(min " + std::to_string(gmin) + ", max " + std::to_string(gmax) + ")");
  }
  c.alpha = amin;
  c.Upsilon = amax;
  const double r = c.lambda / c.Lambda;
  const double l = r * r * c.t * std::pow(c.alpha * std::exp(-c.K * c.t), 2);
  const double L = c.Lambda * c.Lambda * c.t * std::pow(c.Upsilon * std::exp(c.K * c.t), 2);
  auto rep = gaussian_sandwich_check(samples, l, L, cfg);
  rep.constants = c;
  return rep;
}

}  // namespace

BoundReport density_bounds_X(std::span<const double> X_t, int m, const OccupiedRegion& region,
                             const DecouplingField& field, const ModelInstance& model,
                             const KdeConfig& cfg) {
  const auto c = forward_constants(m, region, field, model);
  const double r = c.lambda / c.Lambda;
  const double l = r * r * c.t * std::exp(-2.0 * c.K * c.t);
  const double L = c.Lambda * c.Lambda * c.t * std::exp(2.0 * c.K * c.t);
  auto rep = gaussian_sandwich_check(X_t, l, L, cfg);
  rep.constants = c;
  return rep;
}

BoundReport density_bounds_Y(std::span<const double> Y_t, int m, const OccupiedRegion& region,
                             const DecouplingField& field, const ModelInstance& model,
                             const KdeConfig& cfg) {
  const auto c = forward_constants(m, region, field, model);
  const double t = field.grid.time.time(m);
  const auto mu = static_cast<std::size_t>(m);
  std::vector<double> g;
  for (double x : region_points(field.grid.space, region.lo[mu], region.hi[mu])) {
    g.push_back(field.v_x_fn(t, x));
  }
  return finish_derivative_bounds(Y_t, c, g, "v_x", cfg);
}

BoundReport density_bounds_Z(std::span<const double> Z_t, int m, const OccupiedRegion& region,
                             const DecouplingField& field, const ModelInstance& model,
                             const KdeConfig& cfg) {
  const auto c = forward_constants(m, region, field, model);
  const auto& coef = model.coefficients;
  if (!coef.constant_diffusion) {
    require(static_cast<bool>(coef.derivatives.sigma_x), Errc::missing_derivatives,
            "Z bounds need sigma_x for non-constant diffusion");
  }
  const double t = field.grid.time.time(m);
  const auto mu = static_cast<std::size_t>(m);
  std::vector<double> g;
  for (double x : region_points(field.grid.space, region.lo[mu], region.hi[mu])) {
    const double sx = coef.constant_diffusion ? 0.0 : coef.derivatives.sigma_x(t, x);
    g.push_back(coef.diffusion(t, x) * field.v_xx_fn(t, x) + sx * field.v_x_fn(t, x));
  }
  return finish_derivative_bounds(Z_t, c, g, "sigma v_xx + sigma_x v_x", cfg);
}

SkorohodInputs skorohod_inputs(std::span<const double> F, std::span<const double> W_T,
                               const Matrix& DF, std::span<const double> DDF, double ds) {
  const auto N = static_cast<std::size_t>(DF.rows());
  const auto S = static_cast<std::size_t>(DF.cols());
  require(F.size() == N && W_T.size() == N, Errc::grid_mismatch, "F, W_T and DF differ in length");
  SkorohodInputs in;
  in.F.assign(F.begin(), F.end());
  in.W_T.assign(W_T.begin(), W_T.end());
  in.gamma.resize(N);
  for (std::size_t p = 0; p < N; ++p) in.gamma[p] = DF.row(static_cast<Eigen::Index>(p)).sum() * ds;
  if (!DDF.empty()) {
    require(DDF.size() == N * S * S, Errc::grid_mismatch, "DDF must hold N x S x S values");
    in.second.resize(N);
    for (std::size_t p = 0; p < N; ++p) {
      double acc = 0.0;
      for (std::size_t k = 0; k < S * S; ++k) acc += DDF[p * S * S + k];
      in.second[p] = acc * ds * ds;
    }
  }
  return in;
}

double SkorohodDensity::w(double z) const {
  const std::size_t n = w_nodes.size();
  if (n == 1) return w_values[0];
  std::size_t j = static_cast<std::size_t>(std::upper_bound(w_nodes.begin(), w_nodes.end(), z) - w_nodes.begin());
  j = std::clamp<std::size_t>(j, 1, n - 1);
  const double x0 = w_nodes[j - 1], x1 = w_nodes[j];
  const double f = (z - x0) / (x1 - x0);
  return w_values[j - 1] + f * (w_values[j] - w_values[j - 1]);
}

SkorohodDensity skorohod_density_representation(const SkorohodInputs& in, const SkorohodConfig& cfg) {
  const std::size_t N = in.F.size();
  require(in.W_T.size() == N && in.gamma.size() == N, Errc::grid_mismatch,
          "Skorohod inputs differ in length");
  if (in.second.size() != N) {
    throw Error(Errc::missing_second_derivatives,
                "the Skorohod correction needs int int D_sD_uF du ds per path");
  }
  std::vector<double> delta(N);
  for (std::size_t p = 0; p < N; ++p) {
    require(in.gamma[p] > 0.0, Errc::degenerate, "int D_sF ds must be positive on every path");
    const double c = 1.0 / in.gamma[p];
    delta[p] = c * in.W_T[p] + c * c * in.second[p];
  }
  const auto bins = equal_count_bins(in.F, cfg.bins);
  const auto means = bin_means(bins, delta);

  SkorohodDensity out;
  // Drop empty or coincident centroids so interpolation stays well defined.
  for (int k = 0; k < bins.bins(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    if (bins.count[ku] == 0) continue;
    if (!out.w_nodes.empty() && bins.centroid[ku] <= out.w_nodes.back()) continue;
    out.w_nodes.push_back(bins.centroid[ku]);
    out.w_values.push_back(means[ku]);
  }
  std::vector<double> sorted = in.F;
  std::sort(sorted.begin(), sorted.end());
  out.anchor = quantile_sorted(sorted, 0.5);

  auto& d = out.density;
  d.estimator = DensityEstimator::representation;
  d.n_samples = N;
  d.x = linspace(sorted.front(), sorted.back(), cfg.probes);
  const std::size_t P = d.x.size();
  std::vector<double> I(P, 0.0);
  for (std::size_t i = 1; i < P; ++i) {
    I[i] = I[i - 1] + 0.5 * (out.w(d.x[i]) + out.w(d.x[i - 1])) * (d.x[i] - d.x[i - 1]);
  }
  // Anchor: integral measured from the median.
  const auto a = static_cast<std::size_t>(std::lower_bound(d.x.begin(), d.x.end(), out.anchor) - d.x.begin());
  const double I0 = I[std::min(a, P - 1)];
  double top = -std::numeric_limits<double>::infinity();
  for (double& v : I) {
    v = -(v - I0);
    top = std::max(top, v);
  }
  d.density.resize(P);
  for (std::size_t i = 0; i < P; ++i) d.density[i] = std::exp(I[i] - top);
  const double mass = d.mass();
  for (double& v : d.density) v /= mass;
  d.se.assign(P, 0.0);
  return out;
}

std::vector<double> holder_modulus(const DensityEstimate& d, double theta) {
  std::vector<double> out;
  if (d.x.size() < 2) return out;
  const double dx = d.x[1] - d.x[0];
  for (std::size_t k : {1, 2, 4, 8}) {
    double sup = 0.0;
    for (std::size_t i = 0; i + k < d.x.size(); ++i) {
      sup = std::max(sup, std::abs(d.density[i + k] - d.density[i]));
    }
    out.push_back(sup / std::pow(static_cast<double>(k) * dx, theta));
  }
  return out;
}

}  // namespace fbsde
