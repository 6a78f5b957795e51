#include "fbsde/malliavin.hpp"

#include "fbsde/parallel.hpp"
#include "fbsde/stats.hpp"

#include <algorithm>
#include <cmath>

namespace fbsde {

double ForwardDerivativeData::exponent_rate(double t, double x) const {
  const double bx = b_tilde_x(t, x);
  if (constant_diffusion) return bx;
  const double xc = b_tilde.grid().space.clamp(x);
  const double s = sigma(t, xc);
  return bx - (b_tilde(t, x) * sigma_x(t, xc) + sigma_t(t, xc)) / s - 0.5 * s * sigma_xx(t, xc);
}

ForwardDerivativeData prepare_forward_derivatives(const DecouplingField& field,
                                                  const ModelInstance& model,
                                                  DriftGradientRoute route) {
  const auto& c = model.coefficients;
  ForwardDerivativeData d;
  d.b_tilde = transformed_drift(field, model);
  if (route == DriftGradientRoute::automatic) {
    if (c.derivatives.has_drift_chain()) {
      route = DriftGradientRoute::chain_rule;
    } else if (c.constant_diffusion) {
      route = DriftGradientRoute::grid_difference;
    } else {
      throw Error(Errc::missing_derivatives,
                  "d_x b~ needs b_x, b_y, b_z (or constant diffusion for grid differencing)");
    }
  }
  d.b_tilde_x = route == DriftGradientRoute::chain_rule ? transformed_drift_gradient(field, model)
                                                        : differentiate_x(d.b_tilde);
  d.constant_diffusion = c.constant_diffusion;
  d.sigma = c.diffusion;
  if (c.constant_diffusion) {
    d.unit_diffusion = c.diffusion(model.t0, model.x0) == 1.0;
  } else {
    require(c.derivatives.has_diffusion(), Errc::missing_derivatives,
            "non-constant diffusion needs sigma_x, sigma_xx and sigma_t");
    d.unit_diffusion = false;
    d.sigma_x = c.derivatives.sigma_x;
    d.sigma_xx = c.derivatives.sigma_xx;
    d.sigma_t = c.derivatives.sigma_t;
  }
  return d;
}

void malliavin_exponent_path(const ForwardDerivativeData& data, const TimeGrid& time,
                             std::span<const double> X, std::span<double> A,
                             std::span<double> sig) {
  const double dt = time.dt();
  const auto& window = data.b_tilde.grid().space;
  A[0] = 0.0;
  for (int m = 0; m <= time.steps; ++m) {
    const auto k = static_cast<std::size_t>(m);
    const double t = time.time(m);
    sig[k] = data.diffusion(t, window.clamp(X[k]));
    if (m < time.steps) A[k + 1] = A[k] + data.exponent_rate(t, X[k]) * dt;
  }
}

Matrix MalliavinSample::DX_at(int m, int stride) const {
  std::vector<int> s_nodes;
  for (int i = 0; i < m; i += stride) s_nodes.push_back(i);
  Matrix out(A.rows(), static_cast<Eigen::Index>(s_nodes.size()));
  for (Eigen::Index p = 0; p < A.rows(); ++p) {
    for (std::size_t i = 0; i < s_nodes.size(); ++i) {
      out(p, static_cast<Eigen::Index>(i)) = DX(p, s_nodes[i], m);
    }
  }
  return out;
}

MalliavinSample malliavin_forward(const PathEnsemble& ensemble, const DecouplingField& field,
                                  const ModelInstance& model, DriftGradientRoute route,
                                  int threads) {
  check_compatible(field, ensemble.time);
  const auto data = prepare_forward_derivatives(field, model, route);
  MalliavinSample s;
  s.time = ensemble.time;
  s.A.resize(ensemble.X.rows(), ensemble.X.cols());
  s.sig.resize(ensemble.X.rows(), ensemble.X.cols());
  const auto cols = static_cast<std::size_t>(ensemble.X.cols());
  parallel_for(
      ensemble.paths(),
      [&](std::size_t p) {
        const auto r = static_cast<Eigen::Index>(p);
        malliavin_exponent_path(data, s.time, {ensemble.X.row(r).data(), cols},
                                {s.A.row(r).data(), cols}, {s.sig.row(r).data(), cols});
      },
      threads);
  return s;
}

void malliavin_backward(const TripleEnsemble& triple, const DecouplingField& field,
                        const ModelInstance& model, MalliavinSample& sample, int threads) {
  require(sample.A.rows() == triple.X.rows() && sample.A.cols() == triple.X.cols(),
          Errc::grid_mismatch, "Malliavin sample and triple differ in shape");
  const auto& c = model.coefficients;
  const bool const_sigma = c.constant_diffusion;
  if (!const_sigma) {
    require(static_cast<bool>(c.derivatives.sigma_x), Errc::missing_derivatives,
            "D_sZ needs sigma_x for non-constant diffusion");
  }
  sample.dy.resize(triple.X.rows(), triple.X.cols());
  sample.dz.resize(triple.X.rows(), triple.X.cols());
  const auto& window = field.grid.space;
  parallel_for(
      triple.paths(),
      [&](std::size_t p) {
        const auto r = static_cast<Eigen::Index>(p);
        for (int m = 0; m <= triple.time.steps; ++m) {
          const double t = triple.time.time(m);
          const double x = triple.X(r, m);
          const double vx = field.v_x_fn(t, x);
          const double vxx = field.v_xx_fn(t, x);
          const double s = c.diffusion(t, window.clamp(x));
          const double sx = const_sigma ? 0.0 : c.derivatives.sigma_x(t, window.clamp(x));
          sample.dy(r, m) = vx;
          sample.dz(r, m) = s * vxx + sx * vx;
        }
      },
      threads);
}

Vector finite_difference_flow(const SimulationSpec& spec, double h, std::size_t n_paths,
                              std::uint64_t seed, int m,
                              const std::function<double(double t, double x)>& g, int threads) {
  require(h > 0.0, Errc::invalid_argument, "finite-difference step must be positive");
  require(m >= 0 && m <= spec.time.steps, Errc::invalid_argument, "time index out of range");
  SimulationSpec up = spec, down = spec;
  up.x0 = spec.x0 + h;
  down.x0 = spec.x0 - h;
  const auto M = static_cast<std::size_t>(spec.time.steps);
  const double t = spec.time.time(m);
  Vector out(static_cast<Eigen::Index>(n_paths));
  parallel_for(
      n_paths,
      [&](std::size_t p) {
        std::vector<double> dW(M), Xu(M + 1), Xd(M + 1);
        brownian_increments(seed, p, spec.time.dt(), spec.noise_substeps, dW);
        euler_path(up, dW, Xu);
        euler_path(down, dW, Xd);
        const auto k = static_cast<std::size_t>(m);
        const double a = g ? g(t, Xu[k]) : Xu[k];
        const double b = g ? g(t, Xd[k]) : Xd[k];
        out(static_cast<Eigen::Index>(p)) = (a - b) / (2.0 * h);
      },
      threads);
  return out;
}

CovarianceBoundsReport covariance_bounds(const Matrix& DF, const Matrix& X_s, double ds,
                                         const CovarianceBoundsConfig& cfg) {
  require(DF.rows() == X_s.rows() && DF.cols() == X_s.cols(), Errc::grid_mismatch,
          "DF and conditioning proxy differ in shape");
  const auto N = static_cast<std::size_t>(DF.rows());
  const auto S = static_cast<std::size_t>(DF.cols());
  if (N < static_cast<std::size_t>(cfg.bins * cfg.min_paths_per_bin)) {
    throw Error(Errc::degenerate_bins, std::to_string(N) + " paths for " +
                                           std::to_string(cfg.bins) + " bins");
  }
  if (cfg.l && cfg.L) {
    require(*cfg.l <= *cfg.L, Errc::bad_bounds, "configured l exceeds L");
  }

  Matrix cond(DF.rows(), DF.cols());
  parallel_for(S, [&](std::size_t i) {
    const auto col = static_cast<Eigen::Index>(i);
    std::vector<double> keys(N), vals(N);
    for (std::size_t p = 0; p < N; ++p) {
      keys[p] = X_s(static_cast<Eigen::Index>(p), col);
      vals[p] = DF(static_cast<Eigen::Index>(p), col);
    }
    const auto [lo, hi] = std::minmax_element(keys.begin(), keys.end());
    if (*hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi))) {
      const double mean = mean_se(vals).mean;
      cond.col(col).setConstant(mean);
      return;
    }
    const auto bins = equal_count_bins(keys, cfg.bins);
    const auto means = bin_means(bins, vals);
    for (std::size_t p = 0; p < N; ++p) {
      cond(static_cast<Eigen::Index>(p), col) = means[static_cast<std::size_t>(bins.bin_of[p])];
    }
  });

  CovarianceBoundsReport rep;
  rep.bins = cfg.bins;
  rep.per_path.resize(N);
  for (std::size_t p = 0; p < N; ++p) {
    const auto r = static_cast<Eigen::Index>(p);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < DF.cols(); ++i) acc += DF(r, i) * cond(r, i);
    rep.per_path[p] = acc * ds;
  }
  std::vector<double> sorted = rep.per_path;
  std::sort(sorted.begin(), sorted.end());
  rep.l_hat = quantile_sorted(sorted, 0.01);
  rep.L_hat = quantile_sorted(sorted, 0.99);
  rep.min = sorted.front();
  rep.max = sorted.back();
  rep.mean = mean_se(rep.per_path).mean;
  if (cfg.l || cfg.L) {
    std::size_t bad = 0;
    for (double v : rep.per_path) {
      if ((cfg.l && v < *cfg.l) || (cfg.L && v > *cfg.L)) ++bad;
    }
    rep.violation_fraction = static_cast<double>(bad) / static_cast<double>(N);
  }
  return rep;
}

GridFunction differentiate_t(const GridFunction& g) {
  const auto& v = g.values();
  const double dt = g.grid().time.dt();
  const Eigen::Index M = v.rows() - 1;
  Matrix out(v.rows(), v.cols());
  if (M == 0) {
    out.setZero();
    return GridFunction(g.grid(), std::move(out));
  }
  out.row(0) = (v.row(1) - v.row(0)) / dt;
  out.row(M) = (v.row(M) - v.row(M - 1)) / dt;
  for (Eigen::Index m = 1; m < M; ++m) out.row(m) = (v.row(m + 1) - v.row(m - 1)) / (2.0 * dt);
  return GridFunction(g.grid(), std::move(out));
}

SecondMalliavinSample second_malliavin(const PathEnsemble& ensemble, const DecouplingField& field,
                                       const ModelInstance& model,
                                       const SecondMalliavinConfig& cfg, int threads) {
  check_compatible(field, ensemble.time);
  const auto& c = model.coefficients;
  if (c.smoothness.drift < Smoothness::c1) {
    throw Error(Errc::smoothness_violation,
                std::string("second derivatives need a C1 transformed drift; drift is ") +
                    to_string(c.smoothness.drift));
  }
  const auto data = prepare_forward_derivatives(field, model, cfg.route);
  require(data.unit_diffusion, Errc::invalid_argument,
          "second-order representation is implemented for unit diffusion");
  const GridFunction b_t = differentiate_t(data.b_tilde);

  const TimeGrid& tg = ensemble.time;
  const int M = tg.steps;
  const double dt = tg.dt();
  SecondMalliavinSample out;
  const int stride = std::max(1, cfg.stride);
  for (int m = 0; m < M; m += stride) out.coarse.push_back(m);
  out.coarse.push_back(M);
  const std::size_t K = out.coarse.size();
  const std::size_t N = ensemble.paths();
  out.n_paths = N;
  out.DDX.assign(N * K * K * K, 0.0);
  out.DDY.assign(N * K * K * K, 0.0);
  out.DX.assign(N * K * K, 0.0);
  out.vxx.assign(N * K, 0.0);

  parallel_for(
      N,
      [&](std::size_t p) {
        const auto r = static_cast<Eigen::Index>(p);
        const auto n = static_cast<std::size_t>(M) + 1;
        std::vector<double> A(n), e(n), b(n), I1(n, 0.0), I2(n, 0.0);
        A[0] = 0.0;
        for (int m = 0; m <= M; ++m) {
          const auto k = static_cast<std::size_t>(m);
          const double t = tg.time(m), x = ensemble.X(r, m);
          const double bx = data.b_tilde_x(t, x);
          b[k] = data.b_tilde(t, x);
          e[k] = std::exp(A[k]);
          if (m < M) {
            A[k + 1] = A[k] + bx * dt;
            I1[k + 1] = I1[k] + (b_t(t, x) + 2.0 * b[k] * bx) * e[k] * dt;
            I2[k + 1] = I2[k] + bx * e[k] * ensemble.dW(r, m);
          }
        }
        for (std::size_t cc = 0; cc < K; ++cc) {
          const auto tk = static_cast<std::size_t>(out.coarse[cc]);
          const double t = tg.time(out.coarse[cc]), x = ensemble.X(r, out.coarse[cc]);
          const double vx = field.v_x_fn(t, x), vxx = field.v_xx_fn(t, x);
          out.vxx[p * K + cc] = vxx;
          for (std::size_t bb = 0; bb <= cc; ++bb) {
            const auto sk = static_cast<std::size_t>(out.coarse[bb]);
            out.DX[(p * K + bb) * K + cc] = e[tk] / e[sk];
          }
          for (std::size_t a = 0; a <= cc; ++a) {
            const auto s1 = static_cast<std::size_t>(out.coarse[a]);
            const double dx_s1 = e[tk] / e[s1];
            for (std::size_t bb = 0; bb <= cc; ++bb) {
              const auto s = static_cast<std::size_t>(out.coarse[bb]);
              const std::size_t rr = std::max(s, s1);
              const double bracket = (b[tk] * e[tk] - b[rr] * e[rr] - (I1[tk] - I1[rr]) -
                                      (I2[tk] - I2[rr])) / e[s1];
              const double ddx = 2.0 * (e[tk] / e[s]) * bracket;
              const std::size_t idx = out.index(p, a, bb, cc);
              out.DDX[idx] = ddx;
              out.DDY[idx] = vxx * dx_s1 * (e[tk] / e[s]) + vx * ddx;
            }
          }
        }
      },
      threads);
  return out;
}

}  // namespace fbsde
