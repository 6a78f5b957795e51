#include "fbsde/feynman_kac.hpp"

#include "fbsde/parallel.hpp"

#include <cmath>
#include <limits>

namespace fbsde {

void check_compatible(const DecouplingField& field, const TimeGrid& time) {
  const auto& ft = field.grid.time;
  const double slack = 1e-12 * std::max(1.0, std::abs(ft.T));
  require(std::abs(ft.T - time.T) <= slack && time.t0 >= ft.t0 - slack, Errc::grid_mismatch,
          "path time grid must end at the field horizon and start inside its window");
}

void reconstruct_path(const DecouplingField& field, const DiffusionFn& sigma, const TimeGrid& time,
                      std::span<const double> X, std::span<double> Y, std::span<double> Z) {
  for (int m = 0; m <= time.steps; ++m) {
    const auto k = static_cast<std::size_t>(m);
    const double t = time.time(m);
    Y[k] = field.v_fn(t, X[k]);
    const double s = sigma ? sigma(t, field.grid.space.clamp(X[k])) : 1.0;
    Z[k] = s * field.v_x_fn(t, X[k]);
  }
}

TripleEnsemble reconstruct_triple(const DecouplingField& field, const PathEnsemble& ensemble,
                                  const DiffusionFn& sigma, int threads) {
  check_compatible(field, ensemble.time);
  TripleEnsemble tr;
  tr.time = ensemble.time;
  tr.X = ensemble.X;
  tr.dW = ensemble.dW;
  tr.seed = ensemble.seed;
  tr.Y.resize(tr.X.rows(), tr.X.cols());
  tr.Z.resize(tr.X.rows(), tr.X.cols());
  const auto cols = static_cast<std::size_t>(tr.X.cols());
  parallel_for(
      ensemble.paths(),
      [&](std::size_t p) {
        const auto r = static_cast<Eigen::Index>(p);
        reconstruct_path(field, sigma, tr.time, {tr.X.row(r).data(), cols},
                         {tr.Y.row(r).data(), cols}, {tr.Z.row(r).data(), cols});
      },
      threads);
  return tr;
}

SimulationSpec forward_spec(const ModelInstance& model, const DecouplingField& field,
                            const TimeGrid& time) {
  SimulationSpec spec;
  spec.x0 = model.x0;
  spec.time = time;
  spec.window = field.grid.space;
  const auto& c = model.coefficients;
  // b~ is evaluated from the field rather than tabulated so that
  // discontinuities in b stay sharp between grid nodes.
  if (c.drift_state_only) {
    spec.drift = [b = c.drift](double t, double x) { return b(t, x, 0.0, 0.0); };
  } else {
    spec.drift = [&field, b = c.drift](double t, double x) {
      return b(t, x, field.v_fn(t, x), field.v_x_fn(t, x));
    };
  }
  if (!(c.constant_diffusion && c.diffusion(time.t0, model.x0) == 1.0)) spec.sigma = c.diffusion;
  return spec;
}

double path_residual(const ModelInstance& model, const TimeGrid& time, std::span<const double> X,
                     std::span<const double> Y, std::span<const double> Z,
                     std::span<const double> dW) {
  const auto& c = model.coefficients;
  const double dt = time.dt();
  double drift_sum = 0.0, ito_sum = 0.0;
  for (int m = 0; m < time.steps; ++m) {
    const auto k = static_cast<std::size_t>(m);
    const double t = time.time(m);
    const double s = c.diffusion(t, X[k]);
    drift_sum += c.driver(t, X[k], Y[k], Z[k] / s) * dt;
    ito_sum += Z[k] * dW[k];
  }
  const auto M = static_cast<std::size_t>(time.steps);
  return Y[0] - c.terminal(X[M]) - drift_sum + ito_sum;
}

ResidualStats bsde_residual(const TripleEnsemble& triple, const ModelInstance& model) {
  const auto N = triple.paths();
  const auto cols = static_cast<std::size_t>(triple.X.cols());
  std::vector<double> r(N);
  parallel_for(N, [&](std::size_t p) {
    const auto i = static_cast<Eigen::Index>(p);
    r[p] = path_residual(model, triple.time, {triple.X.row(i).data(), cols},
                         {triple.Y.row(i).data(), cols}, {triple.Z.row(i).data(), cols},
                         {triple.dW.row(i).data(), cols - 1});
  });
  ResidualStats s;
  for (double x : r) {
    s.mean_abs += std::abs(x);
    s.mean += x;
    s.sup_abs = std::max(s.sup_abs, std::abs(x));
  }
  if (N > 0) {
    s.mean_abs /= static_cast<double>(N);
    s.mean /= static_cast<double>(N);
  }
  return s;
}

ComonotonicityReport comonotonicity_check(const ModelInstance& model1,
                                          const DecouplingField& field1,
                                          const ModelInstance& model2,
                                          const DecouplingField& field2, const TimeGrid& time,
                                          std::size_t n_paths, std::uint64_t seed,
                                          double tolerance, int threads) {
  check_compatible(field1, time);
  check_compatible(field2, time);
  const SimulationSpec spec1 = forward_spec(model1, field1, time);
  const SimulationSpec spec2 = forward_spec(model2, field2, time);
  const auto M = static_cast<std::size_t>(time.steps);
  const double dt = time.dt();

  struct PathStats {
    double min_p, max_p, min_z1, min_z2;
    std::size_t neg, pos;
  };
  std::vector<PathStats> per_path(n_paths);
  parallel_for(
      n_paths,
      [&](std::size_t p) {
        std::vector<double> dW(M), X1(M + 1), X2(M + 1), Y(M + 1), Z1(M + 1), Z2(M + 1);
        brownian_increments(seed, p, dt, 1, dW);
        euler_path(spec1, dW, X1);
        euler_path(spec2, dW, X2);
        reconstruct_path(field1, spec1.sigma, time, X1, Y, Z1);
        reconstruct_path(field2, spec2.sigma, time, X2, Y, Z2);
        PathStats s{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                    std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                    0, 0};
        for (std::size_t m = 0; m <= M; ++m) {
          const double prod = Z1[m] * Z2[m];
          s.min_p = std::min(s.min_p, prod);
          s.max_p = std::max(s.max_p, prod);
          s.min_z1 = std::min(s.min_z1, Z1[m]);
          s.min_z2 = std::min(s.min_z2, Z2[m]);
          if (prod < -tolerance) ++s.neg;
          if (prod > tolerance) ++s.pos;
        }
        per_path[p] = s;
      },
      threads);

  ComonotonicityReport rep;
  rep.tolerance = tolerance;
  rep.n_paths = n_paths;
  rep.steps = time.steps;
  rep.min_product = rep.min_z1 = rep.min_z2 = std::numeric_limits<double>::infinity();
  rep.max_product = -std::numeric_limits<double>::infinity();
  std::size_t neg = 0, pos = 0;
  for (const auto& s : per_path) {
    rep.min_product = std::min(rep.min_product, s.min_p);
    rep.max_product = std::max(rep.max_product, s.max_p);
    rep.min_z1 = std::min(rep.min_z1, s.min_z1);
    rep.min_z2 = std::min(rep.min_z2, s.min_z2);
    neg += s.neg;
    pos += s.pos;
  }
  const double total = static_cast<double>(n_paths) * static_cast<double>(M + 1);
  rep.fraction_negative = static_cast<double>(neg) / total;
  rep.fraction_positive = static_cast<double>(pos) / total;
  return rep;
}

ComonotonicityReport comonotonicity_check(const ModelInstance& model1,
                                          const ModelInstance& model2, const SpaceTimeGrid& grid,
                                          std::size_t n_paths, std::uint64_t seed,
                                          const SolverConfig& cfg, double tolerance, int threads) {
  const auto f1 = solve_decoupling_field(model1, grid, cfg);
  const auto f2 = solve_decoupling_field(model2, grid, cfg);
  return comonotonicity_check(model1, f1, model2, f2, grid.time, n_paths, seed, tolerance, threads);
}

ComparisonReport comparison_check(const DecouplingField& field1, const DecouplingField& field2,
                                  double tolerance) {
  require(field1.v.rows() == field2.v.rows() && field1.v.cols() == field2.v.cols(),
          Errc::grid_mismatch, "comparison needs fields on one grid");
  ComparisonReport rep;
  rep.tolerance = tolerance;
  const Matrix diff = field1.v - field2.v;
  rep.max_violation = diff.maxCoeff();
  const auto ok = (diff.array() <= tolerance).count();
  rep.fraction = static_cast<double>(ok) / static_cast<double>(diff.size());
  return rep;
}

ComparisonReport comparison_check(const ModelInstance& model1, const ModelInstance& model2,
                                  const SpaceTimeGrid& grid, const SolverConfig& cfg,
                                  double tolerance) {
  return comparison_check(solve_decoupling_field(model1, grid, cfg),
                          solve_decoupling_field(model2, grid, cfg), tolerance);
}

}  // namespace fbsde
