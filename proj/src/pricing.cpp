#include "fbsde/pricing.hpp"

#include "fbsde/common.hpp"
#include "fbsde/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <future>

namespace fbsde {

namespace pricing {

void ConstraintInterval::validate() const {
  require(!(lower > upper) && !std::isnan(lower) && !std::isnan(upper), Errc::invalid_interval,
          "constraint interval needs lower <= upper");
}

Projection project_onto_interval(double a, const ConstraintInterval& c) {
  const double p = std::clamp(a, c.lower, c.upper);
  return {p, std::abs(a - p)};
}

double indifference_driver(double z, double alpha, double gamma, const ConstraintInterval& c) {
  const double d = project_onto_interval(z + alpha / gamma, c).distance;
  return -0.5 * gamma * d * d + z * alpha + alpha * alpha / (2.0 * gamma);
}

double driver_growth_constant(double alpha_sup, double gamma) {
  return 0.5 * alpha_sup + alpha_sup * alpha_sup / (2.0 * gamma);
}

}  // namespace pricing

PriceSurface price_and_hedge(const PricingModelPair& models, const SpaceTimeGrid& grid,
                             const SolverConfig& cfg, int threads) {
  const auto& prm = models.params;
  PriceSurface s;
  s.grid = grid;
  s.gamma = prm.gamma;
  s.sigma = prm.sigma;
  s.C = prm.C;
  if ((threads <= 0 ? default_threads() : threads) > 1) {
    auto hat = std::async(std::launch::async,
                          [&] { return solve_decoupling_field(models.with_claim, grid, cfg); });
    s.v_field = solve_decoupling_field(models.no_claim, grid, cfg);
    s.v_hat_field = hat.get();
  } else {
    s.v_field = solve_decoupling_field(models.no_claim, grid, cfg);
    s.v_hat_field = solve_decoupling_field(models.with_claim, grid, cfg);
  }

  const auto& v = s.v_field;
  const auto& vh = s.v_hat_field;
  s.p = v.v - vh.v;
  const auto rows = s.p.rows(), cols = s.p.cols();
  s.delta_grad.resize(rows, cols);
  s.delta_proj.resize(rows, cols);
  s.pi_star.resize(rows, cols);
  s.pi_star_hat.resize(rows, cols);
  const double dx = grid.space.dx();
  for (Eigen::Index m = 0; m < rows; ++m) {
    const Vector row = s.p.row(m).transpose();
    s.delta_grad.row(m) = -first_difference<double>(row, dx).transpose();
    const double t = grid.time.time(static_cast<int>(m));
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double x = grid.space.x(static_cast<int>(j));
      const double a = prm.alpha(t, x) / prm.gamma;
      const double z = prm.sigma * v.v_x(m, j), zh = prm.sigma * vh.v_x(m, j);
      s.delta_proj(m, j) = pricing::project_onto_interval(zh - z, prm.C).point;
      s.pi_star(m, j) = pricing::project_onto_interval(z + a, prm.C).point;
      s.pi_star_hat(m, j) = pricing::project_onto_interval(zh + a, prm.C).point;
    }
  }
  s.hedge_gap = (s.delta_proj / prm.sigma - s.delta_grad).cwiseAbs().maxCoeff();
  s.hedge_gap_unscaled = (s.delta_proj - s.delta_grad).cwiseAbs().maxCoeff();
  return s;
}

ValueFunctions value_functions(const PriceSurface& s, const std::vector<double>& nu) {
  ValueFunctions out;
  out.nu = nu;
  const double g = s.gamma;
  const Matrix& v = s.v_field.v;
  const Matrix& vh = s.v_hat_field.v;
  for (double n : nu) {
    Matrix V0 = (-g * (n - v.array())).exp().matrix() * -1.0;
    Matrix VF = (-g * (n - vh.array())).exp().matrix() * -1.0;
    // V^F evaluated at nu - p
    const Matrix shifted = (-g * ((n - s.p.array()) - vh.array())).exp().matrix() * -1.0;
    out.residual = std::max(out.residual, (shifted - V0).cwiseAbs().maxCoeff());
    out.V0.push_back(std::move(V0));
    out.VF.push_back(std::move(VF));
  }
  return out;
}

namespace {

SwitchingAudit audit_switching(const DecouplingField& field, const ModelInstance& model,
                               const RegimeSwitchingParams& p) {
  const GridFunction bt = transformed_drift(field, model);
  const auto& g = field.grid;
  SwitchingAudit a;
  a.slices = g.time.nodes();
  for (int m = 0; m < g.time.nodes(); ++m) {
    std::vector<double> seen;
    for (int j = 0; j < g.space.nodes(); ++j) {
      const double k = bt.values()(m, j) + p.beta * g.space.x(j);
      a.max_off_level = std::max(a.max_off_level, std::min(std::abs(k - p.k1), std::abs(k - p.k2)));
      const bool known = std::any_of(seen.begin(), seen.end(),
                                     [k](double s) { return std::abs(s - k) <= 1e-9; });
      if (!known) seen.push_back(k);
    }
    a.max_distinct = std::max(a.max_distinct, static_cast<int>(seen.size()));
    if (seen.size() == 2) ++a.slices_two_valued;
  }
  a.preserved = a.max_distinct <= 2 && a.max_off_level <= 1e-9;
  return a;
}

}  // namespace

RegimeSwitchingReport regime_switching_experiment(const RegimeSwitchingParams& params, double T,
                                                  double x0, const SpaceTimeGrid& grid,
                                                  const RegimeSwitchingConfig& cfg) {
  RegimeSwitchingReport r;
  r.model = builtin_regime_switching(params, T, x0);
  r.field = solve_decoupling_field(r.model, grid, cfg.solver);
  r.switching = audit_switching(r.field, r.model, params);

  const auto paths =
      simulate_forward(forward_spec(r.model, r.field, grid.time), cfg.n_paths, cfg.seed, cfg.threads);
  r.triple = reconstruct_triple(r.field, paths, r.model.coefficients.diffusion, cfg.threads);
  r.residual = bsde_residual(r.triple, r.model);

  const int M = grid.time.steps;
  r.density_index = cfg.density_index < 0 ? M / 2 : std::min(cfg.density_index, M);
  const int m = r.density_index;
  auto ms = malliavin_forward(paths, r.field, r.model, DriftGradientRoute::automatic, cfg.threads);
  malliavin_backward(r.triple, r.field, r.model, ms, cfg.threads);
  double sx = 0.0, sy = 0.0;
  for (Eigen::Index p = 0; p < static_cast<Eigen::Index>(ms.paths()); ++p) {
    sx += ms.DX(p, 0, M);
    sy += ms.DY(p, 0, m);
  }
  r.mean_DX_T = sx / static_cast<double>(ms.paths());
  r.mean_DY_m = sy / static_cast<double>(ms.paths());

  const auto region = OccupiedRegion::of(paths.X, grid.time);
  const Vector Xm = paths.X.col(m), Ym = r.triple.Y.col(m);
  try {
    r.x_bounds = density_bounds_X(std::span(Xm.data(), static_cast<std::size_t>(Xm.size())), m,
                                  region, r.field, r.model, cfg.kde);
  } catch (const Error& e) {
    r.x_bounds_error = e.what();
  }
  try {
    r.y_bounds = density_bounds_Y(std::span(Ym.data(), static_cast<std::size_t>(Ym.size())), m,
                                  region, r.field, r.model, cfg.kde);
  } catch (const Error& e) {
    r.y_bounds_error = e.what();
  }
  return r;
}

}  // namespace fbsde
