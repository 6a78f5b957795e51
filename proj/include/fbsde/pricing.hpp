#pragma once

#include "fbsde/density.hpp"
#include "fbsde/feynman_kac.hpp"
#include "fbsde/indifference.hpp"
#include "fbsde/malliavin.hpp"
#include "fbsde/pde.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fbsde {

namespace pricing {

/// f <= C (1 + |z|^2) with C = A/2 + A^2/(2 gamma), A = sup |alpha|.
double driver_growth_constant(double alpha_sup, double gamma);

}  // namespace pricing

/// Indifference price p = v - vhat and hedges on one grid. vhat solves the
/// claim equation with terminal -F, so the agent receives F and the price
/// identity reads V^F(t, nu - p, x) = V^0(t, nu, x).
struct PriceSurface {
  SpaceTimeGrid grid;
  Matrix p;
  Matrix delta_grad;   ///< -d_x p
  Matrix delta_proj;   ///< Pi_C(zhat - z), zhat = sigma vhat_x, z = sigma v_x
  Matrix pi_star;      ///< Pi_C(z + alpha/gamma) from the no-claim field
  Matrix pi_star_hat;  ///< same with zhat
  DecouplingField v_field, v_hat_field;
  double gamma = 1.0;
  double sigma = 1.0;
  pricing::ConstraintInterval C;
  /// sup over the grid of |delta_proj / sigma - delta_grad|.
  double hedge_gap = 0.0;
  /// Same with delta_proj taken without the 1/sigma factor.
  double hedge_gap_unscaled = 0.0;
};

/// Solves both fields (concurrently when threads > 1) and assembles the surface.
PriceSurface price_and_hedge(const PricingModelPair& models, const SpaceTimeGrid& grid,
                             const SolverConfig& cfg = {}, int threads = 0);

struct ValueFunctions {
  std::vector<double> nu;
  std::vector<Matrix> V0, VF;  ///< one (t, x) matrix per nu
  double residual = 0.0;       ///< sup |V^F(t, nu - p, x) - V^0(t, nu, x)|
};

/// V^0 = -exp(-gamma (nu - v)), V^F = -exp(-gamma (nu - vhat)).
ValueFunctions value_functions(const PriceSurface& surface, const std::vector<double>& nu);

struct RegimeSwitchingConfig {
  std::size_t n_paths = 20000;
  std::uint64_t seed = 1;
  int density_index = -1;  ///< time index for density bounds; < 0 means M/2
  SolverConfig solver;
  KdeConfig kde;
  int threads = 0;
};

/// Per slice, b~ + beta x must take the values k1 and k2 only.
struct SwitchingAudit {
  int max_distinct = 0;     ///< most distinct values seen on one slice
  int slices_two_valued = 0;
  int slices = 0;
  double max_off_level = 0.0;  ///< largest distance of b~ + beta x from {k1, k2}
  bool preserved = true;
};

struct RegimeSwitchingReport {
  ModelInstance model;
  DecouplingField field;
  TripleEnsemble triple;
  ResidualStats residual;
  SwitchingAudit switching;
  double mean_DX_T = 0.0;  ///< E[D_0 X_T]
  double mean_DY_m = 0.0;  ///< E[D_0 Y_{t_m}] at the density index
  int density_index = 0;
  std::optional<BoundReport> x_bounds, y_bounds;
  std::string x_bounds_error, y_bounds_error;
};

RegimeSwitchingReport regime_switching_experiment(const RegimeSwitchingParams& params, double T,
                                                  double x0, const SpaceTimeGrid& grid,
                                                  const RegimeSwitchingConfig& cfg = {});

}  // namespace fbsde
