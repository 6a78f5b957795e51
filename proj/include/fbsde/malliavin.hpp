#pragma once

#include "fbsde/feynman_kac.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace fbsde {

enum class DriftGradientRoute {
  automatic,        ///< chain rule when b_x, b_y, b_z exist, else grid differencing for constant sigma
  chain_rule,       ///< b_x + b_y v_x + b_z v_xx
  grid_difference,  ///< central differences of the tabulated b~
};

/// Everything the exponent of D_sX_t needs, tabulated once per field.
struct ForwardDerivativeData {
  GridFunction b_tilde;
  GridFunction b_tilde_x;
  bool unit_diffusion = true;
  bool constant_diffusion = true;
  DiffusionFn sigma, sigma_x, sigma_xx, sigma_t;

  /// d_x b~ - (b~ sigma_x + sigma_t) / sigma - sigma sigma_xx / 2 at (t, x).
  double exponent_rate(double t, double x) const;
  double diffusion(double t, double x) const { return unit_diffusion ? 1.0 : sigma(t, x); }
};

ForwardDerivativeData prepare_forward_derivatives(const DecouplingField& field,
                                                  const ModelInstance& model,
                                                  DriftGradientRoute route = DriftGradientRoute::automatic);

/// First-order derivatives stored compactly: D_sX_t = sig(t) exp(A(t) - A(s)).
/// DY and DZ scale DX by per-node factors.
struct MalliavinSample {
  TimeGrid time;
  Matrix A;       ///< N x (M+1) cumulative exponent, A(.,0) = 0
  Matrix sig;     ///< sigma(t_m, X_m)
  Matrix dy;      ///< v_x(t_m, X_m)            (after malliavin_backward)
  Matrix dz;      ///< (sigma v_xx + sigma_x v_x)(t_m, X_m)

  std::size_t paths() const { return static_cast<std::size_t>(A.rows()); }
  double DX(Eigen::Index p, int s, int t) const {
    return s > t ? 0.0 : sig(p, t) * std::exp(A(p, t) - A(p, s));
  }
  double DY(Eigen::Index p, int s, int t) const { return dy(p, t) * DX(p, s, t); }
  double DZ(Eigen::Index p, int s, int t) const { return dz(p, t) * DX(p, s, t); }
  /// Row p of D_sF for F = X_{t_m}, s = t_0 .. t_{m-1} with the given stride.
  Matrix DX_at(int m, int stride = 1) const;
};

/// Left-point quadrature of the exponent along one path.
void malliavin_exponent_path(const ForwardDerivativeData& data, const TimeGrid& time,
                             std::span<const double> X, std::span<double> A,
                             std::span<double> sig);

MalliavinSample malliavin_forward(const PathEnsemble& ensemble, const DecouplingField& field,
                                  const ModelInstance& model,
                                  DriftGradientRoute route = DriftGradientRoute::automatic,
                                  int threads = 0);

/// Fills dy, dz from the field along the triple's paths.
void malliavin_backward(const TripleEnsemble& triple, const DecouplingField& field,
                        const ModelInstance& model, MalliavinSample& sample, int threads = 0);

/// Common-noise central difference (g(X_t(x0+h)) - g(X_t(x0-h))) / 2h per path
/// at time index m; g = identity when empty.
Vector finite_difference_flow(const SimulationSpec& spec, double h, std::size_t n_paths,
                              std::uint64_t seed, int m,
                              const std::function<double(double t, double x)>& g = {},
                              int threads = 0);

struct CovarianceBoundsConfig {
  int bins = 50;
  int min_paths_per_bin = 5;
  std::optional<double> l;  ///< configured bounds for the violation count
  std::optional<double> L;
};

struct CovarianceBoundsReport {
  double l_hat = 0.0;  ///< 1st percentile of the per-path integral
  double L_hat = 0.0;  ///< 99th percentile
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double violation_fraction = 0.0;
  int bins = 0;
  std::vector<double> per_path;
};

/// int D_sF E[D_sF | X_s] ds with the conditional expectation regressed on X_s
/// by equal-count bins. DF and X_s are N x S; column i is s_i, weight ds.
CovarianceBoundsReport covariance_bounds(const Matrix& DF, const Matrix& X_s, double ds,
                                         const CovarianceBoundsConfig& cfg = {});

/// Second derivatives on a coarse (s', s, t) sub-grid for unit diffusion.
struct SecondMalliavinSample {
  std::vector<int> coarse;  ///< fine indices of the coarse nodes
  std::size_t n_paths = 0;
  /// Flattened per path: index (a, b, c) over coarse nodes, a, b <= c.
  std::vector<double> DDX, DDY;
  std::vector<double> DX;  ///< D_{s_b} X_{t_c}, index (b, c)
  std::vector<double> vxx; ///< v_xx at coarse node c per path

  std::size_t nodes() const { return coarse.size(); }
  std::size_t index(std::size_t p, std::size_t a, std::size_t b, std::size_t c) const {
    const std::size_t K = coarse.size();
    return ((p * K + a) * K + b) * K + c;
  }
};

struct SecondMalliavinConfig {
  int stride = 8;
  DriftGradientRoute route = DriftGradientRoute::automatic;
};

SecondMalliavinSample second_malliavin(const PathEnsemble& ensemble, const DecouplingField& field,
                                       const ModelInstance& model,
                                       const SecondMalliavinConfig& cfg = {}, int threads = 0);

/// t-derivative of a tabulated function by one-sided differences in time.
GridFunction differentiate_t(const GridFunction& g);

}  // namespace fbsde
