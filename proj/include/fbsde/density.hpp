#pragma once

#include "fbsde/pde.hpp"
#include "fbsde/stats.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fbsde {

enum class DensityEstimator { kde, representation };

struct DensityEstimate {
  std::vector<double> x;        ///< probe grid
  std::vector<double> density;
  std::vector<double> se;       ///< bootstrap standard error (KDE only)
  double bandwidth = 0.0;
  std::size_t n_samples = 0;
  DensityEstimator estimator = DensityEstimator::kde;

  /// Trapezoid mass over the probe grid.
  double mass() const;
};

struct KdeConfig {
  int probes = 512;
  double bandwidth = 0.0;    ///< <= 0: Silverman's rule
  int bootstrap = 20;        ///< resamples for the standard error; 0 disables
  std::uint64_t seed = 0x5eed;
  std::size_t min_samples = 1000;
  /// Optional probe grid; default spans the sample range +- 3 bandwidths.
  std::vector<double> probe_grid;
};

/// 0.9 min(sd, IQR / 1.34) n^{-1/5}.
double silverman_bandwidth(std::span<const double> samples);

/// Gaussian KDE on linearly binned samples (bin width <= bandwidth / 20).
/// Throws TooFewSamples below cfg.min_samples and Degenerate when the
/// bandwidth collapses to zero.
DensityEstimate kde(std::span<const double> samples, const KdeConfig& cfg = {});

struct TailProbe {
  double x = 0.0;
  double bound = 0.0;
  double empirical = 0.0;
  double se = 0.0;
  bool upper = true;  ///< P(F >= x) when true, P(F <= x) otherwise
  bool violated = false;
};

struct TailReport {
  std::vector<TailProbe> probes;
  int violations = 0;
  double violation_fraction() const {
    return probes.empty() ? 0.0 : static_cast<double>(violations) / static_cast<double>(probes.size());
  }
};

/// Empirical two-sided tails at mean +- k sqrt(L), k = 0.5 .. 4 step 0.5,
/// against exp(-k^2 / 2); flagged beyond 3 binomial standard errors.
TailReport tail_check(std::span<const double> samples, double L, double mean);

/// Constants that built a pair (l, L), kept for the report.
struct BoundConstants {
  double t = 0.0;
  double K = 0.0;
  double Lambda = 1.0;   ///< max(1, sup sigma) on the occupied region
  double lambda = 1.0;   ///< inf sigma on the occupied region
  double Upsilon = 0.0;  ///< sup of the relevant field derivative (Y, Z)
  double alpha = 0.0;    ///< inf of its modulus (alpha(t) or omega(t))
  std::string rule = "C(Lambda)=Lambda^2, C(Lambda,lambda)=lambda^2/Lambda^2";
};

struct BoundReport {
  double l = 0.0;
  double L = 0.0;
  double mean = 0.0;
  double abs_dev = 0.0;  ///< sample E|F - EF|
  DensityEstimate kde;
  std::vector<double> lower, upper;
  int resolvable = 0;  ///< probes where 3 SE < KDE
  int violations = 0;
  double violation_fraction = 0.0;  ///< over resolvable probes
  TailReport tails;
  BoundConstants constants;
};

/// Envelopes E|F-EF|/(2L) exp(-(x-EF)^2/(2l)) <= rho <= E|F-EF|/(2l) exp(-(x-EF)^2/(2L))
/// against the KDE with relative slack eta = 3 SE / KDE; probes where eta >= 1
/// cannot be resolved and are left out.
BoundReport gaussian_sandwich_check(std::span<const double> samples, double l, double L,
                                    const KdeConfig& cfg = {});

/// Per-time range of an ensemble; paths visit no other states.
struct OccupiedRegion {
  TimeGrid time;
  std::vector<double> lo, hi;

  static OccupiedRegion of(const Matrix& X, const TimeGrid& time);
  /// Widens by another region on the same grid.
  void merge(const OccupiedRegion& other);
};

/// Forward component at time index m: l = (lambda/Lambda)^2 t e^{-2Kt},
/// L = Lambda^2 t e^{2Kt}, K = sup |exponent rate of D_sX| on the region up to t.
BoundReport density_bounds_X(std::span<const double> X_t, int m, const OccupiedRegion& region,
                             const DecouplingField& field, const ModelInstance& model,
                             const KdeConfig& cfg = {});

/// Backward component with alpha(t), Upsilon = inf, sup |v_x(t, .)| on the
/// occupied interval. Throws Degenerate when v_x vanishes or changes sign there.
BoundReport density_bounds_Y(std::span<const double> Y_t, int m, const OccupiedRegion& region,
                             const DecouplingField& field, const ModelInstance& model,
                             const KdeConfig& cfg = {});

/// Control component with omega(t), Upsilon^(1) = inf, sup |sigma v_xx + sigma_x v_x|.
BoundReport density_bounds_Z(std::span<const double> Z_t, int m, const OccupiedRegion& region,
                             const DecouplingField& field, const ModelInstance& model,
                             const KdeConfig& cfg = {});

/// Per-path inputs of the Skorohod-integral density formula for F.
struct SkorohodInputs {
  std::vector<double> F;
  std::vector<double> W_T;
  std::vector<double> gamma;   ///< int_0^T D_sF ds
  std::vector<double> second;  ///< int int D_sD_uF du ds (empty: not supplied)
};

/// Builds gamma and second from DF (N x S) and DDF (N*S*S, row-major per
/// path, may be empty) on an s-grid of spacing ds.
SkorohodInputs skorohod_inputs(std::span<const double> F, std::span<const double> W_T,
                               const Matrix& DF, std::span<const double> DDF, double ds);

struct SkorohodConfig {
  int bins = 50;
  int probes = 1000;
};

struct SkorohodDensity {
  DensityEstimate density;
  std::vector<double> w_nodes;   ///< bin centroids of F
  std::vector<double> w_values;  ///< E[delta | F in bin]
  double anchor = 0.0;           ///< sample median
  double w(double z) const;      ///< linear between nodes, extended linearly
};

/// c = 1/gamma, delta = c W_T + c^2 second, w(z) = E[delta | F = z] by
/// equal-count bins, rho ~ exp(-int_{anchor}^x w) normalized on the sample range.
SkorohodDensity skorohod_density_representation(const SkorohodInputs& in,
                                                const SkorohodConfig& cfg = {});

/// sup |rho(x + k dx) - rho(x)| / (k dx)^theta over k = 1, 2, 4, 8 (reported only).
std::vector<double> holder_modulus(const DensityEstimate& d, double theta);

}  // namespace fbsde
