#pragma once

#include "fbsde/pde.hpp"
#include "fbsde/sde.hpp"

#include <utility>
#include <vector>

namespace fbsde {

/// Drift equal to `low` left of R and `high` right of it, joined over
/// [R - width, R + width] by a theta-Hoelder ramp; width = 0 gives the step.
GridFunction two_level_drift(const SpaceTimeGrid& grid, double low, double high, double R,
                             double width = 0.0, double theta = 1.0);

struct ZvonkinConfig {
  double mu_initial = 1.0;
  int max_doublings = 20;
  double bisection_tolerance = 1e-12;
  SolverConfig solver;
};

/// Psi = id + U with U from the backward Kolmogorov equation at the
/// selected mu; each time slice of Psi is increasing since 1 + DU >= 1/2.
struct ZvonkinTransform {
  SpaceTimeGrid grid;
  double mu = 1.0;
  int doublings = 0;
  double sup_DU = 0.0;
  double sup_U = 0.0;
  double bisection_tolerance = 1e-12;
  GridFunction U, DU;
  std::vector<std::pair<double, double>> search;  ///< (mu, sup|DU|) per attempt

  bool identity() const { return sup_U == 0.0; }
  double psi(double t, double x) const { return identity() ? x : x + U(t, x); }
  double dpsi(double t, double x) const { return 1.0 + DU(t, x); }
  double psi_inverse(double t, double zeta) const;
  /// sup over grid nodes of |Psi^{-1}(t, Psi(t, x)) - x|.
  double round_trip_error() const;
};

/// Doubles mu from cfg.mu_initial until sup|DU| <= 1/2; throws MuSearchFailed.
ZvonkinTransform build_transform(const GridFunction& b_tilde, const DiffusionFn& sigma,
                                 const ZvonkinConfig& cfg = {});

struct TransformedCoefficients {
  GridFunction b1;      ///< mu U(t, Psi^{-1}(t, zeta)) on the zeta grid
  GridFunction sigma1;  ///< (1 + DU) sigma at (t, Psi^{-1}(t, zeta))
  GridFunction b1_x, sigma1_x;
  double min_sigma1_sq = 0.0;
  double lambda = 0.0;
  bool quarter_bound = true;  ///< min sigma1^2 >= lambda / 4, from |DU| <= 1/2
  bool half_bound = true;     ///< min sigma1^2 >= lambda / 2, as printed
  bool identity = false;
  DiffusionFn sigma;  ///< original diffusion (identity transforms pass it through)

  DriftFn drift() const;
  DiffusionFn diffusion() const;
};

/// Tabulates b1 and sigma1; throws DegeneracyDetected below lambda / 4.
TransformedCoefficients transformed_coefficients(const ZvonkinTransform& transform,
                                                 const DiffusionFn& sigma, double lambda);

struct CorrespondenceConfig {
  int checkpoints = 64;  ///< times at which |X - Psi^{-1}(t, Xtilde)| is measured
  int noise_substeps = 1;
  int threads = 0;
};

struct CorrespondenceReport {
  std::vector<double> times;
  std::vector<double> rms;  ///< over paths, per checkpoint
  double sup_rms = 0.0;
  double ks = 0.0;
  double ks_critical = 0.0;
  bool ks_pass = true;
  double mu = 0.0;
  double sup_DU = 0.0;
  ExitStats exits;
};

/// Simulates X (drift b~, diffusion sigma) and Xtilde (b1, sigma1) on shared
/// noise and compares X_t with Psi^{-1}(t, Xtilde_t).
CorrespondenceReport correspondence_check(const GridFunction& b_tilde, const DiffusionFn& sigma,
                                          const ZvonkinTransform& transform,
                                          const TransformedCoefficients& coefficients, double x0,
                                          const TimeGrid& time, std::size_t n_paths,
                                          std::uint64_t seed, const CorrespondenceConfig& cfg = {});

struct DensityTransferReport {
  double t = 0.0;
  double max_relative_deviation = 0.0;
  int probes = 0;
};

/// KDE of X_t against (1 + DU(t, x)) * KDE_{Xtilde_t}(Psi(t, x)) on the
/// central 98% of X_t.
DensityTransferReport density_transfer_check(const GridFunction& b_tilde, const DiffusionFn& sigma,
                                             const ZvonkinTransform& transform,
                                             const TransformedCoefficients& coefficients, double x0,
                                             const TimeGrid& time, int m, std::size_t n_paths,
                                             std::uint64_t seed, int threads = 0);

struct FlowRouteReport {
  double mean_relative_gap = 0.0;
  double max_relative_gap = 0.0;
  std::size_t paths = 0;
};

/// D_0X_T through the transformed SDE against the direct exponential formula
/// (constant sigma only); reported, not asserted.
FlowRouteReport flow_route_cross_check(const GridFunction& b_tilde, double sigma,
                                       const ZvonkinTransform& transform,
                                       const TransformedCoefficients& coefficients, double x0,
                                       const TimeGrid& time, std::size_t n_paths, std::uint64_t seed,
                                       int threads = 0);

}  // namespace fbsde
