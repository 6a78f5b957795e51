#pragma once

#include "fbsde/grid.hpp"
#include "fbsde/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace fbsde {

using DriftFn = std::function<double(double t, double x)>;

/// Forward dynamics dX = drift(t,X) dt + sigma(t,X) dW on a uniform time grid.
struct SimulationSpec {
  DriftFn drift;      ///< empty: zero drift
  DiffusionFn sigma;  ///< empty: sigma = 1
  double x0 = 0.0;
  TimeGrid time;
  /// Coefficient lookups clamp to this window; exits are counted against it.
  std::optional<SpaceGrid> window;
  /// Each step's increment is the sum of this many finer normal draws, so
  /// runs with (steps, k) and (k*steps, 1) share one Brownian path.
  int noise_substeps = 1;

  bool pure_brownian() const { return !drift && !sigma; }
};

struct ExitStats {
  std::size_t paths_exited = 0;
  double fraction = 0.0;
};

/// Column-wise moments of the Brownian increments (a warning, not a failure).
struct NoiseSanity {
  double max_mean_z = 0.0;      ///< max_m |mean dW_m| / sqrt(dt / N)
  double max_variance_z = 0.0;  ///< max_m |var dW_m - dt| / (dt sqrt(2 / N))
  int flagged_columns = 0;      ///< columns beyond 5 standard errors
  bool ok() const { return flagged_columns == 0; }
};

struct PathEnsemble {
  TimeGrid time;
  Matrix X;   ///< N x (M+1)
  Matrix dW;  ///< N x M
  std::uint64_t seed = 0;
  double x0 = 0.0;
  bool brownian = false;
  const char* scheme = "euler-maruyama";
  ExitStats exits;
  NoiseSanity sanity;

  std::size_t paths() const { return static_cast<std::size_t>(X.rows()); }
};

/// One path handed to a streaming visitor; spans are only valid during the call.
struct PathView {
  std::size_t index;
  std::span<const double> X;   ///< M+1 values
  std::span<const double> dW;  ///< M values
};

struct StreamSummary {
  ExitStats exits;
  NoiseSanity sanity;
};

/// Fills `dW` (length M) with the increments of path `path`.
void brownian_increments(std::uint64_t seed, std::size_t path, double dt, int substeps,
                         std::span<double> dW);

/// Euler-Maruyama for one path given its increments.
void euler_path(const SimulationSpec& spec, std::span<const double> dW, std::span<double> X);

/// Generates paths one at a time and hands each to `visit`, in parallel.
/// Visitors must only write to slots owned by `view.index`.
StreamSummary stream_paths(const SimulationSpec& spec, std::size_t n_paths, std::uint64_t seed,
                           const std::function<void(const PathView&)>& visit, int threads = 0);

PathEnsemble simulate_forward(const SimulationSpec& spec, std::size_t n_paths, std::uint64_t seed,
                              int threads = 0);

/// Reversed Brownian path What_m = W_{M-m} with the increments of
/// B_t = What_t - What_0 + int_0^t (What_s - x0) / (T - s) ds (left-point sums).
struct ReversedEnsemble {
  TimeGrid time;
  double x0 = 0.0;
  Matrix W_hat;  ///< N x (M+1)
  Matrix dB;     ///< N x M
  /// Sample mean of |What_{T-dt} - x0|; times sup|phi| it bounds the dropped
  /// last kernel interval.
  double last_kernel_mean = 0.0;
};

void reverse_path(std::span<const double> X, double x0, double T, double dt,
                  std::span<double> W_hat, std::span<double> dB);

ReversedEnsemble time_reversed_paths(const PathEnsemble& ensemble);

/// log of exp(sum drift dW - 1/2 sum drift^2 dt) along one path.
double girsanov_log_weight(const TimeGrid& time, std::span<const double> X,
                           std::span<const double> dW, const DriftFn& drift);

Vector girsanov_weight(const PathEnsemble& ensemble, const DriftFn& drift, int threads = 0);

/// Deterministic reduction helper: splits [0, n) into fixed chunks, runs
/// `fn(chunk, begin, end)` in parallel, and leaves the combining to the
/// caller in chunk order.
constexpr std::size_t kReductionChunk = 4096;
void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn,
                     int threads = 0);
inline std::size_t chunk_count(std::size_t n) { return (n + kReductionChunk - 1) / kReductionChunk; }

}  // namespace fbsde
