#pragma once

#include "fbsde/common.hpp"

#include <span>
#include <vector>

namespace fbsde {

struct MeanSE {
  double mean = 0.0;
  double se = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

/// Sample mean, standard deviation and standard error (two-pass, in order).
MeanSE mean_se(std::span<const double> xs);

/// Linear-interpolated empirical quantile, q in [0, 1]; sorts a copy.
double quantile(std::span<const double> xs, double q);
/// Same on data the caller already sorted.
double quantile_sorted(std::span<const double> sorted, double q);

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_statistic(std::vector<double> a, std::vector<double> b);

/// Asymptotic 1% critical value 1.628 sqrt((n + m) / (n m)).
double ks_critical_1pct(std::size_t n, std::size_t m);

/// Equal-count bins on `keys`: bin k holds ranks [k n / bins, (k+1) n / bins).
/// Ties are broken by index so the assignment is deterministic.
struct EqualCountBins {
  std::vector<int> bin_of;      ///< per sample
  std::vector<double> lower;    ///< smallest key per bin
  std::vector<double> upper;    ///< largest key per bin
  std::vector<double> centroid; ///< mean key per bin
  std::vector<std::size_t> count;
  int bins() const { return static_cast<int>(count.size()); }
};

EqualCountBins equal_count_bins(std::span<const double> keys, int bins);

/// Per-bin means of `values` under the binning.
std::vector<double> bin_means(const EqualCountBins& b, std::span<const double> values);

}  // namespace fbsde
