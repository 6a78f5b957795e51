#include "fbsde/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fbsde {

MeanSE mean_se(std::span<const double> xs) {
  MeanSE out;
  out.n = xs.size();
  if (xs.empty()) return out;
  double acc = 0.0;
  for (double x : xs) acc += x;
  out.mean = acc / static_cast<double>(xs.size());
  if (xs.size() < 2) return out;
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  out.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  out.se = out.sd / std::sqrt(static_cast<double>(xs.size()));
  return out;
}

double quantile_sorted(std::span<const double> sorted, double q) {
  require(!sorted.empty(), Errc::invalid_argument, "quantile of an empty sample");
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

double quantile(std::span<const double> xs, double q) {
  std::vector<double> s(xs.begin(), xs.end());
  std::sort(s.begin(), s.end());
  return quantile_sorted(s, q);
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  require(!a.empty() && !b.empty(), Errc::invalid_argument, "KS needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double ks_critical_1pct(std::size_t n, std::size_t m) {
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  return 1.628 * std::sqrt((nn + mm) / (nn * mm));
}

EqualCountBins equal_count_bins(std::span<const double> keys, int bins) {
  const std::size_t n = keys.size();
  require(bins >= 1, Errc::invalid_argument, "need at least one bin");
  require(n >= static_cast<std::size_t>(bins), Errc::degenerate_bins,
          "fewer samples than bins");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return keys[a] < keys[b] || (keys[a] == keys[b] && a < b);
  });
  EqualCountBins out;
  out.bin_of.assign(n, 0);
  out.lower.assign(static_cast<std::size_t>(bins), 0.0);
  out.upper.assign(static_cast<std::size_t>(bins), 0.0);
  out.centroid.assign(static_cast<std::size_t>(bins), 0.0);
  out.count.assign(static_cast<std::size_t>(bins), 0);
  for (int k = 0; k < bins; ++k) {
    const std::size_t begin = static_cast<std::size_t>(k) * n / static_cast<std::size_t>(bins);
    const std::size_t end = static_cast<std::size_t>(k + 1) * n / static_cast<std::size_t>(bins);
    const auto kk = static_cast<std::size_t>(k);
    out.lower[kk] = keys[order[begin]];
    out.upper[kk] = keys[order[end - 1]];
    out.count[kk] = end - begin;
    double acc = 0.0;
    for (std::size_t r = begin; r < end; ++r) {
      out.bin_of[order[r]] = k;
      acc += keys[order[r]];
    }
    out.centroid[kk] = acc / static_cast<double>(end - begin);
  }
  return out;
}

std::vector<double> bin_means(const EqualCountBins& b, std::span<const double> values) {
  std::vector<double> sum(b.count.size(), 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) sum[static_cast<std::size_t>(b.bin_of[i])] += values[i];
  for (std::size_t k = 0; k < sum.size(); ++k) sum[k] /= static_cast<double>(b.count[k]);
  return sum;
}

}  // namespace fbsde
