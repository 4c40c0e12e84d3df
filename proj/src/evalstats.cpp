#include "xqcfd/evalstats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace xqcfd {

double iqm(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("iqm: empty input");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::size_t trim = sorted.size() / 4;
  double sum = 0.0;
  std::size_t kept = sorted.size() - 2 * trim;
  for (std::size_t i = trim; i < sorted.size() - trim; ++i) sum += sorted[i];
  return sum / static_cast<double>(kept);
}

namespace {

// Nearest-rank percentile of a sorted sample.
double nearest_rank(const std::vector<double>& sorted, double pct) {
  if (pct <= 0.0) return sorted.front();
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(pct / 100.0 * static_cast<double>(sorted.size())));
  rank = std::min(std::max<std::size_t>(rank, 1), sorted.size());
  return sorted[rank - 1];
}

}  // namespace

BootstrapBands stratified_bootstrap_ci(const RunMatrix& matrix, int resamples, double lo_pct,
                                       double hi_pct, Rng& rng) {
  if (matrix.seeds == 0 || matrix.points == 0) {
    throw std::invalid_argument("bootstrap: empty matrix");
  }
  if (matrix.values.size() != matrix.seeds * matrix.points) {
    throw std::invalid_argument("bootstrap: ragged matrix");
  }
  if (resamples < 1) throw std::invalid_argument("bootstrap: need at least one resample");
  if (!(lo_pct >= 0.0 && lo_pct < hi_pct && hi_pct <= 100.0)) {
    throw std::invalid_argument("bootstrap: bad percentile range");
  }

  BootstrapBands out;
  out.point_iqm.resize(matrix.points);
  out.lo.resize(matrix.points);
  out.hi.resize(matrix.points);

  std::vector<double> column(matrix.seeds);
  for (std::size_t p = 0; p < matrix.points; ++p) {
    for (std::size_t s = 0; s < matrix.seeds; ++s) column[s] = matrix.at(s, p);
    out.point_iqm[p] = iqm(column);
  }
  if (matrix.seeds == 1) {
    std::fprintf(stderr,
                 "stratified_bootstrap_ci: single seed, confidence band degenerates to the "
                 "point estimate\n");
    out.lo = out.point_iqm;
    out.hi = out.point_iqm;
    out.degenerate = true;
    return out;
  }

  std::vector<double> stats(static_cast<std::size_t>(resamples));
  std::vector<double> resample(matrix.seeds);
  for (std::size_t p = 0; p < matrix.points; ++p) {
    for (std::size_t s = 0; s < matrix.seeds; ++s) column[s] = matrix.at(s, p);
    for (int r = 0; r < resamples; ++r) {
      for (std::size_t s = 0; s < matrix.seeds; ++s) {
        resample[s] = column[rng.uniform_index(matrix.seeds)];
      }
      stats[static_cast<std::size_t>(r)] = iqm(resample);
    }
    std::sort(stats.begin(), stats.end());
    out.lo[p] = nearest_rank(stats, lo_pct);
    out.hi[p] = nearest_rank(stats, hi_pct);
  }
  return out;
}

}  // namespace xqcfd
