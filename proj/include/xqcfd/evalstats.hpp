#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xqcfd/rng.hpp"

namespace xqcfd {

// Interquartile mean: drop the lowest and highest floor(n/4) values, average
// the rest.
double iqm(std::span<const double> values);

// Rectangular seeds x evaluation-points matrix of per-run scores.
struct RunMatrix {
  std::size_t seeds = 0;
  std::size_t points = 0;
  std::vector<double> values;  // row-major [seeds][points]

  double at(std::size_t seed, std::size_t point) const { return values[seed * points + point]; }
  std::span<const double> seed_row(std::size_t seed) const {
    return {values.data() + seed * points, points};
  }
};

struct BootstrapBands {
  std::vector<double> point_iqm;
  std::vector<double> lo;
  std::vector<double> hi;
  bool degenerate = false;  // single seed: bands collapse to the point value
};

// Stratified bootstrap percentile intervals per evaluation point: resample
// seeds with replacement, recompute the IQM, take nearest-rank percentiles of
// the bootstrap distribution. Deterministic under the given rng.
BootstrapBands stratified_bootstrap_ci(const RunMatrix& matrix, int resamples, double lo_pct,
                                       double hi_pct, Rng& rng);

}  // namespace xqcfd
