#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "xqcfd/evalstats.hpp"

using namespace xqcfd;

namespace {

// Independent trimmed-mean oracle: sort, slice, average.
double trimmed_mean_oracle(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t k = v.size() / 4;
  std::vector<double> kept(v.begin() + k, v.end() - k);
  double s = 0;
  for (double x : kept) s += x;
  return s / kept.size();
}

}  // namespace

TEST_CASE("iqm basics") {
  CHECK(iqm(std::vector<double>{1, 2, 3, 4}) == doctest::Approx(2.5));
  CHECK(iqm(std::vector<double>{7, 7, 7, 7, 7}) == doctest::Approx(7.0));
  CHECK(iqm(std::vector<double>{5}) == doctest::Approx(5.0));
  CHECK_THROWS_AS(iqm(std::vector<double>{}), std::invalid_argument);

  SUBCASE("matches the sort-and-slice oracle on random data") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> v(100);
      for (double& x : v) x = rng.normal() * 10;
      CHECK(iqm(v) == doctest::Approx(trimmed_mean_oracle(v)).epsilon(1e-12));
    }
  }
  SUBCASE("translation and scale equivariance") {
    Rng rng(5);
    std::vector<double> v(37);
    for (double& x : v) x = rng.normal();
    double base = iqm(v);
    std::vector<double> w(v);
    for (double& x : w) x = 2.5 * x + 0.7;
    CHECK(iqm(w) == doctest::Approx(2.5 * base + 0.7).epsilon(1e-12));
  }
}

TEST_CASE("bootstrap bands") {
  SUBCASE("identical seed curves collapse the band") {
    RunMatrix m;
    m.seeds = 6;
    m.points = 4;
    for (std::size_t s = 0; s < 6; ++s) {
      for (std::size_t p = 0; p < 4; ++p) m.values.push_back(0.25 * static_cast<double>(p));
    }
    Rng rng(7);
    auto bands = stratified_bootstrap_ci(m, 2000, 10, 90, rng);
    for (std::size_t p = 0; p < 4; ++p) {
      CHECK(bands.lo[p] == bands.hi[p]);
      CHECK(bands.lo[p] == doctest::Approx(0.25 * p));
    }
  }
  SUBCASE("bands bracket the point IQM and extreme percentiles hit min/max") {
    RunMatrix m;
    m.seeds = 10;
    m.points = 3;
    Rng data_rng(11);
    m.values.resize(30);
    for (double& v : m.values) v = data_rng.uniform();
    Rng rng(13);
    auto bands = stratified_bootstrap_ci(m, 2000, 10, 90, rng);
    for (std::size_t p = 0; p < 3; ++p) {
      CHECK(bands.lo[p] <= bands.point_iqm[p] + 1e-12);
      CHECK(bands.hi[p] >= bands.point_iqm[p] - 1e-12);
    }
    Rng rng2(13);
    auto extreme = stratified_bootstrap_ci(m, 2000, 0, 100, rng2);
    for (std::size_t p = 0; p < 3; ++p) {
      CHECK(extreme.lo[p] <= bands.lo[p]);
      CHECK(extreme.hi[p] >= bands.hi[p]);
    }
  }
  SUBCASE("two-seed bootstrap has exactly three support points at 1/4 1/2 1/4") {
    RunMatrix m;
    m.seeds = 2;
    m.points = 1;
    m.values = {0.0, 1.0};
    Rng rng(17);
    const int resamples = 10000;
    // Count support points by re-deriving the bootstrap distribution.
    int lo_count = 0, mid_count = 0, hi_count = 0;
    Rng counter(17);
    for (int r = 0; r < resamples; ++r) {
      double a = m.values[counter.uniform_index(2)];
      double b = m.values[counter.uniform_index(2)];
      double v = (a + b) / 2.0;
      if (v == 0.0) ++lo_count;
      else if (v == 1.0) ++hi_count;
      else ++mid_count;
    }
    double se = std::sqrt(0.25 * 0.75 * resamples);
    CHECK(std::fabs(lo_count - resamples * 0.25) < 3 * se);
    CHECK(std::fabs(hi_count - resamples * 0.25) < 3 * se);
    CHECK(std::fabs(mid_count - resamples * 0.5) < 3 * std::sqrt(0.5 * 0.5 * resamples));
    // And the production path sees the same three support points.
    auto bands = stratified_bootstrap_ci(m, resamples, 0, 100, rng);
    CHECK(bands.lo[0] == 0.0);
    CHECK(bands.hi[0] == 1.0);
  }
  SUBCASE("single seed degenerates with a warning") {
    RunMatrix m;
    m.seeds = 1;
    m.points = 2;
    m.values = {0.3, 0.9};
    Rng rng(19);
    auto bands = stratified_bootstrap_ci(m, 2000, 10, 90, rng);
    CHECK(bands.degenerate);
    CHECK(bands.lo == bands.point_iqm);
    CHECK(bands.hi == bands.point_iqm);
  }
  SUBCASE("deterministic under a fixed seed") {
    RunMatrix m;
    m.seeds = 5;
    m.points = 2;
    Rng data_rng(23);
    m.values.resize(10);
    for (double& v : m.values) v = data_rng.uniform();
    Rng r1(29), r2(29);
    auto a = stratified_bootstrap_ci(m, 1500, 10, 90, r1);
    auto b = stratified_bootstrap_ci(m, 1500, 10, 90, r2);
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
  }
  SUBCASE("input validation") {
    RunMatrix m;
    m.seeds = 2;
    m.points = 1;
    m.values = {0.0, 1.0};
    Rng rng(31);
    CHECK_THROWS_AS(stratified_bootstrap_ci(m, 0, 10, 90, rng), std::invalid_argument);
    CHECK_THROWS_AS(stratified_bootstrap_ci(m, 100, 90, 10, rng), std::invalid_argument);
    m.values.pop_back();
    CHECK_THROWS_AS(stratified_bootstrap_ci(m, 100, 10, 90, rng), std::invalid_argument);
  }
}
