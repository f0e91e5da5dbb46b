#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace nwbrl {

/// Interquartile mean. Sorted values are treated as unit-width cells on
/// [0, n); each is weighted by its overlap with [n/4, 3n/4], so sizes that
/// are not multiples of four trim fractionally at the boundary.
double iqm(std::vector<double> values);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Percentile bootstrap interval for the IQM.
Interval bootstrap_ci(const std::vector<double>& values, double level = 0.95,
                      int resamples = 2000, std::uint64_t seed = 0x5eedULL);

/// Linear-interpolation quantile of already sorted data, q in [0, 1].
double quantile_sorted(const std::vector<double>& sorted, double q);

}  // namespace nwbrl
