#include "nwbrl/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "nwbrl/error.hpp"
#include "nwbrl/random.hpp"

namespace nwbrl {

double iqm(std::vector<double> values) {
  require(!values.empty(), ErrorCode::EmptyInput, "iqm: empty input");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  const double lo = n / 4.0;
  const double hi = 3.0 * n / 4.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double a = std::max(lo, static_cast<double>(i));
    const double b = std::min(hi, static_cast<double>(i + 1));
    if (b > a) acc += (b - a) * values[i];
  }
  return acc / (hi - lo);
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  require(!sorted.empty(), ErrorCode::EmptyInput, "quantile: empty input");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto k = static_cast<std::size_t>(std::floor(pos));
  if (k + 1 >= sorted.size()) return sorted.back();
  const double w = pos - static_cast<double>(k);
  return sorted[k] + w * (sorted[k + 1] - sorted[k]);
}

Interval bootstrap_ci(const std::vector<double>& values, double level, int resamples,
                      std::uint64_t seed) {
  require(values.size() >= 2, ErrorCode::InsufficientData, "bootstrap_ci: need n >= 2");
  require(level > 0.0 && level < 1.0 && resamples >= 1, ErrorCode::InvalidArgument,
          "bootstrap_ci: bad level or resample count");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> stats(static_cast<std::size_t>(resamples));
  std::vector<double> draw(values.size());
  for (double& s : stats) {
    for (double& d : draw) d = values[pick(rng)];
    s = iqm(draw);
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = 1.0 - level;
  return {quantile_sorted(stats, alpha / 2.0), quantile_sorted(stats, 1.0 - alpha / 2.0)};
}

}  // namespace nwbrl
