#include "prognet/binning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prognet/errors.hpp"

namespace prognet::core {

int AgeBinning::bin_of(double age) const {
  for (int i = 0; i < size(); ++i) {
    if (age < bins[i].upper) return i;
  }
  return size() - 1;
}

AgeBinning build_age_binning(std::vector<double> ages, int n_bins,
                             double c_sigma, double sigma_min) {
  if (n_bins < 2) throw ValidationError("age binning needs at least 2 bins");
  if (ages.size() < static_cast<std::size_t>(n_bins))
    throw ValidationError("fewer ages than bins");
  std::sort(ages.begin(), ages.end());
  if (!(ages.back() > ages.front()))
    throw ValidationError("ages must span a positive range");
  if (!(c_sigma > 0.0)) throw ValidationError("c_sigma must be positive");

  AgeBinning binning;
  const std::size_t n = ages.size();
  for (int i = 0; i < n_bins; ++i) {
    const std::size_t lo = (n * static_cast<std::size_t>(i)) / n_bins;
    const std::size_t hi = (n * static_cast<std::size_t>(i + 1)) / n_bins;
    AgeBinning::Bin bin;
    double sum = 0.0;
    for (std::size_t k = lo; k < hi; ++k) sum += ages[k];
    bin.center = sum / static_cast<double>(hi - lo);
    bin.delta = ages[hi - 1] - ages[lo];
    bin.sigma = std::max(sigma_min, c_sigma * std::sqrt(bin.delta));
    bin.lower = i == 0 ? -std::numeric_limits<double>::infinity()
                       : 0.5 * (ages[lo - 1] + ages[lo]);
    bin.upper = i == n_bins - 1 ? std::numeric_limits<double>::infinity()
                                : 0.5 * (ages[hi - 1] + ages[hi]);
    binning.bins.push_back(bin);
  }
  return binning;
}

double membership(const AgeBinning& binning, double age, int bin_index) {
  const auto& bin = binning.bins.at(bin_index);
  const double d = age - bin.center;
  return std::exp(-d * d / (2.0 * bin.sigma * bin.sigma));
}

}  // namespace prognet::core
