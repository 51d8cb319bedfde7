#pragma once

#include <vector>

namespace prognet::core {

/// Equal-frequency age bins. Each bin carries the mean age of its members
/// (center), the max in-bin age difference, and the Gaussian membership
/// width sigma = c_sigma * sqrt(delta), floored at sigma_min.
struct AgeBinning {
  struct Bin {
    double center = 0.0;  // m_i
    double delta = 0.0;   // max in-bin age difference
    double sigma = 0.0;   // membership width
    double lower = 0.0;   // half-open boundary [lower, upper)
    double upper = 0.0;
  };
  std::vector<Bin> bins;

  int size() const { return static_cast<int>(bins.size()); }
  /// Index of the bin containing age (clamped to the outer bins).
  int bin_of(double age) const;
};

AgeBinning build_age_binning(std::vector<double> ages, int n_bins,
                             double c_sigma = 1.0, double sigma_min = 0.5);

/// Fuzzy Gaussian membership of age in bin i: exp(-(age-m_i)^2 / (2 sigma_i^2)).
double membership(const AgeBinning& binning, double age, int bin_index);

}  // namespace prognet::core
