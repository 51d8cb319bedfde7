#include "prognet/assemble.hpp"

#include <algorithm>
#include <cmath>

#include "prognet/errors.hpp"

namespace prognet::assemble {

std::vector<double> smoothing_kernel(double sigma, int window) {
  if (!(sigma > 0.0)) throw ValidationError("smoothing sigma must be > 0");
  if (window < 0) throw ValidationError("smoothing window must be >= 0");
  std::vector<double> w(static_cast<std::size_t>(2 * window + 1));
  for (int k = -window; k <= window; ++k)
    w[static_cast<std::size_t>(k + window)] =
        std::exp(-static_cast<double>(k) * k / (2.0 * sigma * sigma));
  return w;
}

std::vector<Grid3> stack_and_smooth(const std::vector<core::Sequence>& per_slice,
                                    const SliceStack& destandardize_ref,
                                    double sigma, int window) {
  const int T = static_cast<int>(per_slice.size());
  if (T == 0) throw ValidationError("no slice sequences to stack");
  if (destandardize_ref.slice_count() != T)
    throw ValidationError("reference stack has different slice count");
  const int A = static_cast<int>(per_slice.front().size());
  for (int n = 0; n < T; ++n) {
    if (per_slice[static_cast<std::size_t>(n)].empty())
      throw ValidationError("missing generated sequence for slice " +
                            std::to_string(n));
    if (static_cast<int>(per_slice[static_cast<std::size_t>(n)].size()) != A)
      throw ValidationError("slice " + std::to_string(n) +
                            " has inconsistent frame count");
  }
  const int h = static_cast<int>(per_slice.front().front().rows());
  const int w = static_cast<int>(per_slice.front().front().cols());
  for (int n = 0; n < T; ++n)
    for (const auto& f : per_slice[static_cast<std::size_t>(n)])
      if (f.rows() != h || f.cols() != w)
        throw ValidationError("slice " + std::to_string(n) +
                              " has inconsistent frame shape");

  const std::vector<double> kernel = smoothing_kernel(sigma, window);

  std::vector<Grid3> volumes;
  volumes.reserve(static_cast<std::size_t>(A));
  for (int i = 0; i < A; ++i) {
    Grid3 vol(T, h, w);
    for (int n = 0; n < T; ++n) {
      Image acc = Image::Zero(h, w);
      double wsum = 0.0;
      for (int k = -window; k <= window; ++k) {
        const int m = n + k;
        if (m < 0 || m >= T) continue;
        const double wk = kernel[static_cast<std::size_t>(k + window)];
        acc += wk * per_slice[static_cast<std::size_t>(m)]
                        [static_cast<std::size_t>(i)];
        wsum += wk;
      }
      acc /= wsum;
      // De-standardize with the reference scan's own slice parameters.
      acc = acc * destandardize_ref.slice_stds[static_cast<std::size_t>(n)] +
            destandardize_ref.slice_means[static_cast<std::size_t>(n)];
      vol.set_slice(n, acc);
    }
    volumes.push_back(std::move(vol));
  }
  return volumes;
}

Grid3 interpolate_age(const std::vector<Grid3>& volumes,
                      const std::vector<double>& centers, double age,
                      bool* clamped) {
  if (volumes.empty() || volumes.size() != centers.size())
    throw ValidationError("interpolate_age: volume/center count mismatch");
  for (std::size_t i = 1; i < centers.size(); ++i)
    if (!(centers[i] > centers[i - 1]))
      throw ValidationError("interpolate_age: centers must increase");
  if (clamped) *clamped = false;

  if (age <= centers.front()) {
    if (clamped && age < centers.front()) *clamped = true;
    return volumes.front();
  }
  if (age >= centers.back()) {
    if (clamped && age > centers.back()) *clamped = true;
    return volumes.back();
  }
  std::size_t hi = 1;
  while (centers[hi] < age) ++hi;
  const std::size_t lo = hi - 1;
  const double span = centers[hi] - centers[lo];
  const double w_hi = (age - centers[lo]) / span;
  const double w_lo = 1.0 - w_hi;

  Grid3 out = volumes[lo];
  const auto& vhi = volumes[hi];
  if (!out.same_shape(vhi))
    throw ValidationError("interpolate_age: volume shapes differ");
  for (std::size_t v = 0; v < out.raw().size(); ++v)
    out.raw()[v] = w_lo * out.raw()[v] + w_hi * vhi.raw()[v];
  return out;
}

}  // namespace prognet::assemble
