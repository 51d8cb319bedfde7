#pragma once

#include <vector>

#include "prognet/losses.hpp"
#include "prognet/volume.hpp"

namespace prognet::assemble {

/// Cross-slice Gaussian smoothing weights for offset k in [-window, window],
/// renormalized over the offsets available at a boundary slice.
std::vector<double> smoothing_kernel(double sigma, int window);

/// Stack T per-slice generated sequences into A volumes. Each output slice
/// is the Gaussian-weighted average of the generated slices within the
/// window, then de-standardized with the reference stack's per-slice
/// mean/std. per_slice[n] must hold the A frames of slice position n.
std::vector<Grid3> stack_and_smooth(
    const std::vector<core::Sequence>& per_slice,
    const SliceStack& destandardize_ref, double sigma = 1.5, int window = 2);

/// Piecewise-linear interpolation between the two bin-center volumes that
/// bracket the requested age. Ages outside [centers.front(),
/// centers.back()] clamp to the end volumes; *clamped is set when given.
Grid3 interpolate_age(const std::vector<Grid3>& volumes,
                      const std::vector<double>& centers, double age,
                      bool* clamped = nullptr);

}  // namespace prognet::assemble
