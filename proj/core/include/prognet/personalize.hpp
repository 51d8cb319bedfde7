#pragma once

#include <functional>
#include <vector>

#include "prognet/slice_model.hpp"
#include "prognet/superres.hpp"
#include "prognet/volume.hpp"

namespace prognet::personalize {

struct FineTuneOptions {
  int iterations = 50;
  std::uint64_t seed = 7;
  int workers = 1;
  /// When set, only the reconstruction weight is kept non-zero.
  bool reconstruction_only = false;
};

/// Per-slice transfer learning on one subject's baseline scan. The shared
/// bundles are copied, each copy fine-tuned for `iterations` single-image
/// steps; the super-resolution model is not touched. The context factory
/// supplies the (fine-tuning) weight schedule and region machinery per
/// slice.
std::vector<core::SliceModelBundle> fine_tune(
    const std::vector<core::SliceModelBundle>& bundles,
    const superres::SrModel* sr_model, const SliceStack& baseline,
    const std::function<core::TrainContext(int slice)>& context_for_slice,
    const FineTuneOptions& opt);

}  // namespace prognet::personalize
