#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "prognet/atlas.hpp"
#include "prognet/volume.hpp"

namespace prognet::regionlr {

/// Intensity-ratio sum of `later` over `earlier` inside the mask (and, when
/// given, the brain mask), each stabilized by epsilon.
double region_ratio(const Image& earlier, const Image& later,
                    const atlas::RegionMask& mask,
                    const Image* brain = nullptr, double epsilon = 0.1);

/// Greedy scan keeping only points whose intensity does not exceed the last
/// kept point; the first point is always kept.
std::vector<std::pair<double, double>> monotonic_filter(
    const std::vector<std::pair<double, double>>& series);

/// Regional progression predictor. The sigmoid argument pins logit(1/r_max)
/// at zero elapsed time and adds elapsed-time-scaled terms, so the
/// prediction is exactly 1 when the follow-up age equals the baseline age.
///   predict(o, a, d) = r_max * sigmoid(s0 + (a-o) * (w0 + w1*o_n + w2*d_n))
struct RegionLR {
  double w[3] = {0.0, 0.0, 0.0};
  double r_max = 1.2;
  double o_center = 70.0;
  double o_scale = 10.0;
  bool fallback = false;  // identity predictor (ratio 1)

  double predict(double baseline_age, double followup_age, int diagnosis) const;
};

struct RatioSample {
  double baseline_age = 0.0;
  double followup_age = 0.0;
  int diagnosis = 0;
  double ratio = 1.0;
};

struct FitOptions {
  double r_max = 1.2;
  int min_samples = 5;
  int iterations = 400;
  double learning_rate = 0.05;
  bool anchor_zero_elapsed = true;
};

RegionLR fit_region_lr(std::vector<RatioSample> samples, const FitOptions& opt);

struct FitReport {
  long fitted = 0;
  long fallbacks = 0;
  std::vector<std::string> notes;
};

/// LR bank keyed by (slice ordinal, mask index within the slice's region
/// list). Ratio samples come from monotonic-filtered per-subject series of
/// in-mask intensity sums.
struct LrBank {
  std::map<std::pair<int, int>, RegionLR> models;

  const RegionLR* find(int slice_ordinal, int mask_index) const {
    auto it = models.find({slice_ordinal, mask_index});
    return it == models.end() ? nullptr : &it->second;
  }
};

LrBank fit_region_lrs(const std::vector<SliceStack>& train_stacks,
                      const atlas::RegionSet& regions,
                      const std::vector<Image>& brain_slices,
                      const FitOptions& opt, FitReport* report = nullptr);

void save_lr_bank(const LrBank& bank, const std::string& path);
LrBank load_lr_bank(const std::string& path);

}  // namespace prognet::regionlr
