#pragma once

#include <functional>
#include <vector>

#include "prognet/atlas.hpp"
#include "prognet/binning.hpp"
#include "prognet/nn.hpp"
#include "prognet/regionlr.hpp"
#include "prognet/volume.hpp"

namespace prognet::core {

/// Generated output for one subject at one slice position: one frame per
/// age bin.
using Sequence = std::vector<Image>;

/// Row-major (y * width + x) bridge between 2D slices and network columns.
nn::Vec flatten(const Image& img);
Image unflatten(const Eigen::Ref<const nn::Vec>& v, int height, int width);

/// Reconstruction loss: sum over bins of the mean squared difference
/// between the input and the membership-weighted generated frame.
/// grad (optional) receives dLoss/dFrame per bin.
double loss_rec(const Image& input, const Sequence& frames,
                const AgeBinning& binning, double age,
                Sequence* grad = nullptr);

/// Voxel-level monotonicity loss around the frame at own_bin (0-based).
/// The first/last bins drop the side with no frames. When hinge is true
/// only ordering violations are penalized (configurable alternative
/// reading; the default is the literal squared-distance form).
double loss_vox(const Sequence& frames, int own_bin, bool hinge = false,
                Sequence* grad = nullptr);

/// Predicted regional intensity ratio between two bins. Implementations
/// must return the ratio expected at the later bin relative to the
/// earlier bin for the given diagnosis.
using RegionRatioPredictor =
    std::function<double(int region_index, int earlier_bin, int later_bin,
                         int diagnosis)>;

/// Per-slice geometry for the region loss: masks intersected with the
/// brain mask, with sqrt-size weights precomputed.
struct RegionGeometry {
  struct Region {
    std::vector<int> pixels;  // mask ∩ brain, flat row-major indices
    double sqrt_size = 0.0;   // sqrt of the full mask size s_{n,q}
  };
  std::vector<Region> regions;
  int height = 0;
  int width = 0;

  static RegionGeometry from_slice(const atlas::SliceRegions& slice_regions,
                                   const Image* brain, int height, int width);
};

/// Region-level loss, the signed-difference form with the 1/(R_n (A-1))
/// normalization. Ratios use sums over mask ∩ brain pixels plus epsilon.
double loss_reg(const Sequence& frames, int own_bin, int diagnosis,
                const RegionGeometry& geometry,
                const RegionRatioPredictor& predictor, double epsilon = 0.1,
                Sequence* grad = nullptr);

struct AdvLosses {
  double discriminator = 0.0;
  /// Non-saturating objective for the fooling network (generator/encoder).
  double generator = 0.0;
};

/// Brain-realism adversarial pair: discriminator cross entropy on
/// real/generated slices and the non-saturating generator objective.
AdvLosses loss_adv_brain(const nn::Net& disc, const nn::Mat& real_slices,
                         const nn::Mat& generated_slices);

/// Latent adversarial pair: discriminator cross entropy on uniform prior
/// samples vs encodings, and the encoder objective.
AdvLosses loss_adv_latent(const nn::Net& disc, const nn::Mat& prior_samples,
                          const nn::Mat& encodings);

struct LossComponents {
  double rec = 0.0;
  double vox = 0.0;
  double reg = 0.0;
  double adv_b = 0.0;  // discriminator cross entropy, brain
  double adv_z = 0.0;  // discriminator cross entropy, latent
};

struct LossWeights {
  double rec = 0.0;
  double vox = 0.0;
  double reg = 0.0;
  double b = 0.0;
  double z = 0.0;
};

/// The weighted sum of the five components.
double loss_total(const LossComponents& c, const LossWeights& w);

}  // namespace prognet::core
