#pragma once

#include <functional>
#include <string>
#include <vector>

#include "prognet/binning.hpp"
#include "prognet/losses.hpp"
#include "prognet/nn.hpp"
#include "prognet/regionlr.hpp"

namespace prognet::core {

struct ModelConfig {
  int image_side = 32;
  int latent_dim = 200;
  int age_bins = 5;  // A
  int n_diagnoses = 4;
  int base_channels = 4;
  double leaky_slope = 0.2;
  double adam_lr = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  bool vox_hinge = false;
  double reg_epsilon = 0.1;

  /// Number of stride-2 stages: 4 at S >= 32, fewer for tiny test images.
  int downsample_steps() const;
  int top_spatial() const;   // S / 2^downsample_steps
  int top_channels() const;  // base_channels * downsample_steps
};

nn::Net build_encoder(const ModelConfig& cfg);
nn::Net build_generator(const ModelConfig& cfg);
nn::Net build_brain_discriminator(const ModelConfig& cfg);
nn::Net build_latent_discriminator(const ModelConfig& cfg);

/// Per-slice progression model: conditional autoencoder (encoder +
/// generator) with brain and latent discriminators, plus optimizer state.
struct SliceModelBundle {
  int slice_ordinal = 0;
  ModelConfig cfg;
  nn::Net encoder, generator, disc_brain, disc_latent;
  nn::Adam opt_enc, opt_gen, opt_db, opt_dz;
  long epoch = 0;

  static SliceModelBundle create(int slice_ordinal, const ModelConfig& cfg,
                                 std::uint64_t seed);
  /// Throws TrainingError when any parameter is non-finite.
  void check_finite(const std::string& where) const;
  nn::Vec all_weights() const;
};

/// Training samples for one slice position (columns = flattened slices).
struct SliceDataset {
  int slice_ordinal = 0;
  nn::Mat slices;  // (S*S) x N
  std::vector<double> ages;
  std::vector<int> diagnoses;

  long size() const { return slices.cols(); }
};

struct TrainContext {
  const AgeBinning* binning = nullptr;
  RegionGeometry geometry;         // empty -> region loss contributes 0
  RegionRatioPredictor predictor;  // null -> identity predictor
  std::function<LossWeights(long epoch)> schedule;  // required
};

struct EpochLosses {
  long epoch = 0;
  LossComponents components;
  double total = 0.0;
};
using LossHistory = std::vector<EpochLosses>;

struct TrainOptions {
  long epochs = 50;
  int batch_size = 100;
  std::uint64_t seed = 7;
  long step_limit = 0;  // 0 = no cap; counts autoencoder updates
};

/// Alternating update per mini-batch: both discriminators step on their
/// cross entropies, then encoder+generator step on the weighted total.
/// Throws TrainingError naming the component on any non-finite loss.
LossHistory train_slice_model(SliceModelBundle& bundle,
                              const SliceDataset& data,
                              const TrainContext& ctx,
                              const TrainOptions& opt);

/// One generated frame per age bin for the given input slice.
Sequence generate_sequence(const SliceModelBundle& bundle, const Image& input,
                           int diagnosis);

/// Loss components on a dataset without any parameter update (used for
/// validation scoring). Deterministic in seed (prior draws).
LossComponents evaluate_losses(const SliceModelBundle& bundle,
                               const SliceDataset& data,
                               const TrainContext& ctx, std::uint64_t seed);

/// Bin-to-age adapter: region-ratio predictions for bin pairs are the LR
/// bank predictions at the bin-center ages. Missing entries predict 1 and
/// warn once per slice.
RegionRatioPredictor make_lr_predictor(const regionlr::LrBank& bank,
                                       const AgeBinning& binning,
                                       int slice_ordinal);

void save_bundle(const SliceModelBundle& bundle, const std::string& dir);
SliceModelBundle load_bundle(const std::string& dir);
void save_history(const LossHistory& history, const std::string& path);
LossHistory load_history(const std::string& path);

}  // namespace prognet::core
