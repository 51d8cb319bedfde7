#pragma once

#include <string>
#include <vector>

#include "prognet/nn.hpp"
#include "prognet/volume.hpp"

namespace prognet::superres {

struct SrConfig {
  int dense_depth = 4;
  int growth = 8;
  int patch = 16;           // requested cubic patch edge, clamped per axis
  int batch_patches = 8;
  int patches_per_pair = 4; // per epoch
  double adam_lr = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
};

struct SrPair {
  Grid3 lr;
  Grid3 hr;
};

/// Pairs aligned by index; entries whose shapes differ are dropped with a
/// warning on stderr.
std::vector<SrPair> make_lr_hr_pairs(const std::vector<Grid3>& hr_volumes,
                                     const std::vector<Grid3>& lr_volumes);

/// Densely connected residual 3D CNN operating on whatever grid it is
/// given: out = in + conv1x1(concat(features)). Weights are stored
/// shape-free and instantiated per input shape.
class SrModel {
 public:
  SrModel() = default;
  explicit SrModel(const SrConfig& cfg);
  static SrModel random_init(const SrConfig& cfg, std::uint64_t seed);

  const SrConfig& config() const { return cfg_; }
  /// Concatenation of all convolution weights (freeze checks, hashing).
  nn::Vec flat_weights() const;
  void set_flat_weights(const nn::Vec& w);
  /// Zero the residual projection so that apply() is the identity.
  void zero_residual_branch();

  Grid3 apply(const Grid3& volume) const;

  void save(const std::string& dir) const;
  static SrModel load(const std::string& dir);

 private:
  friend std::vector<struct SrEpochLoss> train_sr(
      SrModel& model, const std::vector<SrPair>& pairs, long epochs,
      std::uint64_t seed);
  SrConfig cfg_;
  std::vector<nn::Vec> conv_weights_;  // input conv, depth convs, final 1x1x1
  std::vector<long> expected_sizes() const;
};

struct SrEpochLoss {
  long epoch = 0;
  double mse = 0.0;
};

/// Patch-based MSE training. Deterministic in seed. Throws TrainingError
/// on non-finite loss, naming the epoch.
std::vector<SrEpochLoss> train_sr(SrModel& model, const std::vector<SrPair>& pairs,
                                  long epochs, std::uint64_t seed);

/// Mean squared error / peak signal-to-noise ratio against a reference.
double mse(const Grid3& a, const Grid3& b);
double psnr(const Grid3& test, const Grid3& reference);

/// Control degradation: 2x average-pool downsample then trilinear upsample
/// back to the original grid.
Grid3 trilinear_control(const Grid3& volume);

}  // namespace prognet::superres
