#include "prognet/superres.hpp"

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "prognet/errors.hpp"
#include "prognet/rng.hpp"

using namespace prognet;
using namespace prognet::superres;

namespace {

SrConfig tiny_cfg() {
  SrConfig cfg;
  cfg.dense_depth = 2;
  cfg.growth = 4;
  cfg.patch = 8;
  cfg.batch_patches = 4;
  cfg.patches_per_pair = 4;
  return cfg;
}

Grid3 random_volume(Rng& rng, int d, int h, int w, double scale = 1.0) {
  Grid3 v(d, h, w);
  for (auto& val : v.raw()) val = scale * rng.normal(0.0, 1.0);
  return v;
}

/// Smooth blob volume plus fine detail; the control degradation removes
/// the detail, the SR model should restore part of it.
std::pair<Grid3, Grid3> detail_pair(Rng& rng, int d, int h, int w) {
  Grid3 hr(d, h, w), lr(d, h, w);
  for (int z = 0; z < d; ++z)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double base =
            std::exp(-0.05 * (std::pow(z - d / 2.0, 2) +
                              std::pow(y - h / 2.0, 2) +
                              std::pow(x - w / 2.0, 2)));
        const double detail = 0.15 * std::sin(1.9 * y) * std::cos(2.3 * x);
        hr.at(z, y, x) = base + detail + 0.01 * rng.normal(0, 1);
        lr.at(z, y, x) = base + 0.4 * detail;  // blurred counterpart
      }
  return {hr, lr};
}

}  // namespace

TEST_CASE("pair construction drops shape mismatches with a warning") {
  Rng rng(1);
  std::vector<Grid3> hr{random_volume(rng, 4, 4, 4),
                        random_volume(rng, 4, 4, 4)};
  std::vector<Grid3> lr{random_volume(rng, 4, 4, 4),
                        random_volume(rng, 4, 4, 5)};
  const auto pairs = make_lr_hr_pairs(hr, lr);
  CHECK(pairs.size() == 1);
}

TEST_CASE("zeroed residual branch makes apply the identity") {
  SrModel model = SrModel::random_init(tiny_cfg(), 5);
  model.zero_residual_branch();
  Rng rng(2);
  const Grid3 vol = random_volume(rng, 5, 6, 7);
  const Grid3 out = model.apply(vol);
  REQUIRE(out.same_shape(vol));
  for (std::size_t i = 0; i < vol.raw().size(); ++i)
    CHECK(out.raw()[i] == doctest::Approx(vol.raw()[i]).epsilon(1e-12));
}

TEST_CASE("apply preserves the grid shape") {
  SrModel model = SrModel::random_init(tiny_cfg(), 6);
  Rng rng(3);
  const Grid3 vol = random_volume(rng, 3, 9, 11);
  const Grid3 out = model.apply(vol);
  CHECK(out.same_shape(vol));
}

TEST_CASE("epochs=0 leaves the model at initialization") {
  SrModel model = SrModel::random_init(tiny_cfg(), 7);
  const nn::Vec before = model.flat_weights();
  Rng rng(4);
  std::vector<SrPair> pairs{{random_volume(rng, 6, 6, 6),
                             random_volume(rng, 6, 6, 6)}};
  const auto history = train_sr(model, pairs, 0, 9);
  CHECK(history.empty());
  CHECK((model.flat_weights() - before).norm() == 0.0);
}

TEST_CASE("training on identical LR=HR pairs converges to near-identity") {
  SrModel model = SrModel::random_init(tiny_cfg(), 8);
  Rng rng(5);
  std::vector<SrPair> pairs;
  for (int i = 0; i < 3; ++i) {
    Grid3 v = random_volume(rng, 8, 8, 8, 0.5);
    pairs.push_back({v, v});
  }
  const auto history = train_sr(model, pairs, 60, 10);
  REQUIRE_FALSE(history.empty());
  CHECK(history.back().mse < history.front().mse);
  CHECK(history.back().mse < 1e-3);
}

TEST_CASE("training is deterministic in the seed") {
  Rng rng(6);
  std::vector<SrPair> pairs;
  for (int i = 0; i < 2; ++i) {
    auto [hr, lr] = detail_pair(rng, 8, 8, 8);
    pairs.push_back({lr, hr});
  }
  SrModel a = SrModel::random_init(tiny_cfg(), 11);
  SrModel b = SrModel::random_init(tiny_cfg(), 11);
  const auto ha = train_sr(a, pairs, 5, 12);
  const auto hb = train_sr(b, pairs, 5, 12);
  CHECK((a.flat_weights() - b.flat_weights()).norm() == 0.0);
  REQUIRE(ha.size() == hb.size());
  for (std::size_t i = 0; i < ha.size(); ++i) CHECK(ha[i].mse == hb[i].mse);
}

TEST_CASE("trained SR beats the trilinear control on held-out pairs") {
  Rng rng(7);
  std::vector<SrPair> train_pairs, test_pairs;
  for (int i = 0; i < 6; ++i) {
    auto [hr, lr] = detail_pair(rng, 9, 12, 12);
    (i < 4 ? train_pairs : test_pairs).push_back({lr, hr});
  }
  SrConfig cfg = tiny_cfg();
  cfg.growth = 6;
  cfg.dense_depth = 3;
  cfg.patches_per_pair = 6;
  SrModel model = SrModel::random_init(cfg, 13);
  train_sr(model, train_pairs, 60, 14);

  double sr_gain = 0.0;
  for (const auto& pair : test_pairs) {
    const double psnr_sr = psnr(model.apply(pair.lr), pair.hr);
    const double psnr_control = psnr(trilinear_control(pair.lr), pair.hr);
    sr_gain += psnr_sr - psnr_control;
  }
  sr_gain /= static_cast<double>(test_pairs.size());
  CHECK(sr_gain >= 0.5);
}

TEST_CASE("model serialization round-trips weights and config") {
  SrModel model = SrModel::random_init(tiny_cfg(), 15);
  const std::string dir =
      (std::filesystem::temp_directory_path() / "prognet_sr").string();
  std::filesystem::remove_all(dir);
  model.save(dir);
  const SrModel back = SrModel::load(dir);
  CHECK(back.config().dense_depth == model.config().dense_depth);
  CHECK(back.config().growth == model.config().growth);
  CHECK((back.flat_weights() - model.flat_weights()).norm() == 0.0);
}

TEST_CASE("psnr and mse agree with hand arithmetic") {
  Grid3 a(1, 1, 2), b(1, 1, 2);
  a.at(0, 0, 0) = 0.0;
  a.at(0, 0, 1) = 1.0;
  b.at(0, 0, 0) = 0.5;
  b.at(0, 0, 1) = 1.0;
  CHECK(mse(a, b) == doctest::Approx(0.125));
  // range of b is 0.5... psnr uses the reference range.
  CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(0.25 / 0.125)));
}
