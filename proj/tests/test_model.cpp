#include "prognet/slice_model.hpp"

#include <cmath>
#include <filesystem>
#include "prognet/dataio.hpp"

#include "doctest.h"
#include "prognet/errors.hpp"
#include "toy_losses.hpp"

using namespace prognet;
using namespace prognet::core;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.image_side = 8;
  cfg.latent_dim = 8;
  cfg.age_bins = 3;
  cfg.base_channels = 2;
  return cfg;
}

SliceDataset tiny_dataset(const ModelConfig& cfg, int n, std::uint64_t seed) {
  // Bright square that shrinks with age plus a dark spot that grows.
  SliceDataset data;
  data.slice_ordinal = 0;
  data.slices.resize(cfg.image_side * cfg.image_side, n);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const double age = 66.0 + 12.0 * rng.uniform();
    const double shrink = (age - 66.0) / 12.0;
    Image img(cfg.image_side, cfg.image_side);
    for (int y = 0; y < cfg.image_side; ++y)
      for (int x = 0; x < cfg.image_side; ++x) {
        const double r = std::hypot(y - 3.5, x - 3.5);
        double v = r < 3.5 ? 1.0 - 0.4 * shrink : 0.0;
        if (r < 1.0 + shrink) v = 0.1;
        img(y, x) = v + rng.normal(0.0, 0.01);
      }
    const auto std = dataio::standardize_slice(img);
    data.slices.col(i) = flatten(std.values);
    data.ages.push_back(age);
    data.diagnoses.push_back(static_cast<int>(rng.below(4)));
  }
  return data;
}

AgeBinning binning_for(const SliceDataset& data, int bins) {
  return build_age_binning(data.ages, bins, 1.0, 0.5);
}

TrainContext context_with(const AgeBinning& binning, LossWeights w) {
  TrainContext ctx;
  ctx.binning = &binning;
  ctx.schedule = [w](long) { return w; };
  return ctx;
}

LossWeights smoke_weights() {
  LossWeights w;
  w.rec = 100.0;
  w.vox = 1.25;
  w.reg = 0.0;
  w.b = 0.002;
  w.z = 0.05;
  return w;
}

}  // namespace

TEST_CASE("architecture sizes follow the image side") {
  ModelConfig cfg;
  cfg.image_side = 32;
  CHECK(cfg.downsample_steps() == 4);
  CHECK(cfg.top_spatial() == 2);
  cfg.image_side = 8;
  CHECK(cfg.downsample_steps() == 2);
  CHECK(cfg.top_spatial() == 2);

  const nn::Net enc = build_encoder(tiny_config());
  CHECK(enc.in_size() == 64);
  CHECK(enc.out_size() == 8);
  const nn::Net gen = build_generator(tiny_config());
  CHECK(gen.in_size() == 8 + 3 + 4);
  CHECK(gen.out_size() == 64);
}

TEST_CASE("epochs=0 leaves the bundle unchanged") {
  const ModelConfig cfg = tiny_config();
  SliceModelBundle bundle = SliceModelBundle::create(0, cfg, 3);
  const nn::Vec before = bundle.all_weights();
  const SliceDataset data = tiny_dataset(cfg, 6, 4);
  const AgeBinning binning = binning_for(data, cfg.age_bins);
  TrainContext ctx = context_with(binning, smoke_weights());
  TrainOptions opt;
  opt.epochs = 0;
  const LossHistory history = train_slice_model(bundle, data, ctx, opt);
  CHECK(history.empty());
  CHECK((bundle.all_weights() - before).norm() == 0.0);
}

TEST_CASE("smoke training reduces the reconstruction loss") {
  const ModelConfig cfg = tiny_config();
  SliceModelBundle bundle = SliceModelBundle::create(0, cfg, 5);
  const SliceDataset data = tiny_dataset(cfg, 12, 6);
  const AgeBinning binning = binning_for(data, cfg.age_bins);
  TrainContext ctx = context_with(binning, smoke_weights());
  TrainOptions opt;
  opt.epochs = 20;
  opt.batch_size = 12;
  opt.seed = 7;
  const LossHistory history = train_slice_model(bundle, data, ctx, opt);
  REQUIRE(history.size() == 20);
  CHECK(history.back().components.rec < history.front().components.rec);
  bundle.check_finite("smoke");
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  const ModelConfig cfg = tiny_config();
  const SliceDataset data = tiny_dataset(cfg, 10, 8);
  const AgeBinning binning = binning_for(data, cfg.age_bins);

  auto run = [&]() {
    SliceModelBundle bundle = SliceModelBundle::create(0, cfg, 11);
    TrainContext ctx = context_with(binning, smoke_weights());
    TrainOptions opt;
    opt.epochs = 6;
    opt.batch_size = 4;
    opt.seed = 13;
    const LossHistory h = train_slice_model(bundle, data, ctx, opt);
    return std::make_pair(bundle.all_weights(), h);
  };
  const auto [w1, h1] = run();
  const auto [w2, h2] = run();
  CHECK((w1 - w2).norm() == 0.0);
  REQUIRE(h1.size() == h2.size());
  for (std::size_t i = 0; i < h1.size(); ++i) {
    CHECK(h1[i].components.rec == h2[i].components.rec);
    CHECK(h1[i].components.vox == h2[i].components.vox);
    CHECK(h1[i].components.adv_b == h2[i].components.adv_b);
    CHECK(h1[i].components.adv_z == h2[i].components.adv_z);
    CHECK(h1[i].total == h2[i].total);
  }
}

TEST_CASE("non-finite input aborts with a component diagnostic") {
  const ModelConfig cfg = tiny_config();
  SliceModelBundle bundle = SliceModelBundle::create(0, cfg, 15);
  SliceDataset data = tiny_dataset(cfg, 4, 16);
  data.slices(5, 1) = std::numeric_limits<double>::quiet_NaN();
  const AgeBinning binning = binning_for(data, cfg.age_bins);
  TrainContext ctx = context_with(binning, smoke_weights());
  TrainOptions opt;
  opt.epochs = 2;
  CHECK_THROWS_AS(train_slice_model(bundle, data, ctx, opt), TrainingError);
}

TEST_CASE("generate_sequence is deterministic with the right shapes") {
  const ModelConfig cfg = tiny_config();
  SliceModelBundle bundle = SliceModelBundle::create(0, cfg, 17);
  Rng rng(18);
  Image input(cfg.image_side, cfg.image_side);
  for (int y = 0; y < cfg.image_side; ++y)
    for (int x = 0; x < cfg.image_side; ++x) input(y, x) = rng.normal(0, 1);

  const Sequence a = generate_sequence(bundle, input, 2);
  const Sequence b = generate_sequence(bundle, input, 2);
  REQUIRE(a.size() == static_cast<std::size_t>(cfg.age_bins));
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].rows() == cfg.image_side);
    CHECK(a[i].cols() == cfg.image_side);
    CHECK((a[i] - b[i]).abs().maxCoeff() == 0.0);
  }
}

TEST_CASE("changing the diagnosis conditioning changes the output") {
  const ModelConfig cfg = tiny_config();
  SliceModelBundle bundle = SliceModelBundle::create(0, cfg, 19);
  const SliceDataset data = tiny_dataset(cfg, 10, 20);
  const AgeBinning binning = binning_for(data, cfg.age_bins);
  TrainContext ctx = context_with(binning, smoke_weights());
  TrainOptions opt;
  opt.epochs = 10;
  opt.batch_size = 5;
  train_slice_model(bundle, data, ctx, opt);

  const Image input = unflatten(data.slices.col(0), cfg.image_side,
                                cfg.image_side);
  const Sequence d0 = generate_sequence(bundle, input, 0);
  const Sequence d3 = generate_sequence(bundle, input, 3);
  bool differs = false;
  for (std::size_t i = 0; i < d0.size(); ++i)
    if ((d0[i] - d3[i]).abs().maxCoeff() > 0.0) differs = true;
  CHECK(differs);
}

TEST_CASE("bundle save/load round-trips weights, epoch and inference") {
  const ModelConfig cfg = tiny_config();
  SliceModelBundle bundle = SliceModelBundle::create(2, cfg, 23);
  const SliceDataset data = tiny_dataset(cfg, 6, 24);
  const AgeBinning binning = binning_for(data, cfg.age_bins);
  TrainContext ctx = context_with(binning, smoke_weights());
  TrainOptions opt;
  opt.epochs = 3;
  train_slice_model(bundle, data, ctx, opt);

  const std::string dir =
      (std::filesystem::temp_directory_path() / "prognet_bundle").string();
  std::filesystem::remove_all(dir);
  save_bundle(bundle, dir);
  const SliceModelBundle back = load_bundle(dir);
  CHECK(back.slice_ordinal == 2);
  CHECK(back.epoch == 3);
  CHECK((back.all_weights() - bundle.all_weights()).norm() == 0.0);

  const Image input = unflatten(data.slices.col(1), cfg.image_side,
                                cfg.image_side);
  const Sequence a = generate_sequence(bundle, input, 1);
  const Sequence b = generate_sequence(back, input, 1);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK((a[i] - b[i]).abs().maxCoeff() == 0.0);
}

TEST_CASE("evaluate_losses is deterministic in its seed") {
  const ModelConfig cfg = tiny_config();
  SliceModelBundle bundle = SliceModelBundle::create(0, cfg, 27);
  const SliceDataset data = tiny_dataset(cfg, 8, 28);
  const AgeBinning binning = binning_for(data, cfg.age_bins);
  TrainContext ctx = context_with(binning, smoke_weights());
  const LossComponents a = evaluate_losses(bundle, data, ctx, 99);
  const LossComponents b = evaluate_losses(bundle, data, ctx, 99);
  CHECK(a.rec == b.rec);
  CHECK(a.adv_z == b.adv_z);
  const LossComponents c = evaluate_losses(bundle, data, ctx, 100);
  CHECK(c.adv_z != a.adv_z);  // different prior draw
}

TEST_CASE("missing LR entries fall back to the identity predictor") {
  regionlr::LrBank empty;
  core::AgeBinning binning;
  for (int i = 0; i < 2; ++i) {
    core::AgeBinning::Bin b;
    b.center = 70.0 + 4.0 * i;
    b.sigma = 1.0;
    binning.bins.push_back(b);
  }
  const auto predictor = make_lr_predictor(empty, binning, 0);
  CHECK(predictor(0, 0, 1, 2) == doctest::Approx(1.0));
}

// --- Gradient correctness through the toy model paths ----------------------

TEST_CASE("rec/vox/reg loss gradients match finite differences") {
  toy::ToySetup t = toy::make_toy(41);
  Rng rng(42);
  nn::Vec x(t.npix());
  for (long i = 0; i < x.size(); ++i) x[i] = rng.normal(0.0, 1.0);
  const Image input = unflatten(x, t.side, t.side);
  const double age = 72.0;
  const int own = 1;
  const int d = 2;
  const auto geometry = toy::toy_geometry(t.side);
  const auto lr = [](int q, int o, int a, int dd) {
    return 0.9 - 0.02 * q + 0.01 * o - 0.015 * a + 0.005 * dd;
  };

  SUBCASE("reconstruction") {
    const auto res = toy::check_eg_loss_gradient(
        t, x, d,
        [&](const Sequence& f) { return loss_rec(input, f, t.binning, age); },
        [&](const Sequence& f, Sequence* g) {
          loss_rec(input, f, t.binning, age, g);
        },
        25, 1e-3, 1e-4, 43);
    CHECK(res.failed == 0);
    CHECK(res.checked == 25);
  }
  SUBCASE("voxel constraint") {
    const auto res = toy::check_eg_loss_gradient(
        t, x, d, [&](const Sequence& f) { return loss_vox(f, own); },
        [&](const Sequence& f, Sequence* g) { loss_vox(f, own, false, g); },
        25, 1e-3, 1e-4, 44);
    CHECK(res.failed == 0);
  }
  SUBCASE("region constraint") {
    const auto res = toy::check_eg_loss_gradient(
        t, x, d,
        [&](const Sequence& f) {
          return loss_reg(f, own, d, geometry, lr, 0.1);
        },
        [&](const Sequence& f, Sequence* g) {
          loss_reg(f, own, d, geometry, lr, 0.1, g);
        },
        25, 1e-3, 1e-4, 45);
    CHECK(res.failed == 0);
  }
}

TEST_CASE("adversarial loss gradients match finite differences") {
  toy::ToySetup t = toy::make_toy(51);
  Rng rng(52);
  const int B = 4;
  nn::Mat real(t.npix(), B), fake(t.npix(), B);
  for (long c = 0; c < B; ++c)
    for (long r = 0; r < t.npix(); ++r) {
      real(r, c) = rng.normal(0.0, 1.0);
      fake(r, c) = rng.normal(0.0, 1.0);
    }

  SUBCASE("brain discriminator parameters") {
    nn::Tape t_real, t_fake;
    const Eigen::ArrayXd p_real =
        t.disc_brain.forward(real, &t_real).row(0).transpose();
    const Eigen::ArrayXd p_fake =
        t.disc_brain.forward(fake, &t_fake).row(0).transpose();
    Eigen::ArrayXd d_real, d_fake;
    nn::bce_real_fake(p_real, p_fake, &d_real, &d_fake);
    nn::GradList grads = t.disc_brain.zero_grads();
    t.disc_brain.backward(t_real, d_real.matrix().transpose(), &grads);
    t.disc_brain.backward(t_fake, d_fake.matrix().transpose(), &grads);

    const auto res = toy::check_net_loss_gradient(
        t.disc_brain,
        [&]() {
          return core::loss_adv_brain(t.disc_brain, real, fake).discriminator;
        },
        toy::flat_grads(grads), 25, 1e-3, 1e-4, 53);
    CHECK(res.failed == 0);
  }

  SUBCASE("latent discriminator parameters") {
    nn::Mat prior(t.latent, B), enc(t.latent, B);
    for (long c = 0; c < B; ++c)
      for (long r = 0; r < t.latent; ++r) {
        prior(r, c) = rng.uniform(-1.0, 1.0);
        enc(r, c) = rng.uniform(-1.0, 1.0);
      }
    nn::Tape t_prior, t_enc;
    const Eigen::ArrayXd p_prior =
        t.disc_latent.forward(prior, &t_prior).row(0).transpose();
    const Eigen::ArrayXd p_enc =
        t.disc_latent.forward(enc, &t_enc).row(0).transpose();
    Eigen::ArrayXd d_prior, d_enc;
    nn::bce_real_fake(p_prior, p_enc, &d_prior, &d_enc);
    nn::GradList grads = t.disc_latent.zero_grads();
    t.disc_latent.backward(t_prior, d_prior.matrix().transpose(), &grads);
    t.disc_latent.backward(t_enc, d_enc.matrix().transpose(), &grads);

    const auto res = toy::check_net_loss_gradient(
        t.disc_latent,
        [&]() {
          return core::loss_adv_latent(t.disc_latent, prior, enc)
              .discriminator;
        },
        toy::flat_grads(grads), 25, 1e-3, 1e-4, 54);
    CHECK(res.failed == 0);
  }

  SUBCASE("generator through the frozen brain discriminator") {
    // d(-mean log D(fake))/d(G,E params); fake is the own-bin frame.
    Rng rx(55);
    nn::Vec x(t.npix());
    for (long i = 0; i < x.size(); ++i) x[i] = rx.normal(0.0, 1.0);
    const int own = 1, d = 1;

    auto fool_loss = [&](const Sequence& frames) {
      nn::Mat f(t.npix(), 1);
      f.col(0) = core::flatten(frames[static_cast<std::size_t>(own)]);
      const Eigen::ArrayXd p = t.disc_brain.forward(f).row(0).transpose();
      return nn::nonsat_gen_loss(p);
    };
    auto fool_grad = [&](const Sequence& frames, Sequence* g) {
      g->assign(frames.size(), Image::Zero(t.side, t.side));
      nn::Mat f(t.npix(), 1);
      f.col(0) = core::flatten(frames[static_cast<std::size_t>(own)]);
      nn::Tape tape;
      const Eigen::ArrayXd p = t.disc_brain.forward(f, &tape).row(0).transpose();
      Eigen::ArrayXd dp;
      nn::nonsat_gen_loss(p, &dp);
      const nn::Mat din =
          t.disc_brain.backward(tape, dp.matrix().transpose(), nullptr);
      (*g)[static_cast<std::size_t>(own)] =
          core::unflatten(din.col(0), t.side, t.side);
    };
    const auto res = toy::check_eg_loss_gradient(t, x, d, fool_loss, fool_grad,
                                                 25, 1e-3, 1e-4, 56);
    CHECK(res.failed == 0);
  }
}
