#include "prognet/slice_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

#include "json.hpp"
#include "prognet/errors.hpp"

namespace prognet::core {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void require_finite(double value, const std::string& name, long epoch) {
  if (!std::isfinite(value))
    throw TrainingError(name + " non-finite at epoch " + std::to_string(epoch));
}

json config_to_json(const ModelConfig& c) {
  return json{{"image_side", c.image_side},
              {"latent_dim", c.latent_dim},
              {"age_bins", c.age_bins},
              {"n_diagnoses", c.n_diagnoses},
              {"base_channels", c.base_channels},
              {"leaky_slope", c.leaky_slope},
              {"adam_lr", c.adam_lr},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"vox_hinge", c.vox_hinge},
              {"reg_epsilon", c.reg_epsilon}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.image_side = j.at("image_side").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.age_bins = j.at("age_bins").get<int>();
  c.n_diagnoses = j.at("n_diagnoses").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.adam_lr = j.at("adam_lr").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.vox_hinge = j.at("vox_hinge").get<bool>();
  c.reg_epsilon = j.at("reg_epsilon").get<double>();
  return c;
}

}  // namespace

int ModelConfig::downsample_steps() const {
  int steps = 0;
  int s = image_side;
  while (steps < 4 && s % 2 == 0 && s / 2 >= 2) {
    s /= 2;
    ++steps;
  }
  if (steps == 0)
    throw ValidationError("image_side must be even and at least 4");
  return steps;
}

int ModelConfig::top_spatial() const {
  return image_side >> downsample_steps();
}

int ModelConfig::top_channels() const {
  return base_channels * downsample_steps();
}

nn::Net build_encoder(const ModelConfig& cfg) {
  nn::Net net;
  const int nd = cfg.downsample_steps();
  int s = cfg.image_side;
  int cin = 1;
  for (int i = 1; i <= nd; ++i) {
    const int cout = cfg.base_channels * i;
    net.add(nn::make_conv2d(cin, s, s, cout, 3, 2, 1));
    s /= 2;
    net.add(nn::make_leaky_relu(cout * s * s, cfg.leaky_slope));
    cin = cout;
  }
  net.add(nn::make_dense(cin * s * s, cfg.latent_dim));
  net.add(nn::make_tanh(cfg.latent_dim));
  return net;
}

nn::Net build_generator(const ModelConfig& cfg) {
  nn::Net net;
  const int nd = cfg.downsample_steps();
  int s = cfg.top_spatial();
  int ch = cfg.top_channels();
  const int cond = cfg.latent_dim + cfg.age_bins + cfg.n_diagnoses;
  net.add(nn::make_dense(cond, ch * s * s));
  net.add(nn::make_leaky_relu(ch * s * s, cfg.leaky_slope));
  for (int i = nd; i >= 1; --i) {
    const int cout = std::max(cfg.base_channels, cfg.base_channels * (i - 1));
    net.add(nn::make_upsample2x(ch, s, s));
    s *= 2;
    net.add(nn::make_conv2d(ch, s, s, cout, 3, 1, 1));
    net.add(nn::make_leaky_relu(cout * s * s, cfg.leaky_slope));
    ch = cout;
  }
  net.add(nn::make_conv2d(ch, s, s, 1, 3, 1, 1));  // linear output
  return net;
}

nn::Net build_brain_discriminator(const ModelConfig& cfg) {
  nn::Net net;
  int s = cfg.image_side;
  const int c1 = cfg.base_channels;
  const int c2 = 2 * cfg.base_channels;
  net.add(nn::make_conv2d(1, s, s, c1, 3, 2, 1));
  s /= 2;
  net.add(nn::make_leaky_relu(c1 * s * s, cfg.leaky_slope));
  net.add(nn::make_conv2d(c1, s, s, c2, 3, 2, 1));
  s /= 2;
  net.add(nn::make_leaky_relu(c2 * s * s, cfg.leaky_slope));
  net.add(nn::make_dense(c2 * s * s, 32));
  net.add(nn::make_leaky_relu(32, cfg.leaky_slope));
  net.add(nn::make_dense(32, 1));
  net.add(nn::make_sigmoid(1));
  return net;
}

nn::Net build_latent_discriminator(const ModelConfig& cfg) {
  nn::Net net;
  net.add(nn::make_dense(cfg.latent_dim, 64));
  net.add(nn::make_leaky_relu(64, cfg.leaky_slope));
  net.add(nn::make_dense(64, 32));
  net.add(nn::make_leaky_relu(32, cfg.leaky_slope));
  net.add(nn::make_dense(32, 1));
  net.add(nn::make_sigmoid(1));
  return net;
}

SliceModelBundle SliceModelBundle::create(int slice_ordinal,
                                          const ModelConfig& cfg,
                                          std::uint64_t seed) {
  SliceModelBundle b;
  b.slice_ordinal = slice_ordinal;
  b.cfg = cfg;
  b.encoder = build_encoder(cfg);
  b.generator = build_generator(cfg);
  b.disc_brain = build_brain_discriminator(cfg);
  b.disc_latent = build_latent_discriminator(cfg);
  Rng r_e(Rng::derive(seed, 1)), r_g(Rng::derive(seed, 2)),
      r_db(Rng::derive(seed, 3)), r_dz(Rng::derive(seed, 4));
  b.encoder.init(r_e);
  b.generator.init(r_g);
  b.disc_brain.init(r_db);
  b.disc_latent.init(r_dz);
  b.opt_enc = nn::Adam(b.encoder, cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2);
  b.opt_gen = nn::Adam(b.generator, cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2);
  b.opt_db = nn::Adam(b.disc_brain, cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2);
  b.opt_dz = nn::Adam(b.disc_latent, cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2);
  return b;
}

nn::Vec SliceModelBundle::all_weights() const {
  const nn::Vec we = encoder.flat_weights();
  const nn::Vec wg = generator.flat_weights();
  const nn::Vec wb = disc_brain.flat_weights();
  const nn::Vec wz = disc_latent.flat_weights();
  nn::Vec all(we.size() + wg.size() + wb.size() + wz.size());
  all << we, wg, wb, wz;
  return all;
}

void SliceModelBundle::check_finite(const std::string& where) const {
  const nn::Vec all = all_weights();
  for (long i = 0; i < all.size(); ++i) {
    if (!std::isfinite(all[i]))
      throw TrainingError("non-finite parameter after " + where);
  }
}

namespace {

struct BatchView {
  nn::Mat x;                  // S^2 x B
  std::vector<double> ages;
  std::vector<int> diagnoses;
  std::vector<int> bins;
  long size() const { return x.cols(); }
};

BatchView gather_batch(const SliceDataset& data, const AgeBinning& binning,
                       const std::vector<long>& order, long begin, long end) {
  BatchView b;
  const long n = end - begin;
  b.x.resize(data.slices.rows(), n);
  b.ages.resize(static_cast<std::size_t>(n));
  b.diagnoses.resize(static_cast<std::size_t>(n));
  b.bins.resize(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    const long src = order[static_cast<std::size_t>(begin + i)];
    b.x.col(i) = data.slices.col(src);
    b.ages[static_cast<std::size_t>(i)] = data.ages[static_cast<std::size_t>(src)];
    b.diagnoses[static_cast<std::size_t>(i)] =
        data.diagnoses[static_cast<std::size_t>(src)];
    b.bins[static_cast<std::size_t>(i)] =
        binning.bin_of(b.ages[static_cast<std::size_t>(i)]);
  }
  return b;
}

/// Conditioned generator input: [z ; onehot(bin) ; onehot(diagnosis)].
nn::Mat condition_input(const nn::Mat& z, int bin, const std::vector<int>& diags,
                        const ModelConfig& cfg) {
  nn::Mat u = nn::Mat::Zero(z.rows() + cfg.age_bins + cfg.n_diagnoses, z.cols());
  u.topRows(z.rows()) = z;
  for (long p = 0; p < z.cols(); ++p) {
    u(z.rows() + bin, p) = 1.0;
    const int d = std::clamp(diags[static_cast<std::size_t>(p)], 0,
                             cfg.n_diagnoses - 1);
    u(z.rows() + cfg.age_bins + d, p) = 1.0;
  }
  return u;
}

nn::Mat uniform_latent(Rng& rng, int latent_dim, long cols) {
  nn::Mat z(latent_dim, cols);
  for (long c = 0; c < cols; ++c)
    for (int r = 0; r < latent_dim; ++r) z(r, c) = rng.uniform(-1.0, 1.0);
  return z;
}

RegionRatioPredictor identity_predictor() {
  return [](int, int, int, int) { return 1.0; };
}

}  // namespace

RegionRatioPredictor make_lr_predictor(const regionlr::LrBank& bank,
                                       const AgeBinning& binning,
                                       int slice_ordinal) {
  auto warned = std::make_shared<bool>(false);
  return [&bank, &binning, slice_ordinal, warned](int region, int earlier_bin,
                                                  int later_bin,
                                                  int diagnosis) -> double {
    const regionlr::RegionLR* model = bank.find(slice_ordinal, region);
    if (!model) {
      if (!*warned) {
        std::fprintf(stderr,
                     "warning: no regional regressor for slice %d region %d; "
                     "using identity ratio\n",
                     slice_ordinal, region);
        *warned = true;
      }
      return 1.0;
    }
    return model->predict(binning.bins[static_cast<std::size_t>(earlier_bin)].center,
                          binning.bins[static_cast<std::size_t>(later_bin)].center,
                          diagnosis);
  };
}

LossHistory train_slice_model(SliceModelBundle& bundle, const SliceDataset& data,
                              const TrainContext& ctx, const TrainOptions& opt) {
  if (!ctx.binning) throw ValidationError("train context lacks age binning");
  if (!ctx.schedule) throw ValidationError("train context lacks weight schedule");
  if (data.size() == 0) throw ValidationError("slice dataset is empty");
  const AgeBinning& binning = *ctx.binning;
  if (binning.size() != bundle.cfg.age_bins)
    throw ValidationError("age binning size differs from model age_bins");
  const int side = bundle.cfg.image_side;
  if (data.slices.rows() != static_cast<long>(side) * side)
    throw ValidationError("slice size differs from model image_side");

  const int A = bundle.cfg.age_bins;
  const int L = bundle.cfg.latent_dim;
  const RegionRatioPredictor predictor =
      ctx.predictor ? ctx.predictor : identity_predictor();
  const bool has_regions = !ctx.geometry.regions.empty();

  Rng rng(opt.seed);
  LossHistory history;
  long steps_done = 0;
  bool hit_step_limit = false;

  for (long e = 0; e < opt.epochs && !hit_step_limit; ++e) {
    const long global_epoch = bundle.epoch;
    const LossWeights weights = ctx.schedule(global_epoch);

    std::vector<long> order(static_cast<std::size_t>(data.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<long>(i);
    rng.shuffle(order);

    LossComponents epoch_sum;
    long batches = 0;

    for (long begin = 0; begin < data.size(); begin += opt.batch_size) {
      const long end = std::min<long>(begin + opt.batch_size, data.size());
      BatchView batch = gather_batch(data, binning, order, begin, end);
      const long B = batch.size();

      // Forward pass of the autoencoder with tapes for the later update.
      nn::Tape tape_enc;
      nn::Mat z = bundle.encoder.forward(batch.x, &tape_enc);

      std::vector<nn::Tape> tape_gen(static_cast<std::size_t>(A));
      std::vector<nn::Mat> frames(static_cast<std::size_t>(A));
      for (int i = 0; i < A; ++i) {
        const nn::Mat u = condition_input(z, i, batch.diagnoses, bundle.cfg);
        frames[static_cast<std::size_t>(i)] =
            bundle.generator.forward(u, &tape_gen[static_cast<std::size_t>(i)]);
      }
      nn::Mat own_fake(batch.x.rows(), B);
      for (long p = 0; p < B; ++p)
        own_fake.col(p) =
            frames[static_cast<std::size_t>(batch.bins[static_cast<std::size_t>(p)])]
                .col(p);

      // Brain discriminator step (Eq. 2 side).
      {
        nn::Tape t_real, t_fake;
        const Eigen::ArrayXd p_real =
            bundle.disc_brain.forward(batch.x, &t_real).row(0).transpose();
        const Eigen::ArrayXd p_fake =
            bundle.disc_brain.forward(own_fake, &t_fake).row(0).transpose();
        Eigen::ArrayXd d_real, d_fake;
        const double loss = nn::bce_real_fake(p_real, p_fake, &d_real, &d_fake);
        require_finite(loss, "adversarial brain loss", global_epoch);
        epoch_sum.adv_b += loss;
        nn::GradList grads = bundle.disc_brain.zero_grads();
        bundle.disc_brain.backward(t_real, d_real.matrix().transpose(), &grads);
        bundle.disc_brain.backward(t_fake, d_fake.matrix().transpose(), &grads);
        bundle.opt_db.step(bundle.disc_brain, grads);
      }

      // Latent discriminator step (Eq. 3 side).
      {
        const nn::Mat prior = uniform_latent(rng, L, B);
        nn::Tape t_prior, t_enc;
        const Eigen::ArrayXd p_prior =
            bundle.disc_latent.forward(prior, &t_prior).row(0).transpose();
        const Eigen::ArrayXd p_enc =
            bundle.disc_latent.forward(z, &t_enc).row(0).transpose();
        Eigen::ArrayXd d_prior, d_enc;
        const double loss = nn::bce_real_fake(p_prior, p_enc, &d_prior, &d_enc);
        require_finite(loss, "adversarial latent loss", global_epoch);
        epoch_sum.adv_z += loss;
        nn::GradList grads = bundle.disc_latent.zero_grads();
        bundle.disc_latent.backward(t_prior, d_prior.matrix().transpose(), &grads);
        bundle.disc_latent.backward(t_enc, d_enc.matrix().transpose(), &grads);
        bundle.opt_dz.step(bundle.disc_latent, grads);
      }

      // Encoder+generator step on the weighted total (Eq. 6).
      std::vector<nn::Mat> d_frames(static_cast<std::size_t>(A));
      for (auto& m : d_frames) m = nn::Mat::Zero(batch.x.rows(), B);

      double rec_sum = 0.0, vox_sum = 0.0, reg_sum = 0.0;
      Sequence sample_frames(static_cast<std::size_t>(A));
      Sequence g_rec, g_vox, g_reg;
      for (long p = 0; p < B; ++p) {
        const Image input = unflatten(batch.x.col(p), side, side);
        for (int i = 0; i < A; ++i)
          sample_frames[static_cast<std::size_t>(i)] =
              unflatten(frames[static_cast<std::size_t>(i)].col(p), side, side);
        const int own_bin = batch.bins[static_cast<std::size_t>(p)];
        const double age = batch.ages[static_cast<std::size_t>(p)];

        rec_sum += loss_rec(input, sample_frames, binning, age, &g_rec);
        vox_sum +=
            loss_vox(sample_frames, own_bin, bundle.cfg.vox_hinge, &g_vox);
        if (has_regions)
          reg_sum += loss_reg(sample_frames, own_bin,
                              batch.diagnoses[static_cast<std::size_t>(p)],
                              ctx.geometry, predictor, bundle.cfg.reg_epsilon,
                              &g_reg);

        for (int i = 0; i < A; ++i) {
          auto col = d_frames[static_cast<std::size_t>(i)].col(p);
          col += (weights.rec / B) * flatten(g_rec[static_cast<std::size_t>(i)]);
          col += (weights.vox / B) * flatten(g_vox[static_cast<std::size_t>(i)]);
          if (has_regions)
            col += (weights.reg / B) * flatten(g_reg[static_cast<std::size_t>(i)]);
        }
      }
      require_finite(rec_sum, "reconstruction loss", global_epoch);
      require_finite(vox_sum, "voxel constraint loss", global_epoch);
      require_finite(reg_sum, "region constraint loss", global_epoch);
      epoch_sum.rec += rec_sum / static_cast<double>(B);
      epoch_sum.vox += vox_sum / static_cast<double>(B);
      epoch_sum.reg += reg_sum / static_cast<double>(B);

      // Non-saturating fooling terms against the freshly stepped critics.
      nn::Mat dz_total = nn::Mat::Zero(L, B);
      {
        nn::Tape t_fake;
        const Eigen::ArrayXd p_fake =
            bundle.disc_brain.forward(own_fake, &t_fake).row(0).transpose();
        Eigen::ArrayXd d_fake;
        const double gen_loss = nn::nonsat_gen_loss(p_fake, &d_fake);
        require_finite(gen_loss, "generator fooling loss", global_epoch);
        const nn::Mat d_input = bundle.disc_brain.backward(
            t_fake, d_fake.matrix().transpose(), nullptr);
        for (long p = 0; p < B; ++p)
          d_frames[static_cast<std::size_t>(batch.bins[static_cast<std::size_t>(p)])]
              .col(p) += weights.b * d_input.col(p);
      }
      {
        nn::Tape t_enc;
        const Eigen::ArrayXd p_enc =
            bundle.disc_latent.forward(z, &t_enc).row(0).transpose();
        Eigen::ArrayXd d_enc;
        const double enc_loss = nn::nonsat_gen_loss(p_enc, &d_enc);
        require_finite(enc_loss, "encoder fooling loss", global_epoch);
        dz_total += weights.z * bundle.disc_latent.backward(
                                    t_enc, d_enc.matrix().transpose(), nullptr);
      }

      nn::GradList grads_gen = bundle.generator.zero_grads();
      for (int i = 0; i < A; ++i) {
        const nn::Mat du = bundle.generator.backward(
            tape_gen[static_cast<std::size_t>(i)],
            d_frames[static_cast<std::size_t>(i)], &grads_gen);
        dz_total += du.topRows(L);
      }
      nn::GradList grads_enc = bundle.encoder.zero_grads();
      bundle.encoder.backward(tape_enc, dz_total, &grads_enc);
      bundle.opt_gen.step(bundle.generator, grads_gen);
      bundle.opt_enc.step(bundle.encoder, grads_enc);

      ++batches;
      ++steps_done;
      if (opt.step_limit > 0 && steps_done >= opt.step_limit) {
        hit_step_limit = true;
        break;
      }
    }

    const double inv = 1.0 / static_cast<double>(batches);
    EpochLosses entry;
    entry.epoch = global_epoch;
    entry.components.rec = epoch_sum.rec * inv;
    entry.components.vox = epoch_sum.vox * inv;
    entry.components.reg = epoch_sum.reg * inv;
    entry.components.adv_b = epoch_sum.adv_b * inv;
    entry.components.adv_z = epoch_sum.adv_z * inv;
    entry.total = loss_total(entry.components, weights);
    history.push_back(entry);

    ++bundle.epoch;
    bundle.check_finite("epoch " + std::to_string(global_epoch));
  }
  return history;
}

Sequence generate_sequence(const SliceModelBundle& bundle, const Image& input,
                           int diagnosis) {
  const int side = bundle.cfg.image_side;
  if (input.rows() != side || input.cols() != side)
    throw ValidationError("generate_sequence: slice shape mismatch");
  nn::Mat x(static_cast<long>(side) * side, 1);
  x.col(0) = flatten(input);
  const nn::Mat z = bundle.encoder.forward(x);
  Sequence out;
  std::vector<int> diag{diagnosis};
  for (int i = 0; i < bundle.cfg.age_bins; ++i) {
    const nn::Mat u = condition_input(z, i, diag, bundle.cfg);
    const nn::Mat frame = bundle.generator.forward(u);
    out.push_back(unflatten(frame.col(0), side, side));
  }
  return out;
}

LossComponents evaluate_losses(const SliceModelBundle& bundle,
                               const SliceDataset& data,
                               const TrainContext& ctx, std::uint64_t seed) {
  if (!ctx.binning) throw ValidationError("context lacks age binning");
  if (data.size() == 0) throw ValidationError("dataset is empty");
  const AgeBinning& binning = *ctx.binning;
  const int side = bundle.cfg.image_side;
  const int A = bundle.cfg.age_bins;
  const RegionRatioPredictor predictor =
      ctx.predictor ? ctx.predictor : identity_predictor();
  const bool has_regions = !ctx.geometry.regions.empty();

  Rng rng(seed);
  const long N = data.size();
  const nn::Mat z = bundle.encoder.forward(data.slices);

  std::vector<nn::Mat> frames(static_cast<std::size_t>(A));
  for (int i = 0; i < A; ++i)
    frames[static_cast<std::size_t>(i)] = bundle.generator.forward(
        condition_input(z, i, data.diagnoses, bundle.cfg));

  LossComponents out;
  nn::Mat own_fake(data.slices.rows(), N);
  Sequence sample_frames(static_cast<std::size_t>(A));
  for (long p = 0; p < N; ++p) {
    const double age = data.ages[static_cast<std::size_t>(p)];
    const int own_bin = binning.bin_of(age);
    own_fake.col(p) = frames[static_cast<std::size_t>(own_bin)].col(p);
    const Image input = unflatten(data.slices.col(p), side, side);
    for (int i = 0; i < A; ++i)
      sample_frames[static_cast<std::size_t>(i)] =
          unflatten(frames[static_cast<std::size_t>(i)].col(p), side, side);
    out.rec += loss_rec(input, sample_frames, binning, age);
    out.vox += loss_vox(sample_frames, own_bin, bundle.cfg.vox_hinge);
    if (has_regions)
      out.reg += loss_reg(sample_frames, own_bin,
                          data.diagnoses[static_cast<std::size_t>(p)],
                          ctx.geometry, predictor, bundle.cfg.reg_epsilon);
  }
  out.rec /= static_cast<double>(N);
  out.vox /= static_cast<double>(N);
  out.reg /= static_cast<double>(N);

  out.adv_b = loss_adv_brain(bundle.disc_brain, data.slices, own_fake)
                  .discriminator;
  const nn::Mat prior = uniform_latent(rng, bundle.cfg.latent_dim, N);
  out.adv_z = loss_adv_latent(bundle.disc_latent, prior, z).discriminator;
  return out;
}

void save_bundle(const SliceModelBundle& bundle, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["slice_ordinal"] = bundle.slice_ordinal;
  manifest["epoch"] = bundle.epoch;
  manifest["config"] = config_to_json(bundle.cfg);
  std::ofstream mf(dir + "/manifest.json");
  if (!mf) throw IoError("cannot write bundle manifest in " + dir);
  mf << manifest.dump(2) << "\n";

  std::ofstream blob(dir + "/params.bin", std::ios::binary);
  if (!blob) throw IoError("cannot write bundle weights in " + dir);
  bundle.encoder.save_weights(blob);
  bundle.generator.save_weights(blob);
  bundle.disc_brain.save_weights(blob);
  bundle.disc_latent.save_weights(blob);
  bundle.opt_enc.save(blob);
  bundle.opt_gen.save(blob);
  bundle.opt_db.save(blob);
  bundle.opt_dz.save(blob);
  if (!blob) throw IoError("failed writing bundle weights in " + dir);
}

SliceModelBundle load_bundle(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw CheckpointError("missing bundle manifest in " + dir);
  json manifest;
  mf >> manifest;
  SliceModelBundle bundle = SliceModelBundle::create(
      manifest.at("slice_ordinal").get<int>(),
      config_from_json(manifest.at("config")), /*seed=*/0);
  bundle.epoch = manifest.at("epoch").get<long>();

  std::ifstream blob(dir + "/params.bin", std::ios::binary);
  if (!blob) throw CheckpointError("missing bundle weights in " + dir);
  bundle.encoder.load_weights(blob);
  bundle.generator.load_weights(blob);
  bundle.disc_brain.load_weights(blob);
  bundle.disc_latent.load_weights(blob);
  bundle.opt_enc.load(blob, bundle.encoder);
  bundle.opt_gen.load(blob, bundle.generator);
  bundle.opt_db.load(blob, bundle.disc_brain);
  bundle.opt_dz.load(blob, bundle.disc_latent);
  return bundle;
}

void save_history(const LossHistory& history, const std::string& path) {
  json arr = json::array();
  for (const auto& e : history) {
    arr.push_back({{"epoch", e.epoch},
                   {"rec", e.components.rec},
                   {"vox", e.components.vox},
                   {"reg", e.components.reg},
                   {"adv_b", e.components.adv_b},
                   {"adv_z", e.components.adv_z},
                   {"total", e.total}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss history " + path);
  out << arr.dump(2) << "\n";
}

LossHistory load_history(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open loss history " + path);
  json arr;
  in >> arr;
  LossHistory history;
  for (const auto& j : arr) {
    EpochLosses e;
    e.epoch = j.at("epoch").get<long>();
    e.components.rec = j.at("rec").get<double>();
    e.components.vox = j.at("vox").get<double>();
    e.components.reg = j.at("reg").get<double>();
    e.components.adv_b = j.at("adv_b").get<double>();
    e.components.adv_z = j.at("adv_z").get<double>();
    e.total = j.at("total").get<double>();
    history.push_back(e);
  }
  return history;
}

}  // namespace prognet::core
