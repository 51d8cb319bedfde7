#include "prognet/superres.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "prognet/errors.hpp"

namespace prognet::superres {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kLeakySlope = 0.2;

struct ShapedNet {
  // conv layers instantiated for one input shape, weights shared by copy
  std::vector<std::unique_ptr<nn::Layer>> convs;
  int d = 0, h = 0, w = 0;
  int depth = 0, growth = 0;
};

ShapedNet instantiate(const SrConfig& cfg, const std::vector<nn::Vec>& weights,
                      int d, int h, int w) {
  ShapedNet net;
  net.d = d;
  net.h = h;
  net.w = w;
  net.depth = cfg.dense_depth;
  net.growth = cfg.growth;
  net.convs.push_back(nn::make_conv3d(1, d, h, w, cfg.growth, 3, 1));
  for (int l = 1; l <= cfg.dense_depth; ++l)
    net.convs.push_back(
        nn::make_conv3d(cfg.growth * l, d, h, w, cfg.growth, 3, 1));
  net.convs.push_back(
      nn::make_conv3d(cfg.growth * (cfg.dense_depth + 1), d, h, w, 1, 1, 0));
  if (weights.size() != net.convs.size())
    throw ValidationError("super-resolution weight bank has wrong layer count");
  for (std::size_t i = 0; i < net.convs.size(); ++i) {
    if (net.convs[i]->weights().size() != weights[i].size())
      throw ValidationError("super-resolution weight size mismatch");
    net.convs[i]->weights() = weights[i];
  }
  return net;
}

nn::Mat leaky(const nn::Mat& x) {
  return x.array().max(0.0).matrix() + kLeakySlope * x.array().min(0.0).matrix();
}

nn::Mat leaky_back(const nn::Mat& x, const nn::Mat& dy) {
  return (x.array() > 0.0).select(dy.array(), kLeakySlope * dy.array());
}

struct DenseTrace {
  std::vector<nn::Mat> pre;    // pre-activation output of each dense conv
  std::vector<nn::Mat> feats;  // post-activation features f0..f_depth
  nn::Mat cat_all;             // concat of all feats (input to final conv)
  nn::Mat residual;
};

/// Forward through the dense block; x has one column per patch.
nn::Mat dense_forward(const ShapedNet& net, const nn::Mat& x, DenseTrace* tr) {
  const long npix = x.rows();
  const long B = x.cols();
  const int g = net.growth;
  std::vector<nn::Mat> feats;
  std::vector<nn::Mat> pre;

  nn::Mat p0 = net.convs[0]->forward(x);
  feats.push_back(leaky(p0));
  pre.push_back(std::move(p0));

  for (int l = 1; l <= net.depth; ++l) {
    nn::Mat cat(static_cast<long>(g) * l * npix, B);
    for (int i = 0; i < l; ++i)
      cat.middleRows(static_cast<long>(i) * g * npix, g * npix) =
          feats[static_cast<std::size_t>(i)];
    nn::Mat pl = net.convs[static_cast<std::size_t>(l)]->forward(cat);
    feats.push_back(leaky(pl));
    pre.push_back(std::move(pl));
  }

  nn::Mat cat_all(static_cast<long>(g) * (net.depth + 1) * npix, B);
  for (int i = 0; i <= net.depth; ++i)
    cat_all.middleRows(static_cast<long>(i) * g * npix, g * npix) =
        feats[static_cast<std::size_t>(i)];
  nn::Mat residual = net.convs.back()->forward(cat_all);

  if (tr) {
    tr->pre = std::move(pre);
    tr->feats = std::move(feats);
    tr->cat_all = cat_all;
    tr->residual = residual;
  }
  return x + residual;
}

/// Backward through the dense block, accumulating per-conv weight grads.
void dense_backward(const ShapedNet& net, const nn::Mat& x,
                    const DenseTrace& tr, const nn::Mat& dy,
                    std::vector<nn::Vec>* grads) {
  const long npix = x.rows();
  const long B = x.cols();
  const int g = net.growth;

  std::vector<nn::Mat> dfeats(static_cast<std::size_t>(net.depth + 1));
  for (auto& m : dfeats) m = nn::Mat::Zero(static_cast<long>(g) * npix, B);

  // Residual projection.
  {
    nn::Mat dcat = net.convs.back()->backward(
        tr.cat_all, tr.residual, dy, &(*grads)[grads->size() - 1]);
    for (int i = 0; i <= net.depth; ++i)
      dfeats[static_cast<std::size_t>(i)] +=
          dcat.middleRows(static_cast<long>(i) * g * npix, g * npix);
  }

  for (int l = net.depth; l >= 1; --l) {
    nn::Mat cat(static_cast<long>(g) * l * npix, B);
    for (int i = 0; i < l; ++i)
      cat.middleRows(static_cast<long>(i) * g * npix, g * npix) =
          tr.feats[static_cast<std::size_t>(i)];
    const nn::Mat dpre = leaky_back(tr.pre[static_cast<std::size_t>(l)],
                                    dfeats[static_cast<std::size_t>(l)]);
    nn::Mat dcat = net.convs[static_cast<std::size_t>(l)]->backward(
        cat, tr.pre[static_cast<std::size_t>(l)], dpre,
        &(*grads)[static_cast<std::size_t>(l)]);
    for (int i = 0; i < l; ++i)
      dfeats[static_cast<std::size_t>(i)] +=
          dcat.middleRows(static_cast<long>(i) * g * npix, g * npix);
  }

  const nn::Mat dpre0 = leaky_back(tr.pre[0], dfeats[0]);
  net.convs[0]->backward(x, tr.pre[0], dpre0, &(*grads)[0]);
}

}  // namespace

std::vector<SrPair> make_lr_hr_pairs(const std::vector<Grid3>& hr_volumes,
                                     const std::vector<Grid3>& lr_volumes) {
  if (hr_volumes.size() != lr_volumes.size())
    throw ValidationError("HR/LR volume lists differ in length");
  std::vector<SrPair> pairs;
  for (std::size_t i = 0; i < hr_volumes.size(); ++i) {
    if (!hr_volumes[i].same_shape(lr_volumes[i])) {
      std::fprintf(stderr,
                   "warning: dropping super-resolution pair %zu (shape "
                   "mismatch)\n",
                   i);
      continue;
    }
    pairs.push_back({lr_volumes[i], hr_volumes[i]});
  }
  return pairs;
}

SrModel::SrModel(const SrConfig& cfg) : cfg_(cfg) {
  for (long n : expected_sizes()) conv_weights_.push_back(nn::Vec::Zero(n));
}

std::vector<long> SrModel::expected_sizes() const {
  std::vector<long> sizes;
  const int g = cfg_.growth;
  sizes.push_back(static_cast<long>(g) * 1 * 27 + g);
  for (int l = 1; l <= cfg_.dense_depth; ++l)
    sizes.push_back(static_cast<long>(g) * (g * l) * 27 + g);
  sizes.push_back(static_cast<long>(1) * (g * (cfg_.dense_depth + 1)) + 1);
  return sizes;
}

SrModel SrModel::random_init(const SrConfig& cfg, std::uint64_t seed) {
  SrModel model(cfg);
  // Borrow layer init by instantiating at a token shape.
  ShapedNet net = instantiate(cfg, model.conv_weights_, 4, 4, 4);
  Rng rng(seed);
  for (std::size_t i = 0; i < net.convs.size(); ++i) {
    net.convs[i]->init(rng);
    model.conv_weights_[i] = net.convs[i]->weights();
  }
  // A small residual at start keeps early SR output close to its input.
  model.conv_weights_.back() *= 0.1;
  return model;
}

nn::Vec SrModel::flat_weights() const {
  long total = 0;
  for (const auto& w : conv_weights_) total += w.size();
  nn::Vec out(total);
  long at = 0;
  for (const auto& w : conv_weights_) {
    out.segment(at, w.size()) = w;
    at += w.size();
  }
  return out;
}

void SrModel::set_flat_weights(const nn::Vec& w) {
  long at = 0;
  for (auto& cw : conv_weights_) {
    if (at + cw.size() > w.size())
      throw ValidationError("super-resolution flat weight size mismatch");
    cw = w.segment(at, cw.size());
    at += cw.size();
  }
  if (at != w.size())
    throw ValidationError("super-resolution flat weight size mismatch");
}

void SrModel::zero_residual_branch() { conv_weights_.back().setZero(); }

Grid3 SrModel::apply(const Grid3& volume) const {
  ShapedNet net = instantiate(cfg_, conv_weights_, volume.nz(), volume.ny(),
                              volume.nx());
  nn::Mat x(static_cast<long>(volume.size()), 1);
  for (std::size_t i = 0; i < volume.raw().size(); ++i)
    x(static_cast<long>(i), 0) = volume.raw()[i];
  const nn::Mat y = dense_forward(net, x, nullptr);
  Grid3 out(volume.nz(), volume.ny(), volume.nx());
  for (std::size_t i = 0; i < out.raw().size(); ++i) {
    out.raw()[i] = y(static_cast<long>(i), 0);
    if (!std::isfinite(out.raw()[i]))
      throw TrainingError("super-resolution output is non-finite");
  }
  return out;
}

std::vector<SrEpochLoss> train_sr(SrModel& model,
                                  const std::vector<SrPair>& pairs,
                                  long epochs, std::uint64_t seed) {
  if (pairs.empty()) throw ValidationError("train_sr: no LR/HR pairs");
  std::vector<SrEpochLoss> history;
  if (epochs <= 0) return history;

  const SrConfig& cfg = model.config();
  Rng rng(seed);

  // Patch shape clamped to the smallest pair volume.
  int pd = cfg.patch, ph = cfg.patch, pw = cfg.patch;
  for (const auto& pr : pairs) {
    pd = std::min(pd, pr.hr.nz());
    ph = std::min(ph, pr.hr.ny());
    pw = std::min(pw, pr.hr.nx());
  }
  const long npix = static_cast<long>(pd) * ph * pw;

  ShapedNet net = instantiate(cfg, model.conv_weights_, pd, ph, pw);

  // Adam state per conv weight vector.
  std::vector<nn::Vec> m, v;
  for (const auto& w : model.conv_weights_) {
    m.push_back(nn::Vec::Zero(w.size()));
    v.push_back(nn::Vec::Zero(w.size()));
  }
  long t = 0;

  auto extract = [&](const Grid3& vol, int z0, int y0, int x0, double* dst) {
    for (int z = 0; z < pd; ++z)
      for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x)
          dst[(static_cast<long>(z) * ph + y) * pw + x] =
              vol.at(z0 + z, y0 + y, x0 + x);
  };

  for (long e = 0; e < epochs; ++e) {
    // One patch draw list per epoch, shuffled across pairs.
    struct Draw { std::size_t pair; int z, y, x; };
    std::vector<Draw> draws;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto& hr = pairs[p].hr;
      for (int k = 0; k < cfg.patches_per_pair; ++k) {
        Draw d;
        d.pair = p;
        d.z = hr.nz() > pd ? static_cast<int>(rng.below(hr.nz() - pd + 1)) : 0;
        d.y = hr.ny() > ph ? static_cast<int>(rng.below(hr.ny() - ph + 1)) : 0;
        d.x = hr.nx() > pw ? static_cast<int>(rng.below(hr.nx() - pw + 1)) : 0;
        draws.push_back(d);
      }
    }
    rng.shuffle(draws);

    double epoch_mse = 0.0;
    long batches = 0;
    for (std::size_t at = 0; at < draws.size(); at += cfg.batch_patches) {
      const long B = static_cast<long>(
          std::min<std::size_t>(cfg.batch_patches, draws.size() - at));
      nn::Mat lr(npix, B), hr(npix, B);
      for (long b = 0; b < B; ++b) {
        const Draw& d = draws[at + static_cast<std::size_t>(b)];
        extract(pairs[d.pair].lr, d.z, d.y, d.x, lr.col(b).data());
        extract(pairs[d.pair].hr, d.z, d.y, d.x, hr.col(b).data());
      }

      DenseTrace tr;
      const nn::Mat out = dense_forward(net, lr, &tr);
      const nn::Mat diff = out - hr;
      const double loss = diff.squaredNorm() / static_cast<double>(npix * B);
      if (!std::isfinite(loss))
        throw TrainingError("super-resolution loss non-finite at epoch " +
                            std::to_string(e));
      epoch_mse += loss;
      ++batches;

      std::vector<nn::Vec> grads;
      for (const auto& w : model.conv_weights_)
        grads.push_back(nn::Vec::Zero(w.size()));
      const nn::Mat dy = (2.0 / static_cast<double>(npix * B)) * diff;
      dense_backward(net, lr, tr, dy, &grads);

      ++t;
      const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
      for (std::size_t i = 0; i < grads.size(); ++i) {
        m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * grads[i];
        v[i] = cfg.adam_beta2 * v[i] +
               (1.0 - cfg.adam_beta2) * grads[i].cwiseProduct(grads[i]);
        net.convs[i]->weights().array() -=
            cfg.adam_lr * (m[i].array() / bc1) /
            ((v[i].array() / bc2).sqrt() + 1e-8);
      }
    }
    history.push_back({e, epoch_mse / static_cast<double>(batches)});
  }

  for (std::size_t i = 0; i < net.convs.size(); ++i)
    model.conv_weights_[i] = net.convs[i]->weights();
  return history;
}

double mse(const Grid3& a, const Grid3& b) {
  if (!a.same_shape(b)) throw ValidationError("mse: volume shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.raw().size(); ++i) {
    const double d = a.raw()[i] - b.raw()[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double psnr(const Grid3& test, const Grid3& reference) {
  double lo = reference.raw()[0], hi = reference.raw()[0];
  for (double v : reference.raw()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = hi - lo;
  const double err = mse(test, reference);
  if (err <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(range * range / err);
}

Grid3 trilinear_control(const Grid3& volume) {
  const int dz = std::max(1, volume.nz() / 2);
  const int dy = std::max(1, volume.ny() / 2);
  const int dx = std::max(1, volume.nx() / 2);
  Grid3 down(dz, dy, dx);
  for (int z = 0; z < dz; ++z)
    for (int y = 0; y < dy; ++y)
      for (int x = 0; x < dx; ++x) {
        double acc = 0.0;
        int n = 0;
        for (int oz = 0; oz < 2; ++oz)
          for (int oy = 0; oy < 2; ++oy)
            for (int ox = 0; ox < 2; ++ox) {
              const int zz = 2 * z + oz, yy = 2 * y + oy, xx = 2 * x + ox;
              if (zz < volume.nz() && yy < volume.ny() && xx < volume.nx()) {
                acc += volume.at(zz, yy, xx);
                ++n;
              }
            }
        down.at(z, y, x) = acc / n;
      }

  Grid3 up(volume.nz(), volume.ny(), volume.nx());
  auto sample = [&](double z, double y, double x) {
    z = std::clamp(z, 0.0, static_cast<double>(dz - 1));
    y = std::clamp(y, 0.0, static_cast<double>(dy - 1));
    x = std::clamp(x, 0.0, static_cast<double>(dx - 1));
    const int z0 = static_cast<int>(z), y0 = static_cast<int>(y),
              x0 = static_cast<int>(x);
    const int z1 = std::min(z0 + 1, dz - 1), y1 = std::min(y0 + 1, dy - 1),
              x1 = std::min(x0 + 1, dx - 1);
    const double fz = z - z0, fy = y - y0, fx = x - x0;
    auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
    const double c00 = lerp(down.at(z0, y0, x0), down.at(z0, y0, x1), fx);
    const double c01 = lerp(down.at(z0, y1, x0), down.at(z0, y1, x1), fx);
    const double c10 = lerp(down.at(z1, y0, x0), down.at(z1, y0, x1), fx);
    const double c11 = lerp(down.at(z1, y1, x0), down.at(z1, y1, x1), fx);
    return lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz);
  };
  for (int z = 0; z < up.nz(); ++z)
    for (int y = 0; y < up.ny(); ++y)
      for (int x = 0; x < up.nx(); ++x)
        up.at(z, y, x) = sample((z - 0.5) / 2.0, (y - 0.5) / 2.0,
                                (x - 0.5) / 2.0);
  return up;
}

void SrModel::save(const std::string& dir) const {
  fs::create_directories(dir);
  json manifest;
  manifest["dense_depth"] = cfg_.dense_depth;
  manifest["growth"] = cfg_.growth;
  manifest["patch"] = cfg_.patch;
  manifest["batch_patches"] = cfg_.batch_patches;
  manifest["patches_per_pair"] = cfg_.patches_per_pair;
  manifest["adam_lr"] = cfg_.adam_lr;
  manifest["adam_beta1"] = cfg_.adam_beta1;
  manifest["adam_beta2"] = cfg_.adam_beta2;
  std::ofstream mf(dir + "/manifest.json");
  if (!mf) throw IoError("cannot write SR manifest in " + dir);
  mf << manifest.dump(2) << "\n";

  std::ofstream blob(dir + "/weights.bin", std::ios::binary);
  if (!blob) throw IoError("cannot write SR weights in " + dir);
  const std::uint64_t layers = conv_weights_.size();
  blob.write(reinterpret_cast<const char*>(&layers), sizeof(layers));
  for (const auto& w : conv_weights_) {
    const std::uint64_t n = static_cast<std::uint64_t>(w.size());
    blob.write(reinterpret_cast<const char*>(&n), sizeof(n));
    blob.write(reinterpret_cast<const char*>(w.data()),
               static_cast<std::streamsize>(n * sizeof(double)));
  }
}

SrModel SrModel::load(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw CheckpointError("missing SR manifest in " + dir);
  json manifest;
  mf >> manifest;
  SrConfig cfg;
  cfg.dense_depth = manifest.at("dense_depth").get<int>();
  cfg.growth = manifest.at("growth").get<int>();
  cfg.patch = manifest.at("patch").get<int>();
  cfg.batch_patches = manifest.value("batch_patches", cfg.batch_patches);
  cfg.patches_per_pair = manifest.value("patches_per_pair", cfg.patches_per_pair);
  cfg.adam_lr = manifest.value("adam_lr", cfg.adam_lr);
  cfg.adam_beta1 = manifest.value("adam_beta1", cfg.adam_beta1);
  cfg.adam_beta2 = manifest.value("adam_beta2", cfg.adam_beta2);

  SrModel model(cfg);
  std::ifstream blob(dir + "/weights.bin", std::ios::binary);
  if (!blob) throw CheckpointError("missing SR weights in " + dir);
  std::uint64_t layers = 0;
  blob.read(reinterpret_cast<char*>(&layers), sizeof(layers));
  if (!blob || layers != model.conv_weights_.size())
    throw CheckpointError("SR weight bank layer count mismatch in " + dir);
  for (auto& w : model.conv_weights_) {
    std::uint64_t n = 0;
    blob.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (!blob || n != static_cast<std::uint64_t>(w.size()))
      throw CheckpointError("SR weight size mismatch in " + dir);
    blob.read(reinterpret_cast<char*>(w.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    if (!blob) throw CheckpointError("truncated SR weights in " + dir);
  }
  return model;
}

}  // namespace prognet::superres
