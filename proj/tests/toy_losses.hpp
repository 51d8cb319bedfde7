// Shared test helper: small smooth (tanh) encoder/generator/discriminator
// stacks plus central-difference gradient checks for each loss path. Used
// by the unit tests and the acceptance suite.
#pragma once

#include <cmath>
#include <functional>

#include "prognet/binning.hpp"
#include "prognet/losses.hpp"
#include "prognet/nn.hpp"
#include "prognet/rng.hpp"

namespace toy {

using namespace prognet;

struct ToySetup {
  int side = 4;
  int latent = 4;
  int bins = 3;
  int diagnoses = 4;
  nn::Net encoder, generator, disc_brain, disc_latent;
  core::AgeBinning binning;

  int npix() const { return side * side; }
};

inline ToySetup make_toy(std::uint64_t seed) {
  ToySetup t;
  const int npix = t.npix();
  t.encoder.add(nn::make_dense(npix, 5));
  t.encoder.add(nn::make_tanh(5));
  t.encoder.add(nn::make_dense(5, t.latent));
  t.encoder.add(nn::make_tanh(t.latent));

  const int cond = t.latent + t.bins + t.diagnoses;
  t.generator.add(nn::make_dense(cond, 6));
  t.generator.add(nn::make_tanh(6));
  t.generator.add(nn::make_dense(6, npix));

  t.disc_brain.add(nn::make_dense(npix, 6));
  t.disc_brain.add(nn::make_tanh(6));
  t.disc_brain.add(nn::make_dense(6, 1));
  t.disc_brain.add(nn::make_sigmoid(1));

  t.disc_latent.add(nn::make_dense(t.latent, 8));
  t.disc_latent.add(nn::make_tanh(8));
  t.disc_latent.add(nn::make_dense(8, 1));
  t.disc_latent.add(nn::make_sigmoid(1));

  Rng r1(Rng::derive(seed, 1)), r2(Rng::derive(seed, 2)),
      r3(Rng::derive(seed, 3)), r4(Rng::derive(seed, 4));
  t.encoder.init(r1);
  t.generator.init(r2);
  t.disc_brain.init(r3);
  t.disc_latent.init(r4);

  for (int i = 0; i < t.bins; ++i) {
    core::AgeBinning::Bin b;
    b.center = 68.0 + 4.0 * i;
    b.sigma = 2.0;
    b.delta = 4.0;
    b.lower = i == 0 ? -1e308 : b.center - 2.0;
    b.upper = i == t.bins - 1 ? 1e308 : b.center + 2.0;
    t.binning.bins.push_back(b);
  }
  return t;
}

/// Frames for one input column under the current E/G weights.
inline core::Sequence toy_frames(const ToySetup& t, const nn::Vec& x, int d,
                                 std::vector<nn::Tape>* gen_tapes = nullptr,
                                 nn::Tape* enc_tape = nullptr) {
  nn::Mat xm(x.size(), 1);
  xm.col(0) = x;
  const nn::Mat z = t.encoder.forward(xm, enc_tape);
  core::Sequence frames;
  if (gen_tapes) gen_tapes->assign(static_cast<std::size_t>(t.bins), {});
  for (int i = 0; i < t.bins; ++i) {
    nn::Mat u = nn::Mat::Zero(t.latent + t.bins + t.diagnoses, 1);
    u.topRows(t.latent) = z;
    u(t.latent + i, 0) = 1.0;
    u(t.latent + t.bins + d, 0) = 1.0;
    const nn::Mat g = t.generator.forward(
        u, gen_tapes ? &(*gen_tapes)[static_cast<std::size_t>(i)] : nullptr);
    frames.push_back(core::unflatten(g.col(0), t.side, t.side));
  }
  return frames;
}

/// Backpropagates per-frame gradients through G and E, returning flat
/// parameter gradients for both nets concatenated (E first).
inline nn::Vec toy_backward(const ToySetup& t, const core::Sequence& dframes,
                            const std::vector<nn::Tape>& gen_tapes,
                            const nn::Tape& enc_tape) {
  nn::GradList g_gen = t.generator.zero_grads();
  nn::Mat dz = nn::Mat::Zero(t.latent, 1);
  for (int i = 0; i < t.bins; ++i) {
    nn::Mat df(t.npix(), 1);
    df.col(0) = core::flatten(dframes[static_cast<std::size_t>(i)]);
    const nn::Mat du = t.generator.backward(
        gen_tapes[static_cast<std::size_t>(i)], df, &g_gen);
    dz += du.topRows(t.latent);
  }
  nn::GradList g_enc = t.encoder.zero_grads();
  t.encoder.backward(enc_tape, dz, &g_enc);

  long total = 0;
  for (const auto& g : g_enc) total += g.size();
  for (const auto& g : g_gen) total += g.size();
  nn::Vec flat(total);
  long at = 0;
  for (const auto& g : g_enc) {
    flat.segment(at, g.size()) = g;
    at += g.size();
  }
  for (const auto& g : g_gen) {
    flat.segment(at, g.size()) = g;
    at += g.size();
  }
  return flat;
}

inline nn::Vec toy_eg_weights(const ToySetup& t) {
  const nn::Vec we = t.encoder.flat_weights();
  const nn::Vec wg = t.generator.flat_weights();
  nn::Vec all(we.size() + wg.size());
  all << we, wg;
  return all;
}

inline void toy_set_eg_weights(ToySetup& t, const nn::Vec& all) {
  t.encoder.set_flat_weights(all.head(t.encoder.total_params()));
  t.generator.set_flat_weights(all.tail(t.generator.total_params()));
}

struct GradCheckResult {
  int checked = 0;
  int failed = 0;
  double worst_rel = 0.0;
};

/// Central-difference check of d(loss)/d(E,G params) against the analytic
/// per-frame backward path.
inline GradCheckResult check_eg_loss_gradient(
    ToySetup& t, const nn::Vec& x, int d,
    const std::function<double(const core::Sequence&)>& loss_value,
    const std::function<void(const core::Sequence&, core::Sequence*)>&
        loss_grad,
    int n_coords, double step, double tol, std::uint64_t seed) {
  std::vector<nn::Tape> gen_tapes;
  nn::Tape enc_tape;
  const core::Sequence frames = toy_frames(t, x, d, &gen_tapes, &enc_tape);
  core::Sequence dframes;
  loss_grad(frames, &dframes);
  const nn::Vec analytic = toy_backward(t, dframes, gen_tapes, enc_tape);

  nn::Vec weights = toy_eg_weights(t);
  Rng rng(seed);
  GradCheckResult result;
  for (int k = 0; k < n_coords; ++k) {
    const long idx = static_cast<long>(rng.below(weights.size()));
    const double orig = weights[idx];
    weights[idx] = orig + step;
    toy_set_eg_weights(t, weights);
    const double up = loss_value(toy_frames(t, x, d));
    weights[idx] = orig - step;
    toy_set_eg_weights(t, weights);
    const double down = loss_value(toy_frames(t, x, d));
    weights[idx] = orig;
    toy_set_eg_weights(t, weights);
    const double fd = (up - down) / (2.0 * step);
    const double an = analytic[idx];
    ++result.checked;
    if (std::abs(fd) < 1e-12 && std::abs(an) < 1e-12) continue;
    const double rel = std::abs(fd - an) / std::max({1e-8, std::abs(fd),
                                                     std::abs(an)});
    result.worst_rel = std::max(result.worst_rel, rel);
    if (rel > tol) ++result.failed;
  }
  return result;
}

/// Central-difference check of a loss over one network's parameters.
inline GradCheckResult check_net_loss_gradient(
    nn::Net& net, const std::function<double()>& loss_value,
    const nn::Vec& analytic, int n_coords, double step, double tol,
    std::uint64_t seed) {
  nn::Vec weights = net.flat_weights();
  Rng rng(seed);
  GradCheckResult result;
  for (int k = 0; k < n_coords; ++k) {
    const long idx = static_cast<long>(rng.below(weights.size()));
    const double orig = weights[idx];
    weights[idx] = orig + step;
    net.set_flat_weights(weights);
    const double up = loss_value();
    weights[idx] = orig - step;
    net.set_flat_weights(weights);
    const double down = loss_value();
    weights[idx] = orig;
    net.set_flat_weights(weights);
    const double fd = (up - down) / (2.0 * step);
    const double an = analytic[idx];
    ++result.checked;
    if (std::abs(fd) < 1e-12 && std::abs(an) < 1e-12) continue;
    const double rel = std::abs(fd - an) / std::max({1e-8, std::abs(fd),
                                                     std::abs(an)});
    result.worst_rel = std::max(result.worst_rel, rel);
    if (rel > tol) ++result.failed;
  }
  return result;
}

inline nn::Vec flat_grads(const nn::GradList& grads) {
  long total = 0;
  for (const auto& g : grads) total += g.size();
  nn::Vec flat(total);
  long at = 0;
  for (const auto& g : grads) {
    flat.segment(at, g.size()) = g;
    at += g.size();
  }
  return flat;
}

/// One simple fixed region layout on the toy grid: two overlapping masks.
inline core::RegionGeometry toy_geometry(int side) {
  atlas::SliceRegions sr;
  {
    atlas::RegionMask m;
    m.label = 1;
    m.mask = Image::Zero(side, side);
    for (int p = 0; p < side * side / 2; ++p) {
      m.mask(p / side, p % side) = 1.0;
      m.pixels.push_back(p);
    }
    m.size = static_cast<long>(m.pixels.size());
    sr.masks.push_back(std::move(m));
  }
  {
    atlas::RegionMask m;
    m.label = 2;
    m.mask = Image::Zero(side, side);
    for (int p = side; p < side * side; p += 2) {
      m.mask(p / side, p % side) = 1.0;
      m.pixels.push_back(p);
    }
    m.size = static_cast<long>(m.pixels.size());
    sr.masks.push_back(std::move(m));
  }
  return core::RegionGeometry::from_slice(sr, nullptr, side, side);
}

}  // namespace toy
