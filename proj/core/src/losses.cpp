#include "prognet/losses.hpp"

#include <cmath>
#include <limits>

#include "prognet/errors.hpp"

namespace prognet::core {

nn::Vec flatten(const Image& img) {
  const int h = static_cast<int>(img.rows());
  const int w = static_cast<int>(img.cols());
  nn::Vec v(static_cast<long>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) v[static_cast<long>(y) * w + x] = img(y, x);
  return v;
}

Image unflatten(const Eigen::Ref<const nn::Vec>& v, int height, int width) {
  Image img(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      img(y, x) = v[static_cast<long>(y) * width + x];
  return img;
}

double loss_rec(const Image& input, const Sequence& frames,
                const AgeBinning& binning, double age, Sequence* grad) {
  if (static_cast<int>(frames.size()) != binning.size())
    throw ValidationError("loss_rec: frame count differs from bin count");
  const double npix = static_cast<double>(input.size());
  if (grad) grad->assign(frames.size(), Image());
  double total = 0.0;
  for (int i = 0; i < binning.size(); ++i) {
    const double mu = membership(binning, age, i);
    const Image diff = frames[static_cast<std::size_t>(i)] * mu - input;
    total += diff.square().mean();
    if (grad)
      (*grad)[static_cast<std::size_t>(i)] = (2.0 * mu / npix) * diff;
  }
  return total;
}

double loss_vox(const Sequence& frames, int own_bin, bool hinge,
                Sequence* grad) {
  const int n_bins = static_cast<int>(frames.size());
  if (own_bin < 0 || own_bin >= n_bins)
    throw ValidationError("loss_vox: own_bin out of range");
  const Image& own = frames[static_cast<std::size_t>(own_bin)];
  const int h = static_cast<int>(own.rows());
  const int w = static_cast<int>(own.cols());
  const double npix = static_cast<double>(own.size());

  if (grad) {
    grad->assign(frames.size(), Image());
    for (auto& g : *grad) g = Image::Zero(h, w);
  }

  double total = 0.0;
  const bool has_earlier = own_bin > 0;
  const bool has_later = own_bin + 1 < n_bins;

  if (has_earlier) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double lo = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int i = 0; i < own_bin; ++i) {
          const double v = frames[static_cast<std::size_t>(i)](y, x);
          if (v < lo) {
            lo = v;
            arg = i;
          }
        }
        double d = own(y, x) - lo;
        if (hinge && d < 0.0) d = 0.0;
        total += 0.5 * d * d / npix;
        if (grad && d != 0.0) {
          (*grad)[static_cast<std::size_t>(own_bin)](y, x) += d / npix;
          (*grad)[static_cast<std::size_t>(arg)](y, x) -= d / npix;
        }
      }
    }
  }
  if (has_later) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double hi = -std::numeric_limits<double>::infinity();
        int arg = own_bin + 1;
        for (int i = own_bin + 1; i < n_bins; ++i) {
          const double v = frames[static_cast<std::size_t>(i)](y, x);
          if (v > hi) {
            hi = v;
            arg = i;
          }
        }
        double d = own(y, x) - hi;
        if (hinge && d > 0.0) d = 0.0;
        total += 0.5 * d * d / npix;
        if (grad && d != 0.0) {
          (*grad)[static_cast<std::size_t>(own_bin)](y, x) += d / npix;
          (*grad)[static_cast<std::size_t>(arg)](y, x) -= d / npix;
        }
      }
    }
  }
  return total;
}

RegionGeometry RegionGeometry::from_slice(
    const atlas::SliceRegions& slice_regions, const Image* brain, int height,
    int width) {
  RegionGeometry geo;
  geo.height = height;
  geo.width = width;
  for (const auto& m : slice_regions.masks) {
    Region r;
    r.sqrt_size = std::sqrt(static_cast<double>(m.size));
    for (int px : m.pixels) {
      const int y = px / width, x = px % width;
      if (brain && (*brain)(y, x) <= 0.5) continue;
      r.pixels.push_back(px);
    }
    geo.regions.push_back(std::move(r));
  }
  return geo;
}

double loss_reg(const Sequence& frames, int own_bin, int diagnosis,
                const RegionGeometry& geometry,
                const RegionRatioPredictor& predictor, double epsilon,
                Sequence* grad) {
  const int n_bins = static_cast<int>(frames.size());
  if (n_bins < 2) throw ValidationError("loss_reg: needs at least 2 bins");
  if (own_bin < 0 || own_bin >= n_bins)
    throw ValidationError("loss_reg: own_bin out of range");
  const int n_regions = static_cast<int>(geometry.regions.size());
  if (n_regions == 0) return 0.0;

  const int h = static_cast<int>(frames[0].rows());
  const int w = static_cast<int>(frames[0].cols());
  if (grad) {
    grad->assign(frames.size(), Image());
    for (auto& g : *grad) g = Image::Zero(h, w);
  }

  const double norm = 1.0 / (static_cast<double>(n_regions) * (n_bins - 1));
  double total = 0.0;

  std::vector<double> sums(static_cast<std::size_t>(n_bins));
  std::vector<double> dsum(static_cast<std::size_t>(n_bins));
  for (int q = 0; q < n_regions; ++q) {
    const auto& region = geometry.regions[static_cast<std::size_t>(q)];
    for (int i = 0; i < n_bins; ++i) {
      double s = 0.0;
      const auto& f = frames[static_cast<std::size_t>(i)];
      for (int px : region.pixels) s += f(px / w, px % w);
      sums[static_cast<std::size_t>(i)] = s;
      dsum[static_cast<std::size_t>(i)] = 0.0;
    }
    const double own_sum = sums[static_cast<std::size_t>(own_bin)] + epsilon;

    // Earlier bins: predicted vs observed ratio of own over earlier.
    for (int o = 0; o < own_bin; ++o) {
      const double den = sums[static_cast<std::size_t>(o)] + epsilon;
      const double ratio = own_sum / den;
      total += (predictor(q, o, own_bin, diagnosis) - ratio) *
               region.sqrt_size * norm;
      if (grad) {
        const double c = -region.sqrt_size * norm;
        dsum[static_cast<std::size_t>(own_bin)] += c / den;
        dsum[static_cast<std::size_t>(o)] += -c * own_sum / (den * den);
      }
    }
    // Later bins: predicted vs observed ratio of later over own.
    for (int o = own_bin + 1; o < n_bins; ++o) {
      const double num = sums[static_cast<std::size_t>(o)] + epsilon;
      const double ratio = num / own_sum;
      total += (predictor(q, own_bin, o, diagnosis) - ratio) *
               region.sqrt_size * norm;
      if (grad) {
        const double c = -region.sqrt_size * norm;
        dsum[static_cast<std::size_t>(o)] += c / own_sum;
        dsum[static_cast<std::size_t>(own_bin)] += -c * num / (own_sum * own_sum);
      }
    }
    if (grad) {
      for (int i = 0; i < n_bins; ++i) {
        const double c = dsum[static_cast<std::size_t>(i)];
        if (c == 0.0) continue;
        auto& g = (*grad)[static_cast<std::size_t>(i)];
        for (int px : region.pixels) g(px / w, px % w) += c;
      }
    }
  }
  return total;
}

AdvLosses loss_adv_brain(const nn::Net& disc, const nn::Mat& real_slices,
                         const nn::Mat& generated_slices) {
  const Eigen::ArrayXd p_real = disc.forward(real_slices).row(0).transpose();
  const Eigen::ArrayXd p_fake =
      disc.forward(generated_slices).row(0).transpose();
  AdvLosses out;
  out.discriminator = nn::bce_real_fake(p_real, p_fake);
  out.generator = nn::nonsat_gen_loss(p_fake);
  return out;
}

AdvLosses loss_adv_latent(const nn::Net& disc, const nn::Mat& prior_samples,
                          const nn::Mat& encodings) {
  const Eigen::ArrayXd p_prior = disc.forward(prior_samples).row(0).transpose();
  const Eigen::ArrayXd p_enc = disc.forward(encodings).row(0).transpose();
  AdvLosses out;
  out.discriminator = nn::bce_real_fake(p_prior, p_enc);
  out.generator = nn::nonsat_gen_loss(p_enc);
  return out;
}

double loss_total(const LossComponents& c, const LossWeights& w) {
  return w.reg * c.reg + w.vox * c.vox + w.b * c.adv_b + w.z * c.adv_z +
         w.rec * c.rec;
}

}  // namespace prognet::core
