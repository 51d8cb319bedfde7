#include "prognet/regionlr.hpp"

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "prognet/errors.hpp"
#include "prognet/rng.hpp"

using namespace prognet;
using namespace prognet::regionlr;

namespace {

atlas::RegionMask full_mask(int h, int w) {
  atlas::RegionMask m;
  m.label = 1;
  m.mask = Image::Constant(h, w, 1.0);
  for (int p = 0; p < h * w; ++p) m.pixels.push_back(p);
  m.size = h * w;
  return m;
}

}  // namespace

TEST_CASE("region_ratio identity and epsilon-forced cases") {
  const atlas::RegionMask m = full_mask(2, 2);
  Image a(2, 2);
  a << 1, 2, 3, 4;
  CHECK(region_ratio(a, a, m) == doctest::Approx(1.0));

  const Image z = Image::Zero(2, 2);
  CHECK(region_ratio(z, z, m) == doctest::Approx(1.0));
}

TEST_CASE("region_ratio hand arithmetic") {
  const atlas::RegionMask m = full_mask(2, 2);
  Image earlier(2, 2), later(2, 2);
  earlier << 2.0, 3.0, 4.0, 0.9;  // sums to 9.9
  later << 1.0, 2.0, 1.0, 0.9;    // sums to 4.9
  CHECK(region_ratio(earlier, later, m) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("region_ratio rejects shape mismatches") {
  const atlas::RegionMask m = full_mask(2, 2);
  const Image a = Image::Zero(2, 2);
  const Image b = Image::Zero(3, 3);
  CHECK_THROWS_AS(region_ratio(a, b, m), ValidationError);
}

TEST_CASE("region_ratio respects the brain mask") {
  const atlas::RegionMask m = full_mask(2, 2);
  Image brain(2, 2);
  brain << 1, 0, 1, 0;
  Image earlier(2, 2), later(2, 2);
  earlier << 2, 100, 2, 100;  // masked-out pixels must not count
  later << 1, 100, 1, 100;
  const double r = region_ratio(earlier, later, m, &brain);
  CHECK(r == doctest::Approx((2.0 + 0.1) / (4.0 + 0.1)));
}

TEST_CASE("region_ratio is scale-covariant at epsilon zero") {
  Rng rng(3);
  const atlas::RegionMask m = full_mask(3, 3);
  for (int rep = 0; rep < 50; ++rep) {
    Image earlier(3, 3), later(3, 3);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        earlier(y, x) = rng.uniform(0.5, 2.0);
        later(y, x) = rng.uniform(0.5, 2.0);
      }
    const double c = rng.uniform(0.5, 3.0);
    const double base = region_ratio(earlier, later, m, nullptr, 0.0);
    const double scaled =
        region_ratio(earlier * c, later * c, m, nullptr, 0.0);
    CHECK(scaled == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("monotonic_filter keeps the greedy non-increasing subsequence") {
  using Series = std::vector<std::pair<double, double>>;
  const Series already{{70, 5}, {71, 4}, {72, 3}};
  CHECK(monotonic_filter(already) == already);

  const Series bump{{70, 5}, {71, 6}, {72, 4}};
  const Series expect{{70, 5}, {72, 4}};
  CHECK(monotonic_filter(bump) == expect);

  const Series single{{70, 5}};
  CHECK(monotonic_filter(single) == single);
}

TEST_CASE("monotonic_filter output is non-increasing and idempotent") {
  Rng rng(4);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<std::pair<double, double>> series;
    const int n = 1 + static_cast<int>(rng.below(10));
    for (int i = 0; i < n; ++i)
      series.emplace_back(70.0 + i, rng.uniform(0.0, 10.0));
    const auto once = monotonic_filter(series);
    for (std::size_t i = 1; i < once.size(); ++i)
      CHECK(once[i].second <= once[i - 1].second);
    CHECK(monotonic_filter(once) == once);
    CHECK(once.front() == series.front());
  }
}

TEST_CASE("fit falls back to identity below the sample minimum") {
  FitOptions opt;
  opt.min_samples = 5;
  std::vector<RatioSample> few{{70, 72, 1, 0.9}, {70, 74, 1, 0.8}};
  const RegionLR model = fit_region_lr(few, opt);
  CHECK(model.fallback);
  CHECK(model.predict(70, 75, 1) == doctest::Approx(1.0));
}

TEST_CASE("constant ratio-1 training data predicts 1 everywhere") {
  FitOptions opt;
  std::vector<RatioSample> samples;
  for (int o = 66; o < 80; ++o)
    for (int dt = 1; dt <= 3; ++dt)
      for (int d = 0; d < 4; ++d)
        samples.push_back({static_cast<double>(o),
                           static_cast<double>(o + dt), d, 1.0});
  const RegionLR model = fit_region_lr(samples, opt);
  CHECK_FALSE(model.fallback);
  for (int d = 0; d < 4; ++d)
    for (double o : {66.0, 72.0, 79.0})
      for (double dt : {1.0, 2.5, 4.0})
        CHECK(std::abs(model.predict(o, o + dt, d) - 1.0) < 1e-3);
}

TEST_CASE("zero elapsed time predicts exactly 1 by construction") {
  FitOptions opt;
  std::vector<RatioSample> samples;
  Rng rng(9);
  for (int i = 0; i < 40; ++i) {
    const double o = rng.uniform(65, 80);
    samples.push_back({o, o + rng.uniform(0.5, 4.0),
                       static_cast<int>(rng.below(4)),
                       rng.uniform(0.7, 1.05)});
  }
  const RegionLR model = fit_region_lr(samples, opt);
  for (double o : {60.0, 70.0, 85.0})
    for (int d = 0; d < 4; ++d)
      CHECK(model.predict(o, o, d) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("generate-and-refit recovers a known law within 2 percent MAE") {
  RegionLR truth;
  truth.w[0] = -0.08;
  truth.w[1] = -0.02;
  truth.w[2] = -0.05;
  truth.o_center = 72.0;
  truth.o_scale = 5.0;

  std::vector<RatioSample> samples;
  Rng rng(10);
  for (int i = 0; i < 300; ++i) {
    const double o = rng.uniform(65, 80);
    const double a = o + rng.uniform(0.5, 5.0);
    const int d = static_cast<int>(rng.below(4));
    samples.push_back({o, a, d, truth.predict(o, a, d)});
  }
  FitOptions opt;
  opt.iterations = 2000;
  opt.learning_rate = 0.03;
  const RegionLR fitted = fit_region_lr(samples, opt);

  double mae = 0.0;
  int count = 0;
  for (double o = 66; o <= 79; o += 1.3)
    for (double dt = 0.5; dt <= 5.0; dt += 0.9)
      for (int d = 0; d < 4; ++d) {
        mae += std::abs(fitted.predict(o, o + dt, d) - truth.predict(o, o + dt, d));
        ++count;
      }
  mae /= count;
  CHECK(mae < 0.02);
}

TEST_CASE("fit on decaying data is non-increasing in follow-up age") {
  std::vector<RatioSample> samples;
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const double o = rng.uniform(65, 80);
    const double dt = rng.uniform(0.5, 5.0);
    const int d = static_cast<int>(rng.below(4));
    const double ratio = 1.0 - 0.02 * dt - 0.004 * d * dt;
    samples.push_back({o, o + dt, d, ratio + rng.normal(0.0, 0.005)});
  }
  FitOptions opt;
  opt.iterations = 1500;
  const RegionLR model = fit_region_lr(samples, opt);
  for (int d = 0; d < 4; ++d) {
    for (double o : {66.0, 72.0, 78.0}) {
      double prev = model.predict(o, o, d);
      for (double a = o; a <= o + 6.0; a += 0.25) {
        const double cur = model.predict(o, a, d);
        CHECK(cur <= prev + 1e-9);
        prev = cur;
      }
    }
  }
}

TEST_CASE("LR bank fitting from stacks and serialization round-trip") {
  // Two subjects, 3 visits each, one 4x4 slice; intensity decays with age.
  atlas::RegionSet regions;
  regions.height = 4;
  regions.width = 4;
  atlas::SliceRegions sr;
  sr.slice_ordinal = 0;
  sr.slice_z = 0;
  sr.masks.push_back(full_mask(4, 4));
  regions.slices.push_back(sr);

  std::vector<SliceStack> stacks;
  for (int s = 0; s < 4; ++s) {
    for (int v = 0; v < 3; ++v) {
      SliceStack st;
      st.subject_id = "s" + std::to_string(s);
      st.age = 68.0 + 2.0 * s + 2.0 * v;
      st.diagnosis = s % 4;
      const double level = 1.0 - 0.02 * (st.age - 68.0);
      st.slices.push_back(Image::Constant(4, 4, level));
      st.slice_means.push_back(0.0);
      st.slice_stds.push_back(1.0);
      st.degenerate.push_back(false);
      stacks.push_back(std::move(st));
    }
  }
  std::vector<Image> brains{Image::Constant(4, 4, 1.0)};
  FitOptions opt;
  opt.min_samples = 3;
  FitReport report;
  const LrBank bank = fit_region_lrs(stacks, regions, brains, opt, &report);
  REQUIRE(bank.find(0, 0) != nullptr);
  CHECK(report.fitted == 1);
  // Later follow-up between fixed ages predicts a decline.
  CHECK(bank.find(0, 0)->predict(70.0, 74.0, 1) < 1.0);

  const std::string path =
      (std::filesystem::temp_directory_path() / "prognet_lr_bank.json").string();
  save_lr_bank(bank, path);
  const LrBank back = load_lr_bank(path);
  REQUIRE(back.find(0, 0) != nullptr);
  CHECK(back.find(0, 0)->w[0] == bank.find(0, 0)->w[0]);
  CHECK(back.find(0, 0)->predict(70, 73, 2) ==
        doctest::Approx(bank.find(0, 0)->predict(70, 73, 2)));
}
