#include "prognet/evaluate.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "prognet/dataio.hpp"
#include "prognet/errors.hpp"
#include "prognet/rng.hpp"

using namespace prognet;
using namespace prognet::evaluate;

namespace {

Grid3 ones(int d, int h, int w) {
  Grid3 g(d, h, w);
  for (auto& v : g.raw()) v = 1.0;
  return g;
}

std::vector<RegressorRow> linear_rows(int n_subjects, int visits, double slope,
                                      double gender_coef, double noise,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<RegressorRow> rows;
  for (int s = 0; s < n_subjects; ++s) {
    const double gender = s % 2;
    const int diagnosis = s % 4;
    const double base = 5.0 + 0.1 * (s % 5);
    for (int v = 0; v < visits; ++v) {
      const double age = 65.0 + 2.0 * v + (s % 3);
      RegressorRow row;
      row.subject_id = "s" + std::to_string(s);
      row.diagnosis = diagnosis;
      row.age = age;
      row.gender = gender;
      row.volume_pct = base + slope * (age - 65.0) + gender_coef * gender +
                       noise * rng.normal(0.0, 1.0);
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace

TEST_CASE("whole-brain region measures exactly 100 percent") {
  const Grid3 brain = ones(3, 4, 4);
  Grid3 volume = ones(3, 4, 4);
  std::vector<EvalRegion> regions;
  regions.push_back({"brain", brain, VolumeMode::mask_count});
  const auto vols = region_volumes(volume, regions, brain);
  CHECK(vols.at("brain") == doctest::Approx(100.0));
}

TEST_CASE("mask-count volume is plain arithmetic") {
  Grid3 brain = ones(10, 10, 10);  // 1000 voxels of brain
  Grid3 mask(10, 10, 10);
  long placed = 0;
  for (auto& v : mask.raw()) {
    v = placed < 50 ? 1.0 : 0.0;
    ++placed;
  }
  std::vector<EvalRegion> regions;
  regions.push_back({"part", mask, VolumeMode::mask_count});
  const auto vols = region_volumes(ones(10, 10, 10), regions, brain);
  CHECK(vols.at("part") == doctest::Approx(5.0));
}

TEST_CASE("disjoint masks partitioning the brain sum to 100 percent") {
  Rng rng(3);
  const Grid3 brain = ones(4, 5, 5);
  Grid3 a(4, 5, 5), b(4, 5, 5), c(4, 5, 5);
  for (std::size_t i = 0; i < brain.raw().size(); ++i) {
    const int pick = static_cast<int>(rng.below(3));
    a.raw()[i] = pick == 0;
    b.raw()[i] = pick == 1;
    c.raw()[i] = pick == 2;
  }
  std::vector<EvalRegion> regions;
  regions.push_back({"a", a, VolumeMode::mask_count});
  regions.push_back({"b", b, VolumeMode::mask_count});
  regions.push_back({"c", c, VolumeMode::mask_count});
  const auto vols = region_volumes(ones(4, 5, 5), regions, brain);
  CHECK(vols.at("a") + vols.at("b") + vols.at("c") ==
        doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("fractional volumetry recovers the painted phantom ground truth") {
  dataio::PhantomSpec spec;
  spec.n_subjects = 2;
  spec.visits_per_subject = 2;
  spec.image_side = 32;
  spec.n_slices = 9;
  spec.noise_std = 0.0;
  spec.seed = 5;
  const auto cohort = dataio::generate_phantom_cohort(spec);
  const VolumeScan atlas = dataio::make_phantom_atlas(spec);
  const VolumeScan tpl = dataio::make_phantom_template(spec);
  const Grid3 brain = dataio::brain_mask(tpl);

  Grid3 vent_mask(atlas.voxels.nz(), atlas.voxels.ny(), atlas.voxels.nx());
  for (std::size_t i = 0; i < vent_mask.raw().size(); ++i)
    vent_mask.raw()[i] =
        std::lround(atlas.voxels.raw()[i]) == 1 ? 1.0 : 0.0;
  std::vector<EvalRegion> regions;
  regions.push_back({"ventricle", vent_mask, VolumeMode::frac_below});

  long template_brain = 0;
  for (double v : brain.raw())
    if (v > 0.5) ++template_brain;
  for (std::size_t i = 0; i < cohort.scans.size(); ++i) {
    const auto vols = region_volumes(cohort.scans[i].voxels, regions, brain);
    const auto& gt = cohort.truth[i];
    const double measured_frac =
        vols.at("ventricle") / 100.0 * static_cast<double>(template_brain);
    // Within one voxel-equivalent of the painted fractional volume.
    CHECK(std::abs(measured_frac - gt.ventricle_volume_fractional) <= 1.0);
  }
}

TEST_CASE("volume_mae trivial and hand-computed aggregations") {
  std::map<std::string, std::vector<std::pair<double, double>>> cases;
  cases["r"] = {{3.0, 3.0}, {4.5, 4.5}};
  const VolumeReport zero = volume_mae(cases, "self");
  CHECK(zero.find("r")->mae == doctest::Approx(0.0));
  CHECK(zero.find("r")->stddev == doctest::Approx(0.0));

  cases.clear();
  cases["r"] = {{1.1, 1.0}, {1.3, 1.0}};  // errors 0.1 and 0.3
  const VolumeReport stats = volume_mae(cases, "pair");
  CHECK(stats.find("r")->mae == doctest::Approx(0.2));
  CHECK(stats.find("r")->stddev == doctest::Approx(0.1));  // population
}

TEST_CASE("volume_mae is symmetric in predicted and real") {
  std::map<std::string, std::vector<std::pair<double, double>>> ab, ba;
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const double a = rng.uniform(0, 10), b = rng.uniform(0, 10);
    ab["r"].push_back({a, b});
    ba["r"].push_back({b, a});
  }
  CHECK(volume_mae(ab, "x").find("r")->mae ==
        doctest::Approx(volume_mae(ba, "x").find("r")->mae));
}

TEST_CASE("percent improvement arithmetic") {
  CHECK(percent_improvement(2.0, 1.0) == doctest::Approx(50.0));
  CHECK(percent_improvement(1.0, 1.0) == doctest::Approx(0.0));
  CHECK(percent_improvement(1.0, 1.5) == doctest::Approx(-50.0));
}

TEST_CASE("SVR fits constant targets within the tube") {
  std::vector<RegressorRow> rows;
  for (int i = 0; i < 30; ++i)
    rows.push_back({"s" + std::to_string(i), i % 4, 65.0 + i % 7,
                    static_cast<double>(i % 2), 5.0});
  SvrConfig cfg;
  const SvrModel model = fit_svr_baseline(rows, cfg);
  for (const auto& r : rows)
    CHECK(std::abs(model.predict(r.age, r.gender, r.diagnosis) - 5.0) <=
          cfg.epsilon_tube + 1e-6);
  // Deterministic once fitted.
  CHECK(model.predict(70, 1, 2) == model.predict(70, 1, 2));
}

TEST_CASE("SVR beats the constant-mean predictor on linear decay data") {
  const auto train = linear_rows(24, 3, 0.4, 0.0, 0.02, 11);
  const auto test = linear_rows(10, 3, 0.4, 0.0, 0.02, 12);
  const SvrModel svr = fit_svr_baseline(train, SvrConfig{});
  const double constant = fit_constant_mean(train);
  double svr_mae = 0.0, const_mae = 0.0;
  for (const auto& r : test) {
    svr_mae += std::abs(svr.predict(r.age, r.gender, r.diagnosis) - r.volume_pct);
    const_mae += std::abs(constant - r.volume_pct);
  }
  CHECK(svr_mae < const_mae);
}

TEST_CASE("LME recovers an exact fixed-effect law to 1e-6") {
  std::vector<RegressorRow> rows;
  for (int s = 0; s < 8; ++s) {
    const double gender = s % 2;
    for (int v = 0; v < 3; ++v) {
      const double age = 60.0 + 3.0 * v + s;
      RegressorRow row;
      row.subject_id = "s" + std::to_string(s);
      row.diagnosis = 1;  // one group
      row.age = age;
      row.gender = gender;
      row.volume_pct = 2.0 + 0.35 * age - 0.8 * gender;  // zero noise
      rows.push_back(row);
    }
  }
  const LmeModel model = fit_lme_baseline(rows, LmeConfig{});
  const auto& group = model.groups.at(1);
  CHECK(group.beta[1] == doctest::Approx(0.35).epsilon(1e-6));
  CHECK(group.beta[2] == doctest::Approx(-0.8).epsilon(1e-6));
  CHECK(group.beta[0] == doctest::Approx(2.0).epsilon(1e-4));
}

TEST_CASE("LME single-subject group falls back to OLS with a flag") {
  std::vector<RegressorRow> rows;
  for (int v = 0; v < 4; ++v)
    rows.push_back({"only", 2, 65.0 + v, 0.0, 1.0 + 0.5 * v});
  const LmeModel model = fit_lme_baseline(rows, LmeConfig{});
  CHECK(model.groups.at(2).ols_fallback);
  CHECK(model.predict(69.0, 0.0, 2) == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("LME gender coefficient vanishes on gender-balanced symmetric data") {
  std::vector<RegressorRow> rows;
  for (int s = 0; s < 10; ++s) {
    for (int v = 0; v < 3; ++v) {
      const double age = 62.0 + 2.5 * v + (s % 5);
      RegressorRow row;
      row.subject_id = "s" + std::to_string(s);
      row.diagnosis = 0;
      row.age = age;
      row.gender = s % 2;  // balanced, same law both genders
      row.volume_pct = 1.0 + 0.2 * age;
      rows.push_back(row);
    }
  }
  const LmeModel model = fit_lme_baseline(rows, LmeConfig{});
  CHECK(std::abs(model.groups.at(0).beta[2]) < 1e-6);
}

TEST_CASE("LME random effects are used during fitting, not prediction") {
  // Per-subject intercept offsets around a common slope; the fixed
  // prediction for an unseen subject uses the population line.
  Rng rng(21);
  std::vector<RegressorRow> rows;
  for (int s = 0; s < 12; ++s) {
    const double offset = rng.normal(0.0, 0.5);
    for (int v = 0; v < 3; ++v) {
      const double age = 64.0 + 2.0 * v + (s % 4);
      rows.push_back({"s" + std::to_string(s), 3, age, 0.0,
                      4.0 + 0.25 * (age - 64.0) + offset});
    }
  }
  const LmeModel model = fit_lme_baseline(rows, LmeConfig{});
  const auto& g = model.groups.at(3);
  CHECK(g.beta[1] == doctest::Approx(0.25).epsilon(0.05));
  CHECK_FALSE(g.ols_fallback);
  CHECK(g.psi(0, 0) > 0.0);  // learned intercept variance
}

TEST_CASE("trim_outliers removes exactly floor(fraction*n) rows") {
  auto rows = linear_rows(5, 2, 0.3, 0.0, 0.0, 31);  // 10 rows
  REQUIRE(rows.size() == 10);
  const auto none = trim_outliers<RegressorRow>(
      rows, 0.0, [](const RegressorRow&) { return 0.0; });
  CHECK(none.size() == 10);
  const auto trimmed = trim_outliers<RegressorRow>(
      rows, 0.2, [](const RegressorRow&) { return 0.0; });
  CHECK(trimmed.size() == 8);
}

TEST_CASE("trim ties break deterministically by row index") {
  std::vector<RegressorRow> rows;
  for (int i = 0; i < 5; ++i)
    rows.push_back({"s" + std::to_string(i), 0, 65.0, 0.0, 1.0});
  // All residuals equal; the first floor(0.4*5)=2 rows drop.
  const auto trimmed = trim_outliers<RegressorRow>(
      rows, 0.4, [](const RegressorRow&) { return 0.0; });
  REQUIRE(trimmed.size() == 3);
  CHECK(trimmed[0].subject_id == "s2");
  CHECK(trimmed[1].subject_id == "s3");
  CHECK(trimmed[2].subject_id == "s4");
}

TEST_CASE("trimmed refits beat untrimmed fits under gross contamination") {
  auto train = linear_rows(20, 3, 0.4, 0.0, 0.05, 41);
  Rng rng(42);
  // Contaminate 20% of rows with gross outliers.
  const std::size_t n_bad = train.size() / 5;
  for (std::size_t i = 0; i < n_bad; ++i)
    train[i * 5].volume_pct += 40.0 + 5.0 * rng.uniform();
  const auto clean_test = linear_rows(8, 3, 0.4, 0.0, 0.0, 43);

  const SvrModel untrimmed = fit_svr_baseline(train, SvrConfig{});
  const auto trimmed_rows = trim_outliers<RegressorRow>(
      train, 0.20, [&](const RegressorRow& r) {
        return untrimmed.predict(r.age, r.gender, r.diagnosis);
      });
  const SvrModel trimmed = fit_svr_baseline(trimmed_rows, SvrConfig{});

  double mae_untrimmed = 0.0, mae_trimmed = 0.0;
  for (const auto& r : clean_test) {
    mae_untrimmed +=
        std::abs(untrimmed.predict(r.age, r.gender, r.diagnosis) - r.volume_pct);
    mae_trimmed +=
        std::abs(trimmed.predict(r.age, r.gender, r.diagnosis) - r.volume_pct);
  }
  CHECK(mae_trimmed < mae_untrimmed);
}

TEST_CASE("otsu splits a clean bimodal sample") {
  std::vector<double> values;
  Rng rng(51);
  for (int i = 0; i < 200; ++i) values.push_back(0.1 + 0.02 * rng.normal(0, 1));
  for (int i = 0; i < 300; ++i) values.push_back(0.8 + 0.02 * rng.normal(0, 1));
  const double tau = otsu_threshold(values);
  long below = 0;
  for (double v : values)
    if (v < tau) ++below;
  CHECK(below == 200);  // the cut separates the clusters exactly
  CHECK(tau > 0.2);
  CHECK(tau < 0.7);
}

TEST_CASE("report rendering and CSV writing") {
  std::map<std::string, std::vector<std::pair<double, double>>> cases;
  cases["ventricle"] = {{1.0, 1.2}, {2.0, 1.7}};
  cases["tissue"] = {{90.0, 91.0}};
  const VolumeReport report = volume_mae(cases, "proposed");
  const std::string table = render_reports_table({report});
  CHECK(table.find("proposed") != std::string::npos);
  CHECK(table.find("ventricle") != std::string::npos);

  const std::string path =
      (std::filesystem::temp_directory_path() / "prognet_report.csv").string();
  write_reports_csv({report}, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "region,config,mae,std,cases");
}
