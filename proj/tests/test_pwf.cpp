#include "prognet/pwf.hpp"

#include <cmath>

#include "doctest.h"
#include "prognet/errors.hpp"

using namespace prognet;
using namespace prognet::pwf;

TEST_CASE("f(0) equals the base weight for every loss") {
  const PwfParams p;  // published defaults
  CHECK(pwf_value(p, LossTerm::reg, 0) == doctest::Approx(1.25));
  CHECK(pwf_value(p, LossTerm::vox, 0) == doctest::Approx(1.25));
  CHECK(pwf_value(p, LossTerm::b, 0) == doctest::Approx(0.002));
  CHECK(pwf_value(p, LossTerm::z, 0) == doctest::Approx(0.05));
  CHECK(pwf_value(p, LossTerm::rec, 0) == doctest::Approx(100.0));
}

TEST_CASE("asymptotes follow b * v^u; the published rec asymptote is 10") {
  const PwfParams p;
  const core::LossWeights w = asymptotic_weights(p);
  CHECK(w.rec == doctest::Approx(10.0));
  CHECK(w.reg == doctest::Approx(12.5));
  CHECK(w.vox == doctest::Approx(12.5));
  CHECK(w.b == doctest::Approx(0.02));
  CHECK(w.z == doctest::Approx(0.5));
  // Large-t values approach the asymptote.
  CHECK(pwf_value(p, LossTerm::rec, 5000) == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("hand-computed value at t=100") {
  PwfParams p;
  p.rho = 0.99;
  p.b_reg = 1.25;
  p.v = 10.0;
  const double expect =
      1.25 * std::pow(0.99, 100) + 1.25 * 10.0 * (1.0 - std::pow(0.99, 100));
  CHECK(pwf_value(p, LossTerm::reg, 100) == doctest::Approx(expect));
  CHECK(expect == doctest::Approx(8.3821).epsilon(1e-4));
}

TEST_CASE("exact decay identity |f(t) - b v^u| = rho^t b |1 - v^u|") {
  const PwfParams p;
  for (const LossTerm term : {LossTerm::reg, LossTerm::vox, LossTerm::b,
                              LossTerm::z, LossTerm::rec}) {
    const double b = p.base(term);
    const double vu = std::pow(p.v, p.exponent(term));
    for (long t : {0L, 1L, 7L, 50L, 313L}) {
      const double lhs = std::abs(pwf_value(p, term, t) - b * vu);
      const double rhs = std::pow(p.rho, static_cast<double>(t)) * b *
                         std::abs(1.0 - vu);
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
  }
}

TEST_CASE("f is monotone toward the asymptote and stays inside the bracket") {
  PwfParams p;
  for (const LossTerm term : {LossTerm::reg, LossTerm::rec}) {
    const double b = p.base(term);
    const double vu = std::pow(p.v, p.exponent(term));
    double prev = pwf_value(p, term, 0);
    for (long t = 1; t <= 400; ++t) {
      const double cur = pwf_value(p, term, t);
      if (vu > 1.0) CHECK(cur >= prev - 1e-15);
      if (vu < 1.0) CHECK(cur <= prev + 1e-15);
      CHECK(cur >= std::min(b, b * vu) - 1e-12);
      CHECK(cur <= std::max(b, b * vu) + 1e-12);
      prev = cur;
    }
  }
  // v^u == 1 is constant.
  p.v = 1.0;
  for (long t : {0L, 3L, 77L})
    CHECK(pwf_value(p, LossTerm::reg, t) == doctest::Approx(p.b_reg));
}

TEST_CASE("parameter validation") {
  PwfParams p;
  p.rho = 1.0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p = PwfParams();
  p.b_rec = 0.0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p = PwfParams();
  p.u_vox = 2;
  CHECK_THROWS_AS(p.validate(), ValidationError);
}

TEST_CASE("config round-trip preserves the published constants") {
  const PwfParams p;
  Config cfg;
  pwf_to_config(p, cfg);
  const PwfParams back = pwf_from_config(cfg);
  CHECK(back.rho == doctest::Approx(p.rho));
  CHECK(back.b_rec == doctest::Approx(p.b_rec));
  CHECK(back.u_rec == p.u_rec);
  CHECK(back.v == doctest::Approx(p.v));
}

TEST_CASE("grid of size one returns that tuple") {
  PwfGrid grid;  // all axes singletons
  const auto result = grid_search_pwf(
      grid, [](const PwfParams&, std::uint64_t) { return 1.0; }, 5, 3);
  CHECK(result.best_grid_index == 0);
  CHECK(result.log.size() == 1);
}

TEST_CASE("budget at least the grid size searches exhaustively") {
  PwfGrid grid;
  grid.v = {5.0, 10.0};
  grid.b_rec = {50.0, 100.0, 150.0};
  const auto result = grid_search_pwf(
      grid,
      [](const PwfParams& p, std::uint64_t) { return p.v + p.b_rec; }, 100, 7);
  CHECK(result.log.size() == 6);
  CHECK(result.best.v == doctest::Approx(5.0));
  CHECK(result.best.b_rec == doctest::Approx(50.0));
}

TEST_CASE("a rigged two-candidate grid selects the provably better tuple") {
  PwfGrid grid;
  grid.b_rec = {100.0, 42.0};
  const auto result = grid_search_pwf(
      grid,
      [](const PwfParams& p, std::uint64_t) {
        // Candidate with b_rec == 42 scores strictly lower by construction.
        return p.b_rec == 42.0 ? 1.0 : 2.0;
      },
      2, 17);
  CHECK(result.best.b_rec == doctest::Approx(42.0));
}

TEST_CASE("search is reproducible: same seed, same order and winner") {
  PwfGrid grid;
  grid.v = {2.0, 4.0, 8.0, 16.0};
  grid.b_z = {0.01, 0.05};
  auto eval = [](const PwfParams& p, std::uint64_t seed) {
    return std::fmod(p.v * 13.7 + p.b_z * 101.0 + static_cast<double>(seed % 7),
                     5.0);
  };
  const auto a = grid_search_pwf(grid, eval, 5, 23);
  const auto b = grid_search_pwf(grid, eval, 5, 23);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].grid_index == b.log[i].grid_index);
    CHECK(a.log[i].score == b.log[i].score);
  }
  CHECK(a.best_grid_index == b.best_grid_index);
}

TEST_CASE("ties break toward the first sampled candidate") {
  PwfGrid grid;
  grid.v = {1.5, 2.5, 3.5};
  const auto result = grid_search_pwf(
      grid, [](const PwfParams&, std::uint64_t) { return 7.0; }, 3, 29);
  CHECK(result.best_grid_index == result.log.front().grid_index);
}

TEST_CASE("all-divergent candidates raise an error carrying the log") {
  PwfGrid grid;
  grid.v = {2.0, 3.0};
  try {
    grid_search_pwf(grid,
                    [](const PwfParams&, std::uint64_t) {
                      return std::numeric_limits<double>::quiet_NaN();
                    },
                    2, 31);
    FAIL("expected PwfSearchError");
  } catch (const PwfSearchError& e) {
    CHECK(e.log.size() == 2);
    CHECK_FALSE(e.log[0].finite);
  }
}

TEST_CASE("common init: iterations=0 passes the random init through") {
  core::ModelConfig cfg;
  cfg.image_side = 8;
  cfg.latent_dim = 6;
  cfg.age_bins = 2;
  cfg.base_channels = 2;

  core::SliceDataset data;
  data.slice_ordinal = 2;
  data.slices = nn::Mat::Random(64, 6);
  data.ages = {66, 69, 72, 75, 78, 81};
  data.diagnoses = {0, 1, 2, 3, 0, 1};

  const core::AgeBinning binning =
      core::build_age_binning(data.ages, 2, 1.0, 0.5);
  core::TrainContext ctx;
  ctx.binning = &binning;
  ctx.schedule = make_schedule(PwfParams());

  const auto plain = core::SliceModelBundle::create(2, cfg, 99);
  const auto zero_iter = common_init(data, ctx, cfg, 0, 99);
  CHECK((plain.all_weights() - zero_iter.all_weights()).norm() == 0.0);

  const auto trained = common_init(data, ctx, cfg, 4, 99);
  CHECK((trained.all_weights() - plain.all_weights()).norm() > 0.0);
}

TEST_CASE("bundles cloned from a common init start bitwise identical") {
  core::ModelConfig cfg;
  cfg.image_side = 8;
  cfg.latent_dim = 6;
  cfg.age_bins = 2;
  cfg.base_channels = 2;

  core::SliceDataset data;
  data.slice_ordinal = 1;
  data.slices = nn::Mat::Random(64, 4);
  data.ages = {66, 70, 74, 78};
  data.diagnoses = {0, 1, 2, 3};
  const core::AgeBinning binning =
      core::build_age_binning(data.ages, 2, 1.0, 0.5);
  core::TrainContext ctx;
  ctx.binning = &binning;
  ctx.schedule = make_schedule(PwfParams());

  const auto shared = common_init(data, ctx, cfg, 3, 7);
  core::SliceModelBundle a = shared;
  core::SliceModelBundle b = shared;
  a.slice_ordinal = 0;
  b.slice_ordinal = 5;
  CHECK((a.all_weights() - b.all_weights()).norm() == 0.0);
}
