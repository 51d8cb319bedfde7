#include "prognet/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "json.hpp"
#include "prognet/errors.hpp"

namespace prognet::pipeline {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kInfSentinel = 1e300;
constexpr const char* kToolVersion = "0.1.0";

json binning_to_json(const core::AgeBinning& binning) {
  json bins = json::array();
  for (const auto& b : binning.bins) {
    bins.push_back({{"center", b.center},
                    {"delta", b.delta},
                    {"sigma", b.sigma},
                    {"lower", std::max(-kInfSentinel, b.lower)},
                    {"upper", std::min(kInfSentinel, b.upper)}});
  }
  return bins;
}

core::AgeBinning binning_from_json(const json& bins) {
  core::AgeBinning binning;
  for (const auto& jb : bins) {
    core::AgeBinning::Bin b;
    b.center = jb.at("center").get<double>();
    b.delta = jb.at("delta").get<double>();
    b.sigma = jb.at("sigma").get<double>();
    b.lower = jb.at("lower").get<double>();
    b.upper = jb.at("upper").get<double>();
    if (b.lower <= -kInfSentinel)
      b.lower = -std::numeric_limits<double>::infinity();
    if (b.upper >= kInfSentinel)
      b.upper = std::numeric_limits<double>::infinity();
    binning.bins.push_back(b);
  }
  return binning;
}

void save_grid(const Grid3& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::int32_t shape[3] = {grid.nz(), grid.ny(), grid.nx()};
  out.write(reinterpret_cast<const char*>(shape), sizeof(shape));
  out.write(reinterpret_cast<const char*>(grid.data()),
            static_cast<std::streamsize>(grid.size() * sizeof(double)));
}

Grid3 load_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::int32_t shape[3];
  in.read(reinterpret_cast<char*>(shape), sizeof(shape));
  Grid3 grid(shape[0], shape[1], shape[2]);
  in.read(reinterpret_cast<char*>(grid.data()),
          static_cast<std::streamsize>(grid.size() * sizeof(double)));
  if (!in) throw IoError("truncated grid file " + path);
  return grid;
}

std::vector<Image> subgrid_brain_slices(const Grid3& brain_subgrid) {
  std::vector<Image> out;
  for (int n = 0; n < brain_subgrid.nz(); ++n)
    out.push_back(brain_subgrid.slice(n));
  return out;
}

core::AgeBinning binning_from_train(const Settings& settings,
                                    const Dataset& dataset) {
  std::vector<double> ages;
  for (std::size_t i = 0; i < dataset.stacks.size(); ++i)
    if (dataset.split_of[i] == "train") ages.push_back(dataset.stacks[i].age);
  return core::build_age_binning(ages, settings.model.age_bins,
                                 settings.c_sigma, settings.sigma_min);
}

core::SliceDataset slice_dataset_for(const Dataset& dataset, int ordinal,
                                     const std::string& split) {
  core::SliceDataset out;
  out.slice_ordinal = ordinal;
  std::vector<const SliceStack*> stacks = dataset.in_split(split);
  if (stacks.empty()) throw ValidationError("no stacks in split " + split);
  const auto& first = *stacks.front();
  const long npix = first.slices[static_cast<std::size_t>(ordinal)].size();
  out.slices.resize(npix, static_cast<long>(stacks.size()));
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    out.slices.col(static_cast<long>(i)) = core::flatten(
        stacks[i]->slices[static_cast<std::size_t>(ordinal)]);
    out.ages.push_back(stacks[i]->age);
    out.diagnoses.push_back(stacks[i]->diagnosis);
  }
  return out;
}

core::TrainContext context_for_slice(const TrainedPipeline& pipe, int ordinal,
                                     const core::AgeBinning& binning,
                                     std::function<core::LossWeights(long)> schedule) {
  core::TrainContext ctx;
  ctx.binning = &binning;
  if (!pipe.regions.slices.empty()) {
    const Image* brain = ordinal < static_cast<int>(pipe.brain_slices.size())
                             ? &pipe.brain_slices[static_cast<std::size_t>(ordinal)]
                             : nullptr;
    ctx.geometry = core::RegionGeometry::from_slice(
        pipe.regions.slices[static_cast<std::size_t>(ordinal)], brain,
        pipe.regions.height, pipe.regions.width);
    ctx.predictor = core::make_lr_predictor(pipe.lr_bank, binning, ordinal);
  }
  ctx.schedule = std::move(schedule);
  return ctx;
}

std::function<core::LossWeights(long)> schedule_for(const Settings& settings) {
  std::function<core::LossWeights(long)> schedule;
  if (settings.tc_enabled) {
    schedule = pwf::make_schedule(settings.pwf_params);
  } else {
    const core::LossWeights flat = pwf::initial_weights(settings.pwf_params);
    schedule = [flat](long) { return flat; };
  }
  if (!settings.zero_loss_term.empty()) {
    const std::string term = settings.zero_loss_term;
    auto base = schedule;
    schedule = [base, term](long epoch) {
      core::LossWeights w = base(epoch);
      if (term == "rec") w.rec = 0.0;
      else if (term == "b") w.b = 0.0;
      else if (term == "z") w.z = 0.0;
      else if (term == "progression") w.reg = w.vox = 0.0;
      else throw ValidationError("unknown loss term to zero: " + term);
      return w;
    };
  }
  return schedule;
}

}  // namespace

void parallel_for(int count, int workers, const std::function<void(int)>& body) {
  if (workers <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int n_threads = std::min(workers, count);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1))
          body(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
        next.store(count);
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Settings settings_from_config(const Config& cfg) {
  Settings s;
  auto& ph = s.phantom;
  ph.n_subjects = static_cast<int>(cfg.get_int("phantom.n_subjects", ph.n_subjects));
  ph.visits_per_subject =
      static_cast<int>(cfg.get_int("phantom.visits_per_subject", ph.visits_per_subject));
  ph.age_lo = cfg.get_double("phantom.age_lo", ph.age_lo);
  ph.age_hi = cfg.get_double("phantom.age_hi", ph.age_hi);
  ph.image_side = static_cast<int>(cfg.get_int("phantom.image_side", ph.image_side));
  ph.n_slices = static_cast<int>(cfg.get_int("phantom.n_slices", ph.n_slices));
  ph.noise_std = cfg.get_double("phantom.noise_std", ph.noise_std);
  ph.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 7));
  ph.visit_interval_years =
      cfg.get_double("phantom.visit_interval_years", ph.visit_interval_years);
  ph.visit_interval_jitter =
      cfg.get_double("phantom.visit_interval_jitter", ph.visit_interval_jitter);
  ph.gender_effect = cfg.get_double("phantom.gender_effect", ph.gender_effect);
  for (int d = 0; d < 4; ++d) {
    const std::string key = "phantom.rates_d" + std::to_string(d);
    if (cfg.has(key)) {
      const auto v = cfg.get_doubles(key, {});
      if (v.size() != 2)
        throw ValidationError(key + " must be growth,decay");
      ph.atrophy_rates[d] = {v[0], v[1]};
    }
  }

  auto& m = s.model;
  m.image_side = ph.image_side;
  m.latent_dim = static_cast<int>(cfg.get_int("model.latent_dim", m.latent_dim));
  m.age_bins = static_cast<int>(cfg.get_int("model.age_bins", m.age_bins));
  m.base_channels =
      static_cast<int>(cfg.get_int("model.base_channels", m.base_channels));
  m.leaky_slope = cfg.get_double("model.leaky_slope", m.leaky_slope);
  m.adam_lr = cfg.get_double("model.adam_lr", m.adam_lr);
  m.adam_beta1 = cfg.get_double("model.adam_beta1", m.adam_beta1);
  m.adam_beta2 = cfg.get_double("model.adam_beta2", m.adam_beta2);
  m.vox_hinge = cfg.get_bool("model.vox_hinge", m.vox_hinge);
  m.reg_epsilon = cfg.get_double("model.reg_epsilon", m.reg_epsilon);

  s.pwf_params = pwf::pwf_from_config(cfg);
  s.search_grid = pwf::grid_from_config(cfg);

  auto& sr = s.sr;
  sr.dense_depth = static_cast<int>(cfg.get_int("sr.dense_depth", sr.dense_depth));
  sr.growth = static_cast<int>(cfg.get_int("sr.growth", sr.growth));
  sr.patch = static_cast<int>(cfg.get_int("sr.patch", sr.patch));
  sr.batch_patches =
      static_cast<int>(cfg.get_int("sr.batch_patches", sr.batch_patches));
  sr.patches_per_pair =
      static_cast<int>(cfg.get_int("sr.patches_per_pair", sr.patches_per_pair));
  sr.adam_lr = cfg.get_double("sr.adam_lr", sr.adam_lr);

  const auto ratios = cfg.get_doubles("split.ratios", {0.72, 0.14, 0.14});
  if (ratios.size() != 3)
    throw ValidationError("split.ratios must have 3 entries");
  s.split_ratios = {ratios[0], ratios[1], ratios[2]};
  s.c_sigma = cfg.get_double("binning.c_sigma", s.c_sigma);
  s.sigma_min = cfg.get_double("binning.sigma_min", s.sigma_min);

  s.train_epochs = cfg.get_int("train.epochs", s.train_epochs);
  s.batch_size = static_cast<int>(cfg.get_int("train.batch_size", s.batch_size));
  s.common_init_iterations = static_cast<int>(
      cfg.get_int("train.common_init_iterations", s.common_init_iterations));
  s.sr_epochs = cfg.get_int("train.sr_epochs", s.sr_epochs);
  s.fine_tune_iterations = static_cast<int>(
      cfg.get_int("train.fine_tune_iterations", s.fine_tune_iterations));
  s.region_min_size = cfg.get_int("atlas.region_min_size", s.region_min_size);
  {
    std::vector<double> radii{1, 2};
    radii = cfg.get_doubles("atlas.morph_radii", radii);
    s.morph_radii.clear();
    for (double r : radii) s.morph_radii.push_back(static_cast<int>(r));
  }
  s.lr_min_samples =
      static_cast<int>(cfg.get_int("regionlr.min_samples", s.lr_min_samples));

  s.tc_enabled = cfg.get_bool("pipeline.tc", true);
  s.sr_enabled = cfg.get_bool("pipeline.sr", true);
  s.tl_enabled = cfg.get_bool("pipeline.tl", true);
  s.zero_loss_term = cfg.get_str("train.zero_loss_term", "");
  s.smooth_sigma = cfg.get_double("assemble.smooth_sigma", s.smooth_sigma);
  s.smooth_window =
      static_cast<int>(cfg.get_int("assemble.smooth_window", s.smooth_window));

  s.proxy_epochs = cfg.get_int("search.proxy_epochs", s.proxy_epochs);
  s.search_budget = cfg.get_int("search.budget", s.search_budget);

  s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 7));
  s.workers = static_cast<int>(cfg.get_int("workers", 1));
  return s;
}

std::vector<const SliceStack*> Dataset::in_split(const std::string& split) const {
  std::vector<const SliceStack*> out;
  for (std::size_t i = 0; i < stacks.size(); ++i)
    if (split_of[i] == split) out.push_back(&stacks[i]);
  return out;
}

const dataio::GroundTruth* Dataset::truth_for(const std::string& subject,
                                              double age) const {
  const dataio::GroundTruth* best = nullptr;
  double best_gap = 1e18;
  for (const auto& g : truth) {
    if (g.subject_id != subject) continue;
    const double gap = std::abs(g.age - age);
    if (gap < best_gap) {
      best_gap = gap;
      best = &g;
    }
  }
  return best;
}

void run_phantom(const Settings& settings, const std::string& out_dir) {
  fs::create_directories(out_dir + "/volumes");
  dataio::PhantomCohort cohort = dataio::generate_phantom_cohort(settings.phantom);

  const dataio::CohortSplit split = dataio::split_cohort(
      dataio::collect_subjects(cohort.scans), settings.split_ratios,
      Rng::derive(settings.phantom.seed, 0x5B117));
  std::map<std::string, std::string> split_of;
  for (const auto& id : split.train) split_of[id] = "train";
  for (const auto& id : split.val) split_of[id] = "val";
  for (const auto& id : split.test) split_of[id] = "test";

  std::vector<dataio::ManifestRecord> manifest;
  std::map<std::string, int> visit_counter;
  for (const auto& scan : cohort.scans) {
    const int visit = visit_counter[scan.subject_id]++;
    char name[64];
    std::snprintf(name, sizeof(name), "volumes/%s_v%02d.nii.gz",
                  scan.subject_id.c_str(), visit);
    const std::string path = out_dir + "/" + name;
    dataio::write_volume(scan, path);
    manifest.push_back({name, scan.subject_id, scan.age, scan.diagnosis,
                        split_of.at(scan.subject_id)});
  }
  dataio::write_manifest(manifest, out_dir + "/manifest.jsonl");
  dataio::write_ground_truth(cohort.truth, out_dir + "/ground_truth.json");

  dataio::write_volume(dataio::make_phantom_template(settings.phantom),
                       out_dir + "/template.nii.gz");
  dataio::write_volume(dataio::make_phantom_atlas(settings.phantom),
                       out_dir + "/atlas_labels.nii.gz");
}

void run_preprocess(const Settings& settings, const std::string& data_dir,
                    const std::string& out_dir) {
  fs::create_directories(out_dir);
  const auto manifest = dataio::read_manifest(data_dir + "/manifest.jsonl");
  const VolumeScan tpl = dataio::ingest_volume(data_dir + "/template.nii.gz");
  const Grid3 mask = dataio::brain_mask(tpl);

  dataio::PreprocessOptions opt;
  opt.n_slices = settings.phantom.n_slices;
  const std::vector<int> positions =
      dataio::compute_slice_positions(mask, opt.n_slices);

  std::vector<SliceStack> stacks;
  std::vector<std::string> split_of;
  for (const auto& rec : manifest) {
    VolumeScan scan = dataio::ingest_volume(data_dir + "/" + rec.path);
    auto stack = dataio::preprocess(scan, tpl, opt);
    if (!stack) {
      std::fprintf(stderr, "warning: preprocessing failed for %s; excluded\n",
                   rec.path.c_str());
      continue;
    }
    stacks.push_back(std::move(*stack));
    split_of.push_back(rec.split);
  }

  dataio::save_slice_stacks(stacks, out_dir + "/stacks.bin");

  Grid3 brain_subgrid(static_cast<int>(positions.size()), tpl.voxels.ny(),
                      tpl.voxels.nx());
  for (std::size_t n = 0; n < positions.size(); ++n)
    brain_subgrid.set_slice(static_cast<int>(n),
                            mask.slice(positions[n]));
  save_grid(brain_subgrid, out_dir + "/brain.bin");

  json meta;
  meta["slice_positions"] = positions;
  meta["splits"] = split_of;
  std::ofstream mf(out_dir + "/dataset.json");
  if (!mf) throw IoError("cannot write dataset metadata in " + out_dir);
  mf << meta.dump(2) << "\n";

  fs::copy_file(data_dir + "/ground_truth.json",
                out_dir + "/ground_truth.json",
                fs::copy_options::overwrite_existing);
}

Dataset load_dataset(const std::string& dir) {
  Dataset d;
  d.stacks = dataio::load_slice_stacks(dir + "/stacks.bin");
  std::ifstream mf(dir + "/dataset.json");
  if (!mf) throw IoError("cannot open dataset metadata in " + dir);
  json meta;
  mf >> meta;
  d.slice_positions = meta.at("slice_positions").get<std::vector<int>>();
  d.split_of = meta.at("splits").get<std::vector<std::string>>();
  if (d.split_of.size() != d.stacks.size())
    throw IoError("dataset split list does not match stack count");
  d.brain_subgrid = load_grid(dir + "/brain.bin");
  d.brain_slices = subgrid_brain_slices(d.brain_subgrid);
  d.truth = dataio::read_ground_truth(dir + "/ground_truth.json");
  return d;
}

AtlasArtifacts run_fit_atlas_lrs(const Settings& settings,
                                 const std::string& data_dir,
                                 const std::string& out_dir) {
  fs::create_directories(out_dir);
  Dataset dataset = load_dataset(data_dir);

  const VolumeScan atlas_vol = dataio::make_phantom_atlas(settings.phantom);
  AtlasArtifacts art;
  atlas::RegionSet base =
      atlas::build_regions(atlas_vol, dataset.slice_positions);
  atlas::RegionSet augmented = atlas::augment_regions(base, settings.morph_radii);
  art.regions = atlas::filter_min_size(augmented, settings.region_min_size);

  std::vector<SliceStack> train_stacks;
  for (std::size_t i = 0; i < dataset.stacks.size(); ++i)
    if (dataset.split_of[i] == "train") train_stacks.push_back(dataset.stacks[i]);

  regionlr::FitOptions fit_opt;
  fit_opt.min_samples = settings.lr_min_samples;
  art.lr_bank = regionlr::fit_region_lrs(train_stacks, art.regions,
                                         dataset.brain_slices, fit_opt,
                                         &art.report);

  atlas::save_region_set(art.regions, out_dir + "/regions");
  regionlr::save_lr_bank(art.lr_bank, out_dir + "/lr_bank.json");
  json report;
  report["fitted"] = art.report.fitted;
  report["fallbacks"] = art.report.fallbacks;
  report["notes"] = art.report.notes;
  std::ofstream rf(out_dir + "/lr_fit_report.json");
  rf << report.dump(2) << "\n";
  return art;
}

pwf::SearchResult run_search_pwf(const Settings& settings,
                                 const Dataset& dataset,
                                 const AtlasArtifacts& artifacts,
                                 const std::string& out_dir) {
  fs::create_directories(out_dir);
  const core::AgeBinning binning = binning_from_train(settings, dataset);
  const int center = settings.phantom.n_slices / 2;
  const core::SliceDataset train_ds = slice_dataset_for(dataset, center, "train");
  const core::SliceDataset val_ds = slice_dataset_for(dataset, center, "val");

  TrainedPipeline geom;
  geom.regions = artifacts.regions;
  geom.lr_bank = artifacts.lr_bank;
  geom.brain_slices = dataset.brain_slices;

  auto evaluator = [&](const pwf::PwfParams& params,
                       std::uint64_t seed) -> double {
    core::SliceModelBundle bundle =
        core::SliceModelBundle::create(center, settings.model, seed);
    core::TrainContext ctx =
        context_for_slice(geom, center, binning, pwf::make_schedule(params));
    core::TrainOptions opt;
    opt.epochs = settings.proxy_epochs;
    opt.batch_size = settings.batch_size;
    opt.seed = Rng::derive(seed, 0xBEEF);
    try {
      core::train_slice_model(bundle, train_ds, ctx, opt);
    } catch (const TrainingError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    const core::LossComponents comp =
        core::evaluate_losses(bundle, val_ds, ctx, Rng::derive(seed, 0xFACE));
    return core::loss_total(comp,
                            pwf::weights_at(params, settings.proxy_epochs - 1));
  };

  pwf::SearchResult result = pwf::grid_search_pwf(
      settings.search_grid, evaluator, settings.search_budget,
      Rng::derive(settings.seed, 0x5EA6C4));
  pwf::write_search_log(result.log, out_dir + "/search_log.jsonl");

  Config best;
  pwf::pwf_to_config(result.best, best);
  std::ofstream bf(out_dir + "/best_pwf.cfg");
  if (!bf) throw IoError("cannot write best PWF config in " + out_dir);
  bf << best.canonical();
  return result;
}

TrainedPipeline run_train(const Settings& settings, const Dataset& dataset,
                          const AtlasArtifacts& artifacts,
                          const std::string& checkpoint_dir) {
  fs::create_directories(checkpoint_dir);
  TrainedPipeline pipe;
  pipe.settings = settings;
  pipe.binning = binning_from_train(settings, dataset);
  pipe.regions = artifacts.regions;
  pipe.lr_bank = artifacts.lr_bank;
  pipe.brain_slices = dataset.brain_slices;
  pipe.slice_positions = dataset.slice_positions;

  const int T = settings.phantom.n_slices;
  const auto schedule = schedule_for(settings);

  // Optional shared starting point from a short central-slice pre-train.
  std::optional<core::SliceModelBundle> common;
  if (settings.tc_enabled && settings.common_init_iterations > 0) {
    const int center = T / 2;
    core::TrainContext ctx = context_for_slice(pipe, center, pipe.binning,
                                               schedule);
    common = pwf::common_init(slice_dataset_for(dataset, center, "train"),
                              ctx, settings.model,
                              settings.common_init_iterations,
                              Rng::derive(settings.seed, 0xC011));
  }

  pipe.bundles.resize(static_cast<std::size_t>(T));
  std::vector<core::LossHistory> histories(static_cast<std::size_t>(T));
  parallel_for(T, settings.workers, [&](int n) {
    core::SliceModelBundle bundle =
        common ? *common
               : core::SliceModelBundle::create(
                     n, settings.model, Rng::derive(settings.seed, 100 + n));
    bundle.slice_ordinal = n;
    bundle.epoch = 0;
    core::TrainContext ctx = context_for_slice(pipe, n, pipe.binning, schedule);
    core::TrainOptions opt;
    opt.epochs = settings.train_epochs;
    opt.batch_size = settings.batch_size;
    opt.seed = Rng::derive(settings.seed, 200 + n);
    histories[static_cast<std::size_t>(n)] =
        core::train_slice_model(bundle, slice_dataset_for(dataset, n, "train"),
                                ctx, opt);
    pipe.bundles[static_cast<std::size_t>(n)] = std::move(bundle);
  });

  // Self-supervised super-resolution stage on the train split.
  if (settings.sr_enabled) {
    std::vector<Grid3> hr, lr;
    for (const SliceStack* st : dataset.in_split("train")) {
      hr.push_back(dataio::stack_to_volume(*st));
      const std::vector<Grid3> bins = simulate_bins(pipe, pipe.bundles, *st);
      lr.push_back(simulate_at_age(pipe, bins, st->age));
    }
    const auto pairs = superres::make_lr_hr_pairs(hr, lr);
    superres::SrModel sr = superres::SrModel::random_init(
        settings.sr, Rng::derive(settings.seed, 0x5A));
    const auto sr_history = superres::train_sr(
        sr, pairs, settings.sr_epochs, Rng::derive(settings.seed, 0x5B));
    pipe.sr = std::move(sr);

    json hist = json::array();
    for (const auto& e : sr_history)
      hist.push_back({{"epoch", e.epoch}, {"mse", e.mse}});
    std::ofstream hf(checkpoint_dir + "/sr_history.json");
    hf << hist.dump(2) << "\n";
  }

  // Persist everything the checkpoint needs to run standalone.
  for (int n = 0; n < T; ++n) {
    char sub[32];
    std::snprintf(sub, sizeof(sub), "slice_%03d", n);
    const std::string dir = checkpoint_dir + "/" + sub;
    core::save_bundle(pipe.bundles[static_cast<std::size_t>(n)], dir);
    core::save_history(histories[static_cast<std::size_t>(n)],
                       dir + "/history.json");
  }
  if (pipe.sr) pipe.sr->save(checkpoint_dir + "/sr");
  atlas::save_region_set(pipe.regions, checkpoint_dir + "/regions");
  regionlr::save_lr_bank(pipe.lr_bank, checkpoint_dir + "/lr_bank.json");

  Grid3 brain(static_cast<int>(pipe.brain_slices.size()),
              static_cast<int>(pipe.brain_slices[0].rows()),
              static_cast<int>(pipe.brain_slices[0].cols()));
  for (std::size_t n = 0; n < pipe.brain_slices.size(); ++n)
    brain.set_slice(static_cast<int>(n), pipe.brain_slices[n]);
  save_grid(brain, checkpoint_dir + "/brain.bin");

  json meta;
  meta["n_slices"] = T;
  meta["slice_positions"] = pipe.slice_positions;
  meta["binning"] = binning_to_json(pipe.binning);
  meta["tc"] = settings.tc_enabled;
  meta["sr"] = settings.sr_enabled;
  meta["tl"] = settings.tl_enabled;
  meta["smooth_sigma"] = settings.smooth_sigma;
  meta["smooth_window"] = settings.smooth_window;
  meta["fine_tune_iterations"] = settings.fine_tune_iterations;
  meta["seed"] = settings.seed;
  {
    Config pw;
    pwf::pwf_to_config(settings.pwf_params, pw);
    meta["pwf"] = pw.canonical();
  }
  std::ofstream mf(checkpoint_dir + "/pipeline.json");
  if (!mf) throw IoError("cannot write pipeline manifest in " + checkpoint_dir);
  mf << meta.dump(2) << "\n";
  return pipe;
}

TrainedPipeline load_pipeline(const std::string& checkpoint_dir) {
  std::ifstream mf(checkpoint_dir + "/pipeline.json");
  if (!mf)
    throw CheckpointError("missing pipeline manifest in " + checkpoint_dir);
  json meta;
  mf >> meta;

  TrainedPipeline pipe;
  const int T = meta.at("n_slices").get<int>();
  pipe.slice_positions = meta.at("slice_positions").get<std::vector<int>>();
  pipe.binning = binning_from_json(meta.at("binning"));
  pipe.settings.tc_enabled = meta.at("tc").get<bool>();
  pipe.settings.sr_enabled = meta.at("sr").get<bool>();
  pipe.settings.tl_enabled = meta.at("tl").get<bool>();
  pipe.settings.smooth_sigma = meta.at("smooth_sigma").get<double>();
  pipe.settings.smooth_window = meta.at("smooth_window").get<int>();
  pipe.settings.fine_tune_iterations =
      meta.at("fine_tune_iterations").get<int>();
  pipe.settings.seed = meta.at("seed").get<std::uint64_t>();
  pipe.settings.pwf_params =
      pwf::pwf_from_config(Config::from_string(meta.at("pwf").get<std::string>()));
  pipe.settings.phantom.n_slices = T;

  for (int n = 0; n < T; ++n) {
    char sub[32];
    std::snprintf(sub, sizeof(sub), "slice_%03d", n);
    pipe.bundles.push_back(core::load_bundle(checkpoint_dir + "/" + sub));
  }
  pipe.settings.model = pipe.bundles.front().cfg;
  if (pipe.settings.sr_enabled)
    pipe.sr = superres::SrModel::load(checkpoint_dir + "/sr");
  pipe.regions = atlas::load_region_set(checkpoint_dir + "/regions");
  pipe.lr_bank = regionlr::load_lr_bank(checkpoint_dir + "/lr_bank.json");
  pipe.brain_slices = subgrid_brain_slices(load_grid(checkpoint_dir + "/brain.bin"));
  return pipe;
}

std::vector<double> bin_centers(const core::AgeBinning& binning) {
  std::vector<double> centers;
  for (const auto& b : binning.bins) centers.push_back(b.center);
  return centers;
}

std::vector<Grid3> simulate_bins(const TrainedPipeline& pipe,
                                 const std::vector<core::SliceModelBundle>& bundles,
                                 const SliceStack& baseline) {
  const int T = static_cast<int>(bundles.size());
  if (baseline.slice_count() < T)
    throw ValidationError("baseline stack lacks slices");
  std::vector<core::Sequence> per_slice(static_cast<std::size_t>(T));
  for (int n = 0; n < T; ++n)
    per_slice[static_cast<std::size_t>(n)] = core::generate_sequence(
        bundles[static_cast<std::size_t>(n)],
        baseline.slices[static_cast<std::size_t>(n)], baseline.diagnosis);

  const double sigma = pipe.settings.tc_enabled ? pipe.settings.smooth_sigma : 1.0;
  const int window = pipe.settings.tc_enabled ? pipe.settings.smooth_window : 0;
  std::vector<Grid3> volumes =
      assemble::stack_and_smooth(per_slice, baseline, sigma, window);

  if (pipe.settings.sr_enabled && pipe.sr) {
    for (auto& v : volumes) v = pipe.sr->apply(v);
  }
  return volumes;
}

Grid3 simulate_at_age(const TrainedPipeline& pipe,
                      const std::vector<Grid3>& bin_volumes, double age,
                      bool* clamped) {
  return assemble::interpolate_age(bin_volumes, bin_centers(pipe.binning), age,
                                   clamped);
}

std::vector<core::SliceModelBundle> personalize_subject(
    const TrainedPipeline& pipe, const SliceStack& baseline,
    std::uint64_t seed, int workers) {
  const core::LossWeights flat =
      pwf::asymptotic_weights(pipe.settings.pwf_params);
  auto factory = [&](int n) {
    return context_for_slice(pipe, n, pipe.binning,
                             [flat](long) { return flat; });
  };
  personalize::FineTuneOptions opt;
  opt.iterations = pipe.settings.fine_tune_iterations;
  opt.seed = seed;
  opt.workers = workers;
  const superres::SrModel* sr = pipe.sr ? &*pipe.sr : nullptr;
  return personalize::fine_tune(pipe.bundles, sr, baseline, factory, opt);
}

std::vector<evaluate::EvalRegion> eval_regions_for(const Settings& settings,
                                                   const Dataset& dataset) {
  const VolumeScan atlas_vol = dataio::make_phantom_atlas(settings.phantom);
  const int T = static_cast<int>(dataset.slice_positions.size());
  const int h = atlas_vol.voxels.ny(), w = atlas_vol.voxels.nx();

  auto subgrid_label = [&](int label) {
    Grid3 mask(T, h, w);
    for (int n = 0; n < T; ++n) {
      const int z = dataset.slice_positions[static_cast<std::size_t>(n)];
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          mask.at(n, y, x) =
              std::lround(atlas_vol.voxels.at(z, y, x)) == label ? 1.0 : 0.0;
    }
    return mask;
  };

  std::vector<evaluate::EvalRegion> regions;
  regions.push_back(
      {"ventricle", subgrid_label(1), evaluate::VolumeMode::frac_below});
  regions.push_back(
      {"tissue", subgrid_label(2), evaluate::VolumeMode::frac_above});
  return regions;
}

EvaluateOutput run_evaluate(const TrainedPipeline& pipe, const Dataset& dataset,
                            const std::string& out_dir) {
  fs::create_directories(out_dir);
  const auto regions = eval_regions_for(pipe.settings, dataset);
  const Grid3& brain = dataset.brain_subgrid;

  // Group the test split by subject, baseline first.
  std::map<std::string, std::vector<const SliceStack*>> by_subject;
  for (std::size_t i = 0; i < dataset.stacks.size(); ++i)
    if (dataset.split_of[i] == "test")
      by_subject[dataset.stacks[i].subject_id].push_back(&dataset.stacks[i]);
  for (auto& [sid, stacks] : by_subject)
    std::sort(stacks.begin(), stacks.end(),
              [](const SliceStack* a, const SliceStack* b) {
                return a->age < b->age;
              });

  EvaluateOutput out;
  std::map<std::string, std::vector<std::pair<double, double>>> proposed_cases;

  struct FollowupCase {
    std::string subject;
    int diagnosis;
    double age;
    double gender;
    std::map<std::string, double> real;
  };
  std::vector<FollowupCase> followups;

  for (const auto& [sid, stacks] : by_subject) {
    if (stacks.size() < 2) continue;
    const SliceStack& baseline = *stacks.front();

    std::vector<core::SliceModelBundle> bundles = pipe.bundles;
    if (pipe.settings.tl_enabled)
      bundles = personalize_subject(
          pipe, baseline,
          Rng::derive(pipe.settings.seed, std::hash<std::string>{}(sid)),
          pipe.settings.workers);

    const std::vector<Grid3> bins = simulate_bins(pipe, bundles, baseline);
    for (const auto& vol : bins) {
      out.trajectories[sid].push_back(
          evaluate::region_volumes(vol, regions, brain));
      double tsum = 0.0;
      long tcount = 0;
      for (std::size_t i = 0; i < vol.raw().size(); ++i)
        if (brain.raw()[i] > 0.5) {
          tsum += vol.raw()[i];
          ++tcount;
        }
      out.tissue_means[sid].push_back(tcount ? tsum / tcount : 0.0);
    }

    for (std::size_t v = 1; v < stacks.size(); ++v) {
      const SliceStack& follow = *stacks[v];
      const Grid3 predicted = simulate_at_age(pipe, bins, follow.age);
      const auto pred_vols = evaluate::region_volumes(predicted, regions, brain);
      const Grid3 real_vol = dataio::stack_to_volume(follow);
      const auto real_vols = evaluate::region_volumes(real_vol, regions, brain);
      for (const auto& r : regions)
        proposed_cases[r.name].push_back(
            {pred_vols.at(r.name), real_vols.at(r.name)});

      FollowupCase fc;
      fc.subject = sid;
      fc.diagnosis = follow.diagnosis;
      fc.age = follow.age;
      const dataio::GroundTruth* gt = dataset.truth_for(sid, follow.age);
      fc.gender = gt ? gt->gender : 0.0;
      fc.real = real_vols;
      followups.push_back(std::move(fc));
    }
  }
  out.reports.push_back(evaluate::volume_mae(proposed_cases, "proposed"));

  // Regression baselines trained directly on extracted train volumes.
  std::map<std::string, std::vector<evaluate::RegressorRow>> train_rows;
  for (std::size_t i = 0; i < dataset.stacks.size(); ++i) {
    if (dataset.split_of[i] != "train") continue;
    const SliceStack& st = dataset.stacks[i];
    const auto vols = evaluate::region_volumes(dataio::stack_to_volume(st),
                                               regions, brain);
    const dataio::GroundTruth* gt = dataset.truth_for(st.subject_id, st.age);
    for (const auto& [name, pct] : vols)
      train_rows[name].push_back({st.subject_id, st.diagnosis, st.age,
                                  gt ? static_cast<double>(gt->gender) : 0.0,
                                  pct});
  }

  auto collect = [&](const std::string& label,
                     const std::function<double(const std::string& region,
                                                const FollowupCase&)>& predict) {
    std::map<std::string, std::vector<std::pair<double, double>>> cases;
    for (const auto& fc : followups)
      for (const auto& r : regions)
        cases[r.name].push_back(
            {predict(r.name, fc), fc.real.at(r.name)});
    out.reports.push_back(evaluate::volume_mae(cases, label));
  };

  std::map<std::string, evaluate::SvrModel> svr, svr_trim;
  std::map<std::string, evaluate::LmeModel> lme, lme_trim;
  evaluate::SvrConfig svr_cfg;
  evaluate::LmeConfig lme_cfg;
  for (const auto& [region, rows] : train_rows) {
    svr[region] = evaluate::fit_svr_baseline(rows, svr_cfg);
    lme[region] = evaluate::fit_lme_baseline(rows, lme_cfg);
    {
      const auto& model = svr[region];
      auto trimmed = evaluate::trim_outliers<evaluate::RegressorRow>(
          rows, 0.20, [&](const evaluate::RegressorRow& r) {
            return model.predict(r.age, r.gender, r.diagnosis);
          });
      svr_trim[region] = evaluate::fit_svr_baseline(trimmed, svr_cfg);
    }
    {
      const auto& model = lme[region];
      auto trimmed = evaluate::trim_outliers<evaluate::RegressorRow>(
          rows, 0.20, [&](const evaluate::RegressorRow& r) {
            return model.predict(r.age, r.gender, r.diagnosis);
          });
      lme_trim[region] = evaluate::fit_lme_baseline(trimmed, lme_cfg);
    }
  }

  collect("svr", [&](const std::string& region, const FollowupCase& fc) {
    return svr.at(region).predict(fc.age, fc.gender, fc.diagnosis);
  });
  collect("svr_trimmed", [&](const std::string& region, const FollowupCase& fc) {
    return svr_trim.at(region).predict(fc.age, fc.gender, fc.diagnosis);
  });
  collect("lme", [&](const std::string& region, const FollowupCase& fc) {
    return lme.at(region).predict(fc.age, fc.gender, fc.diagnosis);
  });
  collect("lme_trimmed", [&](const std::string& region, const FollowupCase& fc) {
    return lme_trim.at(region).predict(fc.age, fc.gender, fc.diagnosis);
  });
  {
    std::map<std::string, double> constant;
    for (const auto& [region, rows] : train_rows)
      constant[region] = evaluate::fit_constant_mean(rows);
    collect("constant_mean", [&](const std::string& region, const FollowupCase&) {
      return constant.at(region);
    });
  }

  evaluate::write_reports_csv(out.reports, out_dir + "/volume_mae.csv");
  std::ofstream tf(out_dir + "/volume_mae.txt");
  tf << evaluate::render_reports_table(out.reports);

  json traj;
  for (const auto& [sid, series] : out.trajectories) {
    json s = json::array();
    for (const auto& m : series) s.push_back(m);
    traj[sid]["regions"] = std::move(s);
    traj[sid]["tissue_mean"] = out.tissue_means.at(sid);
  }
  std::ofstream jf(out_dir + "/trajectories.json");
  jf << traj.dump(2) << "\n";
  return out;
}

AblationOutput run_ablation(const Settings& settings, const Dataset& dataset,
                            const AtlasArtifacts& artifacts,
                            const std::string& out_dir, bool loss_terms) {
  fs::create_directories(out_dir);
  AblationOutput out;

  struct CellSpec {
    std::string label;
    bool tc, sr, tl;
    std::string zero_term;
  };
  std::vector<CellSpec> specs = {
      {"full_tc_sr_tl", true, true, true, ""},
      {"no_tc", false, true, true, ""},
      {"no_sr", true, false, true, ""},
      {"no_tl", true, true, false, ""},
  };
  if (loss_terms) {
    specs.push_back({"zero_progression", true, true, true, "progression"});
    specs.push_back({"zero_rec", true, true, true, "rec"});
    specs.push_back({"zero_b", true, true, true, "b"});
    specs.push_back({"zero_z", true, true, true, "z"});
  }

  for (const auto& spec : specs) {
    Settings cell = settings;
    cell.tc_enabled = spec.tc;
    cell.sr_enabled = spec.sr;
    cell.tl_enabled = spec.tl;
    cell.zero_loss_term = spec.zero_term;
    const std::string cell_dir = out_dir + "/" + spec.label;
    TrainedPipeline pipe =
        run_train(cell, dataset, artifacts, cell_dir + "/checkpoint");
    EvaluateOutput ev = run_evaluate(pipe, dataset, cell_dir);
    AblationCell result;
    result.label = spec.label;
    result.tc = spec.tc;
    result.sr = spec.sr;
    result.tl = spec.tl;
    for (auto& rep : ev.reports)
      if (rep.label == "proposed") {
        rep.label = spec.label;
        result.report = rep;
      }
    out.cells.push_back(std::move(result));
  }

  const auto* full = &out.cells.front().report;
  auto fill_improvement = [&](const std::string& component,
                              const std::string& cell_label) {
    for (const auto& cell : out.cells) {
      if (cell.label != cell_label) continue;
      for (const auto& row : cell.report.rows) {
        const evaluate::VolumeReportRow* with = full->find(row.region);
        if (with)
          out.improvements[component][row.region] =
              evaluate::percent_improvement(row.mae, with->mae);
      }
    }
  };
  fill_improvement("training_consistency", "no_tc");
  fill_improvement("super_resolution", "no_sr");
  fill_improvement("transfer_learning", "no_tl");
  if (loss_terms) {
    fill_improvement("loss_progression", "zero_progression");
    fill_improvement("loss_reconstruction", "zero_rec");
    fill_improvement("loss_brain_realism", "zero_b");
    fill_improvement("loss_temporal_smoothing", "zero_z");
  }

  std::vector<evaluate::VolumeReport> reports;
  for (const auto& cell : out.cells) reports.push_back(cell.report);
  evaluate::write_reports_csv(reports, out_dir + "/ablation_mae.csv");
  std::ofstream tf(out_dir + "/ablation_mae.txt");
  tf << evaluate::render_reports_table(reports);

  json imp;
  for (const auto& [component, regions] : out.improvements)
    for (const auto& [region, pct] : regions)
      imp[component][region] = pct;
  std::ofstream jf(out_dir + "/ablation_improvements.json");
  jf << imp.dump(2) << "\n";
  return out;
}

void write_run_manifest(const Config& cfg, const std::string& command,
                        const std::string& out_dir) {
  fs::create_directories(out_dir);
  json manifest;
  manifest["command"] = command;
  manifest["config_hash"] = cfg.hash();
  manifest["seed"] = cfg.get_int("seed", 7);
  manifest["tool_version"] = kToolVersion;
  manifest["config"] = cfg.canonical();
  std::ofstream out(out_dir + "/run_manifest.json");
  if (!out) throw IoError("cannot write run manifest in " + out_dir);
  out << manifest.dump(2) << "\n";
}

}  // namespace prognet::pipeline
