// Command-line front end: cohort generation, preprocessing, region/LR
// fitting, PWF search, training, simulation, personalization, evaluation
// and ablation. Every command runs from one config file plus overrides and
// writes a run manifest next to its outputs.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "prognet/errors.hpp"
#include "prognet/pipeline.hpp"

namespace fs = std::filesystem;
using namespace prognet;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitCheckpoint = 3;
constexpr int kExitData = 4;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  long seed = -1;
  int workers = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value config file");
  cmd->add_option("--set", args.overrides,
                  "override a config key (key=value, repeatable)");
  cmd->add_option("--seed", args.seed, "override the run seed");
  cmd->add_option("--workers", args.workers, "per-slice worker threads");
}

Config build_config(const CommonArgs& args) {
  Config cfg = args.config_path.empty() ? Config()
                                        : Config::from_file(args.config_path);
  cfg.apply_env_overrides();
  for (const auto& o : args.overrides) cfg.set_override(o);
  if (args.seed >= 0) cfg.set("seed", std::to_string(args.seed));
  if (args.workers > 0) cfg.set("workers", std::to_string(args.workers));
  return cfg;
}

std::vector<double> parse_ages(const std::string& csv) {
  std::vector<double> ages;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) ages.push_back(std::stod(item));
  }
  if (ages.empty()) throw ValidationError("--ages needs at least one age");
  return ages;
}

const SliceStack& baseline_stack(const pipeline::Dataset& dataset,
                                 const std::string& subject) {
  const SliceStack* best = nullptr;
  for (const auto& st : dataset.stacks) {
    if (st.subject_id != subject) continue;
    if (!best || st.age < best->age) best = &st;
  }
  if (!best) throw ValidationError("subject not in dataset: " + subject);
  return *best;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"longitudinal brain image progression simulator"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string data_dir, atlas_dir, checkpoint_dir, out_dir;
  std::string subject, ages_csv;
  bool personalized = false;
  bool loss_terms = false;

  auto* c_phantom = app.add_subcommand("phantom", "generate a phantom cohort");
  add_common(c_phantom, common);
  c_phantom->add_option("--out", out_dir, "output directory")->required();

  auto* c_pre = app.add_subcommand("preprocess", "align, mask, slice, standardize");
  add_common(c_pre, common);
  c_pre->add_option("--data", data_dir, "cohort directory (from phantom)")
      ->required();
  c_pre->add_option("--out", out_dir, "dataset output directory")->required();

  auto* c_fit = app.add_subcommand("fit-atlas-lrs",
                                   "build region masks and fit regressors");
  add_common(c_fit, common);
  c_fit->add_option("--data", data_dir, "dataset directory")->required();
  c_fit->add_option("--out", out_dir, "artifacts output directory")->required();

  auto* c_search = app.add_subcommand("search-pwf",
                                      "random grid search for loss weights");
  add_common(c_search, common);
  c_search->add_option("--data", data_dir, "dataset directory")->required();
  c_search->add_option("--atlas", atlas_dir, "atlas artifacts directory")
      ->required();
  c_search->add_option("--out", out_dir, "search output directory")->required();

  auto* c_train = app.add_subcommand("train", "train the slice models and SR");
  add_common(c_train, common);
  c_train->add_option("--data", data_dir, "dataset directory")->required();
  c_train->add_option("--atlas", atlas_dir, "atlas artifacts directory")
      ->required();
  c_train->add_option("--out", out_dir, "checkpoint output directory")
      ->required();

  auto* c_sim = app.add_subcommand("simulate", "synthesize a subject series");
  add_common(c_sim, common);
  c_sim->add_option("--checkpoint", checkpoint_dir, "trained checkpoint")
      ->required();
  c_sim->add_option("--data", data_dir, "dataset directory")->required();
  c_sim->add_option("--subject", subject, "subject id")->required();
  c_sim->add_option("--ages", ages_csv, "comma-separated requested ages")
      ->required();
  c_sim->add_option("--out", out_dir, "output directory")->required();
  c_sim->add_flag("--personalized", personalized,
                  "use the personalized bundles saved for this subject");

  auto* c_pers = app.add_subcommand("personalize",
                                    "fine-tune on a subject baseline");
  add_common(c_pers, common);
  c_pers->add_option("--checkpoint", checkpoint_dir, "trained checkpoint")
      ->required();
  c_pers->add_option("--data", data_dir, "dataset directory")->required();
  c_pers->add_option("--subject", subject, "subject id")->required();

  auto* c_eval = app.add_subcommand("evaluate", "volume-MAE protocol + baselines");
  add_common(c_eval, common);
  c_eval->add_option("--checkpoint", checkpoint_dir, "trained checkpoint")
      ->required();
  c_eval->add_option("--data", data_dir, "dataset directory")->required();
  c_eval->add_option("--out", out_dir, "report output directory")->required();

  auto* c_abl = app.add_subcommand("ablate", "component/loss ablation grid");
  add_common(c_abl, common);
  c_abl->add_option("--data", data_dir, "dataset directory")->required();
  c_abl->add_option("--atlas", atlas_dir, "atlas artifacts directory")
      ->required();
  c_abl->add_option("--out", out_dir, "ablation output directory")->required();
  c_abl->add_flag("--loss-terms", loss_terms,
                  "also ablate each loss term (retrains per term)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return kExitUsage;
  }

  try {
    const Config cfg = build_config(common);
    const pipeline::Settings settings = pipeline::settings_from_config(cfg);

    if (c_phantom->parsed()) {
      pipeline::run_phantom(settings, out_dir);
      pipeline::write_run_manifest(cfg, "phantom", out_dir);
    } else if (c_pre->parsed()) {
      pipeline::run_preprocess(settings, data_dir, out_dir);
      pipeline::write_run_manifest(cfg, "preprocess", out_dir);
    } else if (c_fit->parsed()) {
      pipeline::run_fit_atlas_lrs(settings, data_dir, out_dir);
      pipeline::write_run_manifest(cfg, "fit-atlas-lrs", out_dir);
    } else if (c_search->parsed()) {
      pipeline::Dataset dataset = pipeline::load_dataset(data_dir);
      pipeline::AtlasArtifacts art;
      art.regions = atlas::load_region_set(atlas_dir + "/regions");
      art.lr_bank = regionlr::load_lr_bank(atlas_dir + "/lr_bank.json");
      pipeline::run_search_pwf(settings, dataset, art, out_dir);
      pipeline::write_run_manifest(cfg, "search-pwf", out_dir);
    } else if (c_train->parsed()) {
      pipeline::Dataset dataset = pipeline::load_dataset(data_dir);
      pipeline::AtlasArtifacts art;
      art.regions = atlas::load_region_set(atlas_dir + "/regions");
      art.lr_bank = regionlr::load_lr_bank(atlas_dir + "/lr_bank.json");
      pipeline::run_train(settings, dataset, art, out_dir);
      pipeline::write_run_manifest(cfg, "train", out_dir);
    } else if (c_sim->parsed()) {
      pipeline::TrainedPipeline pipe = pipeline::load_pipeline(checkpoint_dir);
      pipeline::Dataset dataset = pipeline::load_dataset(data_dir);
      const SliceStack& baseline = baseline_stack(dataset, subject);

      std::vector<core::SliceModelBundle> bundles = pipe.bundles;
      if (personalized) {
        const std::string pdir = checkpoint_dir + "/personalized/" + subject;
        if (!fs::exists(pdir + "/slice_000/manifest.json"))
          throw CheckpointError("no personalized checkpoint for " + subject +
                                " under " + pdir);
        bundles.clear();
        for (std::size_t n = 0; n < pipe.bundles.size(); ++n) {
          char sub[32];
          std::snprintf(sub, sizeof(sub), "slice_%03zu", n);
          bundles.push_back(core::load_bundle(pdir + "/" + sub));
        }
      }

      fs::create_directories(out_dir);
      const std::vector<Grid3> bins =
          pipeline::simulate_bins(pipe, bundles, baseline);
      const std::vector<double> centers = pipeline::bin_centers(pipe.binning);

      nlohmann::json series;
      series["subject"] = subject;
      series["bin_centers"] = centers;
      nlohmann::json files = nlohmann::json::array();
      for (std::size_t i = 0; i < bins.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "bin_%02zu.nii.gz", i);
        VolumeScan v;
        v.subject_id = subject;
        v.age = centers[i];
        v.diagnosis = baseline.diagnosis;
        v.voxels = bins[i];
        dataio::write_volume(v, out_dir + "/" + name);
        files.push_back(name);
      }
      series["bin_files"] = std::move(files);

      nlohmann::json requested = nlohmann::json::array();
      for (double age : parse_ages(ages_csv)) {
        bool clamped = false;
        const Grid3 vol = pipeline::simulate_at_age(pipe, bins, age, &clamped);
        if (clamped)
          std::fprintf(stderr,
                       "warning: age %.2f outside bin centers; clamped\n", age);
        char name[64];
        std::snprintf(name, sizeof(name), "sim_age_%.2f.nii.gz", age);
        VolumeScan v;
        v.subject_id = subject;
        v.age = age;
        v.diagnosis = baseline.diagnosis;
        v.voxels = vol;
        dataio::write_volume(v, out_dir + "/" + name);
        requested.push_back({{"age", age}, {"file", name}, {"clamped", clamped}});
      }
      series["requested"] = std::move(requested);
      std::ofstream sf(out_dir + "/series_manifest.json");
      sf << series.dump(2) << "\n";
      pipeline::write_run_manifest(cfg, "simulate", out_dir);
    } else if (c_pers->parsed()) {
      pipeline::TrainedPipeline pipe = pipeline::load_pipeline(checkpoint_dir);
      pipeline::Dataset dataset = pipeline::load_dataset(data_dir);
      const SliceStack& baseline = baseline_stack(dataset, subject);
      const auto bundles = pipeline::personalize_subject(
          pipe, baseline,
          Rng::derive(settings.seed, std::hash<std::string>{}(subject)),
          settings.workers);
      const std::string pdir = checkpoint_dir + "/personalized/" + subject;
      for (std::size_t n = 0; n < bundles.size(); ++n) {
        char sub[32];
        std::snprintf(sub, sizeof(sub), "slice_%03zu", n);
        core::save_bundle(bundles[n], pdir + "/" + sub);
      }
      pipeline::write_run_manifest(cfg, "personalize", pdir);
    } else if (c_eval->parsed()) {
      pipeline::TrainedPipeline pipe = pipeline::load_pipeline(checkpoint_dir);
      pipeline::Dataset dataset = pipeline::load_dataset(data_dir);
      pipeline::run_evaluate(pipe, dataset, out_dir);
      pipeline::write_run_manifest(cfg, "evaluate", out_dir);
    } else if (c_abl->parsed()) {
      pipeline::Dataset dataset = pipeline::load_dataset(data_dir);
      pipeline::AtlasArtifacts art;
      art.regions = atlas::load_region_set(atlas_dir + "/regions");
      art.lr_bank = regionlr::load_lr_bank(atlas_dir + "/lr_bank.json");
      pipeline::run_ablation(settings, dataset, art, out_dir, loss_terms);
      pipeline::write_run_manifest(cfg, "ablate", out_dir);
    }
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "error: checkpoint: %s\n", e.what());
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: data: %s\n", e.what());
    return kExitData;
  }
  return 0;
}
