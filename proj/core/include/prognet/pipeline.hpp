#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prognet/assemble.hpp"
#include "prognet/atlas.hpp"
#include "prognet/config.hpp"
#include "prognet/dataio.hpp"
#include "prognet/evaluate.hpp"
#include "prognet/personalize.hpp"
#include "prognet/pwf.hpp"
#include "prognet/regionlr.hpp"
#include "prognet/slice_model.hpp"
#include "prognet/superres.hpp"

namespace prognet::pipeline {

/// Settings decoded from the flat config file. Every knob has a default;
/// the config file is the single source of truth for a run.
struct Settings {
  dataio::PhantomSpec phantom;
  core::ModelConfig model;
  pwf::PwfParams pwf_params;
  superres::SrConfig sr;

  std::array<double, 3> split_ratios = {0.72, 0.14, 0.14};
  double c_sigma = 1.0;
  double sigma_min = 0.5;

  long train_epochs = 50;
  int batch_size = 100;
  int common_init_iterations = 10;
  long sr_epochs = 8;
  int fine_tune_iterations = 50;
  long region_min_size = 8;
  std::vector<int> morph_radii = {1, 2};
  int lr_min_samples = 5;

  bool tc_enabled = true;  // PWF schedule + common init + cross-slice smoothing
  bool sr_enabled = true;
  bool tl_enabled = true;
  /// "" | "rec" | "b" | "z" | "progression" (loss-term ablation).
  std::string zero_loss_term;
  double smooth_sigma = 1.5;
  int smooth_window = 2;

  long proxy_epochs = 15;  // grid-search proxy training length
  long search_budget = 8;
  pwf::PwfGrid search_grid;

  std::uint64_t seed = 7;
  int workers = 1;
};

Settings settings_from_config(const Config& cfg);

/// Preprocessed dataset on disk: stacks + split + template-space geometry.
struct Dataset {
  std::vector<SliceStack> stacks;          // all scans
  std::vector<std::string> split_of;       // parallel: train/val/test
  std::vector<int> slice_positions;        // template z per ordinal
  Grid3 brain_subgrid;                     // (T,S,S) brain mask
  std::vector<Image> brain_slices;         // per ordinal
  std::vector<dataio::GroundTruth> truth;  // parallel to stacks

  std::vector<const SliceStack*> in_split(const std::string& split) const;
  const dataio::GroundTruth* truth_for(const std::string& subject,
                                       double age) const;
};

/// A trained progression model plus everything needed to run it.
struct TrainedPipeline {
  Settings settings;
  core::AgeBinning binning;
  std::vector<core::SliceModelBundle> bundles;  // T
  std::optional<superres::SrModel> sr;
  atlas::RegionSet regions;
  regionlr::LrBank lr_bank;
  std::vector<Image> brain_slices;
  std::vector<int> slice_positions;
};

// --- Stage functions (shared by CLI commands and tests) --------------------

void run_phantom(const Settings& settings, const std::string& out_dir);

/// Reads the cohort manifest + template under data_dir (as written by
/// run_phantom), preprocesses every scan and writes the dataset bundle.
void run_preprocess(const Settings& settings, const std::string& data_dir,
                    const std::string& out_dir);

Dataset load_dataset(const std::string& dir);

/// Region construction + regressor fitting from the train split.
struct AtlasArtifacts {
  atlas::RegionSet regions;
  regionlr::LrBank lr_bank;
  regionlr::FitReport report;
};
AtlasArtifacts run_fit_atlas_lrs(const Settings& settings,
                                 const std::string& data_dir,
                                 const std::string& out_dir);

/// Random grid search for PWF parameters on proxy trainings.
pwf::SearchResult run_search_pwf(const Settings& settings,
                                 const Dataset& dataset,
                                 const AtlasArtifacts& artifacts,
                                 const std::string& out_dir);

TrainedPipeline run_train(const Settings& settings, const Dataset& dataset,
                          const AtlasArtifacts& artifacts,
                          const std::string& checkpoint_dir);

TrainedPipeline load_pipeline(const std::string& checkpoint_dir);

/// A-bin volumes for one subject baseline (optionally personalized
/// bundles); smoothing and SR are applied per the pipeline settings.
std::vector<Grid3> simulate_bins(const TrainedPipeline& pipe,
                                 const std::vector<core::SliceModelBundle>& bundles,
                                 const SliceStack& baseline);

Grid3 simulate_at_age(const TrainedPipeline& pipe,
                      const std::vector<Grid3>& bin_volumes, double age,
                      bool* clamped = nullptr);

std::vector<double> bin_centers(const core::AgeBinning& binning);

/// Personalized per-slice bundles for one subject (the shared checkpoint is
/// not modified). Uses the asymptotic PWF weights.
std::vector<core::SliceModelBundle> personalize_subject(
    const TrainedPipeline& pipe, const SliceStack& baseline,
    std::uint64_t seed, int workers);

/// Evaluation region definitions on the slice subgrid (ventricle dark
/// fraction, tissue bright fraction).
std::vector<evaluate::EvalRegion> eval_regions_for(const Settings& settings,
                                                   const Dataset& dataset);

struct EvaluateOutput {
  std::vector<evaluate::VolumeReport> reports;  // proposed + baselines
  /// Per-subject per-bin region measurements of the simulated series.
  std::map<std::string, std::vector<std::map<std::string, double>>>
      trajectories;
  /// Mean tissue intensity per bin per subject (direction checks).
  std::map<std::string, std::vector<double>> tissue_means;
};

EvaluateOutput run_evaluate(const TrainedPipeline& pipe, const Dataset& dataset,
                            const std::string& out_dir);

struct AblationCell {
  std::string label;
  bool tc = true, sr = true, tl = true;
  evaluate::VolumeReport report;
};

struct AblationOutput {
  std::vector<AblationCell> cells;
  /// component -> region -> percent improvement of the full configuration.
  std::map<std::string, std::map<std::string, double>> improvements;
};

/// Component ablation over {TC, SR, TL}; shares data and seeds across
/// cells. When loss_terms is true, additionally retrains with each loss
/// weight zeroed (reg+vox together as the progression term).
AblationOutput run_ablation(const Settings& settings, const Dataset& dataset,
                            const AtlasArtifacts& artifacts,
                            const std::string& out_dir, bool loss_terms);

/// Run manifest written by every command (reproducibility record).
void write_run_manifest(const Config& cfg, const std::string& command,
                        const std::string& out_dir);

void parallel_for(int count, int workers,
                  const std::function<void(int)>& body);

}  // namespace prognet::pipeline
