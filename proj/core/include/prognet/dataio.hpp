#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prognet/volume.hpp"

namespace prognet::dataio {

/// Recipe for a procedurally generated cohort with known atrophy.
struct PhantomSpec {
  int n_subjects = 12;
  int visits_per_subject = 3;
  double age_lo = 60.0;
  double age_hi = 85.0;
  int image_side = 32;   // S
  int n_slices = 9;      // T
  /// diagnosis -> (ventricle volume growth per year, tissue intensity decay per year)
  std::map<int, std::pair<double, double>> atrophy_rates = {
      {0, {0.005, 0.002}},
      {1, {0.010, 0.004}},
      {2, {0.020, 0.008}},
      {3, {0.035, 0.014}},
  };
  double noise_std = 0.01;
  std::uint64_t seed = 7;

  // Visit spacing. Jitter 0 makes visit ages exact multiples of the interval.
  double visit_interval_years = 2.0;
  double visit_interval_jitter = 0.25;
  /// Relative head-size effect of the synthetic binary gender covariate.
  double gender_effect = 0.02;

  void validate() const;  // throws ValidationError naming the field
};

/// Known generative state for one phantom scan; the evaluation oracle.
struct GroundTruth {
  std::string subject_id;
  double age = 0.0;
  int diagnosis = 0;
  int gender = 0;  // synthetic binary covariate
  double ventricle_volume_analytic = 0.0;   // ellipsoid volume, voxels^3
  double ventricle_volume_fractional = 0.0;  // painted partial-volume sum
  long ventricle_voxel_count = 0;            // painted cavity voxels
  double tissue_intensity_analytic = 0.0;  // decay-law intensity
  double tissue_intensity_painted = 0.0;   // mean painted tissue intensity
  long brain_voxel_count = 0;
  // Ellipsoid semi-axes (z,y,x) behind this scan; closed-form cross
  // sections for any axial plane follow from these.
  std::array<double, 3> brain_axes = {0, 0, 0};
  std::array<double, 3> vent_axes = {0, 0, 0};
};

struct PhantomCohort {
  std::vector<VolumeScan> scans;
  std::vector<GroundTruth> truth;  // parallel to scans
};

PhantomCohort generate_phantom_cohort(const PhantomSpec& spec);

/// Noise-free reference anatomy (average subject at the low end of the age
/// range); used as the registration/masking template.
VolumeScan make_phantom_template(const PhantomSpec& spec);

/// Integer-label volume on the template grid: 1 ventricle, 2 inner tissue,
/// 3 cortical rim, 4 background-adjacent shell.
VolumeScan make_phantom_atlas(const PhantomSpec& spec);

/// Binary brain mask of a template volume (support of the head).
Grid3 brain_mask(const VolumeScan& tpl);

// --- Volume file formats ------------------------------------------------

/// Writes .nii / .nii.gz (float32) or raw little-endian float32 (+ JSON
/// sidecar carrying subject_id, age, diagnosis, shape, spacing). The format
/// is picked from the path suffix; raw is used for anything that is not
/// .nii/.nii.gz.
void write_volume(const VolumeScan& scan, const std::string& path);

/// Reads a scan back. Metadata missing from the format itself is taken
/// from the sidecar. Throws IoError / MetadataError.
VolumeScan ingest_volume(const std::string& path);

// --- Preprocessing -------------------------------------------------------

/// T evenly spaced axial indices spanning the template brain mask extent.
std::vector<int> compute_slice_positions(const Grid3& mask, int n_slices);

struct PreprocessOptions {
  int n_slices = 9;
  double degenerate_std_floor = 1e-8;
};

/// Affine-align (centroid + per-axis scale stub) to the template, zero
/// non-brain voxels, extract slices, standardize each slice.
/// Returns nullopt when the alignment transform is non-finite; such scans
/// are excluded upstream.
std::optional<SliceStack> preprocess(const VolumeScan& scan,
                                     const VolumeScan& tpl,
                                     const PreprocessOptions& opt);

/// Standardize one slice in place semantics: returns (standardized, mean,
/// std, degenerate flag). Constant slices become all zeros with std 1.
struct StandardizedSlice {
  Image values;
  double mean = 0.0;
  double stddev = 1.0;
  bool degenerate = false;
};
StandardizedSlice standardize_slice(const Image& slice, double std_floor = 1e-8);

// --- Cohort split --------------------------------------------------------

struct SubjectVisits {
  std::string subject_id;
  std::vector<double> ages;  // sorted ascending
};

struct CohortSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// Subject-level split. Every test subject must have a follow-up at least
/// `min_followup_years` after baseline; throws ConfigError when the
/// constraint cannot be met.
CohortSplit split_cohort(const std::vector<SubjectVisits>& cohort,
                         const std::array<double, 3>& ratios,
                         std::uint64_t seed,
                         double min_followup_years = 2.0);

std::vector<SubjectVisits> collect_subjects(const std::vector<VolumeScan>& scans);

// --- Manifest ------------------------------------------------------------

struct ManifestRecord {
  std::string path;
  std::string subject_id;
  double age = 0.0;
  int diagnosis = 0;
  std::string split;  // "train" | "val" | "test" | ""
};

void write_manifest(const std::vector<ManifestRecord>& records,
                    const std::string& path);
std::vector<ManifestRecord> read_manifest(const std::string& path);

void write_ground_truth(const std::vector<GroundTruth>& truth,
                        const std::string& path);
std::vector<GroundTruth> read_ground_truth(const std::string& path);

// --- Slice-stack persistence ----------------------------------------------

void save_slice_stacks(const std::vector<SliceStack>& stacks,
                       const std::string& path);
std::vector<SliceStack> load_slice_stacks(const std::string& path);

/// De-standardized stack as a (T, S, S) grid.
Grid3 stack_to_volume(const SliceStack& stack);

}  // namespace prognet::dataio
