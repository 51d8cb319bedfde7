#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "prognet/volume.hpp"

namespace prognet::evaluate {

// --- Regional volumetry ----------------------------------------------------

enum class VolumeMode {
  mask_count,   // every mask voxel counts (region area)
  frac_below,   // fractional occupancy of the dark class (CSF-like)
  frac_above,   // fractional occupancy of the bright class (tissue-like)
  intensity_sum // in-mask intensity relative to whole-brain intensity
};

struct EvalRegion {
  std::string name;
  Grid3 mask;  // binary, template space
  VolumeMode mode = VolumeMode::frac_below;
};

/// Otsu threshold over a sample of intensities.
double otsu_threshold(std::vector<double> values);

/// Region volumes as percentages of total brain volume. Fractional modes
/// fit a dark/bright intensity band per region (Otsu split of in-mask
/// intensities) and integrate partial-volume occupancy.
std::map<std::string, double> region_volumes(
    const Grid3& volume, const std::vector<EvalRegion>& regions,
    const Grid3& brain_mask);

// --- Volume-MAE protocol ---------------------------------------------------

struct VolumeReportRow {
  std::string region;
  double mae = 0.0;
  double stddev = 0.0;  // population convention
  long cases = 0;
};

struct VolumeReport {
  std::string label;
  std::vector<VolumeReportRow> rows;

  const VolumeReportRow* find(const std::string& region) const {
    for (const auto& r : rows)
      if (r.region == region) return &r;
    return nullptr;
  }
};

/// Aggregate |predicted - real| per region over test cases (each entry is
/// one (predicted %, real %) pair).
VolumeReport volume_mae(
    const std::map<std::string, std::vector<std::pair<double, double>>>&
        cases_by_region,
    const std::string& label);

/// (MAE without component - MAE with component) / MAE without * 100.
double percent_improvement(double mae_without, double mae_with);

void write_reports_csv(const std::vector<VolumeReport>& reports,
                       const std::string& path);
std::string render_reports_table(const std::vector<VolumeReport>& reports);

// --- Baseline regressors ---------------------------------------------------

struct RegressorRow {
  std::string subject_id;
  int diagnosis = 0;
  double age = 0.0;
  double gender = 0.0;
  double volume_pct = 0.0;  // target
};

struct SvrConfig {
  double C = 10.0;
  double epsilon_tube = 0.02;
  double gamma = 0.0;  // 0 -> 1 / (n_features * feature variance)
  int max_passes = 400;
  double tol = 1e-8;
};

/// Epsilon-SVR with RBF kernel, solved by coordinate descent on the
/// bias-regularized dual (the offset is absorbed into the kernel).
class SvrModel {
 public:
  double predict(double age, double gender, int diagnosis) const;

  std::vector<std::array<double, 3>> support;  // standardized features
  std::vector<double> beta;                    // dual coefficients
  std::array<double, 3> feat_mean{}, feat_std{};
  double gamma = 1.0;
};

SvrModel fit_svr_baseline(const std::vector<RegressorRow>& rows,
                          const SvrConfig& cfg);

struct LmeConfig {
  int max_iter = 200;
  double tol = 1e-10;
};

/// Per-diagnosis linear mixed-effects model: fixed intercept/age/gender,
/// random per-subject intercept and age slope (EM fit). Groups with a
/// single subject fall back to ordinary least squares with a warning.
class LmeModel {
 public:
  struct Group {
    Eigen::Vector3d beta = Eigen::Vector3d::Zero();  // 1, age, gender
    Eigen::Matrix2d psi = Eigen::Matrix2d::Identity();
    double sigma2 = 1.0;
    bool ols_fallback = false;
  };

  double predict(double age, double gender, int diagnosis) const;
  std::map<int, Group> groups;
};

LmeModel fit_lme_baseline(const std::vector<RegressorRow>& rows,
                          const LmeConfig& cfg);

/// Constant-mean reference predictor.
double fit_constant_mean(const std::vector<RegressorRow>& rows);

/// Removes floor(fraction * n) rows with the largest absolute residual
/// under the supplied preliminary prediction; ties break by row index.
template <typename Row>
std::vector<Row> trim_outliers(const std::vector<Row>& rows, double fraction,
                               const std::function<double(const Row&)>& predict) {
  const long n = static_cast<long>(rows.size());
  const long k = static_cast<long>(fraction * static_cast<double>(n));
  if (k <= 0) return rows;
  std::vector<long> order(rows.size());
  std::iota(order.begin(), order.end(), 0L);
  std::vector<double> resid(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    resid[i] = std::abs(rows[i].volume_pct - predict(rows[i]));
  std::stable_sort(order.begin(), order.end(), [&](long a, long b) {
    return resid[static_cast<std::size_t>(a)] >
           resid[static_cast<std::size_t>(b)];
  });
  std::vector<bool> drop(rows.size(), false);
  for (long i = 0; i < k; ++i) drop[static_cast<std::size_t>(order[i])] = true;
  std::vector<Row> kept;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (!drop[i]) kept.push_back(rows[i]);
  return kept;
}

}  // namespace prognet::evaluate
