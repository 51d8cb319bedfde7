#include "prognet/evaluate.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "prognet/errors.hpp"

namespace prognet::evaluate {

double otsu_threshold(std::vector<double> values) {
  if (values.empty()) throw ValidationError("otsu: no samples");
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) return lo;
  constexpr int kBins = 256;
  std::vector<long> hist(kBins, 0);
  for (double v : values) {
    int b = static_cast<int>((v - lo) / (hi - lo) * kBins);
    hist[static_cast<std::size_t>(std::clamp(b, 0, kBins - 1))]++;
  }
  const double n = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b)
    sum_all += (lo + (b + 0.5) * (hi - lo) / kBins) * hist[static_cast<std::size_t>(b)];

  double best_var = -1.0;
  int plateau_lo = 0, plateau_hi = 0;
  double w0 = 0.0, sum0 = 0.0;
  for (int b = 0; b < kBins - 1; ++b) {
    const double center = lo + (b + 0.5) * (hi - lo) / kBins;
    w0 += hist[static_cast<std::size_t>(b)];
    sum0 += center * hist[static_cast<std::size_t>(b)];
    if (w0 == 0.0 || w0 == n) continue;
    const double w1 = n - w0;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (var > best_var * (1.0 + 1e-12)) {
      best_var = var;
      plateau_lo = plateau_hi = b;
    } else if (var >= best_var * (1.0 - 1e-12)) {
      plateau_hi = b;  // flat maximum across an empty gap
    }
  }
  const double cut = 0.5 * (plateau_lo + plateau_hi) + 1.0;
  return lo + cut * (hi - lo) / kBins;
}

std::map<std::string, double> region_volumes(
    const Grid3& volume, const std::vector<EvalRegion>& regions,
    const Grid3& brain_mask) {
  if (!volume.same_shape(brain_mask))
    throw ValidationError("region_volumes: brain mask shape differs");
  long brain_count = 0;
  double brain_intensity = 0.0;
  for (std::size_t i = 0; i < brain_mask.raw().size(); ++i)
    if (brain_mask.raw()[i] > 0.5) {
      ++brain_count;
      brain_intensity += volume.raw()[i];
    }
  if (brain_count == 0) throw ValidationError("region_volumes: empty brain mask");

  std::map<std::string, double> out;
  for (const auto& region : regions) {
    if (!region.mask.same_shape(volume))
      throw ValidationError("region_volumes: mask shape differs for " +
                            region.name);
    std::vector<double> vals;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < volume.raw().size(); ++i)
      if (region.mask.raw()[i] > 0.5 && brain_mask.raw()[i] > 0.5) {
        vals.push_back(volume.raw()[i]);
        idx.push_back(i);
      }
    double measure = 0.0;
    switch (region.mode) {
      case VolumeMode::mask_count:
        measure = static_cast<double>(vals.size());
        break;
      case VolumeMode::intensity_sum: {
        double s = 0.0;
        for (double v : vals) s += v;
        measure = brain_intensity != 0.0 ? s / brain_intensity * brain_count
                                         : 0.0;
        break;
      }
      case VolumeMode::frac_below:
      case VolumeMode::frac_above: {
        if (vals.empty()) break;
        const double tau = otsu_threshold(vals);
        // Plateau-side quantiles resist the partial-volume voxels that sit
        // between the two intensity plateaus, so the linear band inverts
        // the mixing exactly on clean data.
        std::vector<double> dark, bright;
        for (double v : vals) (v < tau ? dark : bright).push_back(v);
        auto quantile = [](std::vector<double>& v, double q) {
          const std::size_t k = static_cast<std::size_t>(
              q * static_cast<double>(v.size() - 1));
          std::nth_element(v.begin(), v.begin() + static_cast<long>(k),
                           v.end());
          return v[k];
        };
        double frac_dark = 0.0;
        if (dark.empty() || bright.empty()) {
          frac_dark = static_cast<double>(dark.size());
        } else {
          const double mu_dark = quantile(dark, 0.15);
          const double mu_bright = quantile(bright, 0.85);
          const double band = mu_bright - mu_dark;
          if (band < 1e-9) {
            frac_dark = static_cast<double>(dark.size());
          } else {
            for (double v : vals)
              frac_dark += std::clamp((mu_bright - v) / band, 0.0, 1.0);
          }
        }
        measure = region.mode == VolumeMode::frac_below
                      ? frac_dark
                      : static_cast<double>(vals.size()) - frac_dark;
        break;
      }
    }
    out[region.name] = 100.0 * measure / static_cast<double>(brain_count);
  }
  return out;
}

VolumeReport volume_mae(
    const std::map<std::string, std::vector<std::pair<double, double>>>&
        cases_by_region,
    const std::string& label) {
  VolumeReport report;
  report.label = label;
  for (const auto& [region, cases] : cases_by_region) {
    VolumeReportRow row;
    row.region = region;
    row.cases = static_cast<long>(cases.size());
    if (cases.empty()) {
      report.rows.push_back(row);
      continue;
    }
    double sum = 0.0;
    for (const auto& [pred, real] : cases) sum += std::abs(pred - real);
    row.mae = sum / static_cast<double>(cases.size());
    double var = 0.0;
    for (const auto& [pred, real] : cases) {
      const double d = std::abs(pred - real) - row.mae;
      var += d * d;
    }
    row.stddev = std::sqrt(var / static_cast<double>(cases.size()));
    report.rows.push_back(row);
  }
  return report;
}

double percent_improvement(double mae_without, double mae_with) {
  if (mae_without == 0.0) return 0.0;
  return (mae_without - mae_with) / mae_without * 100.0;
}

void write_reports_csv(const std::vector<VolumeReport>& reports,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report CSV " + path);
  out << "region,config,mae,std,cases\n";
  for (const auto& report : reports)
    for (const auto& row : report.rows)
      out << row.region << "," << report.label << "," << row.mae << ","
          << row.stddev << "," << row.cases << "\n";
}

std::string render_reports_table(const std::vector<VolumeReport>& reports) {
  std::vector<std::string> regions;
  std::set<std::string> seen;
  for (const auto& r : reports)
    for (const auto& row : r.rows)
      if (seen.insert(row.region).second) regions.push_back(row.region);

  std::ostringstream out;
  out << std::left;
  const int label_w = 24, cell_w = 18;
  out.width(label_w);
  out << "configuration";
  for (const auto& region : regions) {
    out.width(cell_w);
    out << region;
  }
  out << "\n";
  for (const auto& report : reports) {
    out.width(label_w);
    out << report.label;
    for (const auto& region : regions) {
      const VolumeReportRow* row = report.find(region);
      char cell[64];
      if (row)
        std::snprintf(cell, sizeof(cell), "%.4f +/- %.4f", row->mae,
                      row->stddev);
      else
        std::snprintf(cell, sizeof(cell), "-");
      out.width(cell_w);
      out << cell;
    }
    out << "\n";
  }
  return out.str();
}

namespace {

std::array<double, 3> standardize(const std::array<double, 3>& raw,
                                  const std::array<double, 3>& mean,
                                  const std::array<double, 3>& std) {
  return {(raw[0] - mean[0]) / std[0], (raw[1] - mean[1]) / std[1],
          (raw[2] - mean[2]) / std[2]};
}

double rbf(const std::array<double, 3>& a, const std::array<double, 3>& b,
           double gamma) {
  double d = 0.0;
  for (int k = 0; k < 3; ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
  return std::exp(-gamma * d);
}

}  // namespace

double SvrModel::predict(double age, double gender, int diagnosis) const {
  const std::array<double, 3> x = standardize(
      {age, gender, static_cast<double>(diagnosis)}, feat_mean, feat_std);
  double f = 0.0;
  for (std::size_t j = 0; j < support.size(); ++j)
    f += beta[j] * (rbf(support[j], x, gamma) + 1.0);
  return f;
}

SvrModel fit_svr_baseline(const std::vector<RegressorRow>& rows,
                          const SvrConfig& cfg) {
  if (rows.empty()) throw ValidationError("fit_svr_baseline: no rows");
  const std::size_t n = rows.size();
  SvrModel model;

  std::vector<std::array<double, 3>> raw(n);
  for (std::size_t i = 0; i < n; ++i)
    raw[i] = {rows[i].age, rows[i].gender, static_cast<double>(rows[i].diagnosis)};
  for (int k = 0; k < 3; ++k) {
    double m = 0.0;
    for (const auto& x : raw) m += x[k];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (const auto& x : raw) v += (x[k] - m) * (x[k] - m);
    v /= static_cast<double>(n);
    model.feat_mean[k] = m;
    model.feat_std[k] = v > 1e-12 ? std::sqrt(v) : 1.0;
  }
  model.support.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    model.support[i] = standardize(raw[i], model.feat_mean, model.feat_std);
  model.gamma = cfg.gamma > 0.0 ? cfg.gamma : 1.0 / 3.0;

  // Dual coordinate descent on 1/2 b'Qb - y'b + eps*|b|_1, |b_i| <= C,
  // with Q = K + 1 (the offset is regularized into the kernel).
  Eigen::MatrixXd Q(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double q = rbf(model.support[i], model.support[j], model.gamma) + 1.0;
      Q(static_cast<long>(i), static_cast<long>(j)) = q;
      Q(static_cast<long>(j), static_cast<long>(i)) = q;
    }
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) y[static_cast<long>(i)] = rows[i].volume_pct;

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd qb = Eigen::VectorXd::Zero(n);  // Q * beta
  for (int pass = 0; pass < cfg.max_passes; ++pass) {
    double max_delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const long li = static_cast<long>(i);
      const double r = y[li] - (qb[li] - Q(li, li) * beta[li]);
      double b_new;
      if (r > cfg.epsilon_tube) {
        b_new = (r - cfg.epsilon_tube) / Q(li, li);
      } else if (r < -cfg.epsilon_tube) {
        b_new = (r + cfg.epsilon_tube) / Q(li, li);
      } else {
        b_new = 0.0;
      }
      b_new = std::clamp(b_new, -cfg.C, cfg.C);
      const double delta = b_new - beta[li];
      if (delta != 0.0) {
        qb += delta * Q.col(li);
        beta[li] = b_new;
        max_delta = std::max(max_delta, std::abs(delta));
      }
    }
    if (max_delta < cfg.tol) break;
  }
  model.beta.assign(beta.data(), beta.data() + beta.size());
  return model;
}

double LmeModel::predict(double age, double gender, int diagnosis) const {
  if (groups.empty()) throw ValidationError("LME model has no groups");
  auto it = groups.find(diagnosis);
  if (it == groups.end()) {
    // Nearest trained diagnosis group.
    int best = groups.begin()->first;
    for (const auto& [d, g] : groups)
      if (std::abs(d - diagnosis) < std::abs(best - diagnosis)) best = d;
    it = groups.find(best);
  }
  const Eigen::Vector3d x(1.0, age, gender);
  return it->second.beta.dot(x);
}

LmeModel fit_lme_baseline(const std::vector<RegressorRow>& rows,
                          const LmeConfig& cfg) {
  if (rows.empty()) throw ValidationError("fit_lme_baseline: no rows");
  LmeModel model;

  std::map<int, std::map<std::string, std::vector<std::size_t>>> by_group;
  for (std::size_t i = 0; i < rows.size(); ++i)
    by_group[rows[i].diagnosis][rows[i].subject_id].push_back(i);

  for (const auto& [diagnosis, subjects] : by_group) {
    LmeModel::Group group;
    const std::size_t m = subjects.size();

    // Stack per-subject design blocks.
    struct Block {
      Eigen::MatrixXd X, Z;
      Eigen::VectorXd y;
    };
    std::vector<Block> blocks;
    long total_rows = 0;
    for (const auto& [sid, indices] : subjects) {
      Block b;
      const long ni = static_cast<long>(indices.size());
      b.X.resize(ni, 3);
      b.Z.resize(ni, 2);
      b.y.resize(ni);
      for (long r = 0; r < ni; ++r) {
        const auto& row = rows[indices[static_cast<std::size_t>(r)]];
        b.X(r, 0) = 1.0;
        b.X(r, 1) = row.age;
        b.X(r, 2) = row.gender;
        b.Z(r, 0) = 1.0;
        b.Z(r, 1) = row.age;
        b.y[r] = row.volume_pct;
      }
      total_rows += ni;
      blocks.push_back(std::move(b));
    }

    auto ols = [&]() {
      Eigen::MatrixXd X(total_rows, 3);
      Eigen::VectorXd y(total_rows);
      long at = 0;
      for (const auto& b : blocks) {
        X.middleRows(at, b.X.rows()) = b.X;
        y.segment(at, b.y.size()) = b.y;
        at += b.X.rows();
      }
      group.beta = X.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(y);
      const Eigen::VectorXd r = y - X * group.beta;
      group.sigma2 =
          std::max(1e-12, r.squaredNorm() / static_cast<double>(total_rows));
      group.psi.setZero();
    };

    if (m < 2) {
      std::fprintf(stderr,
                   "warning: diagnosis group %d has a single subject; "
                   "falling back to ordinary least squares\n",
                   diagnosis);
      ols();
      group.ols_fallback = true;
      model.groups[diagnosis] = group;
      continue;
    }

    // EM for the Laird-Ware model.
    group.psi = 0.1 * Eigen::Matrix2d::Identity();
    group.sigma2 = 1.0;
    Eigen::Vector3d beta_prev = Eigen::Vector3d::Constant(1e30);
    for (int iter = 0; iter < cfg.max_iter; ++iter) {
      Eigen::Matrix3d xtvx = Eigen::Matrix3d::Zero();
      Eigen::Vector3d xtvy = Eigen::Vector3d::Zero();
      std::vector<Eigen::MatrixXd> vinv;
      vinv.reserve(blocks.size());
      for (const auto& b : blocks) {
        Eigen::MatrixXd V = b.Z * group.psi * b.Z.transpose();
        V.diagonal().array() += group.sigma2;
        Eigen::MatrixXd Vi = V.ldlt().solve(
            Eigen::MatrixXd::Identity(V.rows(), V.cols()));
        xtvx += b.X.transpose() * Vi * b.X;
        xtvy += b.X.transpose() * Vi * b.y;
        vinv.push_back(std::move(Vi));
      }
      group.beta = xtvx.bdcSvd(Eigen::ComputeFullU | Eigen::ComputeFullV)
                       .solve(xtvy);

      Eigen::Matrix2d psi_acc = Eigen::Matrix2d::Zero();
      double sig_acc = 0.0;
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        const Eigen::MatrixXd& Vi = vinv[i];
        const Eigen::VectorXd resid_fixed = b.y - b.X * group.beta;
        const Eigen::Vector2d bhat =
            group.psi * b.Z.transpose() * Vi * resid_fixed;
        const Eigen::Matrix2d cov =
            group.psi - group.psi * b.Z.transpose() * Vi * b.Z * group.psi;
        psi_acc += bhat * bhat.transpose() + cov;
        const Eigen::VectorXd r = resid_fixed - b.Z * bhat;
        sig_acc += r.squaredNorm() +
                   group.sigma2 *
                       (static_cast<double>(b.y.size()) -
                        group.sigma2 * Vi.trace());
      }
      group.psi = psi_acc / static_cast<double>(m);
      group.psi = 0.5 * (group.psi + group.psi.transpose()).eval();
      group.sigma2 =
          std::max(1e-12, sig_acc / static_cast<double>(total_rows));

      if ((group.beta - beta_prev).norm() < cfg.tol) break;
      beta_prev = group.beta;
    }
    model.groups[diagnosis] = group;
  }
  return model;
}

double fit_constant_mean(const std::vector<RegressorRow>& rows) {
  if (rows.empty()) throw ValidationError("fit_constant_mean: no rows");
  double s = 0.0;
  for (const auto& r : rows) s += r.volume_pct;
  return s / static_cast<double>(rows.size());
}

}  // namespace prognet::evaluate
