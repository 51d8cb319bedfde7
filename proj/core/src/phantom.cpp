#include <algorithm>
#include <cmath>

#include "prognet/dataio.hpp"
#include "prognet/errors.hpp"
#include "prognet/rng.hpp"

namespace prognet::dataio {

namespace {

// Relative geometry of the head phantom. All lengths are fractions of the
// volume extent so the same anatomy works at any image_side.
constexpr double kBrainZ = 0.40;   // semi-axis as fraction of nz
constexpr double kBrainY = 0.42;   // fraction of S
constexpr double kBrainX = 0.34;
constexpr double kVentZ = 0.38;    // cavity semi-axis as fraction of brain axis
constexpr double kVentY = 0.40;
constexpr double kVentX = 0.36;
constexpr double kRimStart = 0.80;    // inner tissue | cortical rim boundary
constexpr double kShellStart = 0.90;  // rim | background-adjacent shell
constexpr double kCsfIntensity = 0.12;
constexpr double kVentLabelScale = 1.45;  // label-1 region outgrows any cavity

double smoothstep(double lo, double hi, double x) {
  double t = std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

struct SubjectAnatomy {
  double head_scale = 1.0;
  double base_intensity = 0.85;
  double vent_jitter[3] = {1.0, 1.0, 1.0};
  int gender = 0;
};

struct ScanGeometry {
  int nz, ny, nx;
  double cz, cy, cx;
  double bz, by, bx;  // brain semi-axes
  double vz, vy, vx;  // cavity semi-axes at this visit
};

int axial_depth(int image_side) { return std::max(8, image_side / 2); }

ScanGeometry make_geometry(const PhantomSpec& spec, const SubjectAnatomy& bod,
                           double vent_axis_factor) {
  ScanGeometry g;
  g.nz = axial_depth(spec.image_side);
  g.ny = spec.image_side;
  g.nx = spec.image_side;
  g.cz = 0.5 * (g.nz - 1);
  g.cy = 0.5 * (g.ny - 1);
  g.cx = 0.5 * (g.nx - 1);
  g.bz = kBrainZ * g.nz * bod.head_scale;
  g.by = kBrainY * g.ny * bod.head_scale;
  g.bx = kBrainX * g.nx * bod.head_scale;
  g.vz = kVentZ * g.bz * bod.vent_jitter[0] * vent_axis_factor;
  g.vy = kVentY * g.by * bod.vent_jitter[1] * vent_axis_factor;
  g.vx = kVentX * g.bx * bod.vent_jitter[2] * vent_axis_factor;
  return g;
}

double brain_rho(const ScanGeometry& g, int z, int y, int x) {
  double dz = (z - g.cz) / g.bz;
  double dy = (y - g.cy) / g.by;
  double dx = (x - g.cx) / g.bx;
  return std::sqrt(dz * dz + dy * dy + dx * dx);
}

double vent_rho(const ScanGeometry& g, int z, int y, int x) {
  double dz = (z - g.cz) / g.vz;
  double dy = (y - g.cy) / g.vy;
  double dx = (x - g.cx) / g.vx;
  return std::sqrt(dz * dz + dy * dy + dx * dx);
}

/// Noise-free intensity at one voxel.
double paint_voxel(const ScanGeometry& g, double tissue_intensity, int z, int y,
                   int x) {
  double rb = brain_rho(g, z, y, x);
  if (rb > 1.0) return 0.0;
  double band = 1.0;
  band -= 0.12 * smoothstep(kRimStart - 0.02, kRimStart + 0.02, rb);
  band -= 0.08 * smoothstep(kShellStart - 0.02, kShellStart + 0.02, rb);
  double tissue = tissue_intensity * band * (1.0 - smoothstep(0.96, 1.0, rb));
  double wv = 1.0 - smoothstep(0.85, 1.15, vent_rho(g, z, y, x));
  return tissue + (kCsfIntensity - tissue) * wv;
}

SubjectAnatomy draw_subject(const PhantomSpec& spec, Rng& rng) {
  SubjectAnatomy bod;
  bod.gender = rng.uniform() < 0.5 ? 0 : 1;
  double scale_noise = std::clamp(rng.normal(0.0, 0.03), -0.08, 0.08);
  bod.head_scale =
      (1.0 + scale_noise) * (1.0 + spec.gender_effect * (bod.gender - 0.5));
  bod.base_intensity = std::clamp(rng.normal(0.85, 0.03), 0.70, 1.00);
  for (double& j : bod.vent_jitter)
    j = std::clamp(1.0 + rng.normal(0.0, 0.04), 0.85, 1.15);
  return bod;
}

}  // namespace

void PhantomSpec::validate() const {
  if (n_subjects < 1) throw ValidationError("n_subjects: must be >= 1");
  if (visits_per_subject < 1)
    throw ValidationError("visits_per_subject: must be >= 1");
  if (!(age_lo < age_hi) && visits_per_subject > 1 && !(age_lo <= age_hi))
    throw ValidationError("age_range: lo must be < hi");
  if (!(age_lo <= age_hi)) throw ValidationError("age_range: lo must be <= hi");
  if (!(age_lo > 0.0)) throw ValidationError("age_range: ages must be positive");
  if (image_side < 8) throw ValidationError("image_side: must be >= 8");
  if (n_slices < 1) throw ValidationError("n_slices: must be >= 1");
  if (n_slices > axial_depth(image_side))
    throw ValidationError("n_slices: exceeds axial extent of the volume");
  if (atrophy_rates.empty())
    throw ValidationError("atrophy_rates: must name at least one diagnosis");
  for (const auto& [d, gk] : atrophy_rates) {
    if (d < 0 || d > 3)
      throw ValidationError("atrophy_rates: diagnosis " + std::to_string(d) +
                            " outside 0..3");
    if (gk.first < 0.0 || gk.second < 0.0)
      throw ValidationError("atrophy_rates: rates must be >= 0");
  }
  if (noise_std < 0.0) throw ValidationError("noise_std: must be >= 0");
  if (!(visit_interval_years > 0.0))
    throw ValidationError("visit_interval_years: must be > 0");
  if (visit_interval_jitter < 0.0 || visit_interval_jitter >= 1.0)
    throw ValidationError("visit_interval_jitter: must be in [0, 1)");
}

PhantomCohort generate_phantom_cohort(const PhantomSpec& spec) {
  spec.validate();
  PhantomCohort cohort;

  std::vector<int> diagnoses;
  for (const auto& [d, gk] : spec.atrophy_rates) diagnoses.push_back(d);

  for (int s = 0; s < spec.n_subjects; ++s) {
    Rng subj_rng(Rng::derive(spec.seed, static_cast<std::uint64_t>(s)));
    SubjectAnatomy bod = draw_subject(spec, subj_rng);
    const int diagnosis =
        diagnoses[static_cast<std::size_t>(subj_rng.below(diagnoses.size()))];
    const auto [growth, decay] = spec.atrophy_rates.at(diagnosis);

    const double total_span =
        spec.visit_interval_years * (spec.visits_per_subject - 1);
    const double base_hi = std::max(spec.age_lo, spec.age_hi - total_span);
    const double baseline_age = spec.age_lo == base_hi
                                    ? spec.age_lo
                                    : subj_rng.uniform(spec.age_lo, base_hi);

    std::vector<double> ages{baseline_age};
    for (int v = 1; v < spec.visits_per_subject; ++v) {
      double gap = spec.visit_interval_years *
                   (1.0 + spec.visit_interval_jitter * (2.0 * subj_rng.uniform() - 1.0));
      ages.push_back(ages.back() + std::max(0.5, gap));
    }

    char sid[16];
    std::snprintf(sid, sizeof(sid), "sub%04d", s);

    // Anatomy follows absolute age relative to the cohort floor: volume
    // grows and tissue dims linearly in (age - age_lo).
    for (int v = 0; v < spec.visits_per_subject; ++v) {
      const double age = ages[static_cast<std::size_t>(v)];
      const double elapsed = age - spec.age_lo;
      const double volume_factor = 1.0 + growth * elapsed;
      const double tissue_intensity = std::max(
          0.05, bod.base_intensity * (1.0 - decay * elapsed));
      ScanGeometry g = make_geometry(spec, bod, std::cbrt(volume_factor));

      VolumeScan scan;
      scan.subject_id = sid;
      scan.age = age;
      scan.diagnosis = diagnosis;
      scan.voxels = Grid3(g.nz, g.ny, g.nx);

      GroundTruth gt;
      gt.subject_id = sid;
      gt.age = age;
      gt.diagnosis = diagnosis;
      gt.gender = bod.gender;
      gt.ventricle_volume_analytic = (4.0 / 3.0) * M_PI * g.vz * g.vy * g.vx;
      gt.tissue_intensity_analytic = tissue_intensity;
      gt.brain_axes = {g.bz, g.by, g.bx};
      gt.vent_axes = {g.vz, g.vy, g.vx};

      double tissue_sum = 0.0;
      long tissue_n = 0;
      for (int z = 0; z < g.nz; ++z) {
        for (int y = 0; y < g.ny; ++y) {
          for (int x = 0; x < g.nx; ++x) {
            double v0 = paint_voxel(g, tissue_intensity, z, y, x);
            scan.voxels.at(z, y, x) = v0;
            double rb = brain_rho(g, z, y, x);
            double rv = vent_rho(g, z, y, x);
            if (rb <= 1.0) {
              ++gt.brain_voxel_count;
              gt.ventricle_volume_fractional +=
                  1.0 - smoothstep(0.85, 1.15, rv);
              if (rv <= 1.0) ++gt.ventricle_voxel_count;
              if (rv > 1.15 && rb <= 0.96) {
                tissue_sum += v0;
                ++tissue_n;
              }
            }
          }
        }
      }
      gt.tissue_intensity_painted = tissue_n > 0 ? tissue_sum / tissue_n : 0.0;

      if (spec.noise_std > 0.0) {
        Rng noise_rng(Rng::derive(
            spec.seed, 0x100000ULL + static_cast<std::uint64_t>(s) * 1024 + v));
        for (double& val : scan.voxels.raw())
          val += spec.noise_std * noise_rng.normal();
      }

      cohort.scans.push_back(std::move(scan));
      cohort.truth.push_back(std::move(gt));
    }
  }
  return cohort;
}

VolumeScan make_phantom_template(const PhantomSpec& spec) {
  spec.validate();
  SubjectAnatomy avg;  // head_scale 1, base intensity 0.85, no jitter
  ScanGeometry g = make_geometry(spec, avg, 1.0);
  VolumeScan tpl;
  tpl.subject_id = "template";
  tpl.age = spec.age_lo;
  tpl.diagnosis = 0;
  tpl.voxels = Grid3(g.nz, g.ny, g.nx);
  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x)
        tpl.voxels.at(z, y, x) = paint_voxel(g, avg.base_intensity, z, y, x);
  return tpl;
}

VolumeScan make_phantom_atlas(const PhantomSpec& spec) {
  spec.validate();
  SubjectAnatomy avg;
  ScanGeometry g = make_geometry(spec, avg, 1.0);
  ScanGeometry glabel = make_geometry(spec, avg, kVentLabelScale);
  VolumeScan atlas;
  atlas.subject_id = "atlas";
  atlas.age = spec.age_lo;
  atlas.diagnosis = 0;
  atlas.voxels = Grid3(g.nz, g.ny, g.nx);
  for (int z = 0; z < g.nz; ++z) {
    for (int y = 0; y < g.ny; ++y) {
      for (int x = 0; x < g.nx; ++x) {
        double rb = brain_rho(g, z, y, x);
        int label = 0;
        if (rb <= 1.0) {
          if (vent_rho(glabel, z, y, x) <= 1.0) {
            label = 1;  // ventricle search region
          } else if (rb <= kRimStart) {
            label = 2;  // inner tissue
          } else if (rb <= kShellStart) {
            label = 3;  // cortical rim
          } else {
            label = 4;  // background-adjacent shell
          }
        }
        atlas.voxels.at(z, y, x) = label;
      }
    }
  }
  return atlas;
}

Grid3 brain_mask(const VolumeScan& tpl) {
  Grid3 mask(tpl.voxels.nz(), tpl.voxels.ny(), tpl.voxels.nx());
  double peak = 0.0;
  for (double v : tpl.voxels.raw()) peak = std::max(peak, v);
  const double thresh = 0.05 * peak;
  for (std::size_t i = 0; i < mask.raw().size(); ++i)
    mask.raw()[i] = tpl.voxels.raw()[i] > thresh ? 1.0 : 0.0;
  return mask;
}

}  // namespace prognet::dataio
