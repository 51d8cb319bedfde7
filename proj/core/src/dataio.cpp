#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "prognet/dataio.hpp"
#include "prognet/errors.hpp"
#include "prognet/rng.hpp"

namespace prognet::dataio {

namespace {

struct SupportStats {
  double centroid[3];
  double spread[3];
  long count = 0;
};

SupportStats support_stats(const Grid3& vol) {
  double peak = 0.0;
  for (double v : vol.raw()) peak = std::max(peak, v);
  const double thresh = 0.05 * peak;
  SupportStats st{};
  double sum[3] = {0, 0, 0};
  for (int z = 0; z < vol.nz(); ++z)
    for (int y = 0; y < vol.ny(); ++y)
      for (int x = 0; x < vol.nx(); ++x)
        if (vol.at(z, y, x) > thresh) {
          sum[0] += z;
          sum[1] += y;
          sum[2] += x;
          ++st.count;
        }
  for (int a = 0; a < 3; ++a) st.centroid[a] = sum[0 + a] / st.count;
  double sq[3] = {0, 0, 0};
  for (int z = 0; z < vol.nz(); ++z)
    for (int y = 0; y < vol.ny(); ++y)
      for (int x = 0; x < vol.nx(); ++x)
        if (vol.at(z, y, x) > thresh) {
          const double d[3] = {z - st.centroid[0], y - st.centroid[1],
                               x - st.centroid[2]};
          for (int a = 0; a < 3; ++a) sq[a] += d[a] * d[a];
        }
  for (int a = 0; a < 3; ++a) st.spread[a] = std::sqrt(sq[a] / st.count);
  return st;
}

double trilinear(const Grid3& vol, double z, double y, double x) {
  if (z < 0 || y < 0 || x < 0 || z > vol.nz() - 1 || y > vol.ny() - 1 ||
      x > vol.nx() - 1)
    return 0.0;
  const int z0 = static_cast<int>(std::floor(z));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int z1 = std::min(z0 + 1, vol.nz() - 1);
  const int y1 = std::min(y0 + 1, vol.ny() - 1);
  const int x1 = std::min(x0 + 1, vol.nx() - 1);
  const double fz = z - z0, fy = y - y0, fx = x - x0;
  auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
  double c00 = lerp(vol.at(z0, y0, x0), vol.at(z0, y0, x1), fx);
  double c01 = lerp(vol.at(z0, y1, x0), vol.at(z0, y1, x1), fx);
  double c10 = lerp(vol.at(z1, y0, x0), vol.at(z1, y0, x1), fx);
  double c11 = lerp(vol.at(z1, y1, x0), vol.at(z1, y1, x1), fx);
  return lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz);
}

}  // namespace

StandardizedSlice standardize_slice(const Image& slice, double std_floor) {
  StandardizedSlice out;
  out.mean = slice.mean();
  const double var = (slice - out.mean).square().mean();
  const double sd = std::sqrt(var);
  if (!(sd >= std_floor)) {
    out.values = Image::Zero(slice.rows(), slice.cols());
    out.stddev = 1.0;
    out.degenerate = true;
  } else {
    out.values = (slice - out.mean) / sd;
    out.stddev = sd;
  }
  return out;
}

std::vector<int> compute_slice_positions(const Grid3& mask, int n_slices) {
  int z0 = -1, z1 = -1;
  for (int z = 0; z < mask.nz(); ++z) {
    bool any = false;
    for (int y = 0; y < mask.ny() && !any; ++y)
      for (int x = 0; x < mask.nx() && !any; ++x)
        if (mask.at(z, y, x) > 0.5) any = true;
    if (any) {
      if (z0 < 0) z0 = z;
      z1 = z;
    }
  }
  if (z0 < 0) throw ValidationError("brain mask is empty");
  std::vector<int> positions;
  if (n_slices == 1) {
    positions.push_back((z0 + z1) / 2);
    return positions;
  }
  for (int i = 0; i < n_slices; ++i) {
    double t = static_cast<double>(i) / (n_slices - 1);
    positions.push_back(
        static_cast<int>(std::lround(z0 + t * (z1 - z0))));
  }
  return positions;
}

std::optional<SliceStack> preprocess(const VolumeScan& scan,
                                     const VolumeScan& tpl,
                                     const PreprocessOptions& opt) {
  const SupportStats ss = support_stats(scan.voxels);
  const SupportStats ts = support_stats(tpl.voxels);

  double scale[3], shift[3];
  bool finite = ss.count > 0 && ts.count > 0;
  for (int a = 0; a < 3 && finite; ++a) {
    scale[a] = ss.spread[a] / ts.spread[a];
    shift[a] = ss.centroid[a];
    if (!std::isfinite(scale[a]) || !std::isfinite(shift[a]) ||
        !(scale[a] > 0.0))
      finite = false;
  }
  if (!finite) return std::nullopt;

  const Grid3 mask = brain_mask(tpl);
  Grid3 aligned(tpl.voxels.nz(), tpl.voxels.ny(), tpl.voxels.nx());
  for (int z = 0; z < aligned.nz(); ++z)
    for (int y = 0; y < aligned.ny(); ++y)
      for (int x = 0; x < aligned.nx(); ++x) {
        if (mask.at(z, y, x) <= 0.5) continue;  // skull-strip by template mask
        const double sz = shift[0] + scale[0] * (z - ts.centroid[0]);
        const double sy = shift[1] + scale[1] * (y - ts.centroid[1]);
        const double sx = shift[2] + scale[2] * (x - ts.centroid[2]);
        aligned.at(z, y, x) = trilinear(scan.voxels, sz, sy, sx);
      }

  const std::vector<int> positions = compute_slice_positions(mask, opt.n_slices);

  SliceStack stack;
  stack.subject_id = scan.subject_id;
  stack.age = scan.age;
  stack.diagnosis = scan.diagnosis;
  for (int pos : positions) {
    StandardizedSlice s =
        standardize_slice(aligned.slice(pos), opt.degenerate_std_floor);
    stack.slices.push_back(std::move(s.values));
    stack.slice_means.push_back(s.mean);
    stack.slice_stds.push_back(s.stddev);
    stack.degenerate.push_back(s.degenerate);
  }
  return stack;
}

std::vector<SubjectVisits> collect_subjects(
    const std::vector<VolumeScan>& scans) {
  std::map<std::string, std::vector<double>> by_subject;
  for (const auto& s : scans) by_subject[s.subject_id].push_back(s.age);
  std::vector<SubjectVisits> out;
  for (auto& [id, ages] : by_subject) {
    std::sort(ages.begin(), ages.end());
    out.push_back({id, ages});
  }
  return out;
}

CohortSplit split_cohort(const std::vector<SubjectVisits>& cohort,
                         const std::array<double, 3>& ratios,
                         std::uint64_t seed, double min_followup_years) {
  const double rsum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(rsum - 1.0) > 1e-6)
    throw ValidationError("split ratios must sum to 1");
  if (cohort.size() < 3)
    throw ValidationError("cohort must have at least 3 subjects");

  const int n = static_cast<int>(cohort.size());
  int counts[3];
  double frac[3];
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = ratios[i] * n;
    counts[i] = static_cast<int>(std::floor(exact));
    frac[i] = exact - counts[i];
    assigned += counts[i];
  }
  while (assigned < n) {  // largest-remainder rounding
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (frac[i] > frac[best]) best = i;
    ++counts[best];
    frac[best] = -1.0;
    ++assigned;
  }

  std::vector<int> order(cohort.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return cohort[a].subject_id < cohort[b].subject_id;
  });
  Rng rng(seed);
  rng.shuffle(order);

  auto eligible = [&](const SubjectVisits& s) {
    if (s.ages.size() < 2) return false;
    return s.ages.back() - s.ages.front() >= min_followup_years;
  };

  CohortSplit split;
  std::set<int> taken;
  for (int idx : order) {
    if (static_cast<int>(split.test.size()) >= counts[2]) break;
    if (eligible(cohort[idx])) {
      split.test.push_back(cohort[idx].subject_id);
      taken.insert(idx);
    }
  }
  if (static_cast<int>(split.test.size()) < counts[2])
    throw ConfigError(
        "not enough test-eligible subjects (need a follow-up >= " +
        std::to_string(min_followup_years) + " years after baseline): " +
        std::to_string(split.test.size()) + " of " +
        std::to_string(counts[2]));

  for (int idx : order) {
    if (taken.count(idx)) continue;
    if (static_cast<int>(split.train.size()) < counts[0]) {
      split.train.push_back(cohort[idx].subject_id);
    } else {
      split.val.push_back(cohort[idx].subject_id);
    }
  }
  return split;
}

}  // namespace prognet::dataio

namespace prognet::dataio {

namespace {

void write_string(std::ostream& out, const std::string& s) {
  const std::uint32_t n = static_cast<std::uint32_t>(s.size());
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(s.data(), n);
}

std::string read_string(std::istream& in) {
  std::uint32_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

}  // namespace

void save_slice_stacks(const std::vector<SliceStack>& stacks,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write slice stacks " + path);
  const std::uint32_t magic = 0x53544b31;  // "STK1"
  out.write(reinterpret_cast<const char*>(&magic), sizeof(magic));
  const std::uint64_t count = stacks.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& st : stacks) {
    write_string(out, st.subject_id);
    out.write(reinterpret_cast<const char*>(&st.age), sizeof(st.age));
    const std::int32_t diag = st.diagnosis;
    out.write(reinterpret_cast<const char*>(&diag), sizeof(diag));
    const std::uint32_t t = static_cast<std::uint32_t>(st.slices.size());
    const std::uint32_t h =
        t > 0 ? static_cast<std::uint32_t>(st.slices[0].rows()) : 0;
    const std::uint32_t w =
        t > 0 ? static_cast<std::uint32_t>(st.slices[0].cols()) : 0;
    out.write(reinterpret_cast<const char*>(&t), sizeof(t));
    out.write(reinterpret_cast<const char*>(&h), sizeof(h));
    out.write(reinterpret_cast<const char*>(&w), sizeof(w));
    for (std::uint32_t n = 0; n < t; ++n) {
      out.write(reinterpret_cast<const char*>(&st.slice_means[n]),
                sizeof(double));
      out.write(reinterpret_cast<const char*>(&st.slice_stds[n]),
                sizeof(double));
      const std::uint8_t degen = st.degenerate[n] ? 1 : 0;
      out.write(reinterpret_cast<const char*>(&degen), sizeof(degen));
      for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
          const double v = st.slices[n](y, x);
          out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    }
  }
  if (!out) throw IoError("failed writing slice stacks " + path);
}

std::vector<SliceStack> load_slice_stacks(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open slice stacks " + path);
  std::uint32_t magic = 0;
  in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
  if (!in || magic != 0x53544b31)
    throw IoError(path + " is not a slice stack file");
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  std::vector<SliceStack> stacks;
  for (std::uint64_t i = 0; i < count; ++i) {
    SliceStack st;
    st.subject_id = read_string(in);
    in.read(reinterpret_cast<char*>(&st.age), sizeof(st.age));
    std::int32_t diag = 0;
    in.read(reinterpret_cast<char*>(&diag), sizeof(diag));
    st.diagnosis = diag;
    std::uint32_t t = 0, h = 0, w = 0;
    in.read(reinterpret_cast<char*>(&t), sizeof(t));
    in.read(reinterpret_cast<char*>(&h), sizeof(h));
    in.read(reinterpret_cast<char*>(&w), sizeof(w));
    for (std::uint32_t n = 0; n < t; ++n) {
      double mean = 0.0, sd = 1.0;
      std::uint8_t degen = 0;
      in.read(reinterpret_cast<char*>(&mean), sizeof(mean));
      in.read(reinterpret_cast<char*>(&sd), sizeof(sd));
      in.read(reinterpret_cast<char*>(&degen), sizeof(degen));
      Image img(h, w);
      for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
          double v = 0.0;
          in.read(reinterpret_cast<char*>(&v), sizeof(v));
          img(y, x) = v;
        }
      st.slices.push_back(std::move(img));
      st.slice_means.push_back(mean);
      st.slice_stds.push_back(sd);
      st.degenerate.push_back(degen != 0);
    }
    if (!in) throw IoError("truncated slice stack file " + path);
    stacks.push_back(std::move(st));
  }
  return stacks;
}

Grid3 stack_to_volume(const SliceStack& stack) {
  const int t = stack.slice_count();
  if (t == 0) throw ValidationError("stack_to_volume: empty stack");
  const int h = static_cast<int>(stack.slices[0].rows());
  const int w = static_cast<int>(stack.slices[0].cols());
  Grid3 vol(t, h, w);
  for (int n = 0; n < t; ++n) {
    const Image s = stack.slices[static_cast<std::size_t>(n)] *
                        stack.slice_stds[static_cast<std::size_t>(n)] +
                    stack.slice_means[static_cast<std::size_t>(n)];
    vol.set_slice(n, s);
  }
  return vol;
}

}  // namespace prognet::dataio
