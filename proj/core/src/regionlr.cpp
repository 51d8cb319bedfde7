#include "prognet/regionlr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "prognet/errors.hpp"

namespace prognet::regionlr {

namespace {

using nlohmann::json;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double masked_sum(const Image& img, const atlas::RegionMask& mask,
                  const Image* brain) {
  const int w = static_cast<int>(img.cols());
  double s = 0.0;
  for (int px : mask.pixels) {
    const int y = px / w, x = px % w;
    if (brain && (*brain)(y, x) <= 0.5) continue;
    s += img(y, x);
  }
  return s;
}

double normalized_diag(int d) { return (d - 1.5) / 1.5; }

}  // namespace

double region_ratio(const Image& earlier, const Image& later,
                    const atlas::RegionMask& mask, const Image* brain,
                    double epsilon) {
  if (earlier.rows() != later.rows() || earlier.cols() != later.cols())
    throw ValidationError("region_ratio: slice shapes differ");
  if (mask.mask.rows() != earlier.rows() || mask.mask.cols() != earlier.cols())
    throw ValidationError("region_ratio: mask shape differs from slices");
  if (mask.pixels.empty()) throw ValidationError("region_ratio: empty mask");
  const double den = masked_sum(earlier, mask, brain) + epsilon;
  const double num = masked_sum(later, mask, brain) + epsilon;
  return num / den;
}

std::vector<std::pair<double, double>> monotonic_filter(
    const std::vector<std::pair<double, double>>& series) {
  std::vector<std::pair<double, double>> kept;
  for (const auto& pt : series) {
    if (kept.empty() || pt.second <= kept.back().second) kept.push_back(pt);
  }
  return kept;
}

double RegionLR::predict(double baseline_age, double followup_age,
                         int diagnosis) const {
  if (fallback) return 1.0;
  const double s0 = std::log(1.0 / (r_max - 1.0));
  const double dt = followup_age - baseline_age;
  const double o_n = (baseline_age - o_center) / o_scale;
  const double arg =
      s0 + dt * (w[0] + w[1] * o_n + w[2] * normalized_diag(diagnosis));
  return r_max * sigmoid(arg);
}

RegionLR fit_region_lr(std::vector<RatioSample> samples, const FitOptions& opt) {
  RegionLR model;
  model.r_max = opt.r_max;

  if (static_cast<int>(samples.size()) < opt.min_samples) {
    model.fallback = true;
    return model;
  }

  double o_sum = 0.0;
  for (const auto& s : samples) o_sum += s.baseline_age;
  model.o_center = o_sum / static_cast<double>(samples.size());
  double o_var = 0.0;
  for (const auto& s : samples) {
    const double d = s.baseline_age - model.o_center;
    o_var += d * d;
  }
  model.o_scale = std::max(1.0, std::sqrt(o_var / samples.size()));

  if (opt.anchor_zero_elapsed) {
    std::vector<RatioSample> anchors;
    for (const auto& s : samples)
      anchors.push_back({s.baseline_age, s.baseline_age, s.diagnosis, 1.0});
    samples.insert(samples.end(), anchors.begin(), anchors.end());
  }

  const double s0 = std::log(1.0 / (model.r_max - 1.0));
  // Adam on the mean squared ratio error; targets are clipped into the
  // representable band so gross outliers cannot saturate the sigmoid.
  double m[3] = {0, 0, 0}, v[3] = {0, 0, 0};
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int it = 1; it <= opt.iterations; ++it) {
    double grad[3] = {0, 0, 0};
    for (const auto& s : samples) {
      const double dt = s.followup_age - s.baseline_age;
      const double o_n = (s.baseline_age - model.o_center) / model.o_scale;
      const double d_n = normalized_diag(s.diagnosis);
      const double arg =
          s0 + dt * (model.w[0] + model.w[1] * o_n + model.w[2] * d_n);
      const double sig = sigmoid(arg);
      const double pred = model.r_max * sig;
      const double target =
          std::clamp(s.ratio, 0.01 * model.r_max, 0.99 * model.r_max);
      const double resid = pred - target;
      const double base = 2.0 * resid * model.r_max * sig * (1.0 - sig) /
                          static_cast<double>(samples.size());
      grad[0] += base * dt;
      grad[1] += base * dt * o_n;
      grad[2] += base * dt * d_n;
    }
    for (int k = 0; k < 3; ++k) {
      m[k] = b1 * m[k] + (1 - b1) * grad[k];
      v[k] = b2 * v[k] + (1 - b2) * grad[k] * grad[k];
      const double mh = m[k] / (1 - std::pow(b1, it));
      const double vh = v[k] / (1 - std::pow(b2, it));
      model.w[k] -= opt.learning_rate * mh / (std::sqrt(vh) + eps);
    }
  }
  return model;
}

LrBank fit_region_lrs(const std::vector<SliceStack>& train_stacks,
                      const atlas::RegionSet& regions,
                      const std::vector<Image>& brain_slices,
                      const FitOptions& opt, FitReport* report) {
  // Group stacks by subject, sorted by age inside each subject.
  std::map<std::string, std::vector<const SliceStack*>> by_subject;
  for (const auto& st : train_stacks) by_subject[st.subject_id].push_back(&st);
  for (auto& [id, stacks] : by_subject) {
    std::sort(stacks.begin(), stacks.end(),
              [](const SliceStack* a, const SliceStack* b) {
                return a->age < b->age;
              });
  }

  LrBank bank;
  for (const auto& sr : regions.slices) {
    const int n = sr.slice_ordinal;
    const Image* brain =
        n < static_cast<int>(brain_slices.size()) ? &brain_slices[n] : nullptr;
    for (int q = 0; q < static_cast<int>(sr.masks.size()); ++q) {
      const auto& mask = sr.masks[q];
      std::vector<RatioSample> samples;
      for (const auto& [id, stacks] : by_subject) {
        if (stacks.size() < 2) continue;
        std::vector<std::pair<double, double>> series;
        for (const SliceStack* st : stacks) {
          if (n >= st->slice_count()) continue;
          double s = 0.0;
          const int w = regions.width;
          for (int px : mask.pixels) {
            const int y = px / w, x = px % w;
            if (brain && (*brain)(y, x) <= 0.5) continue;
            s += st->slices[n](y, x);
          }
          series.emplace_back(st->age, s);
        }
        const auto kept = monotonic_filter(series);
        const int diagnosis = stacks.front()->diagnosis;
        for (std::size_t i = 0; i + 1 < kept.size(); ++i) {
          for (std::size_t j = i + 1; j < kept.size(); ++j) {
            const double den = kept[i].second + 0.1;
            const double num = kept[j].second + 0.1;
            samples.push_back(
                {kept[i].first, kept[j].first, diagnosis, num / den});
          }
        }
      }
      RegionLR model = fit_region_lr(samples, opt);
      if (report) {
        if (model.fallback) {
          ++report->fallbacks;
          report->notes.push_back("slice " + std::to_string(n) + " region " +
                                  std::to_string(q) + ": " +
                                  std::to_string(samples.size()) +
                                  " samples, identity fallback");
        } else {
          ++report->fitted;
        }
      }
      bank.models[{n, q}] = model;
    }
  }
  return bank;
}

void save_lr_bank(const LrBank& bank, const std::string& path) {
  json arr = json::array();
  for (const auto& [key, model] : bank.models) {
    json j;
    j["slice"] = key.first;
    j["region"] = key.second;
    j["w"] = {model.w[0], model.w[1], model.w[2]};
    j["r_max"] = model.r_max;
    j["o_center"] = model.o_center;
    j["o_scale"] = model.o_scale;
    j["fallback"] = model.fallback;
    arr.push_back(std::move(j));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write LR bank " + path);
  out << arr.dump(2) << "\n";
}

LrBank load_lr_bank(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open LR bank " + path);
  json arr;
  try {
    in >> arr;
  } catch (const json::exception& e) {
    throw IoError("bad LR bank " + path + ": " + e.what());
  }
  LrBank bank;
  for (const auto& j : arr) {
    RegionLR model;
    auto w = j.at("w").get<std::vector<double>>();
    if (w.size() != 3) throw IoError("bad LR coefficients in " + path);
    std::copy(w.begin(), w.end(), model.w);
    model.r_max = j.at("r_max").get<double>();
    model.o_center = j.at("o_center").get<double>();
    model.o_scale = j.at("o_scale").get<double>();
    model.fallback = j.at("fallback").get<bool>();
    bank.models[{j.at("slice").get<int>(), j.at("region").get<int>()}] = model;
  }
  return bank;
}

}  // namespace prognet::regionlr
