#include "prognet/atlas.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "prognet/errors.hpp"

namespace prognet::atlas {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int> mask_pixels(const Image& m) {
  std::vector<int> px;
  const int w = static_cast<int>(m.cols());
  for (int y = 0; y < m.rows(); ++y)
    for (int x = 0; x < w; ++x)
      if (m(y, x) > 0.5) px.push_back(y * w + x);
  return px;
}

RegionMask make_region(int label, int variant, Image mask) {
  RegionMask r;
  r.label = label;
  r.variant = variant;
  r.pixels = mask_pixels(mask);
  r.size = static_cast<long>(r.pixels.size());
  r.mask = std::move(mask);
  return r;
}

}  // namespace

Image erode(const Image& mask, int radius) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  Image out = Image::Zero(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask(y, x) <= 0.5) continue;
      bool keep = true;
      for (int dy = -radius; dy <= radius && keep; ++dy) {
        const int span = radius - std::abs(dy);
        for (int dx = -span; dx <= span && keep; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= h || xx >= w || mask(yy, xx) <= 0.5)
            keep = false;
        }
      }
      if (keep) out(y, x) = 1.0;
    }
  }
  return out;
}

Image dilate(const Image& mask, int radius) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  Image out = Image::Zero(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask(y, x) <= 0.5) continue;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int span = radius - std::abs(dy);
        for (int dx = -span; dx <= span; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && xx >= 0 && yy < h && xx < w) out(yy, xx) = 1.0;
        }
      }
    }
  }
  return out;
}

RegionSet build_regions(const VolumeScan& atlas_volume,
                        const std::vector<int>& slice_positions) {
  RegionSet set;
  set.height = atlas_volume.voxels.ny();
  set.width = atlas_volume.voxels.nx();

  std::set<int> labels;
  for (double v : atlas_volume.voxels.raw()) {
    const int lab = static_cast<int>(std::lround(v));
    if (lab > 0) labels.insert(lab);
  }

  int ordinal = 0;
  for (int z : slice_positions) {
    if (z < 0 || z >= atlas_volume.voxels.nz())
      throw ValidationError("slice position " + std::to_string(z) +
                            " outside atlas volume");
    SliceRegions sr;
    sr.slice_ordinal = ordinal++;
    sr.slice_z = z;
    const Image slice = atlas_volume.voxels.slice(z);
    for (int lab : labels) {
      Image m = (slice > (lab - 0.5) && slice < (lab + 0.5)).cast<double>();
      RegionMask r = make_region(lab, 0, std::move(m));
      if (r.size > 0) sr.masks.push_back(std::move(r));
    }
    set.slices.push_back(std::move(sr));
  }
  return set;
}

RegionSet augment_regions(const RegionSet& regions,
                          const std::vector<int>& radii) {
  for (int r : radii)
    if (r < 1) throw ValidationError("morphology radius must be >= 1");
  RegionSet out;
  out.height = regions.height;
  out.width = regions.width;
  for (const auto& sr : regions.slices) {
    SliceRegions augmented;
    augmented.slice_ordinal = sr.slice_ordinal;
    augmented.slice_z = sr.slice_z;
    for (const auto& base : sr.masks) {
      augmented.masks.push_back(base);
      for (int r : radii) {
        RegionMask er = make_region(base.label, -r, erode(base.mask, r));
        if (er.size > 0) augmented.masks.push_back(std::move(er));
        RegionMask di = make_region(base.label, r, dilate(base.mask, r));
        if (di.size > 0) augmented.masks.push_back(std::move(di));
      }
    }
    out.slices.push_back(std::move(augmented));
  }
  return out;
}

RegionSet filter_min_size(const RegionSet& regions, long min_size) {
  RegionSet out;
  out.height = regions.height;
  out.width = regions.width;
  for (const auto& sr : regions.slices) {
    SliceRegions kept;
    kept.slice_ordinal = sr.slice_ordinal;
    kept.slice_z = sr.slice_z;
    for (const auto& m : sr.masks)
      if (m.size >= min_size) kept.masks.push_back(m);
    out.slices.push_back(std::move(kept));
  }
  return out;
}

void save_region_set(const RegionSet& regions, const std::string& dir) {
  fs::create_directories(dir);
  json index;
  index["height"] = regions.height;
  index["width"] = regions.width;
  json slices = json::array();
  for (const auto& sr : regions.slices) {
    json js;
    js["slice_ordinal"] = sr.slice_ordinal;
    js["slice_z"] = sr.slice_z;
    json masks = json::array();
    std::vector<unsigned char> packed;
    packed.reserve(sr.masks.size() * regions.height * regions.width);
    for (const auto& m : sr.masks) {
      masks.push_back({{"label", m.label}, {"variant", m.variant},
                       {"size", m.size}});
      for (int y = 0; y < regions.height; ++y)
        for (int x = 0; x < regions.width; ++x)
          packed.push_back(m.mask(y, x) > 0.5 ? 1 : 0);
    }
    js["masks"] = std::move(masks);
    slices.push_back(std::move(js));

    const std::string path =
        dir + "/regions_slice_" + std::to_string(sr.slice_ordinal) + ".bin.gz";
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot write " + path);
    const bool ok =
        packed.empty() ||
        gzwrite(f, packed.data(), static_cast<unsigned>(packed.size())) ==
            static_cast<int>(packed.size());
    gzclose(f);
    if (!ok) throw IoError("failed to write " + path);
  }
  index["slices"] = std::move(slices);
  std::ofstream out(dir + "/regions_index.json");
  if (!out) throw IoError("cannot write region index in " + dir);
  out << index.dump(2) << "\n";
}

RegionSet load_region_set(const std::string& dir) {
  std::ifstream in(dir + "/regions_index.json");
  if (!in) throw IoError("cannot open region index in " + dir);
  json index;
  in >> index;
  RegionSet set;
  set.height = index.at("height").get<int>();
  set.width = index.at("width").get<int>();
  for (const auto& js : index.at("slices")) {
    SliceRegions sr;
    sr.slice_ordinal = js.at("slice_ordinal").get<int>();
    sr.slice_z = js.at("slice_z").get<int>();
    const std::string path =
        dir + "/regions_slice_" + std::to_string(sr.slice_ordinal) + ".bin.gz";
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open " + path);
    const std::size_t per_mask =
        static_cast<std::size_t>(set.height) * set.width;
    for (const auto& jm : js.at("masks")) {
      std::vector<unsigned char> buf(per_mask);
      if (gzread(f, buf.data(), static_cast<unsigned>(per_mask)) !=
          static_cast<int>(per_mask)) {
        gzclose(f);
        throw IoError("truncated mask stack: " + path);
      }
      Image m(set.height, set.width);
      for (int y = 0; y < set.height; ++y)
        for (int x = 0; x < set.width; ++x)
          m(y, x) = buf[static_cast<std::size_t>(y) * set.width + x] ? 1.0 : 0.0;
      RegionMask r = make_region(jm.at("label").get<int>(),
                                 jm.at("variant").get<int>(), std::move(m));
      if (r.size != jm.at("size").get<long>()) {
        gzclose(f);
        throw IoError("mask size mismatch in " + path);
      }
      sr.masks.push_back(std::move(r));
    }
    gzclose(f);
    set.slices.push_back(std::move(sr));
  }
  return set;
}

RegionStats region_stats(const RegionSet& regions) {
  RegionStats st;
  double size_sum = 0.0;
  for (const auto& sr : regions.slices) {
    st.total_regions += static_cast<long>(sr.masks.size());
    for (const auto& m : sr.masks) size_sum += static_cast<double>(m.size);
  }
  if (!regions.slices.empty())
    st.mean_regions_per_slice =
        static_cast<double>(st.total_regions) / regions.slices.size();
  if (st.total_regions > 0)
    st.mean_region_size = size_sum / static_cast<double>(st.total_regions);
  return st;
}

}  // namespace prognet::atlas
