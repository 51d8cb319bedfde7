#pragma once

#include <string>
#include <vector>

#include "prognet/volume.hpp"

namespace prognet::atlas {

/// One binary region mask on a slice. Variant 0 is the base atlas region;
/// +r / -r are the dilated / eroded variants at radius r.
struct RegionMask {
  int label = 0;
  int variant = 0;
  Image mask;                // S x S, values 0/1
  std::vector<int> pixels;   // flat indices (y * width + x), sorted
  long size = 0;             // pixel count, equals pixels.size()
};

struct SliceRegions {
  int slice_ordinal = 0;  // position in the configured slice list
  int slice_z = 0;        // axial index in template space
  std::vector<RegionMask> masks;
};

struct RegionSet {
  int height = 0;
  int width = 0;
  std::vector<SliceRegions> slices;

  int region_count(int ordinal) const {
    return static_cast<int>(slices.at(ordinal).masks.size());
  }
};

/// Extract one base mask per integer label per slice; empty intersections
/// are dropped.
RegionSet build_regions(const VolumeScan& atlas_volume,
                        const std::vector<int>& slice_positions);

/// For each base mask and radius, append an eroded and a dilated variant
/// (4-connected diamond structuring element). Eroded-to-empty variants are
/// dropped; sizes are recomputed. Base ordering is preserved.
RegionSet augment_regions(const RegionSet& regions,
                          const std::vector<int>& radii);

/// Drop masks smaller than min_size pixels (applied after augmentation to
/// keep the region-ratio denominators away from the epsilon regime).
RegionSet filter_min_size(const RegionSet& regions, long min_size);

Image erode(const Image& mask, int radius);
Image dilate(const Image& mask, int radius);

/// Mask stacks go to <dir>/regions_slice_<n>.bin.gz; the index with sizes
/// goes to <dir>/regions_index.json.
void save_region_set(const RegionSet& regions, const std::string& dir);
RegionSet load_region_set(const std::string& dir);

struct RegionStats {
  double mean_regions_per_slice = 0.0;
  double mean_region_size = 0.0;
  long total_regions = 0;
};
RegionStats region_stats(const RegionSet& regions);

}  // namespace prognet::atlas
