#include "prognet/volume.hpp"

#include <cmath>

#include "prognet/errors.hpp"

namespace prognet {

void VolumeScan::validate() const {
  if (subject_id.empty()) throw ValidationError("subject_id: empty");
  if (!(age > 0.0)) throw ValidationError("age: must be positive");
  if (diagnosis < 0 || diagnosis > 3)
    throw ValidationError("diagnosis: code " + std::to_string(diagnosis) +
                          " outside 0..3");
  if (voxels.nz() < 8 || voxels.ny() < 8 || voxels.nx() < 8)
    throw ValidationError("voxels: every axis must have at least 8 samples");
  for (double s : spacing)
    if (!(s > 0.0)) throw ValidationError("spacing: must be positive");
  for (double v : voxels.raw())
    if (!std::isfinite(v)) throw ValidationError("voxels: non-finite intensity");
}

}  // namespace prognet
