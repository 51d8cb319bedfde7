#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

namespace prognet {

/// One 2D slice, rows = y, cols = x.
using Image = Eigen::ArrayXXd;

/// Dense 3D scalar field, axial slice axis first (z, y, x).
class Grid3 {
 public:
  Grid3() : shape_{0, 0, 0} {}
  Grid3(int nz, int ny, int nx)
      : shape_{nz, ny, nx},
        data_(static_cast<std::size_t>(nz) * ny * nx, 0.0) {}

  int nz() const { return shape_[0]; }
  int ny() const { return shape_[1]; }
  int nx() const { return shape_[2]; }
  const std::array<int, 3>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  double& at(int z, int y, int x) {
    return data_[(static_cast<std::size_t>(z) * shape_[1] + y) * shape_[2] + x];
  }
  double at(int z, int y, int x) const {
    return data_[(static_cast<std::size_t>(z) * shape_[1] + y) * shape_[2] + x];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  Image slice(int z) const {
    Image s(shape_[1], shape_[2]);
    for (int y = 0; y < shape_[1]; ++y)
      for (int x = 0; x < shape_[2]; ++x) s(y, x) = at(z, y, x);
    return s;
  }

  void set_slice(int z, const Image& s) {
    for (int y = 0; y < shape_[1]; ++y)
      for (int x = 0; x < shape_[2]; ++x) at(z, y, x) = s(y, x);
  }

  bool same_shape(const Grid3& o) const { return shape_ == o.shape_; }

 private:
  std::array<int, 3> shape_;
  std::vector<double> data_;
};

/// One acquired (or synthetic) 3D scan plus its subject metadata.
struct VolumeScan {
  std::string subject_id;
  double age = 0.0;       // years
  int diagnosis = 0;      // 0..3
  Grid3 voxels;
  std::array<double, 3> spacing = {1.0, 1.0, 1.0};  // mm per axis (z,y,x)

  void validate() const;  // throws ValidationError
};

/// The standardized axial slices of one scan plus the parameters needed
/// to undo the standardization.
struct SliceStack {
  std::string subject_id;
  double age = 0.0;
  int diagnosis = 0;
  std::vector<Image> slices;       // size T, each S x S, mean 0 / std 1
  std::vector<double> slice_means;  // size T
  std::vector<double> slice_stds;   // size T, > 0
  std::vector<bool> degenerate;     // size T, true if source slice was constant

  int slice_count() const { return static_cast<int>(slices.size()); }
};

}  // namespace prognet
