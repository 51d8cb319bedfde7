#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "json.hpp"
#include "prognet/dataio.hpp"
#include "prognet/errors.hpp"

namespace prognet::dataio {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// NIfTI-1 header, 348 bytes. Only the fields this project touches are
// given meaningful names; the rest is padding kept for layout.
#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string sidecar_path(const std::string& path) {
  std::string p = path;
  for (const char* suffix : {".nii.gz", ".nii", ".raw"}) {
    if (ends_with(p, suffix)) {
      return p.substr(0, p.size() - std::strlen(suffix)) + ".json";
    }
  }
  return p + ".json";
}

void write_sidecar(const VolumeScan& scan, const std::string& path) {
  json j;
  j["subject_id"] = scan.subject_id;
  j["age"] = scan.age;
  j["diagnosis"] = scan.diagnosis;
  j["shape"] = {scan.voxels.nz(), scan.voxels.ny(), scan.voxels.nx()};
  j["spacing"] = {scan.spacing[0], scan.spacing[1], scan.spacing[2]};
  std::ofstream out(sidecar_path(path));
  if (!out) throw IoError("cannot write sidecar for " + path);
  out << j.dump(2) << "\n";
}

json read_sidecar(const std::string& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw MetadataError("missing sidecar for " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw MetadataError("corrupt sidecar for " + path + ": " + e.what());
  }
  return j;
}

void apply_sidecar_metadata(VolumeScan& scan, const json& j,
                            const std::string& path) {
  if (!j.contains("subject_id") || !j.contains("age") || !j.contains("diagnosis"))
    throw MetadataError("sidecar for " + path +
                        " lacks subject_id/age/diagnosis");
  scan.subject_id = j["subject_id"].get<std::string>();
  scan.age = j["age"].get<double>();
  scan.diagnosis = j["diagnosis"].get<int>();
  if (scan.diagnosis < 0 || scan.diagnosis > 3)
    throw MetadataError("sidecar for " + path + " has diagnosis " +
                        std::to_string(scan.diagnosis) + " outside 0..3");
  if (!(scan.age > 0.0))
    throw MetadataError("sidecar for " + path + " has non-positive age");
}

std::vector<unsigned char> gz_read_all(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) {
    out.insert(out.end(), buf, buf + n);
  }
  bool bad = n < 0;
  gzclose(f);
  if (bad) throw IoError("failed to read " + path);
  return out;
}

void write_nifti(const VolumeScan& scan, const std::string& path) {
  Nifti1Header hdr;
  std::memset(&hdr, 0, sizeof(hdr));
  hdr.sizeof_hdr = 348;
  hdr.regular = 'r';
  hdr.dim[0] = 3;
  hdr.dim[1] = static_cast<std::int16_t>(scan.voxels.nx());
  hdr.dim[2] = static_cast<std::int16_t>(scan.voxels.ny());
  hdr.dim[3] = static_cast<std::int16_t>(scan.voxels.nz());
  for (int i = 4; i < 8; ++i) hdr.dim[i] = 1;
  hdr.datatype = kDtFloat32;
  hdr.bitpix = 32;
  hdr.pixdim[0] = 1.0f;
  hdr.pixdim[1] = static_cast<float>(scan.spacing[2]);
  hdr.pixdim[2] = static_cast<float>(scan.spacing[1]);
  hdr.pixdim[3] = static_cast<float>(scan.spacing[0]);
  hdr.vox_offset = 352.0f;
  hdr.scl_slope = 1.0f;
  hdr.xyzt_units = 2;  // mm
  std::memcpy(hdr.magic, "n+1", 4);

  std::vector<float> data(scan.voxels.size());
  const auto& raw = scan.voxels.raw();
  for (std::size_t i = 0; i < raw.size(); ++i)
    data[i] = static_cast<float>(raw[i]);
  const char ext[4] = {0, 0, 0, 0};

  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot write " + path);
    bool ok = gzwrite(f, &hdr, sizeof(hdr)) == static_cast<int>(sizeof(hdr)) &&
              gzwrite(f, ext, 4) == 4 &&
              gzwrite(f, data.data(),
                      static_cast<unsigned>(data.size() * sizeof(float))) ==
                  static_cast<int>(data.size() * sizeof(float));
    gzclose(f);
    if (!ok) throw IoError("failed to write " + path);
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(&hdr), sizeof(hdr));
    out.write(ext, 4);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!out) throw IoError("failed to write " + path);
  }
}

VolumeScan read_nifti(const std::string& path) {
  std::vector<unsigned char> bytes = gz_read_all(path);
  if (bytes.size() < sizeof(Nifti1Header))
    throw IoError(path + ": truncated NIfTI header");
  Nifti1Header hdr;
  std::memcpy(&hdr, bytes.data(), sizeof(hdr));
  if (hdr.sizeof_hdr != 348)
    throw IoError(path + ": not a little-endian NIfTI-1 file");
  if (hdr.dim[0] < 3 || hdr.dim[1] <= 0 || hdr.dim[2] <= 0 || hdr.dim[3] <= 0)
    throw IoError(path + ": unsupported dimensionality");

  const int nx = hdr.dim[1], ny = hdr.dim[2], nz = hdr.dim[3];
  const std::size_t n = static_cast<std::size_t>(nx) * ny * nz;
  const std::size_t offset = static_cast<std::size_t>(hdr.vox_offset);

  VolumeScan scan;
  scan.voxels = Grid3(nz, ny, nx);
  scan.spacing = {hdr.pixdim[3], hdr.pixdim[2], hdr.pixdim[1]};
  for (double& s : scan.spacing)
    if (!(s > 0.0)) s = 1.0;

  const double slope = hdr.scl_slope == 0.0f ? 1.0 : hdr.scl_slope;
  const double inter = hdr.scl_inter;
  auto fill = [&](auto type_tag) {
    using T = decltype(type_tag);
    if (bytes.size() < offset + n * sizeof(T))
      throw IoError(path + ": truncated voxel data");
    const T* src = reinterpret_cast<const T*>(bytes.data() + offset);
    for (std::size_t i = 0; i < n; ++i)
      scan.voxels.raw()[i] = slope * static_cast<double>(src[i]) + inter;
  };
  switch (hdr.datatype) {
    case kDtUint8: fill(std::uint8_t{}); break;
    case kDtInt16: fill(std::int16_t{}); break;
    case kDtInt32: fill(std::int32_t{}); break;
    case kDtFloat32: fill(float{}); break;
    case kDtFloat64: fill(double{}); break;
    default:
      throw IoError(path + ": unsupported NIfTI datatype " +
                    std::to_string(hdr.datatype));
  }
  return scan;
}

void write_raw(const VolumeScan& scan, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  std::vector<float> data(scan.voxels.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = static_cast<float>(scan.voxels.raw()[i]);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw IoError("failed to write " + path);
}

VolumeScan read_raw(const std::string& path, const json& sidecar) {
  if (!sidecar.contains("shape"))
    throw MetadataError("sidecar for " + path + " lacks shape");
  auto shape = sidecar["shape"].get<std::vector<int>>();
  if (shape.size() != 3)
    throw MetadataError("sidecar for " + path + " shape must have 3 axes");
  VolumeScan scan;
  scan.voxels = Grid3(shape[0], shape[1], shape[2]);
  if (sidecar.contains("spacing")) {
    auto sp = sidecar["spacing"].get<std::vector<double>>();
    if (sp.size() == 3) scan.spacing = {sp[0], sp[1], sp[2]};
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<float> data(scan.voxels.size());
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(data.size() * sizeof(float)))
    throw IoError(path + ": truncated raw volume");
  for (std::size_t i = 0; i < data.size(); ++i)
    scan.voxels.raw()[i] = data[i];
  return scan;
}

}  // namespace

void write_volume(const VolumeScan& scan, const std::string& path) {
  fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  if (ends_with(path, ".nii") || ends_with(path, ".nii.gz")) {
    write_nifti(scan, path);
  } else {
    write_raw(scan, path);
  }
  write_sidecar(scan, path);
}

VolumeScan ingest_volume(const std::string& path) {
  if (!fs::exists(path)) throw IoError("no such file: " + path);
  VolumeScan scan;
  if (ends_with(path, ".nii") || ends_with(path, ".nii.gz")) {
    scan = read_nifti(path);
    apply_sidecar_metadata(scan, read_sidecar(path), path);
  } else {
    json sidecar = read_sidecar(path);
    scan = read_raw(path, sidecar);
    apply_sidecar_metadata(scan, sidecar, path);
  }
  return scan;
}

void write_manifest(const std::vector<ManifestRecord>& records,
                    const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  for (const auto& r : records) {
    json j;
    j["path"] = r.path;
    j["subject_id"] = r.subject_id;
    j["age"] = r.age;
    j["diagnosis"] = r.diagnosis;
    j["split"] = r.split;
    out << j.dump() << "\n";
  }
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::vector<ManifestRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) +
                    ": bad manifest line: " + e.what());
    }
    ManifestRecord r;
    r.path = j.at("path").get<std::string>();
    r.subject_id = j.at("subject_id").get<std::string>();
    r.age = j.at("age").get<double>();
    r.diagnosis = j.at("diagnosis").get<int>();
    r.split = j.value("split", "");
    out.push_back(std::move(r));
  }
  return out;
}

void write_ground_truth(const std::vector<GroundTruth>& truth,
                        const std::string& path) {
  json arr = json::array();
  for (const auto& g : truth) {
    json j;
    j["subject_id"] = g.subject_id;
    j["age"] = g.age;
    j["diagnosis"] = g.diagnosis;
    j["gender"] = g.gender;
    j["ventricle_volume_analytic"] = g.ventricle_volume_analytic;
    j["ventricle_volume_fractional"] = g.ventricle_volume_fractional;
    j["ventricle_voxel_count"] = g.ventricle_voxel_count;
    j["tissue_intensity_analytic"] = g.tissue_intensity_analytic;
    j["tissue_intensity_painted"] = g.tissue_intensity_painted;
    j["brain_voxel_count"] = g.brain_voxel_count;
    j["brain_axes"] = {g.brain_axes[0], g.brain_axes[1], g.brain_axes[2]};
    j["vent_axes"] = {g.vent_axes[0], g.vent_axes[1], g.vent_axes[2]};
    arr.push_back(std::move(j));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write ground truth " + path);
  out << arr.dump(2) << "\n";
}

std::vector<GroundTruth> read_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ground truth " + path);
  json arr;
  try {
    in >> arr;
  } catch (const json::exception& e) {
    throw IoError(path + ": bad ground truth file: " + e.what());
  }
  std::vector<GroundTruth> out;
  for (const auto& j : arr) {
    GroundTruth g;
    g.subject_id = j.at("subject_id").get<std::string>();
    g.age = j.at("age").get<double>();
    g.diagnosis = j.at("diagnosis").get<int>();
    g.gender = j.value("gender", 0);
    g.ventricle_volume_analytic = j.at("ventricle_volume_analytic").get<double>();
    g.ventricle_volume_fractional = j.value("ventricle_volume_fractional", 0.0);
    g.ventricle_voxel_count = j.at("ventricle_voxel_count").get<long>();
    g.tissue_intensity_analytic = j.at("tissue_intensity_analytic").get<double>();
    g.tissue_intensity_painted = j.at("tissue_intensity_painted").get<double>();
    g.brain_voxel_count = j.at("brain_voxel_count").get<long>();
    if (j.contains("brain_axes")) {
      auto ba = j["brain_axes"].get<std::vector<double>>();
      auto va = j["vent_axes"].get<std::vector<double>>();
      for (int k = 0; k < 3; ++k) {
        g.brain_axes[static_cast<std::size_t>(k)] = ba[static_cast<std::size_t>(k)];
        g.vent_axes[static_cast<std::size_t>(k)] = va[static_cast<std::size_t>(k)];
      }
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace prognet::dataio
