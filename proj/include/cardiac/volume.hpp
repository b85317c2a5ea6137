#pragma once

// Core image data model: 4D scalar cine volumes and integer label maps.
//
// Voxel (x, y, z, t) lives at offset x + X * (y + Y * (z + Z * t)).

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cardiac {

struct VoxelSpacing {
  double dx = 1.0;  // mm
  double dy = 1.0;  // mm
  double dz = 1.0;  // mm
  double dt = 0.0;  // s per frame, 0 when unknown

  double voxel_mm3() const { return dx * dy * dz; }
  bool valid() const;
  friend bool operator==(const VoxelSpacing&, const VoxelSpacing&) = default;
};

using Dims4 = std::array<int, 4>;
using Dims3 = std::array<int, 3>;

std::size_t voxel_count(const Dims4& d);

class Volume4D {
 public:
  Volume4D() = default;
  Volume4D(Dims4 dims, VoxelSpacing spacing);
  Volume4D(Dims4 dims, VoxelSpacing spacing, std::vector<float> data);

  const Dims4& dims() const { return dims_; }
  int nx() const { return dims_[0]; }
  int ny() const { return dims_[1]; }
  int nz() const { return dims_[2]; }
  int nt() const { return dims_[3]; }
  const VoxelSpacing& spacing() const { return spacing_; }
  void set_spacing(const VoxelSpacing& s) { spacing_ = s; }

  std::size_t size() const { return data_.size(); }
  std::size_t offset(int x, int y, int z, int t = 0) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_[0]) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(dims_[1]) *
                    (static_cast<std::size_t>(z) + static_cast<std::size_t>(dims_[2]) * t));
  }
  float& at(int x, int y, int z, int t = 0) { return data_[offset(x, y, z, t)]; }
  float at(int x, int y, int z, int t = 0) const { return data_[offset(x, y, z, t)]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::span<const float> frame(int t) const;

  /// Single-frame copy of frame t (T = 1).
  Volume4D extract_frame(int t) const;

 private:
  Dims4 dims_{0, 0, 0, 0};
  VoxelSpacing spacing_;
  std::vector<float> data_;
};

enum Label : std::uint8_t { kBackground = 0, kRV = 1, kMyo = 2, kLV = 3 };
inline constexpr int kNumClasses = 4;

class LabelVolume {
 public:
  LabelVolume() = default;
  LabelVolume(Dims4 dims, VoxelSpacing spacing);
  LabelVolume(Dims3 dims, VoxelSpacing spacing) : LabelVolume(Dims4{dims[0], dims[1], dims[2], 1}, spacing) {}
  LabelVolume(Dims4 dims, VoxelSpacing spacing, std::vector<std::uint8_t> labels);

  const Dims4& dims() const { return dims_; }
  Dims3 dims3() const { return {dims_[0], dims_[1], dims_[2]}; }
  int nx() const { return dims_[0]; }
  int ny() const { return dims_[1]; }
  int nz() const { return dims_[2]; }
  int nt() const { return dims_[3]; }
  const VoxelSpacing& spacing() const { return spacing_; }
  void set_spacing(const VoxelSpacing& s) { spacing_ = s; }

  std::size_t size() const { return labels_.size(); }
  std::size_t offset(int x, int y, int z, int t = 0) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_[0]) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(dims_[1]) *
                    (static_cast<std::size_t>(z) + static_cast<std::size_t>(dims_[2]) * t));
  }
  std::uint8_t& at(int x, int y, int z, int t = 0) { return labels_[offset(x, y, z, t)]; }
  std::uint8_t at(int x, int y, int z, int t = 0) const { return labels_[offset(x, y, z, t)]; }

  std::span<std::uint8_t> labels() { return labels_; }
  std::span<const std::uint8_t> labels() const { return labels_; }

  LabelVolume extract_frame(int t) const;

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

 private:
  Dims4 dims_{0, 0, 0, 0};
  VoxelSpacing spacing_;
  std::vector<std::uint8_t> labels_;
};

struct StudyMeta {
  int ed_frame = 0;
  int es_frame = -1;  // -1: unknown, chosen from the segmentation
  std::string patient_id;
};

/// Percentile-clipped z-score over all voxels. Constant input maps to zeros.
Volume4D normalize_intensity(const Volume4D& v);

/// Linear-interpolated percentile (q in [0, 100]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

}  // namespace cardiac
