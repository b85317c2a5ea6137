#include "cardiac/volume.hpp"

#include <algorithm>
#include <cmath>

#include "cardiac/error.hpp"

namespace cardiac {

bool VoxelSpacing::valid() const {
  return std::isfinite(dx) && std::isfinite(dy) && std::isfinite(dz) && std::isfinite(dt) && dx > 0 &&
         dy > 0 && dz > 0 && dt >= 0;
}

std::size_t voxel_count(const Dims4& d) {
  std::size_t n = 1;
  for (int v : d) n *= static_cast<std::size_t>(std::max(v, 0));
  return n;
}

static void check_dims(const Dims4& dims) {
  for (int v : dims)
    if (v <= 0) throw Error(ErrorCode::BadDimensions, "dimensions must be positive");
}

Volume4D::Volume4D(Dims4 dims, VoxelSpacing spacing)
    : dims_(dims), spacing_(spacing), data_(voxel_count(dims), 0.0f) {
  check_dims(dims);
}

Volume4D::Volume4D(Dims4 dims, VoxelSpacing spacing, std::vector<float> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  check_dims(dims);
  if (data_.size() != voxel_count(dims)) throw Error(ErrorCode::ShapeMismatch, "data length != product of dims");
}

std::span<const float> Volume4D::frame(int t) const {
  const std::size_t n = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  return std::span<const float>(data_).subspan(n * t, n);
}

Volume4D Volume4D::extract_frame(int t) const {
  if (t < 0 || t >= dims_[3]) throw Error(ErrorCode::IndexOutOfRange, "frame index");
  auto f = frame(t);
  return Volume4D({dims_[0], dims_[1], dims_[2], 1}, spacing_, std::vector<float>(f.begin(), f.end()));
}

LabelVolume::LabelVolume(Dims4 dims, VoxelSpacing spacing)
    : dims_(dims), spacing_(spacing), labels_(voxel_count(dims), 0) {
  check_dims(dims);
}

LabelVolume::LabelVolume(Dims4 dims, VoxelSpacing spacing, std::vector<std::uint8_t> labels)
    : dims_(dims), spacing_(spacing), labels_(std::move(labels)) {
  check_dims(dims);
  if (labels_.size() != voxel_count(dims)) throw Error(ErrorCode::ShapeMismatch, "label length != product of dims");
  for (auto l : labels_)
    if (l >= kNumClasses) throw Error(ErrorCode::ValueOutOfRange, "label outside {0,1,2,3}");
}

LabelVolume LabelVolume::extract_frame(int t) const {
  if (t < 0 || t >= dims_[3]) throw Error(ErrorCode::IndexOutOfRange, "frame index");
  const std::size_t n = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  std::vector<std::uint8_t> out(labels_.begin() + n * t, labels_.begin() + n * (t + 1));
  return LabelVolume({dims_[0], dims_[1], dims_[2], 1}, spacing_, std::move(out));
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

Volume4D normalize_intensity(const Volume4D& v) {
  Volume4D out(v.dims(), v.spacing());
  auto src = v.data();
  if (src.empty()) return out;

  std::vector<double> values(src.begin(), src.end());
  const double lo = percentile(values, 1.0);
  const double hi = percentile(std::move(values), 99.0);

  const double n = static_cast<double>(src.size());
  double mean = 0.0;
  for (float s : src) mean += std::clamp(static_cast<double>(s), lo, hi);
  mean /= n;
  double var = 0.0;
  for (float s : src) {
    const double d = std::clamp(static_cast<double>(s), lo, hi) - mean;
    var += d * d;
  }
  var /= n;
  if (!(var > 0.0)) return out;

  const double inv_sd = 1.0 / std::sqrt(var);
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = static_cast<float>((std::clamp(static_cast<double>(src[i]), lo, hi) - mean) * inv_sd);
  return out;
}

}  // namespace cardiac
