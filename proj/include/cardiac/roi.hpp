#pragma once

// LV localization from temporal dynamics and fixed-size, depth-aware crop planning.

#include <cstdint>
#include <vector>

#include "cardiac/volume.hpp"

namespace cardiac::roi {

struct RoiParams {
  double canny_sigma = 1.4;
  double canny_low_frac = 0.1;
  double canny_high_frac = 0.2;
  int r_min = 8;
  int r_max = 45;
  double vote_sigma = 3.0;
  int patch = 128;
  int target_depth = 16;
  int depth_stride = 8;

  void validate() const;

  /// Pixel-valued defaults are tuned for 1.5625 mm in-plane spacing; this rescales the
  /// smoothing, radius range and vote width to another pixel size. Crop fields are kept.
  RoiParams for_spacing(double dx) const;
};

inline constexpr double kReferenceSpacingMm = 1.5625;

/// Dense 2D or 3D scalar map, x fastest.
struct ScalarMap {
  int nx = 0, ny = 0, nz = 1;
  std::vector<double> values;

  double at(int x, int y, int z = 0) const {
    return values[static_cast<std::size_t>(x) + static_cast<std::size_t>(nx) * (y + static_cast<std::size_t>(ny) * z)];
  }
  ScalarMap slice(int z) const;
};

struct EdgeMap {
  int nx = 0, ny = 0;
  std::vector<std::uint8_t> edges;

  bool at(int x, int y) const { return edges[static_cast<std::size_t>(y) * nx + x] != 0; }
  std::size_t count() const;
};

struct CircleDetection {
  int cx = 0, cy = 0;
  int r = 0;
  double strength = 0.0;
};

struct DepthWindow {
  int z_offset = 0;
  int pad_before = 0;
  int pad_after = 0;
};

struct CropPlan {
  int cx = 0, cy = 0;
  int x0 = 0, x1 = 0;  // half-open in-plane window, may extend past the image
  int y0 = 0, y1 = 0;
  int target_depth = 0;
  std::vector<DepthWindow> depth_windows;
  Dims3 original_dims{};

  int patch() const { return x1 - x0; }
  /// Source slice for padded depth position p of window w (mirror reflection).
  int source_slice(const DepthWindow& w, int p) const;
};

struct CenterEstimate {
  int cx = 0, cy = 0;
  ScalarMap likelihood;
  std::size_t detections = 0;
};

ScalarMap temporal_std_map(const Volume4D& v);

EdgeMap canny_edges(const ScalarMap& slice, const RoiParams& p);

/// Local maxima of the (cx, cy, r) accumulator scoring at least half the global maximum,
/// strongest first. Strength is the fraction of the circle's perimeter covered by edges.
std::vector<CircleDetection> hough_circles(const EdgeMap& edges, const RoiParams& p);

/// Deposits one strength-weighted Gaussian per detection onto an X x Y surface.
ScalarMap vote_surface(int nx, int ny, const std::vector<CircleDetection>& detections, double sigma);

CenterEstimate locate_lv_center(const Volume4D& v, const RoiParams& p);

CropPlan plan_crops(const Dims3& original_dims, int cx, int cy, const RoiParams& p);

/// Output dims (patch, patch, target_depth, T).
Volume4D apply_crop(const Volume4D& v, const CropPlan& plan, std::size_t window_index);
LabelVolume apply_crop(const LabelVolume& v, const CropPlan& plan, std::size_t window_index);

/// Symmetric reflection of an index into [0, n).
int mirror_index(int i, int n);

}  // namespace cardiac::roi
