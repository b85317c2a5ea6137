#include "cardiac/roi.hpp"

#include <algorithm>
#include <tuple>
#include <cmath>
#include <deque>

#include "cardiac/error.hpp"
#include "cardiac/kernels.hpp"

namespace cardiac::roi {

void RoiParams::validate() const {
  if (!(canny_sigma > 0)) throw Error(ErrorCode::InvalidArgument, "canny_sigma must be positive");
  if (!(0 < canny_low_frac && canny_low_frac < canny_high_frac && canny_high_frac <= 1))
    throw Error(ErrorCode::InvalidArgument, "need 0 < low < high <= 1");
  if (!(0 < r_min && r_min < r_max)) throw Error(ErrorCode::InvalidArgument, "need 0 < r_min < r_max");
  if (!(vote_sigma > 0)) throw Error(ErrorCode::InvalidArgument, "vote_sigma must be positive");
  if (patch <= 0 || target_depth <= 0) throw Error(ErrorCode::InvalidArgument, "patch and target_depth must be positive");
  if (!(0 < depth_stride && depth_stride <= target_depth))
    throw Error(ErrorCode::InvalidArgument, "need 0 < depth_stride <= target_depth");
}

ScalarMap ScalarMap::slice(int z) const {
  const std::size_t n = static_cast<std::size_t>(nx) * ny;
  ScalarMap s{nx, ny, 1, std::vector<double>(values.begin() + n * z, values.begin() + n * (z + 1))};
  return s;
}

std::size_t EdgeMap::count() const { return static_cast<std::size_t>(std::count(edges.begin(), edges.end(), 1)); }

ScalarMap temporal_std_map(const Volume4D& v) {
  if (v.nt() < 2) throw Error(ErrorCode::NeedsMultipleFrames, "temporal std needs T >= 2");
  ScalarMap m{v.nx(), v.ny(), v.nz(), {}};
  const std::size_t voxels = static_cast<std::size_t>(v.nx()) * v.ny() * v.nz();
  m.values.resize(voxels);
  kernels::temporal_std(v.data(), voxels, v.nt(), m.values);
  return m;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& w : k) w /= sum;
  return k;
}

std::vector<double> smooth(const ScalarMap& s, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int W = s.nx, H = s.ny;
  std::vector<double> tmp(s.values.size()), out(s.values.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * s.values[static_cast<std::size_t>(y) * W + std::clamp(x + i, 0, W - 1)];
      tmp[static_cast<std::size_t>(y) * W + x] = acc;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, H - 1)) * W + x];
      out[static_cast<std::size_t>(y) * W + x] = acc;
    }
  return out;
}

}  // namespace

EdgeMap canny_edges(const ScalarMap& slice, const RoiParams& p) {
  const int W = slice.nx, H = slice.ny;
  if (W < 3 || H < 3) throw Error(ErrorCode::InvalidArgument, "canny needs at least a 3x3 slice");
  EdgeMap out{W, H, std::vector<std::uint8_t>(static_cast<std::size_t>(W) * H, 0)};

  const auto g = smooth(slice, p.canny_sigma);
  auto px = [&](int x, int y) { return g[static_cast<std::size_t>(std::clamp(y, 0, H - 1)) * W + std::clamp(x, 0, W - 1)]; };

  std::vector<double> mag(g.size()), gx(g.size()), gy(g.size());
  double max_mag = 0.0, max_abs = 0.0;
  for (double v : slice.values) max_abs = std::max(max_abs, std::abs(v));
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double sx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
      const double sy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      gx[i] = sx;
      gy[i] = sy;
      mag[i] = std::hypot(sx, sy);
      max_mag = std::max(max_mag, mag[i]);
    }
  // Rounding residue of a constant slice is not an edge.
  if (max_mag <= 1e-9 * (1.0 + max_abs)) return out;

  // Non-maximum suppression along the gradient direction quantized to 0/45/90/135 degrees.
  std::vector<double> thin(g.size(), 0.0);
  for (int y = 1; y < H - 1; ++y)
    for (int x = 1; x < W - 1; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      if (mag[i] == 0.0) continue;
      double angle = std::atan2(gy[i], gx[i]) * 180.0 / 3.14159265358979323846;
      if (angle < 0) angle += 180.0;
      int dx, dy;
      if (angle < 22.5 || angle >= 157.5) {
        dx = 1, dy = 0;
      } else if (angle < 67.5) {
        dx = 1, dy = 1;
      } else if (angle < 112.5) {
        dx = 0, dy = 1;
      } else {
        dx = -1, dy = 1;
      }
      const double prev = mag[static_cast<std::size_t>(y - dy) * W + (x - dx)];
      const double next = mag[static_cast<std::size_t>(y + dy) * W + (x + dx)];
      if (mag[i] > prev && mag[i] >= next) thin[i] = mag[i];
    }

  const double high = p.canny_high_frac * max_mag;
  const double low = p.canny_low_frac * max_mag;
  std::deque<std::pair<int, int>> queue;
  for (int y = 1; y < H - 1; ++y)
    for (int x = 1; x < W - 1; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      if (thin[i] >= high) {
        out.edges[i] = 1;
        queue.emplace_back(x, y);
      }
    }
  while (!queue.empty()) {
    const auto [x, y] = queue.front();
    queue.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 1 || ny < 1 || nx >= W - 1 || ny >= H - 1) continue;
        const std::size_t j = static_cast<std::size_t>(ny) * W + nx;
        if (!out.edges[j] && thin[j] >= low) {
          out.edges[j] = 1;
          queue.emplace_back(nx, ny);
        }
      }
  }
  return out;
}

std::vector<CircleDetection> hough_circles(const EdgeMap& edges, const RoiParams& p) {
  if (!(p.r_min < p.r_max)) throw Error(ErrorCode::InvalidArgument, "need r_min < r_max");
  const int W = edges.nx, H = edges.ny;
  const auto circles = kernels::circle_offsets(p.r_min, p.r_max);
  const int R = static_cast<int>(circles.size());
  const std::size_t plane = static_cast<std::size_t>(W) * H;
  std::vector<double> acc(plane * R, 0.0);
  kernels::hough_accumulate(edges.edges, W, H, circles, acc);

  double global = 0.0;
  for (int ri = 0; ri < R; ++ri) {
    const double norm = 1.0 / static_cast<double>(circles[ri].offsets.size());
    for (std::size_t i = 0; i < plane; ++i) {
      acc[ri * plane + i] *= norm;
      global = std::max(global, acc[ri * plane + i]);
    }
  }
  if (global <= 0.0) throw Error(ErrorCode::NoCirclesFound, "empty accumulator");

  const double threshold = 0.5 * global;
  auto cell = [&](int ri, int y, int x) { return acc[ri * plane + static_cast<std::size_t>(y) * W + x]; };
  std::vector<CircleDetection> found;
  for (int ri = 0; ri < R; ++ri)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double v = cell(ri, y, x);
        if (v < threshold) continue;
        bool is_max = true;
        for (int dr = -1; dr <= 1 && is_max; ++dr)
          for (int dy = -1; dy <= 1 && is_max; ++dy)
            for (int dx = -1; dx <= 1 && is_max; ++dx) {
              if (!dr && !dy && !dx) continue;
              const int r2 = ri + dr, y2 = y + dy, x2 = x + dx;
              if (r2 < 0 || y2 < 0 || x2 < 0 || r2 >= R || y2 >= H || x2 >= W) continue;
              const double u = cell(r2, y2, x2);
              // Plateaus keep only their first cell in (r, y, x) scan order.
              const bool earlier = std::tie(r2, y2, x2) < std::tie(ri, y, x);
              if (u > v || (u == v && earlier)) is_max = false;
            }
        if (is_max) found.push_back({x, y, circles[ri].radius, v});
      }
  if (found.empty()) throw Error(ErrorCode::NoCirclesFound, "no local maximum above threshold");
  std::stable_sort(found.begin(), found.end(),
                   [](const CircleDetection& a, const CircleDetection& b) { return a.strength > b.strength; });
  return found;
}

ScalarMap vote_surface(int nx, int ny, const std::vector<CircleDetection>& detections, double sigma) {
  ScalarMap s{nx, ny, 1, std::vector<double>(static_cast<std::size_t>(nx) * ny, 0.0)};
  const int reach = static_cast<int>(std::ceil(4.0 * sigma));
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (const auto& d : detections) {
    for (int y = std::max(0, d.cy - reach); y <= std::min(ny - 1, d.cy + reach); ++y)
      for (int x = std::max(0, d.cx - reach); x <= std::min(nx - 1, d.cx + reach); ++x) {
        const double r2 = static_cast<double>((x - d.cx) * (x - d.cx) + (y - d.cy) * (y - d.cy));
        s.values[static_cast<std::size_t>(y) * nx + x] += d.strength * std::exp(-r2 * inv);
      }
  }
  return s;
}

CenterEstimate locate_lv_center(const Volume4D& v, const RoiParams& p) {
  p.validate();
  const ScalarMap std_map = temporal_std_map(v);

  std::vector<std::vector<CircleDetection>> per_slice(v.nz());
#pragma omp parallel for schedule(dynamic)
  for (int z = 0; z < v.nz(); ++z) {
    const EdgeMap edges = canny_edges(std_map.slice(z), p);
    if (edges.count() == 0) continue;
    try {
      per_slice[z] = hough_circles(edges, p);
    } catch (const Error&) {
      // slice contributes no votes
    }
  }

  std::vector<CircleDetection> all;
  for (auto& d : per_slice) all.insert(all.end(), d.begin(), d.end());
  if (all.empty()) throw Error(ErrorCode::NoCirclesFound, "no circular structure in any slice");

  CenterEstimate est;
  est.likelihood = vote_surface(v.nx(), v.ny(), all, p.vote_sigma);
  est.detections = all.size();
  double best = -1.0;
  for (int y = 0; y < v.ny(); ++y)
    for (int x = 0; x < v.nx(); ++x) {
      const double s = est.likelihood.values[static_cast<std::size_t>(y) * v.nx() + x];
      if (s > best) {
        best = s;
        est.cx = x;
        est.cy = y;
      }
    }
  return est;
}

RoiParams RoiParams::for_spacing(double dx) const {
  if (!(dx > 0)) throw Error(ErrorCode::NonPositiveSpacing, "in-plane spacing must be positive");
  const double s = kReferenceSpacingMm / dx;
  RoiParams out = *this;
  out.canny_sigma = canny_sigma * s;
  out.r_min = std::max(2, static_cast<int>(std::lround(r_min * s)));
  out.r_max = std::max(out.r_min + 1, static_cast<int>(std::floor(r_max * s)));
  out.vote_sigma = vote_sigma * s;
  return out;
}

int mirror_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

int CropPlan::source_slice(const DepthWindow& w, int p) const {
  return mirror_index(w.z_offset + p - w.pad_before, original_dims[2]);
}

CropPlan plan_crops(const Dims3& original_dims, int cx, int cy, const RoiParams& p) {
  p.validate();
  CropPlan plan;
  plan.cx = cx;
  plan.cy = cy;
  plan.x0 = cx - p.patch / 2;
  plan.x1 = plan.x0 + p.patch;
  plan.y0 = cy - p.patch / 2;
  plan.y1 = plan.y0 + p.patch;
  plan.target_depth = p.target_depth;
  plan.original_dims = original_dims;

  const int Z = original_dims[2];
  if (Z <= p.target_depth) {
    const int pad = p.target_depth - Z;
    plan.depth_windows.push_back({0, pad / 2, pad - pad / 2});
  } else {
    const int last = Z - p.target_depth;
    for (int z = 0; z < last; z += p.depth_stride) plan.depth_windows.push_back({z, 0, 0});
    plan.depth_windows.push_back({last, 0, 0});
  }
  return plan;
}

namespace {

template <typename Out, typename In, typename Get>
void crop_into(Out& out, const In& v, const CropPlan& plan, const DepthWindow& w, Get get) {
  for (int t = 0; t < v.nt(); ++t)
    for (int p = 0; p < plan.target_depth; ++p) {
      const int z = plan.source_slice(w, p);
      for (int y = 0; y < plan.patch(); ++y) {
        const int sy = plan.y0 + y;
        if (sy < 0 || sy >= v.ny()) continue;
        for (int x = 0; x < plan.patch(); ++x) {
          const int sx = plan.x0 + x;
          if (sx < 0 || sx >= v.nx()) continue;
          out.at(x, y, p, t) = get(sx, sy, z, t);
        }
      }
    }
}

void check_plan(const Dims4& dims, const CropPlan& plan, std::size_t window_index) {
  if (window_index >= plan.depth_windows.size()) throw Error(ErrorCode::IndexOutOfRange, "depth window index");
  if (dims[0] != plan.original_dims[0] || dims[1] != plan.original_dims[1] || dims[2] != plan.original_dims[2])
    throw Error(ErrorCode::PlanMismatch, "volume dims differ from the plan's original dims");
}

}  // namespace

Volume4D apply_crop(const Volume4D& v, const CropPlan& plan, std::size_t window_index) {
  check_plan(v.dims(), plan, window_index);
  Volume4D out({plan.patch(), plan.patch(), plan.target_depth, v.nt()}, v.spacing());
  crop_into(out, v, plan, plan.depth_windows[window_index], [&](int x, int y, int z, int t) { return v.at(x, y, z, t); });
  return out;
}

LabelVolume apply_crop(const LabelVolume& v, const CropPlan& plan, std::size_t window_index) {
  check_plan(v.dims(), plan, window_index);
  LabelVolume out(Dims4{plan.patch(), plan.patch(), plan.target_depth, v.nt()}, v.spacing());
  crop_into(out, v, plan, plan.depth_windows[window_index], [&](int x, int y, int z, int t) { return v.at(x, y, z, t); });
  return out;
}

}  // namespace cardiac::roi
