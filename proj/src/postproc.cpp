#include "cardiac/postproc.hpp"

#include <numeric>

#include "cardiac/error.hpp"

namespace cardiac::post {

namespace {

struct DisjointSet {
  std::vector<std::int32_t> parent;

  std::int32_t make() {
    parent.push_back(static_cast<std::int32_t>(parent.size()));
    return parent.back();
  }
  std::int32_t find(std::int32_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b)
      parent[b] = a;
    else
      parent[a] = b;
  }
};

struct Offset {
  int dx, dy, dz;
};

// Neighbours already visited in scan order.
std::vector<Offset> backward_offsets(int connectivity) {
  std::vector<Offset> out;
  for (int dz = -1; dz <= 0; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (connectivity == 6 && manhattan > 1) continue;
        if (connectivity == 18 && manhattan > 2) continue;
        out.push_back({dx, dy, dz});
      }
  return out;
}

}  // namespace

ComponentLabeling connected_components_3d(std::span<const std::uint8_t> mask, const Dims3& dims, int connectivity) {
  if (connectivity != 6 && connectivity != 18 && connectivity != 26)
    throw Error(ErrorCode::InvalidArgument, "connectivity must be 6, 18 or 26");
  const int X = dims[0], Y = dims[1], Z = dims[2];
  if (X <= 0 || Y <= 0 || Z <= 0) throw Error(ErrorCode::BadDimensions, "mask dims must be positive");
  const std::size_t n = static_cast<std::size_t>(X) * Y * Z;
  if (mask.size() != n) throw Error(ErrorCode::ShapeMismatch, "mask size differs from dims");

  const auto offsets = backward_offsets(connectivity);
  std::vector<std::int32_t> provisional(n, -1);
  DisjointSet ds;

  for (int z = 0; z < Z; ++z)
    for (int y = 0; y < Y; ++y)
      for (int x = 0; x < X; ++x) {
        const std::size_t i = x + static_cast<std::size_t>(X) * (y + static_cast<std::size_t>(Y) * z);
        if (!mask[i]) continue;
        std::int32_t label = -1;
        for (const auto& o : offsets) {
          const int xx = x + o.dx, yy = y + o.dy, zz = z + o.dz;
          if (xx < 0 || yy < 0 || zz < 0 || xx >= X || yy >= Y) continue;
          const std::int32_t nb = provisional[xx + static_cast<std::size_t>(X) * (yy + static_cast<std::size_t>(Y) * zz)];
          if (nb < 0) continue;
          if (label < 0)
            label = nb;
          else
            ds.unite(label, nb);
        }
        provisional[i] = label < 0 ? ds.make() : label;
      }

  ComponentLabeling out;
  out.dims = dims;
  out.ids.assign(n, 0);
  std::vector<std::int32_t> dense(ds.parent.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (provisional[i] < 0) continue;
    const auto root = ds.find(provisional[i]);
    if (dense[root] == 0) {
      out.sizes.push_back(0);
      dense[root] = static_cast<std::int32_t>(out.sizes.size());
    }
    out.ids[i] = dense[root];
    ++out.sizes[dense[root] - 1];
  }
  return out;
}

LabelVolume lcca(const LabelVolume& labels, int connectivity) {
  LabelVolume out = labels.nt() == 1 ? labels : labels.extract_frame(0);
  const auto dims = out.dims3();
  std::vector<std::uint8_t> mask(out.size());
  for (std::uint8_t c : {kRV, kMyo, kLV}) {
    auto lab = out.labels();
    for (std::size_t i = 0; i < lab.size(); ++i) mask[i] = lab[i] == c;
    const auto cc = connected_components_3d(mask, dims, connectivity);
    if (cc.count() <= 1) continue;
    std::size_t keep = 0;
    for (std::size_t k = 1; k < cc.count(); ++k)
      if (cc.sizes[k] > cc.sizes[keep]) keep = k;
    const auto keep_id = static_cast<std::int32_t>(keep + 1);
    for (std::size_t i = 0; i < lab.size(); ++i)
      if (cc.ids[i] != 0 && cc.ids[i] != keep_id) lab[i] = kBackground;
  }
  return out;
}

namespace {

void check_crop(const LabelVolume& cropped, const roi::CropPlan& plan, int depth) {
  if (cropped.nx() != plan.patch() || cropped.ny() != plan.patch() || cropped.nz() != depth || cropped.nt() != 1)
    throw Error(ErrorCode::PlanMismatch, "cropped labels do not match the crop plan");
}

}  // namespace

LabelVolume restore_to_original(const LabelVolume& cropped, const roi::CropPlan& plan) {
  const auto& od = plan.original_dims;
  check_crop(cropped, plan, od[2]);
  LabelVolume out(od, cropped.spacing());
  for (int z = 0; z < od[2]; ++z)
    for (int y = 0; y < plan.patch(); ++y) {
      const int sy = plan.y0 + y;
      if (sy < 0 || sy >= od[1]) continue;
      for (int x = 0; x < plan.patch(); ++x) {
        const int sx = plan.x0 + x;
        if (sx < 0 || sx >= od[0]) continue;
        out.at(sx, sy, z) = cropped.at(x, y, z);
      }
    }
  return out;
}

LabelVolume restore_to_original(const LabelVolume& cropped, const roi::CropPlan& plan, std::size_t window_index) {
  if (window_index >= plan.depth_windows.size()) throw Error(ErrorCode::IndexOutOfRange, "depth window index");
  check_crop(cropped, plan, plan.target_depth);
  const auto& od = plan.original_dims;
  const auto& w = plan.depth_windows[window_index];
  LabelVolume out(od, cropped.spacing());
  for (int p = w.pad_before; p < plan.target_depth - w.pad_after; ++p) {
    const int z = w.z_offset + p - w.pad_before;
    for (int y = 0; y < plan.patch(); ++y) {
      const int sy = plan.y0 + y;
      if (sy < 0 || sy >= od[1]) continue;
      for (int x = 0; x < plan.patch(); ++x) {
        const int sx = plan.x0 + x;
        if (sx < 0 || sx >= od[0]) continue;
        out.at(sx, sy, z) = cropped.at(x, y, p);
      }
    }
  }
  return out;
}

LabelVolume stack_phases(const LabelVolume& ed, const LabelVolume& es) {
  if (ed.dims() != es.dims() || ed.nt() != 1 || !(ed.spacing() == es.spacing()))
    throw Error(ErrorCode::ShapeMismatch, "ED and ES label volumes differ in shape or spacing");
  std::vector<std::uint8_t> both(ed.labels().begin(), ed.labels().end());
  both.insert(both.end(), es.labels().begin(), es.labels().end());
  return LabelVolume(Dims4{ed.nx(), ed.ny(), ed.nz(), 2}, ed.spacing(), std::move(both));
}

}  // namespace cardiac::post
