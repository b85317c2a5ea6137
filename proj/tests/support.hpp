#pragma once

// Independent reference implementations shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "cardiac/autograd.hpp"
#include "cardiac/features.hpp"
#include "cardiac/postproc.hpp"
#include "cardiac/volume.hpp"

namespace oracle {

using namespace cardiac;

/// Breadth-first flood fill started from every unvisited voxel in scan order.
inline post::ComponentLabeling flood_fill_components(std::span<const std::uint8_t> mask, const Dims3& d,
                                                     int connectivity) {
  post::ComponentLabeling out;
  out.dims = d;
  out.ids.assign(mask.size(), 0);
  std::vector<std::array<int, 3>> nbrs;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        if (connectivity == 6 && manhattan > 1) continue;
        if (connectivity == 18 && manhattan > 2) continue;
        nbrs.push_back({dx, dy, dz});
      }
  auto idx = [&](int x, int y, int z) { return static_cast<std::size_t>(x) + d[0] * (y + static_cast<std::size_t>(d[1]) * z); };
  std::vector<std::array<int, 3>> queue;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x) {
        if (!mask[idx(x, y, z)] || out.ids[idx(x, y, z)]) continue;
        const int id = static_cast<int>(out.sizes.size()) + 1;
        std::size_t size = 0;
        queue.assign(1, {x, y, z});
        out.ids[idx(x, y, z)] = id;
        while (!queue.empty()) {
          const auto p = queue.back();
          queue.pop_back();
          ++size;
          for (const auto& n : nbrs) {
            const int qx = p[0] + n[0], qy = p[1] + n[1], qz = p[2] + n[2];
            if (qx < 0 || qy < 0 || qz < 0 || qx >= d[0] || qy >= d[1] || qz >= d[2]) continue;
            const auto q = idx(qx, qy, qz);
            if (!mask[q] || out.ids[q]) continue;
            out.ids[q] = id;
            queue.push_back({qx, qy, qz});
          }
        }
        out.sizes.push_back(size);
      }
  return out;
}

inline std::vector<std::uint8_t> random_mask(std::mt19937_64& rng, std::size_t n, double density) {
  std::bernoulli_distribution on(density);
  std::vector<std::uint8_t> m(n);
  for (auto& v : m) v = on(rng);
  return m;
}

/// Random (ED, ES) label volume: noisy concentric LV/Myo disks beside an RV blob.
inline LabelVolume random_heart_labels(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(14, 22), depth(2, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0), sp(0.8, 2.0);
  const int nx = size(rng), ny = size(rng), nz = depth(rng);
  const VoxelSpacing s{sp(rng), sp(rng), 2.0 + 8.0 * u(rng), 0.0};
  LabelVolume v(Dims4{nx, ny, nz, 2}, s);
  const double noise = 0.15 * u(rng);
  for (int t = 0; t < 2; ++t) {
    const double cx = nx * (0.4 + 0.2 * u(rng)), cy = ny * (0.4 + 0.2 * u(rng));
    const double r_lv = 2.0 + 3.0 * u(rng), r_epi = r_lv + 1.0 + 3.0 * u(rng);
    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
          const double r = std::hypot(x - cx, y - cy);
          std::uint8_t l = r < r_lv ? kLV : r < r_epi ? kMyo : std::hypot(x - cx + r_epi + 2, y - cy) < 3 ? kRV : kBackground;
          if (u(rng) < noise) l = static_cast<std::uint8_t>(std::uniform_int_distribution<int>(0, 3)(rng));
          v.at(x, y, z, t) = l;
        }
  }
  return v;
}

struct Welford {
  long n = 0;
  double mean = 0.0, m2 = 0.0;
  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  double std() const { return n ? std::sqrt(m2 / n) : 0.0; }
};

/// Every feature recomputed in one sweep per frame: class counts plus wall-edge midpoints per slice.
inline features::FeatureVector single_pass_features(const LabelVolume& v, int min_myo_pixels = 8) {
  features::FeatureVector f{};
  const double mm3 = v.spacing().voxel_mm3();
  const double dx = v.spacing().dx, dy = v.spacing().dy;
  for (int t = 0; t < 2; ++t) {
    std::array<long, 4> counts{};
    std::vector<double> means, stds;
    for (int z = 0; z < v.nz(); ++z) {
      std::vector<std::pair<double, double>> inner, outer;
      long myo = 0;
      for (int y = 0; y < v.ny(); ++y)
        for (int x = 0; x < v.nx(); ++x) {
          const auto l = v.at(x, y, z, t);
          ++counts[l];
          if (l != kMyo) continue;
          ++myo;
          const int ddx[4] = {-1, 1, 0, 0}, ddy[4] = {0, 0, -1, 1};
          for (int k = 0; k < 4; ++k) {
            const int qx = x + ddx[k], qy = y + ddy[k];
            const bool inside = qx >= 0 && qy >= 0 && qx < v.nx() && qy < v.ny();
            const std::uint8_t q = inside ? v.at(qx, qy, z, t) : static_cast<std::uint8_t>(kBackground);
            const std::pair<double, double> mid{(x + 0.5 * ddx[k]) * dx, (y + 0.5 * ddy[k]) * dy};
            if (q == kLV) inner.push_back(mid);
            else if (q != kMyo) outer.push_back(mid);
          }
        }
      if (myo < min_myo_pixels || inner.empty() || outer.empty()) continue;
      Welford w;
      for (const auto& a : inner) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : outer) best = std::min(best, std::hypot(a.first - b.first, a.second - b.second));
        w.add(best);
      }
      means.push_back(w.mean);
      stds.push_back(w.std());
    }
    f[features::kRvVolEd + t] = counts[kRV] * mm3 / 1000.0;
    f[features::kMyoVolEd + t] = counts[kMyo] * mm3 / 1000.0;
    f[features::kLvVolEd + t] = counts[kLV] * mm3 / 1000.0;
    auto mean_std = [](const std::vector<double>& a) {
      Welford w;
      for (double x : a) w.add(x);
      return std::pair{w.mean, w.std()};
    };
    if (!means.empty()) {
      f[features::kMwtMaxMeanEd + t] = *std::max_element(means.begin(), means.end());
      f[features::kMwtStdMeanEd + t] = mean_std(means).second;
      f[features::kMwtMeanStdEd + t] = mean_std(stds).first;
      f[features::kMwtStdStdEd + t] = mean_std(stds).second;
    }
  }
  auto ratio = [](double a, double b) { return b == 0.0 ? 0.0 : a / b; };
  f[features::kLvEf] = f[features::kLvVolEd] == 0 ? 0.0 : 100.0 * (f[features::kLvVolEd] - f[features::kLvVolEs]) / f[features::kLvVolEd];
  f[features::kRvEf] = f[features::kRvVolEd] == 0 ? 0.0 : 100.0 * (f[features::kRvVolEd] - f[features::kRvVolEs]) / f[features::kRvVolEd];
  f[features::kLvRvRatioEd] = ratio(f[features::kLvVolEd], f[features::kRvVolEd]);
  f[features::kLvRvRatioEs] = ratio(f[features::kLvVolEs], f[features::kRvVolEs]);
  f[features::kMyoLvRatioEd] = ratio(f[features::kMyoVolEd], f[features::kLvVolEd]);
  f[features::kMyoLvRatioEs] = ratio(f[features::kMyoVolEs], f[features::kLvVolEs]);
  return f;
}

/// LV disk of radius r_in inside a Myo annulus out to r_out (pixels), repeated on every slice.
inline LabelVolume annulus(int n, double r_in, double r_out, double spacing, int nz = 3) {
  LabelVolume v(Dims4{n, n, nz, 2}, VoxelSpacing{spacing, spacing, 8.0, 0.0});
  const double c = (n - 1) / 2.0;
  for (int t = 0; t < 2; ++t)
    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const double r = std::hypot(x - c, y - c);
          v.at(x, y, z, t) = r < r_in ? kLV : r < r_out ? kMyo : kBackground;
        }
  return v;
}

// ---------------------------------------------------------------- finite differences

struct GradCheck {
  double max_rel = 0.0;
  double max_abs = 0.0;
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::size_t kink_retries = 0;
};

/// Central differences (h = 1e-4) against the analytic gradient of every entry of every parameter.
/// An entry passes when |a - n| <= tol * max(|a|, |n|) or both are below abs_floor. An entry that
/// fails is re-measured once with h / 10, since a step of h can straddle a ReLU or max-pool kink.
inline GradCheck check_gradients(const std::vector<seg::Parameter*>& params, const std::function<double()>& loss,
                                 const std::function<void()>& analytic, double tol = 1e-4, double abs_floor = 1e-7,
                                 double h = 1e-4) {
  for (auto* p : params) p->zero_grad();
  analytic();
  GradCheck r;
  for (auto* p : params)
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      auto central = [&](double step) {
        p->value[i] = saved + step;
        const double up = loss();
        p->value[i] = saved - step;
        const double down = loss();
        p->value[i] = saved;
        return (up - down) / (2 * step);
      };
      const double a = p->grad[i];
      double diff = 0.0;
      auto rel_error = [&](double numeric) {
        diff = std::abs(a - numeric);
        return diff <= abs_floor ? 0.0 : diff / std::max(std::abs(a), std::abs(numeric));
      };
      ++r.checked;
      double rel = rel_error(central(h));
      if (rel > tol) {
        ++r.kink_retries;
        rel = rel_error(central(h / 10));
      }
      r.max_abs = std::max(r.max_abs, diff);
      r.max_rel = std::max(r.max_rel, rel);
      if (rel > tol) ++r.failures;
    }
  return r;
}

/// Scalar <R, x> readout node so any tensor-valued op can be checked through backward().
inline seg::Tape::Id weighted_sum(seg::Tape& t, seg::Tape::Id x, const seg::Tensor& r) {
  double s = 0.0;
  const auto& v = t.value(x);
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * r[i];
  return t.push(seg::Tensor({1, 1, 1, 1, 1}, s), {x}, [x, r](seg::Tape& tp, seg::Tape::Id self) {
    const double up = tp.grad(self)[0];
    auto& g = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * r[i];
  });
}

inline seg::Tensor random_tensor(seg::Tensor::Dims d, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  seg::Tensor t(d);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

}  // namespace oracle
