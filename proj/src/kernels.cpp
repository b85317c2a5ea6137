#include "cardiac/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace cardiac::kernels {

namespace {

struct Range {
  int lo, hi;  // output indices whose input index o + d lies in [0, n)
};

Range valid_range(int n, int d) { return {std::max(0, -d), std::min(n, n - d)}; }

}  // namespace

void conv3d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
  const int K = s.kernel, pad = K / 2, K3 = K * K * K;
  const int X = s.nx, Y = s.ny, Z = s.nz;
  const std::size_t S = s.spatial();
  const int N = s.batch, Ci = s.in_channels, Co = s.out_channels;

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Co; ++co) {
      double* o = out.data() + (static_cast<std::size_t>(n) * Co + co) * S;
      std::fill(o, o + S, bias.empty() ? 0.0 : bias[co]);
      for (int ci = 0; ci < Ci; ++ci) {
        const double* x = in.data() + (static_cast<std::size_t>(n) * Ci + ci) * S;
        const double* wk = weight.data() + (static_cast<std::size_t>(co) * Ci + ci) * K3;
        for (int kz = 0; kz < K; ++kz) {
          const int dz = kz - pad;
          const Range rz = valid_range(Z, dz);
          for (int ky = 0; ky < K; ++ky) {
            const int dy = ky - pad;
            const Range ry = valid_range(Y, dy);
            for (int kx = 0; kx < K; ++kx) {
              const int dx = kx - pad;
              const Range rx = valid_range(X, dx);
              const double w = wk[(kz * K + ky) * K + kx];
              for (int z = rz.lo; z < rz.hi; ++z) {
                for (int y = ry.lo; y < ry.hi; ++y) {
                  double* orow = o + (static_cast<std::size_t>(z) * Y + y) * X;
                  const double* xrow = x + (static_cast<std::size_t>(z + dz) * Y + (y + dy)) * X + dx;
#pragma omp simd
                  for (int i = rx.lo; i < rx.hi; ++i) orow[i] += w * xrow[i];
                }
              }
            }
          }
        }
      }
    }
  }
}

void conv3d_backward_input(const ConvShape& s, std::span<const double> grad_out, std::span<const double> weight,
                           std::span<double> grad_in) {
  const int K = s.kernel, pad = K / 2, K3 = K * K * K;
  const int X = s.nx, Y = s.ny, Z = s.nz;
  const std::size_t S = s.spatial();
  const int N = s.batch, Ci = s.in_channels, Co = s.out_channels;

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int ci = 0; ci < Ci; ++ci) {
      double* gi = grad_in.data() + (static_cast<std::size_t>(n) * Ci + ci) * S;
      for (int co = 0; co < Co; ++co) {
        const double* go = grad_out.data() + (static_cast<std::size_t>(n) * Co + co) * S;
        const double* wk = weight.data() + (static_cast<std::size_t>(co) * Ci + ci) * K3;
        for (int kz = 0; kz < K; ++kz) {
          const int dz = kz - pad;
          const Range rz = valid_range(Z, dz);
          for (int ky = 0; ky < K; ++ky) {
            const int dy = ky - pad;
            const Range ry = valid_range(Y, dy);
            for (int kx = 0; kx < K; ++kx) {
              const int dx = kx - pad;
              const Range rx = valid_range(X, dx);
              const double w = wk[(kz * K + ky) * K + kx];
              // out voxel o reads input o + d, so input gradient at o + d gains w * grad_out[o].
              for (int z = rz.lo; z < rz.hi; ++z) {
                for (int y = ry.lo; y < ry.hi; ++y) {
                  const double* grow = go + (static_cast<std::size_t>(z) * Y + y) * X;
                  double* irow = gi + (static_cast<std::size_t>(z + dz) * Y + (y + dy)) * X + dx;
#pragma omp simd
                  for (int i = rx.lo; i < rx.hi; ++i) irow[i] += w * grow[i];
                }
              }
            }
          }
        }
      }
    }
  }
}

void conv3d_backward_weight(const ConvShape& s, std::span<const double> grad_out, std::span<const double> in,
                            std::span<double> grad_w, std::span<double> grad_b) {
  const int K = s.kernel, pad = K / 2, K3 = K * K * K;
  const int X = s.nx, Y = s.ny, Z = s.nz;
  const std::size_t S = s.spatial();
  const int N = s.batch, Ci = s.in_channels, Co = s.out_channels;

#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < Co; ++co) {
    for (int ci = 0; ci < Ci; ++ci) {
      double* gw = grad_w.data() + (static_cast<std::size_t>(co) * Ci + ci) * K3;
      for (int kz = 0; kz < K; ++kz) {
        const int dz = kz - pad;
        const Range rz = valid_range(Z, dz);
        for (int ky = 0; ky < K; ++ky) {
          const int dy = ky - pad;
          const Range ry = valid_range(Y, dy);
          for (int kx = 0; kx < K; ++kx) {
            const int dx = kx - pad;
            const Range rx = valid_range(X, dx);
            double acc = 0.0;
            for (int n = 0; n < N; ++n) {
              const double* go = grad_out.data() + (static_cast<std::size_t>(n) * Co + co) * S;
              const double* x = in.data() + (static_cast<std::size_t>(n) * Ci + ci) * S;
              for (int z = rz.lo; z < rz.hi; ++z) {
                for (int y = ry.lo; y < ry.hi; ++y) {
                  const double* grow = go + (static_cast<std::size_t>(z) * Y + y) * X;
                  const double* xrow = x + (static_cast<std::size_t>(z + dz) * Y + (y + dy)) * X + dx;
                  double row = 0.0;
#pragma omp simd reduction(+ : row)
                  for (int i = rx.lo; i < rx.hi; ++i) row += grow[i] * xrow[i];
                  acc += row;
                }
              }
            }
            gw[(kz * K + ky) * K + kx] += acc;
          }
        }
      }
    }
  }

  if (grad_b.empty()) return;
#pragma omp parallel for schedule(static)
  for (int co = 0; co < Co; ++co) {
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* go = grad_out.data() + (static_cast<std::size_t>(n) * Co + co) * S;
      for (std::size_t i = 0; i < S; ++i) acc += go[i];
    }
    grad_b[co] += acc;
  }
}

void temporal_std(std::span<const float> data, std::size_t voxels, int frames, std::span<double> out) {
  const auto V = static_cast<std::ptrdiff_t>(voxels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t v = 0; v < V; ++v) {
    double mean = 0.0;
    for (int t = 0; t < frames; ++t) mean += data[v + t * voxels];
    mean /= frames;
    double var = 0.0;
    for (int t = 0; t < frames; ++t) {
      const double d = data[v + t * voxels] - mean;
      var += d * d;
    }
    out[v] = std::sqrt(var / frames);
  }
}

std::vector<CircleOffsets> circle_offsets(int r_min, int r_max) {
  std::vector<CircleOffsets> result;
  for (int r = r_min; r <= r_max; ++r) {
    std::set<std::pair<int, int>> pts;
    const int steps = std::max(8, static_cast<int>(std::ceil(2.0 * std::numbers::pi * r * 4)));
    for (int i = 0; i < steps; ++i) {
      const double a = 2.0 * std::numbers::pi * i / steps;
      pts.emplace(static_cast<int>(std::lround(r * std::cos(a))), static_cast<int>(std::lround(r * std::sin(a))));
    }
    result.push_back({r, {pts.begin(), pts.end()}});
  }
  return result;
}

void hough_accumulate(std::span<const std::uint8_t> edges, int nx, int ny, const std::vector<CircleOffsets>& circles,
                      std::span<double> accumulator) {
  std::vector<std::pair<int, int>> pts;
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x)
      if (edges[static_cast<std::size_t>(y) * nx + x]) pts.emplace_back(x, y);

  const std::size_t plane = static_cast<std::size_t>(nx) * ny;
  const int R = static_cast<int>(circles.size());
#pragma omp parallel for schedule(dynamic)
  for (int ri = 0; ri < R; ++ri) {
    double* acc = accumulator.data() + ri * plane;
    for (const auto& [ex, ey] : pts) {
      for (const auto& [dx, dy] : circles[ri].offsets) {
        const int cx = ex + dx, cy = ey + dy;
        if (cx < 0 || cy < 0 || cx >= nx || cy >= ny) continue;
        acc[static_cast<std::size_t>(cy) * nx + cx] += 1.0;
      }
    }
  }
}

namespace serial {

void conv3d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
  const int K = s.kernel, pad = K / 2;
  const std::size_t S = s.spatial();
  for (int n = 0; n < s.batch; ++n)
    for (int co = 0; co < s.out_channels; ++co)
      for (int z = 0; z < s.nz; ++z)
        for (int y = 0; y < s.ny; ++y)
          for (int x = 0; x < s.nx; ++x) {
            double acc = bias.empty() ? 0.0 : bias[co];
            for (int ci = 0; ci < s.in_channels; ++ci)
              for (int kz = 0; kz < K; ++kz)
                for (int ky = 0; ky < K; ++ky)
                  for (int kx = 0; kx < K; ++kx) {
                    const int zz = z + kz - pad, yy = y + ky - pad, xx = x + kx - pad;
                    if (zz < 0 || yy < 0 || xx < 0 || zz >= s.nz || yy >= s.ny || xx >= s.nx) continue;
                    acc += weight[(((static_cast<std::size_t>(co) * s.in_channels + ci) * K + kz) * K + ky) * K + kx] *
                           in[(static_cast<std::size_t>(n) * s.in_channels + ci) * S +
                              (static_cast<std::size_t>(zz) * s.ny + yy) * s.nx + xx];
                  }
            out[(static_cast<std::size_t>(n) * s.out_channels + co) * S + (static_cast<std::size_t>(z) * s.ny + y) * s.nx +
                x] = acc;
          }
}

void conv3d_backward_input(const ConvShape& s, std::span<const double> grad_out, std::span<const double> weight,
                           std::span<double> grad_in) {
  const int K = s.kernel, pad = K / 2;
  const std::size_t S = s.spatial();
  for (int n = 0; n < s.batch; ++n)
    for (int co = 0; co < s.out_channels; ++co)
      for (int z = 0; z < s.nz; ++z)
        for (int y = 0; y < s.ny; ++y)
          for (int x = 0; x < s.nx; ++x) {
            const double g = grad_out[(static_cast<std::size_t>(n) * s.out_channels + co) * S +
                                      (static_cast<std::size_t>(z) * s.ny + y) * s.nx + x];
            for (int ci = 0; ci < s.in_channels; ++ci)
              for (int kz = 0; kz < K; ++kz)
                for (int ky = 0; ky < K; ++ky)
                  for (int kx = 0; kx < K; ++kx) {
                    const int zz = z + kz - pad, yy = y + ky - pad, xx = x + kx - pad;
                    if (zz < 0 || yy < 0 || xx < 0 || zz >= s.nz || yy >= s.ny || xx >= s.nx) continue;
                    grad_in[(static_cast<std::size_t>(n) * s.in_channels + ci) * S +
                            (static_cast<std::size_t>(zz) * s.ny + yy) * s.nx + xx] +=
                        g * weight[(((static_cast<std::size_t>(co) * s.in_channels + ci) * K + kz) * K + ky) * K + kx];
                  }
          }
}

void conv3d_backward_weight(const ConvShape& s, std::span<const double> grad_out, std::span<const double> in,
                            std::span<double> grad_w, std::span<double> grad_b) {
  const int K = s.kernel, pad = K / 2;
  const std::size_t S = s.spatial();
  for (int n = 0; n < s.batch; ++n)
    for (int co = 0; co < s.out_channels; ++co)
      for (int z = 0; z < s.nz; ++z)
        for (int y = 0; y < s.ny; ++y)
          for (int x = 0; x < s.nx; ++x) {
            const double g = grad_out[(static_cast<std::size_t>(n) * s.out_channels + co) * S +
                                      (static_cast<std::size_t>(z) * s.ny + y) * s.nx + x];
            if (!grad_b.empty()) grad_b[co] += g;
            for (int ci = 0; ci < s.in_channels; ++ci)
              for (int kz = 0; kz < K; ++kz)
                for (int ky = 0; ky < K; ++ky)
                  for (int kx = 0; kx < K; ++kx) {
                    const int zz = z + kz - pad, yy = y + ky - pad, xx = x + kx - pad;
                    if (zz < 0 || yy < 0 || xx < 0 || zz >= s.nz || yy >= s.ny || xx >= s.nx) continue;
                    grad_w[(((static_cast<std::size_t>(co) * s.in_channels + ci) * K + kz) * K + ky) * K + kx] +=
                        g * in[(static_cast<std::size_t>(n) * s.in_channels + ci) * S +
                               (static_cast<std::size_t>(zz) * s.ny + yy) * s.nx + xx];
                  }
          }
}

void temporal_std(std::span<const float> data, std::size_t voxels, int frames, std::span<double> out) {
  for (std::size_t v = 0; v < voxels; ++v) {
    double sum = 0.0;
    for (int t = 0; t < frames; ++t) sum += data[v + t * voxels];
    const double mean = sum / frames;
    double ss = 0.0;
    for (int t = 0; t < frames; ++t) ss += (data[v + t * voxels] - mean) * (data[v + t * voxels] - mean);
    out[v] = std::sqrt(ss / frames);
  }
}

void hough_accumulate(std::span<const std::uint8_t> edges, int nx, int ny, const std::vector<CircleOffsets>& circles,
                      std::span<double> accumulator) {
  const std::size_t plane = static_cast<std::size_t>(nx) * ny;
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) {
      if (!edges[static_cast<std::size_t>(y) * nx + x]) continue;
      for (std::size_t ri = 0; ri < circles.size(); ++ri)
        for (const auto& [dx, dy] : circles[ri].offsets) {
          const int cx = x + dx, cy = y + dy;
          if (cx < 0 || cy < 0 || cx >= nx || cy >= ny) continue;
          accumulator[ri * plane + static_cast<std::size_t>(cy) * nx + cx] += 1.0;
        }
    }
}

}  // namespace serial

}  // namespace cardiac::kernels
