#pragma once

// Data-parallel inner loops. Each kernel has an OpenMP implementation in
// `cardiac::kernels` and a straightforward serial reference in
// `cardiac::kernels::serial`, kept for testing and benchmarking.
//
// Tensor layout for the convolution kernels: [n][c][z][y][x], x fastest.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace cardiac::kernels {

struct ConvShape {
  int batch = 1;
  int in_channels = 1;
  int out_channels = 1;
  int nx = 1, ny = 1, nz = 1;
  int kernel = 3;  // cubic kernel edge, odd; "same" zero padding

  std::size_t spatial() const { return static_cast<std::size_t>(nx) * ny * nz; }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel * kernel;
  }
};

/// out[n][co] = bias[co] + sum_ci w[co][ci] (*) in[n][ci]
void conv3d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);

/// grad_in[n][ci] += sum_co w[co][ci] (*)^T grad_out[n][co]
void conv3d_backward_input(const ConvShape& s, std::span<const double> grad_out, std::span<const double> weight,
                           std::span<double> grad_in);

/// grad_w[co][ci] += sum_n grad_out[n][co] x in[n][ci]; grad_b[co] += sum grad_out[n][co]
void conv3d_backward_weight(const ConvShape& s, std::span<const double> grad_out, std::span<const double> in,
                            std::span<double> grad_w, std::span<double> grad_b);

/// Population standard deviation over `frames` consecutive blocks of `voxels` values.
void temporal_std(std::span<const float> data, std::size_t voxels, int frames, std::span<double> out);

struct CircleOffsets {
  int radius = 0;
  std::vector<std::pair<int, int>> offsets;  // unique integer (dx, dy) on the circle
};

std::vector<CircleOffsets> circle_offsets(int r_min, int r_max);

/// Accumulator layout [r - r_min][y][x]. Each edge pixel votes once per offset.
void hough_accumulate(std::span<const std::uint8_t> edges, int nx, int ny, const std::vector<CircleOffsets>& circles,
                      std::span<double> accumulator);

namespace serial {

void conv3d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);
void conv3d_backward_input(const ConvShape& s, std::span<const double> grad_out, std::span<const double> weight,
                           std::span<double> grad_in);
void conv3d_backward_weight(const ConvShape& s, std::span<const double> grad_out, std::span<const double> in,
                            std::span<double> grad_w, std::span<double> grad_b);
void temporal_std(std::span<const float> data, std::size_t voxels, int frames, std::span<double> out);
void hough_accumulate(std::span<const std::uint8_t> edges, int nx, int ny, const std::vector<CircleOffsets>& circles,
                      std::span<double> accumulator);

}  // namespace serial

}  // namespace cardiac::kernels
