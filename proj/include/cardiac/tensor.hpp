#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace cardiac::seg {

/// Dense double tensor with axes (channels, X, Y, Z, batch); x varies fastest in memory,
/// followed by y, z, channel and batch.
class Tensor {
 public:
  using Dims = std::array<int, 5>;  // C, X, Y, Z, N

  Tensor() = default;
  explicit Tensor(Dims dims, double fill = 0.0);
  Tensor(Dims dims, std::vector<double> values);

  const Dims& dims() const { return dims_; }
  int channels() const { return dims_[0]; }
  int nx() const { return dims_[1]; }
  int ny() const { return dims_[2]; }
  int nz() const { return dims_[3]; }
  int batch() const { return dims_[4]; }
  std::size_t spatial() const { return static_cast<std::size_t>(dims_[1]) * dims_[2] * dims_[3]; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::size_t index(int c, int x, int y, int z, int n = 0) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_[1]) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(dims_[2]) *
                    (static_cast<std::size_t>(z) +
                     static_cast<std::size_t>(dims_[3]) * (static_cast<std::size_t>(c) + static_cast<std::size_t>(dims_[0]) * n)));
  }
  double& at(int c, int x, int y, int z, int n = 0) { return values_[index(c, x, y, z, n)]; }
  double at(int c, int x, int y, int z, int n = 0) const { return values_[index(c, x, y, z, n)]; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  /// Contiguous spatial block of channel c in batch item n.
  std::span<double> plane(int c, int n = 0) { return std::span<double>(values_).subspan(index(c, 0, 0, 0, n), spatial()); }
  std::span<const double> plane(int c, int n = 0) const {
    return std::span<const double>(values_).subspan(index(c, 0, 0, 0, n), spatial());
  }

  void fill(double v);
  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

 private:
  Dims dims_{0, 0, 0, 0, 0};
  std::vector<double> values_;
};

}  // namespace cardiac::seg
