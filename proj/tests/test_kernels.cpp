#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "cardiac/kernels.hpp"

namespace k = cardiac::kernels;

namespace {

std::vector<double> rand_vec(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv3d kernels agree with the serial reference") {
  for (int kernel : {1, 3}) {
    k::ConvShape s;
    s.batch = 2;
    s.in_channels = 3;
    s.out_channels = 4;
    s.nx = 7;
    s.ny = 5;
    s.nz = 4;
    s.kernel = kernel;
    const auto in = rand_vec(s.batch * s.in_channels * s.spatial(), 1);
    const auto w = rand_vec(s.weight_count(), 2);
    const auto b = rand_vec(s.out_channels, 3);
    const auto g = rand_vec(s.batch * s.out_channels * s.spatial(), 4);

    std::vector<double> o1(g.size()), o2(g.size());
    k::conv3d_forward(s, in, w, b, o1);
    k::serial::conv3d_forward(s, in, w, b, o2);
    CHECK(max_abs_diff(o1, o2) < 1e-12);

    std::vector<double> gi1(in.size(), 0.5), gi2(in.size(), 0.5);
    k::conv3d_backward_input(s, g, w, gi1);
    k::serial::conv3d_backward_input(s, g, w, gi2);
    CHECK(max_abs_diff(gi1, gi2) < 1e-12);

    std::vector<double> gw1(w.size(), 0.25), gw2(w.size(), 0.25), gb1(b.size()), gb2(b.size());
    k::conv3d_backward_weight(s, g, in, gw1, gb1);
    k::serial::conv3d_backward_weight(s, g, in, gw2, gb2);
    CHECK(max_abs_diff(gw1, gw2) < 1e-12);
    CHECK(max_abs_diff(gb1, gb2) < 1e-12);
  }
}

TEST_CASE("1x1x1 convolution with identity weights copies the input plus bias") {
  k::ConvShape s;
  s.in_channels = s.out_channels = 2;
  s.nx = 3;
  s.ny = 2;
  s.nz = 2;
  s.kernel = 1;
  const auto in = rand_vec(2 * s.spatial(), 5);
  const std::vector<double> w{1, 0, 0, 1}, b{0.5, -1};
  std::vector<double> out(in.size());
  k::conv3d_forward(s, in, w, b, out);
  for (std::size_t i = 0; i < s.spatial(); ++i) {
    CHECK(out[i] == doctest::Approx(in[i] + 0.5));
    CHECK(out[s.spatial() + i] == doctest::Approx(in[s.spatial() + i] - 1));
  }
}

TEST_CASE("temporal_std agrees with the serial reference and a direct formula") {
  const std::size_t voxels = 37;
  const int frames = 5;
  std::mt19937 rng(6);
  std::uniform_real_distribution<float> u(0, 2);
  std::vector<float> data(voxels * frames);
  for (auto& x : data) x = u(rng);
  std::vector<double> a(voxels), b(voxels);
  k::temporal_std(data, voxels, frames, a);
  k::serial::temporal_std(data, voxels, frames, b);
  CHECK(max_abs_diff(a, b) < 1e-12);
  for (std::size_t v = 0; v < voxels; ++v) {
    double m = 0, ss = 0;
    for (int t = 0; t < frames; ++t) m += data[v + t * voxels];
    m /= frames;
    for (int t = 0; t < frames; ++t) ss += (data[v + t * voxels] - m) * (data[v + t * voxels] - m);
    CHECK(a[v] == doctest::Approx(std::sqrt(ss / frames)).epsilon(1e-9));
  }
}

TEST_CASE("hough accumulation agrees with the serial reference") {
  const int n = 40;
  std::mt19937 rng(7);
  std::bernoulli_distribution e(0.08);
  std::vector<std::uint8_t> edges(n * n);
  for (auto& x : edges) x = e(rng);
  const auto circles = k::circle_offsets(3, 12);
  std::vector<double> a(circles.size() * n * n), b(a.size());
  k::hough_accumulate(edges, n, n, circles, a);
  k::serial::hough_accumulate(edges, n, n, circles, b);
  CHECK(a == b);
}

TEST_CASE("circle offsets are unique and lie on the requested radius") {
  for (const auto& c : k::circle_offsets(4, 9)) {
    std::set<std::pair<int, int>> seen(c.offsets.begin(), c.offsets.end());
    CHECK(seen.size() == c.offsets.size());
    for (auto [dx, dy] : c.offsets) CHECK(std::abs(std::hypot(dx, dy) - c.radius) <= 1.0);
  }
}
