#include <doctest.h>

#include <cmath>

#include "cardiac/error.hpp"
#include "cardiac/phantom.hpp"
#include "cardiac/roi.hpp"

using namespace cardiac;

namespace {

/// A disk whose radius pulses over time on a flat background.
Volume4D pulsing_disk(int n, int nz, int nt, double cx, double cy, double r0) {
  Volume4D v({n, n, nz, nt}, VoxelSpacing{1.5625, 1.5625, 10, 0});
  for (int t = 0; t < nt; ++t) {
    const double r = r0 * (1.0 - 0.3 * std::sin(M_PI * t / nt));
    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) v.at(x, y, z, t) = std::hypot(x - cx, y - cy) < r ? 1.0f : 0.0f;
  }
  return v;
}

}  // namespace

TEST_CASE("temporal std is zero for static voxels and positive where the disk moves") {
  const auto v = pulsing_disk(40, 1, 6, 20, 20, 10);
  const auto m = roi::temporal_std_map(v);
  CHECK(m.at(20, 20) == 0.0);
  CHECK(m.at(1, 1) == 0.0);
  CHECK(m.at(20 + 9, 20) > 0.0);
}

TEST_CASE("a single frame cannot be localized") {
  Volume4D v({16, 16, 2, 1}, VoxelSpacing{1, 1, 1, 0});
  CHECK_THROWS_WITH_AS(roi::temporal_std_map(v), doctest::Contains("NeedsMultipleFrames"), Error);
}

TEST_CASE("canny finds a closed ring on a disk edge and nothing on a flat slice") {
  roi::ScalarMap s{48, 48, 1, std::vector<double>(48 * 48)};
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) s.values[y * 48 + x] = std::hypot(x - 24, y - 24) < 12 ? 1.0 : 0.0;
  const auto e = roi::canny_edges(s, roi::RoiParams{});
  CHECK(e.count() > 40);
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x)
      if (e.at(x, y)) CHECK(std::abs(std::hypot(x - 24, y - 24) - 12) < 2.5);

  roi::ScalarMap flat{20, 20, 1, std::vector<double>(400, 3.0)};
  CHECK(roi::canny_edges(flat, roi::RoiParams{}).count() == 0);
}

TEST_CASE("hough recovers the centre and radius of a drawn circle") {
  roi::EdgeMap e{64, 64, std::vector<std::uint8_t>(64 * 64)};
  for (int a = 0; a < 360; ++a) {
    const int x = static_cast<int>(std::lround(30 + 14 * std::cos(a * M_PI / 180)));
    const int y = static_cast<int>(std::lround(33 + 14 * std::sin(a * M_PI / 180)));
    e.edges[y * 64 + x] = 1;
  }
  const auto found = roi::hough_circles(e, roi::RoiParams{});
  REQUIRE_FALSE(found.empty());
  CHECK(std::abs(found[0].cx - 30) <= 1);
  CHECK(std::abs(found[0].cy - 33) <= 1);
  CHECK(std::abs(found[0].r - 14) <= 1);
  CHECK(found[0].strength > 0.5);
  for (std::size_t i = 1; i < found.size(); ++i) CHECK(found[i - 1].strength >= found[i].strength);
}

TEST_CASE("vote surface peaks at a lone detection") {
  const auto s = roi::vote_surface(20, 20, {{7, 11, 5, 2.0}}, 2.0);
  CHECK(s.at(7, 11) == doctest::Approx(2.0));
  CHECK(s.at(8, 11) < s.at(7, 11));
}

TEST_CASE("locate_lv_center finds a pulsing disk and rejects a blank volume") {
  const auto v = pulsing_disk(80, 3, 8, 37, 44, 14);
  const auto est = roi::locate_lv_center(v, roi::RoiParams{});
  CHECK(std::hypot(est.cx - 37, est.cy - 44) <= 2.0);

  Volume4D blank({40, 40, 3, 6}, VoxelSpacing{1.5625, 1.5625, 10, 0});
  CHECK_THROWS_WITH_AS(roi::locate_lv_center(blank, roi::RoiParams{}), doctest::Contains("NoCirclesFound"), Error);
}

TEST_CASE("locate_lv_center on generated phantoms") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto spec = phantom::sample_spec(static_cast<clf::Diagnosis>(seed % 5), seed);
    spec.center_jitter_px = 4;
    const auto c = phantom::generate_phantom(spec);
    const auto est = roi::locate_lv_center(normalize_intensity(c.image), roi::RoiParams{});
    CHECK(std::hypot(est.cx - c.center_x, est.cy - c.center_y) <= 3.0);
  }
}

TEST_CASE("for_spacing rescales pixel-valued parameters") {
  const auto p = roi::RoiParams{}.for_spacing(3.125);
  CHECK(p.canny_sigma == doctest::Approx(0.7));
  CHECK(p.r_min == 4);
  CHECK(p.r_max == 22);
  CHECK(p.vote_sigma == doctest::Approx(1.5));
  CHECK(p.patch == roi::RoiParams{}.patch);
  const auto same = roi::RoiParams{}.for_spacing(roi::kReferenceSpacingMm);
  CHECK(same.r_min == 8);
  CHECK(same.r_max == 45);
}

TEST_CASE("mirror_index reflects symmetrically") {
  CHECK(roi::mirror_index(-1, 5) == 0);
  CHECK(roi::mirror_index(-2, 5) == 1);
  CHECK(roi::mirror_index(5, 5) == 4);
  CHECK(roi::mirror_index(6, 5) == 3);
  CHECK(roi::mirror_index(3, 5) == 3);
  CHECK(roi::mirror_index(-7, 1) == 0);
}

TEST_CASE("plan_crops depth windows") {
  roi::RoiParams p;
  SUBCASE("short stacks get one symmetrically padded window") {
    const auto plan = roi::plan_crops({128, 128, 10}, 64, 64, p);
    REQUIRE(plan.depth_windows.size() == 1);
    CHECK(plan.depth_windows[0].pad_before == 3);
    CHECK(plan.depth_windows[0].pad_after == 3);
    CHECK(plan.source_slice(plan.depth_windows[0], 0) == 2);
    CHECK(plan.source_slice(plan.depth_windows[0], 3) == 0);
    CHECK(plan.source_slice(plan.depth_windows[0], 15) == 7);
  }
  SUBCASE("long stacks slide with the stride and end flush") {
    const auto plan = roi::plan_crops({128, 128, 20}, 64, 64, p);
    REQUIRE(plan.depth_windows.size() == 2);
    CHECK(plan.depth_windows[0].z_offset == 0);
    CHECK(plan.depth_windows[1].z_offset == 4);
    const auto plan24 = roi::plan_crops({128, 128, 24}, 64, 64, p);
    REQUIRE(plan24.depth_windows.size() == 2);
    CHECK(plan24.depth_windows[1].z_offset == 8);
  }
  SUBCASE("in-plane window is centred and may leave the image") {
    const auto plan = roi::plan_crops({100, 100, 16}, 10, 90, p);
    CHECK(plan.x0 == -54);
    CHECK(plan.patch() == 128);
    CHECK(plan.y1 == 154);
  }
}

TEST_CASE("apply_crop zero-fills outside the image and checks the plan") {
  Volume4D v({8, 8, 2, 2}, VoxelSpacing{1, 1, 1, 0});
  for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = 1.0f + static_cast<float>(i);
  roi::RoiParams p;
  p.patch = 6;
  p.target_depth = 4;
  p.depth_stride = 2;
  const auto plan = roi::plan_crops({8, 8, 2}, 1, 6, p);
  const auto c = roi::apply_crop(v, plan, 0);
  CHECK(c.dims() == Dims4{6, 6, 4, 2});
  CHECK(c.at(0, 0, 1, 0) == 0.0f);
  CHECK(c.at(2, 0, 1, 0) == v.at(0, 3, 0, 0));
  CHECK(c.at(2, 5, 1, 1) == 0.0f);
  CHECK(c.at(3, 2, 2, 1) == v.at(1, 5, 1, 1));

  Volume4D other({9, 8, 2, 2}, VoxelSpacing{1, 1, 1, 0});
  CHECK_THROWS_WITH_AS(roi::apply_crop(other, plan, 0), doctest::Contains("PlanMismatch"), Error);
  CHECK_THROWS_WITH_AS(roi::apply_crop(v, plan, 1), doctest::Contains("IndexOutOfRange"), Error);
}
