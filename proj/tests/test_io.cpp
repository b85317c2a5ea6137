#include <doctest.h>

#include <cstring>
#include <random>

#include "cardiac/error.hpp"
#include "cardiac/nifti.hpp"
#include "cardiac/volume.hpp"

using namespace cardiac;

namespace {

Volume4D ramp(Dims4 d, float scale, float offset) {
  Volume4D v(d, VoxelSpacing{1.25, 1.5, 8.0, 0.03125});
  for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = offset + scale * static_cast<float>(i % 251);
  return v;
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("round trip is byte-identical for every dtype") {
  const auto v = ramp({7, 5, 3, 2}, 1.0f, 0.0f);
  for (auto dt : {nifti::DataType::UInt8, nifti::DataType::Int16, nifti::DataType::Float32}) {
    const auto bytes = nifti::write(v, dt);
    const auto back = nifti::read(bytes);
    CHECK(back.dims() == v.dims());
    CHECK(back.spacing() == v.spacing());
    CHECK(std::equal(back.data().begin(), back.data().end(), v.data().begin()));
    CHECK(nifti::write(back, dt) == bytes);
  }
}

TEST_CASE("float32 keeps fractional values and negative values") {
  const auto v = ramp({4, 4, 2, 3}, -0.37f, 0.125f);
  const auto back = nifti::read(nifti::write(v, nifti::DataType::Float32));
  CHECK(std::equal(back.data().begin(), back.data().end(), v.data().begin()));
}

TEST_CASE("3D volumes read as a single frame") {
  const auto v = ramp({6, 6, 4, 1}, 1.0f, 0.0f);
  const auto back = nifti::read(nifti::write(v, nifti::DataType::Int16));
  CHECK(back.nt() == 1);
  CHECK(back.dims() == v.dims());
}

TEST_CASE("gzip input is detected and inflated") {
  const auto raw = nifti::write(ramp({5, 5, 2, 2}, 2.0f, 1.0f), nifti::DataType::Int16);
  const auto gz = nifti::gzip(raw);
  CHECK(nifti::is_gzip(gz));
  CHECK_FALSE(nifti::is_gzip(raw));
  CHECK(nifti::gunzip(gz) == raw);
  const auto a = nifti::read(gz);
  const auto b = nifti::read(raw);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("label volumes round trip and reject codes above 3") {
  LabelVolume l(Dims4{4, 3, 2, 2}, VoxelSpacing{1, 1, 1, 0});
  for (std::size_t i = 0; i < l.size(); ++i) l.labels()[i] = static_cast<std::uint8_t>(i % 4);
  const auto bytes = nifti::write(l);
  CHECK(nifti::read_labels(bytes) == l);

  Volume4D bad({2, 2, 1, 1}, VoxelSpacing{1, 1, 1, 0}, {0, 1, 2, 7});
  CHECK(code_of([&] { nifti::read_labels(nifti::write(bad, nifti::DataType::UInt8)); }) == ErrorCode::ValueOutOfRange);
}

TEST_CASE("values that do not fit the requested dtype are rejected on write") {
  Volume4D v({2, 1, 1, 1}, VoxelSpacing{1, 1, 1, 0}, {0.5f, 1.0f});
  CHECK(code_of([&] { nifti::write(v, nifti::DataType::UInt8); }) == ErrorCode::ValueOutOfRange);
  Volume4D w({2, 1, 1, 1}, VoxelSpacing{1, 1, 1, 0}, {40000.0f, 1.0f});
  CHECK(code_of([&] { nifti::write(w, nifti::DataType::Int16); }) == ErrorCode::ValueOutOfRange);
}

TEST_CASE("typed errors for malformed headers") {
  const auto good = nifti::write(ramp({4, 4, 2, 2}, 1.0f, 0.0f), nifti::DataType::Float32);
  auto patch = [&](std::size_t off, auto value) {
    auto b = good;
    std::memcpy(b.data() + off, &value, sizeof value);
    return b;
  };
  CHECK(code_of([&] { nifti::read(std::span(good).first(100)); }) == ErrorCode::TruncatedData);
  CHECK(code_of([&] { nifti::read(patch(0, std::int32_t{347})); }) == ErrorCode::BadMagic);
  CHECK(code_of([&] { nifti::read(patch(344, std::uint32_t{0})); }) == ErrorCode::BadMagic);
  CHECK(code_of([&] { nifti::read(patch(40, std::int16_t{6})); }) == ErrorCode::BadDimensions);
  CHECK(code_of([&] { nifti::read(patch(42, std::int16_t{0})); }) == ErrorCode::BadDimensions);
  CHECK(code_of([&] { nifti::read(patch(70, std::int16_t{64})); }) == ErrorCode::UnsupportedDatatype);
  CHECK(code_of([&] { nifti::read(patch(80, -1.0f)); }) == ErrorCode::NonPositiveSpacing);
  CHECK(code_of([&] { nifti::read(std::span(good).first(good.size() - 3)); }) == ErrorCode::TruncatedData);

  auto nan = good;
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan.data() + 352, &q, 4);
  CHECK(code_of([&] { nifti::read(nan); }) == ErrorCode::NonFiniteData);
}

TEST_CASE("corrupt gzip streams raise CorruptCompressedData") {
  auto gz = nifti::gzip(nifti::write(ramp({8, 8, 2, 2}, 1.0f, 0.0f), nifti::DataType::Int16));
  auto truncated = gz;
  truncated.resize(gz.size() / 2);
  CHECK(code_of([&] { nifti::read(truncated); }) == ErrorCode::CorruptCompressedData);
  gz[gz.size() / 2] ^= 0xff;
  gz[gz.size() / 2 + 1] ^= 0x5a;
  CHECK_THROWS_AS(nifti::read(gz), Error);
}

TEST_CASE("mutated headers never escape as anything but typed errors") {
  const auto good = nifti::write(ramp({4, 3, 2, 2}, 1.0f, 0.0f), nifti::DataType::Int16);
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> pos(0, 351);
  std::uniform_int_distribution<int> byte(0, 255), count(1, 8);
  int typed = 0, accepted = 0;
  for (int i = 0; i < 1000; ++i) {
    auto b = good;
    for (int k = count(rng); k > 0; --k) b[pos(rng)] = static_cast<std::uint8_t>(byte(rng));
    try {
      const auto v = nifti::read(b);
      CHECK(v.size() == voxel_count(v.dims()));
      ++accepted;
    } catch (const Error&) {
      ++typed;
    }
  }
  CHECK(typed + accepted == 1000);
  CHECK(typed > 0);
}

TEST_CASE("percentile interpolates linearly") {
  CHECK(percentile({4, 1, 3, 2}, 0) == doctest::Approx(1));
  CHECK(percentile({4, 1, 3, 2}, 100) == doctest::Approx(4));
  CHECK(percentile({4, 1, 3, 2}, 50) == doctest::Approx(2.5));
  CHECK(percentile({10, 20}, 25) == doctest::Approx(12.5));
}

TEST_CASE("normalize_intensity gives zero mean and maps constants to zero") {
  auto v = ramp({8, 8, 2, 2}, 1.0f, 3.0f);
  const auto n = normalize_intensity(v);
  double mean = 0.0;
  for (float x : n.data()) mean += x;
  CHECK(std::abs(mean / n.size()) < 0.05);

  Volume4D c({3, 3, 1, 2}, VoxelSpacing{1, 1, 1, 0}, std::vector<float>(18, 5.0f));
  const auto nc = normalize_intensity(c);
  for (float x : nc.data()) CHECK(x == 0.0f);
}

TEST_CASE("volume constructors validate shapes") {
  CHECK(code_of([] { Volume4D({0, 2, 2, 1}, {}); }) == ErrorCode::BadDimensions);
  CHECK(code_of([] { Volume4D({2, 2, 2, 1}, {}, std::vector<float>(3)); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([] { LabelVolume({1, 1, 1, 1}, {}, std::vector<std::uint8_t>{4}); }) == ErrorCode::ValueOutOfRange);
  Volume4D v({2, 2, 1, 3}, {});
  CHECK(code_of([&] { v.extract_frame(3); }) == ErrorCode::IndexOutOfRange);
}
