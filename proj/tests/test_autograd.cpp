#include <doctest.h>

#include "cardiac/error.hpp"
#include "gradient_suite.hpp"

using namespace cardiac;
using seg::Tape;
using seg::Tensor;

TEST_CASE("analytic gradients match central differences") {
  for (const auto& c : oracle::run_gradient_suite()) {
    CAPTURE(c.name);
    CAPTURE(c.result.max_rel);
    CHECK(c.result.checked > 0);
    CHECK(c.result.failures == 0);
    CHECK(c.result.kink_retries * 100 <= c.result.checked);
  }
}

TEST_CASE("softmax sums to one per voxel") {
  std::mt19937_64 rng(1);
  const auto p = seg::softmax_channels(oracle::random_tensor({4, 3, 3, 2, 2}, rng, -20, 20));
  for (int n = 0; n < 2; ++n)
    for (int z = 0; z < 2; ++z)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) {
          double s = 0;
          for (int c = 0; c < 4; ++c) s += p.at(c, x, y, z, n);
          CHECK(std::abs(s - 1.0) < 1e-12);
        }
}

TEST_CASE("backward needs a recording tape and a scalar that depends on a parameter") {
  seg::Parameter p("p", Tensor({1, 2, 1, 1, 1}, 1.0));
  Tape off(false);
  const auto id = off.parameter(p);
  CHECK_THROWS_WITH_AS(off.backward(id), doctest::Contains("GraphNotRecorded"), Error);

  Tape on;
  const auto c = on.constant(Tensor({1, 1, 1, 1, 1}, 2.0));
  CHECK_THROWS_WITH_AS(on.backward(c), doctest::Contains("GraphNotRecorded"), Error);
  const auto v = on.parameter(p);
  CHECK_THROWS_WITH_AS(on.backward(v), doctest::Contains("ShapeMismatch"), Error);
}

TEST_CASE("parameter gradients accumulate across uses") {
  seg::Parameter p("p", Tensor({1, 2, 1, 1, 1}, std::vector<double>{1.0, -2.0}));
  Tape t;
  const auto a = t.parameter(p);
  const auto s = seg::ops::add(t, a, a);
  const Tensor ones({1, 2, 1, 1, 1}, 1.0);
  t.backward(oracle::weighted_sum(t, s, ones));
  CHECK(p.grad[0] == 2.0);
  CHECK(p.grad[1] == 2.0);
}

TEST_CASE("max pooling and upsampling shapes") {
  Tape t(false);
  const auto x = t.constant(Tensor({2, 4, 6, 2, 1}, 1.0));
  CHECK(t.value(seg::ops::max_pool2(t, x)).dims() == Tensor::Dims{2, 2, 3, 1, 1});
  CHECK(t.value(seg::ops::upsample_trilinear2(t, x)).dims() == Tensor::Dims{2, 8, 12, 4, 1});
  const auto odd = t.constant(Tensor({1, 3, 2, 2, 1}));
  CHECK_THROWS_AS(seg::ops::max_pool2(t, odd), Error);
}

TEST_CASE("trilinear upsampling of a constant is constant") {
  Tape t(false);
  const auto x = t.constant(Tensor({1, 3, 2, 2, 1}, 0.7));
  for (double v : t.value(seg::ops::upsample_trilinear2(t, x)).values()) CHECK(v == doctest::Approx(0.7));
}

TEST_CASE("dropout is the identity at inference and scales kept values when training") {
  Tape t(false);
  std::mt19937_64 rng(2);
  const auto x = t.constant(Tensor({1, 10, 10, 10, 1}, 1.0));
  CHECK(seg::ops::dropout(t, x, 0.5, seg::ForwardContext{false, nullptr}) == x);
  const auto& y = t.value(seg::ops::dropout(t, x, 0.25, seg::ForwardContext{true, &rng}));
  int kept = 0;
  for (double v : y.values()) {
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12));
    kept += v != 0.0;
  }
  CHECK(kept > 650);
  CHECK(kept < 850);
}
