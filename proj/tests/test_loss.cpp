#include <doctest.h>

#include "cardiac/error.hpp"
#include "cardiac/loss.hpp"
#include "support.hpp"

using namespace cardiac;
using seg::Tensor;

namespace {

Tensor random_probabilities(std::mt19937_64& rng, Tensor::Dims d) {
  return seg::softmax_channels(oracle::random_tensor(d, rng, -2, 2));
}

Tensor one_hot(std::span<const std::uint8_t> labels, Tensor::Dims d) {
  Tensor p(d);
  const std::size_t S = static_cast<std::size_t>(d[1]) * d[2] * d[3];
  for (int n = 0; n < d[4]; ++n)
    for (std::size_t v = 0; v < S; ++v) p.plane(labels[n * S + v], n)[v] = 1.0;
  return p;
}

std::vector<std::uint8_t> random_labels(std::mt19937_64& rng, std::size_t n) {
  std::vector<std::uint8_t> l(n);
  for (auto& v : l) v = static_cast<std::uint8_t>(rng() % 4);
  return l;
}

}  // namespace

TEST_CASE("focal Dice with beta 1 is soft Dice") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(40), g(40);
    for (auto& v : p) v = u(rng);
    for (auto& v : g) v = u(rng) < 0.3 ? 1.0 : 0.0;
    double inter = 0, den = 0;
    for (int i = 0; i < 40; ++i) {
      inter += p[i] * g[i];
      den += p[i] * p[i] + g[i] * g[i];
    }
    const double soft = 1.0 - (2 * inter + 1e-5) / (den + 1e-5);
    CHECK(std::abs(seg::focal_dice_class(p, g, 1.0, 1e-5) - soft) <= 1e-12);
  }
}

TEST_CASE("focal Dice of a perfect prediction is zero and of a disjoint one is near one") {
  const std::vector<double> g{1, 0, 1, 0}, q{0, 1, 0, 1};
  CHECK(seg::focal_dice_class(g, g, 2.0, 1e-5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(seg::focal_dice_class(q, g, 2.0, 1e-5) > 0.99);
}

TEST_CASE("perfect predictions give near-zero loss for every kind") {
  std::mt19937_64 rng(4);
  const Tensor::Dims d{4, 5, 4, 3, 2};
  const auto labels = random_labels(rng, 5 * 4 * 3 * 2);
  const auto P = one_hot(labels, d);
  for (auto kind : {seg::LossKind::CrossEntropy, seg::LossKind::Dice, seg::LossKind::FocalDice, seg::LossKind::DynamicFocalDice}) {
    seg::LossConfig cfg;
    cfg.kind = kind;
    CHECK(seg::total_loss(P, labels, seg::ClassWeights{{0.3, 0.2, 0.9, 0.05}}, cfg) <= 1e-4);
  }
}

TEST_CASE("total loss is invariant under positive scaling of the class weights") {
  std::mt19937_64 rng(5);
  const Tensor::Dims d{4, 4, 4, 2, 3};
  const auto P = random_probabilities(rng, d);
  const auto labels = random_labels(rng, 4 * 4 * 2 * 3);
  for (auto kind : {seg::LossKind::Dice, seg::LossKind::FocalDice, seg::LossKind::DynamicFocalDice}) {
    seg::LossConfig cfg;
    cfg.kind = kind;
    seg::ClassWeights w{{0.1, 0.5, 0.4, 0.05}}, w7 = w;
    for (auto& v : w7.w) v *= 7;
    CHECK(std::abs(seg::total_loss(P, labels, w, cfg) - seg::total_loss(P, labels, w7, cfg)) <= 1e-12);
  }
}

TEST_CASE("total loss matches a scalar-loop recomputation") {
  std::mt19937_64 rng(6);
  const Tensor::Dims d{4, 3, 3, 2, 2};
  const auto P = random_probabilities(rng, d);
  const auto labels = random_labels(rng, 3 * 3 * 2 * 2);
  const std::vector<double> w{0.25, 0.5, 0.125, 1.0};
  seg::LossConfig cfg;
  cfg.kind = seg::LossKind::FocalDice;
  double expect = 0;
  for (int n = 0; n < 2; ++n) {
    double acc = 0, wsum = 0;
    for (int c = 0; c < 4; ++c) {
      double inter = 0, den = 0;
      for (int i = 0; i < 18; ++i) {
        const double p = P[P.index(c, 0, 0, 0, n) + i];
        const double g = labels[n * 18 + i] == c ? 1.0 : 0.0;
        inter += p * g;
        den += p * p + g * g;
      }
      acc += w[c] * (1.0 - std::pow((2 * inter + cfg.epsilon) / (den + cfg.epsilon), 1.0 / cfg.beta));
      wsum += w[c];
    }
    expect += acc / wsum / 2;
  }
  CHECK(std::abs(seg::total_loss(P, labels, seg::ClassWeights{w}, cfg) - expect) <= 1e-10);
}

TEST_CASE("loss argument errors") {
  const Tensor P({4, 2, 2, 1, 1}, 0.25);
  const std::vector<std::uint8_t> labels(4, 0);
  seg::LossConfig cfg;
  CHECK_THROWS_WITH_AS(seg::total_loss(P, labels, seg::ClassWeights{{0, 0, 0, 0}}, cfg), doctest::Contains("AllZeroWeights"), Error);
  CHECK_THROWS_WITH_AS(seg::total_loss(P, std::vector<std::uint8_t>(3), seg::ClassWeights::uniform(4), cfg),
                       doctest::Contains("ShapeMismatch"), Error);
  CHECK_THROWS_AS(seg::total_loss(P, labels, seg::ClassWeights::uniform(3), cfg), Error);
}

TEST_CASE("class weight update") {
  const std::vector<double> dice{0.9, 0.5, 0.6, 1.0};
  const auto w = seg::update_class_weights(dice, 0.05);
  REQUIRE(w.w.size() == 4);
  for (int c = 0; c < 4; ++c) CHECK(w.w[c] == std::max(1.0 - dice[c], 0.05));
  CHECK(w.w[0] == doctest::Approx(0.1));
  CHECK(w.w[3] == 0.05);
  for (double v : seg::update_class_weights(std::vector<double>{0, 0, 0, 0}, 0.05).w) CHECK(v == 1.0);
  CHECK_THROWS_WITH_AS(seg::update_class_weights(std::vector<double>{1.2}, 0.05), doctest::Contains("ScoreOutOfRange"), Error);
  double prev = 2.0;
  for (double d = 0.0; d <= 1.0; d += 0.01) {
    const double v = seg::update_class_weights(std::vector<double>{d}, 0.05).w[0];
    CHECK(v <= prev);
    CHECK(v >= 0.05);
    prev = v;
  }
}

TEST_CASE("gradient at a perfect prediction is tiny") {
  const std::vector<std::uint8_t> labels{0, 1, 2, 3, 3, 2, 1, 0};
  const Tensor::Dims d{4, 2, 2, 2, 1};
  seg::Parameter p("P", one_hot(labels, d));
  seg::LossConfig cfg;
  seg::Tape t;
  const auto id = t.parameter(p);
  t.backward(seg::ops::segmentation_loss(t, id, labels, seg::ClassWeights::uniform(4), cfg));
  for (double g : p.grad.values()) CHECK(std::abs(g) <= 1e-6);
}

TEST_CASE("cosine schedule") {
  CHECK(seg::cosine_lr(0, 100, 5e-4) == doctest::Approx(5e-4));
  CHECK(seg::cosine_lr(100, 100, 5e-4) == doctest::Approx(0.0));
  CHECK(seg::cosine_lr(50, 100, 5e-4) == doctest::Approx(2.5e-4));
}
