#include "cardiac/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cardiac/error.hpp"

namespace cardiac::seg {

void LossConfig::validate() const {
  if (!(beta > 0)) throw Error(ErrorCode::InvalidArgument, "beta must be positive");
  if (!(epsilon > 0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");
  if (!(weight_floor >= 0 && weight_floor < 1)) throw Error(ErrorCode::InvalidArgument, "weight floor in [0, 1)");
}

namespace {

struct DiceSums {
  double inter = 0.0;  // sum P*G
  double denom = 0.0;  // sum P^2 + sum G^2
};

DiceSums dice_sums(std::span<const double> p, std::span<const double> g) {
  if (p.size() != g.size()) throw Error(ErrorCode::ShapeMismatch, "P_c and G_c differ in size");
  DiceSums s;
  for (std::size_t i = 0; i < p.size(); ++i) {
    s.inter += p[i] * g[i];
    s.denom += p[i] * p[i] + g[i] * g[i];
  }
  return s;
}

double effective_beta(const LossConfig& cfg) { return cfg.kind == LossKind::Dice ? 1.0 : cfg.beta; }

double weight_sum(const ClassWeights& w, const LossConfig& cfg) {
  if (static_cast<int>(w.w.size()) != cfg.num_loss_classes())
    throw Error(ErrorCode::ShapeMismatch, "class weight count does not match the loss classes");
  double s = 0.0;
  for (double v : w.w) {
    if (!(v >= 0)) throw Error(ErrorCode::InvalidArgument, "class weights must be non-negative");
    s += v;
  }
  if (s <= 0.0) throw Error(ErrorCode::AllZeroWeights, "all class weights are zero");
  return s;
}

void check_labels(const Tensor& P, std::span<const std::uint8_t> labels) {
  if (P.channels() != 4) throw Error(ErrorCode::ShapeMismatch, "loss expects 4 probability channels");
  if (labels.size() != P.spatial() * P.batch()) throw Error(ErrorCode::ShapeMismatch, "label count != voxels");
}

std::vector<double> one_hot(std::span<const std::uint8_t> labels, int c) {
  std::vector<double> g(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) g[i] = labels[i] == c ? 1.0 : 0.0;
  return g;
}

constexpr double kProbFloor = 1e-12;

}  // namespace

double focal_dice_class(std::span<const double> p, std::span<const double> g, double beta, double epsilon) {
  const DiceSums s = dice_sums(p, g);
  const double ratio = (2.0 * s.inter + epsilon) / (s.denom + epsilon);
  return 1.0 - std::pow(ratio, 1.0 / beta);
}

void focal_dice_class_grad(std::span<const double> p, std::span<const double> g, double beta, double epsilon,
                           std::span<double> grad) {
  const DiceSums s = dice_sums(p, g);
  const double num = 2.0 * s.inter + epsilon;
  const double den = s.denom + epsilon;
  const double ratio = num / den;
  const double outer = -(1.0 / beta) * std::pow(ratio, 1.0 / beta - 1.0);
  for (std::size_t i = 0; i < p.size(); ++i) grad[i] = outer * (2.0 * g[i] * den - num * 2.0 * p[i]) / (den * den);
}

double total_loss(const Tensor& P, std::span<const std::uint8_t> labels, const ClassWeights& weights,
                  const LossConfig& cfg) {
  check_labels(P, labels);
  const int N = P.batch();
  const std::size_t S = P.spatial();

  if (cfg.kind == LossKind::CrossEntropy) {
    double nll = 0.0;
    for (int n = 0; n < N; ++n)
      for (std::size_t v = 0; v < S; ++v) nll -= std::log(std::max(P.plane(labels[n * S + v], n)[v], kProbFloor));
    return nll / static_cast<double>(N * S);
  }

  const double wsum = weight_sum(weights, cfg);
  const double beta = effective_beta(cfg);
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const auto lab = labels.subspan(n * S, S);
    double acc = 0.0;
    for (int k = 0; k < cfg.num_loss_classes(); ++k) {
      const int c = cfg.first_class() + k;
      if (weights.w[k] == 0.0) continue;
      acc += weights.w[k] * focal_dice_class(P.plane(c, n), one_hot(lab, c), beta, cfg.epsilon);
    }
    total += acc / wsum;
  }
  return total / N;
}

ClassWeights update_class_weights(std::span<const double> prev_epoch_dice, double weight_floor) {
  ClassWeights w;
  for (double d : prev_epoch_dice) {
    if (!(d >= 0.0 && d <= 1.0)) throw Error(ErrorCode::ScoreOutOfRange, "Dice score outside [0, 1]");
    w.w.push_back(std::max(1.0 - d, weight_floor));
  }
  return w;
}

double cosine_lr(long step, long total_steps, double lr0) {
  if (total_steps <= 0) return lr0;
  const double frac = static_cast<double>(std::clamp(step, 0L, total_steps)) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

namespace ops {

Tape::Id segmentation_loss(Tape& t, Tape::Id P, std::vector<std::uint8_t> labels, const ClassWeights& weights,
                           const LossConfig& cfg) {
  cfg.validate();
  const double value = total_loss(t.value(P), labels, weights, cfg);
  Tensor out({1, 1, 1, 1, 1}, value);
  return t.push(std::move(out), {P}, [P, labels = std::move(labels), weights, cfg](Tape& tp, Tape::Id self) {
    const double upstream = tp.grad(self)[0];
    const Tensor& prob = tp.value(P);
    Tensor& dp = tp.grad(P);
    const int N = prob.batch();
    const std::size_t S = prob.spatial();
    if (cfg.kind == LossKind::CrossEntropy) {
      const double scale = upstream / static_cast<double>(N * S);
      for (int n = 0; n < N; ++n)
        for (std::size_t v = 0; v < S; ++v) {
          const int c = labels[n * S + v];
          const double pv = prob.plane(c, n)[v];
          if (pv > kProbFloor) dp.plane(c, n)[v] -= scale / pv;
        }
      return;
    }
    const double wsum = weight_sum(weights, cfg);
    const double beta = effective_beta(cfg);
    std::vector<double> g(S);
    for (int n = 0; n < N; ++n) {
      const auto lab = std::span<const std::uint8_t>(labels).subspan(n * S, S);
      for (int k = 0; k < cfg.num_loss_classes(); ++k) {
        const int c = cfg.first_class() + k;
        if (weights.w[k] == 0.0) continue;
        focal_dice_class_grad(prob.plane(c, n), one_hot(lab, c), beta, cfg.epsilon, g);
        const double scale = upstream * weights.w[k] / (wsum * N);
        auto dst = dp.plane(c, n);
        for (std::size_t i = 0; i < S; ++i) dst[i] += scale * g[i];
      }
    }
  });
}

}  // namespace ops

}  // namespace cardiac::seg
