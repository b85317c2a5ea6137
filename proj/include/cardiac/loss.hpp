#pragma once

// Segmentation losses: cross entropy, soft Dice, Focal Dice and the
// per-epoch dynamically weighted Focal Dice.

#include <cstdint>
#include <span>
#include <vector>

#include "cardiac/autograd.hpp"

namespace cardiac::seg {

enum class LossKind { CrossEntropy, Dice, FocalDice, DynamicFocalDice };

struct LossConfig {
  LossKind kind = LossKind::DynamicFocalDice;
  double beta = 2.0;
  double epsilon = 1e-5;
  double weight_floor = 0.05;
  bool include_background = true;

  void validate() const;
  int num_loss_classes() const { return include_background ? 4 : 3; }
  int first_class() const { return include_background ? 0 : 1; }
};

struct ClassWeights {
  std::vector<double> w;

  static ClassWeights uniform(int n) { return {std::vector<double>(n, 1.0)}; }
};

/// 1 - ((2 sum P*G + eps) / (sum P^2 + sum G^2 + eps))^(1/beta)
double focal_dice_class(std::span<const double> p, std::span<const double> g, double beta, double epsilon);

/// d focal_dice_class / dP, written to grad (overwrites).
void focal_dice_class_grad(std::span<const double> p, std::span<const double> g, double beta, double epsilon,
                           std::span<double> grad);

/// Loss of one batch: the per-volume weighted loss averaged over the batch.
/// P has 4 channels; labels hold one class id per voxel per batch item.
double total_loss(const Tensor& P, std::span<const std::uint8_t> labels, const ClassWeights& weights,
                  const LossConfig& cfg);

/// w_c = max(1 - dice_c, floor)
ClassWeights update_class_weights(std::span<const double> prev_epoch_dice, double weight_floor);

double cosine_lr(long step, long total_steps, double lr0);

namespace ops {
/// Scalar loss node over the probability node P.
Tape::Id segmentation_loss(Tape& t, Tape::Id P, std::vector<std::uint8_t> labels, const ClassWeights& weights,
                           const LossConfig& cfg);
}  // namespace ops

}  // namespace cardiac::seg
