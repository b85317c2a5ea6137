#pragma once

// Augmentation, the mini-batch training loop and sliding-window inference.

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "cardiac/loss.hpp"
#include "cardiac/roi.hpp"
#include "cardiac/unet.hpp"
#include "cardiac/volume.hpp"

namespace cardiac::seg {

/// One training crop: a single-channel image (1, X, Y, Z, 1) and its labels.
struct Sample {
  Tensor image;
  std::vector<std::uint8_t> labels;
};

Sample make_sample(const Volume4D& image_crop, const LabelVolume& label_crop, int frame = 0);

struct AugmentParams {
  bool flip_x = false;
  bool flip_y = false;
  double rotation_deg = 0.0;
  double tx = 0.0, ty = 0.0;  // px
  double shear = 0.0;

  static AugmentParams identity() { return {}; }
};

AugmentParams sample_augment_params(std::mt19937_64& rng);

/// Same in-plane affine warp for every slice: bilinear for the image, nearest for labels,
/// zero outside the field of view.
Sample augment(const Sample& s, const AugmentParams& p);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 4;
  double lr0 = 5e-4;
  std::uint64_t seed = 0;
  bool augment = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

using DiceScores = std::array<double, 4>;

struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr_last = 0.0;
  std::vector<double> weights;  // class weights used during this epoch
  DiceScores train_dice{};      // hard argmax Dice of this epoch's training predictions
  DiceScores val_dice{};        // eval-mode Dice on the held-out split (NaN when absent)
};

struct TrainResult {
  std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

TrainResult train(UNet& net, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& tc, const LossConfig& lc, const EpochCallback& on_epoch = {});

/// Per-class hard Dice of predicted vs true labels. A class absent from both scores 1.
DiceScores dice_scores(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth);

/// Eval-mode per-class Dice over a set of samples (pooled counts).
DiceScores evaluate(UNet& net, const std::vector<Sample>& samples);

/// Argmax over channels (ties to the lower class index) of a (4, X, Y, Z, 1) tensor.
std::vector<std::uint8_t> argmax_labels(const Tensor& probabilities);

struct VolumePrediction {
  Tensor probabilities;  // (4, patch, patch, Z, 1) on the cropped grid, padded slices dropped
  LabelVolume labels;    // (patch, patch, Z)
};

VolumePrediction predict_volume(UNet& net, const Volume4D& v, const roi::CropPlan& plan, int frame);

/// Adam-style update with externally supplied learning rate.
class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(const std::vector<Parameter*>& params, double lr);
  long steps() const { return t_; }

 private:
  double b1_, b2_, eps_;
  long t_ = 0;
};

}  // namespace cardiac::seg
