#pragma once

// Cohort loading and the glue between cases, training crops and evaluation.

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "cardiac/phantom.hpp"
#include "cardiac/pipeline.hpp"
#include "cardiac/train.hpp"

namespace cardiac::data {

using Case = phantom::PhantomCase;

/// Reads manifest.csv and the image/truth NIfTI pairs written by write_cohort.
std::vector<Case> load_cohort(const std::filesystem::path& dir);

/// One crop per (case, ED/ES frame), centred by ROI detection or on the image centre.
std::vector<seg::Sample> training_crops(std::span<const Case> cases, const seg::CropGeometry& g, bool use_roi);

struct SegmentationScore {
  seg::DiceScores dice{};  // pooled over cases and both phases, on the original grid
  double voxel_accuracy = 0.0;
  double mean_foreground() const { return (dice[1] + dice[2] + dice[3]) / 3.0; }
};

/// Runs localisation, sliding-window prediction, LCCA and restoration on the ED and ES
/// frames of every case and compares with the truth.
SegmentationScore score_segmentation(SegmentationModel& m, std::span<const Case> cases);

/// Features from the truth masks at the manifest ED/ES frames.
features::FeatureResult truth_features(const Case& c);

/// Features from the model's ED/ES segmentation.
features::FeatureResult predicted_features(SegmentationModel& m, const Case& c);

using Confusion = std::array<std::array<int, clf::kNumDiagnoses>, clf::kNumDiagnoses>;  // [truth][predicted]
double accuracy(const Confusion& c);

}  // namespace cardiac::data
