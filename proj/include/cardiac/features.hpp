#pragma once

// The 20 diagnostic features: volumes, ejection fractions, ratios and wall-thickness statistics.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cardiac/volume.hpp"

namespace cardiac::features {

inline constexpr int kNumFeatures = 20;
using FeatureVector = std::array<double, kNumFeatures>;

/// Zero-based positions in the canonical order.
enum FeatureIndex : int {
  kLvVolEd = 0,
  kLvVolEs,
  kRvVolEd,
  kRvVolEs,
  kMyoVolEd,
  kMyoVolEs,
  kLvEf,
  kRvEf,
  kLvRvRatioEd,
  kLvRvRatioEs,
  kMyoLvRatioEd,
  kMyoLvRatioEs,
  kMwtMaxMeanEd,
  kMwtMaxMeanEs,
  kMwtStdMeanEd,
  kMwtStdMeanEs,
  kMwtMeanStdEd,
  kMwtMeanStdEs,
  kMwtStdStdEd,
  kMwtStdStdEs,
};

const std::array<std::string_view, kNumFeatures>& feature_names();

/// Frame t of a label volume, in mL.
double class_volume(const LabelVolume& labels, int class_id, int t = 0);

struct EjectionFraction {
  double percent = 0.0;
  bool degenerate = false;  // edv was 0
};
EjectionFraction ejection_fraction(double edv, double esv);

struct Pixel {
  int x = 0, y = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// A view of one 2D slice, x fastest.
struct SliceLabels {
  int nx = 0, ny = 0;
  std::span<const std::uint8_t> labels;

  std::uint8_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * nx + x]; }
};
SliceLabels slice_of(const LabelVolume& v, int z, int t = 0);

struct Contours {
  std::vector<Pixel> inner;  // Myo pixels 4-adjacent to LV
  std::vector<Pixel> outer;  // Myo pixels 4-adjacent to neither-Myo-nor-LV (or the image border)
};
Contours myo_contours(const SliceLabels& s);

struct SliceThickness {
  int slice = 0;
  double mean_mwt = 0.0;  // mm
  double std_mwt = 0.0;   // mm
  int n_samples = 0;
};

struct ThicknessConfig {
  int min_myo_pixels = 8;
};

/// Thickness is sampled on the pixel edges separating the wall from its neighbours: each
/// inner point is the midpoint of a Myo/LV edge, each outer point the midpoint of a
/// Myo/outside edge.
std::optional<SliceThickness> slice_wall_thickness(const SliceLabels& s, double dx, double dy,
                                                   const ThicknessConfig& cfg = {});

struct MwtStatistics {
  double max_of_means = 0.0;
  double std_of_means = 0.0;
  double mean_of_stds = 0.0;
  double std_of_stds = 0.0;
  std::vector<SliceThickness> slices;
};

MwtStatistics mwt_statistics(const LabelVolume& labels, int t = 0, const ThicknessConfig& cfg = {});

struct FeatureResult {
  FeatureVector values{};
  std::vector<std::string> warnings;
};

/// seg4d holds ED in frame 0 and ES in frame 1.
FeatureResult extract_features(const LabelVolume& seg4d, const ThicknessConfig& cfg = {});

/// Frame with the smallest LV cavity, ties to the earliest frame.
int min_lv_frame(const LabelVolume& seg);

double population_std(std::span<const double> v);

struct FeatureRow {
  std::string study_id;
  FeatureVector values{};
  std::optional<std::string> label;
};

std::string write_feature_csv(const std::vector<FeatureRow>& rows);
std::vector<FeatureRow> read_feature_csv(std::string_view text);

}  // namespace cardiac::features
