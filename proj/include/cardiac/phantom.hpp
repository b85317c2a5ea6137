#pragma once

// Deterministic synthetic short-axis cine phantoms with five disease archetypes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cardiac/classifier.hpp"
#include "cardiac/volume.hpp"

namespace cardiac::phantom {

using clf::Diagnosis;

struct PhantomSpec {
  Diagnosis archetype = Diagnosis::NOR;
  Dims4 dims{128, 128, 10, 8};
  VoxelSpacing spacing{1.5625, 1.5625, 10.0, 0.0};
  std::uint64_t seed = 0;

  double lv_radius_px = 16.0;   // end-diastolic cavity radius at the base
  double wall_mm = 9.0;         // nominal myocardial thickness
  double focal_thin_mm = 0.0;   // > 0: thickness at the centre of a thinned arc
  double focal_angle = 0.0;     // rad, centre of the thinned arc
  double focal_half_width = 0.0;  // rad
  double contraction = 0.4;     // cavity radius shrinks by this fraction at end-systole
  double rv_scale = 1.0;
  double rv_contraction = 0.4;
  double apex_taper = 0.35;     // fractional radius loss at the last slice
  double center_jitter_px = 0.0;  // jitter was already applied if center_x/center_y are set
  double center_x = -1.0, center_y = -1.0;  // negative: grid centre plus jitter
  double noise = 0.03;          // Gaussian sigma as a fraction of the intensity range

  void validate() const;
  /// Nominal thickness profile theta -> mm.
  double wall_at(double theta) const;
};

/// 64 x 64 x 8 x 8 at 3.125 mm in-plane: small enough to train on one CPU core.
PhantomSpec desk_spec();

/// Archetype geometry sampled from the documented ranges, deterministic in seed.
PhantomSpec sample_spec(Diagnosis archetype, std::uint64_t seed, const PhantomSpec& base = {});

struct PhantomCase {
  std::string id;
  Volume4D image;
  LabelVolume truth;  // all frames
  Diagnosis label = Diagnosis::NOR;
  StudyMeta meta;
  double center_x = 0.0, center_y = 0.0;  // true LV centre, px
  std::uint64_t seed = 0;
};

PhantomCase generate_phantom(const PhantomSpec& spec);

/// n_per_class cases of every archetype, in class order.
std::vector<PhantomCase> generate_cohort(int n_per_class, std::uint64_t seed, const PhantomSpec& base = {});

std::string manifest_csv(const std::vector<PhantomCase>& cases);

struct ManifestEntry {
  std::string id;
  Diagnosis label = Diagnosis::NOR;
  int ed_frame = 0, es_frame = 0;
  std::uint64_t seed = 0;
};
std::vector<ManifestEntry> read_manifest(std::string_view text);

/// Writes <id>_image.nii.gz, <id>_truth.nii.gz and manifest.csv into dir.
void write_cohort(const std::filesystem::path& dir, const std::vector<PhantomCase>& cases);

}  // namespace cardiac::phantom
