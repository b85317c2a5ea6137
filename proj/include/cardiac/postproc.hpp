#pragma once

// Per-class largest-component cleanup, restoration to the original grid and ED/ES stacking.

#include <cstdint>
#include <span>
#include <vector>

#include "cardiac/roi.hpp"
#include "cardiac/volume.hpp"

namespace cardiac::post {

struct ComponentLabeling {
  Dims3 dims{};
  std::vector<std::int32_t> ids;     // 0 outside the mask, otherwise 1..K
  std::vector<std::size_t> sizes;    // sizes[k - 1] is the voxel count of component k

  std::size_t count() const { return sizes.size(); }
};

/// Connectivity is 6, 18 or 26. Ids follow first-voxel scan order.
ComponentLabeling connected_components_3d(std::span<const std::uint8_t> mask, const Dims3& dims, int connectivity = 26);

/// Keeps the largest component of every foreground class. Only frame 0 is considered.
LabelVolume lcca(const LabelVolume& labels, int connectivity = 26);

/// Places a merged (patch, patch, Z) crop back onto the plan's original grid.
LabelVolume restore_to_original(const LabelVolume& cropped, const roi::CropPlan& plan);
/// Places one window crop (patch, patch, target_depth) back, dropping padded slices.
LabelVolume restore_to_original(const LabelVolume& cropped, const roi::CropPlan& plan, std::size_t window_index);

LabelVolume stack_phases(const LabelVolume& ed, const LabelVolume& es);

}  // namespace cardiac::post
