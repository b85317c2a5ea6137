#pragma once

#include <cstdint>
#include <vector>

#include "cardiac/volume.hpp"

namespace cardiac::overlay {

/// RGB PNG of slice z of frame t with labels blended over the grayscale image
/// (RV blue, Myo green, LV red). `labels` is a single-frame volume on the image grid.
std::vector<std::uint8_t> render_png(const Volume4D& image, int t, const LabelVolume& labels, int z, double alpha = 0.45);

/// Encodes 8-bit RGB rows (width * 3 bytes per row).
std::vector<std::uint8_t> encode_rgb_png(int width, int height, const std::vector<std::uint8_t>& rgb);

}  // namespace cardiac::overlay
