#pragma once

// NIfTI-1 single-file reader/writer for the uint8, int16 and float32 datatypes.
// Gzip-compressed input is detected by its two-byte signature and inflated first.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cardiac/volume.hpp"

namespace cardiac::nifti {

enum class DataType : std::int16_t { UInt8 = 2, Int16 = 4, Float32 = 16 };

using Bytes = std::vector<std::uint8_t>;

Volume4D read(std::span<const std::uint8_t> bytes);
Bytes write(const Volume4D& v, DataType dtype);
Bytes write(const LabelVolume& v, DataType dtype = DataType::UInt8);

/// Labels stored as integer codes; values outside {0..3} are rejected.
LabelVolume read_labels(std::span<const std::uint8_t> bytes);

Bytes gzip(std::span<const std::uint8_t> bytes);
Bytes gunzip(std::span<const std::uint8_t> bytes);
bool is_gzip(std::span<const std::uint8_t> bytes);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace cardiac::nifti
