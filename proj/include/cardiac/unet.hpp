#pragma once

// 3D residual U-Net: ResBlock encoder with max-pool downsampling, a bottleneck
// ResBlock, and a decoder of trilinear upsampling + skip concatenation +
// ResBlock, closed by a 1x1x1 convolution to the four class channels.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cardiac/autograd.hpp"

namespace cardiac::seg {

struct NetConfig {
  int levels = 2;
  int base_channels = 8;
  double dropout_rate = 0.1;
  int in_channels = 1;
  int out_channels = 4;

  void validate() const;
  int divisor() const { return 1 << levels; }
};

class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(std::string name, int in, int out, int kernel, std::mt19937_64& rng);

  Tape::Id forward(Tape& t, Tape::Id x);
  void zero();
  std::vector<Parameter*> parameters() { return {&weight_, &bias_}; }

 private:
  int kernel_ = 3;
  Parameter weight_;
  Parameter bias_;
};

class BatchNorm3d {
 public:
  BatchNorm3d() = default;
  BatchNorm3d(std::string name, int channels);

  Tape::Id forward(Tape& t, Tape::Id x, bool training);
  std::vector<Parameter*> parameters() { return {&gamma_, &beta_}; }
  BatchNormState& state() { return state_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  Parameter gamma_;
  Parameter beta_;
  BatchNormState state_;
};

/// conv -> BN -> ReLU -> dropout -> conv -> BN, plus a (projected) skip, then ReLU.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const std::string& name, int in, int out, double dropout, std::mt19937_64& rng);

  Tape::Id forward(Tape& t, Tape::Id x, const ForwardContext& ctx);
  std::vector<Parameter*> parameters();
  std::vector<BatchNorm3d*> norms() { return {&bn1_, &bn2_}; }

 private:
  double dropout_ = 0.0;
  Conv3d conv1_, conv2_;
  BatchNorm3d bn1_, bn2_;
  std::optional<Conv3d> projection_;
};

class UNet {
 public:
  UNet(const NetConfig& cfg, std::uint64_t seed);

  const NetConfig& config() const { return cfg_; }

  /// Logits with out_channels channels and the input's spatial dims.
  Tape::Id forward(Tape& t, Tape::Id input, const ForwardContext& ctx);
  /// Eval-mode logits without gradient recording.
  Tensor infer(const Tensor& input);

  std::vector<Parameter*> parameters();
  std::vector<BatchNorm3d*> norms();
  std::size_t parameter_count();
  void zero_head();
  /// Order-sensitive checksum over every parameter and running statistic.
  std::uint64_t checksum();

 private:
  NetConfig cfg_;
  std::vector<ResBlock> encoder_;
  ResBlock bottleneck_;
  std::vector<ResBlock> decoder_;
  Conv3d head_;
};

struct CropGeometry {
  int patch = 128;
  int target_depth = 16;
  int depth_stride = 8;
};

struct Checkpoint {
  NetConfig config;
  CropGeometry geometry;
  std::string metadata_json;  // training metadata, free-form JSON
};

/// Little-endian container; parameter values stored as float32.
std::vector<std::uint8_t> save_checkpoint(UNet& net, const CropGeometry& geometry, const std::string& metadata_json);
/// Restores into a freshly constructed net of the stored config.
std::pair<UNet, Checkpoint> load_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint_file(const std::filesystem::path& path, UNet& net, const CropGeometry& geometry,
                          const std::string& metadata_json);
std::pair<UNet, Checkpoint> load_checkpoint_file(const std::filesystem::path& path);

}  // namespace cardiac::seg
