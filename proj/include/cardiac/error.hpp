#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cardiac {

enum class ErrorCode {
  // volume-io
  BadMagic,
  BadDimensions,
  UnsupportedDatatype,
  TruncatedData,
  NonPositiveSpacing,
  NonFiniteData,
  CorruptCompressedData,
  ValueOutOfRange,
  // roi
  NeedsMultipleFrames,
  NoCirclesFound,
  IndexOutOfRange,
  // segmentation
  ShapeMismatch,
  AllZeroWeights,
  ScoreOutOfRange,
  GraphNotRecorded,
  EmptyDataset,
  BadCheckpoint,
  // postproc
  PlanMismatch,
  // features
  NoMeasurableSlices,
  // classifier
  SingleClassDataset,
  NonFiniteFeature,
  NoConvergence,
  UntrainedModel,
  VersionMismatch,
  CorruptBundle,
  // phantom
  GeometryOverflow,
  InvalidArgument,
  // platform
  NameTaken,
  BadCredentials,
  ExpiredSession,
  Unauthorized,
  Forbidden,
  PayloadTooLarge,
  NoSuchStudy,
  NoSuchReport,
  NoSuchDoctor,
  PipelineFailed,
  StorageFailure,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cardiac
