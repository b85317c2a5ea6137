#include "cardiac/error.hpp"

namespace cardiac {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadDimensions: return "BadDimensions";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::TruncatedData: return "TruncatedData";
    case ErrorCode::NonPositiveSpacing: return "NonPositiveSpacing";
    case ErrorCode::NonFiniteData: return "NonFiniteData";
    case ErrorCode::CorruptCompressedData: return "CorruptCompressedData";
    case ErrorCode::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorCode::NeedsMultipleFrames: return "NeedsMultipleFrames";
    case ErrorCode::NoCirclesFound: return "NoCirclesFound";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::AllZeroWeights: return "AllZeroWeights";
    case ErrorCode::ScoreOutOfRange: return "ScoreOutOfRange";
    case ErrorCode::GraphNotRecorded: return "GraphNotRecorded";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::PlanMismatch: return "PlanMismatch";
    case ErrorCode::NoMeasurableSlices: return "NoMeasurableSlices";
    case ErrorCode::SingleClassDataset: return "SingleClassDataset";
    case ErrorCode::NonFiniteFeature: return "NonFiniteFeature";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::UntrainedModel: return "UntrainedModel";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptBundle: return "CorruptBundle";
    case ErrorCode::GeometryOverflow: return "GeometryOverflow";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NameTaken: return "NameTaken";
    case ErrorCode::BadCredentials: return "BadCredentials";
    case ErrorCode::ExpiredSession: return "ExpiredSession";
    case ErrorCode::Unauthorized: return "Unauthorized";
    case ErrorCode::Forbidden: return "Forbidden";
    case ErrorCode::PayloadTooLarge: return "PayloadTooLarge";
    case ErrorCode::NoSuchStudy: return "NoSuchStudy";
    case ErrorCode::NoSuchReport: return "NoSuchReport";
    case ErrorCode::NoSuchDoctor: return "NoSuchDoctor";
    case ErrorCode::PipelineFailed: return "PipelineError";
    case ErrorCode::StorageFailure: return "StorageFailure";
  }
  return "Unknown";
}

}  // namespace cardiac
