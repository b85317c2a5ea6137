#pragma once

// Full analysis of one cine study: normalize, localize, segment ED/ES, clean up,
// measure and classify.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cardiac/classifier.hpp"
#include "cardiac/error.hpp"
#include "cardiac/features.hpp"
#include "cardiac/roi.hpp"
#include "cardiac/unet.hpp"
#include "cardiac/volume.hpp"

namespace cardiac {

/// A failure inside the pipeline, tagged with the stage that raised it.
class PipelineError : public Error {
 public:
  PipelineError(std::string stage, ErrorCode cause, const std::string& what)
      : Error(ErrorCode::PipelineFailed, stage + ": " + what), stage_(std::move(stage)), cause_(cause) {}

  const std::string& stage() const { return stage_; }
  ErrorCode cause() const { return cause_; }

 private:
  std::string stage_;
  ErrorCode cause_;
};

struct StageTiming {
  std::string stage;
  double ms = 0.0;
};

struct AnalysisResult {
  int ed_frame = 0, es_frame = 0;
  roi::CropPlan plan;
  LabelVolume segmentation;  // original grid, frame 0 = ED, frame 1 = ES
  features::FeatureResult features;
  clf::TwoStageResult diagnosis;
  std::string explanation;
  std::vector<StageTiming> timings;
  double wall_ms = 0.0;
};

std::string_view explanation_for(clf::Diagnosis d);

/// Crop settings the segmentation network was trained with.
struct SegmentationModel {
  seg::UNet net;
  seg::Checkpoint checkpoint;
  bool use_roi = true;  // false: crops are centred on the image
};

SegmentationModel load_segmentation_model(const std::filesystem::path& path);
std::string segmentation_metadata(bool use_roi, const std::string& loss, int epochs, std::uint64_t seed);

roi::RoiParams roi_params_for(const seg::CropGeometry& g, double dx);

/// Centre and crop plan for a normalized volume, honouring the model's ROI setting.
roi::CropPlan plan_for(const Volume4D& normalized, const seg::CropGeometry& g, bool use_roi);

/// Segments one frame onto the original grid: predict, LCCA on the crop, restore.
LabelVolume segment_frame(SegmentationModel& m, const Volume4D& normalized, const roi::CropPlan& plan, int frame);

class Analyzer {
 public:
  Analyzer(std::shared_ptr<SegmentationModel> seg, std::shared_ptr<const clf::ModelBundle> bundle)
      : seg_(std::move(seg)), bundle_(std::move(bundle)) {}

  /// Not thread-safe; callers serialize access.
  AnalysisResult analyze(const Volume4D& image, const StudyMeta& meta);

 private:
  std::shared_ptr<SegmentationModel> seg_;
  std::shared_ptr<const clf::ModelBundle> bundle_;
};

}  // namespace cardiac
