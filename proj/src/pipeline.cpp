#include "cardiac/pipeline.hpp"

#include <chrono>
#include <json.hpp>

#include "cardiac/postproc.hpp"
#include "cardiac/train.hpp"

namespace cardiac {

std::string_view explanation_for(clf::Diagnosis d) {
  switch (d) {
    case clf::Diagnosis::DCM:
      return "The left ventricle is enlarged and its walls are uniformly thin, and it empties poorly with each beat "
             "(low ejection fraction). This pattern is typical of dilated cardiomyopathy. A cardiologist should "
             "review the result together with your symptoms and other tests.";
    case clf::Diagnosis::MINF:
      return "The heart muscle shows a localized region that is much thinner than the rest of the wall, and the "
             "pumping function is reduced. Uneven thinning like this is typical of scarring after a previous "
             "myocardial infarction (heart attack). Please discuss the result with a cardiologist.";
    case clf::Diagnosis::HCM:
      return "The walls of the left ventricle are considerably thicker than usual while the cavity is small and "
             "empties vigorously. This pattern is typical of hypertrophic cardiomyopathy. A cardiologist can "
             "confirm the finding and advise on follow-up.";
    case clf::Diagnosis::NOR:
      return "Chamber sizes, wall thickness and pumping function are within the range expected for a healthy "
             "heart. No abnormal pattern was detected by the automated analysis.";
    case clf::Diagnosis::ARV:
      return "The right ventricle is enlarged and contracts weakly compared with the left ventricle. This pattern "
             "suggests an abnormal right ventricle. A cardiologist should review the images to determine the cause.";
  }
  return {};
}

std::string segmentation_metadata(bool use_roi, const std::string& loss, int epochs, std::uint64_t seed) {
  nlohmann::json j;
  j["roi"] = use_roi;
  j["loss"] = loss;
  j["epochs"] = epochs;
  j["seed"] = seed;
  return j.dump();
}

SegmentationModel load_segmentation_model(const std::filesystem::path& path) {
  auto [net, ck] = seg::load_checkpoint_file(path);
  bool use_roi = true;
  if (!ck.metadata_json.empty()) {
    const auto j = nlohmann::json::parse(ck.metadata_json, nullptr, false);
    if (j.is_object() && j.contains("roi") && j["roi"].is_boolean()) use_roi = j["roi"].get<bool>();
  }
  return SegmentationModel{std::move(net), std::move(ck), use_roi};
}

roi::RoiParams roi_params_for(const seg::CropGeometry& g, double dx) {
  roi::RoiParams p = roi::RoiParams{}.for_spacing(dx);
  p.patch = g.patch;
  p.target_depth = g.target_depth;
  p.depth_stride = g.depth_stride;
  return p;
}

roi::CropPlan plan_for(const Volume4D& normalized, const seg::CropGeometry& g, bool use_roi) {
  const auto p = roi_params_for(g, normalized.spacing().dx);
  int cx = normalized.nx() / 2, cy = normalized.ny() / 2;
  if (use_roi) {
    const auto est = roi::locate_lv_center(normalized, p);
    cx = est.cx;
    cy = est.cy;
  }
  return roi::plan_crops({normalized.nx(), normalized.ny(), normalized.nz()}, cx, cy, p);
}

LabelVolume segment_frame(SegmentationModel& m, const Volume4D& normalized, const roi::CropPlan& plan, int frame) {
  const auto pred = seg::predict_volume(m.net, normalized, plan, frame);
  return post::restore_to_original(post::lcca(pred.labels), plan);
}

namespace {

template <typename F>
auto run_stage(const char* stage, std::vector<StageTiming>& timings, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  auto record = [&] {
    timings.push_back({stage, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()});
  };
  try {
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      record();
    } else {
      auto r = f();
      record();
      return r;
    }
  } catch (const PipelineError&) {
    throw;
  } catch (const Error& e) {
    throw PipelineError(stage, e.code(), e.what());
  } catch (const std::exception& e) {
    throw PipelineError(stage, ErrorCode::InvalidArgument, e.what());
  }
}

}  // namespace

AnalysisResult Analyzer::analyze(const Volume4D& image, const StudyMeta& meta) {
  const auto t0 = std::chrono::steady_clock::now();
  AnalysisResult r;
  if (!seg_ || !bundle_) throw PipelineError("models", ErrorCode::UntrainedModel, "segmentation or classifier model missing");
  auto& model = *seg_;

  const auto norm = run_stage("normalize", r.timings, [&] {
    if (meta.ed_frame < 0 || meta.ed_frame >= image.nt())
      throw Error(ErrorCode::IndexOutOfRange, "ED frame index outside the series");
    if (meta.es_frame >= image.nt()) throw Error(ErrorCode::IndexOutOfRange, "ES frame index outside the series");
    return normalize_intensity(image);
  });
  r.plan = run_stage("roi", r.timings, [&] { return plan_for(norm, model.checkpoint.geometry, model.use_roi); });

  LabelVolume ed, es;
  run_stage("segmentation", r.timings, [&] {
    r.ed_frame = meta.ed_frame;
    ed = segment_frame(model, norm, r.plan, r.ed_frame);
    if (meta.es_frame >= 0) {
      r.es_frame = meta.es_frame;
      es = segment_frame(model, norm, r.plan, r.es_frame);
      return;
    }
    // Unknown ES: the frame whose segmented LV cavity is smallest.
    double best = std::numeric_limits<double>::infinity();
    for (int t = 0; t < image.nt(); ++t) {
      auto s = t == r.ed_frame ? ed : segment_frame(model, norm, r.plan, t);
      const double v = features::class_volume(s, kLV);
      if (v < best) {
        best = v;
        r.es_frame = t;
        es = std::move(s);
      }
    }
  });
  r.segmentation = run_stage("postproc", r.timings, [&] { return post::stack_phases(ed, es); });
  r.features = run_stage("features", r.timings, [&] { return features::extract_features(r.segmentation); });
  r.diagnosis = run_stage("classifier", r.timings, [&] { return clf::two_stage_predict(r.features.values, *bundle_); });
  r.explanation = std::string(explanation_for(r.diagnosis.final_label));
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace cardiac
