#include "cardiac/dataset.hpp"

#include "cardiac/nifti.hpp"
#include "cardiac/postproc.hpp"

namespace cardiac::data {

std::vector<Case> load_cohort(const std::filesystem::path& dir) {
  const auto bytes = nifti::read_file(dir / "manifest.csv");
  const auto entries = phantom::read_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  if (entries.empty()) throw Error(ErrorCode::EmptyDataset, "manifest lists no cases");
  std::vector<Case> out(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    auto& c = out[i];
    c.id = e.id;
    c.label = e.label;
    c.seed = e.seed;
    c.meta.ed_frame = e.ed_frame;
    c.meta.es_frame = e.es_frame;
    c.meta.patient_id = e.id;
    c.image = nifti::read(nifti::read_file(dir / (e.id + "_image.nii.gz")));
    c.truth = nifti::read_labels(nifti::read_file(dir / (e.id + "_truth.nii.gz")));
    c.center_x = c.center_y = -1.0;
    if (c.image.dims() != c.truth.dims()) throw Error(ErrorCode::ShapeMismatch, e.id + ": image and truth differ in shape");
  }
  return out;
}

std::vector<seg::Sample> training_crops(std::span<const Case> cases, const seg::CropGeometry& g, bool use_roi) {
  std::vector<seg::Sample> out;
  for (const auto& c : cases) {
    const auto norm = normalize_intensity(c.image);
    const auto plan = plan_for(norm, g, use_roi);
    for (int f : {c.meta.ed_frame, c.meta.es_frame})
      for (std::size_t w = 0; w < plan.depth_windows.size(); ++w)
        out.push_back(seg::make_sample(roi::apply_crop(norm.extract_frame(f), plan, w),
                                       roi::apply_crop(c.truth.extract_frame(f), plan, w)));
  }
  return out;
}

SegmentationScore score_segmentation(SegmentationModel& m, std::span<const Case> cases) {
  std::array<double, 4> inter{}, pred{}, truth{};
  double correct = 0, total = 0;
  for (const auto& c : cases) {
    const auto norm = normalize_intensity(c.image);
    const auto plan = plan_for(norm, m.checkpoint.geometry, m.use_roi);
    for (int f : {c.meta.ed_frame, c.meta.es_frame}) {
      const auto p = segment_frame(m, norm, plan, f);
      const auto t = c.truth.extract_frame(f);
      const auto pl = p.labels(), tl = t.labels();
      for (std::size_t i = 0; i < pl.size(); ++i) {
        pred[pl[i]] += 1;
        truth[tl[i]] += 1;
        if (pl[i] == tl[i]) {
          inter[pl[i]] += 1;
          correct += 1;
        }
      }
      total += static_cast<double>(pl.size());
    }
  }
  SegmentationScore s;
  for (int k = 0; k < 4; ++k) s.dice[k] = pred[k] + truth[k] == 0 ? 1.0 : 2 * inter[k] / (pred[k] + truth[k]);
  s.voxel_accuracy = total > 0 ? correct / total : 0.0;
  return s;
}

features::FeatureResult truth_features(const Case& c) {
  const int es = c.meta.es_frame >= 0 ? c.meta.es_frame : features::min_lv_frame(c.truth);
  return features::extract_features(post::stack_phases(c.truth.extract_frame(c.meta.ed_frame), c.truth.extract_frame(es)));
}

features::FeatureResult predicted_features(SegmentationModel& m, const Case& c) {
  const auto norm = normalize_intensity(c.image);
  const auto plan = plan_for(norm, m.checkpoint.geometry, m.use_roi);
  const int es = c.meta.es_frame >= 0 ? c.meta.es_frame : features::min_lv_frame(c.truth);
  return features::extract_features(
      post::stack_phases(segment_frame(m, norm, plan, c.meta.ed_frame), segment_frame(m, norm, plan, es)));
}

double accuracy(const Confusion& c) {
  double right = 0, all = 0;
  for (int i = 0; i < clf::kNumDiagnoses; ++i)
    for (int j = 0; j < clf::kNumDiagnoses; ++j) {
      all += c[i][j];
      if (i == j) right += c[i][j];
    }
  return all > 0 ? right / all : 0.0;
}

}  // namespace cardiac::data
