#pragma once

#include <memory>

#include "cardiac/dataset.hpp"
#include "cardiac/postproc.hpp"

namespace fixture {

using namespace cardiac;

/// Untrained desk-geometry segmentation net: enough to exercise every pipeline stage quickly.
inline std::shared_ptr<SegmentationModel> untrained_seg_model(std::uint64_t seed = 1) {
  seg::NetConfig nc;
  nc.levels = 2;
  nc.base_channels = 4;
  auto m = std::make_shared<SegmentationModel>(SegmentationModel{seg::UNet(nc, seed), {}, true});
  m->checkpoint.config = nc;
  m->checkpoint.geometry = seg::CropGeometry{48, 8, 4};
  return m;
}

/// Classifier bundle trained on truth-mask features of a small desk cohort.
inline std::shared_ptr<const clf::ModelBundle> small_bundle(std::uint64_t seed = 2) {
  clf::Matrix X;
  std::vector<clf::Diagnosis> y;
  for (const auto& c : phantom::generate_cohort(3, seed, phantom::desk_spec())) {
    const auto f = data::truth_features(c);
    X.emplace_back(f.values.begin(), f.values.end());
    y.push_back(c.label);
  }
  clf::ForestParams fp;
  fp.n_trees = 15;
  fp.seed = seed;
  return std::make_shared<const clf::ModelBundle>(clf::train_bundle(X, y, fp, clf::SvmParams{}));
}

}  // namespace fixture
