#pragma once

// Two-stage diagnosis: a random forest over all features, then an RBF-SVM that
// re-adjudicates MINF/DCM calls from two wall-thickness features.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace cardiac::clf {

enum class Diagnosis : std::uint8_t { DCM = 0, MINF = 1, HCM = 2, NOR = 3, ARV = 4 };
inline constexpr int kNumDiagnoses = 5;

std::string_view to_string(Diagnosis d);
Diagnosis parse_diagnosis(std::string_view s);

using Matrix = std::vector<std::vector<double>>;
using Probabilities = std::array<double, kNumDiagnoses>;

struct ForestParams {
  int n_trees = 100;
  int max_depth = -1;  // unlimited
  int min_split = 2;
  int features_per_split = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // go left when x[feature] <= threshold
  std::int32_t left = -1, right = -1;
  std::array<std::uint32_t, kNumDiagnoses> counts{};
};

struct Tree {
  std::vector<TreeNode> nodes;

  /// Majority class of the reached leaf, ties to the fixed class order.
  Diagnosis predict(std::span<const double> x) const;
  int depth() const;
};

struct Forest {
  int n_features = 0;
  std::vector<Tree> trees;

  bool trained() const { return !trees.empty(); }
};

Forest train_forest(const Matrix& X, const std::vector<Diagnosis>& y, const ForestParams& p);

struct ForestPrediction {
  Diagnosis label = Diagnosis::DCM;
  Probabilities probabilities{};
};
ForestPrediction forest_predict(const Forest& f, std::span<const double> x);

struct SvmParams {
  double gamma = 0.0;  // 0 selects 1 / (2 d pooled variance) of the standardized training data
  double C = 1.0;
  double tol = 1e-3;
  long max_iterations = 1'000'000;

  void validate() const;
};

/// Binary RBF-SVM; +1 is MINF, -1 is DCM.
struct SvmModel {
  std::vector<double> mean, scale;     // standardization
  double gamma = 0.0;
  double C = 0.0;
  double bias = 0.0;
  Matrix support_vectors;              // standardized
  std::vector<double> coefficients;    // alpha_i * y_i

  bool trained() const { return !mean.empty(); }
  int dims() const { return static_cast<int>(mean.size()); }
};

struct SvmFit {
  SvmModel model;
  std::vector<double> alpha;  // one dual per training point
  long iterations = 0;
};

SvmFit train_svm(const Matrix& X, const std::vector<Diagnosis>& y, const SvmParams& p);

struct SvmPrediction {
  Diagnosis label = Diagnosis::DCM;
  double decision = 0.0;
};
SvmPrediction svm_predict(const SvmModel& m, std::span<const double> x);

/// Largest KKT violation over the training set (0 when every condition holds exactly).
double kkt_violation(const SvmFit& fit, const Matrix& X, const std::vector<Diagnosis>& y);

inline constexpr std::uint32_t kBundleVersion = 1;

struct ModelBundle {
  Forest forest;
  SvmModel svm;
  std::array<int, 2> expert_features{13, 17};  // zero-based: ES max of slice means, ES mean of slice stds
  std::uint32_t version = kBundleVersion;
};

/// Alternative expert pair: ED std of slice means and ED mean of slice stds.
inline constexpr std::array<int, 2> kAlternateExpertFeatures{14, 16};

ModelBundle train_bundle(const Matrix& X, const std::vector<Diagnosis>& y, const ForestParams& fp,
                         const SvmParams& sp, std::array<int, 2> expert_features = {13, 17});

struct TwoStageResult {
  Diagnosis final_label = Diagnosis::DCM;
  Diagnosis initial_label = Diagnosis::DCM;
  Probabilities probabilities{};
  bool expert_used = false;
  double expert_decision = 0.0;
};
TwoStageResult two_stage_predict(std::span<const double> x, const ModelBundle& b);

std::vector<std::uint8_t> save_bundle(const ModelBundle& b);
ModelBundle load_bundle(std::span<const std::uint8_t> bytes);
void save_bundle_file(const std::filesystem::path& path, const ModelBundle& b);
ModelBundle load_bundle_file(const std::filesystem::path& path);

}  // namespace cardiac::clf
