#include "cardiac/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cardiac/binary_io.hpp"
#include "cardiac/error.hpp"
#include "cardiac/nifti.hpp"
#include "cardiac/rng.hpp"

namespace cardiac::clf {

namespace {
constexpr std::array<std::string_view, kNumDiagnoses> kNames = {"DCM", "MINF", "HCM", "NOR", "ARV"};
}

std::string_view to_string(Diagnosis d) { return kNames.at(static_cast<int>(d)); }

Diagnosis parse_diagnosis(std::string_view s) {
  for (int i = 0; i < kNumDiagnoses; ++i)
    if (kNames[i] == s) return static_cast<Diagnosis>(i);
  throw Error(ErrorCode::InvalidArgument, "unknown diagnosis label '" + std::string(s) + "'");
}

void ForestParams::validate() const {
  if (n_trees < 1) throw Error(ErrorCode::InvalidArgument, "n_trees >= 1");
  if (min_split < 2) throw Error(ErrorCode::InvalidArgument, "min_split >= 2");
  if (features_per_split < 1) throw Error(ErrorCode::InvalidArgument, "features_per_split >= 1");
  if (max_depth < -1) throw Error(ErrorCode::InvalidArgument, "max_depth >= 0 or -1 for unlimited");
}

void SvmParams::validate() const {
  if (gamma < 0) throw Error(ErrorCode::InvalidArgument, "gamma > 0 (or 0 for the default)");
  if (!(C > 0)) throw Error(ErrorCode::InvalidArgument, "C > 0");
  if (!(tol > 0)) throw Error(ErrorCode::InvalidArgument, "smo tol > 0");
  if (max_iterations < 1) throw Error(ErrorCode::InvalidArgument, "max_iterations >= 1");
}

namespace {

int majority(const std::array<std::uint32_t, kNumDiagnoses>& counts) {
  int best = 0;
  for (int c = 1; c < kNumDiagnoses; ++c)
    if (counts[c] > counts[best]) best = c;
  return best;
}

void check_dataset(const Matrix& X, std::size_t n_labels, int* dims) {
  if (X.empty()) throw Error(ErrorCode::EmptyDataset, "no training rows");
  if (X.size() != n_labels) throw Error(ErrorCode::ShapeMismatch, "row and label counts differ");
  *dims = static_cast<int>(X.front().size());
  if (*dims == 0) throw Error(ErrorCode::ShapeMismatch, "rows have no features");
  for (const auto& row : X) {
    if (static_cast<int>(row.size()) != *dims) throw Error(ErrorCode::ShapeMismatch, "ragged feature matrix");
    for (double v : row)
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteFeature, "non-finite training feature");
  }
}

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& X, const std::vector<Diagnosis>& y, const ForestParams& p, std::uint64_t seed)
      : X_(X), y_(y), p_(p), rng_(seed), d_(static_cast<int>(X.front().size())) {}

  Tree build(std::vector<int> rows) {
    Tree t;
    grow(t, rows, 0);
    return t;
  }

 private:
  std::int32_t grow(Tree& t, std::vector<int>& rows, int depth) {
    const auto id = static_cast<std::int32_t>(t.nodes.size());
    t.nodes.emplace_back();
    std::array<std::uint32_t, kNumDiagnoses> counts{};
    for (int r : rows) ++counts[static_cast<int>(y_[r])];
    t.nodes[id].counts = counts;

    const int distinct = static_cast<int>(std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }));
    if (distinct <= 1 || static_cast<int>(rows.size()) < p_.min_split || (p_.max_depth >= 0 && depth >= p_.max_depth))
      return id;

    // Random feature subset via partial Fisher-Yates.
    std::vector<int> feats(d_);
    std::iota(feats.begin(), feats.end(), 0);
    const int k = std::min(p_.features_per_split, d_);
    for (int i = 0; i < k; ++i) {
      std::uniform_int_distribution<int> pick(i, d_ - 1);
      std::swap(feats[i], feats[pick(rng_)]);
    }

    const double n = static_cast<double>(rows.size());
    double best_impurity = std::numeric_limits<double>::infinity();
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<int> order(rows);
    for (int fi = 0; fi < k; ++fi) {
      const int f = feats[fi];
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return X_[a][f] < X_[b][f]; });
      std::array<double, kNumDiagnoses> left{}, right{};
      for (int r : order) right[static_cast<int>(y_[r])] += 1;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const int cls = static_cast<int>(y_[order[i]]);
        left[cls] += 1;
        right[cls] -= 1;
        const double a = X_[order[i]][f], b = X_[order[i + 1]][f];
        if (!(a < b)) continue;
        const double nl = static_cast<double>(i + 1), nr = n - nl;
        double gl = 1.0, gr = 1.0;
        for (int c = 0; c < kNumDiagnoses; ++c) {
          gl -= (left[c] / nl) * (left[c] / nl);
          gr -= (right[c] / nr) * (right[c] / nr);
        }
        const double impurity = (nl * gl + nr * gr) / n;
        if (impurity < best_impurity) {
          best_impurity = impurity;
          best_feature = f;
          best_threshold = a + (b - a) / 2.0;
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<int> lrows, rrows;
    for (int r : rows) (X_[r][best_feature] <= best_threshold ? lrows : rrows).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const auto l = grow(t, lrows, depth + 1);
    const auto r = grow(t, rrows, depth + 1);
    t.nodes[id].feature = best_feature;
    t.nodes[id].threshold = best_threshold;
    t.nodes[id].left = l;
    t.nodes[id].right = r;
    return id;
  }

  const Matrix& X_;
  const std::vector<Diagnosis>& y_;
  const ForestParams& p_;
  std::mt19937_64 rng_;
  int d_;
};

}  // namespace

Diagnosis Tree::predict(std::span<const double> x) const {
  std::int32_t i = 0;
  while (nodes[i].feature >= 0) i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  return static_cast<Diagnosis>(majority(nodes[i].counts));
}

int Tree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (nodes[i].feature >= 0) {
      d[nodes[i].left] = d[i] + 1;
      d[nodes[i].right] = d[i] + 1;
    }
  }
  return best;
}

Forest train_forest(const Matrix& X, const std::vector<Diagnosis>& y, const ForestParams& p) {
  p.validate();
  int d = 0;
  check_dataset(X, y.size(), &d);
  if (std::all_of(y.begin(), y.end(), [&](Diagnosis v) { return v == y.front(); }))
    throw Error(ErrorCode::SingleClassDataset, "forest needs at least two classes");

  Forest f;
  f.n_features = d;
  f.trees.resize(p.n_trees);
  const int n = static_cast<int>(X.size());
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < p.n_trees; ++t) {
    const auto seed = child_seed(p.seed, static_cast<std::uint64_t>(t));
    std::mt19937_64 boot(seed);
    std::uniform_int_distribution<int> pick(0, n - 1);
    std::vector<int> rows(n);
    for (auto& r : rows) r = pick(boot);
    TreeBuilder builder(X, y, p, splitmix64(seed));
    f.trees[t] = builder.build(std::move(rows));
  }
  return f;
}

ForestPrediction forest_predict(const Forest& f, std::span<const double> x) {
  if (!f.trained()) throw Error(ErrorCode::UntrainedModel, "forest has no trees");
  if (static_cast<int>(x.size()) != f.n_features) throw Error(ErrorCode::ShapeMismatch, "feature count differs from training");
  std::array<std::uint32_t, kNumDiagnoses> votes{};
  for (const auto& t : f.trees) ++votes[static_cast<int>(t.predict(x))];
  ForestPrediction out;
  for (int c = 0; c < kNumDiagnoses; ++c) out.probabilities[c] = static_cast<double>(votes[c]) / f.trees.size();
  out.label = static_cast<Diagnosis>(majority(votes));
  return out;
}

namespace {

double rbf(std::span<const double> a, std::span<const double> b, double gamma) {
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-gamma * d2);
}

double binary_target(Diagnosis d) {
  if (d == Diagnosis::MINF) return 1.0;
  if (d == Diagnosis::DCM) return -1.0;
  throw Error(ErrorCode::InvalidArgument, "expert SVM accepts only MINF and DCM labels");
}

std::vector<double> standardize(const SvmModel& m, std::span<const double> x) {
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - m.mean[i]) / m.scale[i];
  return z;
}

}  // namespace

SvmFit train_svm(const Matrix& X, const std::vector<Diagnosis>& labels, const SvmParams& p) {
  p.validate();
  int d = 0;
  check_dataset(X, labels.size(), &d);
  const int n = static_cast<int>(X.size());
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) y[i] = binary_target(labels[i]);
  if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); }))
    throw Error(ErrorCode::SingleClassDataset, "SVM needs both MINF and DCM samples");

  SvmFit fit;
  SvmModel& m = fit.model;
  m.mean.assign(d, 0.0);
  m.scale.assign(d, 1.0);
  for (int j = 0; j < d; ++j) {
    double mu = 0.0;
    for (int i = 0; i < n; ++i) mu += X[i][j];
    mu /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) var += (X[i][j] - mu) * (X[i][j] - mu);
    var /= n;
    m.mean[j] = mu;
    m.scale[j] = var > 0 ? std::sqrt(var) : 1.0;
  }
  Matrix Z(n);
  for (int i = 0; i < n; ++i) Z[i] = standardize(m, X[i]);

  if (p.gamma > 0) {
    m.gamma = p.gamma;
  } else {
    double pooled = 0.0;
    for (int j = 0; j < d; ++j) {
      double mu = 0.0, var = 0.0;
      for (int i = 0; i < n; ++i) mu += Z[i][j];
      mu /= n;
      for (int i = 0; i < n; ++i) var += (Z[i][j] - mu) * (Z[i][j] - mu);
      pooled += var / n;
    }
    pooled /= d;
    m.gamma = 1.0 / (2.0 * d * (pooled > 0 ? pooled : 1.0));
  }
  m.C = p.C;

  std::vector<double> K(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) K[i * n + j] = K[j * n + i] = rbf(Z[i], Z[j], m.gamma);

  // Dual: minimize 1/2 a'Qa - e'a with Q_ij = y_i y_j K_ij; maximal-violating-pair SMO.
  std::vector<double> alpha(n, 0.0), G(n, -1.0);
  const double C = p.C;
  double gmax = 0.0, gmin = 0.0;
  long iter = 0;
  while (true) {
    int i = -1, j = -1;
    gmax = -std::numeric_limits<double>::infinity();
    gmin = std::numeric_limits<double>::infinity();
    for (int t = 0; t < n; ++t) {
      const double f = -y[t] * G[t];
      const bool up = (y[t] > 0 && alpha[t] < C) || (y[t] < 0 && alpha[t] > 0);
      const bool low = (y[t] < 0 && alpha[t] < C) || (y[t] > 0 && alpha[t] > 0);
      if (up && f > gmax) {
        gmax = f;
        i = t;
      }
      if (low && f < gmin) {
        gmin = f;
        j = t;
      }
    }
    if (i < 0 || j < 0 || gmax - gmin <= p.tol) break;
    if (++iter > p.max_iterations) throw Error(ErrorCode::NoConvergence, "SMO exceeded the iteration budget");

    const double Qij = y[i] * y[j] * K[i * n + j];
    const double Qii = K[i * n + i], Qjj = K[j * n + j];
    const double ai = alpha[i], aj = alpha[j];
    if (y[i] != y[j]) {
      double quad = Qii + Qjj + 2 * Qij;
      if (quad <= 0) quad = 1e-12;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) {
          alpha[j] = 0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = -diff;
      }
      if (diff > 0) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = C - diff;
        }
      } else if (alpha[j] > C) {
        alpha[j] = C;
        alpha[i] = C + diff;
      }
    } else {
      double quad = Qii + Qjj - 2 * Qij;
      if (quad <= 0) quad = 1e-12;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = sum - C;
        }
        if (alpha[j] > C) {
          alpha[j] = C;
          alpha[i] = sum - C;
        }
      } else {
        if (alpha[j] < 0) {
          alpha[j] = 0;
          alpha[i] = sum;
        }
        if (alpha[i] < 0) {
          alpha[i] = 0;
          alpha[j] = sum;
        }
      }
    }
    const double dai = alpha[i] - ai, daj = alpha[j] - aj;
    for (int t = 0; t < n; ++t) G[t] += y[t] * (y[i] * K[i * n + t] * dai + y[j] * K[j * n + t] * daj);
  }

  m.bias = (gmax + gmin) / 2.0;
  for (int i = 0; i < n; ++i)
    if (alpha[i] > 0) {
      m.support_vectors.push_back(Z[i]);
      m.coefficients.push_back(alpha[i] * y[i]);
    }
  fit.alpha = std::move(alpha);
  fit.iterations = iter;
  return fit;
}

SvmPrediction svm_predict(const SvmModel& m, std::span<const double> x) {
  if (!m.trained()) throw Error(ErrorCode::UntrainedModel, "SVM is not trained");
  if (static_cast<int>(x.size()) != m.dims()) throw Error(ErrorCode::ShapeMismatch, "SVM feature count");
  const auto z = standardize(m, x);
  double f = m.bias;
  for (std::size_t i = 0; i < m.support_vectors.size(); ++i) f += m.coefficients[i] * rbf(m.support_vectors[i], z, m.gamma);
  return {f > 0 ? Diagnosis::MINF : Diagnosis::DCM, f};
}

double kkt_violation(const SvmFit& fit, const Matrix& X, const std::vector<Diagnosis>& y) {
  const double C = fit.model.C;
  double worst = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double margin = binary_target(y[i]) * svm_predict(fit.model, X[i]).decision;
    const double a = fit.alpha.at(i);
    double v;
    if (a <= 0)
      v = std::max(0.0, 1.0 - margin);
    else if (a >= C)
      v = std::max(0.0, margin - 1.0);
    else
      v = std::abs(margin - 1.0);
    worst = std::max(worst, v);
  }
  return worst;
}

ModelBundle train_bundle(const Matrix& X, const std::vector<Diagnosis>& y, const ForestParams& fp,
                         const SvmParams& sp, std::array<int, 2> expert_features) {
  ModelBundle b;
  b.expert_features = expert_features;
  b.forest = train_forest(X, y, fp);
  for (int f : expert_features)
    if (f < 0 || f >= b.forest.n_features) throw Error(ErrorCode::InvalidArgument, "expert feature index out of range");
  Matrix X2;
  std::vector<Diagnosis> y2;
  for (std::size_t i = 0; i < X.size(); ++i)
    if (y[i] == Diagnosis::MINF || y[i] == Diagnosis::DCM) {
      X2.push_back({X[i][expert_features[0]], X[i][expert_features[1]]});
      y2.push_back(y[i]);
    }
  if (X2.empty()) throw Error(ErrorCode::SingleClassDataset, "no MINF or DCM samples for the expert SVM");
  b.svm = train_svm(X2, y2, sp).model;
  return b;
}

TwoStageResult two_stage_predict(std::span<const double> x, const ModelBundle& b) {
  for (double v : x)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteFeature, "non-finite feature");
  const auto initial = forest_predict(b.forest, x);
  TwoStageResult r;
  r.initial_label = initial.label;
  r.final_label = initial.label;
  r.probabilities = initial.probabilities;
  if (initial.label == Diagnosis::MINF || initial.label == Diagnosis::DCM) {
    const std::array<double, 2> x2{x[b.expert_features[0]], x[b.expert_features[1]]};
    const auto s = svm_predict(b.svm, x2);
    r.final_label = s.label;
    r.expert_decision = s.decision;
    r.expert_used = true;
  }
  return r;
}

namespace {
constexpr std::array<std::uint8_t, 8> kMagic = {'C', 'A', 'R', 'D', 'C', 'L', 'F', 0};
}

std::vector<std::uint8_t> save_bundle(const ModelBundle& b) {
  if (!b.forest.trained() || !b.svm.trained()) throw Error(ErrorCode::UntrainedModel, "bundle is not trained");
  bin::Writer w;
  w.put_bytes(kMagic);
  w.put<std::uint32_t>(b.version);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(b.forest.n_features));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(b.forest.trees.size()));
  for (const auto& t : b.forest.trees) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.nodes.size()));
    for (const auto& n : t.nodes) {
      w.put<std::int32_t>(n.feature);
      w.put<double>(n.threshold);
      w.put<std::int32_t>(n.left);
      w.put<std::int32_t>(n.right);
      for (auto c : n.counts) w.put<std::uint32_t>(c);
    }
  }
  const auto& s = b.svm;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.dims()));
  for (int j = 0; j < s.dims(); ++j) {
    w.put<double>(s.mean[j]);
    w.put<double>(s.scale[j]);
  }
  w.put<double>(s.gamma);
  w.put<double>(s.C);
  w.put<double>(s.bias);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.support_vectors.size()));
  for (std::size_t i = 0; i < s.support_vectors.size(); ++i) {
    for (double v : s.support_vectors[i]) w.put<double>(v);
    w.put<double>(s.coefficients[i]);
  }
  w.put<std::int32_t>(b.expert_features[0]);
  w.put<std::int32_t>(b.expert_features[1]);
  return w.finish();
}

ModelBundle load_bundle(std::span<const std::uint8_t> bytes) {
  bin::Reader r(bytes, ErrorCode::CorruptBundle);
  r.expect_bytes(kMagic, ErrorCode::CorruptBundle, "not a model bundle");
  const auto version = r.get<std::uint32_t>();
  if (version != kBundleVersion)
    throw Error(ErrorCode::VersionMismatch, "bundle version " + std::to_string(version) + ", expected " +
                                                std::to_string(kBundleVersion));
  bin::Reader body(bytes, ErrorCode::CorruptBundle);
  body.verify_checksum();
  body.expect_bytes(kMagic, ErrorCode::CorruptBundle, "not a model bundle");
  body.get<std::uint32_t>();

  ModelBundle b;
  b.version = version;
  b.forest.n_features = static_cast<int>(body.get<std::uint32_t>());
  if (b.forest.n_features < 1 || b.forest.n_features > 4096) body.fail("feature count");
  const auto n_trees = body.get<std::uint32_t>();
  if (n_trees < 1 || n_trees > body.remaining()) body.fail("tree count");
  b.forest.trees.resize(n_trees);
  constexpr std::size_t kNodeBytes = 4 + 8 + 4 + 4 + 4 * kNumDiagnoses;
  for (auto& t : b.forest.trees) {
    const auto n_nodes = body.get<std::uint32_t>();
    if (n_nodes < 1 || n_nodes > body.remaining() / kNodeBytes) body.fail("node count");
    t.nodes.resize(n_nodes);
    for (std::uint32_t i = 0; i < n_nodes; ++i) {
      auto& n = t.nodes[i];
      n.feature = body.get<std::int32_t>();
      n.threshold = body.get<double>();
      n.left = body.get<std::int32_t>();
      n.right = body.get<std::int32_t>();
      for (auto& c : n.counts) c = body.get<std::uint32_t>();
      if (n.feature >= b.forest.n_features) body.fail("node feature index");
      // Children always follow their parent, which also rules out cycles.
      if (n.feature >= 0 && (n.left <= static_cast<std::int32_t>(i) || n.right <= static_cast<std::int32_t>(i) ||
                             n.left >= static_cast<std::int32_t>(n_nodes) || n.right >= static_cast<std::int32_t>(n_nodes)))
        body.fail("node child index");
    }
  }
  auto& s = b.svm;
  const auto d = body.get<std::uint32_t>();
  if (d < 1 || d > 64) body.fail("svm dims");
  for (std::uint32_t j = 0; j < d; ++j) {
    s.mean.push_back(body.get<double>());
    s.scale.push_back(body.get<double>());
  }
  s.gamma = body.get<double>();
  s.C = body.get<double>();
  s.bias = body.get<double>();
  const auto nsv = body.get<std::uint32_t>();
  if (nsv > body.remaining() / (8 * (d + 1))) body.fail("support vector count");
  for (std::uint32_t i = 0; i < nsv; ++i) {
    std::vector<double> v(d);
    for (auto& x : v) x = body.get<double>();
    s.support_vectors.push_back(std::move(v));
    s.coefficients.push_back(body.get<double>());
  }
  b.expert_features[0] = body.get<std::int32_t>();
  b.expert_features[1] = body.get<std::int32_t>();
  for (int f : b.expert_features)
    if (f < 0 || f >= b.forest.n_features) body.fail("expert feature index");
  if (d != 2) body.fail("expert SVM must be two-dimensional");
  if (body.remaining() != 0) body.fail("trailing bytes");
  return b;
}

void save_bundle_file(const std::filesystem::path& path, const ModelBundle& b) { nifti::write_file(path, save_bundle(b)); }

ModelBundle load_bundle_file(const std::filesystem::path& path) { return load_bundle(nifti::read_file(path)); }

}  // namespace cardiac::clf
