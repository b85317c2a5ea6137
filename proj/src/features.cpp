#include "cardiac/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "cardiac/error.hpp"

namespace cardiac::features {

const std::array<std::string_view, kNumFeatures>& feature_names() {
  static const std::array<std::string_view, kNumFeatures> names = {
      "lv_vol_ed",       "lv_vol_es",       "rv_vol_ed",       "rv_vol_es",       "myo_vol_ed",
      "myo_vol_es",      "lv_ef",           "rv_ef",           "lv_rv_ratio_ed",  "lv_rv_ratio_es",
      "myo_lv_ratio_ed", "myo_lv_ratio_es", "mwt_max_mean_ed", "mwt_max_mean_es", "mwt_std_mean_ed",
      "mwt_std_mean_es", "mwt_mean_std_ed", "mwt_mean_std_es", "mwt_std_std_ed",  "mwt_std_std_es",
  };
  return names;
}

double class_volume(const LabelVolume& labels, int class_id, int t) {
  if (class_id < 1 || class_id > 3) throw Error(ErrorCode::InvalidArgument, "class id must be 1, 2 or 3");
  if (t < 0 || t >= labels.nt()) throw Error(ErrorCode::IndexOutOfRange, "frame index");
  const std::size_t n = static_cast<std::size_t>(labels.nx()) * labels.ny() * labels.nz();
  const auto frame = labels.labels().subspan(n * t, n);
  const auto count = std::count(frame.begin(), frame.end(), static_cast<std::uint8_t>(class_id));
  return static_cast<double>(count) * labels.spacing().voxel_mm3() / 1000.0;
}

EjectionFraction ejection_fraction(double edv, double esv) {
  if (edv < 0 || esv < 0) throw Error(ErrorCode::InvalidArgument, "volumes must be non-negative");
  if (edv == 0.0) return {0.0, true};
  return {100.0 * (edv - esv) / edv, false};
}

SliceLabels slice_of(const LabelVolume& v, int z, int t) {
  const std::size_t plane = static_cast<std::size_t>(v.nx()) * v.ny();
  return {v.nx(), v.ny(), v.labels().subspan(v.offset(0, 0, z, t), plane)};
}

namespace {

constexpr int kDx[4] = {-1, 1, 0, 0};
constexpr int kDy[4] = {0, 0, -1, 1};

bool outside_wall(const SliceLabels& s, int x, int y) {
  if (x < 0 || y < 0 || x >= s.nx || y >= s.ny) return true;
  const auto l = s.at(x, y);
  return l != kMyo && l != kLV;
}

bool is_lv(const SliceLabels& s, int x, int y) {
  return x >= 0 && y >= 0 && x < s.nx && y < s.ny && s.at(x, y) == kLV;
}

}  // namespace

Contours myo_contours(const SliceLabels& s) {
  Contours c;
  for (int y = 0; y < s.ny; ++y)
    for (int x = 0; x < s.nx; ++x) {
      if (s.at(x, y) != kMyo) continue;
      bool inner = false, outer = false;
      for (int k = 0; k < 4; ++k) {
        inner |= is_lv(s, x + kDx[k], y + kDy[k]);
        outer |= outside_wall(s, x + kDx[k], y + kDy[k]);
      }
      if (inner) c.inner.push_back({x, y});
      if (outer) c.outer.push_back({x, y});
    }
  return c;
}

double population_std(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double a : v) mean += a;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double a : v) ss += (a - mean) * (a - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

std::optional<SliceThickness> slice_wall_thickness(const SliceLabels& s, double dx, double dy,
                                                   const ThicknessConfig& cfg) {
  const auto myo = std::count(s.labels.begin(), s.labels.end(), static_cast<std::uint8_t>(kMyo));
  if (myo < cfg.min_myo_pixels) return std::nullopt;
  const auto c = myo_contours(s);
  if (c.inner.empty() || c.outer.empty()) return std::nullopt;

  struct Point {
    double x, y;
  };
  std::vector<Point> inner, outer;
  for (const auto& p : c.inner)
    for (int k = 0; k < 4; ++k)
      if (is_lv(s, p.x + kDx[k], p.y + kDy[k])) inner.push_back({(p.x + 0.5 * kDx[k]) * dx, (p.y + 0.5 * kDy[k]) * dy});
  for (const auto& p : c.outer)
    for (int k = 0; k < 4; ++k)
      if (outside_wall(s, p.x + kDx[k], p.y + kDy[k]))
        outer.push_back({(p.x + 0.5 * kDx[k]) * dx, (p.y + 0.5 * kDy[k]) * dy});

  std::vector<double> thickness;
  thickness.reserve(inner.size());
  for (const auto& a : inner) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : outer) best = std::min(best, (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y));
    thickness.push_back(std::sqrt(best));
  }
  SliceThickness out;
  double sum = 0.0;
  for (double t : thickness) sum += t;
  out.mean_mwt = sum / static_cast<double>(thickness.size());
  out.std_mwt = population_std(thickness);
  out.n_samples = static_cast<int>(thickness.size());
  return out;
}

MwtStatistics mwt_statistics(const LabelVolume& labels, int t, const ThicknessConfig& cfg) {
  if (t < 0 || t >= labels.nt()) throw Error(ErrorCode::IndexOutOfRange, "frame index");
  MwtStatistics m;
  for (int z = 0; z < labels.nz(); ++z) {
    auto st = slice_wall_thickness(slice_of(labels, z, t), labels.spacing().dx, labels.spacing().dy, cfg);
    if (!st) continue;
    st->slice = z;
    m.slices.push_back(*st);
  }
  if (m.slices.empty()) throw Error(ErrorCode::NoMeasurableSlices, "no slice has a measurable myocardial wall");
  std::vector<double> means, stds;
  for (const auto& s : m.slices) {
    means.push_back(s.mean_mwt);
    stds.push_back(s.std_mwt);
  }
  m.max_of_means = *std::max_element(means.begin(), means.end());
  m.std_of_means = population_std(means);
  double sum = 0.0;
  for (double v : stds) sum += v;
  m.mean_of_stds = sum / static_cast<double>(stds.size());
  m.std_of_stds = population_std(stds);
  return m;
}

FeatureResult extract_features(const LabelVolume& seg4d, const ThicknessConfig& cfg) {
  if (seg4d.nt() != 2) throw Error(ErrorCode::ShapeMismatch, "expected a two-frame (ED, ES) label volume");
  FeatureResult r;
  auto& f = r.values;
  f[kLvVolEd] = class_volume(seg4d, kLV, 0);
  f[kLvVolEs] = class_volume(seg4d, kLV, 1);
  f[kRvVolEd] = class_volume(seg4d, kRV, 0);
  f[kRvVolEs] = class_volume(seg4d, kRV, 1);
  f[kMyoVolEd] = class_volume(seg4d, kMyo, 0);
  f[kMyoVolEs] = class_volume(seg4d, kMyo, 1);

  const auto lv_ef = ejection_fraction(f[kLvVolEd], f[kLvVolEs]);
  const auto rv_ef = ejection_fraction(f[kRvVolEd], f[kRvVolEs]);
  f[kLvEf] = lv_ef.percent;
  f[kRvEf] = rv_ef.percent;
  if (lv_ef.degenerate) r.warnings.push_back("DegenerateVolume: LV end-diastolic volume is 0");
  if (rv_ef.degenerate) r.warnings.push_back("DegenerateVolume: RV end-diastolic volume is 0");

  auto ratio = [&](double num, double den, const char* name) {
    if (den == 0.0) {
      r.warnings.push_back(std::string("DegenerateVolume: zero denominator in ") + name);
      return 0.0;
    }
    return num / den;
  };
  f[kLvRvRatioEd] = ratio(f[kLvVolEd], f[kRvVolEd], "lv_rv_ratio_ed");
  f[kLvRvRatioEs] = ratio(f[kLvVolEs], f[kRvVolEs], "lv_rv_ratio_es");
  f[kMyoLvRatioEd] = ratio(f[kMyoVolEd], f[kLvVolEd], "myo_lv_ratio_ed");
  f[kMyoLvRatioEs] = ratio(f[kMyoVolEs], f[kLvVolEs], "myo_lv_ratio_es");

  for (int t = 0; t < 2; ++t) {
    try {
      const auto m = mwt_statistics(seg4d, t, cfg);
      f[kMwtMaxMeanEd + t] = m.max_of_means;
      f[kMwtStdMeanEd + t] = m.std_of_means;
      f[kMwtMeanStdEd + t] = m.mean_of_stds;
      f[kMwtStdStdEd + t] = m.std_of_stds;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoMeasurableSlices) throw;
      r.warnings.push_back(std::string(e.what()) + (t == 0 ? " (ED)" : " (ES)"));
    }
  }
  return r;
}

int min_lv_frame(const LabelVolume& seg) {
  int best = 0;
  double best_v = std::numeric_limits<double>::infinity();
  for (int t = 0; t < seg.nt(); ++t) {
    const double v = class_volume(seg, kLV, t);
    if (v < best_v) {
      best_v = v;
      best = t;
    }
  }
  return best;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::string write_feature_csv(const std::vector<FeatureRow>& rows) {
  const bool labelled = std::any_of(rows.begin(), rows.end(), [](const FeatureRow& r) { return r.label.has_value(); });
  std::string out = "study_id";
  for (auto n : feature_names()) {
    out += ',';
    out += n;
  }
  if (labelled) out += ",label";
  out += '\n';
  for (const auto& r : rows) {
    if (r.study_id.find_first_of(",\n") != std::string::npos)
      throw Error(ErrorCode::InvalidArgument, "study id may not contain commas or newlines");
    out += r.study_id;
    for (double v : r.values) {
      out += ',';
      out += format_double(v);
    }
    if (labelled) {
      out += ',';
      out += r.label.value_or("");
    }
    out += '\n';
  }
  return out;
}

std::vector<FeatureRow> read_feature_csv(std::string_view text) {
  std::vector<FeatureRow> rows;
  std::size_t pos = 0;
  bool header = true, labelled = false;
  int line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (header) {
      if (cells.size() < kNumFeatures + 1 || cells[0] != "study_id")
        throw Error(ErrorCode::InvalidArgument, "feature CSV header must start with study_id and the 20 feature names");
      for (int i = 0; i < kNumFeatures; ++i)
        if (cells[i + 1] != feature_names()[i])
          throw Error(ErrorCode::InvalidArgument, "unexpected feature column " + std::string(cells[i + 1]));
      labelled = cells.size() == kNumFeatures + 2 && cells.back() == "label";
      if (cells.size() != kNumFeatures + 1 + (labelled ? 1 : 0))
        throw Error(ErrorCode::InvalidArgument, "unexpected feature CSV columns");
      header = false;
      continue;
    }
    if (cells.size() != kNumFeatures + 1 + (labelled ? 1u : 0u))
      throw Error(ErrorCode::InvalidArgument, "wrong cell count on line " + std::to_string(line_no));
    FeatureRow r;
    r.study_id = std::string(cells[0]);
    for (int i = 0; i < kNumFeatures; ++i) {
      const auto cell = cells[i + 1];
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), r.values[i]);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw Error(ErrorCode::InvalidArgument, "bad number on line " + std::to_string(line_no));
      if (!std::isfinite(r.values[i]))
        throw Error(ErrorCode::NonFiniteFeature, "non-finite feature on line " + std::to_string(line_no));
    }
    if (labelled && !cells.back().empty()) r.label = std::string(cells.back());
    rows.push_back(std::move(r));
  }
  if (header) throw Error(ErrorCode::InvalidArgument, "empty feature CSV");
  return rows;
}

}  // namespace cardiac::features
