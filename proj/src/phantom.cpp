#include "cardiac/phantom.hpp"

#include <charconv>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "cardiac/error.hpp"
#include "cardiac/nifti.hpp"
#include "cardiac/rng.hpp"

namespace cardiac::phantom {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr float kBackgroundLevel = 0.1f, kMuscleLevel = 0.5f, kBloodLevel = 0.9f;

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2 * kPi);
  if (a < 0) a += 2 * kPi;
  return a - kPi;
}

struct Frame {
  double taper;
  double cavity;       // px
  double cavity_ed;    // px, this slice at ED
  double epi_nominal;  // px, ED epicardium of the nominal wall
  double rv_offset, rv_radius;
};

}  // namespace

void PhantomSpec::validate() const {
  for (int d : dims)
    if (d < 1) throw Error(ErrorCode::InvalidArgument, "phantom dims must be positive");
  if (dims[3] < 2) throw Error(ErrorCode::InvalidArgument, "phantom needs at least two frames");
  if (!spacing.valid()) throw Error(ErrorCode::NonPositiveSpacing, "phantom spacing");
  if (!(lv_radius_px > 0) || !(wall_mm > 0)) throw Error(ErrorCode::InvalidArgument, "radius and wall must be positive");
  if (focal_thin_mm < 0 || focal_half_width < 0 || focal_half_width > kPi)
    throw Error(ErrorCode::InvalidArgument, "focal thinning parameters");
  if (!(contraction >= 0 && contraction < 1) || !(rv_contraction >= 0 && rv_contraction < 1))
    throw Error(ErrorCode::InvalidArgument, "contraction fraction must be in [0, 1)");
  if (!(rv_scale > 0)) throw Error(ErrorCode::InvalidArgument, "rv_scale must be positive");
  if (!(apex_taper >= 0 && apex_taper < 1)) throw Error(ErrorCode::InvalidArgument, "apex_taper in [0, 1)");
  if (noise < 0 || center_jitter_px < 0) throw Error(ErrorCode::InvalidArgument, "noise and jitter must be non-negative");
}

double PhantomSpec::wall_at(double theta) const {
  double w = wall_mm;
  if (focal_thin_mm > 0 && focal_half_width > 0) {
    const double d = std::abs(wrap_angle(theta - focal_angle));
    if (d < focal_half_width) w -= (wall_mm - focal_thin_mm) * 0.5 * (1 + std::cos(kPi * d / focal_half_width));
  }
  return std::max(w, spacing.dx);  // one-pixel floor
}

PhantomSpec desk_spec() {
  PhantomSpec s;
  s.dims = {64, 64, 8, 8};
  s.spacing = {3.125, 3.125, 10.0, 0.0};
  s.lv_radius_px = 8.0;
  s.center_jitter_px = 2.0;
  return s;
}

PhantomSpec sample_spec(Diagnosis archetype, std::uint64_t seed, const PhantomSpec& base) {
  std::mt19937_64 rng(seed);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  PhantomSpec s = base;
  s.archetype = archetype;
  s.seed = seed;
  s.focal_thin_mm = 0.0;
  s.focal_half_width = 0.0;
  double r_mm = 25.0;
  switch (archetype) {
    case Diagnosis::NOR:
      r_mm = u(24, 27), s.wall_mm = u(8, 10), s.contraction = u(0.35, 0.45);
      s.rv_scale = u(1.0, 1.15), s.rv_contraction = u(0.35, 0.45);
      break;
    case Diagnosis::DCM:
      r_mm = u(32, 36), s.wall_mm = u(5, 6.5), s.contraction = u(0.10, 0.16);
      s.rv_scale = u(1.0, 1.2), s.rv_contraction = u(0.25, 0.35);
      break;
    case Diagnosis::MINF:
      r_mm = u(27, 31), s.wall_mm = u(8, 10), s.contraction = u(0.20, 0.28);
      s.focal_thin_mm = u(2, 3), s.focal_half_width = u(0.5, 0.8), s.focal_angle = u(-kPi, kPi);
      s.rv_scale = u(1.0, 1.15), s.rv_contraction = u(0.30, 0.40);
      break;
    case Diagnosis::HCM:
      r_mm = u(17, 21), s.wall_mm = u(15, 19), s.contraction = u(0.45, 0.55);
      s.rv_scale = u(0.9, 1.05), s.rv_contraction = u(0.35, 0.45);
      break;
    case Diagnosis::ARV:
      r_mm = u(24, 27), s.wall_mm = u(8, 10), s.contraction = u(0.35, 0.45);
      s.rv_scale = u(1.5, 1.65), s.rv_contraction = u(0.10, 0.20);
      break;
  }
  s.lv_radius_px = r_mm / s.spacing.dx;
  s.center_x = (s.dims[0] - 1) / 2.0 + u(-1, 1) * base.center_jitter_px;
  s.center_y = (s.dims[1] - 1) / 2.0 + u(-1, 1) * base.center_jitter_px;
  return s;
}

PhantomCase generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const auto [X, Y, Z, T] = spec.dims;
  const double dx = spec.spacing.dx;
  const double cx = spec.center_x >= 0 ? spec.center_x : (X - 1) / 2.0;
  const double cy = spec.center_y >= 0 ? spec.center_y : (Y - 1) / 2.0;
  const double wall_px = spec.wall_mm / dx;

  auto frame_geometry = [&](int z, int t) {
    Frame f;
    const double zf = Z > 1 ? static_cast<double>(z) / (Z - 1) : 0.0;
    f.taper = 1.0 - spec.apex_taper * zf * zf;
    const double s2 = std::pow(std::sin(kPi * t / T), 2);
    f.cavity_ed = spec.lv_radius_px * f.taper;
    f.cavity = f.cavity_ed * (1.0 - spec.contraction * s2);
    f.epi_nominal = f.cavity_ed + wall_px;
    const double rv_ed = 0.8 * f.epi_nominal * spec.rv_scale;
    f.rv_offset = 0.4 * f.epi_nominal * (1.0 + spec.rv_scale);
    f.rv_radius = rv_ed * (1.0 - spec.rv_contraction * s2);
    return f;
  };

  // Bounding check at the base slice in end-diastole, which is the largest footprint.
  {
    const auto f = frame_geometry(0, 0);
    const double epi = f.cavity_ed + std::max(wall_px, spec.wall_mm / dx);
    const double left = cx - f.rv_offset - f.rv_radius;
    const double right = cx + epi;
    const double half_h = std::max(epi, f.rv_radius);
    if (left < 0.5 || right > X - 1.5 || cy - half_h < 0.5 || cy + half_h > Y - 1.5)
      throw Error(ErrorCode::GeometryOverflow, "phantom anatomy does not fit the grid");
  }

  PhantomCase c;
  c.label = spec.archetype;
  c.seed = spec.seed;
  c.center_x = cx;
  c.center_y = cy;
  c.image = Volume4D(spec.dims, spec.spacing);
  c.truth = LabelVolume(spec.dims, spec.spacing);
  c.meta.ed_frame = 0;
  c.meta.es_frame = T / 2;

  // Thickness profile sampled once per pixel angle.
  std::vector<double> wall(static_cast<std::size_t>(X) * Y);
  for (int y = 0; y < Y; ++y)
    for (int x = 0; x < X; ++x) wall[static_cast<std::size_t>(y) * X + x] = spec.wall_at(std::atan2(y - cy, x - cx)) / dx;

  for (int t = 0; t < T; ++t)
    for (int z = 0; z < Z; ++z) {
      const auto f = frame_geometry(z, t);
      for (int y = 0; y < Y; ++y)
        for (int x = 0; x < X; ++x) {
          const double rho = std::hypot(x - cx, y - cy);
          const double w = wall[static_cast<std::size_t>(y) * X + x];
          const double epi_ed = f.cavity_ed + w;
          // Myocardial area is conserved per angular sector as the cavity contracts.
          const double epi = std::sqrt(f.cavity * f.cavity + epi_ed * epi_ed - f.cavity_ed * f.cavity_ed);
          std::uint8_t l = cardiac::kBackground;
          if (rho < f.cavity)
            l = kLV;
          else if (rho < epi)
            l = kMyo;
          else if (std::hypot(x - (cx - f.rv_offset), y - cy) < f.rv_radius)
            l = kRV;
          c.truth.at(x, y, z, t) = l;
        }
    }

  std::mt19937_64 rng(splitmix64(spec.seed));
  std::normal_distribution<double> gauss(0.0, spec.noise);
  auto img = c.image.data();
  const auto lab = c.truth.labels();
  for (std::size_t i = 0; i < img.size(); ++i) {
    float v = lab[i] == kMyo ? kMuscleLevel : (lab[i] == kLV || lab[i] == kRV) ? kBloodLevel : kBackgroundLevel;
    if (spec.noise > 0) v += static_cast<float>(gauss(rng));
    img[i] = v;
  }
  return c;
}

std::vector<PhantomCase> generate_cohort(int n_per_class, std::uint64_t seed, const PhantomSpec& base) {
  if (n_per_class < 1) throw Error(ErrorCode::InvalidArgument, "n_per_class >= 1");
  std::vector<PhantomCase> out(static_cast<std::size_t>(n_per_class) * clf::kNumDiagnoses);
  const int total = static_cast<int>(out.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < total; ++i) {
    const auto label = static_cast<Diagnosis>(i / n_per_class);
    const auto child = child_seed(seed, static_cast<std::uint64_t>(i));
    out[i] = generate_phantom(sample_spec(label, child, base));
    char id[32];
    std::snprintf(id, sizeof id, "case_%04d", i);
    out[i].id = id;
  }
  return out;
}

std::string manifest_csv(const std::vector<PhantomCase>& cases) {
  std::string out = "case_id,label,ed_frame,es_frame,seed\n";
  for (const auto& c : cases)
    out += c.id + ',' + std::string(clf::to_string(c.label)) + ',' + std::to_string(c.meta.ed_frame) + ',' +
           std::to_string(c.meta.es_frame) + ',' + std::to_string(c.seed) + '\n';
  return out;
}

std::vector<ManifestEntry> read_manifest(std::string_view text) {
  std::vector<ManifestEntry> out;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      if (line != "case_id,label,ed_frame,es_frame,seed") throw Error(ErrorCode::InvalidArgument, "bad manifest header");
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw Error(ErrorCode::InvalidArgument, "bad manifest row: " + line);
    ManifestEntry e;
    e.id = cells[0];
    e.label = clf::parse_diagnosis(cells[1]);
    auto num = [&](const std::string& s, auto& v) {
      const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw Error(ErrorCode::InvalidArgument, "bad manifest number: " + s);
    };
    num(cells[2], e.ed_frame);
    num(cells[3], e.es_frame);
    num(cells[4], e.seed);
    out.push_back(std::move(e));
  }
  return out;
}

void write_cohort(const std::filesystem::path& dir, const std::vector<PhantomCase>& cases) {
  std::filesystem::create_directories(dir);
  for (const auto& c : cases) {
    nifti::write_file(dir / (c.id + "_image.nii.gz"), nifti::gzip(nifti::write(c.image, nifti::DataType::Float32)));
    nifti::write_file(dir / (c.id + "_truth.nii.gz"), nifti::gzip(nifti::write(c.truth)));
  }
  const auto m = manifest_csv(cases);
  nifti::write_file(dir / "manifest.csv", std::span(reinterpret_cast<const std::uint8_t*>(m.data()), m.size()));
}

}  // namespace cardiac::phantom
