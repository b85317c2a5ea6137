#include "cardiac/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "cardiac/error.hpp"

namespace cardiac::seg {

Sample make_sample(const Volume4D& image_crop, const LabelVolume& label_crop, int frame) {
  if (image_crop.nx() != label_crop.nx() || image_crop.ny() != label_crop.ny() || image_crop.nz() != label_crop.nz())
    throw Error(ErrorCode::ShapeMismatch, "image and label crops differ in shape");
  Sample s;
  s.image = Tensor({1, image_crop.nx(), image_crop.ny(), image_crop.nz(), 1});
  auto f = image_crop.frame(frame);
  std::copy(f.begin(), f.end(), s.image.values().begin());
  const auto lab = label_crop.extract_frame(label_crop.nt() == 1 ? 0 : frame);
  s.labels.assign(lab.labels().begin(), lab.labels().end());
  return s;
}

AugmentParams sample_augment_params(std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> rot(-15.0, 15.0), shift(-10.0, 10.0), shear(-0.1, 0.1);
  AugmentParams p;
  p.flip_x = coin(rng);
  p.flip_y = coin(rng);
  p.rotation_deg = rot(rng);
  p.tx = shift(rng);
  p.ty = shift(rng);
  p.shear = shear(rng);
  return p;
}

Sample augment(const Sample& s, const AugmentParams& p) {
  const int W = s.image.nx(), H = s.image.ny(), D = s.image.nz();
  if (s.labels.size() != s.image.spatial()) throw Error(ErrorCode::ShapeMismatch, "augment: paired shapes differ");

  // Forward map d = A (src - c) + c + t with A = R * Shear * Flip; sample through its inverse.
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const double fx = p.flip_x ? -1.0 : 1.0, fy = p.flip_y ? -1.0 : 1.0;
  const double c = std::cos(th), sn = std::sin(th);
  const double a00 = c * fx, a01 = (c * p.shear - sn) * fy;
  const double a10 = sn * fx, a11 = (sn * p.shear + c) * fy;
  const double det = a00 * a11 - a01 * a10;
  const double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;
  const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;

  Sample out;
  out.image = Tensor(s.image.dims());
  out.labels.assign(s.labels.size(), 0);
  const auto img = s.image.plane(0);
  auto dst = out.image.plane(0);
  const std::size_t plane = static_cast<std::size_t>(W) * H;

  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double ux = x - cx - p.tx, uy = y - cy - p.ty;
      const double sx = i00 * ux + i01 * uy + cx;
      const double sy = i10 * ux + i11 * uy + cy;

      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double ax = sx - x0, ay = sy - y0;
      const int nxr = static_cast<int>(std::lround(sx)), nyr = static_cast<int>(std::lround(sy));
      const bool nearest_inside = nxr >= 0 && nyr >= 0 && nxr < W && nyr < H;
      for (int z = 0; z < D; ++z) {
        const std::size_t base = plane * z;
        double v = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const double w = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay);
            if (w == 0.0) continue;
            const int xx = x0 + dx, yy = y0 + dy;
            if (xx < 0 || yy < 0 || xx >= W || yy >= H) continue;
            v += w * img[base + static_cast<std::size_t>(yy) * W + xx];
          }
        dst[base + static_cast<std::size_t>(y) * W + x] = v;
        if (nearest_inside)
          out.labels[base + static_cast<std::size_t>(y) * W + x] = s.labels[base + static_cast<std::size_t>(nyr) * W + nxr];
      }
    }
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs >= 1");
  if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size >= 1");
  if (!(lr0 > 0)) throw Error(ErrorCode::InvalidArgument, "lr0 > 0");
}

void Adam::step(const std::vector<Parameter*>& params, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (Parameter* p : params) {
    if (p->adam_m.empty()) {
      p->adam_m = Tensor(p->value.dims());
      p->adam_v = Tensor(p->value.dims());
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      p->adam_m[i] = b1_ * p->adam_m[i] + (1.0 - b1_) * g;
      p->adam_v[i] = b2_ * p->adam_v[i] + (1.0 - b2_) * g * g;
      if (lr == 0.0) continue;
      const double mh = p->adam_m[i] / c1;
      const double vh = p->adam_v[i] / c2;
      p->value[i] -= lr * mh / (std::sqrt(vh) + eps_);
    }
  }
}

namespace {

struct DiceCounts {
  std::array<double, 4> inter{}, pred{}, truth{};

  void add(std::span<const std::uint8_t> p, std::span<const std::uint8_t> t) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      pred[p[i]] += 1;
      truth[t[i]] += 1;
      if (p[i] == t[i]) inter[p[i]] += 1;
    }
  }
  DiceScores scores() const {
    DiceScores d;
    for (int c = 0; c < 4; ++c) d[c] = pred[c] + truth[c] == 0 ? 1.0 : 2.0 * inter[c] / (pred[c] + truth[c]);
    return d;
  }
};

}  // namespace

DiceScores dice_scores(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
  if (predicted.size() != truth.size()) throw Error(ErrorCode::ShapeMismatch, "dice: label counts differ");
  DiceCounts c;
  c.add(predicted, truth);
  return c.scores();
}

std::vector<std::uint8_t> argmax_labels(const Tensor& probabilities) {
  const std::size_t S = probabilities.spatial();
  const int N = probabilities.batch(), C = probabilities.channels();
  std::vector<std::uint8_t> out(S * N);
  for (int n = 0; n < N; ++n)
    for (std::size_t v = 0; v < S; ++v) {
      int best = 0;
      double bv = probabilities.plane(0, n)[v];
      for (int c = 1; c < C; ++c)
        if (probabilities.plane(c, n)[v] > bv) {
          bv = probabilities.plane(c, n)[v];
          best = c;
        }
      out[n * S + v] = static_cast<std::uint8_t>(best);
    }
  return out;
}

DiceScores evaluate(UNet& net, const std::vector<Sample>& samples) {
  DiceCounts counts;
  for (const auto& s : samples) {
    const Tensor p = softmax_channels(net.infer(s.image));
    counts.add(argmax_labels(p), s.labels);
  }
  return counts.scores();
}

TrainResult train(UNet& net, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& tc, const LossConfig& lc, const EpochCallback& on_epoch) {
  tc.validate();
  lc.validate();
  if (train_set.empty()) throw Error(ErrorCode::EmptyDataset, "no training samples");
  const auto dims = train_set.front().image.dims();
  const int d = net.config().divisor();
  for (const auto& s : train_set)
    if (s.image.dims() != dims || s.labels.size() != s.image.spatial())
      throw Error(ErrorCode::ShapeMismatch, "training samples must share one crop shape");
  if (dims[1] % d || dims[2] % d || dims[3] % d)
    throw Error(ErrorCode::ShapeMismatch, "crop dims not divisible by 2^levels");

  std::mt19937_64 rng(tc.seed);
  Adam adam(tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
  const auto params = net.parameters();
  const int n = static_cast<int>(train_set.size());
  const long steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const long total_steps = steps_per_epoch * tc.epochs;
  const std::size_t S = train_set.front().image.spatial();

  ClassWeights weights = ClassWeights::uniform(lc.num_loss_classes());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  long step = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochMetrics m;
    m.epoch = epoch;
    m.weights = weights.w;
    DiceCounts counts;
    double loss_sum = 0.0;

    for (int start = 0; start < n; start += tc.batch_size) {
      const int B = std::min(tc.batch_size, n - start);
      Tensor batch({1, dims[1], dims[2], dims[3], B});
      std::vector<std::uint8_t> labels(S * B);
      for (int b = 0; b < B; ++b) {
        const Sample& src = train_set[order[start + b]];
        const Sample s = tc.augment ? augment(src, sample_augment_params(rng)) : src;
        std::copy(s.image.values().begin(), s.image.values().end(), batch.plane(0, b).begin());
        std::copy(s.labels.begin(), s.labels.end(), labels.begin() + S * b);
      }

      Tape tape(true);
      const ForwardContext ctx{true, &rng};
      const auto logits = net.forward(tape, tape.constant(std::move(batch)), ctx);
      const auto prob = ops::softmax_channels(tape, logits);
      counts.add(argmax_labels(tape.value(prob)), labels);
      const auto loss = ops::segmentation_loss(tape, prob, labels, weights, lc);
      loss_sum += tape.value(loss)[0] * B;

      for (Parameter* p : params) p->zero_grad();
      tape.backward(loss);
      m.lr_last = cosine_lr(step, total_steps, tc.lr0);
      adam.step(params, m.lr_last);
      ++step;
    }

    m.mean_loss = loss_sum / n;
    m.train_dice = counts.scores();
    if (val_set.empty())
      m.val_dice.fill(std::numeric_limits<double>::quiet_NaN());
    else
      m.val_dice = evaluate(net, val_set);

    if (lc.kind == LossKind::DynamicFocalDice) {
      std::vector<double> dice(m.train_dice.begin() + lc.first_class(), m.train_dice.end());
      weights = update_class_weights(dice, lc.weight_floor);
    }
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

VolumePrediction predict_volume(UNet& net, const Volume4D& v, const roi::CropPlan& plan, int frame) {
  if (frame < 0 || frame >= v.nt()) throw Error(ErrorCode::IndexOutOfRange, "frame index");
  const Volume4D f = v.extract_frame(frame);
  const int P = plan.patch(), Z = v.nz();
  Tensor acc({4, P, P, Z, 1});
  std::vector<int> hits(Z, 0);

  for (std::size_t w = 0; w < plan.depth_windows.size(); ++w) {
    const auto crop = roi::apply_crop(f, plan, w);
    Tensor in({1, P, P, plan.target_depth, 1});
    std::copy(crop.data().begin(), crop.data().end(), in.values().begin());
    const Tensor prob = softmax_channels(net.infer(in));
    const auto& win = plan.depth_windows[w];
    for (int p = win.pad_before; p < plan.target_depth - win.pad_after; ++p) {
      const int z = win.z_offset + p - win.pad_before;
      ++hits[z];
      for (int c = 0; c < 4; ++c)
        for (int y = 0; y < P; ++y)
          for (int x = 0; x < P; ++x) acc.at(c, x, y, z) += prob.at(c, x, y, p);
    }
  }
  for (int z = 0; z < Z; ++z)
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < P; ++y)
        for (int x = 0; x < P; ++x) acc.at(c, x, y, z) /= hits[z];

  VolumePrediction out;
  out.labels = LabelVolume(Dims4{P, P, Z, 1}, v.spacing(), argmax_labels(acc));
  out.probabilities = std::move(acc);
  return out;
}

}  // namespace cardiac::seg
