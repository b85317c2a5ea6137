#include "cardiac/unet.hpp"

#include <cmath>
#include <cstring>
#include <map>

#include "cardiac/binary_io.hpp"
#include "cardiac/error.hpp"
#include "cardiac/nifti.hpp"

namespace cardiac::seg {

void NetConfig::validate() const {
  if (levels < 1) throw Error(ErrorCode::InvalidArgument, "levels >= 1");
  if (base_channels < 1) throw Error(ErrorCode::InvalidArgument, "base_channels >= 1");
  if (!(dropout_rate >= 0 && dropout_rate < 1)) throw Error(ErrorCode::InvalidArgument, "dropout in [0, 1)");
  if (in_channels < 1) throw Error(ErrorCode::InvalidArgument, "in_channels >= 1");
  if (out_channels != 4) throw Error(ErrorCode::InvalidArgument, "out_channels must be 4");
}

Conv3d::Conv3d(std::string name, int in, int out, int kernel, std::mt19937_64& rng) : kernel_(kernel) {
  Tensor w({in, kernel, kernel, kernel, out});
  const double fan_in = static_cast<double>(in) * kernel * kernel * kernel;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (double& v : w.values()) v = dist(rng);
  weight_ = Parameter(name + ".weight", std::move(w));
  bias_ = Parameter(name + ".bias", Tensor({out, 1, 1, 1, 1}));
}

Tape::Id Conv3d::forward(Tape& t, Tape::Id x) {
  return ops::conv3d(t, x, t.parameter(weight_), t.parameter(bias_), kernel_);
}

void Conv3d::zero() {
  weight_.value.fill(0.0);
  bias_.value.fill(0.0);
}

BatchNorm3d::BatchNorm3d(std::string name, int channels) : name_(std::move(name)) {
  gamma_ = Parameter(name_ + ".gamma", Tensor({channels, 1, 1, 1, 1}, 1.0));
  beta_ = Parameter(name_ + ".beta", Tensor({channels, 1, 1, 1, 1}, 0.0));
  state_.running_mean.assign(channels, 0.0);
  state_.running_var.assign(channels, 1.0);
}

Tape::Id BatchNorm3d::forward(Tape& t, Tape::Id x, bool training) {
  return ops::batch_norm(t, x, t.parameter(gamma_), t.parameter(beta_), state_, training);
}

ResBlock::ResBlock(const std::string& name, int in, int out, double dropout, std::mt19937_64& rng)
    : dropout_(dropout),
      conv1_(name + ".conv1", in, out, 3, rng),
      conv2_(name + ".conv2", out, out, 3, rng),
      bn1_(name + ".bn1", out),
      bn2_(name + ".bn2", out) {
  if (in != out) projection_.emplace(name + ".proj", in, out, 1, rng);
}

Tape::Id ResBlock::forward(Tape& t, Tape::Id x, const ForwardContext& ctx) {
  auto h = conv1_.forward(t, x);
  auto a = bn1_.forward(t, h, ctx.training);
  t.release(h);
  h = ops::relu(t, a);
  t.release(a);
  a = ops::dropout(t, h, dropout_, ctx);
  if (a != h) t.release(h);
  h = conv2_.forward(t, a);
  t.release(a);
  a = bn2_.forward(t, h, ctx.training);
  t.release(h);
  const auto skip = projection_ ? projection_->forward(t, x) : x;
  h = ops::add(t, a, skip);
  t.release(a);
  if (skip != x) t.release(skip);
  const auto out = ops::relu(t, h);
  t.release(h);
  return out;
}

std::vector<Parameter*> ResBlock::parameters() {
  std::vector<Parameter*> p;
  for (auto* q : conv1_.parameters()) p.push_back(q);
  for (auto* q : bn1_.parameters()) p.push_back(q);
  for (auto* q : conv2_.parameters()) p.push_back(q);
  for (auto* q : bn2_.parameters()) p.push_back(q);
  if (projection_)
    for (auto* q : projection_->parameters()) p.push_back(q);
  return p;
}

UNet::UNet(const NetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  int in = cfg.in_channels;
  for (int l = 0; l < cfg.levels; ++l) {
    const int out = cfg.base_channels << l;
    encoder_.emplace_back("enc" + std::to_string(l), in, out, cfg.dropout_rate, rng);
    in = out;
  }
  bottleneck_ = ResBlock("bottleneck", in, cfg.base_channels << cfg.levels, cfg.dropout_rate, rng);
  for (int l = cfg.levels - 1; l >= 0; --l) {
    const int skip = cfg.base_channels << l;
    const int up = cfg.base_channels << (l + 1);
    decoder_.emplace_back("dec" + std::to_string(l), up + skip, skip, cfg.dropout_rate, rng);
  }
  head_ = Conv3d("head", cfg.base_channels, cfg.out_channels, 1, rng);
}

Tape::Id UNet::forward(Tape& t, Tape::Id input, const ForwardContext& ctx) {
  const Tensor& x = t.value(input);
  const int d = cfg_.divisor();
  if (x.channels() != cfg_.in_channels) throw Error(ErrorCode::ShapeMismatch, "input channel count");
  if (x.nx() % d || x.ny() % d || x.nz() % d)
    throw Error(ErrorCode::ShapeMismatch, "input spatial dims must be divisible by 2^levels");

  std::vector<Tape::Id> skips;
  auto h = input;
  for (auto& block : encoder_) {
    h = block.forward(t, h, ctx);
    skips.push_back(h);
    h = ops::max_pool2(t, h);
  }
  auto b = bottleneck_.forward(t, h, ctx);
  t.release(h);
  h = b;
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const auto skip = skips[skips.size() - 1 - i];
    auto up = ops::upsample_trilinear2(t, h);
    t.release(h);
    auto cat = ops::concat_channels(t, up, skip);
    t.release(up);
    t.release(skip);
    h = decoder_[i].forward(t, cat, ctx);
    t.release(cat);
  }
  return head_.forward(t, h);
}

Tensor UNet::infer(const Tensor& input) {
  Tape t(false);
  const auto out = forward(t, t.constant(input), ForwardContext{false, nullptr});
  return t.value(out);
}

std::vector<Parameter*> UNet::parameters() {
  std::vector<Parameter*> p;
  for (auto& b : encoder_)
    for (auto* q : b.parameters()) p.push_back(q);
  for (auto* q : bottleneck_.parameters()) p.push_back(q);
  for (auto& b : decoder_)
    for (auto* q : b.parameters()) p.push_back(q);
  for (auto* q : head_.parameters()) p.push_back(q);
  return p;
}

std::vector<BatchNorm3d*> UNet::norms() {
  std::vector<BatchNorm3d*> n;
  for (auto& b : encoder_)
    for (auto* q : b.norms()) n.push_back(q);
  for (auto* q : bottleneck_.norms()) n.push_back(q);
  for (auto& b : decoder_)
    for (auto* q : b.norms()) n.push_back(q);
  return n;
}

std::size_t UNet::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

void UNet::zero_head() { head_.zero(); }

std::uint64_t UNet::checksum() {
  bin::Writer w;
  for (auto* p : parameters())
    for (double v : p->value.values()) w.put(v);
  for (auto* n : norms()) {
    for (double v : n->state().running_mean) w.put(v);
    for (double v : n->state().running_var) w.put(v);
  }
  auto bytes = w.finish();
  return bin::fnv1a(bytes);
}

namespace {

constexpr char kMagic[8] = {'C', 'A', 'R', 'D', 'S', 'E', 'G', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_tensor(bin::Writer& w, const std::string& name, const Tensor::Dims& dims, std::span<const double> values) {
  w.put_string(name);
  for (int d : dims) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (double v : values) w.put<float>(static_cast<float>(v));
}

}  // namespace

std::vector<std::uint8_t> save_checkpoint(UNet& net, const CropGeometry& g, const std::string& metadata_json) {
  bin::Writer w;
  w.put_bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 8));
  w.put<std::uint32_t>(kVersion);
  const auto& c = net.config();
  w.put<std::uint32_t>(c.levels);
  w.put<std::uint32_t>(c.base_channels);
  w.put<double>(c.dropout_rate);
  w.put<std::uint32_t>(c.in_channels);
  w.put<std::uint32_t>(c.out_channels);
  w.put<std::uint32_t>(g.patch);
  w.put<std::uint32_t>(g.target_depth);
  w.put<std::uint32_t>(g.depth_stride);

  const auto params = net.parameters();
  const auto norms = net.norms();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size() + 2 * norms.size()));
  for (auto* p : params) put_tensor(w, p->name, p->value.dims(), p->value.values());
  for (auto* n : norms) {
    const int C = static_cast<int>(n->state().running_mean.size());
    put_tensor(w, n->name() + ".running_mean", {C, 1, 1, 1, 1}, n->state().running_mean);
    put_tensor(w, n->name() + ".running_var", {C, 1, 1, 1, 1}, n->state().running_var);
  }
  w.put_string(metadata_json);
  return w.finish();
}

std::pair<UNet, Checkpoint> load_checkpoint(std::span<const std::uint8_t> bytes) {
  bin::Reader r(bytes, ErrorCode::BadCheckpoint);
  r.expect_bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 8), ErrorCode::BadCheckpoint,
                 "not a segmentation checkpoint");
  if (r.get<std::uint32_t>() != kVersion) throw Error(ErrorCode::VersionMismatch, "checkpoint version");
  bin::Reader body(bytes, ErrorCode::BadCheckpoint);
  body.verify_checksum();
  body.get<std::uint64_t>();
  body.get<std::uint32_t>();

  Checkpoint ck;
  ck.config.levels = static_cast<int>(body.get<std::uint32_t>());
  ck.config.base_channels = static_cast<int>(body.get<std::uint32_t>());
  ck.config.dropout_rate = body.get<double>();
  ck.config.in_channels = static_cast<int>(body.get<std::uint32_t>());
  ck.config.out_channels = static_cast<int>(body.get<std::uint32_t>());
  ck.geometry.patch = static_cast<int>(body.get<std::uint32_t>());
  ck.geometry.target_depth = static_cast<int>(body.get<std::uint32_t>());
  ck.geometry.depth_stride = static_cast<int>(body.get<std::uint32_t>());
  if (ck.config.levels < 1 || ck.config.levels > 8 || ck.config.base_channels < 1 || ck.config.base_channels > 1024)
    body.fail("implausible network config");

  UNet net(ck.config, 0);
  std::map<std::string, Parameter*> by_name;
  for (auto* p : net.parameters()) by_name[p->name] = p;
  std::map<std::string, std::vector<double>*> stats;
  for (auto* n : net.norms()) {
    stats[n->name() + ".running_mean"] = &n->state().running_mean;
    stats[n->name() + ".running_var"] = &n->state().running_var;
  }

  const auto count = body.get<std::uint32_t>();
  if (count != by_name.size() + stats.size()) body.fail("tensor count does not match the config");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = body.get_string(256);
    Tensor::Dims dims;
    std::size_t n = 1;
    for (int& d : dims) {
      d = static_cast<int>(body.get<std::uint32_t>());
      n *= static_cast<std::size_t>(d);
    }
    std::vector<double>* dst = nullptr;
    if (auto it = by_name.find(name); it != by_name.end()) {
      if (it->second->value.dims() != dims) body.fail("shape mismatch for " + name);
      dst = nullptr;
      for (std::size_t k = 0; k < n; ++k) it->second->value[k] = body.get<float>();
      it->second->grad = Tensor(dims);
      continue;
    }
    if (auto it = stats.find(name); it != stats.end()) dst = it->second;
    if (!dst || dst->size() != n) body.fail("unknown tensor " + name);
    for (std::size_t k = 0; k < n; ++k) (*dst)[k] = body.get<float>();
  }
  ck.metadata_json = body.get_string();
  if (body.remaining() != 0) body.fail("trailing bytes");
  return {std::move(net), std::move(ck)};
}

void save_checkpoint_file(const std::filesystem::path& path, UNet& net, const CropGeometry& geometry,
                          const std::string& metadata_json) {
  nifti::write_file(path, save_checkpoint(net, geometry, metadata_json));
}

std::pair<UNet, Checkpoint> load_checkpoint_file(const std::filesystem::path& path) {
  const auto bytes = nifti::read_file(path);
  return load_checkpoint(bytes);
}

}  // namespace cardiac::seg
