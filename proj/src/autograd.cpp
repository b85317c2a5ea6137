#include "cardiac/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cardiac/error.hpp"
#include "cardiac/kernels.hpp"

namespace cardiac::seg {

Tensor::Tensor(Dims dims, double fill) : dims_(dims) {
  std::size_t n = 1;
  for (int d : dims) {
    if (d <= 0) throw Error(ErrorCode::ShapeMismatch, "tensor dims must be positive");
    n *= static_cast<std::size_t>(d);
  }
  values_.assign(n, fill);
}

Tensor::Tensor(Dims dims, std::vector<double> values) : dims_(dims), values_(std::move(values)) {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(std::max(d, 0));
  if (n != values_.size()) throw Error(ErrorCode::ShapeMismatch, "value count != product of dims");
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Tape::Id Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, {}, &p, recording_});
  return static_cast<Id>(nodes_.size() - 1);
}

Tensor& Tape::grad(Id id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = Tensor(n.value.dims());
  return n.grad;
}

Tape::Id Tape::push(Tensor value, std::vector<Id> inputs, std::function<void(Tape&, Id)> backward) {
  bool needs = false;
  if (recording_)
    for (Id i : inputs) needs = needs || nodes_.at(i).requires_grad;
  Node n{std::move(value), {}, {}, {}, nullptr, needs};
  if (needs) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

void Tape::release(Id id) {
  if (recording_) return;
  nodes_.at(id).value = Tensor();
}

void Tape::backward(Id loss) {
  if (!recording_) throw Error(ErrorCode::GraphNotRecorded, "tape was created without gradient recording");
  if (loss < 0 || static_cast<std::size_t>(loss) >= nodes_.size())
    throw Error(ErrorCode::GraphNotRecorded, "loss node not on this tape");
  if (value(loss).size() != 1) throw Error(ErrorCode::ShapeMismatch, "backward needs a scalar loss");
  if (!nodes_[loss].requires_grad) throw Error(ErrorCode::GraphNotRecorded, "loss does not depend on any parameter");

  grad(loss)[0] = 1.0;
  for (Id i = loss; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
  }
  for (Node& n : nodes_) {
    if (!n.param || n.grad.empty()) continue;
    auto dst = n.param->grad.values();
    auto src = n.grad.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

Tensor softmax_channels(const Tensor& logits) {
  Tensor out(logits.dims());
  const int C = logits.channels();
  const std::size_t S = logits.spatial();
  for (int n = 0; n < logits.batch(); ++n) {
    for (std::size_t v = 0; v < S; ++v) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < C; ++c) mx = std::max(mx, logits.plane(c, n)[v]);
      double sum = 0.0;
      for (int c = 0; c < C; ++c) sum += out.plane(c, n)[v] = std::exp(logits.plane(c, n)[v] - mx);
      for (int c = 0; c < C; ++c) out.plane(c, n)[v] /= sum;
    }
  }
  return out;
}

namespace ops {

namespace {

kernels::ConvShape conv_shape(const Tensor& x, int out_channels, int kernel) {
  kernels::ConvShape s;
  s.batch = x.batch();
  s.in_channels = x.channels();
  s.out_channels = out_channels;
  s.nx = x.nx();
  s.ny = x.ny();
  s.nz = x.nz();
  s.kernel = kernel;
  return s;
}

}  // namespace

Id conv3d(Tape& t, Id x, Id weight, Id bias, int kernel) {
  const Tensor& in = t.value(x);
  const Tensor& w = t.value(weight);
  const int co = w.batch();
  if (w.channels() != in.channels() || w.nx() != kernel || w.ny() != kernel || w.nz() != kernel)
    throw Error(ErrorCode::ShapeMismatch, "conv weight does not match input channels / kernel");
  const auto shape = conv_shape(in, co, kernel);
  Tensor out({co, in.nx(), in.ny(), in.nz(), in.batch()});
  kernels::conv3d_forward(shape, in.values(), w.values(), t.value(bias).values(), out.values());

  return t.push(std::move(out), {x, weight, bias}, [x, weight, bias, shape](Tape& tp, Id self) {
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(weight) || tp.requires_grad(bias))
      kernels::conv3d_backward_weight(shape, g.values(), tp.value(x).values(), tp.grad(weight).values(),
                                      tp.grad(bias).values());
    if (tp.requires_grad(x))
      kernels::conv3d_backward_input(shape, g.values(), tp.value(weight).values(), tp.grad(x).values());
  });
}

Id batch_norm(Tape& t, Id x, Id gamma, Id beta, BatchNormState& state, bool training) {
  const Tensor& in = t.value(x);
  const int C = in.channels(), N = in.batch();
  const std::size_t S = in.spatial();
  const double M = static_cast<double>(S) * N;
  if (state.running_mean.size() != static_cast<std::size_t>(C)) {
    state.running_mean.assign(C, 0.0);
    state.running_var.assign(C, 1.0);
  }
  const bool batch_stats = training && N > 1;
  const Tensor& g = t.value(gamma);
  const Tensor& b = t.value(beta);

  std::vector<double> mean(C), inv_std(C);
  Tensor xhat(in.dims());
  Tensor out(in.dims());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double mu, var;
    if (batch_stats) {
      double s = 0.0;
      for (int n = 0; n < N; ++n)
        for (double v : in.plane(c, n)) s += v;
      mu = s / M;
      double ss = 0.0;
      for (int n = 0; n < N; ++n)
        for (double v : in.plane(c, n)) ss += (v - mu) * (v - mu);
      var = ss / M;
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    mean[c] = mu;
    inv_std[c] = 1.0 / std::sqrt(var + state.eps);
    for (int n = 0; n < N; ++n) {
      auto src = in.plane(c, n);
      auto xh = xhat.plane(c, n);
      auto dst = out.plane(c, n);
      for (std::size_t i = 0; i < S; ++i) {
        xh[i] = (src[i] - mu) * inv_std[c];
        dst[i] = g[c] * xh[i] + b[c];
      }
    }
    if (batch_stats) {
      state.running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mu;
      state.running_var[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * var;
    }
  }

  auto backward = [x, gamma, beta, batch_stats, inv_std, xhat = std::move(xhat), M](Tape& tp, Id self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& gm = tp.value(gamma);
    const int C = dy.channels(), N = dy.batch();
    const bool need_x = tp.requires_grad(x);
    Tensor* dx = need_x ? &tp.grad(x) : nullptr;
    Tensor& dg = tp.grad(gamma);
    Tensor& db = tp.grad(beta);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (int n = 0; n < N; ++n) {
        auto d = dy.plane(c, n);
        auto xh = xhat.plane(c, n);
        for (std::size_t i = 0; i < d.size(); ++i) {
          sum_dy += d[i];
          sum_dy_xh += d[i] * xh[i];
        }
      }
      dg[c] += sum_dy_xh;
      db[c] += sum_dy;
      if (!need_x) continue;
      const double k = gm[c] * inv_std[c];
      for (int n = 0; n < N; ++n) {
        auto d = dy.plane(c, n);
        auto xh = xhat.plane(c, n);
        auto out = dx->plane(c, n);
        if (batch_stats) {
          for (std::size_t i = 0; i < d.size(); ++i)
            out[i] += k * (d[i] - sum_dy / M - xh[i] * sum_dy_xh / M);
        } else {
          for (std::size_t i = 0; i < d.size(); ++i) out[i] += k * d[i];
        }
      }
    }
  };
  return t.push(std::move(out), {x, gamma, beta}, std::move(backward));
}

Id relu(Tape& t, Id x) {
  const Tensor& in = t.value(x);
  Tensor out(in.dims());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return t.push(std::move(out), {x}, [x](Tape& tp, Id self) {
    const Tensor& in = tp.value(x);
    const Tensor& g = tp.grad(self);
    Tensor& dx = tp.grad(x);
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i] > 0.0) dx[i] += g[i];
  });
}

Id dropout(Tape& t, Id x, double rate, const ForwardContext& ctx) {
  if (!ctx.training || rate <= 0.0) return x;
  if (!ctx.rng) throw Error(ErrorCode::InvalidArgument, "dropout in training mode needs an rng");
  const Tensor& in = t.value(x);
  const double scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(in.size());
  std::bernoulli_distribution keep(1.0 - rate);
  for (double& m : mask) m = keep(*ctx.rng) ? scale : 0.0;
  Tensor out(in.dims());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * mask[i];
  return t.push(std::move(out), {x}, [x, mask = std::move(mask)](Tape& tp, Id self) {
    const Tensor& g = tp.grad(self);
    Tensor& dx = tp.grad(x);
    for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += g[i] * mask[i];
  });
}

Id max_pool2(Tape& t, Id x) {
  const Tensor& in = t.value(x);
  if (in.nx() % 2 || in.ny() % 2 || in.nz() % 2) throw Error(ErrorCode::ShapeMismatch, "max_pool2 needs even dims");
  const int C = in.channels(), N = in.batch();
  const int X = in.nx() / 2, Y = in.ny() / 2, Z = in.nz() / 2;
  Tensor out({C, X, Y, Z, N});
  std::vector<std::size_t> argmax(out.size());
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
          for (int xo = 0; xo < X; ++xo) {
            std::size_t best = in.index(c, 2 * xo, 2 * y, 2 * z, n);
            for (int dz = 0; dz < 2; ++dz)
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                  const std::size_t j = in.index(c, 2 * xo + dx, 2 * y + dy, 2 * z + dz, n);
                  if (in[j] > in[best]) best = j;
                }
            const std::size_t o = out.index(c, xo, y, z, n);
            out[o] = in[best];
            argmax[o] = best;
          }
  return t.push(std::move(out), {x}, [x, argmax = std::move(argmax)](Tape& tp, Id self) {
    const Tensor& g = tp.grad(self);
    Tensor& dx = tp.grad(x);
    for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += g[o];
  });
}

namespace {

struct Interp {
  int i0, i1;
  double w0, w1;
};

// Half-pixel-centred linear interpolation weights for a 2x upsampling of n samples.
std::vector<Interp> interp_axis(int n) {
  std::vector<Interp> r(2 * n);
  for (int o = 0; o < 2 * n; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > n - 1) i0 = n - 1;
    const int i1 = std::min(i0 + 1, n - 1);
    const double f = src - i0;
    r[o] = {i0, i1, 1.0 - f, f};
  }
  return r;
}

}  // namespace

Id upsample_trilinear2(Tape& t, Id x) {
  const Tensor& in = t.value(x);
  const int C = in.channels(), N = in.batch();
  const auto ax = interp_axis(in.nx()), ay = interp_axis(in.ny()), az = interp_axis(in.nz());
  Tensor out({C, 2 * in.nx(), 2 * in.ny(), 2 * in.nz(), N});
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int z = 0; z < out.nz(); ++z)
        for (int y = 0; y < out.ny(); ++y)
          for (int xo = 0; xo < out.nx(); ++xo) {
            const Interp &iz = az[z], &iy = ay[y], &ix = ax[xo];
            double v = 0.0;
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b)
                for (int d = 0; d < 2; ++d) {
                  const double w = (a ? iz.w1 : iz.w0) * (b ? iy.w1 : iy.w0) * (d ? ix.w1 : ix.w0);
                  v += w * in.at(c, d ? ix.i1 : ix.i0, b ? iy.i1 : iy.i0, a ? iz.i1 : iz.i0, n);
                }
            out.at(c, xo, y, z, n) = v;
          }
  return t.push(std::move(out), {x}, [x, ax, ay, az](Tape& tp, Id self) {
    const Tensor& g = tp.grad(self);
    Tensor& dx = tp.grad(x);
    const int C = g.channels(), N = g.batch();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int z = 0; z < g.nz(); ++z)
          for (int y = 0; y < g.ny(); ++y)
            for (int xo = 0; xo < g.nx(); ++xo) {
              const Interp &iz = az[z], &iy = ay[y], &ix = ax[xo];
              const double gv = g.at(c, xo, y, z, n);
              for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                  for (int d = 0; d < 2; ++d) {
                    const double w = (a ? iz.w1 : iz.w0) * (b ? iy.w1 : iy.w0) * (d ? ix.w1 : ix.w0);
                    dx.at(c, d ? ix.i1 : ix.i0, b ? iy.i1 : iy.i0, a ? iz.i1 : iz.i0, n) += w * gv;
                  }
            }
  });
}

Id concat_channels(Tape& t, Id a, Id b) {
  const Tensor& ta = t.value(a);
  const Tensor& tb = t.value(b);
  if (ta.nx() != tb.nx() || ta.ny() != tb.ny() || ta.nz() != tb.nz() || ta.batch() != tb.batch())
    throw Error(ErrorCode::ShapeMismatch, "concat needs equal spatial dims and batch");
  const int Ca = ta.channels(), Cb = tb.channels(), N = ta.batch();
  Tensor out({Ca + Cb, ta.nx(), ta.ny(), ta.nz(), N});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < Ca; ++c) std::ranges::copy(ta.plane(c, n), out.plane(c, n).begin());
    for (int c = 0; c < Cb; ++c) std::ranges::copy(tb.plane(c, n), out.plane(Ca + c, n).begin());
  }
  return t.push(std::move(out), {a, b}, [a, b, Ca, Cb](Tape& tp, Id self) {
    const Tensor& g = tp.grad(self);
    for (int n = 0; n < g.batch(); ++n) {
      if (tp.requires_grad(a))
        for (int c = 0; c < Ca; ++c) {
          auto src = g.plane(c, n);
          auto dst = tp.grad(a).plane(c, n);
          for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        }
      if (tp.requires_grad(b))
        for (int c = 0; c < Cb; ++c) {
          auto src = g.plane(Ca + c, n);
          auto dst = tp.grad(b).plane(c, n);
          for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        }
    }
  });
}

Id add(Tape& t, Id a, Id b) {
  const Tensor& ta = t.value(a);
  const Tensor& tb = t.value(b);
  if (!ta.same_shape(tb)) throw Error(ErrorCode::ShapeMismatch, "add needs equal shapes");
  Tensor out(ta.dims());
  for (std::size_t i = 0; i < ta.size(); ++i) out[i] = ta[i] + tb[i];
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, Id self) {
    const Tensor& g = tp.grad(self);
    for (Id in : {a, b}) {
      if (!tp.requires_grad(in)) continue;
      Tensor& d = tp.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Id softmax_channels(Tape& t, Id logits) {
  Tensor p = cardiac::seg::softmax_channels(t.value(logits));
  return t.push(std::move(p), {logits}, [logits](Tape& tp, Id self) {
    const Tensor& p = tp.value(self);
    const Tensor& g = tp.grad(self);
    Tensor& dx = tp.grad(logits);
    const int C = p.channels();
    const std::size_t S = p.spatial();
    for (int n = 0; n < p.batch(); ++n)
      for (std::size_t v = 0; v < S; ++v) {
        double dot = 0.0;
        for (int c = 0; c < C; ++c) dot += g.plane(c, n)[v] * p.plane(c, n)[v];
        for (int c = 0; c < C; ++c) dx.plane(c, n)[v] += p.plane(c, n)[v] * (g.plane(c, n)[v] - dot);
      }
  });
}

}  // namespace ops

}  // namespace cardiac::seg
