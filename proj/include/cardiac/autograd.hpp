#pragma once

// Tape-based reverse-mode differentiation over whole tensors.
//
// Every op appends a node holding its value and, when the tape is recording,
// a closure that propagates the node's gradient to its inputs. Nodes are
// created in topological order, so backward() walks them in reverse.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cardiac/tensor.hpp"

namespace cardiac::seg {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.dims()) {}
  void zero_grad() { grad.fill(0.0); }
};

class Tape {
 public:
  using Id = int;

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Id constant(Tensor value);
  Id parameter(Parameter& p);

  const Tensor& value(Id id) const { return nodes_.at(id).value; }
  Tensor& mutable_value(Id id) { return nodes_.at(id).value; }
  /// Gradient buffer of a node; allocated on first access.
  Tensor& grad(Id id);
  bool requires_grad(Id id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Append an op node. `backward` runs only when some input requires a gradient.
  Id push(Tensor value, std::vector<Id> inputs, std::function<void(Tape&, Id)> backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every parameter's `grad`.
  void backward(Id loss);

  /// Drops the stored value of an intermediate node (inference only).
  void release(Id id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Id> inputs;
    std::function<void(Tape&, Id)> backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  bool recording_;
  std::vector<Node> nodes_;
};

struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout masks; required when training with dropout > 0
};

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
  double eps = 1e-5;
};

namespace ops {

using Id = Tape::Id;

Id conv3d(Tape& t, Id x, Id weight, Id bias, int kernel);
/// Batch statistics when training with batch > 1, running statistics otherwise.
Id batch_norm(Tape& t, Id x, Id gamma, Id beta, BatchNormState& state, bool training);
Id relu(Tape& t, Id x);
/// Inverted dropout: kept activations are scaled by 1 / (1 - rate).
Id dropout(Tape& t, Id x, double rate, const ForwardContext& ctx);
Id max_pool2(Tape& t, Id x);
Id upsample_trilinear2(Tape& t, Id x);
Id concat_channels(Tape& t, Id a, Id b);
Id add(Tape& t, Id a, Id b);
Id softmax_channels(Tape& t, Id logits);

}  // namespace ops

/// Plain (untaped) per-voxel channel softmax.
Tensor softmax_channels(const Tensor& logits);

}  // namespace cardiac::seg
