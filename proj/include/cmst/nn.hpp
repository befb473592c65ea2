// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Minimal differentiable network substrate: a row-major tensor, a fixed set of
// 1-D layers, forward/backward passes, losses and a central-difference
// gradient oracle for tests.
//
// Activations are laid out [batch, channels, length]. Dense layers flatten
// their input and emit [batch, units] (stored internally with length 1).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cmst::nn {

class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  /// Reinterprets the shape; the element count must not change.
  void reshape(std::vector<std::size_t> shape);
  bool all_finite() const noexcept;
  std::string shape_string() const;

  bool operator==(const Tensor&) const = default;

private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

enum class LayerKind { conv1d, batchnorm, relu, tanh, maxpool1d, dropout, dense, softmax };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t filters = 0;  // conv1d
  std::size_t kernel = 1;   // conv1d
  std::size_t stride = 1;   // conv1d
  std::size_t padding = 0;  // conv1d, symmetric zero padding per side
  std::size_t pool = 2;     // maxpool1d, window == stride
  double dropout = 0.0;     // dropout probability
  std::size_t units = 0;    // dense
  bool bias = true;         // dense

  static LayerSpec conv1d(std::size_t filters, std::size_t kernel, std::size_t stride = 1,
                          std::size_t padding = 0);
  static LayerSpec batchnorm();
  static LayerSpec relu();
  static LayerSpec tanh();
  static LayerSpec maxpool1d(std::size_t width);
  static LayerSpec dropout_layer(double p);
  static LayerSpec dense(std::size_t units, bool bias = true);
  static LayerSpec softmax();

  /// Throws InvalidArgument when a kind-specific parameter is out of range.
  void validate() const;
  bool operator==(const LayerSpec&) const = default;
};

/// Channel/length pair of one activation (per sample).
struct ActShape {
  std::size_t channels = 1;
  std::size_t length = 1;
  std::size_t size() const noexcept { return channels * length; }
  bool operator==(const ActShape&) const = default;
};

struct Architecture {
  ActShape input;
  std::vector<LayerSpec> layers;

  /// Per-layer output shapes. Throws ShapeError naming the first layer whose
  /// output would be empty or whose input is incompatible.
  std::vector<ActShape> shapes() const;
  ActShape output() const;
  /// True when every layer is dense or an elementwise activation.
  bool dense_only() const;
  bool operator==(const Architecture&) const = default;
};

/// Batch-norm epsilon and running-statistics momentum.
inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;
/// Probabilities are clamped to [kProbabilityFloor, 1] before the log.
inline constexpr double kProbabilityFloor = 1e-12;

struct LayerParams {
  std::vector<Tensor> trainable;  // conv/dense: weight[, bias]; batchnorm: gamma, beta
  std::vector<Tensor> running;    // batchnorm: mean, variance
  bool operator==(const LayerParams&) const = default;
};

struct Network {
  Architecture arch;
  std::vector<LayerParams> layers;

  std::size_t parameter_count() const;
  /// Trainable scalars in layer order, tensor order, row-major.
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);
  bool operator==(const Network&) const = default;
};

/// Gradient blocks shaped like Network::layers[i].trainable.
using Gradients = std::vector<std::vector<Tensor>>;

std::vector<double> flatten(const Gradients& grads);
Gradients zeros_like(const Network& net);

enum class Init {
  glorot_uniform,  // U(+-sqrt(6/(fan_in+fan_out)))
  fan_in_uniform,  // U(+-1/sqrt(fan_in))
};

/// Allocates parameters for arch and initializes them from seed. Biases and
/// beta start at 0, gamma at 1, running mean 0 and running variance 1.
Network init_network(const Architecture& arch, std::uint64_t seed, Init init);

enum class Mode { train, infer };

struct LayerCache {
  Tensor input;
  Tensor output;
  std::vector<std::uint32_t> argmax;  // maxpool1d, flat input index per output
  std::vector<double> mask;           // dropout, 0 or 1/(1-p)
  std::vector<double> normalized;     // batchnorm x_hat
  std::vector<double> inv_std;        // batchnorm per channel
};

class ForwardCache {
public:
  Mode mode = Mode::infer;
  std::vector<LayerCache> layers;

  bool consumed() const noexcept { return consumed_; }

private:
  friend Gradients backward(const Network&, ForwardCache&, const Tensor&);
  bool consumed_ = false;
};

struct ForwardResult {
  Tensor output;
  ForwardCache cache;
};

/// Runs the network on a batch. Input is [batch, channels, length], or
/// [batch, length] when the architecture has a single input channel.
///
/// Train mode normalizes with batch statistics, updates the running
/// statistics and draws dropout masks from dropout_seed. Infer mode leaves the
/// network untouched: dropout is the identity and batch norm uses the running
/// statistics.
ForwardResult forward(Network& net, const Tensor& input, Mode mode, std::uint64_t dropout_seed = 0);

/// Infer-mode forward without a cache.
Tensor predict(const Network& net, const Tensor& input);

/// Parameter gradients for the loss whose gradient w.r.t. the network output
/// is output_grad. Consumes the cache; a second call with it throws.
Gradients backward(const Network& net, ForwardCache& cache, const Tensor& output_grad);

enum class LossKind { mse, cross_entropy };

/// mse: mean of squared differences over all elements.
/// cross_entropy: mean over the batch of -sum(t * log(p)).
double loss(LossKind kind, const Tensor& prediction, const Tensor& target);
Tensor loss_gradient(LossKind kind, const Tensor& prediction, const Tensor& target);

/// Central-difference gradient of loss(forward(net, input)) w.r.t. every
/// trainable scalar. Test oracle; cost is two forwards per parameter.
Gradients finite_diff_gradient(const Network& net, const Tensor& input, const Tensor& target,
                               LossKind loss_kind, double h, Mode mode = Mode::train,
                               std::uint64_t dropout_seed = 0);

/// Gathers the listed rows of a row-major sample matrix (one sample of
/// input.size() values per row) into a [batch, channels, length] tensor.
Tensor make_batch(const ActShape& input, std::span<const double> rows, std::span<const std::size_t> indices);

} // namespace cmst::nn
