// Copyright 2026 The CoverEst Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Layers with hand-written backward passes and the MiniResNet regressor.
//
// Every layer caches what its backward pass needs during forward(); calling
// backward() without a preceding forward() raises UsageError. Parameter
// gradients accumulate until zero_grad().
//
// MiniResNet layout (B = batch, W = base_width):
//
//   input (B, C_in, 50, 50)
//   stem:   conv3x3(C_in -> W) -> scale/shift -> ReLU -> avgpool(stem_pool)
//   blocks: n_blocks x [conv3x3 -> scale/shift -> ReLU -> conv3x3 ->
//           scale/shift -> (+ skip) -> ReLU -> dropout]
//   global average pool -> (B, W)
//   head:   FC(W -> head_hidden) -> ReLU -> FC(head_hidden -> K) -> ReLU
//           -> x output_scale
//   output (B, K), one column per quantile level.

#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "coverest/qloss.hpp"
#include "coverest/raster.hpp"
#include "coverest/tensor.hpp"

namespace coverest {

enum class Mode { kTrain, kEval };

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;
  // rng is required in train mode by layers that draw randomness.
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64* rng) = 0;
  // Returns d loss / d input and accumulates parameter gradients.
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
  virtual void collect_params(std::vector<Param<T>*>& /*out*/) {}
  void set_threads(int threads) { threads_ = std::max(threads, 1); }

 protected:
  int threads_ = 1;
};

// Square kernel, stride 1, zero padding k/2, no bias. Input (B, Cin, H, W).
template <class T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64* rng) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_params(std::vector<Param<T>*>& out) override { out.push_back(&weight_); }
  Param<T>& weight() { return weight_; }
  // When false, backward returns an empty tensor (first layer of a network).
  void set_input_grad(bool on) { input_grad_ = on; }

 private:
  int in_channels_;
  int out_channels_;
  int kernel_;
  Param<T> weight_;  // (Cout, Cin, k, k)
  Tensor<T> input_;
  bool has_cache_ = false;
  bool input_grad_ = true;
};

// y[b, c, ...] = scale[c] * x[b, c, ...] + shift[c]. Accepts rank 2 or 4.
template <class T>
class ChannelAffine : public Layer<T> {
 public:
  ChannelAffine(std::string name, int channels);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64* rng) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&scale_);
    out.push_back(&shift_);
  }

 private:
  int channels_;
  Param<T> scale_;
  Param<T> shift_;
  Tensor<T> input_;
  bool has_cache_ = false;
};

template <class T>
class Relu : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64* rng) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  // Pre-activation values of the last forward pass.
  const Tensor<T>& last_input() const { return input_; }

 private:
  Tensor<T> input_;
  bool has_cache_ = false;
};

// Non-overlapping factor x factor average pooling on (B, C, H, W).
template <class T>
class AvgPool : public Layer<T> {
 public:
  explicit AvgPool(int factor);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64* rng) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  int factor_;
  std::vector<int> in_shape_;
  bool has_cache_ = false;
};

// (B, C, H, W) -> (B, C).
template <class T>
class GlobalAvgPool : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64* rng) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  std::vector<int> in_shape_;
  bool has_cache_ = false;
};

// (B, in) -> (B, out): y = x W^T + b.
template <class T>
class Linear : public Layer<T> {
 public:
  Linear(std::string name, int in_features, int out_features);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64* rng) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  int in_features_;
  int out_features_;
  Param<T> weight_;  // (out, in)
  Param<T> bias_;    // (out)
  Tensor<T> input_;
  bool has_cache_ = false;
};

// Inverted dropout: survivors are scaled by 1/(1-p) in train mode, eval mode
// is the identity.
template <class T>
class Dropout : public Layer<T> {
 public:
  explicit Dropout(double rate);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64* rng) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  double rate_;
  std::vector<T> keep_;  // 0 or 1/(1-p) per element; empty in eval mode
  bool has_cache_ = false;
};

template <class T>
class Scale : public Layer<T> {
 public:
  explicit Scale(double factor) : factor_(factor) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64* rng) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  double factor_;
  bool has_cache_ = false;
};

template <class T>
class ResidualBlock : public Layer<T> {
 public:
  ResidualBlock(const std::string& name, int channels, double dropout_rate);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64* rng) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_params(std::vector<Param<T>*>& out) override;
  void set_block_threads(int threads);
  void collect_relus(std::vector<const Relu<T>*>& out) const {
    out.push_back(&relu1_);
    out.push_back(&relu2_);
  }

 private:
  Conv2d<T> conv1_;
  ChannelAffine<T> affine1_;
  Relu<T> relu1_;
  Conv2d<T> conv2_;
  ChannelAffine<T> affine2_;
  Relu<T> relu2_;
  Dropout<T> dropout_;
};

struct ModelConfig {
  int in_channels = kPatchChannels;
  int n_blocks = 3;
  int base_width = 16;
  double dropout_rate = 0.2;
  QuantileSpec quantiles = QuantileSpec::paper_default();
  int head_hidden = 32;
  // Average-pool factor after the stem; must divide the patch side.
  int stem_pool = 2;
  // Fixed multiplier on the final ReLU so weights stay O(1) while outputs
  // are raw pixel counts.
  double output_scale = 100.0;

  // Throws ConfigError, including when 0.5 is not among the quantiles.
  void validate() const;
};

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;

  bool operator==(const NamedTensor&) const = default;
};

// Everything needed to rebuild a trained model.
struct ModelState {
  ModelConfig config;
  std::vector<NamedTensor> params;
  ChannelStats norm;
  // Raster channels fed to the network, in order (all five unless a
  // channel was ablated).
  std::vector<int> input_channels{0, 1, 2, 3, 4};
  std::uint64_t rng_seed = 0;
};

template <class T>
class MiniResNet {
 public:
  explicit MiniResNet(ModelConfig config);
  MiniResNet(const MiniResNet&) = delete;
  MiniResNet& operator=(const MiniResNet&) = delete;
  MiniResNet(MiniResNet&&) = default;
  MiniResNet& operator=(MiniResNet&&) = default;

  // He (fan-in) normal weights, unit scales, zero shifts and biases.
  void init_params(std::uint64_t seed);
  // Throws FormatError on missing/unknown names or shape mismatches.
  void load_params(const std::vector<NamedTensor>& params);
  std::vector<NamedTensor> export_params() const;

  // x: (B, in_channels, 50, 50) normalized inputs. Returns (B, K).
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64* rng = nullptr);
  // d loss / d output (B, K) -> d loss / d input; accumulates parameter
  // gradients.
  Tensor<T> backward(const Tensor<T>& dout);

  void zero_grad();
  std::vector<Param<T>*> params();
  std::size_t parameter_count();
  void set_threads(int threads);

  const ModelConfig& config() const { return config_; }
  int median_index() const { return *config_.quantiles.median_index(); }

  Linear<T>& fc1() { return *fc1_; }
  Linear<T>& fc2() { return *fc2_; }
  // Every ReLU in forward order; used to detect kinks in gradient checks.
  std::vector<const Relu<T>*> relus() const;

 private:
  ModelConfig config_;
  std::vector<std::unique_ptr<Layer<T>>> stem_;
  std::vector<std::unique_ptr<ResidualBlock<T>>> blocks_;
  GlobalAvgPool<T> gap_;
  std::unique_ptr<Linear<T>> fc1_;
  Relu<T> relu_fc1_;
  std::unique_ptr<Linear<T>> fc2_;
  Relu<T> relu_out_;
  Scale<T> scale_;
  bool forward_done_ = false;
};

// Builds a network from a state.
template <class T>
MiniResNet<T> network_from_state(const ModelState& state);

// Prepares raw CHW patch inputs for the network: selects the state's input
// channels and applies its normalization. Returns (B, C, 50, 50).
template <class T>
Tensor<T> prepare_batch(const ModelState& state, std::span<const Patch* const> patches);

// Eval-mode outputs for a batch: (B, K).
Tensor<double> predict_all(const ModelState& state, std::span<const Patch* const> patches,
                           int threads = 1);

// Output of the 0.5 node for one patch.
double predict_median(const ModelState& state, const Patch& patch);

// Parameter gradients of the mean batch quantile loss (eval mode, 64-bit),
// in parameter order.
struct GradientResult {
  double loss = 0.0;
  std::vector<std::string> names;
  std::vector<std::vector<double>> grads;
};
GradientResult backward_gradients(const ModelState& state, std::span<const Patch* const> patches,
                                  std::span<const double> labels);

}  // namespace coverest
