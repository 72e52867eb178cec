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

#include "coverest/nnet.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <fmt/format.h>

#include "coverest/parallel.hpp"

namespace coverest {

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

[[noreturn]] void no_forward(const char* layer) {
  throw UsageError(fmt::format("{}: backward() called without a recorded forward()", layer));
}

void expect_rank(const std::vector<int>& shape, int rank, const char* layer) {
  if (static_cast<int>(shape.size()) != rank) {
    throw GeometryError(fmt::format("{}: expected a rank-{} input, got shape {}", layer, rank,
                                    shape_string(shape)));
  }
}

void expect_same_shape(const std::vector<int>& expected, const std::vector<int>& actual,
                       const char* layer) {
  if (expected != actual) {
    throw GeometryError(fmt::format("{}: gradient shape {} does not match output shape {}",
                                    layer, shape_string(actual), shape_string(expected)));
  }
}

template <class T>
Param<T> make_param(std::string name, std::vector<int> shape, T fill = T{}) {
  Param<T> p;
  p.name = std::move(name);
  p.value = Tensor<T>(shape, fill);
  p.grad = Tensor<T>(std::move(shape));
  return p;
}

// Unfolds one (C, H, W) sample into a (C*k*k, H*W) matrix, zero padded.
template <class T>
void im2col(const T* in, int channels, int height, int width, int kernel, T* col) {
  const int pad = kernel / 2;
  const int hw = height * width;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < kernel; ++ki) {
      for (int kj = 0; kj < kernel; ++kj) {
        T* row = col + static_cast<std::size_t>((c * kernel + ki) * kernel + kj) * hw;
        const int dx = kj - pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(width, width - dx);
        for (int y = 0; y < height; ++y) {
          T* dst = row + y * width;
          const int iy = y + ki - pad;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + width, T{});
            continue;
          }
          const T* src = in + (static_cast<std::size_t>(c) * height + iy) * width;
          std::fill(dst, dst + x0, T{});
          for (int x = x0; x < x1; ++x) dst[x] = src[x + dx];
          std::fill(dst + x1, dst + width, T{});
        }
      }
    }
  }
}

// Adjoint of im2col: scatters a (C*k*k, H*W) matrix back onto (C, H, W).
template <class T>
void col2im(const T* col, int channels, int height, int width, int kernel, T* out) {
  const int pad = kernel / 2;
  const int hw = height * width;
  std::fill(out, out + static_cast<std::size_t>(channels) * hw, T{});
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < kernel; ++ki) {
      for (int kj = 0; kj < kernel; ++kj) {
        const T* row = col + static_cast<std::size_t>((c * kernel + ki) * kernel + kj) * hw;
        const int dx = kj - pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(width, width - dx);
        for (int y = 0; y < height; ++y) {
          const int iy = y + ki - pad;
          if (iy < 0 || iy >= height) continue;
          T* dst = out + (static_cast<std::size_t>(c) * height + iy) * width;
          const T* src = row + y * width;
          for (int x = x0; x < x1; ++x) dst[x + dx] += src[x];
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <class T>
Conv2d<T>::Conv2d(std::string name, int in_channels, int out_channels, int kernel)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      weight_(make_param<T>(std::move(name) + ".weight",
                            {out_channels, in_channels, kernel, kernel})) {
  if (kernel % 2 != 1) throw ConfigError(fmt::format("conv kernel must be odd, got {}", kernel));
}

template <class T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode, std::mt19937_64*) {
  expect_rank(x.shape, 4, "conv2d");
  if (x.dim(1) != in_channels_) {
    throw GeometryError(fmt::format("conv2d: expected {} input channels, got shape {}",
                                    in_channels_, shape_string(x.shape)));
  }
  const int batch = x.dim(0), height = x.dim(2), width = x.dim(3);
  const int hw = height * width;
  const int col_rows = in_channels_ * kernel_ * kernel_;
  Tensor<T> y({batch, out_channels_, height, width});
  const Eigen::Map<const MatR<T>> w(weight_.value.data(), out_channels_, col_rows);
  parallel_for(batch, this->threads_, [&](std::size_t b) {
    thread_local std::vector<T> col;
    col.resize(static_cast<std::size_t>(col_rows) * hw);
    im2col(x.data() + b * static_cast<std::size_t>(in_channels_) * hw, in_channels_, height,
           width, kernel_, col.data());
    const Eigen::Map<const MatR<T>> cm(col.data(), col_rows, hw);
    Eigen::Map<MatR<T>> out(y.data() + b * static_cast<std::size_t>(out_channels_) * hw,
                            out_channels_, hw);
    out.noalias() = w * cm;
  });
  input_ = x;
  has_cache_ = true;
  return y;
}

template <class T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy) {
  if (!has_cache_) no_forward("conv2d");
  const int batch = input_.dim(0), height = input_.dim(2), width = input_.dim(3);
  expect_same_shape({batch, out_channels_, height, width}, dy.shape, "conv2d");
  const int hw = height * width;
  const int col_rows = in_channels_ * kernel_ * kernel_;
  const std::size_t wsize = weight_.value.size();
  Tensor<T> dx(input_grad_ ? input_.shape : std::vector<int>{0});
  // Per-sample weight gradients, reduced in sample order afterwards so the
  // result does not depend on the thread count.
  std::vector<T> dw_per_sample(wsize * batch);
  const Eigen::Map<const MatR<T>> w(weight_.value.data(), out_channels_, col_rows);
  parallel_for(batch, this->threads_, [&](std::size_t b) {
    thread_local std::vector<T> col;
    thread_local std::vector<T> dcol;
    col.resize(static_cast<std::size_t>(col_rows) * hw);
    dcol.resize(col.size());
    im2col(input_.data() + b * static_cast<std::size_t>(in_channels_) * hw, in_channels_,
           height, width, kernel_, col.data());
    const Eigen::Map<const MatR<T>> cm(col.data(), col_rows, hw);
    const Eigen::Map<const MatR<T>> g(dy.data() + b * static_cast<std::size_t>(out_channels_) * hw,
                                      out_channels_, hw);
    Eigen::Map<MatR<T>> dwb(dw_per_sample.data() + b * wsize, out_channels_, col_rows);
    dwb.noalias() = g * cm.transpose();
    if (!input_grad_) return;
    Eigen::Map<MatR<T>> dc(dcol.data(), col_rows, hw);
    dc.noalias() = w.transpose() * g;
    col2im(dcol.data(), in_channels_, height, width, kernel_,
           dx.data() + b * static_cast<std::size_t>(in_channels_) * hw);
  });
  T* grad = weight_.grad.data();
  for (int b = 0; b < batch; ++b) {
    const T* src = dw_per_sample.data() + static_cast<std::size_t>(b) * wsize;
    for (std::size_t i = 0; i < wsize; ++i) grad[i] += src[i];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ChannelAffine

template <class T>
ChannelAffine<T>::ChannelAffine(std::string name, int channels)
    : channels_(channels),
      scale_(make_param<T>(name + ".scale", {channels}, T{1})),
      shift_(make_param<T>(name + ".shift", {channels})) {}

namespace {

// (outer, channels, inner) view of a rank-2 or rank-4 tensor.
struct ChannelLayout {
  std::size_t outer;
  int channels;
  std::size_t inner;
};

ChannelLayout channel_layout(const std::vector<int>& shape, int channels, const char* layer) {
  if (shape.size() != 2 && shape.size() != 4) {
    throw GeometryError(fmt::format("{}: expected rank 2 or 4, got shape {}", layer,
                                    shape_string(shape)));
  }
  if (shape[1] != channels) {
    throw GeometryError(fmt::format("{}: expected {} channels, got shape {}", layer, channels,
                                    shape_string(shape)));
  }
  const std::size_t inner =
      shape.size() == 4 ? static_cast<std::size_t>(shape[2]) * shape[3] : std::size_t{1};
  return {static_cast<std::size_t>(shape[0]), channels, inner};
}

}  // namespace

template <class T>
Tensor<T> ChannelAffine<T>::forward(const Tensor<T>& x, Mode, std::mt19937_64*) {
  const auto l = channel_layout(x.shape, channels_, "channel_affine");
  Tensor<T> y(x.shape);
  const T* s = scale_.value.data();
  const T* t = shift_.value.data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (int c = 0; c < l.channels; ++c) {
      const std::size_t base = (o * l.channels + c) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) y.values[base + i] = s[c] * x.values[base + i] + t[c];
    }
  }
  input_ = x;
  has_cache_ = true;
  return y;
}

template <class T>
Tensor<T> ChannelAffine<T>::backward(const Tensor<T>& dy) {
  if (!has_cache_) no_forward("channel_affine");
  expect_same_shape(input_.shape, dy.shape, "channel_affine");
  const auto l = channel_layout(input_.shape, channels_, "channel_affine");
  Tensor<T> dx(input_.shape);
  const T* s = scale_.value.data();
  for (int c = 0; c < l.channels; ++c) {
    T ds{}, dt{};
    for (std::size_t o = 0; o < l.outer; ++o) {
      const std::size_t base = (o * l.channels + c) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) {
        const T g = dy.values[base + i];
        ds += g * input_.values[base + i];
        dt += g;
        dx.values[base + i] = g * s[c];
      }
    }
    scale_.grad.values[c] += ds;
    shift_.grad.values[c] += dt;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Relu

template <class T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x, Mode, std::mt19937_64*) {
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y.values[i] = x.values[i] > T{} ? x.values[i] : T{};
  input_ = x;
  has_cache_ = true;
  return y;
}

template <class T>
Tensor<T> Relu<T>::backward(const Tensor<T>& dy) {
  if (!has_cache_) no_forward("relu");
  expect_same_shape(input_.shape, dy.shape, "relu");
  Tensor<T> dx(dy.shape);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    dx.values[i] = input_.values[i] > T{} ? dy.values[i] : T{};
  }
  return dx;
}

// ---------------------------------------------------------------------------
// AvgPool

template <class T>
AvgPool<T>::AvgPool(int factor) : factor_(factor) {
  if (factor < 1) throw ConfigError(fmt::format("pool factor must be >= 1, got {}", factor));
}

template <class T>
Tensor<T> AvgPool<T>::forward(const Tensor<T>& x, Mode, std::mt19937_64*) {
  expect_rank(x.shape, 4, "avg_pool");
  const int batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % factor_ != 0 || w % factor_ != 0) {
    throw GeometryError(fmt::format("avg_pool: {}x{} is not divisible by {}", h, w, factor_));
  }
  const int oh = h / factor_, ow = w / factor_;
  Tensor<T> y({batch, ch, oh, ow});
  const T inv = T{1} / static_cast<T>(factor_ * factor_);
  for (int bc = 0; bc < batch * ch; ++bc) {
    const T* src = x.data() + static_cast<std::size_t>(bc) * h * w;
    T* dst = y.data() + static_cast<std::size_t>(bc) * oh * ow;
    for (int r = 0; r < oh; ++r) {
      for (int c = 0; c < ow; ++c) {
        T sum{};
        for (int i = 0; i < factor_; ++i) {
          for (int j = 0; j < factor_; ++j) sum += src[(r * factor_ + i) * w + c * factor_ + j];
        }
        dst[r * ow + c] = sum * inv;
      }
    }
  }
  in_shape_ = x.shape;
  has_cache_ = true;
  return y;
}

template <class T>
Tensor<T> AvgPool<T>::backward(const Tensor<T>& dy) {
  if (!has_cache_) no_forward("avg_pool");
  const int batch = in_shape_[0], ch = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
  const int oh = h / factor_, ow = w / factor_;
  expect_same_shape({batch, ch, oh, ow}, dy.shape, "avg_pool");
  Tensor<T> dx(in_shape_);
  const T inv = T{1} / static_cast<T>(factor_ * factor_);
  for (int bc = 0; bc < batch * ch; ++bc) {
    const T* src = dy.data() + static_cast<std::size_t>(bc) * oh * ow;
    T* dst = dx.data() + static_cast<std::size_t>(bc) * h * w;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) dst[r * w + c] = src[(r / factor_) * ow + c / factor_] * inv;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// GlobalAvgPool

template <class T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Mode, std::mt19937_64*) {
  expect_rank(x.shape, 4, "global_avg_pool");
  const int batch = x.dim(0), ch = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> y({batch, ch});
  for (int bc = 0; bc < batch * ch; ++bc) {
    const T* src = x.data() + bc * hw;
    T sum{};
    for (std::size_t i = 0; i < hw; ++i) sum += src[i];
    y.values[bc] = sum / static_cast<T>(hw);
  }
  in_shape_ = x.shape;
  has_cache_ = true;
  return y;
}

template <class T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& dy) {
  if (!has_cache_) no_forward("global_avg_pool");
  expect_same_shape({in_shape_[0], in_shape_[1]}, dy.shape, "global_avg_pool");
  const std::size_t hw = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
  Tensor<T> dx(in_shape_);
  for (std::size_t bc = 0; bc < dy.size(); ++bc) {
    const T g = dy.values[bc] / static_cast<T>(hw);
    std::fill(dx.data() + bc * hw, dx.data() + (bc + 1) * hw, g);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

template <class T>
Linear<T>::Linear(std::string name, int in_features, int out_features)
    : in_features_(in_features),
      out_features_(out_features),
      weight_(make_param<T>(name + ".weight", {out_features, in_features})),
      bias_(make_param<T>(name + ".bias", {out_features})) {}

template <class T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Mode, std::mt19937_64*) {
  expect_rank(x.shape, 2, "linear");
  if (x.dim(1) != in_features_) {
    throw GeometryError(fmt::format("linear: expected {} input features, got shape {}",
                                    in_features_, shape_string(x.shape)));
  }
  const int batch = x.dim(0);
  Tensor<T> y({batch, out_features_});
  const Eigen::Map<const MatR<T>> xm(x.data(), batch, in_features_);
  const Eigen::Map<const MatR<T>> w(weight_.value.data(), out_features_, in_features_);
  const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias_.value.data(), out_features_);
  Eigen::Map<MatR<T>> ym(y.data(), batch, out_features_);
  ym.noalias() = xm * w.transpose();
  ym.rowwise() += b;
  input_ = x;
  has_cache_ = true;
  return y;
}

template <class T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy) {
  if (!has_cache_) no_forward("linear");
  const int batch = input_.dim(0);
  expect_same_shape({batch, out_features_}, dy.shape, "linear");
  const Eigen::Map<const MatR<T>> xm(input_.data(), batch, in_features_);
  const Eigen::Map<const MatR<T>> g(dy.data(), batch, out_features_);
  const Eigen::Map<const MatR<T>> w(weight_.value.data(), out_features_, in_features_);
  Eigen::Map<MatR<T>> dw(weight_.grad.data(), out_features_, in_features_);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(bias_.grad.data(), out_features_);
  dw.noalias() += g.transpose() * xm;
  db += g.colwise().sum();
  Tensor<T> dx(input_.shape);
  Eigen::Map<MatR<T>> dxm(dx.data(), batch, in_features_);
  dxm.noalias() = g * w;
  return dx;
}

// ---------------------------------------------------------------------------
// Dropout

template <class T>
Dropout<T>::Dropout(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError(fmt::format("dropout rate must lie in [0, 1), got {}", rate));
  }
}

template <class T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& x, Mode mode, std::mt19937_64* rng) {
  has_cache_ = true;
  if (mode == Mode::kEval || rate_ == 0.0) {
    keep_.clear();
    return x;
  }
  if (rng == nullptr) throw UsageError("dropout: train mode requires an RNG");
  std::bernoulli_distribution drop(rate_);
  const T survivor = static_cast<T>(1.0 / (1.0 - rate_));
  keep_.resize(x.size());
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    keep_[i] = drop(*rng) ? T{} : survivor;
    y.values[i] = x.values[i] * keep_[i];
  }
  return y;
}

template <class T>
Tensor<T> Dropout<T>::backward(const Tensor<T>& dy) {
  if (!has_cache_) no_forward("dropout");
  if (keep_.empty()) return dy;
  if (dy.size() != keep_.size()) {
    throw GeometryError(fmt::format("dropout: gradient has {} values, mask has {}", dy.size(),
                                    keep_.size()));
  }
  Tensor<T> dx(dy.shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx.values[i] = dy.values[i] * keep_[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Scale

template <class T>
Tensor<T> Scale<T>::forward(const Tensor<T>& x, Mode, std::mt19937_64*) {
  Tensor<T> y(x.shape);
  const T f = static_cast<T>(factor_);
  for (std::size_t i = 0; i < x.size(); ++i) y.values[i] = x.values[i] * f;
  has_cache_ = true;
  return y;
}

template <class T>
Tensor<T> Scale<T>::backward(const Tensor<T>& dy) {
  if (!has_cache_) no_forward("scale");
  Tensor<T> dx(dy.shape);
  const T f = static_cast<T>(factor_);
  for (std::size_t i = 0; i < dy.size(); ++i) dx.values[i] = dy.values[i] * f;
  return dx;
}

// ---------------------------------------------------------------------------
// ResidualBlock

template <class T>
ResidualBlock<T>::ResidualBlock(const std::string& name, int channels, double dropout_rate)
    : conv1_(name + ".conv1", channels, channels, 3),
      affine1_(name + ".affine1", channels),
      conv2_(name + ".conv2", channels, channels, 3),
      affine2_(name + ".affine2", channels),
      dropout_(dropout_rate) {}

template <class T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, Mode mode, std::mt19937_64* rng) {
  Tensor<T> h = conv1_.forward(x, mode, rng);
  h = affine1_.forward(h, mode, rng);
  h = relu1_.forward(h, mode, rng);
  h = conv2_.forward(h, mode, rng);
  h = affine2_.forward(h, mode, rng);
  for (std::size_t i = 0; i < h.size(); ++i) h.values[i] += x.values[i];
  h = relu2_.forward(h, mode, rng);
  return dropout_.forward(h, mode, rng);
}

template <class T>
Tensor<T> ResidualBlock<T>::backward(const Tensor<T>& dy) {
  Tensor<T> g = dropout_.backward(dy);
  g = relu2_.backward(g);
  Tensor<T> skip = g;
  g = affine2_.backward(g);
  g = conv2_.backward(g);
  g = relu1_.backward(g);
  g = affine1_.backward(g);
  g = conv1_.backward(g);
  for (std::size_t i = 0; i < g.size(); ++i) g.values[i] += skip.values[i];
  return g;
}

template <class T>
void ResidualBlock<T>::collect_params(std::vector<Param<T>*>& out) {
  conv1_.collect_params(out);
  affine1_.collect_params(out);
  conv2_.collect_params(out);
  affine2_.collect_params(out);
}

template <class T>
void ResidualBlock<T>::set_block_threads(int threads) {
  conv1_.set_threads(threads);
  conv2_.set_threads(threads);
}

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (in_channels < 1) throw ConfigError(fmt::format("in_channels must be >= 1, got {}", in_channels));
  if (n_blocks < 0) throw ConfigError(fmt::format("n_blocks must be >= 0, got {}", n_blocks));
  if (base_width < 1) throw ConfigError(fmt::format("base_width must be >= 1, got {}", base_width));
  if (head_hidden < 1) throw ConfigError(fmt::format("head_hidden must be >= 1, got {}", head_hidden));
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError(fmt::format("dropout_rate must lie in [0, 1), got {}", dropout_rate));
  }
  if (stem_pool < 1 || kPatchSize % stem_pool != 0) {
    throw ConfigError(fmt::format("stem_pool {} must divide the patch side {}", stem_pool, kPatchSize));
  }
  if (!(output_scale > 0.0)) throw ConfigError("output_scale must be positive");
  if (!quantiles.median_index()) {
    throw ConfigError("quantile levels must include 0.5; inference reads the median node");
  }
}

// ---------------------------------------------------------------------------
// MiniResNet

template <class T>
MiniResNet<T>::MiniResNet(ModelConfig config)
    : config_(std::move(config)), scale_(0.0) {
  config_.validate();
  const int w = config_.base_width;
  auto stem_conv = std::make_unique<Conv2d<T>>("stem.conv", config_.in_channels, w, 3);
  stem_conv->set_input_grad(false);
  stem_.push_back(std::move(stem_conv));
  stem_.push_back(std::make_unique<ChannelAffine<T>>("stem.affine", w));
  stem_.push_back(std::make_unique<Relu<T>>());
  stem_.push_back(std::make_unique<AvgPool<T>>(config_.stem_pool));
  for (int i = 0; i < config_.n_blocks; ++i) {
    blocks_.push_back(
        std::make_unique<ResidualBlock<T>>(fmt::format("block{}", i), w, config_.dropout_rate));
  }
  fc1_ = std::make_unique<Linear<T>>("head.fc1", w, config_.head_hidden);
  fc2_ = std::make_unique<Linear<T>>("head.fc2", config_.head_hidden, config_.quantiles.size());
  scale_ = Scale<T>(config_.output_scale);
}

template <class T>
std::vector<Param<T>*> MiniResNet<T>::params() {
  std::vector<Param<T>*> out;
  for (auto& l : stem_) l->collect_params(out);
  for (auto& b : blocks_) b->collect_params(out);
  fc1_->collect_params(out);
  fc2_->collect_params(out);
  return out;
}

template <class T>
std::size_t MiniResNet<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : params()) n += p->value.size();
  return n;
}

template <class T>
void MiniResNet<T>::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (Param<T>* p : params()) {
    const auto& name = p->name;
    const bool is_weight = name.ends_with(".weight");
    if (is_weight) {
      // fan_in = product of all dims except the first.
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < p->value.shape.size(); ++d) fan_in *= p->value.shape[d];
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (auto& v : p->value.values) v = static_cast<T>(dist(rng));
    } else if (name.ends_with(".scale")) {
      p->value.fill(T{1});
    } else {
      p->value.fill(T{});
    }
    p->grad.fill(T{});
  }
}

template <class T>
void MiniResNet<T>::load_params(const std::vector<NamedTensor>& tensors) {
  auto mine = params();
  if (tensors.size() != mine.size()) {
    throw FormatError(fmt::format("model expects {} parameter tensors, got {}", mine.size(),
                                  tensors.size()));
  }
  for (std::size_t i = 0; i < mine.size(); ++i) {
    const NamedTensor& t = tensors[i];
    Param<T>& p = *mine[i];
    if (t.name != p.name) {
      throw FormatError(fmt::format("parameter {} is '{}', expected '{}'", i, t.name, p.name));
    }
    if (t.shape != p.value.shape || t.values.size() != p.value.size()) {
      throw FormatError(fmt::format("parameter {} has shape {}, expected {}", t.name,
                                    shape_string(t.shape), shape_string(p.value.shape)));
    }
    for (std::size_t k = 0; k < t.values.size(); ++k) p.value.values[k] = static_cast<T>(t.values[k]);
    p.grad.fill(T{});
  }
}

template <class T>
std::vector<NamedTensor> MiniResNet<T>::export_params() const {
  auto* self = const_cast<MiniResNet<T>*>(this);
  std::vector<NamedTensor> out;
  for (Param<T>* p : self->params()) {
    NamedTensor t{p->name, p->value.shape, {}};
    t.values.reserve(p->value.size());
    for (T v : p->value.values) t.values.push_back(static_cast<float>(v));
    out.push_back(std::move(t));
  }
  return out;
}

template <class T>
Tensor<T> MiniResNet<T>::forward(const Tensor<T>& x, Mode mode, std::mt19937_64* rng) {
  const std::vector<int> expected{x.rank() > 0 ? x.dim(0) : 0, config_.in_channels, kPatchSize,
                                  kPatchSize};
  if (x.shape != expected) {
    throw GeometryError(fmt::format("model input: expected shape {}, got {}",
                                    shape_string(expected), shape_string(x.shape)));
  }
  if (mode == Mode::kTrain && config_.dropout_rate > 0.0 && config_.n_blocks > 0 && !rng) {
    throw UsageError("train-mode forward requires an RNG for dropout");
  }
  Tensor<T> h = x;
  for (auto& l : stem_) h = l->forward(h, mode, rng);
  for (auto& b : blocks_) h = b->forward(h, mode, rng);
  h = gap_.forward(h, mode, rng);
  h = fc1_->forward(h, mode, rng);
  h = relu_fc1_.forward(h, mode, rng);
  h = fc2_->forward(h, mode, rng);
  h = relu_out_.forward(h, mode, rng);
  h = scale_.forward(h, mode, rng);
  forward_done_ = true;
  return h;
}

template <class T>
Tensor<T> MiniResNet<T>::backward(const Tensor<T>& dout) {
  if (!forward_done_) throw UsageError("model backward() called without a recorded forward()");
  Tensor<T> g = scale_.backward(dout);
  g = relu_out_.backward(g);
  g = fc2_->backward(g);
  g = relu_fc1_.backward(g);
  g = fc1_->backward(g);
  g = gap_.backward(g);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = (*it)->backward(g);
  for (auto it = stem_.rbegin(); it != stem_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

template <class T>
void MiniResNet<T>::zero_grad() {
  for (Param<T>* p : params()) p->grad.fill(T{});
}

template <class T>
void MiniResNet<T>::set_threads(int threads) {
  for (auto& l : stem_) l->set_threads(threads);
  for (auto& b : blocks_) b->set_block_threads(threads);
}

template <class T>
std::vector<const Relu<T>*> MiniResNet<T>::relus() const {
  std::vector<const Relu<T>*> out;
  out.push_back(static_cast<const Relu<T>*>(stem_[2].get()));
  for (const auto& b : blocks_) b->collect_relus(out);
  out.push_back(&relu_fc1_);
  out.push_back(&relu_out_);
  return out;
}

// ---------------------------------------------------------------------------
// State-level helpers

template <class T>
MiniResNet<T> network_from_state(const ModelState& state) {
  MiniResNet<T> net(state.config);
  net.load_params(state.params);
  return net;
}

template <class T>
Tensor<T> prepare_batch(const ModelState& state, std::span<const Patch* const> patches) {
  const int channels = static_cast<int>(state.input_channels.size());
  if (channels != state.config.in_channels) {
    throw ConfigError(fmt::format("state selects {} channels but the model expects {}", channels,
                                  state.config.in_channels));
  }
  if (state.norm.channels() != channels) {
    throw ConfigError(fmt::format("normalization has {} channels, model expects {}",
                                  state.norm.channels(), channels));
  }
  const int batch = static_cast<int>(patches.size());
  const std::size_t per_sample = static_cast<std::size_t>(channels) * kPatchPixels;
  std::vector<float> raw;
  raw.reserve(per_sample * batch);
  for (const Patch* p : patches) {
    if (p->input.size() != static_cast<std::size_t>(kPatchChannels) * kPatchPixels) {
      throw GeometryError(fmt::format("patch {}@({}, {}) has {} input values, expected {}",
                                      p->tile_id, p->row, p->col, p->input.size(),
                                      kPatchChannels * kPatchPixels));
    }
    auto sel = select_channels(p->input, state.input_channels, kPatchPixels);
    raw.insert(raw.end(), sel.begin(), sel.end());
  }
  normalize_channels(raw, state.norm, kPatchPixels);
  Tensor<T> x({batch, channels, kPatchSize, kPatchSize});
  std::copy(raw.begin(), raw.end(), x.values.begin());
  return x;
}

Tensor<double> predict_all(const ModelState& state, std::span<const Patch* const> patches,
                           int threads) {
  auto net = network_from_state<float>(state);
  net.set_threads(threads);
  const int k = state.config.quantiles.size();
  Tensor<double> out({static_cast<int>(patches.size()), k});
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < patches.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, patches.size() - start);
    const auto x = prepare_batch<float>(state, patches.subspan(start, n));
    const auto y = net.forward(x, Mode::kEval);
    for (std::size_t i = 0; i < y.size(); ++i) out.values[start * k + i] = y.values[i];
  }
  return out;
}

double predict_median(const ModelState& state, const Patch& patch) {
  state.config.validate();
  const Patch* one[] = {&patch};
  const auto y = predict_all(state, one);
  return y.values[*state.config.quantiles.median_index()];
}

GradientResult backward_gradients(const ModelState& state, std::span<const Patch* const> patches,
                                  std::span<const double> labels) {
  auto net = network_from_state<double>(state);
  const auto x = prepare_batch<double>(state, patches);
  const auto y = net.forward(x, Mode::kEval);
  const auto loss = batch_loss(labels, y.values, state.config.quantiles);
  net.zero_grad();
  net.backward(Tensor<double>(y.shape, loss.gradient));
  GradientResult out;
  out.loss = loss.value;
  for (Param<double>* p : net.params()) {
    out.names.push_back(p->name);
    out.grads.push_back(p->grad.values);
  }
  return out;
}

#define COVEREST_INSTANTIATE(T)                                                         \
  template class Conv2d<T>;                                                             \
  template class ChannelAffine<T>;                                                      \
  template class Relu<T>;                                                               \
  template class AvgPool<T>;                                                            \
  template class GlobalAvgPool<T>;                                                      \
  template class Linear<T>;                                                             \
  template class Dropout<T>;                                                            \
  template class Scale<T>;                                                              \
  template class ResidualBlock<T>;                                                      \
  template class MiniResNet<T>;                                                         \
  template MiniResNet<T> network_from_state<T>(const ModelState&);                      \
  template Tensor<T> prepare_batch<T>(const ModelState&, std::span<const Patch* const>);

COVEREST_INSTANTIATE(float)
COVEREST_INSTANTIATE(double)

#undef COVEREST_INSTANTIATE

}  // namespace coverest
