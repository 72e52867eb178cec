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

#include "coverest/raster.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace coverest {

namespace {

void check_dims(int height, int width, double gsd) {
  if (height < 0 || width < 0) {
    throw GeometryError(fmt::format("negative raster size {}x{}", height, width));
  }
  if (!(gsd > 0.0) || !std::isfinite(gsd)) {
    throw GeometryError(fmt::format("gsd must be positive, got {}", gsd));
  }
}

}  // namespace

Raster::Raster(int height, int width, int channels, double gsd,
               std::string region_tag)
    : Raster(height, width, channels, gsd,
             std::vector<float>(static_cast<std::size_t>(height) * width *
                                std::max(channels, 0)),
             std::move(region_tag)) {}

Raster::Raster(int height, int width, int channels, double gsd,
               std::vector<float> data, std::string region_tag)
    : height_(height),
      width_(width),
      channels_(channels),
      gsd_(gsd),
      data_(std::move(data)),
      region_tag_(std::move(region_tag)) {
  check_dims(height, width, gsd);
  if (channels < 1) {
    throw GeometryError(fmt::format("raster needs at least one channel, got {}", channels));
  }
  const auto expected = static_cast<std::size_t>(height) * width * channels;
  if (data_.size() != expected) {
    throw GeometryError(fmt::format("raster data length {} != {}x{}x{}", data_.size(),
                                    height, width, channels));
  }
}

BinaryMask::BinaryMask(int height, int width, double gsd)
    : BinaryMask(height, width, gsd,
                 std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width)) {}

BinaryMask::BinaryMask(int height, int width, double gsd,
                       std::vector<std::uint8_t> values)
    : height_(height), width_(width), gsd_(gsd), values_(std::move(values)) {
  check_dims(height, width, gsd);
  if (values_.size() != static_cast<std::size_t>(height) * width) {
    throw GeometryError(fmt::format("mask data length {} != {}x{}", values_.size(),
                                    height, width));
  }
  for (std::uint8_t v : values_) {
    if (v > 1) throw FormatError(fmt::format("mask value {} is not 0 or 1", int{v}));
  }
}

BinaryMask downsample_and_binarize(const Raster& confidence, double target_gsd) {
  const double ratio_real = target_gsd / confidence.gsd();
  const long ratio = std::lround(ratio_real);
  if (ratio < 1 || std::abs(ratio_real - static_cast<double>(ratio)) > 1e-9 * ratio_real) {
    throw GeometryError(fmt::format("target gsd {} is not an integer multiple of {}",
                                    target_gsd, confidence.gsd()));
  }
  const int r = static_cast<int>(ratio);
  if (confidence.height() % r != 0 || confidence.width() % r != 0) {
    throw GeometryError(fmt::format("raster {}x{} is not divisible by ratio {}",
                                    confidence.height(), confidence.width(), r));
  }
  const int out_h = confidence.height() / r;
  const int out_w = confidence.width() / r;
  BinaryMask out(out_h, out_w, target_gsd);
  const double block_area = static_cast<double>(r) * r;
  for (int orow = 0; orow < out_h; ++orow) {
    for (int ocol = 0; ocol < out_w; ++ocol) {
      double sum = 0.0;
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < r; ++j) {
          const float v = confidence.at(orow * r + i, ocol * r + j, 0);
          if (!(v >= 0.0f)) {
            throw GeometryError(fmt::format("confidence value {} at ({}, {}) is negative",
                                            v, orow * r + i, ocol * r + j));
          }
          sum += v;
        }
      }
      out.set(orow, ocol, sum / block_area > 0.0);
    }
  }
  return out;
}

std::vector<Window> patch_windows(int height, int width) {
  std::vector<Window> windows;
  for (int row = 0; row + kPatchSize <= height; row += kPatchSize) {
    for (int col = 0; col + kPatchSize <= width; col += kPatchSize) {
      windows.push_back({row, col, kPatchSize, kPatchSize});
    }
  }
  return windows;
}

int count_building_pixels(const BinaryMask& mask, const Window& window) {
  if (window.row < 0 || window.col < 0 || window.height < 0 || window.width < 0 ||
      window.row + window.height > mask.height() ||
      window.col + window.width > mask.width()) {
    throw GeometryError(fmt::format("window ({}, {}, {}x{}) outside {}x{} mask", window.row,
                                    window.col, window.height, window.width,
                                    mask.height(), mask.width()));
  }
  int count = 0;
  const auto values = mask.values();
  for (int r = window.row; r < window.row + window.height; ++r) {
    const auto* line = values.data() + static_cast<std::size_t>(r) * mask.width();
    for (int c = window.col; c < window.col + window.width; ++c) count += line[c];
  }
  return count;
}

std::vector<Patch> crop_into_patches(const Tile& tile, Warnings* warnings) {
  const Raster& raster = tile.raster;
  if (raster.height() != tile.mask.height() || raster.width() != tile.mask.width()) {
    throw GeometryError(fmt::format("tile {}: raster {}x{} and mask {}x{} differ", tile.id,
                                    raster.height(), raster.width(), tile.mask.height(),
                                    tile.mask.width()));
  }
  if (raster.channels() != kPatchChannels) {
    throw GeometryError(fmt::format("tile {}: expected {} channels, got {}", tile.id,
                                    kPatchChannels, raster.channels()));
  }
  const auto windows = patch_windows(raster.height(), raster.width());
  if (windows.empty()) {
    if (warnings) {
      warnings->add(fmt::format("tile {} ({}x{}) is smaller than one {}x{} patch", tile.id,
                                raster.height(), raster.width(), kPatchSize, kPatchSize));
    }
    return {};
  }
  std::vector<Patch> patches;
  patches.reserve(windows.size());
  for (const Window& w : windows) {
    Patch p;
    p.tile_id = tile.id;
    p.row = w.row;
    p.col = w.col;
    p.region_tag = raster.region_tag();
    p.label = count_building_pixels(tile.mask, w);
    p.input.resize(static_cast<std::size_t>(kPatchChannels) * kPatchPixels);
    for (int ch = 0; ch < kPatchChannels; ++ch) {
      float* dst = p.input.data() + static_cast<std::size_t>(ch) * kPatchPixels;
      for (int r = 0; r < kPatchSize; ++r) {
        for (int c = 0; c < kPatchSize; ++c) {
          dst[r * kPatchSize + c] = raster.at(w.row + r, w.col + c, ch);
        }
      }
    }
    patches.push_back(std::move(p));
  }
  return patches;
}

ChannelStats compute_channel_stats(std::span<const float> inputs, int channels,
                                   int pixels_per_channel, Warnings* warnings) {
  const std::size_t sample_len = static_cast<std::size_t>(channels) * pixels_per_channel;
  if (channels < 1 || pixels_per_channel < 1 || inputs.empty() ||
      inputs.size() % sample_len != 0) {
    throw GeometryError(fmt::format("batch of {} values is not a multiple of {}x{}",
                                    inputs.size(), channels, pixels_per_channel));
  }
  const std::size_t n_samples = inputs.size() / sample_len;
  ChannelStats stats{std::vector<double>(channels, 0.0), std::vector<double>(channels, 0.0)};
  const double count = static_cast<double>(n_samples) * pixels_per_channel;
  for (int ch = 0; ch < channels; ++ch) {
    double sum = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
      const float* x = inputs.data() + s * sample_len + static_cast<std::size_t>(ch) * pixels_per_channel;
      for (int i = 0; i < pixels_per_channel; ++i) sum += x[i];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
      const float* x = inputs.data() + s * sample_len + static_cast<std::size_t>(ch) * pixels_per_channel;
      for (int i = 0; i < pixels_per_channel; ++i) {
        const double d = x[i] - mean;
        sq += d * d;
      }
    }
    stats.mean[ch] = mean;
    stats.std[ch] = std::sqrt(sq / count);
    if (!(stats.std[ch] > 0.0)) {
      if (warnings) warnings->add(fmt::format("channel {} is constant; using std 1", ch));
      stats.std[ch] = 1.0;
    }
  }
  return stats;
}

void normalize_channels(std::span<float> inputs, const ChannelStats& stats,
                        int pixels_per_channel, Warnings* warnings) {
  const int channels = stats.channels();
  if (static_cast<int>(stats.std.size()) != channels || channels < 1) {
    throw ConfigError("channel stats need matching mean/std entries");
  }
  const std::size_t sample_len = static_cast<std::size_t>(channels) * pixels_per_channel;
  if (inputs.size() % sample_len != 0) {
    throw GeometryError(fmt::format("batch of {} values is not a multiple of {}x{}",
                                    inputs.size(), channels, pixels_per_channel));
  }
  std::vector<double> inv_std(channels);
  for (int ch = 0; ch < channels; ++ch) {
    double s = stats.std[ch];
    if (!(s > 0.0)) {
      if (warnings) warnings->add(fmt::format("channel {} has zero std; using 1", ch));
      s = 1.0;
    }
    inv_std[ch] = 1.0 / s;
  }
  const std::size_t n_samples = inputs.size() / sample_len;
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (int ch = 0; ch < channels; ++ch) {
      float* x = inputs.data() + s * sample_len + static_cast<std::size_t>(ch) * pixels_per_channel;
      const double m = stats.mean[ch];
      for (int i = 0; i < pixels_per_channel; ++i) {
        x[i] = static_cast<float>((x[i] - m) * inv_std[ch]);
      }
    }
  }
}

std::vector<float> select_channels(std::span<const float> input, std::span<const int> channels,
                                   int pixels_per_channel) {
  std::vector<float> out;
  out.reserve(channels.size() * pixels_per_channel);
  const std::size_t available = input.size() / pixels_per_channel;
  for (int ch : channels) {
    if (ch < 0 || static_cast<std::size_t>(ch) >= available) {
      throw GeometryError(fmt::format("channel {} out of range [0, {})", ch, available));
    }
    const auto* src = input.data() + static_cast<std::size_t>(ch) * pixels_per_channel;
    out.insert(out.end(), src, src + pixels_per_channel);
  }
  return out;
}

}  // namespace coverest
