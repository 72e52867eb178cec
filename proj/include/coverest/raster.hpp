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

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coverest/errors.hpp"

namespace coverest {

inline constexpr int kPatchSize = 50;
inline constexpr int kPatchChannels = 5;
inline constexpr int kPatchPixels = kPatchSize * kPatchSize;

// Channel order of every input raster and patch.
enum Channel : int {
  kS1Band1 = 0,
  kRed = 1,
  kGreen = 2,
  kBlue = 3,
  kNir = 4,
};

// Multi-channel grid, row-major with channels interleaved per pixel:
// value(r, c, ch) lives at ((r * width) + c) * channels + ch.
class Raster {
 public:
  Raster() = default;
  Raster(int height, int width, int channels, double gsd,
         std::string region_tag = {});
  Raster(int height, int width, int channels, double gsd,
         std::vector<float> data, std::string region_tag = {});

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  double gsd() const { return gsd_; }
  const std::string& region_tag() const { return region_tag_; }
  void set_region_tag(std::string tag) { region_tag_ = std::move(tag); }

  float at(int row, int col, int ch = 0) const {
    return data_[index(row, col, ch)];
  }
  float& at(int row, int col, int ch = 0) { return data_[index(row, col, ch)]; }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  bool operator==(const Raster&) const = default;

 private:
  std::size_t index(int row, int col, int ch) const {
    return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  double gsd_ = 1.0;
  std::vector<float> data_;
  std::string region_tag_;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, double gsd);
  // Throws GeometryError on a size mismatch and FormatError on values
  // outside {0, 1}.
  BinaryMask(int height, int width, double gsd, std::vector<std::uint8_t> values);

  int height() const { return height_; }
  int width() const { return width_; }
  double gsd() const { return gsd_; }

  std::uint8_t at(int row, int col) const {
    return values_[static_cast<std::size_t>(row) * width_ + col];
  }
  void set(int row, int col, bool on) {
    values_[static_cast<std::size_t>(row) * width_ + col] = on ? 1 : 0;
  }

  std::span<const std::uint8_t> values() const { return values_; }

  bool operator==(const BinaryMask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  double gsd_ = 1.0;
  std::vector<std::uint8_t> values_;
};

struct Window {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;
};

// One model input: kPatchChannels x 50 x 50 values stored channel-major
// (CHW) plus the building-pixel count of its mask window.
struct Patch {
  std::vector<float> input;
  int label = 0;
  std::string tile_id;
  int row = 0;
  int col = 0;
  std::string region_tag;
};

struct Tile {
  std::string id;
  Raster raster;
  BinaryMask mask;
};

// Block-mean downsampling followed by a strict > 0 threshold. The target
// GSD must be an integer multiple of the source GSD and the raster sides
// must divide evenly by that ratio. Only channel 0 is read.
BinaryMask downsample_and_binarize(const Raster& confidence, double target_gsd);

// Non-overlapping 50x50 windows in row-major order from (0, 0); partial
// windows on the right/bottom edges are dropped. A tile smaller than one
// window yields no patches and a warning.
std::vector<Patch> crop_into_patches(const Tile& tile, Warnings* warnings = nullptr);

// Row-major window origins crop_into_patches would use.
std::vector<Window> patch_windows(int height, int width);

int count_building_pixels(const BinaryMask& mask, const Window& window);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;

  int channels() const { return static_cast<int>(mean.size()); }
};

// Per-channel mean and population standard deviation over a batch of CHW
// inputs. Zero deviations are replaced by 1 and reported.
ChannelStats compute_channel_stats(std::span<const float> inputs, int channels,
                                   int pixels_per_channel,
                                   Warnings* warnings = nullptr);

// In-place (x - mean[c]) / std[c] over a flat batch of CHW inputs.
void normalize_channels(std::span<float> inputs, const ChannelStats& stats,
                        int pixels_per_channel, Warnings* warnings = nullptr);

// Keeps the listed channels (in the given order) of a CHW input.
std::vector<float> select_channels(std::span<const float> input,
                                   std::span<const int> channels,
                                   int pixels_per_channel);

}  // namespace coverest
