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

// CRAS v1 raster container.
//
// A raster is stored as two files: `<name>.cras`, a JSON header
//
//   {"magic": "CRAS1", "height": H, "width": W, "channels": C,
//    "gsd_m": 10.0, "dtype": "f32", "region_tag": "R1"}
//
// and `<name>.cras.bin`, H*W*C little-endian IEEE-754 float32 values in
// row-major, channel-interleaved order. Binary masks use the same layout
// with one channel whose values are exactly 0.0 or 1.0.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "coverest/raster.hpp"

namespace coverest {

inline constexpr const char* kCrasMagic = "CRAS1";

// Path of the blob that accompanies a header path.
std::filesystem::path cras_blob_path(const std::filesystem::path& header);

void write_cras(const std::filesystem::path& header, const Raster& raster);
Raster read_cras(const std::filesystem::path& header);

void write_mask(const std::filesystem::path& header, const BinaryMask& mask,
                const std::string& region_tag = {});
BinaryMask read_mask(const std::filesystem::path& header);

// Raw little-endian float32 helpers shared with the checkpoint format.
std::vector<char> encode_f32_le(std::span<const float> values);
std::vector<float> decode_f32_le(std::span<const char> bytes);

std::vector<char> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const char> bytes);

// Hex SHA-256 of a byte range / a file's contents.
std::string sha256_hex(std::span<const char> bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace coverest
