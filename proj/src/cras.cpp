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

#include "coverest/cras.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include <nlohmann/json.hpp>

namespace coverest {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::numeric_limits<float>::is_iec559, "float32 must be IEEE-754");

fs::path cras_blob_path(const fs::path& header) {
  fs::path blob = header;
  blob += ".bin";
  return blob;
}

std::vector<char> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {} for reading", path.string()));
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(fmt::format("read failed: {}", path.string()));
  return bytes;
}

void write_file_bytes(const fs::path& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(fmt::format("write failed: {}", path.string()));
}

std::vector<char> encode_f32_le(std::span<const float> values) {
  std::vector<char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  return bytes;
}

std::vector<float> decode_f32_le(std::span<const char> bytes) {
  if (bytes.size() % 4 != 0) {
    throw FormatError(fmt::format("float32 blob length {} is not a multiple of 4", bytes.size()));
  }
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    }
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

namespace {

void write_header_and_blob(const fs::path& header, int height, int width, int channels,
                           double gsd, const std::string& region_tag,
                           std::span<const float> data) {
  json h = {{"magic", kCrasMagic}, {"height", height},   {"width", width},
            {"channels", channels}, {"gsd_m", gsd},     {"dtype", "f32"},
            {"region_tag", region_tag}};
  const std::string text = h.dump(2) + "\n";
  write_file_bytes(header, std::span<const char>(text.data(), text.size()));
  const auto blob = encode_f32_le(data);
  write_file_bytes(cras_blob_path(header), blob);
}

struct Loaded {
  int height;
  int width;
  int channels;
  double gsd;
  std::string region_tag;
  std::vector<float> data;
};

Loaded read_header_and_blob(const fs::path& header) {
  const auto text = read_file_bytes(header);
  json h;
  try {
    h = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("{}: invalid CRAS header: {}", header.string(), e.what()));
  }
  try {
    if (h.at("magic").get<std::string>() != kCrasMagic) {
      throw FormatError(fmt::format("{}: bad magic '{}'", header.string(),
                                    h.at("magic").get<std::string>()));
    }
    if (h.at("dtype").get<std::string>() != "f32") {
      throw FormatError(fmt::format("{}: unsupported dtype '{}'", header.string(),
                                    h.at("dtype").get<std::string>()));
    }
    Loaded out{h.at("height").get<int>(),
               h.at("width").get<int>(),
               h.at("channels").get<int>(),
               h.at("gsd_m").get<double>(),
               h.value("region_tag", std::string{}),
               {}};
    const auto blob = read_file_bytes(cras_blob_path(header));
    const std::size_t expected = static_cast<std::size_t>(out.height) * out.width * out.channels * 4;
    if (blob.size() != expected) {
      throw FormatError(fmt::format("{}: blob has {} bytes, expected {}",
                                    cras_blob_path(header).string(), blob.size(), expected));
    }
    out.data = decode_f32_le(blob);
    return out;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: malformed CRAS header: {}", header.string(), e.what()));
  }
}

}  // namespace

void write_cras(const fs::path& header, const Raster& raster) {
  write_header_and_blob(header, raster.height(), raster.width(), raster.channels(), raster.gsd(),
                        raster.region_tag(), raster.data());
}

Raster read_cras(const fs::path& header) {
  auto l = read_header_and_blob(header);
  return Raster(l.height, l.width, l.channels, l.gsd, std::move(l.data), std::move(l.region_tag));
}

void write_mask(const fs::path& header, const BinaryMask& mask, const std::string& region_tag) {
  std::vector<float> data(mask.values().begin(), mask.values().end());
  write_header_and_blob(header, mask.height(), mask.width(), 1, mask.gsd(), region_tag, data);
}

BinaryMask read_mask(const fs::path& header) {
  auto l = read_header_and_blob(header);
  if (l.channels != 1) {
    throw FormatError(fmt::format("{}: mask must have 1 channel, got {}", header.string(),
                                  l.channels));
  }
  std::vector<std::uint8_t> values(l.data.size());
  for (std::size_t i = 0; i < l.data.size(); ++i) {
    if (l.data[i] == 0.0f) {
      values[i] = 0;
    } else if (l.data[i] == 1.0f) {
      values[i] = 1;
    } else {
      throw FormatError(fmt::format("{}: mask value {} at index {} is not 0 or 1",
                                    header.string(), l.data[i], i));
    }
  }
  return BinaryMask(l.height, l.width, l.gsd, std::move(values));
}

std::string sha256_hex(std::span<const char> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::string hex;
  hex.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file_bytes(path)); }

}  // namespace coverest
