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

// On-disk dataset layout:
//
//   <root>/manifest.json
//   <root>/tiles/<id>.cras   (+ .cras.bin)   5-channel input raster
//   <root>/masks/<id>.cras   (+ .cras.bin)   1-channel building mask
//
// manifest.json:
//
//   {
//     "format": "coverest-dataset",
//     "version": 1,
//     "seed": <u64>,
//     "config": { ...SceneConfig... },
//     "tiles": [
//       {"id": "t000000", "region_tag": "R1", "height": 200, "width": 200,
//        "raster": "tiles/t000000.cras", "mask": "masks/t000000.cras",
//        "location": [row, col], "urbanity": 0.42,
//        "patches": [{"row": 0, "col": 0, "label": 123}, ...]},
//       ...
//     ]
//   }
//
// Patches are listed in crop order (row-major 50x50 windows).

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coverest/raster.hpp"

namespace coverest {

inline constexpr const char* kDatasetFormat = "coverest-dataset";
inline constexpr int kDatasetVersion = 1;

struct PatchEntry {
  int row = 0;
  int col = 0;
  int label = 0;
};

struct TileEntry {
  std::string id;
  std::string region_tag;
  int height = 0;
  int width = 0;
  std::string raster_path;
  std::string mask_path;
  int location_row = 0;
  int location_col = 0;
  double urbanity = 0.0;
  std::vector<PatchEntry> patches;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<TileEntry> tiles;

  // Sorted, unique.
  std::vector<std::string> region_tags() const;
  std::size_t patch_count() const;
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

void write_manifest(const std::filesystem::path& root, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& root);

// Identifies one patch by position in the manifest.
struct PatchRef {
  int tile = 0;
  int patch = 0;

  auto operator<=>(const PatchRef&) const = default;
};

// Manifest plus pixel data. patches[i] corresponds to refs[i].
struct Dataset {
  std::filesystem::path root;
  DatasetManifest manifest;
  std::vector<Tile> tiles;
  std::vector<Patch> patches;
  std::vector<PatchRef> refs;

  // Index into patches for a ref; throws GeometryError if unknown.
  std::size_t index_of(const PatchRef& ref) const;

 private:
  std::vector<std::size_t> tile_offset_;
  friend Dataset load_dataset(const std::filesystem::path& root);
  friend Dataset dataset_from_tiles(DatasetManifest manifest, std::vector<Tile> tiles);
};

// Loads every tile and re-derives patch labels, failing with FormatError
// when they disagree with the manifest.
Dataset load_dataset(const std::filesystem::path& root);

// Builds an in-memory dataset; the manifest's patch lists are (re)filled.
Dataset dataset_from_tiles(DatasetManifest manifest, std::vector<Tile> tiles);

}  // namespace coverest
