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

// Synthetic scene generator. Each tile is a 5-channel raster plus the exact
// building mask it was rendered from, so labels are known without error.
//
// Land cover classes and their channel signatures are chosen so that no
// single channel separates buildings from everything else:
//   - bare soil looks like roofs in RGB and NIR; only the radar proxy
//     (channel 0) tells them apart;
//   - orchards look like roofs in RGB and radar; only NIR tells them apart.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coverest/raster.hpp"

namespace coverest {

struct RegionSpec {
  std::string tag;
  double weight = 1.0;
};

struct SceneConfig {
  int tile_size = 200;
  double building_density_target = 0.08;
  std::uint64_t seed = 0;
  int n_tiles = 0;
  std::vector<RegionSpec> regions{{"R1", 1.0}, {"R2", 1.0}, {"R3", 1.0}, {"R4", 1.0}};
  double gsd_m = 10.0;
  double noise_sigma = 0.04;
  // Side of the candidate-location grid the population field is drawn on.
  int density_grid = 64;

  // Throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json& j, const SceneConfig& c);
// Missing keys keep their defaults; wrong types raise ConfigError.
SceneConfig scene_config_from_json(const nlohmann::json& j);

// Appearance and settlement intensity of one pseudo-country.
struct RegionStyle {
  std::array<double, 3> roof_rgb;
  double density_scale = 1.0;
};

// Style for the index-th region of a config; the first four are fixed,
// later ones are derived from the index.
RegionStyle region_style(int region_index);

struct DensityMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> weights;

  double at(int row, int col) const { return weights[static_cast<std::size_t>(row) * cols + col]; }
  double max_weight() const;
  // Throws ConfigError on negative/non-finite weights or an all-zero map.
  void validate() const;
};

struct Location {
  int row = 0;
  int col = 0;

  bool operator==(const Location&) const = default;
};

// Heavy-tailed population-like field: a handful of settlements with
// log-normal peak intensity over a weak rural background.
DensityMap make_population_density(int side, std::uint64_t seed);

// Draws n cells with probability proportional to weight.
std::vector<Location> sample_locations(const DensityMap& density, int n, std::uint64_t seed);

struct Rect {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;
};

enum class LandCover : std::uint8_t {
  kVegetation = 0,
  kSoil = 1,
  kWater = 2,
  kOrchard = 3,
  kBuilding = 4,
};

struct SceneSite {
  int tile_index = 0;
  Location location;
  // Relative settlement intensity at the location, in (0, 1].
  double urbanity = 1.0;
  int region_index = 0;
};

struct RenderedScene {
  Tile tile;
  std::vector<Rect> buildings;
  std::vector<LandCover> land_cover;
};

// Renders one tile. Output depends only on (config, site).
RenderedScene render_scene(const SceneConfig& config, const SceneSite& site);

// Renders a tile from an explicit building list over plain vegetation;
// used to place known geometry.
RenderedScene render_buildings(const SceneConfig& config, const std::vector<Rect>& buildings,
                               int region_index, std::uint64_t noise_seed);

// Per-tile RNG stream, independent of scheduling order.
std::mt19937_64 tile_stream(std::uint64_t seed, int tile_index, int stream);

// Full corpus: samples sites, renders tiles and writes the dataset layout
// (see dataset.hpp). Returns the manifest that was written.
struct DatasetManifest;
DatasetManifest generate_dataset(const SceneConfig& config, const std::filesystem::path& root,
                                 int threads = 1);

}  // namespace coverest
