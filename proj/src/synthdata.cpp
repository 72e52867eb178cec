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

#include "coverest/synthdata.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "coverest/cras.hpp"
#include "coverest/dataset.hpp"
#include "coverest/log.hpp"
#include "coverest/parallel.hpp"

namespace coverest {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream ids inside one tile.
constexpr int kLandCoverStream = 0;
constexpr int kBuildingStream = 1;
constexpr int kNoiseStream = 2;

// Corpus-level streams use negative tile indices.
constexpr int kDensityStream = -1;
constexpr int kLocationStream = -2;
constexpr int kRegionStream = -3;

struct Signature {
  double s1;
  std::array<double, 3> rgb;
  double nir;
};

Signature class_signature(LandCover cls, const RegionStyle& style) {
  const auto& roof = style.roof_rgb;
  switch (cls) {
    case LandCover::kVegetation:
      return {0.20, {0.10, 0.25, 0.08}, 0.55};
    case LandCover::kSoil:
      return {0.08, {roof[0] * 1.02, roof[1] * 1.0, roof[2] * 0.96}, 0.13};
    case LandCover::kWater:
      return {0.02, {0.03, 0.06, 0.15}, 0.03};
    case LandCover::kOrchard:
      return {0.75, {roof[0] * 0.97, roof[1] * 1.01, roof[2] * 0.98}, 0.50};
    case LandCover::kBuilding:
      return {0.80, roof, 0.12};
  }
  return {};
}

void fill_ellipse(std::vector<LandCover>& cover, int size, double cr, double cc, double rr,
                  double rc, LandCover cls) {
  const int r0 = std::max(0, static_cast<int>(std::floor(cr - rr)));
  const int r1 = std::min(size - 1, static_cast<int>(std::ceil(cr + rr)));
  const int c0 = std::max(0, static_cast<int>(std::floor(cc - rc)));
  const int c1 = std::min(size - 1, static_cast<int>(std::ceil(cc + rc)));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double dr = (r + 0.5 - cr) / rr;
      const double dc = (c + 0.5 - cc) / rc;
      if (dr * dr + dc * dc <= 1.0) cover[static_cast<std::size_t>(r) * size + c] = cls;
    }
  }
}

std::vector<LandCover> draw_land_cover(int size, std::mt19937_64& rng) {
  std::vector<LandCover> cover(static_cast<std::size_t>(size) * size, LandCover::kVegetation);
  std::uniform_real_distribution<double> pos(0.0, size);
  const double scale = size / 200.0;
  std::uniform_real_distribution<double> soil_radius(6.0 * scale, 30.0 * scale);
  std::uniform_real_distribution<double> orchard_side(8.0 * scale, 45.0 * scale);
  std::uniform_real_distribution<double> water_radius(10.0 * scale, 40.0 * scale);
  std::bernoulli_distribution has_water(0.25);
  std::poisson_distribution<int> n_soil(2.5);
  std::poisson_distribution<int> n_orchard(2.0);

  if (has_water(rng)) {
    const double cr = pos(rng), cc = pos(rng);
    const double rr = water_radius(rng), rc = water_radius(rng);
    fill_ellipse(cover, size, cr, cc, rr, rc, LandCover::kWater);
  }
  const int soils = n_soil(rng);
  for (int i = 0; i < soils; ++i) {
    const double cr = pos(rng), cc = pos(rng);
    const double rr = soil_radius(rng), rc = soil_radius(rng);
    fill_ellipse(cover, size, cr, cc, rr, rc, LandCover::kSoil);
  }
  const int orchards = n_orchard(rng);
  for (int i = 0; i < orchards; ++i) {
    const int r0 = static_cast<int>(pos(rng)), c0 = static_cast<int>(pos(rng));
    const int h = static_cast<int>(orchard_side(rng)), w = static_cast<int>(orchard_side(rng));
    for (int r = r0; r < std::min(size, r0 + h); ++r) {
      for (int c = c0; c < std::min(size, c0 + w); ++c) {
        cover[static_cast<std::size_t>(r) * size + c] = LandCover::kOrchard;
      }
    }
  }
  return cover;
}

struct PlacedBuildings {
  std::vector<Rect> rects;
  std::vector<double> roof_jitter;
};

PlacedBuildings draw_buildings(int size, double density, std::mt19937_64& rng) {
  PlacedBuildings out;
  const double target_area = density * size * size;
  if (!(target_area > 0.0)) return out;

  std::uniform_real_distribution<double> pos(0.0, size);
  std::uniform_real_distribution<double> spread(0.08 * size, 0.25 * size);
  std::poisson_distribution<int> extra_clusters(1.5);
  const int n_clusters = 1 + extra_clusters(rng);
  std::vector<std::array<double, 3>> clusters(n_clusters);
  for (auto& cl : clusters) cl = {pos(rng), pos(rng), spread(rng)};

  std::uniform_int_distribution<int> pick_cluster(0, n_clusters - 1);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::lognormal_distribution<double> side(std::log(4.0), 0.45);

  double area = 0.0;
  while (area < target_area) {
    const auto& cl = clusters[pick_cluster(rng)];
    const int h = std::clamp(static_cast<int>(std::lround(side(rng))), 2, 24);
    const int w = std::clamp(static_cast<int>(std::lround(side(rng))), 2, 24);
    const double cr = cl[0] + cl[2] * unit(rng);
    const double cc = cl[1] + cl[2] * unit(rng);
    const double jitter = 1.0 + 0.08 * unit(rng);
    const int r0 = std::clamp(static_cast<int>(std::lround(cr - h / 2.0)), 0, size - h);
    const int c0 = std::clamp(static_cast<int>(std::lround(cc - w / 2.0)), 0, size - w);
    out.rects.push_back({r0, c0, h, w});
    out.roof_jitter.push_back(jitter);
    area += static_cast<double>(h) * w;
  }
  return out;
}

RenderedScene paint(const SceneConfig& config, std::vector<LandCover> cover,
                    const PlacedBuildings& buildings, const RegionStyle& style,
                    const std::string& region_tag, const std::string& tile_id,
                    std::mt19937_64& noise_rng) {
  const int size = config.tile_size;
  const auto n = static_cast<std::size_t>(size) * size;
  std::vector<double> roof_gain(n, 1.0);
  BinaryMask mask(size, size, config.gsd_m);
  for (std::size_t b = 0; b < buildings.rects.size(); ++b) {
    const Rect& rect = buildings.rects[b];
    for (int r = rect.row; r < rect.row + rect.height; ++r) {
      for (int c = rect.col; c < rect.col + rect.width; ++c) {
        const auto idx = static_cast<std::size_t>(r) * size + c;
        cover[idx] = LandCover::kBuilding;
        roof_gain[idx] = buildings.roof_jitter[b];
        mask.set(r, c, true);
      }
    }
  }

  std::vector<double> s1_base(n);
  for (std::size_t i = 0; i < n; ++i) s1_base[i] = class_signature(cover[i], style).s1;

  Raster raster(size, size, kPatchChannels, config.gsd_m, region_tag);
  std::normal_distribution<double> noise(0.0, config.noise_sigma);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const auto idx = static_cast<std::size_t>(r) * size + c;
      // 3x3 box blur of the backscatter proxy, edge-clamped.
      double s1 = 0.0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = std::clamp(r + dr, 0, size - 1);
          const int cc = std::clamp(c + dc, 0, size - 1);
          s1 += s1_base[static_cast<std::size_t>(rr) * size + cc];
        }
      }
      s1 /= 9.0;
      const Signature sig = class_signature(cover[idx], style);
      raster.at(r, c, kS1Band1) = static_cast<float>(s1 + noise(noise_rng));
      for (int k = 0; k < 3; ++k) {
        raster.at(r, c, kRed + k) = static_cast<float>(sig.rgb[k] * roof_gain[idx] + noise(noise_rng));
      }
      raster.at(r, c, kNir) = static_cast<float>(sig.nir + noise(noise_rng));
    }
  }
  RenderedScene scene;
  scene.tile = Tile{tile_id, std::move(raster), std::move(mask)};
  scene.buildings = buildings.rects;
  scene.land_cover = std::move(cover);
  return scene;
}

std::string tile_id_for(int index) { return fmt::format("t{:06d}", index); }

}  // namespace

void SceneConfig::validate() const {
  if (tile_size < kPatchSize || tile_size % kPatchSize != 0) {
    throw ConfigError(fmt::format("tile_size must be a positive multiple of {}, got {}",
                                  kPatchSize, tile_size));
  }
  if (!(building_density_target >= 0.0 && building_density_target <= 1.0)) {
    throw ConfigError(fmt::format("building_density_target must lie in [0, 1], got {}",
                                  building_density_target));
  }
  if (n_tiles < 0) throw ConfigError(fmt::format("n_tiles must be >= 0, got {}", n_tiles));
  if (regions.empty()) throw ConfigError("at least one region is required");
  double total = 0.0;
  for (const auto& r : regions) {
    if (r.tag.empty()) throw ConfigError("region tags must be non-empty");
    if (!(r.weight >= 0.0) || !std::isfinite(r.weight)) {
      throw ConfigError(fmt::format("region {} has invalid weight {}", r.tag, r.weight));
    }
    total += r.weight;
  }
  if (!(total > 0.0)) throw ConfigError("region weights sum to zero");
  for (std::size_t i = 0; i < regions.size(); ++i) {
    for (std::size_t j = i + 1; j < regions.size(); ++j) {
      if (regions[i].tag == regions[j].tag) {
        throw ConfigError(fmt::format("duplicate region tag {}", regions[i].tag));
      }
    }
  }
  if (!(gsd_m > 0.0)) throw ConfigError(fmt::format("gsd_m must be positive, got {}", gsd_m));
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (density_grid < 1) throw ConfigError("density_grid must be >= 1");
}

void to_json(json& j, const SceneConfig& c) {
  json regions = json::array();
  for (const auto& r : c.regions) regions.push_back({{"tag", r.tag}, {"weight", r.weight}});
  j = json{{"tile_size", c.tile_size},
           {"building_density_target", c.building_density_target},
           {"seed", c.seed},
           {"n_tiles", c.n_tiles},
           {"regions", regions},
           {"gsd_m", c.gsd_m},
           {"noise_sigma", c.noise_sigma},
           {"density_grid", c.density_grid}};
}

SceneConfig scene_config_from_json(const json& j) {
  SceneConfig c;
  if (!j.is_object()) throw ConfigError("scene config must be a JSON object");
  try {
    c.tile_size = j.value("tile_size", c.tile_size);
    c.building_density_target = j.value("building_density_target", c.building_density_target);
    c.seed = j.value("seed", c.seed);
    c.n_tiles = j.value("n_tiles", c.n_tiles);
    c.gsd_m = j.value("gsd_m", c.gsd_m);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.density_grid = j.value("density_grid", c.density_grid);
    if (j.contains("regions")) {
      c.regions.clear();
      for (const auto& r : j.at("regions")) {
        if (r.is_string()) {
          c.regions.push_back({r.get<std::string>(), 1.0});
        } else {
          c.regions.push_back({r.at("tag").get<std::string>(), r.value("weight", 1.0)});
        }
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("invalid scene config: {}", e.what()));
  }
  return c;
}

RegionStyle region_style(int region_index) {
  static const RegionStyle kFixed[] = {
      {{0.50, 0.46, 0.42}, 1.25},
      {{0.36, 0.32, 0.30}, 0.70},
      {{0.44, 0.40, 0.37}, 1.00},
      {{0.40, 0.34, 0.28}, 0.85},
  };
  if (region_index >= 0 && region_index < 4) return kFixed[region_index];
  // Golden-ratio walk keeps derived styles spread over the same range.
  const double f = std::fmod(0.618033988749895 * (region_index + 1), 1.0);
  const double b = 0.85 + 0.3 * f;
  return {{0.42 * b, 0.38 * b, 0.34 * b}, 0.7 + 0.5 * (1.0 - f)};
}

double DensityMap::max_weight() const {
  return weights.empty() ? 0.0 : *std::max_element(weights.begin(), weights.end());
}

void DensityMap::validate() const {
  if (rows < 1 || cols < 1 || weights.size() != static_cast<std::size_t>(rows) * cols) {
    throw ConfigError(fmt::format("density map {}x{} has {} weights", rows, cols, weights.size()));
  }
  bool any_positive = false;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError(fmt::format("density weight {} is not a finite nonnegative value", w));
    }
    any_positive = any_positive || w > 0.0;
  }
  if (!any_positive) throw ConfigError("density map has no positive weight");
}

std::mt19937_64 tile_stream(std::uint64_t seed, int tile_index, int stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xFFFFFFFFu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tile_index),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

DensityMap make_population_density(int side, std::uint64_t seed) {
  if (side < 1) throw ConfigError("density grid side must be >= 1");
  auto rng = tile_stream(seed, kDensityStream, 0);
  std::uniform_real_distribution<double> pos(0.0, side);
  std::uniform_real_distribution<double> radius(std::max(1.0, side / 30.0), std::max(1.5, side / 6.0));
  std::lognormal_distribution<double> peak(0.0, 1.0);
  constexpr int kSettlements = 8;
  struct Settlement {
    double r, c, radius, peak;
  };
  std::vector<Settlement> settlements(kSettlements);
  for (auto& s : settlements) s = {pos(rng), pos(rng), radius(rng), peak(rng)};

  DensityMap map{side, side, std::vector<double>(static_cast<std::size_t>(side) * side)};
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      double w = 0.02;
      for (const auto& s : settlements) {
        const double dr = r + 0.5 - s.r, dc = c + 0.5 - s.c;
        w += s.peak * std::exp(-(dr * dr + dc * dc) / (2.0 * s.radius * s.radius));
      }
      map.weights[static_cast<std::size_t>(r) * side + c] = w;
    }
  }
  return map;
}

std::vector<Location> sample_locations(const DensityMap& density, int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError(fmt::format("sample count must be >= 1, got {}", n));
  density.validate();
  auto rng = tile_stream(seed, kLocationStream, 0);
  std::discrete_distribution<std::size_t> pick(density.weights.begin(), density.weights.end());
  std::vector<Location> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const std::size_t cell = pick(rng);
    out.push_back({static_cast<int>(cell / density.cols), static_cast<int>(cell % density.cols)});
  }
  return out;
}

RenderedScene render_scene(const SceneConfig& config, const SceneSite& site) {
  config.validate();
  if (site.region_index < 0 || site.region_index >= static_cast<int>(config.regions.size())) {
    throw ConfigError(fmt::format("region index {} out of range", site.region_index));
  }
  const RegionStyle style = region_style(site.region_index);
  auto cover_rng = tile_stream(config.seed, site.tile_index, kLandCoverStream);
  auto building_rng = tile_stream(config.seed, site.tile_index, kBuildingStream);
  auto noise_rng = tile_stream(config.seed, site.tile_index, kNoiseStream);

  auto cover = draw_land_cover(config.tile_size, cover_rng);
  // Settlement intensity: convex in urbanity so most sites stay sparse.
  const double u = std::clamp(site.urbanity, 0.0, 1.0);
  const double density = std::min(
      1.0, config.building_density_target * style.density_scale * 2.2 * std::pow(u, 1.5));
  const auto buildings = draw_buildings(config.tile_size, density, building_rng);
  return paint(config, std::move(cover), buildings, style,
               config.regions[site.region_index].tag, tile_id_for(site.tile_index), noise_rng);
}

RenderedScene render_buildings(const SceneConfig& config, const std::vector<Rect>& buildings,
                               int region_index, std::uint64_t noise_seed) {
  config.validate();
  if (region_index < 0 || region_index >= static_cast<int>(config.regions.size())) {
    throw ConfigError(fmt::format("region index {} out of range", region_index));
  }
  for (const Rect& r : buildings) {
    if (r.row < 0 || r.col < 0 || r.height < 0 || r.width < 0 ||
        r.row + r.height > config.tile_size || r.col + r.width > config.tile_size) {
      throw GeometryError(fmt::format("building ({}, {}, {}x{}) outside {}-pixel tile", r.row,
                                      r.col, r.height, r.width, config.tile_size));
    }
  }
  PlacedBuildings placed{buildings, std::vector<double>(buildings.size(), 1.0)};
  std::vector<LandCover> cover(static_cast<std::size_t>(config.tile_size) * config.tile_size,
                               LandCover::kVegetation);
  std::mt19937_64 noise_rng(noise_seed);
  return paint(config, std::move(cover), placed, region_style(region_index),
               config.regions[region_index].tag, "explicit", noise_rng);
}

DatasetManifest generate_dataset(const SceneConfig& config, const fs::path& root, int threads) {
  config.validate();
  std::error_code ec;
  for (const auto& dir : {root, root / "tiles", root / "masks"}) {
    fs::create_directories(dir, ec);
    if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  }

  DatasetManifest manifest;
  manifest.seed = config.seed;
  to_json(manifest.config, config);
  if (config.n_tiles == 0) {
    write_manifest(root, manifest);
    return manifest;
  }

  const DensityMap density = make_population_density(config.density_grid, config.seed);
  const double max_w = density.max_weight();
  const auto locations = sample_locations(density, config.n_tiles, config.seed);
  auto region_rng = tile_stream(config.seed, kRegionStream, 0);
  std::vector<double> region_weights;
  for (const auto& r : config.regions) region_weights.push_back(r.weight);
  std::discrete_distribution<int> pick_region(region_weights.begin(), region_weights.end());

  std::vector<SceneSite> sites(config.n_tiles);
  for (int i = 0; i < config.n_tiles; ++i) {
    const Location loc = locations[i];
    sites[i] = SceneSite{i, loc, density.at(loc.row, loc.col) / max_w, pick_region(region_rng)};
  }

  manifest.tiles.resize(config.n_tiles);
  parallel_for(config.n_tiles, threads, [&](std::size_t i) {
    const SceneSite& site = sites[i];
    RenderedScene scene = render_scene(config, site);
    const Tile& tile = scene.tile;
    TileEntry entry;
    entry.id = tile.id;
    entry.region_tag = tile.raster.region_tag();
    entry.height = tile.raster.height();
    entry.width = tile.raster.width();
    entry.raster_path = "tiles/" + tile.id + ".cras";
    entry.mask_path = "masks/" + tile.id + ".cras";
    entry.location_row = site.location.row;
    entry.location_col = site.location.col;
    entry.urbanity = site.urbanity;
    for (const Window& w : patch_windows(entry.height, entry.width)) {
      entry.patches.push_back({w.row, w.col, count_building_pixels(tile.mask, w)});
    }
    write_cras(root / entry.raster_path, tile.raster);
    write_mask(root / entry.mask_path, tile.mask, entry.region_tag);
    manifest.tiles[i] = std::move(entry);
  });
  write_manifest(root, manifest);
  logger().info("generated {} tiles ({} patches) under {}", manifest.tiles.size(),
                manifest.patch_count(), root.string());
  return manifest;
}

}  // namespace coverest
