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

#include "coverest/dataset.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "coverest/cras.hpp"

namespace coverest {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> DatasetManifest::region_tags() const {
  std::set<std::string> tags;
  for (const auto& t : tiles) tags.insert(t.region_tag);
  return {tags.begin(), tags.end()};
}

std::size_t DatasetManifest::patch_count() const {
  std::size_t n = 0;
  for (const auto& t : tiles) n += t.patches.size();
  return n;
}

json manifest_to_json(const DatasetManifest& m) {
  json tiles = json::array();
  for (const auto& t : m.tiles) {
    json patches = json::array();
    for (const auto& p : t.patches) {
      patches.push_back({{"row", p.row}, {"col", p.col}, {"label", p.label}});
    }
    tiles.push_back({{"id", t.id},
                     {"region_tag", t.region_tag},
                     {"height", t.height},
                     {"width", t.width},
                     {"raster", t.raster_path},
                     {"mask", t.mask_path},
                     {"location", {t.location_row, t.location_col}},
                     {"urbanity", t.urbanity},
                     {"patches", patches}});
  }
  return {{"format", kDatasetFormat},
          {"version", kDatasetVersion},
          {"seed", m.seed},
          {"config", m.config},
          {"tiles", tiles}};
}

DatasetManifest manifest_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kDatasetFormat) {
      throw FormatError(fmt::format("not a dataset manifest (format '{}')",
                                    j.at("format").get<std::string>()));
    }
    if (j.at("version").get<int>() != kDatasetVersion) {
      throw FormatError(fmt::format("unsupported manifest version {} (expected {})",
                                    j.at("version").get<int>(), kDatasetVersion));
    }
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = j.value("config", json::object());
    for (const auto& jt : j.at("tiles")) {
      TileEntry t;
      t.id = jt.at("id").get<std::string>();
      t.region_tag = jt.at("region_tag").get<std::string>();
      t.height = jt.at("height").get<int>();
      t.width = jt.at("width").get<int>();
      t.raster_path = jt.at("raster").get<std::string>();
      t.mask_path = jt.at("mask").get<std::string>();
      if (jt.contains("location")) {
        t.location_row = jt.at("location").at(0).get<int>();
        t.location_col = jt.at("location").at(1).get<int>();
      }
      t.urbanity = jt.value("urbanity", 0.0);
      for (const auto& jp : jt.at("patches")) {
        t.patches.push_back(
            {jp.at("row").get<int>(), jp.at("col").get<int>(), jp.at("label").get<int>()});
      }
      m.tiles.push_back(std::move(t));
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed dataset manifest: {}", e.what()));
  }
}

void write_manifest(const fs::path& root, const DatasetManifest& m) {
  const std::string text = manifest_to_json(m).dump(1) + "\n";
  write_file_bytes(root / "manifest.json", std::span<const char>(text.data(), text.size()));
}

DatasetManifest read_manifest(const fs::path& root) {
  const auto path = root / "manifest.json";
  const auto bytes = read_file_bytes(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return manifest_from_json(j);
}

std::size_t Dataset::index_of(const PatchRef& ref) const {
  if (ref.tile < 0 || static_cast<std::size_t>(ref.tile) >= tiles.size() || ref.patch < 0 ||
      static_cast<std::size_t>(ref.patch) >= manifest.tiles[ref.tile].patches.size()) {
    throw GeometryError(fmt::format("unknown patch ref ({}, {})", ref.tile, ref.patch));
  }
  return tile_offset_[ref.tile] + static_cast<std::size_t>(ref.patch);
}

Dataset dataset_from_tiles(DatasetManifest manifest, std::vector<Tile> tiles) {
  if (manifest.tiles.size() != tiles.size()) {
    manifest.tiles.clear();
    for (const auto& t : tiles) {
      TileEntry e;
      e.id = t.id;
      e.region_tag = t.raster.region_tag();
      e.height = t.raster.height();
      e.width = t.raster.width();
      manifest.tiles.push_back(std::move(e));
    }
  }
  Dataset ds;
  ds.manifest = std::move(manifest);
  ds.tiles = std::move(tiles);
  for (std::size_t ti = 0; ti < ds.tiles.size(); ++ti) {
    ds.tile_offset_.push_back(ds.patches.size());
    auto patches = crop_into_patches(ds.tiles[ti]);
    auto& entry = ds.manifest.tiles[ti];
    entry.patches.clear();
    for (std::size_t pi = 0; pi < patches.size(); ++pi) {
      entry.patches.push_back({patches[pi].row, patches[pi].col, patches[pi].label});
      ds.refs.push_back({static_cast<int>(ti), static_cast<int>(pi)});
      ds.patches.push_back(std::move(patches[pi]));
    }
  }
  return ds;
}

Dataset load_dataset(const fs::path& root) {
  DatasetManifest manifest = read_manifest(root);
  std::vector<Tile> tiles;
  tiles.reserve(manifest.tiles.size());
  for (const auto& e : manifest.tiles) {
    Tile t{e.id, read_cras(root / e.raster_path), read_mask(root / e.mask_path)};
    if (t.raster.height() != e.height || t.raster.width() != e.width) {
      throw FormatError(fmt::format("tile {}: raster is {}x{}, manifest says {}x{}", e.id,
                                    t.raster.height(), t.raster.width(), e.height, e.width));
    }
    t.raster.set_region_tag(e.region_tag);
    tiles.push_back(std::move(t));
  }
  const auto expected = manifest.tiles;
  Dataset ds = dataset_from_tiles(std::move(manifest), std::move(tiles));
  for (std::size_t ti = 0; ti < expected.size(); ++ti) {
    const auto& want = expected[ti].patches;
    const auto& got = ds.manifest.tiles[ti].patches;
    if (want.size() != got.size()) {
      throw FormatError(fmt::format("tile {}: manifest lists {} patches, raster yields {}",
                                    expected[ti].id, want.size(), got.size()));
    }
    for (std::size_t pi = 0; pi < want.size(); ++pi) {
      if (want[pi].label != got[pi].label || want[pi].row != got[pi].row ||
          want[pi].col != got[pi].col) {
        throw FormatError(fmt::format("tile {} patch {}: manifest label {} but mask gives {}",
                                      expected[ti].id, pi, want[pi].label, got[pi].label));
      }
    }
  }
  ds.root = root;
  return ds;
}

}  // namespace coverest
