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


#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "coverest/cras.hpp"
#include "coverest/dataset.hpp"
#include "coverest/synthdata.hpp"

using namespace coverest;
namespace fs = std::filesystem;

namespace {

fs::path make_corpus(const std::string& name, int n_tiles) {
  const fs::path dir = fs::temp_directory_path() / "coverest_test_dataset" / name;
  fs::remove_all(dir);
  SceneConfig cfg;
  cfg.seed = 31;
  cfg.n_tiles = n_tiles;
  generate_dataset(cfg, dir);
  return dir;
}

}  // namespace

TEST_CASE("manifest json round trip") {
  DatasetManifest m;
  m.seed = 99;
  m.config = {{"tile_size", 100}};
  m.tiles.push_back({"t0", "R2", 100, 100, "tiles/t0.cras", "masks/t0.cras", 3, 4, 0.5, {{0, 0, 7}, {0, 50, 0}}});
  const DatasetManifest back = manifest_from_json(manifest_to_json(m));
  CHECK(back.seed == 99);
  CHECK(back.tiles.at(0).patches.at(0).label == 7);
  CHECK(back.tiles.at(0).region_tag == "R2");
  CHECK(back.region_tags() == std::vector<std::string>{"R2"});
  CHECK(back.patch_count() == 2);

  auto j = manifest_to_json(m);
  j["version"] = 2;
  CHECK_THROWS_AS(manifest_from_json(j), FormatError);
  j = manifest_to_json(m);
  j["format"] = "other";
  CHECK_THROWS_AS(manifest_from_json(j), FormatError);
}

TEST_CASE("load_dataset matches the manifest") {
  const fs::path root = make_corpus("load", 3);
  const Dataset ds = load_dataset(root);
  CHECK(ds.tiles.size() == 3);
  CHECK(ds.patches.size() == 48);
  CHECK(ds.refs.size() == 48);
  for (std::size_t i = 0; i < ds.refs.size(); ++i) {
    const auto& ref = ds.refs[i];
    CHECK(ds.index_of(ref) == i);
    CHECK(ds.patches[i].label == ds.manifest.tiles[ref.tile].patches[ref.patch].label);
    CHECK(ds.patches[i].region_tag == ds.manifest.tiles[ref.tile].region_tag);
  }
  CHECK_THROWS_AS(ds.index_of({3, 0}), GeometryError);
  CHECK_THROWS_AS(ds.index_of({0, 16}), GeometryError);
}

TEST_CASE("load_dataset detects label tampering and missing files") {
  const fs::path root = make_corpus("tamper", 1);
  DatasetManifest m = read_manifest(root);
  m.tiles[0].patches[5].label += 1;
  write_manifest(root, m);
  CHECK_THROWS_AS(load_dataset(root), FormatError);

  const fs::path root2 = make_corpus("missing", 1);
  fs::remove(cras_blob_path(root2 / read_manifest(root2).tiles[0].mask_path));
  CHECK_THROWS_AS(load_dataset(root2), IoError);
  CHECK_THROWS_AS(read_manifest(root2 / "nope"), IoError);
}

TEST_CASE("dataset_from_tiles fills patch lists") {
  SceneConfig cfg;
  cfg.seed = 2;
  RenderedScene s = render_buildings(cfg, {Rect{0, 0, 50, 50}}, 0, 1);
  DatasetManifest m;
  TileEntry e;
  e.id = s.tile.id;
  e.region_tag = "R1";
  e.height = e.width = 200;
  m.tiles.push_back(e);
  const Dataset ds = dataset_from_tiles(m, {s.tile});
  REQUIRE(ds.manifest.tiles[0].patches.size() == 16);
  CHECK(ds.manifest.tiles[0].patches[0].label == 2500);
  CHECK(ds.patches[1].label == 0);
}
