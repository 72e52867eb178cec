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

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "coverest/cras.hpp"
#include "coverest/synthdata.hpp"
#include "coverest/train.hpp"

using namespace coverest;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "coverest_test_train" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Manifest with `tiles` tiles per region and 16 patches each; no pixels.
DatasetManifest synthetic_manifest(const std::vector<std::string>& regions, int tiles,
                                   int patches_per_tile = 16) {
  DatasetManifest m;
  int id = 0;
  for (const auto& r : regions) {
    for (int t = 0; t < tiles; ++t) {
      TileEntry e;
      e.id = "t" + std::to_string(id++);
      e.region_tag = r;
      e.height = e.width = 200;
      for (int p = 0; p < patches_per_tile; ++p) e.patches.push_back({(p / 4) * 50, (p % 4) * 50, p});
      m.tiles.push_back(e);
    }
  }
  return m;
}

std::string region_of(const DatasetManifest& m, const PatchRef& r) { return m.tiles[r.tile].region_tag; }

ModelConfig tiny_model() {
  ModelConfig c;
  c.n_blocks = 1;
  c.base_width = 4;
  c.head_hidden = 8;
  c.stem_pool = 5;
  return c;
}

// Every patch is identical (a 7-pixel building on a flat background).
Dataset constant_dataset(int n_tiles) {
  DatasetManifest m;
  std::vector<Tile> tiles;
  for (int t = 0; t < n_tiles; ++t) {
    Tile tile{"c" + std::to_string(t), Raster(50, 50, kPatchChannels, 10.0, "R1"), BinaryMask(50, 50, 10.0)};
    for (int j = 0; j < 7; ++j) tile.mask.set(10, 10 + j, true);
    for (int i = 0; i < 50; ++i) {
      for (int j = 0; j < 50; ++j) {
        for (int c = 0; c < kPatchChannels; ++c) tile.raster.at(i, j, c) = 0.1f * static_cast<float>(c + 1);
      }
    }
    TileEntry e;
    e.id = tile.id;
    e.region_tag = "R1";
    e.height = e.width = 50;
    m.tiles.push_back(e);
    tiles.push_back(std::move(tile));
  }
  return dataset_from_tiles(m, std::move(tiles));
}

Dataset small_corpus(const std::string& name, int n_tiles) {
  SceneConfig cfg;
  cfg.seed = 77;
  cfg.n_tiles = n_tiles;
  const fs::path root = scratch(name);
  generate_dataset(cfg, root);
  return load_dataset(root);
}

}  // namespace

TEST_CASE("setting and ablation parsing") {
  CHECK(ExperimentSetting::parse("holistic").variant == ExperimentSetting::Variant::kHolistic);
  const auto ex = ExperimentSetting::parse("exclusive:R3");
  CHECK(ex.variant == ExperimentSetting::Variant::kExclusive);
  CHECK(ex.tag == "R3");
  CHECK(ExperimentSetting::parse("intra:R2").to_string() == "intra:R2");
  CHECK_THROWS_AS(ExperimentSetting::parse("exclusive:"), ConfigError);
  CHECK_THROWS_AS(ExperimentSetting::parse("global"), ConfigError);
  CHECK(Ablation::parse("single-node").kind == Ablation::Kind::kSingleNode);
  CHECK(Ablation::parse("drop-channel:4").channel == 4);
  CHECK_THROWS_AS(Ablation::parse("drop-channel:5"), ConfigError);
  CHECK_THROWS_AS(Ablation::parse("drop"), ConfigError);
}

TEST_CASE("train config json round trip and validation") {
  TrainConfig c;
  c.learning_rate = 0.01;
  c.setting = ExperimentSetting::exclusive("R4");
  c.ablation = Ablation::drop_channel(0);
  const TrainConfig back = train_config_from_json(train_config_to_json(c));
  CHECK(back.learning_rate == 0.01);
  CHECK(back.setting.to_string() == "exclusive:R4");
  CHECK(back.ablation.to_string() == "drop-channel:0");
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"optimizer", "rmsprop"}}), ConfigError);
}

TEST_CASE("build_splits examples") {
  const DatasetManifest m = synthetic_manifest({"R1", "R2", "R3"}, 10);
  const Splits ex = build_splits(m, ExperimentSetting::exclusive("R1"), 3);
  for (const auto& r : ex.train) CHECK(region_of(m, r) != "R1");
  for (const auto& r : ex.test) CHECK(region_of(m, r) == "R1");
  CHECK(ex.test.size() == 160);

  // 100 R2 patches, split by patch: 90 / 10.
  const DatasetManifest m2 = synthetic_manifest({"R1", "R2"}, 1, 100);
  const Splits intra = build_splits(m2, ExperimentSetting::intra_country("R2"), 4, SplitUnit::kPatch);
  CHECK(intra.train.size() == 90);
  CHECK(intra.test.size() == 10);
  for (const auto& r : intra.train) CHECK(region_of(m2, r) == "R2");

  const Splits h1 = build_splits(m, ExperimentSetting::holistic(), 5);
  const Splits h2 = build_splits(m, ExperimentSetting::holistic(), 5);
  CHECK(h1.train == h2.train);
  CHECK(h1.test == h2.test);
  CHECK(build_splits(m, ExperimentSetting::holistic(), 6).test != h1.test);
  // Tile unit keeps tiles whole.
  std::set<int> train_tiles, test_tiles;
  for (const auto& r : h1.train) train_tiles.insert(r.tile);
  for (const auto& r : h1.test) test_tiles.insert(r.tile);
  for (int t : test_tiles) CHECK_FALSE(train_tiles.contains(t));
  CHECK(test_tiles.size() == 3);
}

TEST_CASE("build_splits errors") {
  const DatasetManifest m = synthetic_manifest({"R1", "R2"}, 4);
  try {
    build_splits(m, ExperimentSetting::exclusive("R9"), 1);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("R1") != std::string::npos);
    CHECK(msg.find("R2") != std::string::npos);
  }
  CHECK_THROWS_AS(build_splits(DatasetManifest{}, ExperimentSetting::holistic(), 1), ConfigError);
  // One region only: exclusive leaves nothing to train on.
  CHECK_THROWS_AS(build_splits(synthetic_manifest({"R1"}, 3), ExperimentSetting::exclusive("R1"), 1),
                  ConfigError);
  // A single tile cannot be split by tile.
  CHECK_THROWS_AS(build_splits(synthetic_manifest({"R1"}, 1), ExperimentSetting::holistic(), 1), ConfigError);
}

TEST_CASE("split disjointness over random manifests") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> n_regions(2, 5), n_tiles(2, 12), n_patches(1, 16);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> regions;
    const int nr = n_regions(rng);
    for (int r = 0; r < nr; ++r) regions.push_back("X" + std::to_string(r));
    const DatasetManifest m = synthetic_manifest(regions, n_tiles(rng), n_patches(rng));
    const std::string held = regions[trial % nr];
    for (auto unit : {SplitUnit::kTile, SplitUnit::kPatch}) {
      for (const auto& setting : {ExperimentSetting::holistic(), ExperimentSetting::exclusive(held),
                                  ExperimentSetting::intra_country(held)}) {
        Splits s;
        try {
          s = build_splits(m, setting, trial, unit);
        } catch (const ConfigError&) {
          continue;  // too small to split
        }
        std::vector<PatchRef> both = s.train;
        both.insert(both.end(), s.test.begin(), s.test.end());
        std::sort(both.begin(), both.end());
        CHECK(std::adjacent_find(both.begin(), both.end()) == both.end());
        if (setting.variant == ExperimentSetting::Variant::kExclusive) {
          for (const auto& r : s.train) CHECK(region_of(m, r) != held);
          CHECK(s.test.size() == static_cast<std::size_t>(std::count_if(
                                     m.tiles.begin(), m.tiles.end(),
                                     [&](const TileEntry& t) { return t.region_tag == held; })) *
                                     m.tiles[0].patches.size());
        }
        if (setting.variant == ExperimentSetting::Variant::kHolistic) {
          CHECK(both.size() == m.patch_count());
        }
      }
    }
  }
}

TEST_CASE("ablations change the model config") {
  const ModelConfig single = apply_ablation(ModelConfig{}, Ablation::single_node());
  CHECK(single.quantiles.levels() == std::vector<double>{0.5});
  const ModelConfig drop = apply_ablation(ModelConfig{}, Ablation::drop_channel(0));
  CHECK(drop.in_channels == 4);
  CHECK(input_channels_for(Ablation::drop_channel(0)) == std::vector<int>{1, 2, 3, 4});
  CHECK(input_channels_for(Ablation::drop_channel(4)) == std::vector<int>{0, 1, 2, 3});
  CHECK(input_channels_for(Ablation::none()).size() == 5);
}

TEST_CASE("constant label converges to 7 and loss trends down") {
  const Dataset ds = constant_dataset(40);
  TrainConfig tc;
  tc.seed = 3;
  tc.epochs = 80;
  tc.batch_size = 16;
  tc.learning_rate = 0.002;
  tc.split_unit = SplitUnit::kPatch;
  ModelConfig mc = tiny_model();
  mc.dropout_rate = 0.0;
  const TrainResult r = train_model(ds, tc, mc);
  Patch p = ds.patches[0];
  CHECK(predict_median(r.state, p) == doctest::Approx(7.0).epsilon(0.1 / 7.0));
  for (std::size_t e = 5; e < r.trace.size(); ++e) {
    CHECK(r.trace[e].train_loss <= r.trace[e - 1].train_loss * 1.02 + 1e-3);
  }
}

TEST_CASE("training is reproducible and checkpoints round trip") {
  const Dataset ds = small_corpus("repro", 4);
  TrainConfig tc;
  tc.seed = 11;
  tc.epochs = 2;
  tc.batch_size = 16;
  const TrainResult a = train_model(ds, tc, tiny_model());
  tc.threads = 2;
  const TrainResult b = train_model(ds, tc, tiny_model());
  CHECK(trace_csv(a.trace) == trace_csv(b.trace));
  const fs::path dir = scratch("ckpt");
  save_checkpoint(a.state, dir / "a.ckpt");
  save_checkpoint(b.state, dir / "b.ckpt");
  CHECK(sha256_file(dir / "a.ckpt") == sha256_file(dir / "b.ckpt"));
  CHECK(trace_csv(a.trace).starts_with("epoch,train_loss,val_loss\n"));
  CHECK(timing_csv(a.trace).starts_with("epoch,wall_seconds\n"));

  const ModelState back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.params == a.state.params);
  CHECK(back.norm.mean == a.state.norm.mean);
  CHECK(back.input_channels == a.state.input_channels);
  CHECK(back.config.quantiles == a.state.config.quantiles);
  std::vector<const Patch*> ptrs;
  for (const auto& p : ds.patches) ptrs.push_back(&p);
  CHECK(predict_all(back, ptrs).values == predict_all(a.state, ptrs).values);

  // Held-out patches never appear in the fit or validation sets.
  std::set<PatchRef> test(a.splits.test.begin(), a.splits.test.end());
  for (const auto& r : a.fit_refs) CHECK_FALSE(test.contains(r));
  for (const auto& r : a.val_refs) CHECK_FALSE(test.contains(r));
  CHECK(a.audit.leaked == 0);
}

TEST_CASE("single-node ablation checkpoint reloads with K=1") {
  const Dataset ds = small_corpus("single", 3);
  TrainConfig tc;
  tc.seed = 1;
  tc.epochs = 1;
  tc.ablation = Ablation::single_node();
  const TrainResult r = train_model(ds, tc, tiny_model());
  const fs::path dir = scratch("single_ckpt");
  save_checkpoint(r.state, dir / "s.ckpt");
  const ModelState s = load_checkpoint(dir / "s.ckpt");
  CHECK(s.config.quantiles.size() == 1);
  CHECK(s.config.quantiles.levels() == std::vector<double>{0.5});

  tc.ablation = Ablation::drop_channel(0);
  const TrainResult d = train_model(ds, tc, tiny_model());
  CHECK(d.state.config.in_channels == 4);
  CHECK(d.state.input_channels == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("checkpoint corruption") {
  MiniResNet<float> net(tiny_model());
  net.init_params(1);
  ModelState st;
  st.config = tiny_model();
  st.params = net.export_params();
  st.norm = ChannelStats{std::vector<double>(5, 0.0), std::vector<double>(5, 1.0)};
  const fs::path dir = scratch("corrupt");
  save_checkpoint(st, dir / "m.ckpt");
  const auto size = fs::file_size(dir / "m.ckpt");

  fs::copy_file(dir / "m.ckpt", dir / "short.ckpt");
  fs::resize_file(dir / "short.ckpt", size - 10);
  try {
    load_checkpoint(dir / "short.ckpt");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    const auto blob = net.parameter_count() * 4;
    CHECK(msg.find(std::to_string(blob)) != std::string::npos);
    CHECK(msg.find(std::to_string(blob - 10)) != std::string::npos);
  }

  auto bytes = read_file_bytes(dir / "m.ckpt");
  const std::string header(bytes.begin() + 8, bytes.end());
  const auto pos = header.find("\"format_version\":1");
  REQUIRE(pos != std::string::npos);
  bytes[8 + pos + 17] = '7';
  write_file_bytes(dir / "version.ckpt", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "version.ckpt"), FormatError);

  bytes = read_file_bytes(dir / "m.ckpt");
  bytes[0] = 'X';
  write_file_bytes(dir / "magic.ckpt", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), IoError);
}

TEST_CASE("divergence raises a numerical error") {
  const Dataset ds = small_corpus("diverge", 3);
  TrainConfig tc;
  tc.seed = 2;
  tc.epochs = 3;
  tc.optimizer = TrainConfig::Optimizer::kSgd;
  tc.learning_rate = 1e38;
  CHECK_THROWS_AS(train_model(ds, tc, tiny_model()), NumericalError);
}
