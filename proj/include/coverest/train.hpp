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
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coverest/dataset.hpp"
#include "coverest/nnet.hpp"

namespace coverest {

struct ExperimentSetting {
  enum class Variant { kHolistic, kIntraCountry, kExclusive };
  Variant variant = Variant::kHolistic;
  std::string tag;  // region for IntraCountry / held-out region for Exclusive

  static ExperimentSetting holistic() { return {}; }
  static ExperimentSetting intra_country(std::string t) { return {Variant::kIntraCountry, std::move(t)}; }
  static ExperimentSetting exclusive(std::string t) { return {Variant::kExclusive, std::move(t)}; }

  // "holistic", "intra:<tag>", "exclusive:<tag>".
  static ExperimentSetting parse(const std::string& text);
  std::string to_string() const;
};

struct Ablation {
  enum class Kind { kNone, kSingleNode, kDropChannel };
  Kind kind = Kind::kNone;
  int channel = -1;

  static Ablation none() { return {}; }
  static Ablation single_node() { return {Kind::kSingleNode, -1}; }
  static Ablation drop_channel(int c) { return {Kind::kDropChannel, c}; }

  // "none", "single-node", "drop-channel:<i>".
  static Ablation parse(const std::string& text);
  std::string to_string() const;
};

// Unit that the train/test split assigns. Tile splits keep whole tiles
// together so tile-level coverage can be scored on the held-out side.
enum class SplitUnit { kTile, kPatch };

struct TrainConfig {
  double learning_rate = 0.002;
  int epochs = 60;
  int batch_size = 64;
  std::uint64_t seed = 0;
  enum class Optimizer { kAdam, kSgd };
  Optimizer optimizer = Optimizer::kAdam;
  ExperimentSetting setting;
  Ablation ablation;
  SplitUnit split_unit = SplitUnit::kTile;
  double test_fraction = 0.1;
  double val_fraction = 0.1;
  int threads = 1;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Splits {
  std::vector<PatchRef> train;
  std::vector<PatchRef> test;
};

// Holistic: random split over all regions. IntraCountry(t): split within
// region t. Exclusive(t): train on every other region, test on all of t.
// Deterministic in seed; both sides must be non-empty.
Splits build_splits(const DatasetManifest& manifest, const ExperimentSetting& setting,
                    std::uint64_t seed, SplitUnit unit = SplitUnit::kTile,
                    double test_fraction = 0.1);

// Patch counts per region on each side of a split, and whether any
// held-out region leaked into training.
struct SplitAudit {
  std::map<std::string, std::size_t> train_by_region;
  std::map<std::string, std::size_t> val_by_region;
  std::map<std::string, std::size_t> test_by_region;
  std::size_t leaked = 0;

  nlohmann::json to_json() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  ModelState state;
  std::vector<EpochMetrics> trace;
  Splits splits;
  std::vector<PatchRef> fit_refs;  // training refs actually used for updates
  std::vector<PatchRef> val_refs;
  SplitAudit audit;
};

// Applies the ablation to a model config: single-node -> {0.5};
// drop-channel -> one fewer input channel.
ModelConfig apply_ablation(ModelConfig config, const Ablation& ablation);
std::vector<int> input_channels_for(const Ablation& ablation);

// Raises NumericalError naming the epoch/batch when the loss turns
// non-finite.
TrainResult train_model(const Dataset& dataset, const TrainConfig& train_cfg,
                        const ModelConfig& model_cfg);

// Metrics trace CSV: epoch,train_loss,val_loss (deterministic).
std::string trace_csv(const std::vector<EpochMetrics>& trace);
// Timing CSV: epoch,wall_seconds.
std::string timing_csv(const std::vector<EpochMetrics>& trace);

// Checkpoint file: "CVCK" magic, u32 LE header length, JSON header, then the
// float32 LE parameter blob. The header carries the format version, model
// config, input channels, normalization stats, seed and a name -> shape /
// offset table (offsets in floats).
inline constexpr int kCheckpointVersion = 1;
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace coverest
