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

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coverest/dataset.hpp"
#include "coverest/nnet.hpp"

namespace coverest {

// Patch-level agreement between predicted and true building-pixel counts.
// pearson_r2 is the squared correlation; r2_determination is
// 1 - SS_res / SS_tot. The two coincide only for a least-squares fit.
struct MetricsReport {
  double mae = 0.0;
  double pearson_r2 = 0.0;
  double r2_determination = 0.0;
  std::size_t n_samples = 0;
  // False when labels (or predictions) are constant; both r2 values are NaN.
  bool correlation_defined = true;
};

MetricsReport patch_metrics(std::span<const double> predictions, std::span<const double> labels);

// 100 * sum(counts) / (height * width). Throws GeometryError when the counts
// exceed the tile area.
double tile_coverage(std::span<const double> patch_counts, int tile_height, int tile_width);

double tile_abs_error(double predicted_coverage, double true_coverage);

double coverage_from_mask(const BinaryMask& mask);

// Percent change from t1 to t2; nullopt when t1 coverage is zero.
std::optional<double> growth_rate(double coverage_t1, double coverage_t2);

struct TileReport {
  std::string tile_id;
  std::string region_tag;
  int n_patches = 0;
  std::vector<double> patch_predictions;
  double coverage_pred = 0.0;
  double coverage_true = 0.0;
  double abs_error = 0.0;
};

struct PatchPrediction {
  PatchRef ref;
  std::string tile_id;
  int row = 0;
  int col = 0;
  std::string region_tag;
  double label = 0.0;
  std::vector<double> nodes;  // one value per quantile level
  double median = 0.0;
};

struct Evaluation {
  std::vector<PatchPrediction> patches;
  std::vector<TileReport> tiles;
  MetricsReport metrics;
  double mean_tile_abs_error = 0.0;
  // Fraction of patches where a lower-level node predicts above a higher
  // one.
  double crossing_rate = 0.0;
};

// Runs the model over `refs` (eval mode, median node for the point
// estimate). Tile reports cover every tile with at least one selected
// patch; coverage uses the tile's full pixel area, so partially selected
// tiles only make sense for patch-level numbers.
Evaluation evaluate(const ModelState& state, const Dataset& dataset, std::span<const PatchRef> refs,
                    int threads = 1);

// Writers for the report files.
std::string patches_csv(const Evaluation& ev, const QuantileSpec& spec);
std::string tiles_csv(const Evaluation& ev);
std::string scatter_csv(const Evaluation& ev);
nlohmann::json summary_json(const Evaluation& ev);

// Region-level coverage from predictions and truth, used for temporal
// comparison.
struct RegionCoverage {
  std::string region_tag;
  double pixel_area = 0.0;
  double predicted_pixels = 0.0;
  double true_pixels = 0.0;

  double coverage_pred() const { return pixel_area > 0 ? 100.0 * predicted_pixels / pixel_area : 0.0; }
  double coverage_true() const { return pixel_area > 0 ? 100.0 * true_pixels / pixel_area : 0.0; }
};

std::vector<RegionCoverage> region_coverage(const Evaluation& ev, const Dataset& dataset);

}  // namespace coverest
