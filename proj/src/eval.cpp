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

#include "coverest/eval.hpp"

#include <cmath>
#include <limits>
#include <map>

#include <fmt/format.h>

namespace coverest {

using nlohmann::json;

MetricsReport patch_metrics(std::span<const double> predictions, std::span<const double> labels) {
  if (predictions.size() != labels.size() || labels.empty()) {
    throw GeometryError(fmt::format("patch_metrics needs equal nonzero lengths, got {} and {}",
                                    predictions.size(), labels.size()));
  }
  const double n = static_cast<double>(labels.size());
  MetricsReport r;
  r.n_samples = labels.size();
  double abs_sum = 0.0, pred_sum = 0.0, label_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    abs_sum += std::abs(predictions[i] - labels[i]);
    pred_sum += predictions[i];
    label_sum += labels[i];
  }
  r.mae = abs_sum / n;
  const double pred_mean = pred_sum / n;
  const double label_mean = label_sum / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double dp = predictions[i] - pred_mean;
    const double dl = labels[i] - label_mean;
    sxy += dp * dl;
    sxx += dp * dp;
    syy += dl * dl;
    const double res = labels[i] - predictions[i];
    ss_res += res * res;
  }
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  r.r2_determination = syy > 0.0 ? 1.0 - ss_res / syy : kNaN;
  if (syy > 0.0 && sxx > 0.0) {
    r.pearson_r2 = (sxy * sxy) / (sxx * syy);
  } else {
    r.pearson_r2 = kNaN;
    r.correlation_defined = false;
  }
  if (!(syy > 0.0)) r.correlation_defined = false;
  return r;
}

double tile_coverage(std::span<const double> patch_counts, int tile_height, int tile_width) {
  if (tile_height <= 0 || tile_width <= 0) {
    throw GeometryError(fmt::format("tile size {}x{} must be positive", tile_height, tile_width));
  }
  double sum = 0.0;
  for (double y : patch_counts) sum += y;
  const double area = static_cast<double>(tile_height) * tile_width;
  if (sum > area) {
    throw GeometryError(fmt::format("patch counts sum to {} which exceeds the {}x{} tile area",
                                    sum, tile_height, tile_width));
  }
  return sum / area * 100.0;
}

double tile_abs_error(double predicted_coverage, double true_coverage) {
  return std::abs(predicted_coverage - true_coverage);
}

double coverage_from_mask(const BinaryMask& mask) {
  std::size_t ones = 0;
  for (auto v : mask.values()) ones += v;
  const double area = static_cast<double>(mask.height()) * mask.width();
  return area > 0.0 ? 100.0 * static_cast<double>(ones) / area : 0.0;
}

std::optional<double> growth_rate(double coverage_t1, double coverage_t2) {
  if (coverage_t1 == 0.0) return std::nullopt;
  return (coverage_t2 - coverage_t1) / coverage_t1 * 100.0;
}

Evaluation evaluate(const ModelState& state, const Dataset& dataset, std::span<const PatchRef> refs,
                    int threads) {
  if (refs.empty()) throw ConfigError("evaluation needs at least one patch");
  std::vector<const Patch*> patches;
  patches.reserve(refs.size());
  for (const auto& r : refs) patches.push_back(&dataset.patches[dataset.index_of(r)]);
  const Tensor<double> out = predict_all(state, patches, threads);
  const int k = state.config.quantiles.size();
  const int median = *state.config.quantiles.median_index();

  Evaluation ev;
  std::vector<double> preds, labels;
  std::size_t crossings = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Patch& p = *patches[i];
    PatchPrediction pp;
    pp.ref = refs[i];
    pp.tile_id = p.tile_id;
    pp.row = p.row;
    pp.col = p.col;
    pp.region_tag = p.region_tag;
    pp.label = p.label;
    pp.nodes.assign(out.values.begin() + i * k, out.values.begin() + (i + 1) * k);
    pp.median = pp.nodes[median];
    for (int n = 1; n < k; ++n) {
      if (pp.nodes[n - 1] > pp.nodes[n]) {
        ++crossings;
        break;
      }
    }
    preds.push_back(pp.median);
    labels.push_back(pp.label);
    ev.patches.push_back(std::move(pp));
  }
  ev.metrics = patch_metrics(preds, labels);
  ev.crossing_rate = static_cast<double>(crossings) / static_cast<double>(refs.size());

  // Tiles in first-seen order of the (sorted) refs.
  std::map<int, std::size_t> tile_slot;
  for (const auto& pp : ev.patches) {
    auto [it, inserted] = tile_slot.try_emplace(pp.ref.tile, ev.tiles.size());
    if (inserted) {
      TileReport tr;
      tr.tile_id = pp.tile_id;
      tr.region_tag = pp.region_tag;
      ev.tiles.push_back(std::move(tr));
    }
    TileReport& tr = ev.tiles[it->second];
    ++tr.n_patches;
    tr.patch_predictions.push_back(pp.median);
  }
  double err_sum = 0.0;
  for (auto& [tile, slot] : tile_slot) {
    TileReport& tr = ev.tiles[slot];
    const auto& entry = dataset.manifest.tiles[tile];
    std::vector<double> true_counts;
    for (const auto& pp : ev.patches) {
      if (pp.ref.tile == tile) true_counts.push_back(pp.label);
    }
    // Predicted counts can exceed the patch area; clamp at tile level only
    // for the precondition of the coverage formula.
    double pred_sum = 0.0;
    for (double y : tr.patch_predictions) pred_sum += y;
    const double area = static_cast<double>(entry.height) * entry.width;
    if (pred_sum > area) {
      tr.coverage_pred = 100.0;
    } else {
      tr.coverage_pred = tile_coverage(tr.patch_predictions, entry.height, entry.width);
    }
    tr.coverage_true = tile_coverage(true_counts, entry.height, entry.width);
    tr.abs_error = tile_abs_error(tr.coverage_pred, tr.coverage_true);
    err_sum += tr.abs_error;
  }
  ev.mean_tile_abs_error = err_sum / static_cast<double>(ev.tiles.size());
  return ev;
}

std::string patches_csv(const Evaluation& ev, const QuantileSpec& spec) {
  std::string out = "tile_id,row,col,region_tag,label,prediction";
  for (double q : spec.levels()) out += fmt::format(",q{:g}", q);
  out += "\n";
  for (const auto& p : ev.patches) {
    out += fmt::format("{},{},{},{},{:g},{:.6f}", p.tile_id, p.row, p.col, p.region_tag, p.label,
                       p.median);
    for (double v : p.nodes) out += fmt::format(",{:.6f}", v);
    out += "\n";
  }
  return out;
}

std::string tiles_csv(const Evaluation& ev) {
  std::string out = "tile_id,region_tag,n_patches,coverage_pred,coverage_true,abs_error\n";
  for (const auto& t : ev.tiles) {
    out += fmt::format("{},{},{},{:.6f},{:.6f},{:.6f}\n", t.tile_id, t.region_tag, t.n_patches,
                       t.coverage_pred, t.coverage_true, t.abs_error);
  }
  return out;
}

std::string scatter_csv(const Evaluation& ev) {
  std::string out = "ground_truth,prediction\n";
  for (const auto& p : ev.patches) out += fmt::format("{:g},{:.6f}\n", p.label, p.median);
  return out;
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json summary_json(const Evaluation& ev) {
  return {{"patch_level",
           {{"n_samples", ev.metrics.n_samples},
            {"mae", ev.metrics.mae},
            {"pearson_r2", number_or_null(ev.metrics.pearson_r2)},
            {"r2_determination", number_or_null(ev.metrics.r2_determination)},
            {"correlation_defined", ev.metrics.correlation_defined},
            {"quantile_crossing_rate", ev.crossing_rate}}},
          {"tile_level",
           {{"n_tiles", ev.tiles.size()}, {"mean_abs_error_pp", ev.mean_tile_abs_error}}}};
}

std::vector<RegionCoverage> region_coverage(const Evaluation& ev, const Dataset& dataset) {
  std::map<std::string, RegionCoverage> by_region;
  std::map<int, bool> seen_tile;
  for (const auto& p : ev.patches) {
    auto& rc = by_region[p.region_tag];
    rc.region_tag = p.region_tag;
    rc.predicted_pixels += p.median;
    rc.true_pixels += p.label;
    if (!seen_tile[p.ref.tile]) {
      seen_tile[p.ref.tile] = true;
      const auto& entry = dataset.manifest.tiles[p.ref.tile];
      rc.pixel_area += static_cast<double>(entry.height) * entry.width;
    }
  }
  std::vector<RegionCoverage> out;
  for (auto& [tag, rc] : by_region) out.push_back(rc);
  return out;
}

}  // namespace coverest
