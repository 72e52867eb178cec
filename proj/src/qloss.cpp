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

#include "coverest/qloss.hpp"

#include <algorithm>

#include <cmath>

#include <fmt/format.h>

#include "coverest/errors.hpp"

namespace coverest {

namespace {

void check_level(double q) {
  if (!(q > 0.0 && q < 1.0)) {
    throw ConfigError(fmt::format("quantile level {} is outside (0, 1)", q));
  }
}

}  // namespace

QuantileSpec::QuantileSpec(std::vector<double> levels) : levels_(std::move(levels)) {
  if (levels_.empty()) throw ConfigError("quantile spec needs at least one level");
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    check_level(levels_[i]);
    if (i > 0 && !(levels_[i] > levels_[i - 1])) {
      throw ConfigError(fmt::format("quantile levels must be strictly increasing ({} after {})",
                                    levels_[i], levels_[i - 1]));
    }
    if (levels_[i] == 0.5) median_index_ = static_cast<int>(i);
  }
}

double pinball(double q, double y, double y_hat) {
  check_level(q);
  const double residual = std::abs(y_hat - y);
  return y_hat >= y ? q * residual : (1.0 - q) * residual;
}

double pinball_grad(double q, double y, double y_hat) {
  check_level(q);
  if (y_hat > y) return q;
  if (y_hat < y) return -(1.0 - q);
  return 0.0;
}

double best_constant(double q, std::span<const double> labels) {
  if (labels.empty()) throw ConfigError("best_constant on an empty sample");
  std::vector<double> sorted(labels.begin(), labels.end());
  std::sort(sorted.begin(), sorted.end());
  // The mean loss is convex and piecewise linear with breakpoints at the
  // labels; find the first breakpoint whose right derivative is >= 0.
  auto right_slope = [&](double c) {
    double s = 0.0;
    for (double y : sorted) s += (c >= y) ? pinball_grad(q, y, c + 1.0) : pinball_grad(q, y, c);
    return s;
  };
  std::size_t lo = 0, hi = sorted.size() - 1;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (right_slope(sorted[mid]) >= 0.0) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return sorted[lo];
}

LossValue quantile_loss(double y, std::span<const double> y_hat, const QuantileSpec& spec) {
  const int k = spec.size();
  if (static_cast<int>(y_hat.size()) != k) {
    throw GeometryError(fmt::format("expected {} predictions, got {}", k, y_hat.size()));
  }
  LossValue out;
  out.per_node.resize(k);
  out.gradient.resize(k);
  double sum = 0.0;
  for (int n = 0; n < k; ++n) {
    out.per_node[n] = pinball(spec[n], y, y_hat[n]);
    out.gradient[n] = pinball_grad(spec[n], y, y_hat[n]) / k;
    sum += out.per_node[n];
  }
  out.value = sum / k;
  return out;
}

BatchLoss batch_loss(std::span<const double> labels, std::span<const double> predictions,
                     const QuantileSpec& spec) {
  const std::size_t batch = labels.size();
  const std::size_t k = static_cast<std::size_t>(spec.size());
  if (batch == 0) throw ConfigError("batch_loss on an empty batch");
  if (predictions.size() != batch * k) {
    throw GeometryError(fmt::format("predictions hold {} values, expected {} x {}",
                                  predictions.size(), batch, k));
  }
  BatchLoss out;
  out.gradient.resize(batch * k);
  double sum = 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto row = predictions.subspan(b * k, k);
    LossValue lv = quantile_loss(labels[b], row, spec);
    sum += lv.value;
    for (std::size_t n = 0; n < k; ++n) out.gradient[b * k + n] = lv.gradient[n] * inv_b;
  }
  out.value = sum * inv_b;
  return out;
}

}  // namespace coverest
