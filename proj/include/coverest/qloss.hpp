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

// Pinball and multi-node quantile losses.
//
// The node-wise loss weights overestimation by q and underestimation by
// (1 - q):
//
//   pinball(q, y, y_hat) = q * |y_hat - y|        if y_hat >= y
//                          (1 - q) * |y_hat - y|  otherwise
//
// Under this convention a constant predictor minimizing the mean loss over
// a sample settles on the empirical (1 - q)-quantile; for the symmetric
// level set {0.1, 0.5, 0.9} the median node is unaffected. With K = 1 and
// q = 0.5 the loss is 0.5 * L1, which has the same minimizers as L1.

#pragma once

#include <optional>
#include <span>
#include <vector>

namespace coverest {

class QuantileSpec {
 public:
  // Throws ConfigError unless 0 < q_1 < ... < q_K < 1 and K >= 1.
  explicit QuantileSpec(std::vector<double> levels);

  static QuantileSpec paper_default() { return QuantileSpec({0.1, 0.5, 0.9}); }
  static QuantileSpec median_only() { return QuantileSpec({0.5}); }

  int size() const { return static_cast<int>(levels_.size()); }
  double operator[](int i) const { return levels_[i]; }
  const std::vector<double>& levels() const { return levels_; }

  // Index of the 0.5 level, if present.
  std::optional<int> median_index() const { return median_index_; }

  bool operator==(const QuantileSpec&) const = default;

 private:
  std::vector<double> levels_;
  std::optional<int> median_index_;
};

// Throws ConfigError when q is outside (0, 1).
double pinball(double q, double y, double y_hat);

// Derivative of pinball with respect to y_hat; 0 at the kink.
double pinball_grad(double q, double y, double y_hat);

// Constant c minimizing the mean pinball(q, y, c) over `labels`; always one
// of the labels. Throws ConfigError on an empty sample.
double best_constant(double q, std::span<const double> labels);

struct LossValue {
  double value = 0.0;
  std::vector<double> per_node;
  std::vector<double> gradient;  // d value / d y_hat[n]
};

LossValue quantile_loss(double y, std::span<const double> y_hat, const QuantileSpec& spec);

struct BatchLoss {
  double value = 0.0;
  // Row-major (B, K); already scaled by 1/B.
  std::vector<double> gradient;
};

// Mean quantile loss over a batch. predictions is row-major (B, K).
BatchLoss batch_loss(std::span<const double> labels, std::span<const double> predictions,
                     const QuantileSpec& spec);

}  // namespace coverest
