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
#include <cmath>
#include <random>

#include "coverest/errors.hpp"
#include "coverest/qloss.hpp"

using namespace coverest;

TEST_CASE("pinball worked values") {
  CHECK(pinball(0.5, 10, 14) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(pinball(0.9, 10, 14) == doctest::Approx(3.6).epsilon(1e-15));
  CHECK(pinball(0.9, 10, 6) == doctest::Approx(0.4).epsilon(1e-15));
  for (double q : {0.05, 0.3, 0.5, 0.99}) CHECK(pinball(q, 42, 42) == 0.0);
}

TEST_CASE("pinball rejects q outside (0,1)") {
  for (double q : {0.0, 1.0, -0.2, 1.5, std::nan("")}) {
    CHECK_THROWS_AS(pinball(q, 1, 2), ConfigError);
    CHECK_THROWS_AS(pinball_grad(q, 1, 2), ConfigError);
  }
}

TEST_CASE("pinball properties") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 2500.0), qd(0.01, 0.99), rd(0.1, 300.0);
  for (int i = 0; i < 10000; ++i) {
    const double q = qd(rng), y = u(rng), yh = u(rng);
    const double v = pinball(q, y, yh);
    CHECK(v >= 0.0);
    CHECK((v == 0.0) == (y == yh));
  }
  for (int i = 0; i < 1000; ++i) {
    const double y = u(rng), r = rd(rng);
    double q1 = qd(rng), q2 = qd(rng);
    if (q1 == q2) continue;
    if (q1 > q2) std::swap(q1, q2);
    CHECK(pinball(q1, y, y + r) < pinball(q2, y, y + r));
    CHECK(pinball(q1, y, y - r) > pinball(q2, y, y - r));
  }
}

TEST_CASE("median pinball is half the absolute error") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  const auto spec = QuantileSpec::median_only();
  for (int i = 0; i < 10000; ++i) {
    const double y = u(rng), yh = u(rng);
    const double expected = 0.5 * std::abs(yh - y);
    CHECK(std::abs(quantile_loss(y, std::vector<double>{yh}, spec).value - expected) <=
          1e-12 * std::max(1.0, expected));
  }
}

TEST_CASE("quantile_loss worked values") {
  const auto spec = QuantileSpec::paper_default();
  CHECK(quantile_loss(100, std::vector<double>{100, 100, 100}, spec).value == 0.0);
  const LossValue lv = quantile_loss(0, std::vector<double>{10, 10, 10}, spec);
  CHECK(lv.value == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(lv.per_node == std::vector<double>{pinball(0.1, 0, 10), pinball(0.5, 0, 10), pinball(0.9, 0, 10)});
  CHECK_THROWS_AS(quantile_loss(0, std::vector<double>{1, 2}, spec), GeometryError);
}

TEST_CASE("quantile_loss gradient matches finite differences") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  const QuantileSpec spec({0.1, 0.25, 0.5, 0.9});
  const double h = 1e-5;
  for (int trial = 0; trial < 200; ++trial) {
    const double y = u(rng);
    std::vector<double> yh(4);
    for (auto& v : yh) v = u(rng);
    const LossValue lv = quantile_loss(y, yh, spec);
    for (int n = 0; n < 4; ++n) {
      if (std::abs(yh[n] - y) <= h) continue;
      auto plus = yh, minus = yh;
      plus[n] += h;
      minus[n] -= h;
      const double fd = (quantile_loss(y, plus, spec).value - quantile_loss(y, minus, spec).value) / (2 * h);
      CHECK(lv.gradient[n] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
  // Subgradient 0 at the kink.
  CHECK(quantile_loss(5, std::vector<double>{5, 5, 5, 5}, spec).gradient == std::vector<double>(4, 0.0));
}

TEST_CASE("batch_loss") {
  const auto spec = QuantileSpec::paper_default();
  const std::vector<double> one_label{3};
  const std::vector<double> one_pred{1, 4, 9};
  const BatchLoss b1 = batch_loss(one_label, one_pred, spec);
  const LossValue single = quantile_loss(3, one_pred, spec);
  CHECK(b1.value == single.value);
  CHECK(b1.gradient == single.gradient);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 50.0);
  std::vector<double> labels(8), preds(24);
  for (auto& v : labels) v = u(rng);
  for (auto& v : preds) v = u(rng);
  const BatchLoss b = batch_loss(labels, preds, spec);
  double oracle = 0.0;
  for (int i = 0; i < 8; ++i) {
    double s = 0.0;
    for (int n = 0; n < 3; ++n) s += pinball(spec[n], labels[i], preds[i * 3 + n]);
    oracle += s / 3.0;
  }
  CHECK(b.value == doctest::Approx(oracle / 8.0).epsilon(1e-14));
  for (int i = 0; i < 8; ++i) {
    for (int n = 0; n < 3; ++n) {
      const double g = pinball_grad(spec[n], labels[i], preds[i * 3 + n]) / 3.0 / 8.0;
      CHECK(b.gradient[i * 3 + n] == doctest::Approx(g).epsilon(1e-14));
    }
  }

  auto labels2 = labels;
  labels2.insert(labels2.end(), labels.begin(), labels.end());
  auto preds2 = preds;
  preds2.insert(preds2.end(), preds.begin(), preds.end());
  CHECK(batch_loss(labels2, preds2, spec).value == doctest::Approx(b.value).epsilon(1e-14));

  CHECK_THROWS_AS(batch_loss(std::vector<double>{}, std::vector<double>{}, spec), ConfigError);
}

TEST_CASE("constant-predictor minimizer is the empirical (1-q)-quantile") {
  // With the loss oriented as q * |r| for over-prediction, a constant c
  // minimizes the mean loss where a fraction q of samples lies above c.
  std::mt19937_64 rng(6);
  std::lognormal_distribution<double> ln(3.0, 1.0);
  std::vector<double> s(2001);
  for (auto& v : s) v = ln(rng);
  std::vector<double> sorted = s;
  std::sort(sorted.begin(), sorted.end());
  for (double q : {0.1, 0.5, 0.9}) {
    auto mean_loss = [&](double c) {
      double acc = 0.0;
      for (double y : s) acc += pinball(q, y, c);
      return acc / static_cast<double>(s.size());
    };
    // Piecewise linear and convex: the minimum sits on a sample point.
    double best = sorted.front(), best_loss = mean_loss(best);
    for (double c : sorted) {
      const double l = mean_loss(c);
      if (l < best_loss) {
        best = c;
        best_loss = l;
      }
    }
    const std::size_t idx = static_cast<std::size_t>(std::ceil((1.0 - q) * s.size())) - 1;
    CHECK(best == sorted[idx]);
  }
}

TEST_CASE("QuantileSpec validation") {
  CHECK_THROWS_AS(QuantileSpec({}), ConfigError);
  CHECK_THROWS_AS(QuantileSpec({0.5, 0.5}), ConfigError);
  CHECK_THROWS_AS(QuantileSpec({0.9, 0.1}), ConfigError);
  CHECK_THROWS_AS(QuantileSpec({0.0, 0.5}), ConfigError);
  CHECK(QuantileSpec::paper_default().median_index() == 1);
  CHECK_FALSE(QuantileSpec({0.1, 0.9}).median_index().has_value());
}

TEST_CASE("best_constant is the brute-force argmin") {
  std::mt19937_64 rng(7);
  std::lognormal_distribution<double> ln(2.0, 1.2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(1 + trial * 7);
    for (auto& v : s) v = std::floor(ln(rng));
    for (double q : {0.1, 0.5, 0.9}) {
      const double c = best_constant(q, s);
      auto mean_loss = [&](double x) {
        double acc = 0.0;
        for (double y : s) acc += pinball(q, y, x);
        return acc;
      };
      for (double y : s) CHECK(mean_loss(c) <= mean_loss(y) + 1e-9);
    }
  }
  CHECK(best_constant(0.5, std::vector<double>{3.0}) == 3.0);
  CHECK_THROWS_AS(best_constant(0.5, std::vector<double>{}), ConfigError);
}
