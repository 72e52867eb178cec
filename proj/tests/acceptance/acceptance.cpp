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


// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Scratch data goes under the system temp directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "coverest/cli.hpp"
#include "coverest/cras.hpp"
#include "coverest/eval.hpp"
#include "coverest/synthdata.hpp"
#include "coverest/train.hpp"
#include "support/gradcheck.hpp"

using namespace coverest;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int worker_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "coverest_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Shared synthetic corpus: default scene config, 125 tiles = 2000 patches.
constexpr std::uint64_t kCorpusSeed = 20240601;
constexpr std::uint64_t kTrainSeed = 7;
constexpr int kEpochs = 25;

const Dataset& corpus() {
  static const Dataset ds = [] {
    SceneConfig cfg;
    cfg.seed = kCorpusSeed;
    cfg.n_tiles = 125;
    generate_dataset(cfg, work_dir() / "corpus", worker_threads());
    return load_dataset(work_dir() / "corpus");
  }();
  return ds;
}

TrainConfig base_train_config() {
  TrainConfig tc;
  tc.seed = kTrainSeed;
  tc.epochs = kEpochs;
  tc.threads = worker_threads();
  return tc;
}

struct RunScore {
  MetricsReport metrics;
  double tile_error = 0.0;
  double seconds = 0.0;
  std::size_t test_patches = 0;
  SplitAudit audit;
};

RunScore train_and_score(const TrainConfig& tc) {
  const auto t0 = Clock::now();
  const TrainResult r = train_model(corpus(), tc, ModelConfig{});
  const Evaluation ev = evaluate(r.state, corpus(), r.splits.test, tc.threads);
  return {ev.metrics, ev.mean_tile_abs_error, seconds_since(t0), r.splits.test.size(), r.audit};
}

const RunScore& holistic_run() {
  static const RunScore s = train_and_score(base_train_config());
  return s;
}

// ---------------------------------------------------------------------------

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  MiniResNet<double> net(testing::gradcheck_config());
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (std::uint64_t point = 0; point < 20; ++point) {
    testing::randomize(net, 1000 + point);
    Tensor<double> x;
    std::vector<double> labels;
    testing::random_batch(net, 2, 2000 + point, x, labels);
    const auto rep = testing::check_gradients(net, x, labels, 1e-5);
    worst = std::max(worst, rep.max_rel_error);
    checked += rep.checked;
    skipped += rep.skipped;
  }
  const double secs = seconds_since(t0);
  const bool kinks_rare = skipped * 20 < checked;
  return {worst < 1e-4 && secs < 60.0 && kinks_rare,
          fmt::format("20 points, {} coordinates checked ({} skipped near kinks), max rel error {:.2e}, {:.1f} s",
                      checked, skipped, worst, secs)};
}

Outcome criterion_pinball() {
  bool ok = true;
  std::vector<std::string> failures;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      failures.push_back(what);
    }
  };
  expect(std::abs(pinball(0.5, 10, 14) - 2.0) < 1e-12, "q=0.5,y=10,yhat=14");
  expect(std::abs(pinball(0.9, 10, 14) - 3.6) < 1e-12, "q=0.9,y=10,yhat=14");
  expect(std::abs(pinball(0.9, 10, 6) - 0.4) < 1e-12, "q=0.9,y=10,yhat=6");
  expect(std::abs(quantile_loss(0, std::vector<double>{10, 10, 10}, QuantileSpec::paper_default()).value - 5.0) < 1e-12,
         "K=3 worked sum");

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 2500.0), qd(0.001, 0.999), rd(0.01, 500.0);
  for (int i = 0; i < 10000; ++i) {
    const double q = qd(rng), y = u(rng);
    const double yh = (i % 10 == 0) ? y : u(rng);
    const double v = pinball(q, y, yh);
    expect(v >= 0.0, "nonnegativity");
    expect((v == 0.0) == (y == yh), "zero iff equal");
    double q1 = qd(rng), q2 = qd(rng);
    if (q1 > q2) std::swap(q1, q2);
    if (q1 < q2) {
      const double r = rd(rng);
      expect(pinball(q1, y, y + r) < pinball(q2, y, y + r), "over-prediction increasing in q");
      expect(pinball(q1, y, y - r) > pinball(q2, y, y - r), "under-prediction decreasing in q");
    }
  }
  double worst = 0.0;
  const auto median = QuantileSpec::median_only();
  for (int i = 0; i < 10000; ++i) {
    const double y = u(rng), yh = u(rng);
    const double expected = 0.5 * std::abs(yh - y);
    const double got = quantile_loss(y, std::vector<double>{yh}, median).value;
    worst = std::max(worst, std::abs(got - expected) / std::max(1.0, expected));
  }
  expect(worst <= 1e-12, "K=1 reduction");
  std::sort(failures.begin(), failures.end());
  failures.erase(std::unique(failures.begin(), failures.end()), failures.end());
  std::string detail = fmt::format("worked values, 10^4 property draws, K=1 reduction max rel dev {:.1e}", worst);
  for (const auto& f : failures) detail += "; failed: " + f;
  return {ok, detail};
}

// Fits one constant by full-batch Adam on the mean pinball loss.
double fit_constant(double q, const std::vector<double>& labels) {
  const QuantileSpec spec({q});
  double sum = 0.0;
  for (double y : labels) sum += y;
  double c = sum / static_cast<double>(labels.size());
  double m = 0.0, v = 0.0;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const int steps = 6000;
  for (int t = 1; t <= steps; ++t) {
    double g = 0.0;
    for (double y : labels) g += pinball_grad(q, y, c);
    g /= static_cast<double>(labels.size());
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    const double lr = 2.0 * std::pow(1e-4, static_cast<double>(t) / steps);  // 2.0 -> 2e-4
    c -= lr * mh / (std::sqrt(vh) + eps);
  }
  return c;
}

Outcome criterion_quantile_recovery() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(11);
  std::lognormal_distribution<double> ln(3.0, 1.0);
  std::vector<double> labels(10000);
  for (auto& y : labels) y = ln(rng);
  std::vector<double> sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  auto empirical = [&](double p) {
    const auto idx = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size()))) - 1;
    return sorted[idx];
  };
  bool ok = true;
  std::string detail;
  for (double q : {0.1, 0.5, 0.9}) {
    const double c = fit_constant(q, labels);
    const double target = empirical(q);
    const double rel = std::abs(c - target) / target;
    const bool hit = rel <= 0.02;
    ok = ok && hit;
    detail += fmt::format("q={}: fitted {:.3f}, q-quantile {:.3f} ({} {:.1f}%), (1-q)-quantile {:.3f}; ", q, c,
                          target, hit ? "within" : "off by", 100 * rel, empirical(1 - q));
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 120.0;
  detail += fmt::format("{:.1f} s", secs);
  return {ok, detail};
}

Outcome criterion_geometry() {
  bool ok = true;
  std::string notes;

  Tile t{"g", Raster(200, 200, kPatchChannels, 10.0), BinaryMask(200, 200, 10.0)};
  const std::size_t n16 = crop_into_patches(t).size();
  ok = ok && n16 == 16;

  SceneConfig cfg;
  cfg.seed = 99;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> urb(0.02, 1.0);
  int partition_fail = 0;
  for (int i = 0; i < 100; ++i) {
    const SceneSite site{i, {0, 0}, urb(rng), i % 4};
    const RenderedScene s = render_scene(cfg, site);
    long sum = 0;
    for (const auto& p : crop_into_patches(s.tile)) sum += p.label;
    long whole = 0;
    for (auto v : s.tile.mask.values()) whole += v;
    partition_fail += sum != whole;
  }
  ok = ok && partition_fail == 0;

  int downsample_fail = 0;
  std::uniform_int_distribution<int> ratio_d(2, 20), cells_d(1, 6);
  std::bernoulli_distribution nz(0.005);
  std::uniform_real_distribution<float> conf(0.0f, 1.0f);
  for (int i = 0; i < 100; ++i) {
    const int ratio = ratio_d(rng), h = cells_d(rng), w = cells_d(rng);
    Raster r(h * ratio, w * ratio, 1, 0.5);
    for (auto& v : r.data()) v = nz(rng) ? conf(rng) : 0.0f;
    const BinaryMask m = downsample_and_binarize(r, 0.5 * ratio);
    for (int a = 0; a < h; ++a) {
      for (int b = 0; b < w; ++b) {
        bool any = false;
        for (int i2 = 0; i2 < ratio; ++i2) {
          for (int j2 = 0; j2 < ratio; ++j2) any = any || r.at(a * ratio + i2, b * ratio + j2) > 0.0f;
        }
        if (m.at(a, b) != static_cast<std::uint8_t>(any)) {
          ++downsample_fail;
          goto next;
        }
      }
    }
  next:;
  }
  ok = ok && downsample_fail == 0;
  return {ok, fmt::format("200x200 -> {} patches; partition mismatches {}/100; downsample mismatches {}/100", n16,
                          partition_fail, downsample_fail)};
}

Outcome criterion_metrics() {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> len(2, 400);
  std::uniform_real_distribution<double> u(0.0, 2500.0), noise(-300.0, 300.0), frac(0.0, 1.0);
  double worst = 0.0;
  auto rel = [](double a, long double b) {
    const long double d = std::fabs(static_cast<long double>(a) - b);
    return static_cast<double>(d / std::max<long double>(1.0L, std::fabs(b)));
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = len(rng);
    std::vector<double> y(n), p(n);
    for (int i = 0; i < n; ++i) {
      y[i] = std::round(u(rng) * frac(rng));
      p[i] = std::max(0.0, y[i] + noise(rng));
    }
    // Brute force, long double, two passes.
    long double my = 0, mp = 0, mae = 0;
    for (int i = 0; i < n; ++i) {
      my += y[i];
      mp += p[i];
      mae += std::fabs(static_cast<long double>(p[i]) - y[i]);
    }
    my /= n;
    mp /= n;
    mae /= n;
    long double sxy = 0, sxx = 0, syy = 0, sres = 0;
    for (int i = 0; i < n; ++i) {
      sxy += (p[i] - mp) * (y[i] - my);
      sxx += (p[i] - mp) * (p[i] - mp);
      syy += (y[i] - my) * (y[i] - my);
      sres += (static_cast<long double>(y[i]) - p[i]) * (static_cast<long double>(y[i]) - p[i]);
    }
    const MetricsReport r = patch_metrics(p, y);
    worst = std::max({worst, rel(r.mae, mae), rel(r.pearson_r2, sxy * sxy / (sxx * syy)),
                      rel(r.r2_determination, 1.0L - sres / syy)});

    std::vector<double> counts(16);
    long double total = 0;
    for (auto& c : counts) {
      c = std::floor(2500.0 * frac(rng) * frac(rng));
      total += c;
    }
    const double cov = tile_coverage(counts, 200, 200);
    worst = std::max(worst, rel(cov, total / 40000.0L * 100.0L));
    const double other = 100.0 * frac(rng);
    worst = std::max(worst, rel(tile_abs_error(cov, other), std::fabs(static_cast<long double>(cov) - other)));
  }
  return {worst <= 1e-12, fmt::format("1000 random inputs, max rel deviation {:.2e}", worst)};
}

Outcome criterion_end_to_end() {
  const RunScore& s = holistic_run();
  const bool ok = s.metrics.pearson_r2 >= 0.90 && s.tile_error <= 2.0 && s.seconds < 900.0;
  return {ok, fmt::format("{} patches, {} epochs, {} held-out patches: Pearson r2 {:.4f}, R2 {:.4f}, MAE {:.2f}, "
                          "mean tile abs error {:.3f} pp, train+eval {:.0f} s",
                          corpus().patches.size(), kEpochs, s.test_patches, s.metrics.pearson_r2,
                          s.metrics.r2_determination, s.metrics.mae, s.tile_error, s.seconds)};
}

Outcome criterion_ablations() {
  const double full = holistic_run().metrics.pearson_r2;
  bool ok = true;
  std::string detail = fmt::format("full r2 {:.4f}", full);
  for (const char* name : {"single-node", "drop-channel:0", "drop-channel:4"}) {
    TrainConfig tc = base_train_config();
    tc.ablation = Ablation::parse(name);
    const RunScore s = train_and_score(tc);
    const bool worse = s.metrics.pearson_r2 <= full - 0.02;
    ok = ok && worse;
    detail += fmt::format("; {} r2 {:.4f} ({})", name, s.metrics.pearson_r2, worse ? "<= full-0.02" : "NOT below full-0.02");
  }
  return {ok, detail};
}

Outcome criterion_exclusive() {
  const std::string held = "R3";
  TrainConfig tc = base_train_config();
  tc.setting = ExperimentSetting::exclusive(held);
  const RunScore s = train_and_score(tc);
  const bool clean = s.audit.leaked == 0 && !s.audit.train_by_region.contains(held) &&
                     !s.audit.val_by_region.contains(held);
  std::size_t test_total = 0;
  for (const auto& [tag, n] : s.audit.test_by_region) test_total += tag == held ? n : 0;
  const bool ok = clean && s.metrics.pearson_r2 >= 0.80 && test_total == s.test_patches;
  return {ok, fmt::format("held out {}: {} test patches, Pearson r2 {:.4f}, tile error {:.3f} pp; audit: {} leaked, "
                          "{} train regions",
                          held, s.test_patches, s.metrics.pearson_r2, s.tile_error, s.audit.leaked,
                          s.audit.train_by_region.size())};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome criterion_determinism() {
  corpus();
  const fs::path cfg = work_dir() / "det_train.json";
  std::ofstream(cfg) << R"({"epochs": 5})";
  auto train = [&](const std::string& out, int threads) {
    return run_cli({"train", "--data", (work_dir() / "corpus").string(), "--config", cfg.string(), "--out",
                    (work_dir() / out).string(), "--seed", "31", "--threads", std::to_string(threads)});
  };
  const int a = train("det_a", 1);
  const int b = train("det_b", worker_threads() > 1 ? 2 : 1);
  if (a != 0 || b != 0) return {false, fmt::format("train exit codes {} / {}", a, b)};
  const bool trace = slurp(work_dir() / "det_a" / "trace.csv") == slurp(work_dir() / "det_b" / "trace.csv");
  const std::string ha = sha256_file(work_dir() / "det_a" / "checkpoint.ckpt");
  const std::string hb = sha256_file(work_dir() / "det_b" / "checkpoint.ckpt");
  return {trace && ha == hb, fmt::format("trace identical: {}; checkpoint sha256 {} vs {}", trace ? "yes" : "no",
                                         ha.substr(0, 16), hb.substr(0, 16))};
}

Outcome criterion_heavy_tail() {
  std::size_t below = 0;
  for (const auto& p : corpus().patches) below += p.label < 500;
  const double frac = static_cast<double>(below) / static_cast<double>(corpus().patches.size());
  return {frac > 0.75, fmt::format("{:.1f}% of {} patches below 500 building pixels", 100 * frac,
                                   corpus().patches.size())};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient verification", criterion_gradients},
      {"pinball-loss suite", criterion_pinball},
      {"quantile-recovery oracle", criterion_quantile_recovery},
      {"geometry suite", criterion_geometry},
      {"metric oracle equivalence", criterion_metrics},
      {"synthetic end-to-end (holistic)", criterion_end_to_end},
      {"ablation direction", criterion_ablations},
      {"exclusive-setting generalization", criterion_exclusive},
      {"determinism", criterion_determinism},
      {"heavy-tail fidelity", criterion_heavy_tail},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << fmt::format("CRITERION {} {}: {} | {}", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail)
              << std::endl;
  }
  std::cout << fmt::format("{} of {} criteria passed", criteria.size() - failed, criteria.size()) << std::endl;
  return failed == 0 ? 0 : 1;
}
