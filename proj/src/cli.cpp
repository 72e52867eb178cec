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

#include "coverest/cli.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "coverest/cras.hpp"
#include "coverest/dataset.hpp"
#include "coverest/eval.hpp"
#include "coverest/log.hpp"
#include "coverest/synthdata.hpp"
#include "coverest/train.hpp"

namespace coverest {

namespace fs = std::filesystem;
using nlohmann::json;

json read_json_config(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string dataset_digest(const fs::path& root) {
  const DatasetManifest m = read_manifest(root);
  std::string acc = sha256_file(root / "manifest.json");
  for (const auto& t : m.tiles) {
    for (const auto& rel : {t.raster_path, t.mask_path}) {
      acc += sha256_file(root / rel);
      acc += sha256_file(cras_blob_path(root / rel));
    }
  }
  return sha256_hex(std::span<const char>(acc.data(), acc.size()));
}

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError(fmt::format("cannot create output directory {}: {}", dir.string(),
                              ec ? ec.message() : "not a directory"));
  }
  // create_directories succeeds on an existing read-only directory; probe it.
  const fs::path probe = dir / ".coverest_write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw IoError(fmt::format("output directory {} is not writable", dir.string()));
  }
  fs::remove(probe, ec);
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::span<const char>(text.data(), text.size()));
}

std::string digest_of(const json& j) {
  const std::string s = j.dump();
  return sha256_hex(std::span<const char>(s.data(), s.size()));
}

// One per command invocation, written last.
class RunManifest {
 public:
  explicit RunManifest(std::string command)
      : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  void set_config(const json& config) { config_digest_ = digest_of(config); }
  void add_input(const std::string& name, const std::string& digest) { inputs_[name] = digest; }
  void add_output(const fs::path& path) { outputs_.push_back(path); }

  void write(const fs::path& out_dir) const {
    json outputs = json::object();
    for (const auto& p : outputs_) outputs[p.filename().string()] = sha256_file(p);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const json j = {{"command", command_},
                    {"tool_version", kToolVersion},
                    {"config_digest", config_digest_},
                    {"input_digests", inputs_},
                    {"outputs", outputs},
                    {"wall_seconds", wall}};
    write_text(out_dir / "run_manifest.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::string config_digest_;
  json inputs_ = json::object();
  std::vector<fs::path> outputs_;
};

json refs_to_json(const std::vector<PatchRef>& refs) {
  json a = json::array();
  for (const auto& r : refs) a.push_back({r.tile, r.patch});
  return a;
}

std::vector<PatchRef> refs_from_json(const json& a) {
  std::vector<PatchRef> refs;
  for (const auto& e : a) refs.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
  return refs;
}

std::vector<PatchRef> all_refs(const Dataset& ds) { return ds.refs; }

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 1;
};

int cmd_gen_data(const GenDataArgs& a) {
  const json raw = read_json_config(a.config);
  SceneConfig cfg = scene_config_from_json(raw);
  cfg.seed = a.seed;
  cfg.validate();
  ensure_dir(a.out);
  RunManifest run("gen-data");
  json effective;
  to_json(effective, cfg);
  run.set_config(effective);
  const auto manifest = generate_dataset(cfg, a.out, a.threads);
  run.add_output(fs::path(a.out) / "manifest.json");
  run.add_input("dataset_digest", dataset_digest(a.out));
  run.write(a.out);
  std::cout << fmt::format("wrote {} tiles / {} patches to {}\n", manifest.tiles.size(),
                           manifest.patch_count(), a.out);
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::string model_config;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string setting;
  std::string ablation;
};

struct TrainOutputs {
  fs::path checkpoint;
  Splits splits;
};

TrainConfig resolve_train_config(const TrainArgs& a) {
  TrainConfig tc = a.config.empty() ? TrainConfig{} : train_config_from_json(read_json_config(a.config));
  tc.seed = a.seed;
  tc.threads = a.threads;
  if (!a.setting.empty()) tc.setting = ExperimentSetting::parse(a.setting);
  if (!a.ablation.empty()) tc.ablation = Ablation::parse(a.ablation);
  tc.validate();
  return tc;
}

ModelConfig resolve_model_config(const std::string& path) {
  return path.empty() ? ModelConfig{} : model_config_from_json(read_json_config(path));
}

TrainOutputs run_training(const Dataset& ds, const TrainConfig& tc, const ModelConfig& mc,
                          const fs::path& out, const std::string& data_digest,
                          const std::string& command) {
  ensure_dir(out);
  RunManifest run(command);
  run.set_config({{"train", train_config_to_json(tc)}, {"model", model_config_to_json(mc)}});
  run.add_input("dataset_digest", data_digest);

  TrainResult result = train_model(ds, tc, mc);

  const fs::path ckpt = out / "checkpoint.ckpt";
  save_checkpoint(result.state, ckpt);
  write_text(out / "trace.csv", trace_csv(result.trace));
  write_text(out / "timing.csv", timing_csv(result.trace));
  const json split = {{"setting", tc.setting.to_string()},
                      {"seed", tc.seed},
                      {"dataset_digest", data_digest},
                      {"train", refs_to_json(result.fit_refs)},
                      {"val", refs_to_json(result.val_refs)},
                      {"test", refs_to_json(result.splits.test)},
                      {"audit", result.audit.to_json()}};
  write_text(out / "split.json", split.dump(1) + "\n");
  for (const char* f : {"checkpoint.ckpt", "trace.csv", "split.json"}) run.add_output(out / f);
  run.write(out);

  std::cout << fmt::format("train: {} fit / {} val / {} test patches; setting {}, ablation {}\n",
                           result.fit_refs.size(), result.val_refs.size(),
                           result.splits.test.size(), tc.setting.to_string(),
                           tc.ablation.to_string());
  for (const auto& [tag, n] : result.audit.train_by_region) {
    std::cout << fmt::format("  train region {}: {} patches\n", tag, n);
  }
  std::cout << fmt::format("  held-out leakage: {}\n", result.audit.leaked);
  if (!result.trace.empty()) {
    const auto& last = result.trace.back();
    std::cout << fmt::format("  final epoch {}: train loss {:.4f}, val loss {:.4f}\n", last.epoch,
                             last.train_loss, last.val_loss);
  }
  return {ckpt, result.splits};
}

int cmd_train(const TrainArgs& a) {
  const TrainConfig tc = resolve_train_config(a);
  const ModelConfig mc = resolve_model_config(a.model_config);
  const Dataset ds = load_dataset(a.data);
  run_training(ds, tc, mc, a.out, dataset_digest(a.data), "train");
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "all";
  std::string side = "test";
  std::string out;
  int threads = 1;
};

std::vector<PatchRef> resolve_split(const Dataset& ds, const std::string& split,
                                    const std::string& side) {
  if (split == "all") return all_refs(ds);
  const json j = read_json_config(split);
  if (!j.contains(side)) throw ConfigError(fmt::format("{} has no '{}' list", split, side));
  auto refs = refs_from_json(j.at(side));
  for (const auto& r : refs) ds.index_of(r);
  return refs;
}

Evaluation write_evaluation(const ModelState& state, const Dataset& ds,
                            const std::vector<PatchRef>& refs, const fs::path& out, int threads,
                            RunManifest& run) {
  Evaluation ev = evaluate(state, ds, refs, threads);
  write_text(out / "patches.csv", patches_csv(ev, state.config.quantiles));
  write_text(out / "tiles.csv", tiles_csv(ev));
  write_text(out / "scatter.csv", scatter_csv(ev));
  write_text(out / "summary.json", summary_json(ev).dump(2) + "\n");
  for (const char* f : {"patches.csv", "tiles.csv", "scatter.csv", "summary.json"}) {
    run.add_output(out / f);
  }
  return ev;
}

void print_metrics(const Evaluation& ev) {
  std::cout << fmt::format(
      "patches {}: MAE {:.3f}, Pearson r2 {:.4f}, R2 {:.4f}; tiles {}: mean abs error {:.3f} pp\n",
      ev.metrics.n_samples, ev.metrics.mae, ev.metrics.pearson_r2, ev.metrics.r2_determination,
      ev.tiles.size(), ev.mean_tile_abs_error);
}

int cmd_eval(const EvalArgs& a) {
  ensure_dir(a.out);
  RunManifest run("eval");
  run.set_config({{"split", a.split}, {"side", a.side}});
  const ModelState state = load_checkpoint(a.checkpoint);
  const Dataset ds = load_dataset(a.data);
  run.add_input("checkpoint", sha256_file(a.checkpoint));
  run.add_input("dataset_digest", dataset_digest(a.data));
  if (a.split != "all") run.add_input("split", sha256_file(a.split));
  const auto refs = resolve_split(ds, a.split, a.side);
  const Evaluation ev = write_evaluation(state, ds, refs, a.out, a.threads, run);
  run.write(a.out);
  print_metrics(ev);
  return kExitOk;
}

struct PredictArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  int threads = 1;
};

int cmd_predict(const PredictArgs& a) {
  ensure_dir(a.out);
  RunManifest run("predict");
  run.set_config(json::object());
  const ModelState state = load_checkpoint(a.checkpoint);
  const Dataset ds = load_dataset(a.data);
  run.add_input("checkpoint", sha256_file(a.checkpoint));
  run.add_input("dataset_digest", dataset_digest(a.data));
  const Evaluation ev = evaluate(state, ds, ds.refs, a.threads);
  std::string csv = "tile_id,row,col,prediction\n";
  for (const auto& p : ev.patches) {
    csv += fmt::format("{},{},{},{:.6f}\n", p.tile_id, p.row, p.col, p.median);
  }
  write_text(fs::path(a.out) / "predictions.csv", csv);
  run.add_output(fs::path(a.out) / "predictions.csv");
  run.write(a.out);
  std::cout << fmt::format("predicted {} patches\n", ev.patches.size());
  return kExitOk;
}

struct AggregateArgs {
  std::string predictions;
  std::string data;
  std::string out;
};

// Tile coverage from a predictions CSV (tile_id,row,col,prediction) and the
// tile sizes in a dataset manifest.
int cmd_aggregate(const AggregateArgs& a) {
  ensure_dir(a.out);
  RunManifest run("aggregate");
  run.set_config(json::object());
  run.add_input("predictions", sha256_file(a.predictions));
  run.add_input("manifest", sha256_file(fs::path(a.data) / "manifest.json"));
  const DatasetManifest m = read_manifest(a.data);
  std::map<std::string, const TileEntry*> tiles;
  for (const auto& t : m.tiles) tiles[t.id] = &t;

  std::ifstream in(a.predictions);
  if (!in) throw IoError(fmt::format("cannot open {}", a.predictions));
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::vector<double>> counts;
  std::vector<std::string> order;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, row, col, pred;
    if (!std::getline(ss, id, ',') || !std::getline(ss, row, ',') || !std::getline(ss, col, ',') ||
        !std::getline(ss, pred, ',')) {
      throw FormatError(fmt::format("{}:{}: expected tile_id,row,col,prediction", a.predictions,
                                    line_no));
    }
    if (!tiles.contains(id)) {
      throw FormatError(fmt::format("{}:{}: tile {} is not in the manifest", a.predictions,
                                    line_no, id));
    }
    if (!counts.contains(id)) order.push_back(id);
    try {
      counts[id].push_back(std::stod(pred));
    } catch (const std::exception&) {
      throw FormatError(fmt::format("{}:{}: bad prediction '{}'", a.predictions, line_no, pred));
    }
  }
  std::string csv = "tile_id,region_tag,n_patches,coverage_pred\n";
  for (const auto& id : order) {
    const TileEntry& t = *tiles[id];
    csv += fmt::format("{},{},{},{:.6f}\n", id, t.region_tag, counts[id].size(),
                       tile_coverage(counts[id], t.height, t.width));
  }
  write_text(fs::path(a.out) / "coverage.csv", csv);
  run.add_output(fs::path(a.out) / "coverage.csv");
  run.write(a.out);
  std::cout << fmt::format("aggregated {} tiles\n", order.size());
  return kExitOk;
}

struct CompareMaskArgs {
  std::string mask;
  std::string truth;
};

int cmd_compare_mask(const CompareMaskArgs& a) {
  const BinaryMask product = read_mask(a.mask);
  const BinaryMask truth = read_mask(a.truth);
  const double cp = coverage_from_mask(product);
  const double ct = coverage_from_mask(truth);
  std::cout << fmt::format("coverage product {:.6f}%, truth {:.6f}%, abs error {:.6f} pp\n", cp, ct,
                           tile_abs_error(cp, ct));
  return kExitOk;
}

struct AblateArgs {
  TrainArgs train;
};

int cmd_ablate(const AblateArgs& a) {
  const ModelConfig mc = resolve_model_config(a.train.model_config);
  const Dataset ds = load_dataset(a.train.data);
  const std::string digest = dataset_digest(a.train.data);
  ensure_dir(a.train.out);
  RunManifest run("ablate");
  std::string table = "ablation,pearson_r2,r2_determination,mae,mean_tile_abs_error\n";
  for (const char* name : {"none", "single-node", "drop-channel:0", "drop-channel:4"}) {
    TrainArgs ta = a.train;
    ta.ablation = name;
    const TrainConfig tc = resolve_train_config(ta);
    std::string dir_name = name;
    std::replace(dir_name.begin(), dir_name.end(), ':', '_');
    const fs::path sub = fs::path(a.train.out) / dir_name;
    const TrainOutputs outs = run_training(ds, tc, mc, sub, digest, "train");
    RunManifest eval_run("eval");
    const ModelState state = load_checkpoint(outs.checkpoint);
    const Evaluation ev = write_evaluation(state, ds, outs.splits.test, sub, tc.threads, eval_run);
    table += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f}\n", name, ev.metrics.pearson_r2,
                         ev.metrics.r2_determination, ev.metrics.mae, ev.mean_tile_abs_error);
    std::cout << name << ": ";
    print_metrics(ev);
  }
  run.set_config(train_config_to_json(resolve_train_config(a.train)));
  run.add_input("dataset_digest", digest);
  write_text(fs::path(a.train.out) / "ablation.csv", table);
  run.add_output(fs::path(a.train.out) / "ablation.csv");
  run.write(a.train.out);
  return kExitOk;
}

struct TemporalArgs {
  std::string checkpoint;
  std::string data_t1;
  std::string data_t2;
  std::string out;
  int threads = 1;
};

int cmd_temporal(const TemporalArgs& a) {
  ensure_dir(a.out);
  RunManifest run("temporal");
  run.set_config(json::object());
  const ModelState state = load_checkpoint(a.checkpoint);
  const Dataset t1 = load_dataset(a.data_t1);
  const Dataset t2 = load_dataset(a.data_t2);
  run.add_input("checkpoint", sha256_file(a.checkpoint));
  run.add_input("dataset_t1", dataset_digest(a.data_t1));
  run.add_input("dataset_t2", dataset_digest(a.data_t2));
  const auto cov1 = region_coverage(evaluate(state, t1, t1.refs, a.threads), t1);
  const auto cov2 = region_coverage(evaluate(state, t2, t2.refs, a.threads), t2);

  std::string csv =
      "region_tag,coverage_t1,coverage_t2,growth_pct,true_coverage_t1,true_coverage_t2,true_growth_pct\n";
  auto fmt_growth = [](std::optional<double> g) {
    return g ? fmt::format("{:.6f}", *g) : std::string("undefined");
  };
  for (const auto& c1 : cov1) {
    const auto it = std::find_if(cov2.begin(), cov2.end(),
                                 [&](const RegionCoverage& c) { return c.region_tag == c1.region_tag; });
    if (it == cov2.end()) {
      logger().warn("region {} has no tiles at t2; skipped", c1.region_tag);
      continue;
    }
    const auto g = growth_rate(c1.coverage_pred(), it->coverage_pred());
    const auto g_true = growth_rate(c1.coverage_true(), it->coverage_true());
    csv += fmt::format("{},{:.6f},{:.6f},{},{:.6f},{:.6f},{}\n", c1.region_tag, c1.coverage_pred(),
                       it->coverage_pred(), fmt_growth(g), c1.coverage_true(),
                       it->coverage_true(), fmt_growth(g_true));
    std::cout << fmt::format("{}: {:.3f}% -> {:.3f}%  growth {}\n", c1.region_tag,
                             c1.coverage_pred(), it->coverage_pred(), fmt_growth(g));
  }
  write_text(fs::path(a.out) / "temporal.csv", csv);
  run.add_output(fs::path(a.out) / "temporal.csv");
  run.write(a.out);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"coverest: building coverage estimation from low-resolution imagery"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--config", gen.config, "Scene config JSON")->required();
  gen_cmd->add_option("--out", gen.out, "Output dataset directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Random seed")->required();
  gen_cmd->add_option("--threads", gen.threads, "Worker threads")->check(CLI::PositiveNumber);

  TrainArgs train;
  auto add_train_opts = [](CLI::App* cmd, TrainArgs& t) {
    cmd->add_option("--data", t.data, "Dataset directory")->required();
    cmd->add_option("--config", t.config, "Train config JSON");
    cmd->add_option("--model-config", t.model_config, "Model config JSON");
    cmd->add_option("--out", t.out, "Output directory")->required();
    cmd->add_option("--seed", t.seed, "Random seed")->required();
    cmd->add_option("--threads", t.threads, "Worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--setting", t.setting, "holistic | intra:<tag> | exclusive:<tag>");
  };
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_train_opts(train_cmd, train);
  train_cmd->add_option("--ablation", train.ablation, "none | single-node | drop-channel:<i>");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate the ablation sweep");
  add_train_opts(ablate_cmd, ablate.train);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", ev.split, "all | path to split.json from a train run");
  eval_cmd->add_option("--side", ev.side, "Split side: test | train | val");
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();
  eval_cmd->add_option("--threads", ev.threads, "Worker threads")->check(CLI::PositiveNumber);

  PredictArgs pred;
  auto* pred_cmd = app.add_subcommand("predict", "Predict building pixels for every patch");
  pred_cmd->add_option("--checkpoint", pred.checkpoint, "Checkpoint file")->required();
  pred_cmd->add_option("--data", pred.data, "Dataset directory")->required();
  pred_cmd->add_option("--out", pred.out, "Output directory")->required();
  pred_cmd->add_option("--threads", pred.threads, "Worker threads")->check(CLI::PositiveNumber);

  AggregateArgs agg;
  auto* agg_cmd = app.add_subcommand("aggregate", "Tile coverage from patch predictions");
  agg_cmd->add_option("--predictions", agg.predictions, "predictions.csv")->required();
  agg_cmd->add_option("--data", agg.data, "Dataset directory (tile sizes)")->required();
  agg_cmd->add_option("--out", agg.out, "Output directory")->required();

  CompareMaskArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare-mask", "Score a binary settlement mask against truth");
  cmp_cmd->add_option("--mask", cmp.mask, "Product mask (CRAS)")->required();
  cmp_cmd->add_option("--truth", cmp.truth, "Ground-truth mask (CRAS)")->required();

  TemporalArgs temp;
  auto* temp_cmd = app.add_subcommand("temporal", "Region growth between two acquisitions");
  temp_cmd->add_option("--checkpoint", temp.checkpoint, "Checkpoint file")->required();
  temp_cmd->add_option("--data-t1", temp.data_t1, "Earlier dataset")->required();
  temp_cmd->add_option("--data-t2", temp.data_t2, "Later dataset")->required();
  temp_cmd->add_option("--out", temp.out, "Output directory")->required();
  temp_cmd->add_option("--threads", temp.threads, "Worker threads")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(train);
    if (*ablate_cmd) return cmd_ablate(ablate);
    if (*eval_cmd) return cmd_eval(ev);
    if (*pred_cmd) return cmd_predict(pred);
    if (*agg_cmd) return cmd_aggregate(agg);
    if (*cmp_cmd) return cmd_compare_mask(cmp);
    if (*temp_cmd) return cmd_temporal(temp);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace coverest
