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

#include "coverest/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "coverest/cras.hpp"
#include "coverest/log.hpp"

namespace coverest {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Independent RNG streams derived from the run seed.
enum Stream : std::uint32_t {
  kSplitStream = 1,
  kValStream = 2,
  kInitStream = 3,
  kShuffleStream = 4,
  kDropoutStream = 5,
};

std::mt19937_64 run_stream(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xFFFFFFFFu),
                    static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

std::string join_tags(const std::vector<std::string>& tags) {
  return fmt::format("{}", fmt::join(tags, ", "));
}

template <class Fn>
auto config_guard(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("invalid {}: {}", what, e.what()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Settings and config parsing

ExperimentSetting ExperimentSetting::parse(const std::string& text) {
  if (text == "holistic") return holistic();
  const auto colon = text.find(':');
  if (colon != std::string::npos && colon + 1 < text.size()) {
    const std::string kind = text.substr(0, colon);
    const std::string tag = text.substr(colon + 1);
    if (kind == "intra") return intra_country(tag);
    if (kind == "exclusive") return exclusive(tag);
  }
  throw ConfigError(fmt::format(
      "unknown setting '{}' (expected holistic, intra:<tag> or exclusive:<tag>)", text));
}

std::string ExperimentSetting::to_string() const {
  switch (variant) {
    case Variant::kHolistic:
      return "holistic";
    case Variant::kIntraCountry:
      return "intra:" + tag;
    case Variant::kExclusive:
      return "exclusive:" + tag;
  }
  return "holistic";
}

Ablation Ablation::parse(const std::string& text) {
  if (text == "none") return none();
  if (text == "single-node") return single_node();
  const std::string prefix = "drop-channel:";
  if (text.starts_with(prefix)) {
    const std::string idx = text.substr(prefix.size());
    int c = -1;
    try {
      std::size_t used = 0;
      c = std::stoi(idx, &used);
      if (used != idx.size()) c = -1;
    } catch (const std::exception&) {
      c = -1;
    }
    if (c < 0 || c >= kPatchChannels) {
      throw ConfigError(fmt::format("drop-channel index must be in [0, {}), got '{}'",
                                    kPatchChannels, idx));
    }
    return drop_channel(c);
  }
  throw ConfigError(fmt::format(
      "unknown ablation '{}' (expected none, single-node or drop-channel:<i>)", text));
}

std::string Ablation::to_string() const {
  switch (kind) {
    case Kind::kNone:
      return "none";
    case Kind::kSingleNode:
      return "single-node";
    case Kind::kDropChannel:
      return fmt::format("drop-channel:{}", channel);
  }
  return "none";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError(fmt::format("learning_rate must be positive, got {}", learning_rate));
  }
  if (epochs < 1) throw ConfigError(fmt::format("epochs must be >= 1, got {}", epochs));
  if (batch_size < 1) throw ConfigError(fmt::format("batch_size must be >= 1, got {}", batch_size));
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError(fmt::format("test_fraction must lie in (0, 1), got {}", test_fraction));
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ConfigError(fmt::format("val_fraction must lie in [0, 1), got {}", val_fraction));
  }
  if (threads < 1) throw ConfigError(fmt::format("threads must be >= 1, got {}", threads));
}

json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"optimizer", c.optimizer == TrainConfig::Optimizer::kAdam ? "adam" : "sgd"},
          {"setting", c.setting.to_string()},
          {"ablation", c.ablation.to_string()},
          {"split_unit", c.split_unit == SplitUnit::kTile ? "tile" : "patch"},
          {"test_fraction", c.test_fraction},
          {"val_fraction", c.val_fraction}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  return config_guard("train config", [&] {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    const std::string opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam") {
      c.optimizer = TrainConfig::Optimizer::kAdam;
    } else if (opt == "sgd") {
      c.optimizer = TrainConfig::Optimizer::kSgd;
    } else {
      throw ConfigError(fmt::format("unknown optimizer '{}' (adam|sgd)", opt));
    }
    c.setting = ExperimentSetting::parse(j.value("setting", std::string("holistic")));
    c.ablation = Ablation::parse(j.value("ablation", std::string("none")));
    const std::string unit = j.value("split_unit", std::string("tile"));
    if (unit == "tile") {
      c.split_unit = SplitUnit::kTile;
    } else if (unit == "patch") {
      c.split_unit = SplitUnit::kPatch;
    } else {
      throw ConfigError(fmt::format("unknown split_unit '{}' (tile|patch)", unit));
    }
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.threads = j.value("threads", c.threads);
    return c;
  });
}

json model_config_to_json(const ModelConfig& c) {
  return {{"in_channels", c.in_channels},   {"n_blocks", c.n_blocks},
          {"base_width", c.base_width},     {"dropout_rate", c.dropout_rate},
          {"quantiles", c.quantiles.levels()}, {"head_hidden", c.head_hidden},
          {"stem_pool", c.stem_pool},       {"output_scale", c.output_scale}};
}

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  return config_guard("model config", [&] {
    ModelConfig c;
    c.in_channels = j.value("in_channels", c.in_channels);
    c.n_blocks = j.value("n_blocks", c.n_blocks);
    c.base_width = j.value("base_width", c.base_width);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    if (j.contains("quantiles")) c.quantiles = QuantileSpec(j.at("quantiles").get<std::vector<double>>());
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.stem_pool = j.value("stem_pool", c.stem_pool);
    c.output_scale = j.value("output_scale", c.output_scale);
    return c;
  });
}

// ---------------------------------------------------------------------------
// Splits

Splits build_splits(const DatasetManifest& manifest, const ExperimentSetting& setting,
                    std::uint64_t seed, SplitUnit unit, double test_fraction) {
  if (manifest.tiles.empty() || manifest.patch_count() == 0) {
    throw ConfigError("cannot split an empty dataset");
  }
  const auto tags = manifest.region_tags();
  using Variant = ExperimentSetting::Variant;
  if (setting.variant != Variant::kHolistic &&
      std::find(tags.begin(), tags.end(), setting.tag) == tags.end()) {
    throw ConfigError(fmt::format("unknown region tag '{}'; available: {}", setting.tag,
                                  join_tags(tags)));
  }

  // Units are lists of patch refs: one per tile or one per patch.
  std::vector<std::vector<PatchRef>> units;
  std::vector<std::string> unit_tag;
  for (std::size_t t = 0; t < manifest.tiles.size(); ++t) {
    const auto& tile = manifest.tiles[t];
    if (unit == SplitUnit::kTile) {
      std::vector<PatchRef> refs;
      for (std::size_t p = 0; p < tile.patches.size(); ++p) {
        refs.push_back({static_cast<int>(t), static_cast<int>(p)});
      }
      if (refs.empty()) continue;
      units.push_back(std::move(refs));
      unit_tag.push_back(tile.region_tag);
    } else {
      for (std::size_t p = 0; p < tile.patches.size(); ++p) {
        units.push_back({{static_cast<int>(t), static_cast<int>(p)}});
        unit_tag.push_back(tile.region_tag);
      }
    }
  }

  Splits out;
  auto append = [](std::vector<PatchRef>& dst, const std::vector<PatchRef>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
  };

  if (setting.variant == Variant::kExclusive) {
    for (std::size_t u = 0; u < units.size(); ++u) {
      append(unit_tag[u] == setting.tag ? out.test : out.train, units[u]);
    }
  } else {
    std::vector<std::size_t> candidates;
    for (std::size_t u = 0; u < units.size(); ++u) {
      if (setting.variant == Variant::kHolistic || unit_tag[u] == setting.tag) {
        candidates.push_back(u);
      }
    }
    auto rng = run_stream(seed, kSplitStream);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    // At least one unit on each side whenever there are two to share.
    auto n_test = static_cast<std::size_t>(
        std::lround(test_fraction * static_cast<double>(candidates.size())));
    if (candidates.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, candidates.size() - 1);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      append(i < n_test ? out.test : out.train, units[candidates[i]]);
    }
  }
  if (out.train.empty() || out.test.empty()) {
    throw ConfigError(fmt::format("setting {} leaves an empty split (train {}, test {})",
                                  setting.to_string(), out.train.size(), out.test.size()));
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

json SplitAudit::to_json() const {
  return {{"train_by_region", train_by_region},
          {"val_by_region", val_by_region},
          {"test_by_region", test_by_region},
          {"leaked", leaked}};
}

// ---------------------------------------------------------------------------
// Training

ModelConfig apply_ablation(ModelConfig config, const Ablation& ablation) {
  switch (ablation.kind) {
    case Ablation::Kind::kNone:
      break;
    case Ablation::Kind::kSingleNode:
      config.quantiles = QuantileSpec::median_only();
      break;
    case Ablation::Kind::kDropChannel:
      config.in_channels = kPatchChannels - 1;
      break;
  }
  return config;
}

std::vector<int> input_channels_for(const Ablation& ablation) {
  std::vector<int> channels;
  for (int c = 0; c < kPatchChannels; ++c) {
    if (ablation.kind == Ablation::Kind::kDropChannel && c == ablation.channel) continue;
    channels.push_back(c);
  }
  return channels;
}

namespace {

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const std::vector<Param<float>*>& params)
      : cfg_(cfg), params_(params) {
    if (cfg.optimizer == TrainConfig::Optimizer::kAdam) {
      for (auto* p : params_) {
        m_.emplace_back(p->value.size(), 0.0f);
        v_.emplace_back(p->value.size(), 0.0f);
      }
    }
  }

  void step() {
    ++t_;
    const float lr = static_cast<float>(cfg_.learning_rate);
    if (cfg_.optimizer == TrainConfig::Optimizer::kSgd) {
      for (auto* p : params_) {
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value.values[i] -= lr * p->grad.values[i];
      }
      return;
    }
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    const float step = static_cast<float>(cfg_.learning_rate * std::sqrt(c2) / c1);
    const float eps = static_cast<float>(kEps * std::sqrt(c2));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const float g = p.grad.values[i];
        m[i] = static_cast<float>(kBeta1) * m[i] + static_cast<float>(1.0 - kBeta1) * g;
        v[i] = static_cast<float>(kBeta2) * v[i] + static_cast<float>(1.0 - kBeta2) * g * g;
        p.value.values[i] -= step * m[i] / (std::sqrt(v[i]) + eps);
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<Param<float>*> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  long t_ = 0;
};

// Normalized, channel-selected inputs for a fixed list of patches.
struct PreparedSet {
  std::vector<float> inputs;  // (n, C, 50, 50)
  std::vector<double> labels;
  int channels = 0;

  std::size_t size() const { return labels.size(); }
};

PreparedSet prepare_set(const Dataset& ds, const std::vector<PatchRef>& refs,
                        const std::vector<int>& channels, const ChannelStats* stats) {
  PreparedSet set;
  set.channels = static_cast<int>(channels.size());
  set.inputs.reserve(refs.size() * channels.size() * kPatchPixels);
  for (const auto& ref : refs) {
    const Patch& p = ds.patches[ds.index_of(ref)];
    const auto sel = select_channels(p.input, channels, kPatchPixels);
    set.inputs.insert(set.inputs.end(), sel.begin(), sel.end());
    set.labels.push_back(static_cast<double>(p.label));
  }
  if (stats) normalize_channels(set.inputs, *stats, kPatchPixels);
  return set;
}

Tensor<float> gather(const PreparedSet& set, std::span<const std::size_t> idx) {
  const std::size_t per = static_cast<std::size_t>(set.channels) * kPatchPixels;
  Tensor<float> x({static_cast<int>(idx.size()), set.channels, kPatchSize, kPatchSize});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(set.inputs.data() + idx[i] * per, per, x.data() + i * per);
  }
  return x;
}

double eval_loss(MiniResNet<float>& net, const PreparedSet& set, const QuantileSpec& spec,
                 int batch_size) {
  if (set.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, set.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    const auto y = net.forward(gather(set, idx), Mode::kEval);
    std::vector<double> pred(y.values.begin(), y.values.end());
    const auto loss = batch_loss(std::span(set.labels).subspan(start, n), pred, spec);
    total += loss.value * static_cast<double>(n);
  }
  return total / static_cast<double>(set.size());
}

}  // namespace

TrainResult train_model(const Dataset& dataset, const TrainConfig& train_cfg,
                        const ModelConfig& model_cfg) {
  train_cfg.validate();
  const ModelConfig mcfg = apply_ablation(model_cfg, train_cfg.ablation);
  mcfg.validate();
  const std::vector<int> channels = input_channels_for(train_cfg.ablation);
  if (static_cast<int>(channels.size()) != mcfg.in_channels) {
    throw ConfigError(fmt::format("model expects {} input channels but {} are selected",
                                  mcfg.in_channels, channels.size()));
  }

  TrainResult result;
  result.splits = build_splits(dataset.manifest, train_cfg.setting, train_cfg.seed,
                               train_cfg.split_unit, train_cfg.test_fraction);

  // Validation patches come out of the training side only.
  std::vector<PatchRef> train_refs = result.splits.train;
  auto val_rng = run_stream(train_cfg.seed, kValStream);
  std::shuffle(train_refs.begin(), train_refs.end(), val_rng);
  std::size_t n_val = static_cast<std::size_t>(
      std::lround(train_cfg.val_fraction * static_cast<double>(train_refs.size())));
  if (train_refs.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, train_refs.size() - 1);
  result.val_refs.assign(train_refs.begin(), train_refs.begin() + n_val);
  result.fit_refs.assign(train_refs.begin() + n_val, train_refs.end());
  std::sort(result.val_refs.begin(), result.val_refs.end());
  std::sort(result.fit_refs.begin(), result.fit_refs.end());

  auto tag_of = [&](const PatchRef& r) -> const std::string& {
    return dataset.manifest.tiles[r.tile].region_tag;
  };
  const auto& setting = train_cfg.setting;
  auto forbidden = [&](const PatchRef& r) {
    switch (setting.variant) {
      case ExperimentSetting::Variant::kExclusive:
        return tag_of(r) == setting.tag;
      case ExperimentSetting::Variant::kIntraCountry:
        return tag_of(r) != setting.tag;
      case ExperimentSetting::Variant::kHolistic:
        return false;
    }
    return false;
  };
  for (const auto& r : result.fit_refs) {
    ++result.audit.train_by_region[tag_of(r)];
    if (forbidden(r)) ++result.audit.leaked;
  }
  for (const auto& r : result.val_refs) {
    ++result.audit.val_by_region[tag_of(r)];
    if (forbidden(r)) ++result.audit.leaked;
  }
  for (const auto& r : result.splits.test) ++result.audit.test_by_region[tag_of(r)];
  if (result.audit.leaked != 0) {
    throw Error(fmt::format("split audit: {} patches leaked into training", result.audit.leaked));
  }

  PreparedSet fit = prepare_set(dataset, result.fit_refs, channels, nullptr);
  Warnings warnings;
  const ChannelStats stats = compute_channel_stats(fit.inputs, fit.channels, kPatchPixels, &warnings);
  normalize_channels(fit.inputs, stats, kPatchPixels);
  const PreparedSet val = prepare_set(dataset, result.val_refs, channels, &stats);

  MiniResNet<float> net(mcfg);
  net.set_threads(train_cfg.threads);
  {
    auto init_rng = run_stream(train_cfg.seed, kInitStream);
    net.init_params(init_rng());
  }
  // Start each output node at the best constant for its own loss, with a
  // zero output layer so no node begins (and dies) past the output ReLU
  // kink. Nodes whose best constant is 0 start one pixel above it.
  {
    net.fc2().weight().value.fill(0.0f);
    auto& bias = net.fc2().bias().value.values;
    for (int n = 0; n < mcfg.quantiles.size(); ++n) {
      const double c = best_constant(mcfg.quantiles[n], fit.labels);
      bias[n] = static_cast<float>(std::max(c, 1.0) / mcfg.output_scale);
    }
  }

  Optimizer opt(train_cfg, net.params());
  auto shuffle_rng = run_stream(train_cfg.seed, kShuffleStream);
  auto dropout_rng = run_stream(train_cfg.seed, kDropoutStream);
  std::vector<std::size_t> order(fit.size());
  std::iota(order.begin(), order.end(), 0);
  const auto t0 = std::chrono::steady_clock::now();

  logger().info("training on {} patches ({} val, {} test), setting {}, ablation {}", fit.size(),
                val.size(), result.splits.test.size(), setting.to_string(),
                train_cfg.ablation.to_string());
  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size, ++batch_index) {
      const std::size_t n = std::min<std::size_t>(train_cfg.batch_size, order.size() - start);
      const auto idx = std::span(order).subspan(start, n);
      std::vector<double> labels(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = fit.labels[idx[i]];
      const auto y = net.forward(gather(fit, idx), Mode::kTrain, &dropout_rng);
      const std::vector<double> pred(y.values.begin(), y.values.end());
      const auto loss = batch_loss(labels, pred, mcfg.quantiles);
      if (!std::isfinite(loss.value)) {
        throw NumericalError(fmt::format("non-finite loss at epoch {} batch {}", epoch, batch_index));
      }
      net.zero_grad();
      net.backward(Tensor<float>(y.shape, std::vector<float>(loss.gradient.begin(), loss.gradient.end())));
      opt.step();
      epoch_loss += loss.value * static_cast<double>(n);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = epoch_loss / static_cast<double>(fit.size());
    m.val_loss = eval_loss(net, val, mcfg.quantiles, train_cfg.batch_size);
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(m.train_loss)) {
      throw NumericalError(fmt::format("non-finite training loss at epoch {}", epoch));
    }
    logger().info("epoch {:4d}  train {:.4f}  val {:.4f}  ({:.1f}s)", epoch, m.train_loss,
                  m.val_loss, m.wall_seconds);
    result.trace.push_back(m);
  }

  result.state.config = mcfg;
  result.state.params = net.export_params();
  result.state.norm = stats;
  result.state.input_channels = channels;
  result.state.rng_seed = train_cfg.seed;
  return result;
}

std::string trace_csv(const std::vector<EpochMetrics>& trace) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& m : trace) out += fmt::format("{},{:.17g},{:.17g}\n", m.epoch, m.train_loss, m.val_loss);
  return out;
}

std::string timing_csv(const std::vector<EpochMetrics>& trace) {
  std::string out = "epoch,wall_seconds\n";
  for (const auto& m : trace) out += fmt::format("{},{:.3f}\n", m.epoch, m.wall_seconds);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'V', 'C', 'K'};

}  // namespace

void save_checkpoint(const ModelState& state, const fs::path& path) {
  json table = json::array();
  std::vector<float> blob;
  for (const auto& p : state.params) {
    table.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", blob.size()},
                     {"count", p.values.size()}});
    blob.insert(blob.end(), p.values.begin(), p.values.end());
  }
  const json header = {{"format_version", kCheckpointVersion},
                       {"config", model_config_to_json(state.config)},
                       {"input_channels", state.input_channels},
                       {"norm", {{"mean", state.norm.mean}, {"std", state.norm.std}}},
                       {"rng_seed", state.rng_seed},
                       {"params", table},
                       {"blob_floats", blob.size()}};
  const std::string text = header.dump();
  std::vector<char> bytes(kCheckpointMagic, kCheckpointMagic + 4);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((len >> (8 * b)) & 0xFFu));
  bytes.insert(bytes.end(), text.begin(), text.end());
  const auto payload = encode_f32_le(blob);
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  write_file_bytes(path, bytes);
}

ModelState load_checkpoint(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 8 || !std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin())) {
    throw FormatError(fmt::format("{}: not a checkpoint (bad magic)", path.string()));
  }
  std::uint32_t len = 0;
  for (int b = 0; b < 4; ++b) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 + b])) << (8 * b);
  if (bytes.size() < 8 + static_cast<std::size_t>(len)) {
    throw FormatError(fmt::format("{}: header claims {} bytes but file has {}", path.string(), len,
                                  bytes.size() - 8));
  }
  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("{}: corrupt checkpoint header: {}", path.string(), e.what()));
  }
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw FormatError(fmt::format("{}: checkpoint format version {}, expected {}", path.string(),
                                    version, kCheckpointVersion));
    }
    const std::size_t n_floats = header.at("blob_floats").get<std::size_t>();
    const std::size_t expected_bytes = n_floats * 4;
    const std::size_t actual_bytes = bytes.size() - 8 - len;
    if (actual_bytes != expected_bytes) {
      throw FormatError(fmt::format("{}: parameter blob has {} bytes, expected {}", path.string(),
                                    actual_bytes, expected_bytes));
    }
    const auto blob = decode_f32_le(std::span(bytes).subspan(8 + len));

    ModelState state;
    state.config = model_config_from_json(header.at("config"));
    state.input_channels = header.at("input_channels").get<std::vector<int>>();
    state.norm.mean = header.at("norm").at("mean").get<std::vector<double>>();
    state.norm.std = header.at("norm").at("std").get<std::vector<double>>();
    state.rng_seed = header.at("rng_seed").get<std::uint64_t>();
    for (const auto& entry : header.at("params")) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<int>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (offset + count > blob.size() || count != Tensor<float>::element_count(t.shape)) {
        throw FormatError(fmt::format("{}: parameter {} (offset {}, count {}) does not fit the blob",
                                      path.string(), t.name, offset, count));
      }
      t.values.assign(blob.begin() + offset, blob.begin() + offset + count);
      state.params.push_back(std::move(t));
    }
    // Validates names and shapes against the config.
    MiniResNet<float> probe(state.config);
    probe.load_params(state.params);
    return state;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: malformed checkpoint header: {}", path.string(), e.what()));
  }
}

}  // namespace coverest
