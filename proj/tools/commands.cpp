// Copyright 2026 The wwcnn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "cli.hpp"
#include "json.hpp"
#include "manifest.hpp"
#include "wwcnn/analysis.hpp"
#include "wwcnn/checkpoint.hpp"
#include "wwcnn/error.hpp"
#include "wwcnn/netspec.hpp"
#include "wwcnn/rng.hpp"
#include "wwcnn/synthdata.hpp"
#include "wwcnn/trainer.hpp"

#ifndef WWCNN_VERSION
#define WWCNN_VERSION "unknown"
#endif

namespace wwcnn::cli {
namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

class VersionMismatch : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class ReplayMismatch : public Error {
 public:
  using Error::Error;
};

const std::vector<std::string> kDefaultLayers{"pool1", "pool2", "conv3", "conv4", "fc7"};

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class Csv {
 public:
  explicit Csv(const std::vector<std::string>& header) { row(header); }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) text_ << (i ? "," : "") << cells[i];
    text_ << '\n';
  }
  void save(const fs::path& path) const {
    std::ofstream f(path, std::ios::binary);
    f << text_.str();
    if (!f) throw IoError("failed writing " + path.string());
  }

 private:
  std::ostringstream text_;
};

// ---------------------------------------------------------------- configs

ojson to_json(const GenConfig& c) {
  return {{"categories", c.categories}, {"n_rot", c.n_rot},         {"n_az", c.n_az},
          {"instances", c.instances},   {"backgrounds", c.backgrounds}, {"height", c.height},
          {"width", c.width},           {"channels", c.channels},   {"shape_set", c.shape_set},
          {"seed", c.seed}};
}

ojson to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},     {"batch_size", c.batch_size}, {"lr", c.lr},
          {"lr_decay", c.lr_decay}, {"lr_step", c.lr_step},       {"momentum", c.momentum},
          {"weight_decay", c.weight_decay}, {"dropout", c.dropout}, {"lambda", c.lambda},
          {"seed", c.seed}};
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ParseError(0, "config " + path + " is not a JSON object");
  return j;
}

template <typename V>
void take(const nlohmann::json& j, const char* key, V& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& what) {
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown " + what + " field '" + k + "'");
}

struct GenFlags {
  std::string config;
  std::optional<std::size_t> categories, n_rot, n_az, instances, backgrounds, height, width, channels,
      shape_set;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--config", config, "generator config JSON (fields as below)");
    app->add_option("--categories", categories);
    app->add_option("--n_rot", n_rot);
    app->add_option("--n_az", n_az);
    app->add_option("--instances", instances);
    app->add_option("--backgrounds", backgrounds);
    app->add_option("--height", height);
    app->add_option("--width", width);
    app->add_option("--channels", channels);
    app->add_option("--shape_set", shape_set);
    app->add_option("--seed", seed);
  }

  GenConfig resolve() const {
    GenConfig c;
    if (!config.empty()) {
      const auto j = read_json_file(config);
      reject_unknown(j, {"categories", "n_rot", "n_az", "instances", "backgrounds", "height", "width",
                         "channels", "shape_set", "seed"},
                     "generator");
      take(j, "categories", c.categories);
      take(j, "n_rot", c.n_rot);
      take(j, "n_az", c.n_az);
      take(j, "instances", c.instances);
      take(j, "backgrounds", c.backgrounds);
      take(j, "height", c.height);
      take(j, "width", c.width);
      take(j, "channels", c.channels);
      take(j, "shape_set", c.shape_set);
      take(j, "seed", c.seed);
    }
    auto set = [](auto& dst, const auto& src) { if (src) dst = *src; };
    set(c.categories, categories);
    set(c.n_rot, n_rot);
    set(c.n_az, n_az);
    set(c.instances, instances);
    set(c.backgrounds, backgrounds);
    set(c.height, height);
    set(c.width, width);
    set(c.channels, channels);
    set(c.shape_set, shape_set);
    set(c.seed, seed);
    c.validate();
    return c;
  }
};

struct TrainFlags {
  std::string config;
  std::optional<std::size_t> epochs, batch_size, lr_step;
  std::optional<double> lr, lr_decay, momentum, weight_decay, dropout, lambda;

  void add(CLI::App* app) {
    app->add_option("--train_config", config, "training config JSON (fields as below)");
    app->add_option("--epochs", epochs);
    app->add_option("--batch_size", batch_size);
    app->add_option("--lr", lr);
    app->add_option("--lr_decay", lr_decay);
    app->add_option("--lr_step", lr_step, "epochs between decays; 0 = a third of --epochs");
    app->add_option("--momentum", momentum);
    app->add_option("--weight_decay", weight_decay);
    app->add_option("--dropout", dropout, "rate for every dropout layer; negative keeps the network description's");
    app->add_option("--lambda", lambda);
  }

  TrainConfig resolve(ArchKind kind, std::uint64_t seed) const {
    TrainConfig c = TrainConfig::defaults_for(kind);
    if (!config.empty()) {
      const auto j = read_json_file(config);
      reject_unknown(j, {"epochs", "batch_size", "lr", "lr_decay", "lr_step", "momentum", "weight_decay",
                         "dropout", "lambda", "seed"},
                     "training");
      take(j, "epochs", c.epochs);
      take(j, "batch_size", c.batch_size);
      take(j, "lr", c.lr);
      take(j, "lr_decay", c.lr_decay);
      take(j, "lr_step", c.lr_step);
      take(j, "momentum", c.momentum);
      take(j, "weight_decay", c.weight_decay);
      take(j, "dropout", c.dropout);
      take(j, "lambda", c.lambda);
    }
    auto set = [](auto& dst, const auto& src) { if (src) dst = *src; };
    set(c.epochs, epochs);
    set(c.batch_size, batch_size);
    set(c.lr, lr);
    set(c.lr_decay, lr_decay);
    set(c.lr_step, lr_step);
    set(c.momentum, momentum);
    set(c.weight_decay, weight_decay);
    set(c.dropout, dropout);
    set(c.lambda, lambda);
    c.seed = seed;
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------- run context

struct Run {
  RunManifest manifest;
  fs::path out_dir;
  std::set<fs::path> input_paths;
  std::ostream& out;
  std::ostream& err;

  Run(std::ostream& o, std::ostream& e) : out(o), err(e) {}

  fs::path input(const std::string& key, const std::string& path) {
    if (!fs::exists(path)) throw IoError("missing file: " + path);
    const auto abs = fs::weakly_canonical(path);
    input_paths.insert(abs);
    manifest.inputs[key] = abs.string();
    return abs;
  }

  void set_output(const std::string& dir) {
    out_dir = resolve_output(dir);
    fs::create_directories(out_dir);
  }

  fs::path output(const std::string& name) {
    const auto p = out_dir / name;
    if (input_paths.count(fs::weakly_canonical(p)))
      throw ConfigError("output " + p.string() + " would overwrite an input file");
    if (std::find(manifest.outputs.begin(), manifest.outputs.end(), name) == manifest.outputs.end())
      manifest.outputs.push_back(name);
    return p;
  }

  void warn(const std::string& message) const {
    err << ojson{{"warning", message}}.dump() << '\n';
  }
};

template <typename T>
T scalar_of(const Checkpoint<T>&);

template <typename F>
void with_checkpoint(const fs::path& path, F&& f) {
  if (checkpoint_precision(path) == Precision::F64) {
    f(load_checkpoint<double>(path));
  } else {
    f(load_checkpoint<float>(path));
  }
}

template <typename T>
void check_spec(const Checkpoint<T>& ck, const std::string& spec_path) {
  if (spec_path.empty()) return;
  const auto spec = load_spec(spec_path);
  if (spec.hash() != ck.spec_hash())
    throw VersionMismatch("checkpoint was built from spec " + hex64(ck.spec_hash()) + " but " + spec_path +
                          " hashes to " + hex64(spec.hash()));
}

Precision parse_precision(const std::string& s) { return s == "f64" ? Precision::F64 : Precision::F32; }

// ---------------------------------------------------------------- commands

void cmd_gen_data(Run& run, const GenFlags& flags, double fraction, bool no_split) {
  const GenConfig cfg = flags.resolve();
  if (!flags.config.empty()) run.input("config", flags.config);
  const Dataset data = generate(cfg);
  Csv summary({"split", "records", "categories", "poses", "instances_per_category"});
  auto add = [&](const std::string& name, const Dataset& d) {
    write_dataset(run.output(name + ".wwds"), d);
    std::set<std::uint32_t> first_category;
    for (const auto& r : d.records)
      if (r.category == 0) first_category.insert(r.instance);
    summary.row({name, std::to_string(d.size()), std::to_string(d.meta.categories),
                 std::to_string(d.meta.poses), std::to_string(first_category.size())});
  };
  if (no_split) {
    add("data", data);
  } else {
    auto [train_set, test_set] = split_by_instance(data, fraction, cfg.seed);
    add("train", train_set);
    add("test", test_set);
  }
  summary.save(run.output("summary.csv"));
  run.manifest.config = {{"generator", to_json(cfg)},
                         {"train_fraction", no_split ? ojson(nullptr) : ojson(fraction)}};
  run.manifest.seeds = {{"seed", cfg.seed}, {"split", no_split ? ojson(nullptr) : ojson(cfg.seed)}};
  run.out << "generated " << data.size() << " records into " << run.out_dir.string() << '\n';
}

struct TrainArgs {
  std::string spec, arch = "base", train, test, resume, precision = "f32";
  std::uint64_t seed = 1;
  TrainFlags flags;
};

template <typename T>
void train_impl(Run& run, const TrainArgs& a, const NetworkSpec& spec, ArchKind kind, const TrainConfig& cfg,
                const Dataset& train_set, const Dataset* test_set) {
  const Graph graph = build_graph(spec, kind);
  TrainState<T> state;
  if (!a.resume.empty()) {
    if (checkpoint_precision(a.resume) != precision_of<T>())
      throw ConfigError("--resume checkpoint precision differs from --precision");
    auto ck = load_checkpoint<T>(a.resume);
    if (ck.spec_hash() != spec.hash())
      throw VersionMismatch("resume checkpoint spec " + hex64(ck.spec_hash()) + " differs from " + a.spec + " (" +
                            hex64(spec.hash()) + ")");
    if (ck.kind != kind)
      throw ConfigError("resume checkpoint is " + std::string(arch_name(ck.kind)) + ", not " + a.arch);
    state = std::move(ck.state);
  } else {
    state = TrainState<T>::start(build<T>(spec, kind, a.seed).params, a.seed);
  }
  Csv csv({"epoch", "train_loss", "train_cat_loss", "train_pose_loss", "test_acc", "lr"});
  train<T>(graph, state, train_set, test_set, cfg, [&](const EpochLog& l, const TrainState<T>&) {
    csv.row({std::to_string(l.epoch), num(l.train_loss), num(l.train_cat_loss), num(l.train_pose_loss),
             num(l.test_acc), num(l.lr)});
    run.out << "epoch " << l.epoch << " loss " << num(l.train_loss) << " test_acc " << num(l.test_acc) << '\n'
            << std::flush;
  });
  csv.save(run.output("epochs.csv"));
  Checkpoint<T> ck{kind, spec.canonical(), std::move(state)};
  save_checkpoint(run.output("checkpoint.wwck"), ck);
}

void cmd_train(Run& run, const TrainArgs& a) {
  const auto spec = load_spec(run.input("spec", a.spec));
  const auto kind = parse_arch(a.arch);
  const auto train_set = read_dataset(run.input("train", a.train));
  std::optional<Dataset> test_set;
  if (!a.test.empty()) test_set = read_dataset(run.input("test", a.test));
  if (!a.resume.empty()) run.input("resume", a.resume);
  const TrainConfig cfg = a.flags.resolve(kind, a.seed);
  if (!a.flags.config.empty()) run.input("train_config", a.flags.config);
  const Dataset* test_ptr = test_set ? &*test_set : nullptr;
  if (parse_precision(a.precision) == Precision::F64)
    train_impl<double>(run, a, spec, kind, cfg, train_set, test_ptr);
  else
    train_impl<float>(run, a, spec, kind, cfg, train_set, test_ptr);
  run.manifest.config = {{"arch", std::string(arch_name(kind))},
                         {"precision", a.precision},
                         {"spec_hash", hex64(spec.hash())},
                         {"train", to_json(cfg)}};
  run.manifest.seeds = {{"seed", a.seed}, {"init", a.seed}, {"sample_order", cfg.seed}, {"dropout_stream", a.seed}};
}

struct CkArgs {
  std::string checkpoint, data, spec;
};

void cmd_eval(Run& run, const CkArgs& a) {
  const auto data = read_dataset(run.input("data", a.data));
  with_checkpoint(run.input("checkpoint", a.checkpoint), [&](auto ck) {
    using T = decltype(scalar_of(ck));
    check_spec(ck, a.spec);
    const Graph graph = build_graph(ck.spec(), ck.kind);
    const EvalReport r = evaluate<T>(graph, ck.state.params, data);
    Csv summary({"metric", "value"});
    summary.row({"samples", std::to_string(r.samples)});
    summary.row({"accuracy", num(r.accuracy)});
    summary.row({"map", num(r.map)});
    if (r.has_pose) summary.row({"pose_accuracy", num(r.pose_accuracy)});
    summary.save(run.output("eval.csv"));

    Csv ap({"class", "ap"});
    for (std::size_t k = 0; k < r.class_ap.size(); ++k) ap.row({std::to_string(k), num(r.class_ap[k])});
    ap.save(run.output("class_ap.csv"));

    std::vector<std::string> header{"true"};
    for (std::size_t k = 0; k < r.confusion.size(); ++k) header.push_back("pred_" + std::to_string(k));
    Csv confusion(header);
    for (std::size_t k = 0; k < r.confusion.size(); ++k) {
      std::vector<std::string> row{std::to_string(k)};
      for (auto c : r.confusion[k]) row.push_back(std::to_string(c));
      confusion.row(row);
    }
    confusion.save(run.output("confusion.csv"));

    if (r.has_pose) {
      Csv pose({"pose", "rotation", "azimuth", "accuracy"});
      const std::size_t n_az = std::max<std::size_t>(data.meta.n_az, 1);
      for (std::size_t p = 0; p < r.per_pose_accuracy.size(); ++p)
        pose.row({std::to_string(p), std::to_string(p / n_az), std::to_string(p % n_az),
                  num(r.per_pose_accuracy[p])});
      pose.save(run.output("pose_accuracy.csv"));
    }
    run.manifest.config = {{"arch", std::string(arch_name(ck.kind))}, {"spec_hash", hex64(ck.spec_hash())}};
    run.out << "accuracy " << num(r.accuracy) << " map " << num(r.map) << '\n';
  });
}

void cmd_prune(Run& run, const CkArgs& a) {
  with_checkpoint(run.input("checkpoint", a.checkpoint), [&](auto ck) {
    using T = decltype(scalar_of(ck));
    check_spec(ck, a.spec);
    Network<T> net{ck.kind, build_graph(ck.spec(), ck.kind), ck.state.params};
    auto result = prune(net);
    if (result.was_noop) run.warn("checkpoint is already a base network; nothing pruned");
    Csv csv({"parameter", "action"});
    for (const auto& p : ck.state.params)
      csv.row({p.name, result.network.params.contains(p.name) ? "kept" : "removed"});
    csv.save(run.output("prune.csv"));
    auto state = TrainState<T>::start(std::move(result.network.params), 0);
    state.epoch = ck.state.epoch;
    Checkpoint<T> out{ArchKind::Base, ck.spec_text, std::move(state)};
    save_checkpoint(run.output("checkpoint.wwck"), out);
    run.manifest.config = {{"from_arch", std::string(arch_name(ck.kind))}, {"noop", result.was_noop}};
  });
}

struct TransplantArgs {
  std::string from, spec, arch = "inject-multi";
  std::uint64_t seed = 1;
};

void cmd_transplant(Run& run, const TransplantArgs& a) {
  const auto spec = load_spec(run.input("spec", a.spec));
  const auto kind = parse_arch(a.arch);
  with_checkpoint(run.input("from", a.from), [&](auto src) {
    using T = decltype(scalar_of(src));
    auto dst = build<T>(spec, kind, a.seed);
    const auto report = transplant(src.state.params, dst.params, derive_seed(a.seed, "fresh"));
    Csv csv({"parameter", "status"});
    for (const auto& n : report.copied) csv.row({n, "copied"});
    for (const auto& n : report.fresh) csv.row({n, "fresh"});
    csv.save(run.output("transplant.csv"));
    Checkpoint<T> out{kind, spec.canonical(), TrainState<T>::start(std::move(dst.params), a.seed)};
    save_checkpoint(run.output("checkpoint.wwck"), out);
    run.manifest.config = {{"from_arch", std::string(arch_name(src.kind))},
                           {"arch", std::string(arch_name(kind))},
                           {"copied", report.copied.size()},
                           {"fresh", report.fresh.size()}};
    run.out << "copied " << report.copied.size() << " fresh " << report.fresh.size() << '\n';
  });
  run.manifest.seeds = {{"seed", a.seed}, {"fresh_init", derive_seed(a.seed, "fresh")}};
}

struct ProbeArgs {
  CkArgs ck;
  std::size_t batches = 8, batch_size = 64;
  double category_weight = 1.0;
  std::optional<double> pose_weight;
  std::uint64_t seed = 1;
};

void cmd_probe(Run& run, const ProbeArgs& a) {
  const auto data = read_dataset(run.input("data", a.ck.data));
  with_checkpoint(run.input("checkpoint", a.ck.checkpoint), [&](auto ck) {
    using T = decltype(scalar_of(ck));
    check_spec(ck, a.ck.spec);
    const auto spec = ck.spec();
    const Graph graph = build_graph(spec, ck.kind);
    SinkWeights weights{{std::string(kCategorySink), a.category_weight}};
    const double pose_weight = a.pose_weight.value_or(spec.lambda);
    if (graph.has_sink(kPoseSink)) weights[std::string(kPoseSink)] = pose_weight;
    const auto batches = probe_batches<T>(data, a.batches, a.batch_size, a.seed);
    const auto r = gradient_probe(graph, ck.state.params, batches, weights);
    Csv csv({"quantity", "partition", "norm", "count", "rms"});
    auto row = [&](const char* q, const char* p, double norm, std::size_t count) {
      csv.row({q, p, num(norm), std::to_string(count), num(GradProbeReport::rms(norm, count))});
    };
    row("category_loss", "shared", r.category_shared, r.shared_count);
    row("category_loss", "category_head", r.category_head, r.category_count);
    row("total_loss", "shared", r.total_shared, r.shared_count);
    row("total_loss", "category_head", r.total_category, r.category_count);
    row("total_loss", "pose", r.total_pose, r.pose_count);
    row("pose_induced", "shared", r.pose_induced_shared, r.shared_count);
    csv.save(run.output("probe.csv"));
    run.manifest.config = {{"arch", std::string(arch_name(ck.kind))},
                           {"batches", a.batches},
                           {"batch_size", a.batch_size},
                           {"category_weight", a.category_weight},
                           {"pose_weight", graph.has_sink(kPoseSink) ? ojson(pose_weight) : ojson(nullptr)}};
  });
  run.manifest.seeds = {{"seed", a.seed}, {"probe_order", derive_seed(a.seed, "probe")}};
}

struct WarmstartArgs {
  std::string spec, train, test, precision = "f32";
  std::size_t pretrain_epochs = 30, continue_epochs = 10;
  std::uint64_t seed = 1;
};

void cmd_warmstart(Run& run, const WarmstartArgs& a) {
  const auto spec = load_spec(run.input("spec", a.spec));
  const auto train_set = read_dataset(run.input("train", a.train));
  const auto test_set = read_dataset(run.input("test", a.test));
  WarmstartConfig cfg;
  cfg.seed = a.seed;
  auto make = [&](ArchKind k, std::size_t epochs) {
    auto c = TrainConfig::defaults_for(k);
    c.epochs = epochs;
    c.seed = a.seed;
    c.validate();
    return c;
  };
  cfg.base_pretrain = make(ArchKind::Base, a.pretrain_epochs);
  cfg.multi_pretrain = make(ArchKind::InjectMulti, a.pretrain_epochs);
  cfg.base_continue = make(ArchKind::Base, a.continue_epochs);
  cfg.multi_continue = make(ArchKind::InjectMulti, a.continue_epochs);
  const WarmstartResult r = parse_precision(a.precision) == Precision::F64
                                ? warmstart_experiment<double>(spec, train_set, test_set, cfg)
                                : warmstart_experiment<float>(spec, train_set, test_set, cfg);
  auto curve = [&](const std::string& name, const WarmstartCurve& c) {
    Csv csv({"epoch", "test_error"});
    for (std::size_t e = 0; e < c.test_error.size(); ++e) csv.row({std::to_string(e), num(c.test_error[e])});
    csv.save(run.output(name));
  };
  curve("warmstart_base_to_multi.csv", r.base_to_multi);
  curve("warmstart_multi_to_base.csv", r.multi_to_base);
  Csv summary({"direction", "initial_error", "final_error"});
  summary.row({"base_to_multi", num(r.base_to_multi.initial_error), num(r.base_to_multi.test_error.back())});
  summary.row({"multi_to_base", num(r.multi_to_base.initial_error), num(r.multi_to_base.test_error.back())});
  summary.save(run.output("warmstart_summary.csv"));
  run.manifest.config = {{"precision", a.precision},
                         {"base_pretrain", to_json(cfg.base_pretrain)},
                         {"multi_pretrain", to_json(cfg.multi_pretrain)},
                         {"base_continue", to_json(cfg.base_continue)},
                         {"multi_continue", to_json(cfg.multi_continue)}};
  run.manifest.seeds = {{"seed", a.seed}, {"fresh_init", derive_seed(a.seed, "fresh")}};
}

struct AnalyzeArgs {
  CkArgs ck;
  std::string which;
  std::vector<std::string> layers = kDefaultLayers;
  std::string embed_layer = "fc7";
  std::size_t k = 100;
};

// Units tiled 16 per row with a one-pixel black gap.
void write_rf_grid(const fs::path& path, const std::vector<RfUnit>& units, const DatasetMeta& m) {
  const std::size_t cols = std::min<std::size_t>(16, units.size());
  const std::size_t rows = (units.size() + cols - 1) / cols;
  const std::size_t H = m.height, W = m.width, C = m.channels;
  const std::size_t gh = rows * (H + 1) - 1, gw = cols * (W + 1) - 1;
  std::vector<float> grid(gh * gw * C, 0.0f);
  for (std::size_t u = 0; u < units.size(); ++u) {
    const std::size_t oy = (u / cols) * (H + 1), ox = (u % cols) * (W + 1);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < C; ++c)
          grid[((oy + y) * gw + ox + x) * C + c] = static_cast<float>(units[u].image[(y * W + x) * C + c]);
  }
  write_pnm(path, grid, gh, gw, C);
}

void cmd_analyze(Run& run, const AnalyzeArgs& a) {
  const auto data = read_dataset(run.input("data", a.ck.data));
  with_checkpoint(run.input("checkpoint", a.ck.checkpoint), [&](auto ck) {
    using T = decltype(scalar_of(ck));
    check_spec(ck, a.ck.spec);
    const Graph graph = build_graph(ck.spec(), ck.kind);
    const auto& params = ck.state.params;
    if (a.which == "decouple") {
      Csv summary({"layer", "gamma", "units", "dead"});
      for (const auto& layer : a.layers) {
        const auto table = unit_entropy<T>(graph, params, layer, data);
        double gamma = std::numeric_limits<double>::quiet_NaN();
        try {
          gamma = decoupleness(table);
        } catch (const NumericError& e) {
          run.warn("layer " + layer + ": " + e.what());
        }
        summary.row({layer, num(gamma), std::to_string(table.units.size()), std::to_string(table.dead_count())});
        Csv units({"unit", "e_obj", "e_pos", "mass", "dead"});
        for (std::size_t i = 0; i < table.units.size(); ++i) {
          const auto& u = table.units[i];
          units.row({std::to_string(i), num(u.e_obj), num(u.e_pos), num(u.mass), u.dead ? "1" : "0"});
        }
        units.save(run.output("entropy_" + layer + ".csv"));
      }
      summary.save(run.output("decouple.csv"));
    } else if (a.which == "rf") {
      for (const auto& layer : a.layers) {
        const auto units = rf_average<T>(graph, params, layer, data, a.k);
        Csv csv({"unit", "dead", "top"});
        for (std::size_t i = 0; i < units.size(); ++i) {
          std::string top;
          for (std::size_t j = 0; j < units[i].top.size(); ++j) top += (j ? " " : "") + std::to_string(units[i].top[j]);
          csv.row({std::to_string(i), units[i].dead ? "1" : "0", top});
        }
        csv.save(run.output("rf_" + layer + ".csv"));
        write_rf_grid(run.output("rf_" + layer + (data.meta.channels == 1 ? ".pgm" : ".ppm")), units, data.meta);
      }
    } else {
      std::size_t dims = 0;
      const auto features = layer_responses<T>(graph, params, a.embed_layer, data, Reduce::Mean, &dims);
      const auto proj = project_2d(features, dims);
      Csv csv({"index", "category", "pose", "x", "y"});
      for (std::size_t i = 0; i < data.size(); ++i)
        csv.row({std::to_string(i), std::to_string(data.records[i].category), std::to_string(data.records[i].pose),
                 num(proj.coords[2 * i]), num(proj.coords[2 * i + 1])});
      csv.save(run.output("embed.csv"));
      Csv spectrum({"component", "eigenvalue"});
      for (std::size_t i = 0; i < proj.eigenvalues.size(); ++i)
        spectrum.row({std::to_string(i), num(proj.eigenvalues[i])});
      spectrum.save(run.output("embed_spectrum.csv"));
    }
    run.manifest.config = {{"which", a.which},
                           {"arch", std::string(arch_name(ck.kind))},
                           {"layers", a.which == "embed" ? std::vector<std::string>{a.embed_layer} : a.layers},
                           {"k", a.which == "rf" ? ojson(a.k) : ojson(nullptr)}};
  });
}

// ---------------------------------------------------------------- replay

struct ReplayArgs {
  std::string manifest, out;
  std::optional<std::size_t> entry;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class ScopedCwd {
 public:
  explicit ScopedCwd(const std::string& dir) : saved_(fs::current_path()) {
    if (!dir.empty() && fs::is_directory(dir)) fs::current_path(dir);
  }
  ~ScopedCwd() {
    std::error_code ec;
    fs::current_path(saved_, ec);
  }
  ScopedCwd(const ScopedCwd&) = delete;
  ScopedCwd& operator=(const ScopedCwd&) = delete;

 private:
  fs::path saved_;
};

int cmd_replay(const ReplayArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path manifest_path = fs::absolute(a.manifest);
  const auto entries = read_manifest(manifest_path);
  const std::size_t index = a.entry.value_or(entries.size() - 1);
  if (index >= entries.size())
    throw ConfigError("manifest has " + std::to_string(entries.size()) + " entries, no entry " + std::to_string(index));
  const auto& entry = entries[index];
  if (entry.command == "replay") throw ConfigError("cannot replay a replay");
  const fs::path original = fs::is_directory(manifest_path) ? manifest_path : manifest_path.parent_path();
  const fs::path target = a.out.empty() ? fs::path(original.string() + "-replay") : resolve_output(a.out);
  if (fs::weakly_canonical(target) == fs::weakly_canonical(original))
    throw ConfigError("replay output must differ from the original output directory");

  std::vector<std::string> argv;
  for (std::size_t i = 0; i < entry.argv.size(); ++i) {
    const auto& s = entry.argv[i];
    if (s == "--out" && i + 1 < entry.argv.size()) {
      argv.push_back(s);
      argv.push_back(target.string());
      ++i;
    } else if (s.rfind("--out=", 0) == 0) {
      argv.push_back("--out=" + target.string());
    } else {
      argv.push_back(s);
    }
  }
  int code;
  {
    ScopedCwd cwd(entry.cwd);
    code = run(argv, out, err);
  }
  if (code != kOk) return code;

  ojson report{{"replayed", entry.command}, {"entry", index}, {"output", target.string()}};
  std::vector<std::string> compared, differing;
  for (const auto& name : entry.outputs) {
    if (fs::path(name).extension() != ".csv") continue;
    compared.push_back(name);
    if (slurp(original / name) != slurp(target / name)) differing.push_back(name);
  }
  report["compared"] = compared;
  report["identical"] = differing.empty();
  out << report.dump() << '\n';
  if (!differing.empty()) {
    std::string list;
    for (const auto& d : differing) list += (list.empty() ? "" : ", ") + d;
    throw ReplayMismatch("replayed outputs differ: " + list);
  }
  return kOk;
}

// ---------------------------------------------------------------- dispatch

int fail(std::ostream& err, const char* kind, const std::string& message, int code) {
  err << ojson{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
  return code;
}

std::string joined_argv(const std::vector<std::string>& args) {
  std::string s;
  for (const auto& a : args) s += (s.empty() ? "" : " ") + a;
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"wwcnn: what/where CNN experiments on synthetic turntable data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", WWCNN_VERSION);
  std::string out_dir;
  auto add_out = [&](CLI::App* sub) { sub->add_option("--out", out_dir, "output directory")->required(); };

  GenFlags gen;
  double fraction = 0.75;
  bool no_split = false;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset and its instance split");
  gen.add(gen_cmd);
  gen_cmd->add_option("--train_fraction", fraction, "share of instances per category used for training");
  gen_cmd->add_flag("--no_split", no_split, "write a single data.wwds instead of train/test");
  add_out(gen_cmd);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a network and write checkpoint + epoch log");
  train_cmd->add_option("--spec", train_args.spec)->required();
  train_cmd->add_option("--arch", train_args.arch)->check(CLI::IsMember({"base", "inject-top", "inject-multi"}));
  train_cmd->add_option("--train", train_args.train, "training dataset (.wwds)")->required();
  train_cmd->add_option("--test", train_args.test, "test dataset for per-epoch accuracy");
  train_cmd->add_option("--resume", train_args.resume, "continue from a checkpoint");
  train_cmd->add_option("--precision", train_args.precision)->check(CLI::IsMember({"f32", "f64"}));
  train_cmd->add_option("--seed", train_args.seed);
  train_args.flags.add(train_cmd);
  add_out(train_cmd);

  CkArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "accuracy, mAP, confusion and pose accuracy");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval_cmd->add_option("--data", eval_args.data)->required();
  eval_cmd->add_option("--spec", eval_args.spec, "verify the checkpoint was built from this spec");
  add_out(eval_cmd);

  CkArgs prune_args;
  auto* prune_cmd = app.add_subcommand("prune", "drop pose-side nodes and parameters");
  prune_cmd->add_option("--checkpoint", prune_args.checkpoint)->required();
  prune_cmd->add_option("--spec", prune_args.spec);
  add_out(prune_cmd);

  TransplantArgs tp_args;
  auto* tp_cmd = app.add_subcommand("transplant", "copy name-matched parameters into a fresh network");
  tp_cmd->add_option("--from", tp_args.from)->required();
  tp_cmd->add_option("--spec", tp_args.spec)->required();
  tp_cmd->add_option("--arch", tp_args.arch)->check(CLI::IsMember({"base", "inject-top", "inject-multi"}));
  tp_cmd->add_option("--seed", tp_args.seed);
  add_out(tp_cmd);

  ProbeArgs probe_args;
  auto* probe_cmd = app.add_subcommand("probe", "per-partition gradient norms");
  probe_cmd->add_option("--checkpoint", probe_args.ck.checkpoint)->required();
  probe_cmd->add_option("--data", probe_args.ck.data)->required();
  probe_cmd->add_option("--spec", probe_args.ck.spec);
  probe_cmd->add_option("--batches", probe_args.batches);
  probe_cmd->add_option("--batch_size", probe_args.batch_size);
  probe_cmd->add_option("--category_weight", probe_args.category_weight);
  probe_cmd->add_option("--pose_weight", probe_args.pose_weight, "defaults to the network description's lambda");
  probe_cmd->add_option("--seed", probe_args.seed);
  add_out(probe_cmd);

  WarmstartArgs ws_args;
  auto* ws_cmd = app.add_subcommand("warmstart", "cross-architecture warm-start curves");
  ws_cmd->add_option("--spec", ws_args.spec)->required();
  ws_cmd->add_option("--train", ws_args.train)->required();
  ws_cmd->add_option("--test", ws_args.test)->required();
  ws_cmd->add_option("--pretrain_epochs", ws_args.pretrain_epochs);
  ws_cmd->add_option("--continue_epochs", ws_args.continue_epochs);
  ws_cmd->add_option("--precision", ws_args.precision)->check(CLI::IsMember({"f32", "f64"}));
  ws_cmd->add_option("--seed", ws_args.seed);
  add_out(ws_cmd);

  AnalyzeArgs an_args;
  auto* an_cmd = app.add_subcommand("analyze", "decouple-ness, receptive fields, or 2-D embedding");
  an_cmd->add_option("which", an_args.which)->required()->check(CLI::IsMember({"decouple", "rf", "embed"}));
  an_cmd->add_option("--checkpoint", an_args.ck.checkpoint)->required();
  an_cmd->add_option("--data", an_args.ck.data)->required();
  an_cmd->add_option("--spec", an_args.ck.spec);
  an_cmd->add_option("--layers", an_args.layers, "comma-separated layer names")->delimiter(',');
  an_cmd->add_option("--layer", an_args.embed_layer, "feature layer for embed");
  an_cmd->add_option("--k", an_args.k, "images averaged per unit for rf");
  add_out(an_cmd);

  ReplayArgs rp_args;
  auto* rp_cmd = app.add_subcommand("replay", "rerun a manifest entry and compare its CSV outputs");
  rp_cmd->add_option("--manifest", rp_args.manifest, "manifest.jsonl or its directory")->required();
  rp_cmd->add_option("--entry", rp_args.entry, "0-based entry index; default the last");
  rp_cmd->add_option("--out", rp_args.out, "replay directory; default <original>-replay");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      if (dynamic_cast<const CLI::CallForVersion*>(&e)) {
        out << e.what() << '\n';
      } else {
        out << app.help("", dynamic_cast<const CLI::CallForAllHelp*>(&e) ? CLI::AppFormatMode::All
                                                                          : CLI::AppFormatMode::Normal);
      }
      return kOk;
    }
    return fail(err, "usage", e.what(), kUsage);
  }

  const auto t0 = std::chrono::steady_clock::now();
  Run ctx(out, err);
  ctx.manifest.argv = args;
  ctx.manifest.cwd = fs::current_path().string();
  ctx.manifest.version = WWCNN_VERSION;
  ctx.manifest.started = utc_timestamp();
  try {
    if (*rp_cmd) return cmd_replay(rp_args, out, err);
    ctx.set_output(out_dir);
    if (*gen_cmd) {
      ctx.manifest.command = "gen-data";
      cmd_gen_data(ctx, gen, fraction, no_split);
    } else if (*train_cmd) {
      ctx.manifest.command = "train";
      cmd_train(ctx, train_args);
    } else if (*eval_cmd) {
      ctx.manifest.command = "eval";
      cmd_eval(ctx, eval_args);
    } else if (*prune_cmd) {
      ctx.manifest.command = "prune";
      cmd_prune(ctx, prune_args);
    } else if (*tp_cmd) {
      ctx.manifest.command = "transplant";
      cmd_transplant(ctx, tp_args);
    } else if (*probe_cmd) {
      ctx.manifest.command = "probe";
      cmd_probe(ctx, probe_args);
    } else if (*ws_cmd) {
      ctx.manifest.command = "warmstart";
      cmd_warmstart(ctx, ws_args);
    } else if (*an_cmd) {
      ctx.manifest.command = "analyze";
      cmd_analyze(ctx, an_args);
    }
    ctx.manifest.duration_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_manifest(ctx.out_dir, ctx.manifest);
    return kOk;
  } catch (const VersionMismatch& e) {
    return fail(err, "version_mismatch", e.what(), kInput);
  } catch (const ReplayMismatch& e) {
    return fail(err, "replay_mismatch", e.what(), kNumeric);
  } catch (const NumericError& e) {
    return fail(err, "numeric", e.what(), kNumeric);
  } catch (const Error& e) {
    return fail(err, "input", e.what(), kInput);
  } catch (const fs::filesystem_error& e) {
    return fail(err, "input", e.what(), kInput);
  } catch (const std::exception& e) {
    return fail(err, "internal", std::string(e.what()) + " (args: " + joined_argv(args) + ")", kInternal);
  }
}

}  // namespace wwcnn::cli
