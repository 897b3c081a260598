// Copyright 2026 The clickseg Authors
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

#pragma once

// Command-line front end.
//
// Value precedence, lowest first: built-in defaults, CLICKSEG_* environment
// variables, the JSON file given with --config, explicit flags. Config file
// keys are flag names with '-' or '_' as separator.
//
// Exit codes: 0 ok, 1 internal error, 2 usage, 3 data error, 4 numeric failure.
// Failures print one JSON line on stderr.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "clickseg/checkpoint.hpp"
#include "clickseg/data.hpp"
#include "clickseg/dataset.hpp"
#include "clickseg/metrics.hpp"
#include "clickseg/rle.hpp"
#include "clickseg/service.hpp"
#include "clickseg/synthetic.hpp"
#include "clickseg/trainer.hpp"

namespace clickseg::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2, kDataError = 3, kNumericFailure = 4 };

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Reads --config files as one flat JSON object whose keys belong to the
// subcommand selected on the command line.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(input);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<std::string> parents;
    if (const auto subs = root_->get_subcommands(); !subs.empty()) parents.push_back(subs.front()->get_name());
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      std::replace(item.name.begin(), item.name.end(), '_', '-');
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number() || v.is_null()) return v.dump();
    throw CLI::ConversionError("config values must be scalars or arrays of scalars");
  }

  const CLI::App* root_;
};

// Registers flags bound to variables and remembers how to print them.
class Flags {
 public:
  explicit Flags(CLI::App* app) : app_(app) {}

  template <typename T>
  CLI::Option* add(const std::string& name, T& var, const std::string& help) {
    auto* opt = app_->add_option("--" + name, var, help)->capture_default_str()->envname(env_name(name));
    dumpers_.emplace_back(key(name), [&var] { return nlohmann::json(var); });
    return opt;
  }

  CLI::Option* add_flag(const std::string& name, bool& var, const std::string& help) {
    auto* opt = app_->add_flag("--" + name, var, help)->envname(env_name(name));
    dumpers_.emplace_back(key(name), [&var] { return nlohmann::json(var); });
    return opt;
  }

  nlohmann::json effective() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, f] : dumpers_) j[k] = f();
    return j;
  }

  static std::string env_name(const std::string& name) {
    std::string out = "CLICKSEG_";
    for (char c : name) out.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    return out;
  }

 private:
  static std::string key(std::string name) {
    std::replace(name.begin(), name.end(), '-', '_');
    return name;
  }

  CLI::App* app_;
  std::vector<std::pair<std::string, std::function<nlohmann::json()>>> dumpers_;
};

inline void print_banner(std::ostream& err, const std::string& command, const Flags& flags) {
  err << nlohmann::json{{"banner", "clickseg"}, {"command", command}, {"config", flags.effective()}}.dump() << '\n';
}

inline std::string error_line(int code, const std::string& kind, const std::string& message) {
  return nlohmann::json{{"error", {{"kind", kind}, {"message", message}}}, {"exit_code", code}}.dump();
}

// ---------------------------------------------------------------------------
// Shared helpers

inline void check_max_interactions(int k) {
  static constexpr int allowed[] = {1, 2, 5, 10, 15};
  if (std::find(std::begin(allowed), std::end(allowed), k) == std::end(allowed)) {
    throw UsageError("--max-interactions must be one of 1, 2, 5, 10, 15 (got " + std::to_string(k) + ")");
  }
}

inline std::optional<int> fold_arg(int fold) { return fold < 0 ? std::nullopt : std::optional<int>(fold); }

struct LoadedSplit {
  std::vector<BinarySample> samples;
  std::size_t slices = 0;
  std::size_t skipped_empty = 0;
};

inline LoadedSplit load_binary_split(const std::filesystem::path& root, const std::string& split, int fold,
                                     const std::vector<std::string>& structures, std::size_t slice_limit = 0) {
  const auto manifest = read_manifest(root);
  auto refs = manifest.slices_of(manifest.cases_for(split, fold_arg(fold)));
  if (slice_limit > 0 && refs.size() > slice_limit) refs.resize(slice_limit);
  const auto slices = load_slices(root, refs);
  auto exploded = explode_all(slices);
  LoadedSplit out;
  out.slices = slices.size();
  out.skipped_empty = exploded.skipped_empty_slices;
  out.samples = structures.empty() ? std::move(exploded.samples) : filter_structures(std::move(exploded.samples), structures);
  return out;
}

inline OracleMode oracle_mode_arg(const std::string& s) {
  try {
    return parse_oracle_mode(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenDataOptions {
  std::string out;
  int count = 2000;
  int size = 96;
  std::uint64_t seed = 4242;
  std::vector<std::string> classes{"organ", "rim_organ", "lesion"};
  int slices_per_case = 10;
  int first_index = 0;
  int val_cases = 0;
  int test_cases = 0;
  int folds = 0;
  double spacing = 1.0;
  double texture_amplitude = 20.0;
  double noise_amplitude = 12.0;
};

inline int run_gen_data(const GenDataOptions& o, std::ostream& out) {
  SyntheticConfig cfg;
  cfg.size = o.size;
  cfg.count = o.count;
  cfg.seed = o.seed;
  cfg.classes = select_classes(default_classes(), o.classes);
  cfg.slices_per_case = o.slices_per_case;
  cfg.first_index = o.first_index;
  cfg.spacing = Spacing{o.spacing, o.spacing};
  cfg.texture_amplitude = o.texture_amplitude;
  cfg.noise_amplitude = o.noise_amplitude;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto samples = generate_synthetic(cfg);
  const auto manifest = build_manifest(samples, o.val_cases, o.test_cases, o.folds);
  write_dataset(samples, manifest, o.out);
  std::map<std::string, std::size_t> counts;
  for (const auto& s : samples) {
    for (auto l : s.label.present_labels()) ++counts[s.structure_name(l)];
  }
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [name, cases] : manifest.splits) splits[name] = cases.size();
  out << nlohmann::json{{"dataset", o.out}, {"slices", samples.size()}, {"cases", manifest.cases.size()},
                        {"split_cases", splits}, {"structure_counts", counts}}
             .dump()
      << '\n';
  return kOk;
}

struct TrainOptions {
  std::string data;
  std::string checkpoint = "checkpoint.ckpt";
  std::string log = "train_log.jsonl";
  std::uint64_t seed = 4242;
  int max_interactions = 5;
  int batch_size = 16;
  double lr = 1e-4;
  int epochs = 20;
  int base_width = 16;
  int depth = 4;
  std::string mode = "sample";
  double exponent_cap = 60.0;
  int fold = -1;
  std::string split = "train";
  std::string val_split = "val";
  std::vector<std::string> structures;
  int checkpoint_every = 1;
  std::size_t validation_limit = 64;
  bool resume = false;
};

inline int run_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  check_max_interactions(o.max_interactions);
  TrainConfig cfg;
  cfg.arch.base_width = o.base_width;
  cfg.arch.depth = o.depth;
  cfg.max_interactions = o.max_interactions;
  cfg.batch_size = o.batch_size;
  cfg.learning_rate = o.lr;
  cfg.epochs = o.epochs;
  cfg.seed = o.seed;
  cfg.oracle_mode = oracle_mode_arg(o.mode);
  cfg.exponent_cap = o.exponent_cap;
  cfg.checkpoint_every = o.checkpoint_every;
  cfg.validation_limit = o.validation_limit;
  cfg.checkpoint_path = o.checkpoint;
  cfg.log_path = o.log;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  std::optional<ModelState> resume;
  if (o.resume && std::filesystem::exists(o.checkpoint)) {
    resume = load_checkpoint(o.checkpoint, cfg.arch);
    if (resume->rng_seed != cfg.seed) {
      throw UsageError("checkpoint was trained with seed " + std::to_string(resume->rng_seed) + ", not " +
                       std::to_string(cfg.seed));
    }
    err << nlohmann::json{{"event", "resume"}, {"epochs_completed", resume->epochs_completed}}.dump() << '\n';
  } else if (!o.resume) {
    std::filesystem::remove(o.log);
  }

  const auto train_set = load_binary_split(o.data, o.split, o.fold, o.structures);
  LoadedSplit val_set;
  const auto manifest = read_manifest(o.data);
  if (manifest.splits.count(o.val_split)) val_set = load_binary_split(o.data, o.val_split, -1, o.structures);
  err << nlohmann::json{{"event", "data"},
                        {"train_slices", train_set.slices},
                        {"train_samples", train_set.samples.size()},
                        {"train_skipped_empty", train_set.skipped_empty},
                        {"val_samples", val_set.samples.size()}}
             .dump()
      << '\n';

  const auto result = train(cfg, train_set.samples, val_set.samples, std::move(resume),
                            [&](const EpochRecord& r, const ModelState&) {
                              err << to_json(r, cfg.max_interactions).dump() << '\n';
                            });
  if (cfg.epochs == 0 || result.log.empty()) save_checkpoint(result.state, cfg.checkpoint_path);
  nlohmann::json summary = {{"checkpoint", o.checkpoint},
                            {"log", o.log},
                            {"epochs_completed", result.state.epochs_completed},
                            {"step_count", result.state.step_count}};
  if (!result.log.empty()) summary["final"] = to_json(result.log.back(), cfg.max_interactions);
  out << summary.dump() << '\n';
  return kOk;
}

struct EvalOptions {
  std::string data;
  std::string checkpoint;
  std::vector<int> clicks{1, 2, 5};
  std::string split = "test";
  int fold = -1;
  std::uint64_t seed = 4242;
  std::string mode = "sample";
  double exponent_cap = 60.0;
  int workers = 1;
  std::vector<std::string> structures;
  std::size_t limit = 0;
  std::string out;
};

inline nlohmann::json run_eval_report(const EvalOptions& o, const nlohmann::json& banner) {
  for (int b : o.clicks) {
    if (b < 1) throw UsageError("--clicks budgets must be >= 1");
  }
  if (o.clicks.empty()) throw UsageError("--clicks needs at least one budget");
  const auto state = load_checkpoint(o.checkpoint);
  const auto set = load_binary_split(o.data, o.split, o.fold, o.structures, o.limit);
  EvalConfig cfg{o.clicks, OracleConfig{oracle_mode_arg(o.mode), o.seed, o.exponent_cap}, kClickSigma, o.workers};
  const auto result = evaluate(NetworkPredictor{&state.net}, set.samples, cfg);
  auto report = report_json(result);
  report["skipped_empty_slices"] = set.skipped_empty;
  report["config"] = banner;
  return report;
}

inline int run_eval(const EvalOptions& o, const nlohmann::json& banner, std::ostream& out) {
  const auto report = run_eval_report(o, banner);
  if (o.out.empty()) {
    out << report.dump(2) << '\n';
  } else {
    const std::string text = report.dump(2) + "\n";
    detail::write_file(o.out, text.data(), text.size());
    out << nlohmann::json{{"report", o.out}, {"rows", report["rows"].size()}}.dump() << '\n';
  }
  return kOk;
}

struct SimulateOptions {
  std::string data;
  std::string checkpoint;
  std::string slice;
  std::string structure;
  int clicks = 5;
  std::string mode = "sample";
  std::uint64_t seed = 4242;
  double exponent_cap = 60.0;
};

inline int run_simulate(const SimulateOptions& o, std::ostream& out) {
  if (o.clicks < 1) throw UsageError("--clicks must be >= 1");
  const auto state = load_checkpoint(o.checkpoint);
  const auto ref = parse_slice_ref(o.slice);
  const auto sample = read_sample(sample_stem(o.data, ref));
  const auto parts = explode_multilabel(sample);
  if (parts.empty()) throw DataError("slice " + o.slice + " has no structures");
  const BinarySample* chosen = &parts.front();
  if (!o.structure.empty()) {
    chosen = nullptr;
    for (const auto& p : parts) {
      if (p.structure_id == o.structure || std::to_string(p.label) == o.structure) {
        chosen = &p;
        break;
      }
    }
    if (!chosen) throw DataError("slice " + o.slice + " has no structure '" + o.structure + "'");
  }
  Rng rng(derive_seed(o.seed, {0}));
  const OracleConfig oracle{oracle_mode_arg(o.mode), o.seed, o.exponent_cap};
  const auto steps = simulate_interaction(*chosen, NetworkPredictor{&state.net}, o.clicks, oracle, kClickSigma, rng);
  int k = 0;
  for (const auto& s : steps) {
    out << nlohmann::json{{"step", ++k},
                          {"slice", o.slice},
                          {"structure", chosen->structure_id},
                          {"label", chosen->label},
                          {"click", to_json(s.click)},
                          {"dice", s.dice},
                          {"mask_pixels", s.mask.count()},
                          {"rle", rle_encode(s.mask)}}
               .dump()
        << '\n';
  }
  if (static_cast<int>(steps.size()) < o.clicks) {
    out << nlohmann::json{{"step", k}, {"stopped", "prediction matches ground truth"}}.dump() << '\n';
  }
  return kOk;
}

struct ServeOptions {
  std::string data;
  std::string checkpoint;
  std::string address = "127.0.0.1";
  int port = 8080;
  std::size_t max_sessions = 16;
  std::string export_dir;
  int io_threads = 1;
  int compute_threads = 1;
};

inline std::atomic<bool>& stop_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline int run_serve(const ServeOptions& o, std::ostream& err) {
  if (o.port < 0 || o.port > 65535) throw UsageError("--port out of range");
  auto state = load_checkpoint(o.checkpoint);
  auto host = std::make_shared<ModelHost>(std::make_shared<const UNet<float>>(std::move(state.net)));
  auto images = std::make_shared<const ImageStore>(std::filesystem::path(o.data));
  const std::filesystem::path export_root =
      o.export_dir.empty() ? std::filesystem::path(o.data) / "exports" : std::filesystem::path(o.export_dir);
  auto ctx = std::make_shared<ServiceContext>(images, host, o.max_sessions, export_root);
  Server server(ctx, o.address, static_cast<unsigned short>(o.port), o.io_threads, o.compute_threads);
  std::signal(SIGINT, [](int) { stop_flag() = true; });
  std::signal(SIGTERM, [](int) { stop_flag() = true; });
  server.start();
  err << nlohmann::json{{"event", "listening"}, {"address", o.address}, {"port", server.port()},
                        {"images", images->ids().size()}}
             .dump()
      << std::endl;
  while (!stop_flag()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return kOk;
}

struct ExportReportOptions {
  std::string report;
  std::string format = "markdown";
  std::string out;
};

inline std::string format_number(const nlohmann::json& v) {
  if (v.is_null()) return "";
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(4);
  s << v.get<double>();
  return s.str();
}

inline std::string render_report_table(const nlohmann::json& report, const std::string& format) {
  if (format != "markdown" && format != "csv") throw UsageError("--format must be markdown or csv");
  std::vector<std::vector<std::string>> rows;
  auto add = [&](const std::string& structure, const nlohmann::json& r) {
    rows.push_back({structure, std::to_string(r.at("budget").get<int>()), format_number(r.at("dice")),
                    format_number(r.at("hd_mm")), format_number(r.at("mad_mm")),
                    std::to_string(r.at("n_slices").get<std::size_t>())});
  };
  try {
    for (const auto& r : report.at("rows")) add(r.at("structure").get<std::string>(), r);
    for (const auto& r : report.at("overall")) add("overall", r);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("not an evaluation report: ") + e.what());
  }
  const std::vector<std::string> header{"structure", "budget", "dice", "hd_mm", "mad_mm", "n_slices"};
  std::ostringstream s;
  auto line = [&](const std::vector<std::string>& cells) {
    if (format == "csv") {
      for (std::size_t i = 0; i < cells.size(); ++i) s << (i ? "," : "") << cells[i];
    } else {
      s << '|';
      for (const auto& c : cells) s << ' ' << c << " |";
    }
    s << '\n';
  };
  line(header);
  if (format == "markdown") line(std::vector<std::string>(header.size(), "---"));
  for (const auto& r : rows) line(r);
  return s.str();
}

inline int run_export_report(const ExportReportOptions& o, std::ostream& out) {
  std::ifstream in(o.report);
  if (!in) throw DataError("cannot read report " + o.report);
  nlohmann::json report;
  try {
    report = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad report JSON: ") + e.what());
  }
  const std::string table = render_report_table(report, o.format);
  if (o.out.empty()) {
    out << table;
  } else {
    detail::write_file(o.out, table.data(), table.size());
  }
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"clickseg: click-guided interactive segmentation toolkit", "clickseg"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.set_config("--config", "", "JSON file with flag values for the subcommand (flags take precedence)");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset with a manifest");
  Flags gen_flags(gen_cmd);
  gen_flags.add("out", gen.out, "Output dataset directory")->required();
  gen_flags.add("count", gen.count, "Number of slices");
  gen_flags.add("size", gen.size, "Image side length (multiple of 16)");
  gen_flags.add("seed", gen.seed, "Random seed");
  gen_flags.add("classes", gen.classes, "Structure classes to draw")->delimiter(',');
  gen_flags.add("slices-per-case", gen.slices_per_case, "Slices grouped into one case");
  gen_flags.add("first-index", gen.first_index, "Index of the first generated slice");
  gen_flags.add("val-cases", gen.val_cases, "Cases assigned to the val split");
  gen_flags.add("test-cases", gen.test_cases, "Cases assigned to the test split");
  gen_flags.add("folds", gen.folds, "Number of cross-validation folds (0 = none)");
  gen_flags.add("spacing", gen.spacing, "Pixel spacing in mm");
  gen_flags.add("texture-amplitude", gen.texture_amplitude, "Background texture amplitude");
  gen_flags.add("noise-amplitude", gen.noise_amplitude, "Pixel noise amplitude");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train with simulated click rollouts");
  Flags train_flags(train_cmd);
  train_flags.add("data", tr.data, "Dataset directory")->required();
  train_flags.add("checkpoint", tr.checkpoint, "Checkpoint path");
  train_flags.add("log", tr.log, "JSON-lines training log");
  train_flags.add("seed", tr.seed, "Random seed");
  train_flags.add("max-interactions", tr.max_interactions, "Max clicks per rollout: 1, 2, 5, 10 or 15");
  train_flags.add("batch-size", tr.batch_size, "Batch size");
  train_flags.add("lr", tr.lr, "Adam learning rate");
  train_flags.add("epochs", tr.epochs, "Epochs");
  train_flags.add("base-width", tr.base_width, "Channels of the first level");
  train_flags.add("depth", tr.depth, "Down-sampling levels");
  train_flags.add("mode", tr.mode, "Oracle mode: sample or argmax");
  train_flags.add("exponent-cap", tr.exponent_cap, "Cap on distances inside the click weight");
  train_flags.add("fold", tr.fold, "Train on all folds but this one (-1 = use --split)");
  train_flags.add("split", tr.split, "Manifest split used for training");
  train_flags.add("val-split", tr.val_split, "Manifest split scored after each epoch");
  train_flags.add("structures", tr.structures, "Only train on these structure names")->delimiter(',');
  train_flags.add("checkpoint-every", tr.checkpoint_every, "Checkpoint cadence in epochs");
  train_flags.add("validation-limit", tr.validation_limit, "Max held-out samples scored per epoch");
  train_flags.add_flag("resume", tr.resume, "Continue from --checkpoint if it exists");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint over click budgets");
  Flags eval_flags(eval_cmd);
  eval_flags.add("data", ev.data, "Dataset directory")->required();
  eval_flags.add("checkpoint", ev.checkpoint, "Checkpoint path")->required();
  eval_flags.add("clicks", ev.clicks, "Click budgets, e.g. 1,2,5")->delimiter(',');
  eval_flags.add("split", ev.split, "Manifest split to evaluate");
  eval_flags.add("fold", ev.fold, "Evaluate this fold (-1 = use --split)");
  eval_flags.add("seed", ev.seed, "Oracle seed");
  eval_flags.add("mode", ev.mode, "Oracle mode: sample or argmax");
  eval_flags.add("exponent-cap", ev.exponent_cap, "Cap on distances inside the click weight");
  eval_flags.add("workers", ev.workers, "Evaluation threads");
  eval_flags.add("structures", ev.structures, "Only evaluate these structure names")->delimiter(',');
  eval_flags.add("limit", ev.limit, "Evaluate at most this many slices (0 = all)");
  eval_flags.add("out", ev.out, "Report path (default: stdout)");

  SimulateOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Replay the simulated user on one slice");
  Flags sim_flags(sim_cmd);
  sim_flags.add("data", sim.data, "Dataset directory")->required();
  sim_flags.add("checkpoint", sim.checkpoint, "Checkpoint path")->required();
  sim_flags.add("slice", sim.slice, "Slice id, case:index")->required();
  sim_flags.add("structure", sim.structure, "Structure name or label (default: first present)");
  sim_flags.add("clicks", sim.clicks, "Click budget");
  sim_flags.add("mode", sim.mode, "Oracle mode: sample or argmax");
  sim_flags.add("seed", sim.seed, "Oracle seed");
  sim_flags.add("exponent-cap", sim.exponent_cap, "Cap on distances inside the click weight");

  ServeOptions srv;
  auto* serve_cmd = app.add_subcommand("serve", "Serve images and interactive sessions over HTTP and WebSocket");
  Flags serve_flags(serve_cmd);
  serve_flags.add("data", srv.data, "Dataset directory")->required();
  serve_flags.add("checkpoint", srv.checkpoint, "Checkpoint path")->required();
  serve_flags.add("address", srv.address, "Bind address");
  serve_flags.add("port", srv.port, "Bind port (0 = any free port)");
  serve_flags.add("max-sessions", srv.max_sessions, "Concurrent session limit");
  serve_flags.add("export-dir", srv.export_dir, "Directory for session exports (default: <data>/exports)");
  serve_flags.add("io-threads", srv.io_threads, "Socket I/O threads");
  serve_flags.add("compute-threads", srv.compute_threads, "Prediction threads");

  ExportReportOptions rep;
  auto* rep_cmd = app.add_subcommand("export-report", "Render an evaluation report as a table");
  Flags rep_flags(rep_cmd);
  rep_flags.add("report", rep.report, "Evaluation report JSON")->required();
  rep_flags.add("format", rep.format, "markdown or csv");
  rep_flags.add("out", rep.out, "Output path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << error_line(kUsage, "usage", e.what()) << '\n';
    return kUsage;
  }

  try {
    if (*gen_cmd) {
      print_banner(err, "gen-data", gen_flags);
      return run_gen_data(gen, out);
    }
    if (*train_cmd) {
      print_banner(err, "train", train_flags);
      return run_train(tr, out, err);
    }
    if (*eval_cmd) {
      print_banner(err, "eval", eval_flags);
      return run_eval(ev, eval_flags.effective(), out);
    }
    if (*sim_cmd) {
      print_banner(err, "simulate", sim_flags);
      return run_simulate(sim, out);
    }
    if (*serve_cmd) {
      print_banner(err, "serve", serve_flags);
      return run_serve(srv, err);
    }
    if (*rep_cmd) {
      print_banner(err, "export-report", rep_flags);
      return run_export_report(rep, out);
    }
  } catch (const UsageError& e) {
    err << error_line(kUsage, "usage", e.what()) << '\n';
    return kUsage;
  } catch (const ArchMismatch& e) {
    err << error_line(kUsage, "arch_mismatch", e.what()) << '\n';
    return kUsage;
  } catch (const CheckpointError& e) {
    err << error_line(kDataError, "checkpoint", e.what()) << '\n';
    return kDataError;
  } catch (const DataError& e) {
    err << error_line(kDataError, "data", e.what()) << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << error_line(kDataError, "io", e.what()) << '\n';
    return kDataError;
  } catch (const NumericError& e) {
    err << error_line(kNumericFailure, "numeric", e.what()) << '\n';
    return kNumericFailure;
  } catch (const boost::system::system_error& e) {
    err << error_line(kUsage, "network", e.what()) << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << error_line(kInternal, "internal", e.what()) << '\n';
    return kInternal;
  }
  return kUsage;
}

}  // namespace clickseg::cli
