// Copyright 2026 The SpikeForge Authors. All Rights Reserved.
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

// spikeforge command-line tool: convert, calibrate, simulate, evaluate and
// analyze spiking conversions of feed-forward CNNs.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spikeforge/spikeforge.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spikeforge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_file;
  bool json_output = false;
  std::size_t threads = 0;
  std::string record_file;

  std::string model, data, calib_data, out, bundle, kind = "two-moons-conv";
  std::size_t T = 32;
  std::string pipeline = "light";
  std::string threshold = "mmse";
  double percentile = 99.9;
  std::size_t grid = 100;
  std::uint64_t seed = 0;
  std::size_t threshold_batch = 1024, bc_batch = 128, wc_batch = 1024, wc_minibatch = 128;
  std::size_t wc_iters = 5000, wc_eval_every = 100;
  double wc_lr = 1e-5, wc_momentum = 0.9;
  std::size_t limit = 0;
  std::size_t train_size = 0, test_size = 0;
  bool data_only = false;
  std::string csv;
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// key = value lines, '#' comments. Applied to options of the active
// subcommand that were not given on the command line.
std::map<std::string, std::string> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config file '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(lineno) + " is not 'key = value'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void apply_config(CLI::App* sub, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt) throw UsageError("config key '" + key + "' is not an option of '" + sub->get_name() + "'");
    if (opt->count() > 0) continue;  // explicit flags win
    opt->add_result(value);
    opt->run_callback();
  }
}

void configure_threads(std::size_t flag) {
  std::size_t n = flag;
  if (n == 0)
    if (const char* env = std::getenv("SPIKEFORGE_THREADS"); env && *env) n = std::strtoul(env, nullptr, 10);
  if (n > 0) set_num_threads(n);
}

PipelineConfig pipeline_config(const Options& o) {
  PipelineConfig cfg;
  auto mode = pipeline_mode_from_string(o.pipeline);
  if (!mode) throw UsageError("--pipeline must be none, light or advanced");
  auto method = threshold_method_from_string(o.threshold);
  if (!method) throw UsageError("--threshold must be mmse, mmse_channel, max or percentile");
  cfg.mode = *mode;
  cfg.threshold_method = *method;
  cfg.T = o.T;
  cfg.percentile = o.percentile;
  cfg.grid = o.grid;
  cfg.seed = o.seed;
  cfg.threshold_batch = o.threshold_batch;
  cfg.bc_batch = o.bc_batch;
  cfg.wc_batch = o.wc_batch;
  cfg.wc_minibatch = o.wc_minibatch;
  cfg.wc_iters = o.wc_iters;
  cfg.wc_eval_every = o.wc_eval_every;
  cfg.wc_lr = o.wc_lr;
  cfg.wc_momentum = o.wc_momentum;
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

void need(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

SampleSet load_limited(const std::string& path, std::size_t limit) {
  SampleSet s = load_samples(path);
  if (limit > 0 && limit < s.size()) {
    std::vector<std::size_t> idx(limit);
    for (std::size_t i = 0; i < limit; ++i) idx[i] = i;
    s = s.select(idx);
  }
  return s;
}

void append_record(const Options& o, const std::string& command, const json& config,
                   const fs::path& default_dir) {
  fs::path file = o.record_file.empty() ? default_dir / "runs.jsonl" : fs::path(o.record_file);
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream ts;
  ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
  const json record = {{"timestamp", ts.str()},
                       {"command", command},
                       {"seed", o.seed},
                       {"version", SPIKEFORGE_VERSION},
                       {"config_hash", hex(fnv1a(config.dump()))},
                       {"config", config}};
  std::ofstream out(file, std::ios::app);
  out << record.dump() << '\n';
}

void emit(const Options& o, const json& j, const std::string& text) {
  if (o.json_output)
    std::cout << j.dump(2) << '\n';
  else
    std::cout << text;
}

json firing_json(const std::vector<FiringStats>& stats) {
  json arr = json::array();
  for (const auto& s : stats) arr.push_back(to_json(s));
  return arr;
}

std::string firing_text(const std::vector<FiringStats>& stats) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& s : stats)
    rows.push_back({s.layer_id, fmt_double(s.mean, 4), fmt_double(s.min, 4), fmt_double(s.max, 4),
                    std::to_string(s.spikes)});
  return format_table({"layer", "mean", "min", "max", "spikes"}, rows);
}

// ---------------------------------------------------------------------------

int run_fixture(const Options& o) {
  need(o.out, "--out");
  const fs::path dir = o.out;
  fs::create_directories(dir);
  json info = {{"kind", o.kind}, {"seed", o.seed}};
  if (o.data_only) {
    const std::size_t train = o.train_size ? o.train_size : 2048;
    const std::size_t test = o.test_size ? o.test_size : 1000;
    auto [tr, te] = fixture_samples(o.kind, o.seed, train, test);
    save_samples(tr, dir / "train.sft");
    save_samples(te, dir / "test.sft");
    info["train_size"] = train;
    info["test_size"] = test;
  } else {
    Fixture f = make_fixture(o.kind, o.seed);
    save_model(f.model, dir / "model.sfm");
    save_samples(f.train, dir / "train.sft");
    save_samples(f.test, dir / "test.sft");
    const NetworkGraph ann = prepare_for_snn(f.model);
    const double acc = accuracy_percent(ann_forward(ann, f.test.images_for(ann.metadata())).output,
                                        f.test.labels);
    info["train_size"] = f.train.size();
    info["test_size"] = f.test.size();
    info["ann_test_accuracy"] = acc;
    info["recorded_ann_test_accuracy"] = f.recorded_ann_accuracy;
    info["canonical_seed"] = f.canonical_seed;
  }
  append_record(o, "fixture", info, dir);
  std::ostringstream text;
  text << "fixture " << o.kind << " (seed " << o.seed << ") written to " << dir.string() << '\n';
  if (info.contains("ann_test_accuracy"))
    text << "ANN test accuracy: " << fmt_double(info["ann_test_accuracy"].get<double>(), 6) << "%\n";
  emit(o, info, text.str());
  return kExitOk;
}

int run_convert(const Options& o) {
  need(o.model, "--model");
  need(o.out, "--out");
  const NetworkGraph g = load_model(o.model);
  const NetworkGraph rewritten = prepare_for_snn(g);
  const auto violations = validate_graph(rewritten);
  if (!violations.empty()) throw Error(ErrorCode::kValidation, violations.front());
  save_model(rewritten, o.out);
  json info = {{"model", o.model},
               {"out", o.out},
               {"nodes_before", g.size()},
               {"nodes_after", rewritten.size()},
               {"spiking_layers", spiking_layers(rewritten)}};
  append_record(o, "convert", info, fs::path(o.out).parent_path());
  emit(o, info,
       "converted " + o.model + " -> " + o.out + " (" + std::to_string(spiking_layers(rewritten).size()) +
           " spiking layers)\n");
  return kExitOk;
}

int run_calibrate(const Options& o) {
  need(o.model, "--model");
  need(o.data, "--data");
  need(o.out, "--out");
  const PipelineConfig cfg = pipeline_config(o);
  const NetworkGraph g = load_model(o.model);
  const SampleSet data = load_samples(o.data);
  const CalibratedBundle bundle = run_pipeline(g, data, cfg);
  save_bundle(bundle, o.out);
  const json manifest = bundle_manifest(bundle);
  append_record(o, "calibrate", cfg.to_json(), o.out);
  std::vector<std::vector<std::string>> rows;
  for (const auto& l : bundle.layers)
    rows.push_back({l.layer_id, fmt_double(bundle.thresholds.layers.at(l.layer_id).values[0], 6),
                    fmt_double(l.error_before, 6), fmt_double(l.error_after, 6)});
  emit(o, manifest,
       "calibrated (" + std::string(to_string(cfg.mode)) + ", T=" + std::to_string(cfg.T) +
           ") bundle written to " + o.out + "\n" +
           format_table({"layer", "vth", "err_before", "err_after"}, rows));
  return kExitOk;
}

int run_simulate(const Options& o) {
  need(o.bundle, "--bundle");
  need(o.data, "--data");
  const CalibratedBundle b = load_bundle(o.bundle);
  const SampleSet data = load_limited(o.data, o.limit);
  const std::size_t T = b.config.T;
  SpikingState state = b.make_state();
  state.reset(data.size());
  const SimulationResult r = simulate_snn(b.model, state, data.images_for(b.model.metadata()), T);
  const double acc = accuracy_percent(r.output_rate(), data.labels);
  const auto firing = firing_rate_stats(r);
  const EnergyReport energy = energy_estimate(r, b.model);
  json info = {{"T", T}, {"samples", data.size()}, {"accuracy", acc},
               {"firing", firing_json(firing)}, {"energy", to_json(energy)}};
  json violations = json::object();
  for (const auto& [id, v] : r.terminal_violation) violations[id] = v;
  info["terminal_violation"] = violations;
  append_record(o, "simulate", {{"bundle", o.bundle}, {"data", o.data}, {"limit", o.limit}},
                o.out.empty() ? fs::path(o.bundle) : fs::path(o.out));
  std::ostringstream text;
  text << "SNN accuracy (T=" << T << ", " << data.size() << " samples): " << fmt_double(acc, 6) << "%\n"
       << firing_text(firing) << "energy: snn " << fmt_double(energy.snn_energy) << ", ann "
       << fmt_double(energy.ann_energy) << ", ratio " << fmt_double(energy.ratio, 4)
       << " (relative units)\n";
  emit(o, info, text.str());
  return kExitOk;
}

int run_eval(const Options& o) {
  need(o.model, "--model");
  need(o.data, "--data");
  need(o.bundle, "--bundle");
  const CalibratedBundle b = load_bundle(o.bundle);
  const SampleSet test = load_limited(o.data, o.limit);
  const NetworkGraph ann = prepare_for_snn(load_model(o.model));
  const std::size_t T = b.config.T;
  const Tensor x = test.images_for(ann.metadata());
  json info = {{"T", T}, {"samples", test.size()}};
  info["ann_accuracy"] = accuracy_percent(ann_forward(ann, x).output, test.labels);
  info["calibrated_accuracy"] =
      accuracy_percent(snn_output_rates(b.model, b.thresholds.as_tensors(), b.v0, x, T), test.labels);
  std::ostringstream text;
  text << "ANN accuracy:                " << fmt_double(info["ann_accuracy"].get<double>()) << "%\n"
       << "calibrated SNN (T=" << T << "):     " << fmt_double(info["calibrated_accuracy"].get<double>())
       << "%\n";
  if (!o.calib_data.empty()) {
    PipelineConfig base = pipeline_config(o);
    base.mode = PipelineMode::kNone;
    base.threshold_method = ThresholdMethod::kMax;
    base.T = T;
    base.seed = b.config.seed;
    const SampleSet calib = load_samples(o.calib_data);
    base.threshold_batch = std::min(base.threshold_batch, calib.size());
    base.bc_batch = std::min(base.bc_batch, calib.size());
    base.wc_batch = std::min(base.wc_batch, calib.size());
    const CalibratedBundle naive = run_pipeline(load_model(o.model), calib, base);
    info["uncalibrated_accuracy"] = accuracy_percent(
        snn_output_rates(naive.model, naive.thresholds.as_tensors(), naive.v0, x, T), test.labels);
    text << "uncalibrated max-act (T=" << T << "): "
         << fmt_double(info["uncalibrated_accuracy"].get<double>()) << "%\n";
  }
  append_record(o, "eval", {{"bundle", o.bundle}, {"model", o.model}, {"data", o.data}, {"calib_data", o.calib_data}},
                o.out.empty() ? fs::path(o.bundle) : fs::path(o.out));
  emit(o, info, text.str());
  return kExitOk;
}

int run_analyze(const Options& o) {
  need(o.model, "--model");
  need(o.bundle, "--bundle");
  need(o.data, "--data");
  const CalibratedBundle b = load_bundle(o.bundle);
  const SampleSet data = load_limited(o.data, o.limit ? o.limit : 256);
  const NetworkGraph ann = prepare_for_snn(load_model(o.model));
  const std::size_t T = b.config.T;
  const Tensor x = data.images_for(ann.metadata());
  const ActivationTrace trace = *ann_forward(ann, x, true).trace;
  const RateTrace rates = expected_rate_forward(b.model, b.thresholds.as_tensors(), b.v0, x, T);
  SpikingState state = b.make_state();
  state.reset(data.size());
  const SimulationResult sim = simulate_snn(b.model, state, x, T);

  const auto errors = layer_errors(b.model, trace, rates, b.thresholds, b.v0, T, &sim);
  const auto lemma = lemma1_diagnostic(b.model, trace, rates, b.thresholds, b.v0, T);
  const auto firing = firing_rate_stats(sim);
  const auto energy = energy_estimate(sim, b.model);

  json err_json = json::array();
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : errors) {
    err_json.push_back(to_json(e));
    rows.push_back({e.layer_id, fmt_double(e.e_norm), std::to_string(e.floor_count),
                    std::to_string(e.clip_count), fmt_double(e.max_abs_channel_mean),
                    e.terminal_violation ? fmt_double(*e.terminal_violation, 4) : "-"});
  }
  json report = {{"T", T},
                 {"samples", data.size()},
                 {"layer_errors", err_json},
                 {"error_propagation", to_json(lemma)},
                 {"firing", firing_json(firing)},
                 {"energy", to_json(energy)}};
  const fs::path out_dir = o.out.empty() ? fs::path(o.bundle) / "analysis" : fs::path(o.out);
  fs::create_directories(out_dir);
  io::write_file(out_dir / "report.json", report.dump(2) + "\n");
  std::ostringstream text;
  text << "layer errors (T=" << T << ", " << data.size() << " samples)\n"
       << format_table({"layer", "||e||", "floor", "clip", "max|mu_c(e)|", "v(T) outside"}, rows);
  if (lemma.skipped)
    text << "error propagation: skipped (" << lemma.reason << ")\n";
  else
    text << "error propagation: lhs " << fmt_double(lemma.lhs) << ", rhs " << fmt_double(lemma.rhs)
         << ", ratio " << fmt_double(lemma.ratio, 4) << '\n';
  text << "firing ratios\n" << firing_text(firing);
  text << "energy: snn " << fmt_double(energy.snn_energy) << ", ann " << fmt_double(energy.ann_energy)
       << ", ratio " << fmt_double(energy.ratio, 4) << " (relative units)\n";
  io::write_file(out_dir / "report.txt", text.str());
  if (!o.csv.empty()) {
    std::ostringstream csv;
    csv << "layer,e_norm,floor_count,clip_count,max_abs_channel_mean,firing_mean\n";
    for (std::size_t i = 0; i < errors.size(); ++i) {
      double fm = 0.0;
      for (const auto& f : firing)
        if (f.layer_id == errors[i].layer_id) fm = f.mean;
      csv << errors[i].layer_id << ',' << errors[i].e_norm << ',' << errors[i].floor_count << ','
          << errors[i].clip_count << ',' << errors[i].max_abs_channel_mean << ',' << fm << '\n';
    }
    io::write_file(o.csv, csv.str());
  }
  append_record(o, "analyze", {{"bundle", o.bundle}, {"model", o.model}, {"data", o.data}}, out_dir);
  emit(o, report, text.str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"spikeforge: ANN-to-SNN conversion with layer-wise calibration"};
  app.set_version_flag("--version", SPIKEFORGE_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", o.config_file, "key = value file merged under explicit flags");
  app.add_flag("--json", o.json_output, "machine-readable output");
  app.add_option("--threads", o.threads, "worker threads (default: SPIKEFORGE_THREADS or all cores)");
  app.add_option("--record", o.record_file, "reproducibility log (default: <output dir>/runs.jsonl)");

  auto* fixture = app.add_subcommand("fixture", "write a committed fixture model and its data");
  fixture->add_option("--kind", o.kind, "two-moons-conv | blob-mlp");
  fixture->add_option("--seed", o.seed);
  fixture->add_option("--out", o.out, "output directory");
  fixture->add_flag("--data-only", o.data_only, "only generate train/test sets");
  fixture->add_option("--train-size", o.train_size);
  fixture->add_option("--test-size", o.test_size);

  auto* convert = app.add_subcommand("convert", "fold BN and rewrite AvgPool into a spiking-ready SFM");
  convert->add_option("--model", o.model);
  convert->add_option("--out", o.out, "output .sfm");

  auto* calibrate = app.add_subcommand("calibrate", "convert and calibrate a model for one T");
  calibrate->add_option("--model", o.model);
  calibrate->add_option("--data", o.data, "calibration samples (SFT)");
  calibrate->add_option("--out", o.out, "bundle directory");

  auto* simulate = app.add_subcommand("simulate", "run the spiking network of a bundle");
  simulate->add_option("--bundle", o.bundle);
  simulate->add_option("--data", o.data);
  simulate->add_option("--limit", o.limit, "use the first N samples");
  simulate->add_option("--out", o.out, "directory for the run record");

  auto* eval = app.add_subcommand("eval", "compare ANN, calibrated SNN and naive conversion accuracy");
  eval->add_option("--model", o.model, "source model (SFM)");
  eval->add_option("--bundle", o.bundle);
  eval->add_option("--data", o.data, "evaluation samples");
  eval->add_option("--calib-data", o.calib_data, "calibration samples for the max-activation baseline");
  eval->add_option("--limit", o.limit);
  eval->add_option("--out", o.out, "directory for the run record");

  auto* analyze = app.add_subcommand("analyze", "per-layer error, firing and energy reports");
  analyze->add_option("--model", o.model, "source model (SFM)");
  analyze->add_option("--bundle", o.bundle);
  analyze->add_option("--data", o.data);
  analyze->add_option("--limit", o.limit, "samples to analyze (default 256)");
  analyze->add_option("--out", o.out, "report directory (default <bundle>/analysis)");
  analyze->add_option("--csv", o.csv, "also write a CSV summary");

  for (auto* sub : {calibrate, eval}) {
    sub->add_option("-T,--T", o.T, "simulation length");
    sub->add_option("--pipeline", o.pipeline, "none | light | advanced");
    sub->add_option("--threshold", o.threshold, "mmse | mmse_channel | max | percentile");
    sub->add_option("--percentile", o.percentile);
    sub->add_option("--grid", o.grid, "threshold grid size N");
    sub->add_option("--seed", o.seed);
    sub->add_option("--threshold-batch", o.threshold_batch);
    sub->add_option("--bc-batch", o.bc_batch);
    sub->add_option("--wc-batch", o.wc_batch);
    sub->add_option("--wc-minibatch", o.wc_minibatch);
    sub->add_option("--wc-iters", o.wc_iters);
    sub->add_option("--wc-eval-every", o.wc_eval_every);
    sub->add_option("--wc-lr", o.wc_lr);
    sub->add_option("--wc-momentum", o.wc_momentum);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!o.config_file.empty()) apply_config(sub, read_config(o.config_file));
    configure_threads(o.threads);
    const std::string name = sub->get_name();
    if (name == "fixture") return run_fixture(o);
    if (name == "convert") return run_convert(o);
    if (name == "calibrate") return run_calibrate(o);
    if (name == "simulate") return run_simulate(o);
    if (name == "eval") return run_eval(o);
    if (name == "analyze") return run_analyze(o);
    throw UsageError("unknown subcommand");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
