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

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikeforge/ann.hpp"
#include "spikeforge/data.hpp"
#include "spikeforge/rewrite.hpp"
#include "spikeforge/serialization.hpp"
#include "spikeforge/snn.hpp"
#include "spikeforge/threshold.hpp"

namespace spikeforge {

enum class PipelineMode { kNone, kLight, kAdvanced };

inline const char* to_string(PipelineMode m) {
  switch (m) {
    case PipelineMode::kNone: return "none";
    case PipelineMode::kLight: return "light";
    case PipelineMode::kAdvanced: return "advanced";
  }
  return "?";
}

inline std::optional<PipelineMode> pipeline_mode_from_string(const std::string& s) {
  if (s == "none") return PipelineMode::kNone;
  if (s == "light") return PipelineMode::kLight;
  if (s == "advanced") return PipelineMode::kAdvanced;
  return std::nullopt;
}

inline std::optional<ThresholdMethod> threshold_method_from_string(const std::string& s) {
  if (s == "mmse") return ThresholdMethod::kMmse;
  if (s == "mmse_channel") return ThresholdMethod::kMmseChannel;
  if (s == "max") return ThresholdMethod::kMax;
  if (s == "percentile") return ThresholdMethod::kPercentile;
  return std::nullopt;
}

struct PipelineConfig {
  PipelineMode mode = PipelineMode::kLight;
  std::size_t T = 32;
  ThresholdMethod threshold_method = ThresholdMethod::kMmse;
  double percentile = 99.9;
  std::size_t grid = 100;
  std::size_t threshold_batch = 1024;
  std::size_t bc_batch = 128;
  std::size_t wc_batch = 1024;
  std::size_t wc_minibatch = 128;
  std::size_t wc_iters = 5000;
  double wc_lr = 1e-5;
  double wc_momentum = 0.9;
  std::size_t wc_eval_every = 100;
  std::uint64_t seed = 0;

  /// Called on the working graph before each layer's threshold search; may
  /// adjust that layer's bias. Unset by default.
  std::function<void(NetworkGraph&, const std::string& layer_id)> pre_threshold_hook;

  std::size_t calibration_samples() const {
    return std::max({threshold_batch, bc_batch, wc_batch});
  }

  void validate() const {
    require(T >= 1, ErrorCode::kInvalidArgument, "T must be >= 1");
    require(grid >= 2, ErrorCode::kInvalidArgument, "threshold grid must have >= 2 points");
    require(threshold_batch >= 1 && bc_batch >= 1 && wc_batch >= 1 && wc_minibatch >= 1,
            ErrorCode::kInvalidArgument, "batch sizes must be positive");
    require(wc_lr > 0.0 && std::isfinite(wc_lr), ErrorCode::kInvalidArgument,
            "wc learning rate must be positive");
    require(wc_momentum >= 0.0 && wc_momentum < 1.0, ErrorCode::kInvalidArgument,
            "wc momentum must be in [0, 1)");
    require(wc_eval_every >= 1, ErrorCode::kInvalidArgument, "wc_eval_every must be >= 1");
    require(percentile > 0.0 && percentile <= 100.0, ErrorCode::kInvalidArgument,
            "percentile must be in (0, 100]");
  }

  nlohmann::json to_json() const {
    return {{"mode", to_string(mode)},
            {"T", T},
            {"threshold_method", threshold_method_name(threshold_method, percentile)},
            {"percentile", percentile},
            {"grid", grid},
            {"threshold_batch", threshold_batch},
            {"bc_batch", bc_batch},
            {"wc_batch", wc_batch},
            {"wc_minibatch", wc_minibatch},
            {"wc_iters", wc_iters},
            {"wc_lr", wc_lr},
            {"wc_momentum", wc_momentum},
            {"wc_eval_every", wc_eval_every},
            {"lr_schedule", "cosine"},
            {"seed", seed}};
  }
};

/// ANN target, SNN expected output and their difference for one layer.
struct CalibrationRecord {
  std::string layer_id;
  Tensor x_next;  // relu(ANN pre-activation)
  Tensor s_next;  // clipfloor(SNN pre-activation)
  Tensor e;       // x_next - s_next
  Tensor err;     // clipfloor(SNN pre-activation) - relu(SNN pre-activation)
};

inline CalibrationRecord make_record(const std::string& layer_id, const Tensor& ann_pre,
                                     const Tensor& snn_pre, std::size_t T, const Tensor& vth,
                                     const Tensor* v0 = nullptr) {
  CalibrationRecord r;
  r.layer_id = layer_id;
  r.x_next = relu(ann_pre);
  r.s_next = clipfloor(snn_pre, T, vth, v0);
  r.e = r.x_next - r.s_next;
  r.err = r.s_next - relu(snn_pre);
  return r;
}

/// b_c <- b_c + mu_c(e): the batch and spatial mean of the error per output
/// channel (per feature for Linear layers). Returns the applied shift.
inline Tensor bias_calibrate(LayerNode& layer, const CalibrationRecord& record) {
  require(layer.has_weights(), ErrorCode::kInvalidArgument,
          "bias calibration needs a Conv or Linear layer, got '" + layer.id + "'");
  const Tensor delta = channel_spatial_mean(record.e, /*batch_reduce=*/true);
  Tensor& b = layer.bias();
  require(delta.size() == b.size(), ErrorCode::kInvalidArgument,
          "error channels do not match bias of '" + layer.id + "'");
  for (std::size_t c = 0; c < b.size(); ++c) b[c] += delta[c];
  return delta;
}

/// v0 = T * mean over the batch of e, kept per neuron (no spatial mean).
inline Tensor potential_calibrate(const CalibrationRecord& record, std::size_t T) {
  Tensor v0 = batch_mean(record.e);
  const float scale = static_cast<float>(T);
  for (float& v : v0.values()) v = scale * v;
  return v0;
}

enum class SurrogateForward {
  kStraightThrough,  // floor in the forward pass, identity in the backward pass
  kClipOnly,         // floor removed from the forward pass as well
};

/// Loss and parameter gradients of the per-layer calibration objective
/// L = (1/B) * sum ||clipfloor(layer(s_in), T, vth, v0) - target||^2.
/// The backward pass treats floor as identity, so dL/dz is the residual
/// masked to the unclipped range 0 <= T*z/vth + v0/vth <= T.
struct SurrogateEval {
  double loss = 0.0;
  Tensor pre;  // layer output z
  ParamGrads grads;
};

namespace detail {

inline Tensor layer_apply(const LayerNode& layer, const Tensor& input) {
  const Tensor* in[] = {&input};
  return evaluate_linear_node(layer, in);
}

inline SurrogateEval surrogate_eval(const LayerNode& layer, const Tensor& s_in, const Tensor& target,
                                    std::size_t T, const Tensor& vth, const Tensor* v0,
                                    SurrogateForward mode, bool want_grad) {
  SurrogateEval r;
  r.pre = layer_apply(layer, s_in);
  require(r.pre.shape() == target.shape(), ErrorCode::kInvalidArgument,
          "calibration target shape " + shape_string(target.shape()) + " does not match layer output " +
              shape_string(r.pre.shape()));
  detail::check_threshold(vth, r.pre);
  detail::check_v0(v0, r.pre);
  const double B = static_cast<double>(r.pre.batch());
  Tensor grad_z(r.pre.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < r.pre.size(); ++i) {
    const double th = detail::threshold_at(vth, r.pre, i);
    const double u = static_cast<double>(T) * r.pre[i] / th + detail::v0_at(v0, r.pre, i) / th;
    double s;
    if (mode == SurrogateForward::kStraightThrough) {
      s = rate_from_count(expected_spike_count(r.pre[i], T, static_cast<float>(th),
                                               detail::v0_at(v0, r.pre, i)),
                          T, static_cast<float>(th));
    } else {
      s = th / static_cast<double>(T) * std::clamp(u, 0.0, static_cast<double>(T));
    }
    const double d = s - target[i];
    loss += d * d;
    const bool inside = u >= 0.0 && u <= static_cast<double>(T);
    grad_z[i] = inside ? static_cast<float>(2.0 * d / B) : 0.0f;
  }
  r.loss = loss / B;
  if (want_grad) {
    r.grads = layer.kind == LayerKind::kConv ? conv2d_weight_grad(s_in, grad_z, layer.conv())
                                             : linear_weight_grad(s_in, grad_z, layer.linear().weight);
  }
  return r;
}

}  // namespace detail

inline SurrogateEval calibration_objective(const LayerNode& layer, const Tensor& s_in,
                                           const Tensor& target, std::size_t T, const Tensor& vth,
                                           const Tensor* v0 = nullptr,
                                           SurrogateForward mode = SurrogateForward::kStraightThrough,
                                           bool want_grad = true) {
  require(layer.has_weights(), ErrorCode::kInvalidArgument,
          "calibration objective needs a Conv or Linear layer");
  return detail::surrogate_eval(layer, s_in, target, T, vth, v0, mode, want_grad);
}

struct WeightCalibrationReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t best_iteration = 0;  // 0 = initial parameters kept
  std::size_t iterations = 0;
};

/// SGD with momentum and cosine learning-rate decay on the calibration
/// objective. Minibatches are drawn from s_in by a seeded shuffle; the full
/// set is evaluated every cfg.wc_eval_every steps and the best parameters
/// seen (the initial ones included) are kept.
inline WeightCalibrationReport weight_calibrate(LayerNode& layer, const Tensor& s_in,
                                                const Tensor& target, std::size_t T,
                                                const Tensor& vth, const Tensor* v0,
                                                const PipelineConfig& cfg,
                                                std::uint64_t stream = 0) {
  require(layer.has_weights(), ErrorCode::kInvalidArgument,
          "weight calibration needs a Conv or Linear layer, got '" + layer.id + "'");
  require(s_in.batch() == target.batch(), ErrorCode::kInvalidArgument,
          "input and target batch sizes differ");
  const LayerNode original = layer;
  auto full_loss = [&]() {
    return calibration_objective(layer, s_in, target, T, vth, v0,
                                 SurrogateForward::kStraightThrough, false)
        .loss;
  };
  auto diverged = [&](double loss) {
    if (std::isfinite(loss)) return;
    layer = original;
    fail(ErrorCode::kDiverged, "weight calibration of '" + layer.id + "' diverged");
  };

  WeightCalibrationReport report;
  report.initial_loss = full_loss();
  diverged(report.initial_loss);
  report.final_loss = report.initial_loss;
  LayerNode best = layer;

  const std::size_t N = s_in.batch();
  const std::size_t mb = std::min(cfg.wc_minibatch, N);
  std::vector<std::size_t> order(N);
  for (std::size_t i = 0; i < N; ++i) order[i] = i;
  Rng rng(cfg.seed ^ (0x9E3779B97F4A7C15ull * (stream + 1)));
  std::size_t cursor = N;

  Tensor mom_w(layer.weight().shape()), mom_b(layer.bias().shape());
  const std::size_t per = s_in.sample_size(), per_out = target.sample_size();
  for (std::size_t it = 1; it <= cfg.wc_iters; ++it) {
    if (cursor + mb > N) {
      rng.shuffle(order);
      cursor = 0;
    }
    Shape in_shape = s_in.shape(), out_shape = target.shape();
    in_shape[0] = out_shape[0] = mb;
    Tensor xb(in_shape), tb(out_shape);
    for (std::size_t k = 0; k < mb; ++k) {
      const std::size_t src = order[cursor + k];
      std::copy_n(s_in.data() + src * per, per, xb.data() + k * per);
      std::copy_n(target.data() + src * per_out, per_out, tb.data() + k * per_out);
    }
    cursor += mb;

    const auto eval = calibration_objective(layer, xb, tb, T, vth, v0);
    diverged(eval.loss);
    const double lr = cfg.wc_lr * 0.5 *
                      (1.0 + std::cos(std::numbers::pi * static_cast<double>(it - 1) /
                                      static_cast<double>(cfg.wc_iters)));
    Tensor& w = layer.weight();
    Tensor& b = layer.bias();
    for (std::size_t i = 0; i < w.size(); ++i) {
      mom_w[i] = static_cast<float>(cfg.wc_momentum * mom_w[i] + eval.grads.weight[i]);
      w[i] = static_cast<float>(w[i] - lr * mom_w[i]);
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
      mom_b[i] = static_cast<float>(cfg.wc_momentum * mom_b[i] + eval.grads.bias[i]);
      b[i] = static_cast<float>(b[i] - lr * mom_b[i]);
    }
    for (float v : w.values())
      if (!std::isfinite(v)) diverged(v);
    for (float v : b.values())
      if (!std::isfinite(v)) diverged(v);
    report.iterations = it;
    if (it % cfg.wc_eval_every == 0 || it == cfg.wc_iters) {
      const double loss = full_loss();
      diverged(loss);
      if (loss < report.final_loss) {
        report.final_loss = loss;
        report.best_iteration = it;
        best = layer;
      }
    }
  }
  layer = std::move(best);
  return report;
}

struct LayerCalibrationReport {
  std::string layer_id;
  std::string source_id;  // Conv/Linear node driving the layer
  double threshold_mse = 0.0;
  double error_before = 0.0;  // mean squared ||e|| per sample, before calibration
  double error_after = 0.0;
  std::optional<WeightCalibrationReport> wc;
  bool parameters_calibrated = false;
};

/// Output of the pipeline for one T: rewritten and calibrated network,
/// thresholds, initial potentials and per-layer diagnostics.
struct CalibratedBundle {
  NetworkGraph model;
  ThresholdTable thresholds;
  std::map<std::string, Tensor> v0;
  std::vector<LayerCalibrationReport> layers;
  PipelineConfig config;

  SpikingState make_state() const { return make_spiking_state(model, thresholds.as_tensors(), v0); }
};

inline double mean_sq_norm(const Tensor& e) {
  double acc = 0.0;
  for (float v : e.values()) acc += static_cast<double>(v) * v;
  return acc / static_cast<double>(e.batch());
}

inline ThresholdChoice select_threshold(const Tensor& ann_pre, const PipelineConfig& cfg) {
  switch (cfg.threshold_method) {
    case ThresholdMethod::kMmse:
      return mmse_threshold(ann_pre, cfg.T, cfg.grid, false);
    case ThresholdMethod::kMmseChannel:
      return mmse_threshold(ann_pre, cfg.T, cfg.grid, true);
    case ThresholdMethod::kMax:
    case ThresholdMethod::kPercentile:
      return baseline_threshold(ann_pre, cfg.threshold_method, cfg.percentile, false, cfg.T);
  }
  fail(ErrorCode::kInvalidArgument, "unknown threshold method");
}

/// Layer-wise conversion and calibration. BN is folded and AvgPool rewritten
/// first; then, for every spiking layer in graph order: choose its threshold
/// from the ANN pre-activations, compute the expected SNN output with all
/// earlier layers already calibrated, and correct the error with bias
/// calibration (light) or potential then weight calibration (advanced).
inline CalibratedBundle run_pipeline(const NetworkGraph& source, const SampleSet& dataset,
                                     const PipelineConfig& cfg) {
  cfg.validate();
  const std::size_t needed = cfg.calibration_samples();
  require(dataset.size() >= needed, ErrorCode::kInvalidArgument,
          "calibration needs " + std::to_string(needed) + " samples, dataset has " +
              std::to_string(dataset.size()));
  const NetworkGraph ann = prepare_for_snn(source);
  {
    const auto v = validate_graph(ann);
    require(v.empty(), ErrorCode::kValidation, v.empty() ? "" : v.front());
  }
  const SampleSet calib = seeded_subset(dataset, needed, cfg.seed);
  const Tensor x = calib.images_for(ann.metadata());
  const ActivationTrace trace = *ann_forward(ann, x, /*capture=*/true).trace;

  CalibratedBundle bundle{ann, {}, {}, {}, cfg};
  bundle.thresholds.T = cfg.T;
  bundle.thresholds.method = threshold_method_name(cfg.threshold_method, cfg.percentile);
  bundle.thresholds.grid = cfg.grid;
  bundle.thresholds.seed = cfg.seed;
  NetworkGraph& g = bundle.model;

  std::map<std::string, Tensor> values;  // expected SNN rates on the calibration set
  auto recompute = [&](const LayerNode& n) {
    std::vector<const Tensor*> in;
    for (const auto& id : n.inputs) in.push_back(&values.at(id));
    values[n.id] = evaluate_linear_node(n, in);
  };
  auto head = [](const Tensor& t, std::size_t n) { return t.slice_batch(0, std::min(n, t.batch())); };

  std::uint64_t layer_index = 0;
  for (const auto& node : ann.nodes()) {
    if (node.kind == LayerKind::kInput) {
      values[node.id] = x;
      continue;
    }
    if (node.kind != LayerKind::kReLU) {
      recompute(g.node(node.id));
      continue;
    }
    const std::string& src_id = node.inputs[0];
    const bool owns_source =
        g.node(src_id).has_weights() && ann.consumers(src_id).size() == 1;
    if (cfg.pre_threshold_hook && owns_source) {
      cfg.pre_threshold_hook(g, node.id);
      recompute(g.node(src_id));
    }
    const Tensor& ann_pre = trace.at(src_id);

    LayerCalibrationReport rep;
    rep.layer_id = node.id;
    rep.source_id = src_id;
    ThresholdChoice th = select_threshold(head(ann_pre, cfg.threshold_batch), cfg);
    rep.threshold_mse = th.mse;
    bundle.thresholds.layers[node.id] = th;
    const Tensor& vth = bundle.thresholds.layers[node.id].values;

    const std::size_t bc = cfg.bc_batch;
    CalibrationRecord rec = make_record(node.id, head(ann_pre, bc), head(values.at(src_id), bc), cfg.T, vth);
    rep.error_before = mean_sq_norm(rec.e);
    const Tensor* v0 = nullptr;

    if (cfg.mode == PipelineMode::kLight && owns_source) {
      bias_calibrate(g.node(src_id), rec);
      recompute(g.node(src_id));
      rep.parameters_calibrated = true;
    } else if (cfg.mode == PipelineMode::kAdvanced) {
      bundle.v0[node.id] = potential_calibrate(rec, cfg.T);
      v0 = &bundle.v0.at(node.id);
      if (owns_source) {
        LayerNode& layer = g.node(src_id);
        const std::size_t wc = cfg.wc_batch;
        rep.wc = weight_calibrate(layer, head(values.at(layer.inputs[0]), wc), relu(head(ann_pre, wc)),
                                  cfg.T, vth, v0, cfg, layer_index);
        recompute(layer);
      }
      rep.parameters_calibrated = true;
    }
    const CalibrationRecord after =
        make_record(node.id, head(ann_pre, bc), head(values.at(src_id), bc), cfg.T, vth, v0);
    rep.error_after = mean_sq_norm(after.e);
    values[node.id] = clipfloor(values.at(src_id), cfg.T, vth, v0);
    bundle.layers.push_back(std::move(rep));
    ++layer_index;
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Bundle directory: model.sfm, thresholds.json, v0.sfb, manifest.json

inline nlohmann::json bundle_manifest(const CalibratedBundle& b) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : b.layers) {
    nlohmann::json j = {{"layer", l.layer_id},
                        {"source", l.source_id},
                        {"threshold_mse", l.threshold_mse},
                        {"error_before", l.error_before},
                        {"error_after", l.error_after},
                        {"calibrated", l.parameters_calibrated}};
    if (l.wc)
      j["wc"] = {{"initial_loss", l.wc->initial_loss},
                 {"final_loss", l.wc->final_loss},
                 {"best_iteration", l.wc->best_iteration},
                 {"iterations", l.wc->iterations}};
    layers.push_back(std::move(j));
  }
  return {{"format", "spikeforge-bundle"},
          {"version", 1},
          {"T", b.config.T},
          {"seed", b.config.seed},
          {"config", b.config.to_json()},
          {"layers", layers}};
}

inline void save_bundle(const CalibratedBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_model(b.model, dir / "model.sfm");
  io::write_file(dir / "thresholds.json", threshold_table_to_json(b.thresholds).dump(2) + "\n");
  io::write_file(dir / "v0.sfb", encode_tensor_bundle(b.v0));
  io::write_file(dir / "manifest.json", bundle_manifest(b).dump(2) + "\n");
}

/// Model, thresholds and potentials of a saved bundle (reports are not
/// restored).
inline CalibratedBundle load_bundle(const std::filesystem::path& dir) {
  CalibratedBundle b;
  b.model = load_model(dir / "model.sfm");
  try {
    b.thresholds = threshold_table_from_json(nlohmann::json::parse(io::read_file(dir / "thresholds.json")));
    const auto manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
    b.config.T = manifest.at("T").get<std::size_t>();
    b.config.seed = manifest.at("seed").get<std::uint64_t>();
    if (auto mode = pipeline_mode_from_string(manifest.at("config").value("mode", "light")))
      b.config.mode = *mode;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidation, "bundle '" + dir.string() + "' is malformed: " + e.what());
  }
  b.v0 = decode_tensor_bundle(io::read_file(dir / "v0.sfb"), "'" + (dir / "v0.sfb").string() + "'");
  for (const auto& id : spiking_layers(b.model))
    require(b.thresholds.layers.count(id) != 0, ErrorCode::kValidation,
            "bundle has no threshold for spiking layer '" + id + "'");
  return b;
}

}  // namespace spikeforge
