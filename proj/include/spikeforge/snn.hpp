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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spikeforge/ann.hpp"
#include "spikeforge/graph.hpp"

namespace spikeforge {

/// Threshold tensors hold either one value or one value per channel
/// (feature, for rank-2 maps).
inline std::size_t threshold_channel(const Tensor& x, std::size_t flat_index) {
  if (x.rank() == 4) return (flat_index / x.spatial()) % x.dim(1);
  if (x.rank() == 2) return flat_index % x.dim(1);
  return 0;
}

namespace detail {

inline void check_threshold(const Tensor& vth, const Tensor& x) {
  require(vth.size() == 1 || (x.rank() >= 2 && vth.size() == x.dim(1)),
          ErrorCode::kInvalidArgument,
          "threshold must be scalar or per-channel for input " + shape_string(x.shape()));
  for (float v : vth.values())
    require(v > 0.0f && std::isfinite(v), ErrorCode::kInvalidArgument,
            "thresholds must be positive and finite");
}

inline float threshold_at(const Tensor& vth, const Tensor& x, std::size_t i) {
  return vth.size() == 1 ? vth[0] : vth[threshold_channel(x, i)];
}

// v0 is stored once per neuron ([1, ...]) and broadcast over the batch.
inline void check_v0(const Tensor* v0, const Tensor& x) {
  if (!v0) return;
  require(v0->size() == x.sample_size() || v0->size() == x.size(), ErrorCode::kInvalidArgument,
          "initial potential shape " + shape_string(v0->shape()) +
              " incompatible with layer output " + shape_string(x.shape()));
}

inline float v0_at(const Tensor* v0, const Tensor& x, std::size_t i) {
  if (!v0) return 0.0f;
  return v0->size() == x.size() ? (*v0)[i] : (*v0)[i % x.sample_size()];
}

}  // namespace detail

/// Expected spike count of one IF neuron integrating constant drive x for T
/// steps from initial potential v0: clip(floor(T*x/vth + v0/vth), 0, T).
inline std::int64_t expected_spike_count(float x, std::size_t T, float vth, float v0) {
  const double u = static_cast<double>(T) * x / vth + static_cast<double>(v0) / vth;
  const double m = std::floor(u);
  if (m <= 0.0) return 0;
  if (m >= static_cast<double>(T)) return static_cast<std::int64_t>(T);
  return static_cast<std::int64_t>(m);
}

/// Rate value vth*m/T, rounded once to float.
inline float rate_from_count(std::int64_t m, std::size_t T, float vth) {
  return static_cast<float>(static_cast<double>(vth) * static_cast<double>(m) /
                            static_cast<double>(T));
}

/// Closed-form expected output of an IF layer with soft reset:
/// (vth/T) * clip(floor(T*x/vth + v0/vth), 0, T). vth is a scalar or
/// per-channel tensor; v0 (optional) is per neuron and broadcast over the
/// batch.
inline Tensor clipfloor(const Tensor& x, std::size_t T, const Tensor& vth,
                        const Tensor* v0 = nullptr) {
  require(T >= 1, ErrorCode::kInvalidArgument, "T must be >= 1");
  detail::check_threshold(vth, x);
  detail::check_v0(v0, x);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float th = detail::threshold_at(vth, x, i);
    out[i] = rate_from_count(expected_spike_count(x[i], T, th, detail::v0_at(v0, x, i)), T, th);
  }
  return out;
}

inline Tensor clipfloor(const Tensor& x, std::size_t T, float vth, const Tensor* v0 = nullptr) {
  require(vth > 0.0f, ErrorCode::kInvalidArgument, "threshold must be > 0");
  return clipfloor(x, T, Tensor({1}, vth), v0);
}

/// Neuron state of one spiking layer (one ReLU node of the graph).
struct SpikingLayerState {
  Tensor threshold;  // [1] or [C]
  Tensor v0;         // [1, per-sample...]
  Tensor v;          // [N, per-sample...], valid once a simulation started
};

/// Membrane state for every spiking layer of a graph. A simulation consumes
/// the state; reset() must be called before the next run.
class SpikingState {
 public:
  SpikingState() = default;

  std::map<std::string, SpikingLayerState>& layers() noexcept { return layers_; }
  const std::map<std::string, SpikingLayerState>& layers() const noexcept { return layers_; }

  SpikingLayerState& layer(const std::string& id) {
    auto it = layers_.find(id);
    require(it != layers_.end(), ErrorCode::kInvalidArgument, "no spiking state for '" + id + "'");
    return it->second;
  }
  const SpikingLayerState& layer(const std::string& id) const {
    auto it = layers_.find(id);
    require(it != layers_.end(), ErrorCode::kInvalidArgument, "no spiking state for '" + id + "'");
    return it->second;
  }

  /// Restore v to v0 (per sample) and mark the state ready for a run.
  void reset(std::size_t batch = 1) {
    for (auto& [id, s] : layers_) {
      Shape shape = s.v0.shape();
      shape[0] = batch;
      s.v = Tensor(shape);
      const std::size_t per = s.v0.size();
      for (std::size_t n = 0; n < batch; ++n)
        std::copy(s.v0.data(), s.v0.data() + per, s.v.data() + n * per);
    }
    fresh_ = true;
    batch_ = batch;
  }

  bool fresh() const noexcept { return fresh_; }
  std::size_t batch() const noexcept { return batch_; }
  void mark_used() noexcept { fresh_ = false; }

 private:
  std::map<std::string, SpikingLayerState> layers_;
  bool fresh_ = false;
  std::size_t batch_ = 0;
};

/// Build a state for every spiking layer of g. Layers absent from `v0s`
/// start at zero potential. The returned state is reset for batch size 1.
inline SpikingState make_spiking_state(const NetworkGraph& g,
                                       const std::map<std::string, Tensor>& thresholds,
                                       const std::map<std::string, Tensor>& v0s = {}) {
  const auto shapes = infer_shapes(g);
  SpikingState state;
  for (const auto& id : spiking_layers(g)) {
    auto th = thresholds.find(id);
    require(th != thresholds.end(), ErrorCode::kInvalidArgument,
            "no threshold for spiking layer '" + id + "'");
    require(shapes.count(id) != 0, ErrorCode::kValidation, "cannot infer shape of '" + id + "'");
    const Shape per = shapes.at(id);
    SpikingLayerState s;
    s.threshold = th->second;
    require(s.threshold.size() == 1 || s.threshold.size() == per[0], ErrorCode::kInvalidArgument,
            "threshold for '" + id + "' must be scalar or per-channel");
    for (float v : s.threshold.values())
      require(v > 0.0f && std::isfinite(v), ErrorCode::kInvalidArgument,
              "threshold for '" + id + "' must be positive");
    auto v0 = v0s.find(id);
    if (v0 != v0s.end()) {
      require(v0->second.size() == shape_numel(per), ErrorCode::kInvalidArgument,
              "initial potential for '" + id + "' has wrong size");
      s.v0 = v0->second.reshaped(batched(1, per));
    } else {
      s.v0 = Tensor(batched(1, per));
    }
    state.layers().emplace(id, std::move(s));
  }
  state.reset(1);
  return state;
}

/// One integrate-and-fire step with reset by subtraction:
/// v_tmp = v + drive; spike = vth where v_tmp >= vth; v = v_tmp - spike.
/// Returns the spike tensor (values 0 or vth).
inline Tensor if_layer_step(SpikingLayerState& s, const Tensor& drive) {
  require(s.v.shape() == drive.shape(), ErrorCode::kInvalidArgument,
          "drive shape " + shape_string(drive.shape()) + " does not match membrane shape " +
              shape_string(s.v.shape()));
  detail::check_threshold(s.threshold, drive);
  Tensor spikes(drive.shape());
  float* v = s.v.data();
  const float* d = drive.data();
  float* out = spikes.data();
  if (s.threshold.size() == 1) {
    const float th = s.threshold[0];
    for (std::size_t i = 0; i < drive.size(); ++i) {
      const float vt = v[i] + d[i];
      const float sp = vt >= th ? th : 0.0f;
      out[i] = sp;
      v[i] = vt - sp;
    }
  } else {
    for (std::size_t i = 0; i < drive.size(); ++i) {
      const float th = s.threshold[threshold_channel(drive, i)];
      const float vt = v[i] + d[i];
      const float sp = vt >= th ? th : 0.0f;
      out[i] = sp;
      v[i] = vt - sp;
    }
  }
  return spikes;
}

struct SpikeCounts {
  Shape shape;
  std::vector<std::uint32_t> counts;
};

struct SimulationResult {
  std::size_t steps = 0;
  std::map<std::string, SpikeCounts> spike_counts;
  std::map<std::string, Tensor> rates;  // vth * m / T per spiking layer
  Tensor accumulated_output;           // sum over steps of the output layer input
  /// Per-step spike tensors per layer, only when recording was requested.
  std::map<std::string, std::vector<Tensor>> spike_trains;
  /// Fraction of neurons per layer whose terminal potential left [0, vth).
  std::map<std::string, double> terminal_violation;

  /// Accumulated output divided by T, on the scale of the ANN logits.
  Tensor output_rate() const {
    Tensor out = accumulated_output;
    for (float& v : out.values()) v = static_cast<float>(static_cast<double>(v) / steps);
    return out;
  }
};

namespace detail {

inline void check_rewritten(const NetworkGraph& g) {
  for (const auto& n : g.nodes()) {
    if (n.kind == LayerKind::kBatchNorm)
      fail(ErrorCode::kMustFoldFirst, "BatchNorm node '" + n.id + "' must be folded before conversion");
    if (n.kind == LayerKind::kAvgPool)
      fail(ErrorCode::kUnsupportedTopology,
           "AvgPool node '" + n.id + "' must be rewritten to a depthwise conv before conversion");
  }
}

}  // namespace detail

/// Run the spiking network for T steps. The analog input drives the first
/// layer at every step; every ReLU node becomes an IF layer; the output
/// layer integrates its pre-synaptic input without spiking. Nodes that only
/// depend on the input are evaluated once, since their value is identical at
/// every step.
inline SimulationResult simulate_snn(const NetworkGraph& g, SpikingState& state, const Tensor& x,
                                     std::size_t T, bool record = false) {
  require(T >= 1, ErrorCode::kInvalidArgument, "T must be >= 1");
  detail::check_rewritten(g);
  detail::check_input(g, x);
  require(state.fresh(), ErrorCode::kStaleState,
          "spiking state must be reset before a new simulation");
  if (state.batch() != x.batch()) state.reset(x.batch());
  state.mark_used();

  const auto& nodes = g.nodes();
  std::vector<bool> is_static(nodes.size(), false);
  std::map<std::string, Tensor> static_values;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    if (n.kind == LayerKind::kReLU || n.kind == LayerKind::kOutput) continue;
    bool all_static = true;
    for (const auto& in : n.inputs) all_static = all_static && static_values.count(in);
    if (!all_static) continue;
    is_static[i] = true;
    if (n.kind == LayerKind::kInput) {
      static_values.emplace(n.id, x);
    } else {
      std::vector<const Tensor*> in;
      for (const auto& id : n.inputs) in.push_back(&static_values.at(id));
      static_values.emplace(n.id, evaluate_linear_node(n, in));
    }
  }

  SimulationResult result;
  result.steps = T;
  for (const auto& id : spiking_layers(g)) {
    const auto& s = state.layer(id);
    result.spike_counts[id] = SpikeCounts{s.v.shape(), std::vector<std::uint32_t>(s.v.size(), 0)};
  }

  const std::string& out_src = output_node(g).inputs.at(0);
  std::map<std::string, Tensor> step_values;
  std::vector<double> accumulator;  // output drive summed over steps
  auto value_of = [&](const std::string& id) -> const Tensor& {
    auto it = static_values.find(id);
    return it != static_values.end() ? it->second : step_values.at(id);
  };

  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      if (is_static[i] || n.kind == LayerKind::kOutput) continue;
      if (n.kind == LayerKind::kReLU) {
        auto& s = state.layer(n.id);
        Tensor spikes = if_layer_step(s, value_of(n.inputs[0]));
        auto& counts = result.spike_counts[n.id].counts;
        for (std::size_t k = 0; k < spikes.size(); ++k) counts[k] += spikes[k] != 0.0f;
        if (record) result.spike_trains[n.id].push_back(spikes);
        step_values[n.id] = std::move(spikes);
        continue;
      }
      std::vector<const Tensor*> in;
      for (const auto& id : n.inputs) in.push_back(&value_of(id));
      step_values[n.id] = evaluate_linear_node(n, in);
    }
    const Tensor& drive = value_of(out_src);
    if (t == 0) {
      result.accumulated_output = Tensor(drive.shape());
      accumulator.assign(drive.size(), 0.0);
    }
    for (std::size_t k = 0; k < drive.size(); ++k) accumulator[k] += drive[k];
  }
  for (std::size_t k = 0; k < accumulator.size(); ++k)
    result.accumulated_output[k] = static_cast<float>(accumulator[k]);

  for (const auto& [id, counts] : result.spike_counts) {
    const auto& s = state.layer(id);
    Tensor rate(counts.shape);
    std::size_t violations = 0;
    for (std::size_t k = 0; k < rate.size(); ++k) {
      const float th = detail::threshold_at(s.threshold, rate, k);
      rate[k] = rate_from_count(counts.counts[k], T, th);
      const float v = s.v[k];
      violations += (v < 0.0f || v >= th);
    }
    result.rates.emplace(id, std::move(rate));
    result.terminal_violation[id] =
        static_cast<double>(violations) / static_cast<double>(counts.counts.size());
  }
  return result;
}

/// Node values of the closed-form rate model: every ReLU node outputs
/// clipfloor of its input; everything else is evaluated on rates.
struct RateTrace {
  std::map<std::string, Tensor> values;
  Tensor output;

  const Tensor& at(const std::string& id) const {
    auto it = values.find(id);
    require(it != values.end(), ErrorCode::kInvalidArgument, "rate trace has no entry for '" + id + "'");
    return it->second;
  }
};

inline RateTrace expected_rate_forward(const NetworkGraph& g,
                                       const std::map<std::string, Tensor>& thresholds,
                                       const std::map<std::string, Tensor>& v0s, const Tensor& x,
                                       std::size_t T) {
  require(T >= 1, ErrorCode::kInvalidArgument, "T must be >= 1");
  detail::check_rewritten(g);
  detail::check_input(g, x);
  RateTrace trace;
  for (const auto& n : g.nodes()) {
    std::vector<const Tensor*> in;
    for (const auto& id : n.inputs) in.push_back(&trace.values.at(id));
    Tensor value;
    if (n.kind == LayerKind::kInput) {
      value = x;
    } else if (n.kind == LayerKind::kReLU) {
      auto th = thresholds.find(n.id);
      require(th != thresholds.end(), ErrorCode::kInvalidArgument,
              "no threshold for spiking layer '" + n.id + "'");
      auto v0 = v0s.find(n.id);
      value = clipfloor(*in[0], T, th->second, v0 == v0s.end() ? nullptr : &v0->second);
    } else {
      value = evaluate_linear_node(n, in);
    }
    if (n.kind == LayerKind::kOutput) trace.output = value;
    trace.values.emplace(n.id, std::move(value));
  }
  return trace;
}

/// Simulate in fixed-size chunks and return the output rates (accumulated
/// output / T) for all samples.
inline Tensor snn_output_rates(const NetworkGraph& g, const std::map<std::string, Tensor>& thresholds,
                               const std::map<std::string, Tensor>& v0s, const Tensor& x,
                               std::size_t T, std::size_t chunk = 256) {
  SpikingState state = make_spiking_state(g, thresholds, v0s);
  Tensor out;
  std::vector<float> buffer;
  Shape out_shape;
  for (std::size_t begin = 0; begin < x.batch(); begin += chunk) {
    const std::size_t count = std::min(chunk, x.batch() - begin);
    state.reset(count);
    SimulationResult r = simulate_snn(g, state, x.slice_batch(begin, count), T);
    Tensor rate = r.output_rate();
    out_shape = rate.shape();
    buffer.insert(buffer.end(), rate.values().begin(), rate.values().end());
  }
  out_shape[0] = x.batch();
  return Tensor(out_shape, std::move(buffer));
}

}  // namespace spikeforge
