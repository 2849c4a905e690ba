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
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikeforge/ann.hpp"
#include "spikeforge/snn.hpp"
#include "spikeforge/threshold.hpp"

namespace spikeforge {

// Energy per operation in relative units (not converted to joules).
constexpr double kAddEnergy = 0.9;
constexpr double kMulEnergy = 4.6;

struct LayerErrorReport {
  std::string layer_id;
  double e_norm = 0.0;            // Frobenius norm of e over the batch
  Tensor channel_mean;            // mu_c(e)
  double max_abs_channel_mean = 0.0;
  std::size_t total = 0;
  std::size_t floor_count = 0;    // interior elements with a fractional part
  std::size_t clip_count = 0;     // elements at or beyond either clip bound
  double floor_error_sq = 0.0;    // sum of e^2 over floor-branch elements
  double clip_error_sq = 0.0;     // sum of e^2 over clip-branch elements
  std::optional<double> terminal_violation;
};

/// Error report for one layer. ann_pre is the ANN pre-activation, snn_pre
/// the SNN-path pre-activation feeding clipfloor and `rate` the SNN output;
/// e = relu(ann_pre) - rate. Branches are classified on
/// u = T*snn_pre/vth + v0/vth: clip when u >= T or u < 0, floor when u is
/// interior and not an integer.
inline LayerErrorReport layer_error(const std::string& id, const Tensor& ann_pre,
                                    const Tensor& snn_pre, const Tensor& rate, std::size_t T,
                                    const Tensor& vth, const Tensor* v0 = nullptr) {
  require(ann_pre.shape() == snn_pre.shape() && ann_pre.shape() == rate.shape(),
          ErrorCode::kInvalidArgument, "layer_error shape mismatch for '" + id + "'");
  detail::check_threshold(vth, snn_pre);
  detail::check_v0(v0, snn_pre);
  LayerErrorReport r;
  r.layer_id = id;
  r.total = rate.size();
  const Tensor e = relu(ann_pre) - rate;
  r.e_norm = frobenius_norm(e);
  if (e.rank() == 2 || e.rank() == 4) {
    r.channel_mean = channel_spatial_mean(e, true);
    for (float m : r.channel_mean.values())
      r.max_abs_channel_mean = std::max(r.max_abs_channel_mean, static_cast<double>(std::fabs(m)));
  }
  for (std::size_t i = 0; i < rate.size(); ++i) {
    const double th = detail::threshold_at(vth, snn_pre, i);
    const double u = static_cast<double>(T) * snn_pre[i] / th + detail::v0_at(v0, snn_pre, i) / th;
    const double sq = static_cast<double>(e[i]) * e[i];
    if (u >= static_cast<double>(T) || u < 0.0) {
      ++r.clip_count;
      r.clip_error_sq += sq;
    } else if (u != std::floor(u)) {
      ++r.floor_count;
      r.floor_error_sq += sq;
    }
  }
  return r;
}

/// Reports for every spiking layer, from an ANN trace and the closed-form
/// rate trace of the converted network (and, optionally, a simulation for
/// the terminal-potential statistic).
inline std::vector<LayerErrorReport> layer_errors(const NetworkGraph& g, const ActivationTrace& ann,
                                                  const RateTrace& rates,
                                                  const ThresholdTable& thresholds,
                                                  const std::map<std::string, Tensor>& v0s,
                                                  std::size_t T,
                                                  const SimulationResult* sim = nullptr) {
  std::vector<LayerErrorReport> out;
  for (const auto& id : spiking_layers(g)) {
    const std::string& src = g.node(id).inputs.at(0);
    auto v0 = v0s.find(id);
    auto r = layer_error(id, ann.at(src), rates.at(src), rates.at(id), T,
                         thresholds.layers.at(id).values, v0 == v0s.end() ? nullptr : &v0->second);
    if (sim && sim->terminal_violation.count(id)) r.terminal_violation = sim->terminal_violation.at(id);
    out.push_back(std::move(r));
  }
  return out;
}

struct NormPair {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds() const { return lhs <= rhs; }
};

/// ||relu(a) - relu(b)|| against ||a - b||. Elementwise
/// |relu(a)-relu(b)| <= |a-b| holds in floating point too, so the sums of
/// squares compare exactly.
inline NormPair relu_contraction(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorCode::kInvalidArgument, "relu_contraction shape mismatch");
  NormPair p;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const float ra = a[i] > 0.0f ? a[i] : 0.0f, rb = b[i] > 0.0f ? b[i] : 0.0f;
    const double dr = static_cast<double>(ra) - rb, d = static_cast<double>(a[i]) - b[i];
    p.lhs += dr * dr;
    p.rhs += d * d;
  }
  p.lhs = std::sqrt(p.lhs);
  p.rhs = std::sqrt(p.rhs);
  return p;
}

struct ErrorPropagationReport {
  bool skipped = false;
  std::string reason;
  double lhs = 0.0;    // ||x - s|| at the input of the output layer
  double rhs = 0.0;    // ||sum of per-layer errors carried linearly to that point||
  double ratio = 0.0;  // lhs / rhs (0 when rhs == 0)
  std::vector<std::pair<std::string, double>> err_norms;  // ||Err|| per spiking layer
};

/// Compare the conversion error at the input of the output layer with the
/// per-layer clipfloor errors Err = clipfloor(z) - relu(z) (z on the SNN
/// path) pushed through the downstream weights, biases dropped and ReLU
/// taken as identity. Both sides are reported; no inequality is asserted.
inline ErrorPropagationReport lemma1_diagnostic(const NetworkGraph& g, const ActivationTrace& ann,
                                                const RateTrace& rates,
                                                const ThresholdTable& thresholds,
                                                const std::map<std::string, Tensor>& v0s,
                                                std::size_t T) {
  ErrorPropagationReport r;
  if (g.has_kind(LayerKind::kAdd)) {
    r.skipped = true;
    r.reason = "graph has residual Add nodes";
    return r;
  }
  const LayerNode& last = g.node(output_node(g).inputs.at(0));
  if (!last.has_weights()) {
    r.skipped = true;
    r.reason = "output is not produced by a Conv/Linear layer";
    return r;
  }
  const std::string& target = last.inputs.at(0);
  r.lhs = frobenius_norm(ann.at(target) - rates.at(target));

  const std::size_t target_index = g.index_of(target);
  std::optional<Tensor> total;
  for (const auto& id : spiking_layers(g)) {
    const std::size_t start = g.index_of(id);
    if (start > target_index) continue;
    const Tensor& z = rates.at(g.node(id).inputs.at(0));
    auto v0 = v0s.find(id);
    const Tensor err = clipfloor(z, T, thresholds.layers.at(id).values,
                                 v0 == v0s.end() ? nullptr : &v0->second) -
                       relu(z);
    r.err_norms.emplace_back(id, frobenius_norm(err));

    std::map<std::string, Tensor> carried{{id, err}};
    for (std::size_t i = start + 1; i <= target_index; ++i) {
      const LayerNode& n = g.nodes()[i];
      if (!carried.count(n.inputs.empty() ? std::string() : n.inputs[0])) continue;
      const Tensor& in = carried.at(n.inputs[0]);
      switch (n.kind) {
        case LayerKind::kConv: {
          ConvParams p = n.conv();
          p.bias = Tensor(p.bias.shape(), 0.0f);
          carried[n.id] = conv2d_forward(in, p);
          break;
        }
        case LayerKind::kLinear:
          carried[n.id] = linear_forward(in, n.linear().weight, Tensor(n.linear().bias.shape(), 0.0f));
          break;
        case LayerKind::kFlatten:
          carried[n.id] = in.reshaped({in.batch(), in.sample_size()});
          break;
        default:
          carried[n.id] = in;
      }
    }
    const Tensor& at_target = carried.at(target);
    total = total ? *total + at_target : at_target;
  }
  r.rhs = total ? frobenius_norm(*total) : 0.0;
  r.ratio = r.rhs > 0.0 ? r.lhs / r.rhs : 0.0;
  return r;
}

struct FiringStats {
  std::string layer_id;
  double mean = 0.0;  // spikes / (T * neurons)
  double min = 0.0;   // over neurons
  double max = 0.0;
  std::uint64_t spikes = 0;
  std::size_t neurons = 0;
};

inline std::vector<FiringStats> firing_rate_stats(const SimulationResult& result) {
  std::vector<FiringStats> out;
  const double T = static_cast<double>(result.steps);
  for (const auto& [id, c] : result.spike_counts) {
    FiringStats s;
    s.layer_id = id;
    s.neurons = c.counts.size();
    s.min = 1.0;
    s.max = 0.0;
    for (auto m : c.counts) {
      s.spikes += m;
      s.min = std::min(s.min, m / T);
      s.max = std::max(s.max, m / T);
    }
    if (s.neurons == 0) s.min = 0.0;
    s.mean = s.neurons ? static_cast<double>(s.spikes) / (T * static_cast<double>(s.neurons)) : 0.0;
    out.push_back(s);
  }
  return out;
}

namespace detail {

// Number of output windows along one axis that read input coordinate `pos`
// (padding positions never count).
inline std::size_t windows_covering(std::size_t pos, std::size_t in, std::size_t kernel,
                                    std::size_t stride, std::size_t pad) {
  const std::size_t out = conv_out_extent(in, kernel, stride, pad);
  std::size_t count = 0;
  for (std::size_t o = 0; o < out; ++o) {
    const std::size_t start = o * stride;  // in padded coordinates
    const std::size_t p = pos + pad;
    if (p >= start && p < start + kernel) ++count;
  }
  return count;
}

}  // namespace detail

/// Synaptic fan-out of every element of node `id`'s per-sample output:
/// the number of multiply-accumulates its value takes part in downstream.
/// Flatten and Output are transparent; an Add passes its operand on, and a
/// ReLU reached through an Add counts one operation per element.
inline std::vector<std::uint64_t> fan_out(const NetworkGraph& g, const std::string& id,
                                          const std::map<std::string, Shape>& shapes) {
  const Shape& shape = shapes.at(id);
  const std::size_t n = shape_numel(shape);
  std::vector<std::uint64_t> out(n, 0);
  for (const auto& cid : g.consumers(id)) {
    const LayerNode& c = g.node(cid);
    switch (c.kind) {
      case LayerKind::kConv: {
        const auto& p = c.conv();
        const std::size_t C = shape[0], H = shape[1], W = shape[2];
        const std::size_t per_group = p.out_channels() / p.groups;
        std::vector<std::size_t> ys(H), xs(W);
        for (std::size_t y = 0; y < H; ++y)
          ys[y] = detail::windows_covering(y, H, p.kernel_h(), p.stride.h, p.padding.h);
        for (std::size_t x = 0; x < W; ++x)
          xs[x] = detail::windows_covering(x, W, p.kernel_w(), p.stride.w, p.padding.w);
        for (std::size_t ch = 0; ch < C; ++ch)
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) out[(ch * H + y) * W + x] += per_group * ys[y] * xs[x];
        break;
      }
      case LayerKind::kLinear:
        for (auto& v : out) v += c.linear().weight.dim(0);
        break;
      case LayerKind::kFlatten:
      case LayerKind::kAdd:
      case LayerKind::kOutput: {
        const auto down = fan_out(g, cid, shapes);
        for (std::size_t i = 0; i < n; ++i) out[i] += down[i];
        break;
      }
      case LayerKind::kReLU:
        for (auto& v : out) v += 1;
        break;
      default:
        break;
    }
  }
  return out;
}

struct EnergyReport {
  double snn_energy = 0.0;
  double ann_energy = 0.0;
  double ratio = 0.0;
  std::uint64_t synaptic_ops = 0;  // spikes x fan-out
  std::uint64_t ann_macs = 0;
};

/// SNN: one addition per delivered spike (spikes x fan-out x 0.9). ANN: one
/// multiply and one add per MAC over the same batch; padded positions are
/// not counted on either side.
inline EnergyReport energy_estimate(const SimulationResult& result, const NetworkGraph& g) {
  const auto shapes = infer_shapes(g);
  EnergyReport r;
  for (const auto& [id, counts] : result.spike_counts) {
    const auto fo = fan_out(g, id, shapes);
    const std::size_t per = fo.size();
    for (std::size_t i = 0; i < counts.counts.size(); ++i) r.synaptic_ops += counts.counts[i] * fo[i % per];
  }
  const std::size_t batch = result.accumulated_output.empty() ? 1 : result.accumulated_output.batch();
  for (const auto& n : g.nodes()) {
    if (!n.has_weights()) continue;
    const std::string& src = n.inputs.at(0);
    const Shape& in = shapes.at(src);
    std::uint64_t macs = 0;
    if (n.kind == LayerKind::kLinear) {
      macs = static_cast<std::uint64_t>(in[0]) * n.linear().weight.dim(0);
    } else {
      const auto& p = n.conv();
      const std::size_t per_group = p.out_channels() / p.groups;
      std::uint64_t ycov = 0, xcov = 0;
      for (std::size_t y = 0; y < in[1]; ++y) ycov += detail::windows_covering(y, in[1], p.kernel_h(), p.stride.h, p.padding.h);
      for (std::size_t x = 0; x < in[2]; ++x) xcov += detail::windows_covering(x, in[2], p.kernel_w(), p.stride.w, p.padding.w);
      macs = static_cast<std::uint64_t>(in[0]) * per_group * ycov * xcov;
    }
    r.ann_macs += macs * batch;
  }
  r.snn_energy = kAddEnergy * static_cast<double>(r.synaptic_ops);
  r.ann_energy = (kMulEnergy + kAddEnergy) * static_cast<double>(r.ann_macs);
  r.ratio = r.ann_energy > 0.0 ? r.snn_energy / r.ann_energy : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Report formatting

inline nlohmann::json to_json(const LayerErrorReport& r) {
  nlohmann::json j = {{"layer", r.layer_id},
                      {"e_norm", r.e_norm},
                      {"max_abs_channel_mean", r.max_abs_channel_mean},
                      {"total", r.total},
                      {"floor_count", r.floor_count},
                      {"clip_count", r.clip_count},
                      {"floor_error_sq", r.floor_error_sq},
                      {"clip_error_sq", r.clip_error_sq}};
  if (r.terminal_violation) j["terminal_violation"] = *r.terminal_violation;
  return j;
}

inline nlohmann::json to_json(const FiringStats& s) {
  return {{"layer", s.layer_id}, {"mean", s.mean}, {"min", s.min},
          {"max", s.max},        {"spikes", s.spikes}, {"neurons", s.neurons}};
}

inline nlohmann::json to_json(const EnergyReport& e) {
  return {{"snn_energy", e.snn_energy}, {"ann_energy", e.ann_energy}, {"ratio", e.ratio},
          {"synaptic_ops", e.synaptic_ops}, {"ann_macs", e.ann_macs}, {"units", "relative"}};
}

inline nlohmann::json to_json(const ErrorPropagationReport& r) {
  nlohmann::json j = {{"skipped", r.skipped}};
  if (r.skipped) {
    j["reason"] = r.reason;
    return j;
  }
  j["lhs"] = r.lhs;
  j["rhs"] = r.rhs;
  j["ratio"] = r.ratio;
  nlohmann::json norms = nlohmann::json::object();
  for (const auto& [id, v] : r.err_norms) norms[id] = v;
  j["err_norms"] = norms;
  return j;
}

inline std::string format_table(const std::vector<std::string>& header,
                                const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size() && i < width.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < width.size(); ++i) {
      const std::string cell = i < cells.size() ? cells[i] : "";
      os << (i ? "  " : "") << cell << std::string(width[i] - cell.size(), ' ');
    }
    os << '\n';
  };
  line(header);
  std::vector<std::string> rule;
  for (auto w : width) rule.emplace_back(w, '-');
  line(rule);
  for (const auto& row : rows) line(row);
  return os.str();
}

inline std::string fmt_double(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

}  // namespace spikeforge
