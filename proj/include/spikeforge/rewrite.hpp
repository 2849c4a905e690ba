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
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "spikeforge/graph.hpp"
#include "spikeforge/threshold.hpp"

namespace spikeforge {

namespace detail {

inline void redirect_consumers(std::vector<LayerNode>& nodes, const std::string& from,
                               const std::string& to) {
  for (auto& n : nodes)
    for (auto& in : n.inputs)
      if (in == from) in = to;
}

}  // namespace detail

/// Absorb every BatchNorm into the Conv/Linear feeding it:
/// W <- W*gamma/sigma, b <- beta + (b - mean)*gamma/sigma with
/// sigma = sqrt(running_var + eps). The fused node keeps the conv's id.
inline NetworkGraph fold_batchnorm(const NetworkGraph& g) {
  std::vector<LayerNode> nodes = g.nodes();
  std::vector<LayerNode> out;
  out.reserve(nodes.size());
  std::map<std::string, std::size_t> pos;
  for (auto& n : nodes) {
    if (n.kind != LayerKind::kBatchNorm) {
      pos[n.id] = out.size();
      out.push_back(std::move(n));
      continue;
    }
    require(n.inputs.size() == 1 && pos.count(n.inputs[0]), ErrorCode::kUnsupportedTopology,
            "BatchNorm '" + n.id + "' has no single predecessor");
    LayerNode& prev = out[pos.at(n.inputs[0])];
    require(prev.has_weights(), ErrorCode::kUnsupportedTopology,
            "BatchNorm '" + n.id + "' follows " + to_string(prev.kind) + " node '" + prev.id +
                "'; only Conv or Linear can absorb it");
    require(g.consumers(prev.id).size() == 1, ErrorCode::kUnsupportedTopology,
            "cannot fold BatchNorm '" + n.id + "': '" + prev.id + "' has other consumers");
    const BatchNormParams& bn = n.batchnorm();
    Tensor& w = prev.weight();
    Tensor& b = prev.bias();
    require(bn.channels() == w.dim(0), ErrorCode::kUnsupportedTopology,
            "BatchNorm '" + n.id + "' channel count does not match '" + prev.id + "'");
    const std::size_t per_out = w.size() / w.dim(0);
    for (std::size_t c = 0; c < bn.channels(); ++c) {
      const float scale = bn.gamma[c] * (1.0f / std::sqrt(bn.running_var[c] + bn.epsilon));
      for (std::size_t i = 0; i < per_out; ++i) w[c * per_out + i] *= scale;
      b[c] = bn.beta[c] + (b[c] - bn.running_mean[c]) * scale;
    }
    detail::redirect_consumers(nodes, n.id, prev.id);
    for (auto& done : out)
      for (auto& in : done.inputs)
        if (in == n.id) in = prev.id;
  }
  return NetworkGraph(std::move(out), g.metadata());
}

/// Replace each AvgPool by a depthwise Conv with constant weights
/// 1/(kH*kW), zero bias and the pool's stride. When the pool reads a ReLU
/// (non-negative) map, a ReLU node "<id>/relu" is placed after the conv so
/// the pooled values are re-encoded as spikes; on non-negative inputs this
/// does not change the ANN function.
inline NetworkGraph avgpool_to_depthwise(const NetworkGraph& g) {
  if (!g.has_kind(LayerKind::kAvgPool)) return g;
  const auto shapes = infer_shapes(g);
  std::vector<LayerNode> nodes = g.nodes();
  std::vector<LayerNode> out;
  out.reserve(nodes.size() + 4);
  std::map<std::string, LayerKind> kinds;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    LayerNode n = nodes[i];
    if (n.kind != LayerKind::kAvgPool) {
      kinds[n.id] = n.kind;
      out.push_back(std::move(n));
      continue;
    }
    require(shapes.count(n.inputs.at(0)) != 0, ErrorCode::kValidation,
            "cannot infer channel count feeding '" + n.id + "'");
    const std::size_t C = shapes.at(n.inputs[0]).at(0);
    const PoolParams pool = n.pool();
    const float w = 1.0f / static_cast<float>(pool.kernel.h * pool.kernel.w);
    ConvParams conv;
    conv.weight = Tensor({C, 1, pool.kernel.h, pool.kernel.w}, w);
    conv.bias = Tensor({C}, 0.0f);
    conv.stride = pool.stride;
    conv.padding = {0, 0};
    conv.groups = C;
    n.kind = LayerKind::kConv;
    n.params = std::move(conv);
    const bool non_negative = kinds.at(n.inputs[0]) == LayerKind::kReLU;
    const std::string id = n.id;
    kinds[id] = LayerKind::kConv;
    out.push_back(std::move(n));
    if (non_negative) {
      const std::string relu_id = id + "/relu";
      for (std::size_t j = i + 1; j < nodes.size(); ++j)
        for (auto& in : nodes[j].inputs)
          if (in == id) in = relu_id;
      out.push_back(LayerNode{relu_id, LayerKind::kReLU, std::monostate{}, {id}});
      kinds[relu_id] = LayerKind::kReLU;
    }
  }
  return NetworkGraph(std::move(out), g.metadata());
}

/// BN folding followed by the AvgPool rewrite.
inline NetworkGraph prepare_for_snn(const NetworkGraph& g) {
  return avgpool_to_depthwise(fold_batchnorm(g));
}

struct NormalizedNetwork {
  NetworkGraph graph;
  ThresholdTable thresholds;
  std::map<std::string, Tensor> v0;
};

/// Rescale weights so every spiking layer fires unit spikes with threshold 1:
/// W <- W * vth_in / vth_out, b <- b / vth_out, v0 <- v0 / vth_out. The
/// input image has amplitude 1. Layers that do not feed an IF layer (the
/// output layer, pooling convs without ReLU) absorb the incoming amplitude
/// only: W <- W * vth_in. Spike timing is unchanged.
inline NormalizedNetwork normalize_thresholds(const NetworkGraph& g, const ThresholdTable& table,
                                              const std::map<std::string, Tensor>& v0 = {}) {
  std::map<std::string, double> th;
  for (const auto& id : spiking_layers(g)) {
    auto it = table.layers.find(id);
    require(it != table.layers.end(), ErrorCode::kInvalidArgument,
            "no threshold for spiking layer '" + id + "'");
    require(it->second.values.size() == 1, ErrorCode::kInvalidArgument,
            "weight normalization needs a scalar threshold for '" + id + "'");
    require(it->second.values[0] > 0.0f, ErrorCode::kInvalidArgument,
            "threshold for '" + id + "' must be > 0");
    th[id] = it->second.values[0];
  }

  NormalizedNetwork result{g, table, v0};
  std::map<std::string, double> amplitude;  // divisor applied to each node's output
  for (auto& n : result.graph.mutable_nodes()) {
    switch (n.kind) {
      case LayerKind::kInput:
        amplitude[n.id] = 1.0;
        break;
      case LayerKind::kConv:
      case LayerKind::kLinear: {
        const double in_amp = amplitude.at(n.inputs[0]);
        const auto consumers = g.consumers(n.id);
        const bool drives_if =
            consumers.size() == 1 && g.node(consumers[0]).kind == LayerKind::kReLU;
        const double out_amp = drives_if ? th.at(consumers[0]) : 1.0;
        const double wscale = in_amp / out_amp;
        if (wscale != 1.0)
          for (float& w : n.weight().values()) w = static_cast<float>(w * wscale);
        if (out_amp != 1.0)
          for (float& b : n.bias().values()) b = static_cast<float>(b / out_amp);
        amplitude[n.id] = out_amp;
        break;
      }
      case LayerKind::kReLU: {
        const LayerNode& prev = g.node(n.inputs[0]);
        require(prev.has_weights() && g.consumers(prev.id).size() == 1,
                ErrorCode::kUnsupportedTopology,
                "weight normalization needs '" + n.id + "' to be fed by its own Conv/Linear");
        amplitude[n.id] = th.at(n.id);
        auto it = result.v0.find(n.id);
        if (it != result.v0.end())
          for (float& v : it->second.values()) v = static_cast<float>(v / th.at(n.id));
        break;
      }
      case LayerKind::kAdd: {
        const double a = amplitude.at(n.inputs[0]), b = amplitude.at(n.inputs[1]);
        require(a == b, ErrorCode::kUnsupportedTopology,
                "Add node '" + n.id + "' joins signals of different spike amplitude");
        amplitude[n.id] = a;
        break;
      }
      case LayerKind::kBatchNorm:
        fail(ErrorCode::kMustFoldFirst, "fold BatchNorm before weight normalization");
      case LayerKind::kAvgPool:
        fail(ErrorCode::kUnsupportedTopology, "rewrite AvgPool before weight normalization");
      default:
        amplitude[n.id] = amplitude.at(n.inputs[0]);
    }
  }
  for (auto& [id, c] : result.thresholds.layers) c.values = Tensor({1}, 1.0f);
  return result;
}

}  // namespace spikeforge
