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

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "spikeforge/error.hpp"
#include "spikeforge/kernels.hpp"
#include "spikeforge/tensor.hpp"

namespace spikeforge {

enum class LayerKind { kInput, kConv, kLinear, kBatchNorm, kAvgPool, kReLU, kAdd, kFlatten, kOutput };

inline const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kInput: return "Input";
    case LayerKind::kConv: return "Conv";
    case LayerKind::kLinear: return "Linear";
    case LayerKind::kBatchNorm: return "BatchNorm";
    case LayerKind::kAvgPool: return "AvgPool";
    case LayerKind::kReLU: return "ReLU";
    case LayerKind::kAdd: return "Add";
    case LayerKind::kFlatten: return "Flatten";
    case LayerKind::kOutput: return "Output";
  }
  return "?";
}

inline std::optional<LayerKind> layer_kind_from_string(const std::string& s) {
  for (LayerKind k : {LayerKind::kInput, LayerKind::kConv, LayerKind::kLinear,
                      LayerKind::kBatchNorm, LayerKind::kAvgPool, LayerKind::kReLU,
                      LayerKind::kAdd, LayerKind::kFlatten, LayerKind::kOutput})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

struct LinearParams {
  Tensor weight;  // [O, I]
  Tensor bias;    // [O]
};

struct PoolParams {
  Pair kernel{2, 2};
  Pair stride{2, 2};
};

using LayerParams =
    std::variant<std::monostate, ConvParams, LinearParams, BatchNormParams, PoolParams>;

struct LayerNode {
  std::string id;
  LayerKind kind = LayerKind::kInput;
  LayerParams params;
  std::vector<std::string> inputs;

  ConvParams& conv() { return std::get<ConvParams>(params); }
  const ConvParams& conv() const { return std::get<ConvParams>(params); }
  LinearParams& linear() { return std::get<LinearParams>(params); }
  const LinearParams& linear() const { return std::get<LinearParams>(params); }
  BatchNormParams& batchnorm() { return std::get<BatchNormParams>(params); }
  const BatchNormParams& batchnorm() const { return std::get<BatchNormParams>(params); }
  const PoolParams& pool() const { return std::get<PoolParams>(params); }

  bool has_weights() const { return kind == LayerKind::kConv || kind == LayerKind::kLinear; }

  Tensor& weight() { return kind == LayerKind::kConv ? conv().weight : linear().weight; }
  const Tensor& weight() const { return kind == LayerKind::kConv ? conv().weight : linear().weight; }
  Tensor& bias() { return kind == LayerKind::kConv ? conv().bias : linear().bias; }
  const Tensor& bias() const { return kind == LayerKind::kConv ? conv().bias : linear().bias; }
};

struct GraphMetadata {
  Shape input_shape;  // per sample: {C,H,W} or {F}
  std::size_t class_count = 0;
  std::uint32_t format_version = 1;

  friend bool operator==(const GraphMetadata&, const GraphMetadata&) = default;
};

/// Topologically ordered layer list. Rewrites produce new graphs; a graph is
/// not mutated once handed to the engines.
class NetworkGraph {
 public:
  NetworkGraph() = default;
  NetworkGraph(std::vector<LayerNode> nodes, GraphMetadata meta)
      : nodes_(std::move(nodes)), meta_(std::move(meta)) {
    reindex();
  }

  const std::vector<LayerNode>& nodes() const noexcept { return nodes_; }
  std::vector<LayerNode>& mutable_nodes() noexcept { return nodes_; }
  const GraphMetadata& metadata() const noexcept { return meta_; }
  GraphMetadata& mutable_metadata() noexcept { return meta_; }

  std::size_t size() const noexcept { return nodes_.size(); }

  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    require(it != index_.end(), ErrorCode::kInvalidArgument, "unknown node id '" + id + "'");
    return it->second;
  }

  const LayerNode& node(const std::string& id) const { return nodes_[index_of(id)]; }
  LayerNode& node(const std::string& id) { return nodes_[index_of(id)]; }

  /// Ids of the nodes that list `id` as an input, in graph order.
  std::vector<std::string> consumers(const std::string& id) const {
    std::vector<std::string> out;
    for (const auto& n : nodes_)
      for (const auto& in : n.inputs)
        if (in == id) {
          out.push_back(n.id);
          break;
        }
    return out;
  }

  /// Re-derive the id index after structural edits.
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < nodes_.size(); ++i) index_[nodes_[i].id] = i;
  }

  bool has_kind(LayerKind kind) const {
    for (const auto& n : nodes_)
      if (n.kind == kind) return true;
    return false;
  }

 private:
  std::vector<LayerNode> nodes_;
  GraphMetadata meta_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline bool operator==(const ConvParams& a, const ConvParams& b) {
  return a.weight == b.weight && a.bias == b.bias && a.stride == b.stride &&
         a.padding == b.padding && a.groups == b.groups;
}
inline bool operator==(const LinearParams& a, const LinearParams& b) {
  return a.weight == b.weight && a.bias == b.bias;
}
inline bool operator==(const BatchNormParams& a, const BatchNormParams& b) {
  return a.gamma == b.gamma && a.beta == b.beta && a.running_mean == b.running_mean &&
         a.running_var == b.running_var &&
         std::memcmp(&a.epsilon, &b.epsilon, sizeof(float)) == 0;
}
inline bool operator==(const PoolParams& a, const PoolParams& b) {
  return a.kernel == b.kernel && a.stride == b.stride;
}
inline bool operator==(const LayerNode& a, const LayerNode& b) {
  return a.id == b.id && a.kind == b.kind && a.inputs == b.inputs && a.params == b.params;
}
inline bool operator==(const NetworkGraph& a, const NetworkGraph& b) {
  return a.metadata() == b.metadata() && a.nodes() == b.nodes();
}

/// Per-sample output shape of every node, or nullopt where propagation fails.
/// Failures are described by validate_graph.
inline std::map<std::string, Shape> infer_shapes(const NetworkGraph& g,
                                                 std::vector<std::string>* problems = nullptr) {
  std::map<std::string, Shape> shapes;
  auto report = [&](const LayerNode& n, const std::string& msg) {
    if (problems) problems->push_back("shape: node '" + n.id + "' " + msg);
  };
  for (const auto& n : g.nodes()) {
    std::vector<const Shape*> in;
    bool missing = false;
    for (const auto& id : n.inputs) {
      auto it = shapes.find(id);
      if (it == shapes.end()) {
        missing = true;
        break;
      }
      in.push_back(&it->second);
    }
    if (missing) continue;
    switch (n.kind) {
      case LayerKind::kInput:
        shapes[n.id] = g.metadata().input_shape;
        break;
      case LayerKind::kConv: {
        if (in.size() != 1) break;
        const Shape& s = *in[0];
        const auto& p = n.conv();
        if (s.size() != 3) {
          report(n, "expects a C,H,W input, got " + shape_string(s));
          break;
        }
        if (p.weight.rank() != 4 || p.groups == 0 || s[0] != p.in_channels() ||
            p.weight.dim(0) % p.groups != 0 || p.bias.size() != p.weight.dim(0)) {
          report(n, "channel/parameter mismatch for input " + shape_string(s));
          break;
        }
        const std::size_t oh = conv_out_extent(s[1], p.kernel_h(), p.stride.h, p.padding.h);
        const std::size_t ow = conv_out_extent(s[2], p.kernel_w(), p.stride.w, p.padding.w);
        if (oh == 0 || ow == 0) {
          report(n, "stride/padding give non-integer output dims for input " + shape_string(s));
          break;
        }
        shapes[n.id] = {p.out_channels(), oh, ow};
        break;
      }
      case LayerKind::kLinear: {
        if (in.size() != 1) break;
        const auto& p = n.linear();
        if (in[0]->size() != 1 || p.weight.rank() != 2 || p.weight.dim(1) != (*in[0])[0] ||
            p.bias.size() != p.weight.dim(0)) {
          report(n, "weight " + shape_string(p.weight.shape()) + " incompatible with input " +
                        shape_string(*in[0]));
          break;
        }
        shapes[n.id] = {p.weight.dim(0)};
        break;
      }
      case LayerKind::kBatchNorm: {
        if (in.size() != 1) break;
        if (in[0]->empty() || (*in[0])[0] != n.batchnorm().channels()) {
          report(n, "channel count mismatch");
          break;
        }
        shapes[n.id] = *in[0];
        break;
      }
      case LayerKind::kAvgPool: {
        if (in.size() != 1) break;
        const Shape& s = *in[0];
        const auto& p = n.pool();
        if (s.size() != 3) {
          report(n, "expects a C,H,W input");
          break;
        }
        const std::size_t oh = conv_out_extent(s[1], p.kernel.h, p.stride.h, 0);
        const std::size_t ow = conv_out_extent(s[2], p.kernel.w, p.stride.w, 0);
        if (oh == 0 || ow == 0) {
          report(n, "pool geometry gives non-integer output dims");
          break;
        }
        shapes[n.id] = {s[0], oh, ow};
        break;
      }
      case LayerKind::kReLU:
      case LayerKind::kOutput:
        if (in.size() == 1) shapes[n.id] = *in[0];
        break;
      case LayerKind::kFlatten:
        if (in.size() == 1) shapes[n.id] = {shape_numel(*in[0])};
        break;
      case LayerKind::kAdd:
        if (in.size() != 2) break;
        if (*in[0] != *in[1]) {
          report(n, "operand shapes differ: " + shape_string(*in[0]) + " vs " +
                        shape_string(*in[1]));
          break;
        }
        shapes[n.id] = *in[0];
        break;
    }
  }
  return shapes;
}

/// Empty iff the structural invariants hold and shapes propagate from the
/// Input node to the Output node.
inline std::vector<std::string> validate_graph(const NetworkGraph& g) {
  std::vector<std::string> v;
  std::size_t inputs = 0, outputs = 0;
  std::set<std::string> seen;
  for (const auto& n : g.nodes()) {
    if (seen.count(n.id)) v.push_back("duplicate: node id '" + n.id + "' repeated");
    if (n.kind == LayerKind::kInput) ++inputs;
    if (n.kind == LayerKind::kOutput) ++outputs;

    const std::size_t want = n.kind == LayerKind::kInput ? 0 : n.kind == LayerKind::kAdd ? 2 : 1;
    if (n.inputs.size() != want)
      v.push_back("arity: " + std::string(to_string(n.kind)) + " node '" + n.id + "' has " +
                  std::to_string(n.inputs.size()) + " inputs, expected " + std::to_string(want));
    for (const auto& in : n.inputs)
      if (!seen.count(in))
        v.push_back("order: node '" + n.id + "' input '" + in +
                    "' is not defined earlier in the graph");

    switch (n.kind) {
      case LayerKind::kConv:
        if (!std::holds_alternative<ConvParams>(n.params)) v.push_back("params: '" + n.id + "'");
        break;
      case LayerKind::kLinear:
        if (!std::holds_alternative<LinearParams>(n.params)) v.push_back("params: '" + n.id + "'");
        break;
      case LayerKind::kBatchNorm:
        if (!std::holds_alternative<BatchNormParams>(n.params)) {
          v.push_back("params: '" + n.id + "'");
        } else {
          const auto& bn = n.batchnorm();
          const std::size_t c = bn.gamma.size();
          if (bn.beta.size() != c || bn.running_mean.size() != c || bn.running_var.size() != c)
            v.push_back("batchnorm: '" + n.id + "' per-channel arrays differ in length");
          else
            for (std::size_t i = 0; i < c; ++i)
              if (!(bn.running_var[i] + bn.epsilon > 0.0f)) {
                v.push_back("batchnorm: '" + n.id + "' running_var + epsilon must be > 0");
                break;
              }
        }
        break;
      case LayerKind::kAvgPool:
        if (!std::holds_alternative<PoolParams>(n.params))
          v.push_back("params: '" + n.id + "'");
        else if (n.pool().kernel.h < 1 || n.pool().kernel.w < 1 || n.pool().stride.h < 1 ||
                 n.pool().stride.w < 1)
          v.push_back("pool: '" + n.id + "' kernel and stride extents must be >= 1");
        break;
      default:
        break;
    }
    seen.insert(n.id);
  }
  if (inputs != 1) v.push_back("structure: expected exactly one Input node, found " + std::to_string(inputs));
  if (outputs != 1) v.push_back("structure: expected exactly one Output node, found " + std::to_string(outputs));
  if (!v.empty()) return v;

  std::vector<std::string> shape_problems;
  const auto shapes = infer_shapes(g, &shape_problems);
  v.insert(v.end(), shape_problems.begin(), shape_problems.end());
  for (const auto& n : g.nodes())
    if (n.kind == LayerKind::kOutput && !shapes.count(n.id) && shape_problems.empty())
      v.push_back("shape: output shape could not be derived");
  return v;
}

inline const LayerNode& output_node(const NetworkGraph& g) {
  for (const auto& n : g.nodes())
    if (n.kind == LayerKind::kOutput) return n;
  fail(ErrorCode::kValidation, "graph has no Output node");
}

inline const LayerNode& input_node(const NetworkGraph& g) {
  for (const auto& n : g.nodes())
    if (n.kind == LayerKind::kInput) return n;
  fail(ErrorCode::kValidation, "graph has no Input node");
}

/// ReLU nodes in graph order. In the spiking network each one becomes a layer
/// of IF neurons; the node feeding it holds the weights that drive them.
inline std::vector<std::string> spiking_layers(const NetworkGraph& g) {
  std::vector<std::string> ids;
  for (const auto& n : g.nodes())
    if (n.kind == LayerKind::kReLU) ids.push_back(n.id);
  return ids;
}

/// Evaluate a node that is linear in its inputs (everything except ReLU,
/// Input and Output). BatchNorm and AvgPool are evaluated directly.
inline Tensor evaluate_linear_node(const LayerNode& n, std::span<const Tensor* const> inputs) {
  switch (n.kind) {
    case LayerKind::kConv:
      return conv2d_forward(*inputs[0], n.conv());
    case LayerKind::kLinear:
      return linear_forward(*inputs[0], n.linear().weight, n.linear().bias);
    case LayerKind::kBatchNorm:
      return batchnorm_inference(*inputs[0], n.batchnorm());
    case LayerKind::kAvgPool:
      return avg_pool2d(*inputs[0], n.pool().kernel, n.pool().stride);
    case LayerKind::kFlatten: {
      const Tensor& x = *inputs[0];
      return x.reshaped({x.batch(), x.sample_size()});
    }
    case LayerKind::kAdd:
      return *inputs[0] + *inputs[1];
    case LayerKind::kOutput:
      return *inputs[0];
    default:
      fail(ErrorCode::kInvalidArgument,
           std::string("node kind ") + to_string(n.kind) + " is not a linear node");
  }
}

/// Batched input shape {N, per-sample...}.
inline Shape batched(std::size_t n, const Shape& per_sample) {
  Shape s{n};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

}  // namespace spikeforge
