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

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spikeforge/graph.hpp"

namespace spikeforge {

/// Node outputs from one forward pass. Conv/Linear entries hold
/// pre-activations z; ReLU entries hold post-activations x = relu(z).
struct ActivationTrace {
  std::map<std::string, Tensor> outputs;

  const Tensor& at(const std::string& id) const {
    auto it = outputs.find(id);
    require(it != outputs.end(), ErrorCode::kInvalidArgument, "trace has no entry for '" + id + "'");
    return it->second;
  }
};

struct ForwardResult {
  Tensor output;
  std::optional<ActivationTrace> trace;
};

namespace detail {

inline void check_input(const NetworkGraph& g, const Tensor& x) {
  const Shape& per = g.metadata().input_shape;
  require(x.rank() == per.size() + 1 &&
              std::equal(per.begin(), per.end(), x.shape().begin() + 1),
          ErrorCode::kInvalidArgument,
          "input shape " + shape_string(x.shape()) + " does not match model input " +
              shape_string(per));
}

inline ForwardResult forward(const NetworkGraph& g, const Tensor& x, bool capture,
                             bool allow_batchnorm) {
  check_input(g, x);
  std::map<std::string, Tensor> values;
  Tensor output;
  for (const auto& n : g.nodes()) {
    if (n.kind == LayerKind::kBatchNorm && !allow_batchnorm)
      fail(ErrorCode::kMustFoldFirst,
           "BatchNorm node '" + n.id + "' must be folded before running the ANN engine");
    std::vector<const Tensor*> in;
    for (const auto& id : n.inputs) in.push_back(&values.at(id));
    Tensor value;
    switch (n.kind) {
      case LayerKind::kInput:
        value = x;
        break;
      case LayerKind::kReLU:
        value = relu(*in[0]);
        break;
      default:
        value = evaluate_linear_node(n, in);
    }
    if (n.kind == LayerKind::kOutput) output = value;
    values.emplace(n.id, std::move(value));
  }
  ForwardResult r{std::move(output), std::nullopt};
  if (capture) r.trace = ActivationTrace{std::move(values)};
  return r;
}

}  // namespace detail

/// Reference ANN forward on a BN-folded graph. ReLU is applied only where
/// the graph has a ReLU node; the final layer yields raw logits.
inline ForwardResult ann_forward(const NetworkGraph& g, const Tensor& x, bool capture = false) {
  return detail::forward(g, x, capture, /*allow_batchnorm=*/false);
}

/// Forward pass of an unrewritten graph (BatchNorm evaluated in inference
/// mode). Used to check that rewrites preserve the network function.
inline ForwardResult reference_forward(const NetworkGraph& g, const Tensor& x,
                                       bool capture = false) {
  return detail::forward(g, x, capture, /*allow_batchnorm=*/true);
}

inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  require(logits.rank() == 2, ErrorCode::kInvalidArgument, "argmax_rows expects [N,K]");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  std::vector<std::size_t> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (logits[n * K + k] > logits[n * K + best]) best = k;
    out[n] = best;
  }
  return out;
}

/// Percentage of rows whose argmax equals the label.
inline double accuracy_percent(const Tensor& logits, const std::vector<std::uint32_t>& labels) {
  const auto pred = argmax_rows(logits);
  require(pred.size() == labels.size(), ErrorCode::kInvalidArgument, "label count mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return pred.empty() ? 0.0 : 100.0 * static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace spikeforge
