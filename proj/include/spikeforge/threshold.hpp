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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikeforge/snn.hpp"

namespace spikeforge {

enum class ThresholdMethod { kMmse, kMmseChannel, kMax, kPercentile };

inline std::string threshold_method_name(ThresholdMethod m, double percentile = 99.9) {
  switch (m) {
    case ThresholdMethod::kMmse: return "mmse";
    case ThresholdMethod::kMmseChannel: return "mmse_channel";
    case ThresholdMethod::kMax: return "max";
    case ThresholdMethod::kPercentile: {
      std::ostringstream os;
      os << "percentile(" << percentile << ")";
      return os.str();
    }
  }
  return "?";
}

/// Threshold (scalar or per channel) chosen for one layer together with the
/// clipfloor-vs-ReLU mean squared error it achieves on the search batch.
struct ThresholdChoice {
  Tensor values;
  double mse = 0.0;
};

struct ThresholdTable {
  std::size_t T = 0;
  std::string method = "mmse";
  std::size_t grid = 100;
  std::uint64_t seed = 0;
  std::map<std::string, ThresholdChoice> layers;

  std::map<std::string, Tensor> as_tensors() const {
    std::map<std::string, Tensor> out;
    for (const auto& [id, c] : layers) out.emplace(id, c.values);
    return out;
  }
};

constexpr float kDeadLayerThreshold = 1.0f;

namespace detail {

// Elements of `acts` belonging to channel c (all elements when per_channel
// is off).
inline std::vector<float> channel_values(const Tensor& acts, bool per_channel, std::size_t c) {
  if (!per_channel) return acts.storage();
  std::vector<float> out;
  out.reserve(acts.size() / acts.dim(1));
  for (std::size_t i = 0; i < acts.size(); ++i)
    if (threshold_channel(acts, i) == c) out.push_back(acts[i]);
  return out;
}

inline std::size_t channel_count(const Tensor& acts, bool per_channel) {
  if (!per_channel) return 1;
  require(acts.rank() >= 2, ErrorCode::kInvalidArgument, "per-channel search needs a batched tensor");
  return acts.dim(1);
}

}  // namespace detail

/// Mean squared error between clipfloor(acts, T, vth) and ReLU(acts).
inline double clipfloor_mse(std::span<const float> acts, std::size_t T, float vth) {
  if (acts.empty()) return 0.0;
  double acc = 0.0;
  for (float a : acts) {
    const double target = a > 0.0f ? a : 0.0f;
    const double d = rate_from_count(expected_spike_count(a, T, vth, 0.0f), T, vth) - target;
    acc += d * d;
  }
  return acc / static_cast<double>(acts.size());
}

/// Grid-search the threshold minimizing the clipfloor/ReLU MSE. Candidates
/// are k*max(acts)/N for k = 1..N (the top candidate is max(acts) itself);
/// the first (smallest) minimizer wins. Channels with no positive value get
/// threshold 1.0.
inline ThresholdChoice mmse_threshold(const Tensor& acts, std::size_t T, std::size_t N = 100,
                                      bool per_channel = false) {
  require(N >= 2, ErrorCode::kInvalidArgument, "grid size must be >= 2");
  require(T >= 1, ErrorCode::kInvalidArgument, "T must be >= 1");
  const std::size_t C = detail::channel_count(acts, per_channel);
  ThresholdChoice choice{Tensor({C}), 0.0};
  std::vector<double> mse(C, 0.0);
  std::vector<std::size_t> sizes(C, 0);
  parallel_for(C, [&](std::size_t c) {
    const std::vector<float> vals = detail::channel_values(acts, per_channel, c);
    sizes[c] = vals.size();
    const float top = vals.empty() ? 0.0f : *std::max_element(vals.begin(), vals.end());
    if (!(top > 0.0f)) {
      choice.values[c] = kDeadLayerThreshold;
      mse[c] = clipfloor_mse(vals, T, kDeadLayerThreshold);
      return;
    }
    float best_v = top;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= N; ++k) {
      const float v = k == N ? top
                             : static_cast<float>(static_cast<double>(k) * top /
                                                  static_cast<double>(N));
      if (!(v > 0.0f)) continue;
      const double e = clipfloor_mse(vals, T, v);
      if (e < best) {
        best = e;
        best_v = v;
      }
    }
    choice.values[c] = best_v;
    mse[c] = best;
  });
  // Layer MSE as the element-weighted mean over channels.
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < C; ++c) {
    total += mse[c] * static_cast<double>(sizes[c]);
    count += sizes[c];
  }
  choice.mse = count ? total / static_cast<double>(count) : 0.0;
  return choice;
}

/// Max-activation or nearest-rank percentile of the positive activations.
inline ThresholdChoice baseline_threshold(const Tensor& acts, ThresholdMethod method,
                                          double percentile = 99.9, bool per_channel = false,
                                          std::size_t T = 0) {
  require(method == ThresholdMethod::kMax || method == ThresholdMethod::kPercentile,
          ErrorCode::kInvalidArgument, "baseline_threshold handles max and percentile only");
  require(percentile > 0.0 && percentile <= 100.0, ErrorCode::kInvalidArgument,
          "percentile must be in (0, 100]");
  const std::size_t C = detail::channel_count(acts, per_channel);
  ThresholdChoice choice{Tensor({C}), 0.0};
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const std::vector<float> vals = detail::channel_values(acts, per_channel, c);
    std::vector<float> pos;
    for (float v : vals)
      if (v > 0.0f) pos.push_back(v);
    float th = kDeadLayerThreshold;
    if (!pos.empty()) {
      std::sort(pos.begin(), pos.end());
      if (method == ThresholdMethod::kMax) {
        th = pos.back();
      } else {
        const double r = percentile * static_cast<double>(pos.size()) / 100.0;
        auto rank = static_cast<std::size_t>(std::ceil(r - 1e-9 * std::max(1.0, r)));
        rank = std::clamp<std::size_t>(rank, 1, pos.size());
        th = pos[rank - 1];
      }
    }
    choice.values[c] = th;
    if (T > 0) {
      total += clipfloor_mse(vals, T, th) * static_cast<double>(vals.size());
      count += vals.size();
    }
  }
  choice.mse = count ? total / static_cast<double>(count) : 0.0;
  return choice;
}

inline nlohmann::json threshold_table_to_json(const ThresholdTable& table) {
  nlohmann::json layers = nlohmann::json::object();
  for (const auto& [id, c] : table.layers) {
    std::vector<float> values(c.values.values().begin(), c.values.values().end());
    layers[id] = {{"method", table.method}, {"T", table.T},     {"N", table.grid},
                  {"seed", table.seed},     {"values", values}, {"mse", c.mse}};
  }
  return {{"method", table.method}, {"T", table.T},   {"N", table.grid},
          {"seed", table.seed},     {"layers", layers}};
}

inline ThresholdTable threshold_table_from_json(const nlohmann::json& j) {
  ThresholdTable table;
  try {
    table.method = j.at("method").get<std::string>();
    table.T = j.at("T").get<std::size_t>();
    table.grid = j.at("N").get<std::size_t>();
    table.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [id, layer] : j.at("layers").items()) {
      auto values = layer.at("values").get<std::vector<float>>();
      require(!values.empty(), ErrorCode::kValidation, "empty threshold list for '" + id + "'");
      for (float v : values)
        require(v > 0.0f, ErrorCode::kValidation, "threshold for '" + id + "' must be positive");
      const std::size_t n = values.size();
      table.layers[id] = ThresholdChoice{Tensor({n}, std::move(values)),
                                         layer.value("mse", 0.0)};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidation, std::string("malformed threshold table: ") + e.what());
  }
  return table;
}

}  // namespace spikeforge
