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

#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace spikeforge {
namespace {

using testing::random_tensor;
using testing::values;

// Exhaustive grid evaluation written from the definition, in double.
std::pair<double, double> grid_oracle(const std::vector<float>& acts, std::size_t T, std::size_t N) {
  double top = 0.0;
  for (float a : acts) top = std::max(top, static_cast<double>(a));
  double best_v = 0.0, best = INFINITY;
  for (std::size_t k = 1; k <= N; ++k) {
    const float v = k == N ? static_cast<float>(top) : static_cast<float>(k * top / N);
    double mse = 0.0;
    for (float a : acts) {
      double q = std::floor(static_cast<double>(T) * a / v);
      q = std::clamp(q, 0.0, static_cast<double>(T));
      const double d = static_cast<float>(v * q / T) - std::max(0.0, static_cast<double>(a));
      mse += d * d;
    }
    mse /= static_cast<double>(acts.size());
    if (mse < best) {
      best = mse;
      best_v = v;
    }
  }
  return {best_v, best};
}

TEST(MmseThresholdTest, ConstantActivations) {
  const ThresholdChoice c = mmse_threshold(Tensor({16}, 1.0f), 4);
  EXPECT_EQ(c.values, values({1}, {1.0f}));
  EXPECT_EQ(c.mse, 0.0);
}

TEST(MmseThresholdTest, TwoPointExample) {
  const ThresholdChoice c = mmse_threshold(values({2}, {1.0f, 10.0f}), 1, 100);
  EXPECT_EQ(c.values[0], 10.0f);
  EXPECT_DOUBLE_EQ(c.mse, 0.5);
  EXPECT_DOUBLE_EQ(clipfloor_mse(std::vector<float>{1.0f, 10.0f}, 1, 1.0f), 40.5);
}

TEST(MmseThresholdTest, DeadLayerFallback) {
  const ThresholdChoice c = mmse_threshold(values({3}, {-1, 0, -2}), 8);
  EXPECT_EQ(c.values[0], 1.0f);
  EXPECT_EQ(c.mse, 0.0);
}

TEST(MmseThresholdTest, MatchesExhaustiveOracle) {
  Rng rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor acts = random_tensor({200}, rng, -1.0, 3.0);
    const std::size_t T = 1 + rng.below(32);
    const auto [v, mse] = grid_oracle(acts.storage(), T, 100);
    const ThresholdChoice c = mmse_threshold(acts, T, 100);
    EXPECT_EQ(c.values[0], static_cast<float>(v));
    EXPECT_NEAR(c.mse, mse, 1e-12);
  }
}

TEST(MmseThresholdTest, TiesGoToSmallestGridPoint) {
  // T = 1, candidates {0.5, 1}: both give MSE 0.125.
  const Tensor acts = values({2}, {0.5f, 1.0f});
  EXPECT_DOUBLE_EQ(clipfloor_mse(acts.values(), 1, 0.5f), clipfloor_mse(acts.values(), 1, 1.0f));
  EXPECT_EQ(mmse_threshold(acts, 1, 2).values[0], 0.5f);
}

TEST(MmseThresholdTest, DominatesMaxActivation) {
  Rng rng(52);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor acts = random_tensor({4, 3, 5, 5}, rng, -2.0, 4.0);
    const std::size_t T = 1 + rng.below(64);
    const ThresholdChoice mmse = mmse_threshold(acts, T);
    const ThresholdChoice max = baseline_threshold(acts, ThresholdMethod::kMax, 99.9, false, T);
    EXPECT_LE(mmse.mse, max.mse);
    const ThresholdChoice channel = mmse_threshold(acts, T, 100, true);
    EXPECT_EQ(channel.values.size(), 3u);
    EXPECT_LE(channel.mse, mmse.mse);
  }
}

TEST(MmseThresholdTest, PerChannelOnRank2) {
  const Tensor acts = values({2, 2}, {1, 4, 1, 4});
  const ThresholdChoice c = mmse_threshold(acts, 4, 100, true);
  EXPECT_EQ(c.values, values({2}, {1, 4}));
  EXPECT_EQ(c.mse, 0.0);
}

TEST(MmseThresholdTest, RejectsTinyGrid) {
  EXPECT_SF_ERROR(mmse_threshold(Tensor({2}, 1.0f), 4, 1), ErrorCode::kInvalidArgument);
}

TEST(BaselineThresholdTest, Examples) {
  EXPECT_EQ(baseline_threshold(values({2}, {1, 10}), ThresholdMethod::kMax).values[0], 10.0f);
  std::vector<float> ramp(1000);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<float>(1000 - i);
  EXPECT_EQ(baseline_threshold(Tensor({1000}, ramp), ThresholdMethod::kPercentile, 99.9).values[0], 999.0f);
  EXPECT_EQ(baseline_threshold(Tensor({5}), ThresholdMethod::kMax).values[0], 1.0f);
  EXPECT_EQ(baseline_threshold(Tensor({5}), ThresholdMethod::kPercentile).values[0], 1.0f);
}

TEST(BaselineThresholdTest, NearestRankMatchesSortOracle) {
  Rng rng(53);
  for (double p : {50.0, 90.0, 99.0, 99.9, 100.0}) {
    const Tensor acts = random_tensor({537}, rng, -1.0, 5.0);
    std::vector<float> pos;
    for (float v : acts.values())
      if (v > 0.0f) pos.push_back(v);
    std::sort(pos.begin(), pos.end());
    const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * pos.size() - 1e-9));
    EXPECT_EQ(baseline_threshold(acts, ThresholdMethod::kPercentile, p).values[0], pos[std::max<std::size_t>(rank, 1) - 1]) << p;
  }
}

TEST(BaselineThresholdTest, RejectsBadArguments) {
  EXPECT_SF_ERROR(baseline_threshold(Tensor({2}), ThresholdMethod::kPercentile, 0.0), ErrorCode::kInvalidArgument);
  EXPECT_SF_ERROR(baseline_threshold(Tensor({2}), ThresholdMethod::kPercentile, 100.5), ErrorCode::kInvalidArgument);
  EXPECT_SF_ERROR(baseline_threshold(Tensor({2}), ThresholdMethod::kMmse), ErrorCode::kInvalidArgument);
}

TEST(ThresholdTableTest, JsonRoundTrip) {
  ThresholdTable t;
  t.T = 16;
  t.method = "mmse_channel";
  t.grid = 50;
  t.seed = 9;
  t.layers["a"] = ThresholdChoice{values({2}, {0.5f, 1.25f}), 0.125};
  t.layers["b"] = ThresholdChoice{values({1}, {3.0f}), 0.0};
  const auto j = threshold_table_to_json(t);
  EXPECT_EQ(j.at("layers").at("a").at("T"), 16);
  const ThresholdTable back = threshold_table_from_json(j);
  EXPECT_EQ(back.T, 16u);
  EXPECT_EQ(back.method, "mmse_channel");
  EXPECT_EQ(back.seed, 9u);
  EXPECT_EQ(back.layers.at("a").values, t.layers.at("a").values);
  EXPECT_EQ(back.layers.at("a").mse, 0.125);
}

TEST(ThresholdTableTest, RejectsNonPositive) {
  nlohmann::json j = {{"method", "max"}, {"T", 4}, {"N", 100}, {"seed", 0},
                      {"layers", {{"a", {{"values", {0.0}}}}}}};
  EXPECT_SF_ERROR(threshold_table_from_json(j), ErrorCode::kValidation);
  EXPECT_SF_ERROR(threshold_table_from_json(nlohmann::json::object()), ErrorCode::kValidation);
}

}  // namespace
}  // namespace spikeforge
