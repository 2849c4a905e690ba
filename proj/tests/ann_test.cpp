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

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace spikeforge {
namespace {

using testing::GraphBuilder;
using testing::naive_conv;
using testing::random_tensor;
using testing::values;

TEST(AnnForwardTest, IdentityLinearThenRelu) {
  GraphBuilder gb({2});
  gb.linear("fc", values({2, 2}, {1, 0, 0, 1}), values({2}, {0, 0}));
  gb.relu("relu");
  const NetworkGraph g = gb.output();
  const ForwardResult r = ann_forward(g, values({1, 2}, {-1, 2}), true);
  EXPECT_EQ(r.output, values({1, 2}, {0, 2}));
  ASSERT_TRUE(r.trace.has_value());
  EXPECT_EQ(r.trace->at("fc"), values({1, 2}, {-1, 2}));
}

NetworkGraph two_conv_net(Rng& rng) {
  GraphBuilder gb({2, 7, 7}, 3);
  gb.random_conv("conv1", 2, 3, 3, rng, {1, 1}, {1, 1});
  gb.relu("relu1");
  gb.random_conv("conv2", 3, 4, 3, rng, {2, 2}, {1, 1});
  gb.relu("relu2");
  gb.flatten();
  gb.random_linear("fc", 4 * 4 * 4, 3, rng);
  return gb.output();
}

TEST(AnnForwardTest, MatchesNaiveLoops) {
  Rng rng(31);
  const NetworkGraph g = two_conv_net(rng);
  const Tensor x = random_tensor({3, 2, 7, 7}, rng);
  Tensor h = relu(naive_conv(x, g.node("conv1").conv()));
  h = relu(naive_conv(h, g.node("conv2").conv()));
  const auto& fc = g.node("fc").linear();
  Tensor logits({3, 3});
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t o = 0; o < 3; ++o) {
      double acc = fc.bias[o];
      for (std::size_t i = 0; i < 64; ++i) acc += static_cast<double>(fc.weight[o * 64 + i]) * h[n * 64 + i];
      logits[n * 3 + o] = static_cast<float>(acc);
    }
  EXPECT_LE(max_abs_diff(ann_forward(g, x).output, logits), 1e-5f);
}

TEST(AnnForwardTest, ZeroInputZeroBiasGivesZeroLogits) {
  Rng rng(32);
  NetworkGraph g = two_conv_net(rng);
  for (auto& n : g.mutable_nodes())
    if (n.has_weights()) n.bias() = Tensor(n.bias().shape());
  EXPECT_EQ(ann_forward(g, Tensor({2, 2, 7, 7})).output, Tensor({2, 3}));
}

TEST(AnnForwardTest, TraceEqualsRecomputation) {
  Rng rng(33);
  const NetworkGraph g = two_conv_net(rng);
  const Tensor x = random_tensor({2, 2, 7, 7}, rng);
  const ForwardResult captured = ann_forward(g, x, true);
  EXPECT_EQ(captured.output, ann_forward(g, x).output);
  EXPECT_EQ(captured.trace->at("conv1"), conv2d_forward(x, g.node("conv1").conv()));
  EXPECT_EQ(captured.trace->at("relu1"), relu(captured.trace->at("conv1")));
  EXPECT_EQ(captured.trace->at("conv2"), conv2d_forward(captured.trace->at("relu1"), g.node("conv2").conv()));
  EXPECT_EQ(captured.trace->at("fc"), captured.output);
}

TEST(AnnForwardTest, BatchNormMustBeFolded) {
  Rng rng(34);
  const NetworkGraph g = testing::random_conv_bn_net(rng);
  EXPECT_SF_ERROR(ann_forward(g, Tensor({1, 2, 8, 8})), ErrorCode::kMustFoldFirst);
  EXPECT_NO_THROW(reference_forward(g, Tensor({1, 2, 8, 8})));
}

TEST(AnnForwardTest, RejectsWrongInputShape) {
  Rng rng(35);
  EXPECT_SF_ERROR(ann_forward(two_conv_net(rng), Tensor({1, 3, 6, 6})), ErrorCode::kInvalidArgument);
}

TEST(AnnForwardTest, ResidualAdd) {
  GraphBuilder gb({2});
  gb.linear("a", values({2, 2}, {1, 0, 0, 1}), values({2}, {1, 1}));
  gb.linear("b", values({2, 2}, {2, 0, 0, 2}), values({2}, {0, 0}), "input");
  gb.add_join("add", "a", "b");
  EXPECT_EQ(ann_forward(gb.output(), values({1, 2}, {1, 2})).output, values({1, 2}, {4, 7}));
}

TEST(AccuracyTest, ArgmaxAndPercent) {
  const Tensor logits = values({3, 2}, {0, 1, 2, 1, 5, 5});
  EXPECT_EQ(argmax_rows(logits), (std::vector<std::size_t>{1, 0, 0}));
  EXPECT_DOUBLE_EQ(accuracy_percent(logits, {1, 1, 0}), 200.0 / 3.0);
}

}  // namespace
}  // namespace spikeforge
