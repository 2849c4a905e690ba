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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "test_util.hpp"

namespace spikeforge {
namespace {

using testing::GraphBuilder;
using testing::random_tensor;
using testing::values;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok && pass) detail << "first failure: " << what << "; ";
    pass = pass && ok;
  }
};

using Clock = std::chrono::steady_clock;

bool run_criterion(int id, const std::string& title, double budget_s, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto start = Clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << "exception: " << e.what() << "; ";
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  if (budget_s > 0 && secs > budget_s) {
    o.pass = false;
    o.detail << "over time budget " << budget_s << " s; ";
  }
  std::printf("criterion %d: %s  %s  (%.2f s)  %s\n", id, o.pass ? "PASS" : "FAIL", title.c_str(), secs,
              o.detail.str().c_str());
  std::fflush(stdout);
  return o.pass;
}

ThresholdTable table_of(const std::map<std::string, float>& th, std::size_t T = 0) {
  ThresholdTable t;
  t.T = T;
  for (const auto& [id, v] : th) t.layers[id] = ThresholdChoice{Tensor({1}, v), 0.0};
  return t;
}

// 1 ---------------------------------------------------------------------------

void closed_form_equivalence(Outcome& o) {
  Rng rng(1001);
  GraphBuilder b({1}, 1);
  b.linear("fc", values({1, 1}, {1}), values({1}, {0}));
  b.relu("relu");
  b.linear("head", values({1, 1}, {1}), values({1}, {0}));
  const NetworkGraph g = b.output();
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t T = 1 + rng.below(64);
    float vth = 0.0f;
    while (!(vth > 0.0f)) vth = static_cast<float>(10.0 * (1.0 - rng.uniform()));
    const float c = static_cast<float>(rng.uniform(-0.5 * vth, 1.5 * vth));
    SpikingState state = make_spiking_state(g, {{"relu", values({1}, {vth})}});
    const SimulationResult r = simulate_snn(g, state, values({1, 1}, {c}), T);
    const float expected = clipfloor(values({1, 1}, {c}), T, vth)[0];
    worst = std::max(worst, std::fabs(static_cast<double>(r.rates.at("relu")[0]) - expected));
    worst = std::max(worst, std::fabs(static_cast<double>(r.output_rate()[0]) - expected));
  }
  o.detail << "max |sim - clipfloor| = " << worst << "; ";
  o.check(worst <= 1e-6, "tolerance");
}

// 2 ---------------------------------------------------------------------------

void staircase(Outcome& o) {
  std::vector<float> xs;
  for (int i = 0; i <= 1600; ++i) xs.push_back(static_cast<float>(-2.0 + 0.01 * i));
  const Tensor y = clipfloor(Tensor({xs.size()}, xs), 5, 10.0f);
  std::set<float> levels;
  bool monotone = true;
  for (std::size_t i = 0; i < y.size(); ++i) {
    levels.insert(y[i]);
    if (i && y[i] < y[i - 1]) monotone = false;
  }
  const std::set<float> allowed{0, 2, 4, 6, 8, 10};
  bool subset = true;
  for (float v : levels) subset = subset && allowed.count(v);
  o.detail << levels.size() << " distinct levels; ";
  o.check(subset, "values outside {0,2,4,6,8,10}");
  o.check(levels == allowed, "not every level reached");
  o.check(monotone, "not nondecreasing");
}

// 3 ---------------------------------------------------------------------------

NetworkGraph random_bn_graph(Rng& rng) {
  const std::size_t c1 = 2 + rng.below(4), c2 = 2 + rng.below(6), classes = 2 + rng.below(4);
  GraphBuilder b({2, 8, 8}, classes);
  b.random_conv("conv1", 2, c1, 3, rng, {1, 1}, {1, 1});
  b.random_batchnorm("bn1", c1, rng);
  b.relu("relu1");
  b.random_conv("conv2", c1, c2, 4, rng, {2, 2}, {1, 1});
  b.random_batchnorm("bn2", c2, rng);
  b.relu("relu2");
  b.flatten();
  b.random_linear("fc1", c2 * 16, 8, rng);
  b.random_batchnorm("bn3", 8, rng);
  b.relu("relu3");
  b.random_linear("fc2", 8, classes, rng);
  return b.output();
}

NetworkGraph random_pool_graph(Rng& rng) {
  const std::size_t c1 = 1 + rng.below(4);
  const std::size_t k = 1 + rng.below(3);
  GraphBuilder b({2, 12, 12}, 3);
  b.random_conv("conv1", 2, c1, 3, rng, {1, 1}, {1, 1});
  b.relu("relu1");
  b.pool("pool1", {k, k}, {k, k});
  const std::size_t side = 12 / k;
  b.random_conv("conv2", c1, 4, 3, rng, {1, 1}, {1, 1});
  b.relu("relu2");
  b.pool("pool2", {2, 2}, {2, 2});
  b.flatten();
  b.random_linear("fc", 4 * (side / 2) * (side / 2), 3, rng);
  return b.output();
}

void rewrite_equivalence(Outcome& o) {
  Rng rng(3003);
  double fold_worst = 0.0, pool_worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const NetworkGraph g = random_bn_graph(rng);
    const Tensor x = random_tensor({8, 2, 8, 8}, rng, -1.0, 1.0);
    fold_worst = std::max<double>(fold_worst, max_abs_diff(reference_forward(g, x).output, ann_forward(fold_batchnorm(g), x).output));
  }
  for (int trial = 0; trial < 50; ++trial) {
    const NetworkGraph g = random_pool_graph(rng);
    const Tensor x = random_tensor({8, 2, 12, 12}, rng, -1.0, 1.0);
    pool_worst = std::max<double>(pool_worst, max_abs_diff(reference_forward(g, x).output, ann_forward(avgpool_to_depthwise(g), x).output));
  }
  o.detail << "fold max abs " << fold_worst << ", avgpool max abs " << pool_worst << "; ";
  o.check(fold_worst <= 1e-5, "fold tolerance");
  o.check(pool_worst <= 1e-6, "avgpool tolerance");
}

// 4 ---------------------------------------------------------------------------

void normalization_timing(Outcome& o) {
  Rng rng(4004);
  std::size_t compared = 0, mismatched = 0;
  for (int trial = 0; trial < 20; ++trial) {
    GraphBuilder b({2, 6, 6}, 3);
    b.random_conv("conv1", 2, 4, 3, rng, {1, 1}, {1, 1});
    b.relu("relu1");
    b.flatten();
    b.random_linear("fc1", 4 * 36, 10, rng);
    b.relu("relu2");
    b.random_linear("fc2", 10, 3, rng);
    const NetworkGraph g = b.output();
    const ThresholdTable t = table_of({{"relu1", static_cast<float>(rng.uniform(0.2, 3.0))},
                                       {"relu2", static_cast<float>(rng.uniform(0.2, 3.0))}});
    const NormalizedNetwork n = normalize_thresholds(g, t);
    const Tensor x = random_tensor({8, 2, 6, 6}, rng, 0.0, 1.0);
    SpikingState s1 = make_spiking_state(g, t.as_tensors());
    SpikingState s2 = make_spiking_state(n.graph, n.thresholds.as_tensors());
    const SimulationResult a = simulate_snn(g, s1, x, 16, true);
    const SimulationResult c = simulate_snn(n.graph, s2, x, 16, true);
    for (const auto& id : spiking_layers(g))
      for (std::size_t step = 0; step < 16; ++step) {
        const Tensor& sa = a.spike_trains.at(id)[step];
        const Tensor& sc = c.spike_trains.at(id)[step];
        for (std::size_t i = 0; i < sa.size(); ++i) {
          ++compared;
          mismatched += (sa[i] != 0.0f) != (sc[i] != 0.0f);
        }
      }
  }
  o.detail << compared << " spike slots compared, " << mismatched << " differ; ";
  o.check(mismatched == 0, "spike timing changed");
}

// 5 ---------------------------------------------------------------------------

void threshold_dominance(Outcome& o) {
  for (const auto& kind : fixture_kinds()) {
    const Fixture f = make_fixture(kind, 0);
    const NetworkGraph g = prepare_for_snn(f.model);
    const SampleSet calib = seeded_subset(f.train, 1024, 0);
    const ActivationTrace trace = *ann_forward(g, calib.images_for(g.metadata()), true).trace;
    for (std::size_t T : {16u, 32u}) {
      for (const auto& id : spiking_layers(g)) {
        const Tensor& acts = trace.at(g.node(id).inputs[0]);
        const double mmse = mmse_threshold(acts, T, 100).mse;
        const double max_act = baseline_threshold(acts, ThresholdMethod::kMax, 99.9, false, T).mse;
        const double channel = mmse_threshold(acts, T, 100, true).mse;
        o.check(mmse <= max_act, kind + "/" + id + " mmse > max-act");
        o.check(channel <= mmse, kind + "/" + id + " per-channel > scalar");
      }
    }
    o.detail << kind << " " << spiking_layers(g).size() << " layers ok; ";
  }
}

// 6 ---------------------------------------------------------------------------

double rel_err(const std::vector<double>& fd, const Tensor& analytic) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    num += (fd[i] - analytic[i]) * (fd[i] - analytic[i]);
    den += fd[i] * fd[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

// Perturbs one float weight by +-h and returns the actually applied step.
template <typename F>
std::vector<double> central_differences(Tensor& w, double h, F loss) {
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const float w0 = w[i];
    w[i] = static_cast<float>(w0 + h);
    const double up = loss(), wu = w[i];
    w[i] = static_cast<float>(w0 - h);
    const double down = loss(), wd = w[i];
    w[i] = w0;
    out[i] = (up - down) / (wu - wd);
  }
  return out;
}

void gradient_correctness(Outcome& o) {
  Rng rng(6006);
  double conv_worst = 0.0, ste_worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(4);
    const std::size_t stride = 1 + rng.below(2), pad = rng.below(2);
    ConvParams p{random_tensor({cout, cin, 3, 3}, rng), random_tensor({cout}, rng), {stride, stride}, {pad, pad}, 1};
    const Tensor x = random_tensor({2, cin, 7, 7}, rng);
    const Tensor y0 = conv2d_forward(x, p);
    const Tensor gy = random_tensor(y0.shape(), rng);
    // L = <conv(x), gy>, accumulated in double
    auto loss = [&] {
      const Tensor y = testing::naive_conv(x, p);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += static_cast<double>(y[i]) * gy[i];
      return acc;
    };
    const ParamGrads g = conv2d_weight_grad(x, gy, p);
    conv_worst = std::max(conv_worst, rel_err(central_differences(p.weight, 1e-2, loss), g.weight));
    conv_worst = std::max(conv_worst, rel_err(central_differences(p.bias, 1e-2, loss), g.bias));
  }
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t T = 4 + rng.below(29);
    LayerNode layer{"conv", LayerKind::kConv,
                    ConvParams{random_tensor({3, 2, 3, 3}, rng, -0.4, 0.4), random_tensor({3}, rng, -0.1, 0.1),
                               {1, 1}, {1, 1}, 1},
                    {"input"}};
    const Tensor s_in = random_tensor({4, 2, 6, 6}, rng, 0.0, 1.0);
    const Tensor target = random_tensor({4, 3, 6, 6}, rng, 0.0, 1.0);
    const float th = static_cast<float>(rng.uniform(0.5, 1.5));
    const Tensor vth = values({1}, {th});
    const Tensor v0 = random_tensor({1, 3, 6, 6}, rng, -0.2, 0.2);
    const SurrogateEval ev =
        calibration_objective(layer, s_in, target, T, vth, &v0, SurrogateForward::kClipOnly);
    // Clip-only surrogate evaluated in double straight from its definition.
    std::vector<double> w(layer.weight().values().begin(), layer.weight().values().end());
    std::vector<double> b(layer.bias().values().begin(), layer.bias().values().end());
    auto loss = [&] {
      double acc = 0.0;
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t oc = 0; oc < 3; ++oc)
          for (std::size_t y = 0; y < 6; ++y)
            for (std::size_t x = 0; x < 6; ++x) {
              double z = b[oc];
              for (std::size_t ic = 0; ic < 2; ++ic)
                for (std::size_t ky = 0; ky < 3; ++ky)
                  for (std::size_t kx = 0; kx < 3; ++kx) {
                    const long iy = static_cast<long>(y + ky) - 1, ix = static_cast<long>(x + kx) - 1;
                    if (iy < 0 || ix < 0 || iy >= 6 || ix >= 6) continue;
                    z += w[((oc * 2 + ic) * 3 + ky) * 3 + kx] *
                         s_in.at(n, ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                  }
              const double u = static_cast<double>(T) * z / th + v0.at(0, oc, y, x) / static_cast<double>(th);
              const double s = th / static_cast<double>(T) * std::clamp(u, 0.0, static_cast<double>(T));
              const double d = s - target.at(n, oc, y, x);
              acc += d * d;
            }
      return acc / 4.0;
    };
    auto fd = [&](std::vector<double>& p) {
      std::vector<double> out(p.size());
      const double h = 1e-5;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double p0 = p[i];
        p[i] = p0 + h;
        const double up = loss();
        p[i] = p0 - h;
        const double down = loss();
        p[i] = p0;
        out[i] = (up - down) / (2 * h);
      }
      return out;
    };
    ste_worst = std::max(ste_worst, rel_err(fd(w), ev.grads.weight));
    ste_worst = std::max(ste_worst, rel_err(fd(b), ev.grads.bias));
  }
  o.detail << "conv grad rel err " << conv_worst << ", STE grad rel err " << ste_worst << "; ";
  o.check(conv_worst <= 1e-3, "conv gradient");
  o.check(ste_worst <= 1e-3, "surrogate gradient");
}

// 7 ---------------------------------------------------------------------------

void calibration_contracts(Outcome& o) {
  Rng rng(7007);
  for (int trial = 0; trial < 10; ++trial) {
    LayerNode layer{"conv", LayerKind::kConv,
                    ConvParams{random_tensor({4, 4, 3, 3}, rng, -1.0 / 6, 1.0 / 6), random_tensor({4}, rng, -0.1, 0.1),
                               {1, 1}, {1, 1}, 1},
                    {"input"}};
    const Tensor s_in = random_tensor({16, 4, 8, 8}, rng, 0.0, 1.0);
    LayerNode teacher = layer;
    for (float& w : teacher.weight().values()) w += static_cast<float>(rng.uniform(-0.05, 0.05));
    const Tensor ann_pre = detail::layer_apply(teacher, s_in);
    const std::size_t T = 16;
    const Tensor vth = values({1}, {0.8f});
    const CalibrationRecord rec = make_record("relu", ann_pre, detail::layer_apply(layer, s_in), T, vth);

    LayerNode bc = layer;
    const Tensor delta = bias_calibrate(bc, rec);
    const Tensor mu = channel_spatial_mean(rec.e);
    bool bias_exact = delta == mu;
    for (std::size_t c = 0; c < 4; ++c) bias_exact = bias_exact && bc.bias()[c] == layer.bias()[c] + mu[c];
    o.check(bias_exact, "bias delta != channel mean");

    const Tensor v0 = potential_calibrate(rec, T);
    const Tensor mean = batch_mean(rec.e);
    bool v0_exact = v0.shape() == mean.shape();
    for (std::size_t i = 0; v0_exact && i < v0.size(); ++i) v0_exact = v0[i] == static_cast<float>(T) * mean[i];
    o.check(v0_exact, "v0 != T * batch mean");

    PipelineConfig cfg;
    cfg.wc_iters = 200;
    cfg.wc_lr = 1e-3;
    cfg.wc_minibatch = 8;
    cfg.wc_eval_every = 20;
    cfg.seed = static_cast<std::uint64_t>(trial);
    LayerNode wc = layer;
    const WeightCalibrationReport r = weight_calibrate(wc, s_in, relu(ann_pre), T, vth, &v0, cfg);
    o.check(r.final_loss <= r.initial_loss && r.iterations == 200, "wc final loss above initial");
    if (trial == 0) o.detail << "wc loss " << r.initial_loss << " -> " << r.final_loss << " (layer 0); ";
  }
}

// 8, 9 ------------------------------------------------------------------------

double snn_accuracy(const CalibratedBundle& b, const SampleSet& test, std::size_t T) {
  return accuracy_percent(
      snn_output_rates(b.model, b.thresholds.as_tensors(), b.v0, test.images_for(b.model.metadata()), T),
      test.labels);
}

void end_to_end_ordering(Outcome& o) {
  const Fixture f = make_fixture("two-moons-conv", 0);
  o.check(f.model.has_kind(LayerKind::kBatchNorm) && f.model.has_kind(LayerKind::kAvgPool),
          "fixture lacks BN or AvgPool");
  for (std::size_t T : {16u, 32u}) {
    PipelineConfig cfg;
    cfg.T = T;
    cfg.seed = 0;
    cfg.wc_iters = 1000;
    PipelineConfig naive = cfg;
    naive.mode = PipelineMode::kNone;
    naive.threshold_method = ThresholdMethod::kMax;
    PipelineConfig light = cfg;
    light.mode = PipelineMode::kLight;
    PipelineConfig advanced = cfg;
    advanced.mode = PipelineMode::kAdvanced;
    const double a_naive = snn_accuracy(run_pipeline(f.model, f.train, naive), f.test, T);
    const double a_light = snn_accuracy(run_pipeline(f.model, f.train, light), f.test, T);
    const double a_adv = snn_accuracy(run_pipeline(f.model, f.train, advanced), f.test, T);
    o.detail << "T=" << T << ": uncalibrated " << a_naive << ", light " << a_light << ", advanced " << a_adv
             << "; ";
    o.check(a_adv >= a_light, "advanced < light at T=" + std::to_string(T));
    o.check(a_light >= a_naive, "light < uncalibrated at T=" + std::to_string(T));
    if (T == 16) o.check(a_light - a_naive >= 1.0, "light gain < 1 point at T=16");
  }
}

void large_t_convergence(Outcome& o) {
  const Fixture f = make_fixture("two-moons-conv", 0);
  PipelineConfig cfg;
  cfg.T = 4096;
  cfg.mode = PipelineMode::kNone;
  cfg.seed = 0;
  const CalibratedBundle b = run_pipeline(f.model, f.train, cfg);
  const SampleSet test = seeded_subset(f.test, 2000, 9);
  const double snn = snn_accuracy(b, test, cfg.T);
  const NetworkGraph ann = prepare_for_snn(f.model);
  const double ann_acc = accuracy_percent(ann_forward(ann, test.images_for(ann.metadata())).output, test.labels);
  o.detail << "ANN " << ann_acc << ", SNN(T=4096) " << snn << " on " << test.size() << " test samples; ";
  o.check(std::fabs(snn - ann_acc) <= 0.5, "gap above 0.5 points");
}

// 10 --------------------------------------------------------------------------

// Counts, per element of `src`, the multiply-accumulates reading it, by
// walking every output position and kernel tap of each consumer.
std::vector<std::uint64_t> brute_fan_out(const NetworkGraph& g, const std::string& src,
                                         const std::map<std::string, Shape>& shapes) {
  const Shape& s = shapes.at(src);
  std::vector<std::uint64_t> out(shape_numel(s), 0);
  for (const auto& cid : g.consumers(src)) {
    const LayerNode& c = g.node(cid);
    if (c.kind == LayerKind::kFlatten || c.kind == LayerKind::kOutput) {
      const auto down = brute_fan_out(g, cid, shapes);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += down[i];
    } else if (c.kind == LayerKind::kLinear) {
      for (auto& v : out) v += c.linear().weight.dim(0);
    } else if (c.kind == LayerKind::kConv) {
      const ConvParams& p = c.conv();
      const Shape& os = shapes.at(cid);
      const std::size_t cin = s[0] / p.groups, cout = p.out_channels() / p.groups;
      for (std::size_t o = 0; o < os[0]; ++o)
        for (std::size_t oy = 0; oy < os[1]; ++oy)
          for (std::size_t ox = 0; ox < os[2]; ++ox)
            for (std::size_t ci = 0; ci < cin; ++ci)
              for (std::size_t ky = 0; ky < p.kernel_h(); ++ky)
                for (std::size_t kx = 0; kx < p.kernel_w(); ++kx) {
                  const long iy = static_cast<long>(oy * p.stride.h + ky) - static_cast<long>(p.padding.h);
                  const long ix = static_cast<long>(ox * p.stride.w + kx) - static_cast<long>(p.padding.w);
                  if (iy < 0 || ix < 0 || iy >= static_cast<long>(s[1]) || ix >= static_cast<long>(s[2])) continue;
                  const std::size_t ch = (o / cout) * cin + ci;
                  ++out[(ch * s[1] + static_cast<std::size_t>(iy)) * s[2] + static_cast<std::size_t>(ix)];
                }
    }
  }
  return out;
}

void diagnostics_determinism(Outcome& o) {
  for (const auto& kind : fixture_kinds()) {
    const Fixture f = make_fixture(kind, 0);
    PipelineConfig cfg;
    cfg.T = 16;
    const CalibratedBundle b = run_pipeline(f.model, f.train, cfg);
    const SampleSet test = f.test.select({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15});
    const Tensor x = test.images_for(b.model.metadata());
    SpikingState state = b.make_state();
    const SimulationResult r = simulate_snn(b.model, state, x, cfg.T, true);
    const auto shapes = infer_shapes(b.model);

    std::uint64_t ops = 0;
    const auto stats = firing_rate_stats(r);
    bool firing_ok = stats.size() == spiking_layers(b.model).size();
    for (const auto& s : stats) {
      const auto fo = brute_fan_out(b.model, s.layer_id, shapes);
      std::uint64_t spikes = 0;
      for (const Tensor& step : r.spike_trains.at(s.layer_id))
        for (std::size_t i = 0; i < step.size(); ++i) {
          const std::uint64_t n = step[i] != 0.0f;
          spikes += n;
          ops += n * fo[i % fo.size()];
        }
      firing_ok = firing_ok && s.spikes == spikes &&
                  s.mean == static_cast<double>(spikes) / (static_cast<double>(cfg.T) * s.neurons);
    }
    std::uint64_t macs = 0;
    for (const auto& n : b.model.nodes()) {
      if (!n.has_weights()) continue;
      if (n.kind == LayerKind::kLinear) {
        macs += shape_numel(shapes.at(n.inputs[0])) * n.linear().weight.dim(0);
        continue;
      }
      const ConvParams& p = n.conv();
      const Shape& s = shapes.at(n.inputs[0]);
      const Shape& os = shapes.at(n.id);
      const std::size_t cin = s[0] / p.groups;
      for (std::size_t oy = 0; oy < os[1]; ++oy)
        for (std::size_t ox = 0; ox < os[2]; ++ox)
          for (std::size_t ky = 0; ky < p.kernel_h(); ++ky)
            for (std::size_t kx = 0; kx < p.kernel_w(); ++kx) {
              const long iy = static_cast<long>(oy * p.stride.h + ky) - static_cast<long>(p.padding.h);
              const long ix = static_cast<long>(ox * p.stride.w + kx) - static_cast<long>(p.padding.w);
              if (iy >= 0 && ix >= 0 && iy < static_cast<long>(s[1]) && ix < static_cast<long>(s[2]))
                macs += os[0] * cin;
            }
    }
    macs *= x.batch();
    const EnergyReport e = energy_estimate(r, b.model);
    o.check(firing_ok, kind + ": firing stats differ from recount");
    o.check(e.synaptic_ops == ops, kind + ": synaptic ops differ from brute-force count");
    o.check(e.ann_macs == macs, kind + ": ANN MACs differ from brute-force count");
    o.check(e.snn_energy == 0.9 * static_cast<double>(ops) && e.ann_energy == 5.5 * static_cast<double>(macs),
            kind + ": energy constants");

    const ActivationTrace trace = *ann_forward(prepare_for_snn(f.model), x, true).trace;
    const RateTrace rates = expected_rate_forward(b.model, b.thresholds.as_tensors(), b.v0, x, cfg.T);
    const ErrorPropagationReport lemma = lemma1_diagnostic(b.model, trace, rates, b.thresholds, b.v0, cfg.T);
    o.check(!lemma.skipped && std::isfinite(lemma.lhs) && std::isfinite(lemma.rhs), kind + ": lemma report");
    o.detail << kind << ": ops " << ops << ", macs " << macs << ", lhs " << lemma.lhs << ", rhs " << lemma.rhs
             << "; ";
  }
  Rng rng(10010);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor a = random_tensor({64}, rng, -3, 3), c = random_tensor({64}, rng, -3, 3);
    o.check(relu_contraction(a, c).holds(), "relu contraction");
  }
}

}  // namespace
}  // namespace spikeforge

int main(int argc, char** argv) {
  using namespace spikeforge;
  // Optional arguments select criteria by number; default runs all.
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  bool ok = true;
  auto run = [&](int id, const std::string& title, double budget, void (*body)(Outcome&)) {
    if (only.empty() || only.count(id)) ok &= run_criterion(id, title, budget, body);
  };
  run(1, "closed-form / simulation equivalence", 5, closed_form_equivalence);
  run(2, "clipfloor staircase T=5, vth=10", 0, staircase);
  run(3, "BN-fold and avgpool-rewrite equivalence", 10, rewrite_equivalence);
  run(4, "weight normalization keeps spike timing", 10, normalization_timing);
  run(5, "threshold dominance", 0, threshold_dominance);
  run(6, "gradient correctness", 30, gradient_correctness);
  run(7, "calibration contracts", 60, calibration_contracts);
  run(8, "end-to-end ordering", 300, end_to_end_ordering);
  run(9, "large-T convergence", 300, large_t_convergence);
  run(10, "diagnostics determinism", 0, diagnostics_determinism);
  std::printf("%s\n", ok ? "all criteria passed" : "some criteria FAILED");
  return ok ? 0 : 1;
}
