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
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spikeforge/ann.hpp"
#include "spikeforge/serialization.hpp"

#ifndef SPIKEFORGE_FIXTURE_DIR
#define SPIKEFORGE_FIXTURE_DIR "data/fixtures"
#endif

namespace spikeforge {

/// Seeded generator with platform-independent uniform and normal draws
/// (std distributions are implementation defined, mt19937_64 is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct SampleSet {
  Tensor images;  // [N, C, H, W]
  std::vector<std::uint32_t> labels;
  std::size_t class_count = 0;
  std::uint64_t seed = 0;
  std::string generator;

  std::size_t size() const { return labels.size(); }

  void validate() const {
    require(images.rank() == 4 && images.batch() == labels.size() && !labels.empty(),
            ErrorCode::kValidation, "sample set needs N >= 1 images with one label each");
    for (auto l : labels)
      require(l < class_count, ErrorCode::kValidation,
              "label " + std::to_string(l) + " outside [0, " + std::to_string(class_count) + ")");
  }

  /// Subset in the given index order.
  SampleSet select(const std::vector<std::size_t>& idx) const {
    SampleSet out;
    Shape s = images.shape();
    s[0] = idx.size();
    const std::size_t per = images.sample_size();
    std::vector<float> data;
    data.reserve(idx.size() * per);
    for (std::size_t i : idx) {
      const float* p = images.data() + i * per;
      data.insert(data.end(), p, p + per);
      out.labels.push_back(labels.at(i));
    }
    out.images = Tensor(std::move(s), std::move(data));
    out.class_count = class_count;
    out.seed = seed;
    out.generator = generator;
    return out;
  }

  /// Images reshaped to the model's per-sample input shape.
  Tensor images_for(const GraphMetadata& meta) const {
    return images.reshaped(batched(images.batch(), meta.input_shape));
  }
};

/// First `count` samples after a seeded shuffle.
inline SampleSet seeded_subset(const SampleSet& set, std::size_t count, std::uint64_t seed) {
  require(count >= 1 && count <= set.size(), ErrorCode::kInvalidArgument,
          "requested " + std::to_string(count) + " samples from a set of " +
              std::to_string(set.size()));
  std::vector<std::size_t> idx(set.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(count);
  return set.select(idx);
}

constexpr std::string_view kSampleMagic = "SFT1";

inline std::string encode_samples(const SampleSet& s) {
  s.validate();
  std::string out(kSampleMagic);
  io::put_u32(out, io::kFormatVersion);
  for (std::size_t d = 0; d < 4; ++d) io::put_u32(out, static_cast<std::uint32_t>(s.images.dim(d)));
  io::put_u32(out, static_cast<std::uint32_t>(s.class_count));
  for (float v : s.images.values()) io::put_f32(out, v);
  for (auto l : s.labels) io::put_u32(out, l);
  return out;
}

inline SampleSet decode_samples(std::string_view bytes, const std::string& what = "sample set") {
  require(bytes.size() >= 4 && bytes.substr(0, 4) == kSampleMagic, ErrorCode::kBadMagic,
          what + " does not start with magic 'SFT1'");
  io::Reader r(bytes, what);
  r.take(4);
  const std::uint32_t version = r.u32();
  require(version == io::kFormatVersion, ErrorCode::kVersionMismatch,
          what + " has version " + std::to_string(version));
  Shape shape(4);
  for (auto& d : shape) d = r.u32();
  const std::size_t classes = r.u32();
  const std::size_t n = shape_numel(shape);
  require(n > 0, ErrorCode::kValidation, what + " has an empty extent");
  require(r.remaining() >= n * 4 + shape[0] * 4, ErrorCode::kTruncated,
          what + " is truncated: header promises " + std::to_string(n) + " floats and " +
              std::to_string(shape[0]) + " labels");
  require(r.remaining() == n * 4 + shape[0] * 4, ErrorCode::kSizeMismatch,
          what + " has trailing bytes after the labels");
  std::vector<float> data(n);
  for (auto& v : data) v = r.f32();
  SampleSet s;
  s.images = Tensor(shape, std::move(data));
  s.labels.resize(shape[0]);
  for (auto& l : s.labels) l = r.u32();
  s.class_count = classes;
  s.validate();
  return s;
}

inline void save_samples(const SampleSet& s, const std::filesystem::path& path) {
  io::write_file(path, encode_samples(s));
}

inline SampleSet load_samples(const std::filesystem::path& path) {
  return decode_samples(io::read_file(path), "'" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Synthetic fixtures

/// Eight-class two-moons task rendered as 1x8x8 images: each sample is a
/// Gaussian bump with log-normal brightness placed at a noisy point on one
/// of two interleaved arcs; the class is (arc, which quarter of the arc).
inline SampleSet generate_two_moons_images(std::size_t n, std::uint64_t seed) {
  constexpr std::size_t kSide = 8;
  Rng rng(seed);
  std::vector<float> data(n * kSide * kSide);
  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t moon = static_cast<std::uint32_t>(rng.below(2));
    const double t = rng.uniform(0.0, std::numbers::pi);
    double px = moon == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double py = moon == 0 ? std::sin(t) : 0.5 - std::sin(t);
    px += 0.06 * rng.normal();
    py += 0.06 * rng.normal();
    const double amp = std::exp(0.5 * rng.normal());
    labels[i] = 4 * moon + std::min(3u, static_cast<std::uint32_t>(t / (std::numbers::pi / 4)));
    // map [-1.2, 2.2] x [-0.8, 1.3] onto the pixel grid
    const double cx = (px + 1.2) / 3.4 * (kSide - 1);
    const double cy = (1.3 - py) / 2.1 * (kSide - 1);
    for (std::size_t y = 0; y < kSide; ++y)
      for (std::size_t x = 0; x < kSide; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        const double v = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * 1.1 * 1.1)) + 0.05 * rng.normal();
        data[i * kSide * kSide + y * kSide + x] = static_cast<float>(v);
      }
  }
  SampleSet s;
  s.images = Tensor({n, 1, kSide, kSide}, std::move(data));
  s.labels = std::move(labels);
  s.class_count = 8;
  s.seed = seed;
  s.generator = "two-moons-conv";
  return s;
}

/// Five Gaussian clusters in a 2x4x4 feature layout. Cluster means are
/// drawn from a fixed stream so every seed samples the same task.
inline SampleSet generate_blobs(std::size_t n, std::uint64_t seed) {
  constexpr std::size_t kClasses = 5, kFeatures = 32;
  Rng means_rng(0x5EEDB10Bu);
  std::vector<double> means(kClasses * kFeatures);
  for (auto& m : means) m = means_rng.normal();
  Rng rng(seed);
  std::vector<float> data(n * kFeatures);
  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::uint32_t>(rng.below(kClasses));
    labels[i] = c;
    for (std::size_t f = 0; f < kFeatures; ++f)
      data[i * kFeatures + f] = static_cast<float>(means[c * kFeatures + f] + 1.6 * rng.normal());
  }
  SampleSet s;
  s.images = Tensor({n, 2, 4, 4}, std::move(data));
  s.labels = std::move(labels);
  s.class_count = kClasses;
  s.seed = seed;
  s.generator = "blob-mlp";
  return s;
}

struct Fixture {
  std::string kind;
  NetworkGraph model;  // as trained: contains BatchNorm and AvgPool nodes
  SampleSet train;
  SampleSet test;
  std::uint64_t seed = 0;
  std::uint64_t canonical_seed = 0;
  double recorded_ann_accuracy = 0.0;  // test accuracy at the canonical seed
};

inline const std::vector<std::string>& fixture_kinds() {
  static const std::vector<std::string> kinds{"two-moons-conv", "blob-mlp"};
  return kinds;
}

inline std::filesystem::path fixture_dir() {
  if (const char* env = std::getenv("SPIKEFORGE_FIXTURE_DIR"); env && *env) return env;
  return SPIKEFORGE_FIXTURE_DIR;
}

inline SampleSet generate_fixture_samples(const std::string& kind, std::size_t n,
                                          std::uint64_t seed) {
  if (kind == "two-moons-conv") return generate_two_moons_images(n, seed);
  if (kind == "blob-mlp") return generate_blobs(n, seed);
  fail(ErrorCode::kUnknownFixture, "unknown fixture kind '" + kind + "'");
}

/// Train and test sets come from independent streams derived from the seed.
inline std::pair<SampleSet, SampleSet> fixture_samples(const std::string& kind, std::uint64_t seed,
                                                       std::size_t train_size,
                                                       std::size_t test_size) {
  return {generate_fixture_samples(kind, train_size, seed * 2 + 1),
          generate_fixture_samples(kind, test_size, seed * 2 + 2)};
}

/// Committed pretrained network for `kind` plus freshly generated data.
inline Fixture make_fixture(const std::string& kind, std::uint64_t seed) {
  bool known = false;
  for (const auto& k : fixture_kinds()) known = known || k == kind;
  require(known, ErrorCode::kUnknownFixture, "unknown fixture kind '" + kind + "'");
  const auto dir = fixture_dir();
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json")).at(kind);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidation, "fixture manifest has no usable entry for '" + kind + "': " + e.what());
  }
  Fixture f;
  f.kind = kind;
  f.seed = seed;
  f.model = load_model(dir / manifest.at("model").get<std::string>());
  f.canonical_seed = manifest.at("seed").get<std::uint64_t>();
  f.recorded_ann_accuracy = manifest.at("ann_test_accuracy").get<double>();
  auto [train, test] = fixture_samples(kind, seed, manifest.at("train_size").get<std::size_t>(),
                                       manifest.at("test_size").get<std::size_t>());
  f.train = std::move(train);
  f.test = std::move(test);
  return f;
}

}  // namespace spikeforge
