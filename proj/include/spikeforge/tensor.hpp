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
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "spikeforge/error.hpp"

namespace spikeforge {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major float tensor of rank 1..4. Rank 4 is N,C,H,W and rank 2
/// is N,F; the same container holds activations, rates, errors, potentials
/// and parameters.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    require(data_.size() == shape_numel(shape_), ErrorCode::kInvalidArgument,
            "tensor data length " + std::to_string(data_.size()) +
                " does not match shape " + shape_string(shape_));
  }

  static Tensor scalar_like(std::initializer_list<float> values) {
    return Tensor({values.size()}, std::vector<float>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Batch size for rank >= 2 tensors.
  std::size_t batch() const { return shape_.empty() ? 0 : shape_[0]; }

  /// Elements per sample (everything after the batch dimension).
  std::size_t sample_size() const {
    return shape_.size() < 2 ? 1 : data_.size() / shape_[0];
  }

  /// Number of channels (rank 4) or features (rank 2).
  std::size_t channels() const { return shape_.size() >= 2 ? shape_[1] : shape_[0]; }

  /// H*W for rank 4, 1 otherwise.
  std::size_t spatial() const {
    return shape_.size() == 4 ? shape_[2] * shape_[3] : 1;
  }

  Tensor reshaped(Shape shape) const {
    require(shape_numel(shape) == data_.size(), ErrorCode::kInvalidArgument,
            "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
  }

  /// Copy of samples [begin, begin+count) along the batch axis.
  Tensor slice_batch(std::size_t begin, std::size_t count) const {
    require(rank() >= 2 && begin + count <= batch(), ErrorCode::kInvalidArgument,
            "batch slice out of range");
    Shape s = shape_;
    s[0] = count;
    const std::size_t per = sample_size();
    return Tensor(std::move(s),
                  std::vector<float>(data_.begin() + static_cast<std::ptrdiff_t>(begin * per),
                                     data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * per)));
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(),
                       [](float v) { return std::isfinite(v); });
  }

  /// Bitwise equality of shape and payload (distinguishes -0 and 0).
  bool bit_equal(const Tensor& other) const noexcept {
    return shape_ == other.shape_ &&
           (data_.empty() ||
            std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.bit_equal(b); }

 private:
  void check_shape() const {
    require(!shape_.empty() && shape_.size() <= 4, ErrorCode::kInvalidArgument,
            "tensor rank must be 1..4, got " + std::to_string(shape_.size()));
    for (std::size_t d : shape_)
      require(d > 0, ErrorCode::kInvalidArgument,
              "tensor extents must be positive: " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<float> data_;
};

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorCode::kInvalidArgument,
          "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

inline double frobenius_norm(const Tensor& t) {
  double s = 0.0;
  for (float v : t.values()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorCode::kInvalidArgument,
          "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorCode::kInvalidArgument,
          "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

// Worker-thread count used by the batch-parallel kernels. Work is split into
// disjoint index ranges, so results never depend on this value.
namespace detail {
inline std::size_t& thread_count_ref() {
  static std::size_t count = std::max(1u, std::thread::hardware_concurrency());
  return count;
}
}  // namespace detail

inline void set_num_threads(std::size_t n) { detail::thread_count_ref() = std::max<std::size_t>(1, n); }
inline std::size_t num_threads() { return detail::thread_count_ref(); }

template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const std::size_t workers = std::min(num_threads(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([begin, end, &fn] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace spikeforge
