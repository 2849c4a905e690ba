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
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "spikeforge/error.hpp"
#include "spikeforge/tensor.hpp"

namespace spikeforge {

struct Pair {
  std::size_t h = 1;
  std::size_t w = 1;
  friend bool operator==(const Pair&, const Pair&) = default;
};

/// Convolution parameters. weight is [O, I/groups, Kh, Kw], bias is [O].
struct ConvParams {
  Tensor weight;
  Tensor bias;
  Pair stride{1, 1};
  Pair padding{0, 0};
  std::size_t groups = 1;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1) * groups; }
  std::size_t kernel_h() const { return weight.dim(2); }
  std::size_t kernel_w() const { return weight.dim(3); }
};

/// Output extent of a strided, padded window; 0 when the geometry does not
/// produce a positive integer extent.
inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel,
                                   std::size_t stride, std::size_t pad) {
  const std::size_t padded = in + 2 * pad;
  if (stride == 0 || kernel == 0 || padded < kernel) return 0;
  if ((padded - kernel) % stride != 0) return 0;
  return (padded - kernel) / stride + 1;
}

namespace detail {

inline void check_conv(const Shape& in, const ConvParams& p) {
  require(in.size() == 4, ErrorCode::kInvalidArgument,
          "conv input must be rank 4, got " + shape_string(in));
  require(p.weight.rank() == 4, ErrorCode::kInvalidArgument, "conv weight must be rank 4");
  require(p.groups >= 1 && p.weight.dim(0) % p.groups == 0, ErrorCode::kInvalidArgument,
          "groups must divide output channels");
  require(p.bias.size() == p.weight.dim(0), ErrorCode::kInvalidArgument,
          "conv bias length must equal output channels");
  require(in[1] == p.in_channels(), ErrorCode::kInvalidArgument,
          "conv expects " + std::to_string(p.in_channels()) + " input channels, got " +
              std::to_string(in[1]));
  require(conv_out_extent(in[2], p.kernel_h(), p.stride.h, p.padding.h) > 0 &&
              conv_out_extent(in[3], p.kernel_w(), p.stride.w, p.padding.w) > 0,
          ErrorCode::kInvalidArgument,
          "conv geometry gives non-integer output dims for input " + shape_string(in));
}

// Valid output-column range [lo, hi) for which x*stride - pad + k lands
// inside [0, in).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in,
                                                       std::size_t k, std::size_t stride,
                                                       std::size_t pad) {
  std::size_t lo = 0;
  if (k < pad) lo = (pad - k + stride - 1) / stride;
  // largest x with x*stride + k - pad <= in - 1
  if (in + pad < k + 1) return {0, 0};
  std::size_t hi = (in + pad - 1 - k) / stride + 1;
  hi = std::min(hi, out);
  if (lo > hi) lo = hi;
  return {lo, hi};
}

}  // namespace detail

inline Shape conv2d_output_shape(const Shape& in, const ConvParams& p) {
  detail::check_conv(in, p);
  return {in[0], p.out_channels(),
          conv_out_extent(in[2], p.kernel_h(), p.stride.h, p.padding.h),
          conv_out_extent(in[3], p.kernel_w(), p.stride.w, p.padding.w)};
}

/// Zero-padded cross-correlation. Each output element is accumulated in the
/// order (input channel, kernel row, kernel column) starting from zero, and
/// the bias is added last.
inline Tensor conv2d_forward(const Tensor& x, const ConvParams& p) {
  const Shape out_shape = conv2d_output_shape(x.shape(), p);
  Tensor out(out_shape);
  const std::size_t N = out_shape[0], O = out_shape[1], OH = out_shape[2], OW = out_shape[3];
  const std::size_t H = x.dim(2), W = x.dim(3);
  const std::size_t KH = p.kernel_h(), KW = p.kernel_w();
  const std::size_t in_per_group = p.weight.dim(1);
  const std::size_t out_per_group = O / p.groups;
  const float* wdata = p.weight.data();

  parallel_for(N * O, [&](std::size_t job) {
    const std::size_t n = job / O, o = job % O;
    const std::size_t g = o / out_per_group;
    float* dst = out.data() + (n * O + o) * OH * OW;
    std::fill(dst, dst + OH * OW, 0.0f);
    for (std::size_t ci = 0; ci < in_per_group; ++ci) {
      const std::size_t c = g * in_per_group + ci;
      const float* src = x.data() + (n * x.dim(1) + c) * H * W;
      const float* wk = wdata + (o * in_per_group + ci) * KH * KW;
      for (std::size_t ky = 0; ky < KH; ++ky) {
        const auto [ylo, yhi] = detail::valid_range(OH, H, ky, p.stride.h, p.padding.h);
        for (std::size_t kx = 0; kx < KW; ++kx) {
          const float wv = wk[ky * KW + kx];
          const auto [xlo, xhi] = detail::valid_range(OW, W, kx, p.stride.w, p.padding.w);
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            const float* row = src + (oy * p.stride.h + ky - p.padding.h) * W;
            float* drow = dst + oy * OW;
            for (std::size_t ox = xlo; ox < xhi; ++ox)
              drow[ox] += wv * row[ox * p.stride.w + kx - p.padding.w];
          }
        }
      }
    }
    const float b = p.bias[o];
    for (std::size_t i = 0; i < OH * OW; ++i) dst[i] += b;
  });
  return out;
}

struct ParamGrads {
  Tensor weight;
  Tensor bias;
};

/// Gradients of L = sum(grad_out * conv2d_forward(x, p)) with respect to the
/// weight and bias. Sums are carried in double and rounded once.
inline ParamGrads conv2d_weight_grad(const Tensor& x, const Tensor& grad_out,
                                     const ConvParams& p) {
  const Shape out_shape = conv2d_output_shape(x.shape(), p);
  require(grad_out.shape() == out_shape, ErrorCode::kInvalidArgument,
          "grad_out shape " + shape_string(grad_out.shape()) + " does not match conv output " +
              shape_string(out_shape));
  const std::size_t N = out_shape[0], O = out_shape[1], OH = out_shape[2], OW = out_shape[3];
  const std::size_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t KH = p.kernel_h(), KW = p.kernel_w();
  const std::size_t in_per_group = p.weight.dim(1);
  const std::size_t out_per_group = O / p.groups;

  ParamGrads grads{Tensor(p.weight.shape()), Tensor(p.bias.shape())};
  parallel_for(O, [&](std::size_t o) {
    const std::size_t g = o / out_per_group;
    double bias_acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const float* go = grad_out.data() + (n * O + o) * OH * OW;
      for (std::size_t i = 0; i < OH * OW; ++i) bias_acc += go[i];
    }
    grads.bias[o] = static_cast<float>(bias_acc);
    for (std::size_t ci = 0; ci < in_per_group; ++ci) {
      const std::size_t c = g * in_per_group + ci;
      for (std::size_t ky = 0; ky < KH; ++ky) {
        const auto [ylo, yhi] = detail::valid_range(OH, H, ky, p.stride.h, p.padding.h);
        for (std::size_t kx = 0; kx < KW; ++kx) {
          const auto [xlo, xhi] = detail::valid_range(OW, W, kx, p.stride.w, p.padding.w);
          double acc = 0.0;
          for (std::size_t n = 0; n < N; ++n) {
            const float* go = grad_out.data() + (n * O + o) * OH * OW;
            const float* src = x.data() + (n * C + c) * H * W;
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              const float* row = src + (oy * p.stride.h + ky - p.padding.h) * W;
              for (std::size_t ox = xlo; ox < xhi; ++ox)
                acc += static_cast<double>(go[oy * OW + ox]) *
                       row[ox * p.stride.w + kx - p.padding.w];
            }
          }
          grads.weight[((o * in_per_group + ci) * KH + ky) * KW + kx] = static_cast<float>(acc);
        }
      }
    }
  });
  return grads;
}

/// y[n,o] = sum_i weight[o,i] * x[n,i] + bias[o], summed left to right from
/// zero with the bias added last.
inline Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.rank() == 2, ErrorCode::kInvalidArgument,
          "linear input must be rank 2, got " + shape_string(x.shape()));
  require(weight.rank() == 2 && weight.dim(1) == x.dim(1), ErrorCode::kInvalidArgument,
          "linear weight " + shape_string(weight.shape()) + " incompatible with input " +
              shape_string(x.shape()));
  require(bias.size() == weight.dim(0), ErrorCode::kInvalidArgument,
          "linear bias length must equal output features");
  const std::size_t N = x.dim(0), I = x.dim(1), O = weight.dim(0);
  Tensor y({N, O});
  parallel_for(N, [&](std::size_t n) {
    const float* xi = x.data() + n * I;
    for (std::size_t o = 0; o < O; ++o) {
      const float* wo = weight.data() + o * I;
      float acc = 0.0f;
      for (std::size_t i = 0; i < I; ++i) acc += wo[i] * xi[i];
      y[n * O + o] = acc + bias[o];
    }
  });
  return y;
}

inline ParamGrads linear_weight_grad(const Tensor& x, const Tensor& grad_out,
                                     const Tensor& weight) {
  require(x.rank() == 2 && grad_out.rank() == 2 && x.dim(0) == grad_out.dim(0) &&
              weight.rank() == 2 && weight.dim(0) == grad_out.dim(1) &&
              weight.dim(1) == x.dim(1),
          ErrorCode::kInvalidArgument, "linear gradient shape mismatch");
  const std::size_t N = x.dim(0), I = x.dim(1), O = weight.dim(0);
  ParamGrads grads{Tensor(weight.shape()), Tensor({O})};
  parallel_for(O, [&](std::size_t o) {
    double bias_acc = 0.0;
    std::vector<double> acc(I, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
      const double go = grad_out[n * O + o];
      bias_acc += go;
      const float* xi = x.data() + n * I;
      for (std::size_t i = 0; i < I; ++i) acc[i] += go * xi[i];
    }
    grads.bias[o] = static_cast<float>(bias_acc);
    for (std::size_t i = 0; i < I; ++i) grads.weight[o * I + i] = static_cast<float>(acc[i]);
  });
  return grads;
}

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (float& v : y.values()) v = v > 0.0f ? v : 0.0f;
  return y;
}

/// Direct average pooling without padding, used to evaluate unrewritten graphs.
inline Tensor avg_pool2d(const Tensor& x, Pair kernel, Pair stride) {
  require(x.rank() == 4, ErrorCode::kInvalidArgument, "avg_pool2d expects rank 4");
  require(kernel.h >= 1 && kernel.w >= 1, ErrorCode::kInvalidArgument,
          "pool kernel extents must be >= 1");
  const std::size_t OH = conv_out_extent(x.dim(2), kernel.h, stride.h, 0);
  const std::size_t OW = conv_out_extent(x.dim(3), kernel.w, stride.w, 0);
  require(OH > 0 && OW > 0, ErrorCode::kInvalidArgument,
          "pool geometry gives non-integer output dims");
  const std::size_t N = x.dim(0), C = x.dim(1);
  Tensor out({N, C, OH, OW});
  const float scale = 1.0f / static_cast<float>(kernel.h * kernel.w);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          float acc = 0.0f;
          for (std::size_t ky = 0; ky < kernel.h; ++ky)
            for (std::size_t kx = 0; kx < kernel.w; ++kx)
              acc += scale * x.at(n, c, oy * stride.h + ky, ox * stride.w + kx);
          out.at(n, c, oy, ox) = acc;
        }
  return out;
}

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  float epsilon = 1e-5f;

  std::size_t channels() const { return gamma.size(); }
};

/// Inference-mode batch norm over the channel axis (rank 4) or feature axis
/// (rank 2).
inline Tensor batchnorm_inference(const Tensor& x, const BatchNormParams& bn) {
  require(x.rank() == 2 || x.rank() == 4, ErrorCode::kInvalidArgument,
          "batchnorm expects rank 2 or 4");
  require(x.dim(1) == bn.channels(), ErrorCode::kInvalidArgument,
          "batchnorm channel count mismatch");
  Tensor y = x;
  const std::size_t C = x.dim(1), S = x.spatial();
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const float inv = 1.0f / std::sqrt(bn.running_var[c] + bn.epsilon);
      float* p = y.data() + (n * C + c) * S;
      for (std::size_t i = 0; i < S; ++i)
        p[i] = bn.gamma[c] * (p[i] - bn.running_mean[c]) * inv + bn.beta[c];
    }
  return y;
}

/// Per-channel mean over space (and over the batch when batch_reduce is set).
/// Rank-4 input gives [N,C] or [C]; rank-2 input always gives the per-feature
/// batch mean [F].
inline Tensor channel_spatial_mean(const Tensor& x, bool batch_reduce = true) {
  require(x.rank() == 2 || x.rank() == 4, ErrorCode::kInvalidArgument,
          "channel_spatial_mean expects rank 2 or 4");
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.spatial();
  if (x.rank() == 2 || batch_reduce) {
    Tensor out({C});
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const float* p = x.data() + (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) acc += p[i];
      }
      out[c] = static_cast<float>(acc / static_cast<double>(N * S));
    }
    return out;
  }
  Tensor out({N, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      const float* p = x.data() + (n * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) acc += p[i];
      out[n * C + c] = static_cast<float>(acc / static_cast<double>(S));
    }
  return out;
}

/// Mean over the batch axis only, keeping per-sample resolution: [N, ...] ->
/// [1, ...].
inline Tensor batch_mean(const Tensor& x) {
  require(x.rank() >= 2, ErrorCode::kInvalidArgument, "batch_mean expects a batched tensor");
  Shape s = x.shape();
  const std::size_t N = s[0];
  s[0] = 1;
  Tensor out(s);
  const std::size_t per = x.sample_size();
  for (std::size_t i = 0; i < per; ++i) {
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) acc += x[n * per + i];
    out[i] = static_cast<float>(acc / static_cast<double>(N));
  }
  return out;
}

}  // namespace spikeforge
