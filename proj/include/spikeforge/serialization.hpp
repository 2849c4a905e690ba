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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spikeforge/graph.hpp"

namespace spikeforge {

// Little-endian byte helpers shared by the SFM, SFB and SFT formats.
namespace io {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

/// Bounds-checked little-endian reader over an in-memory file.
class Reader {
 public:
  explicit Reader(std::string_view bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

  std::string_view take(std::size_t n) {
    require(n <= remaining(), ErrorCode::kTruncated,
            what_ + " is truncated (need " + std::to_string(n) + " bytes at offset " +
                std::to_string(pos_) + ", have " + std::to_string(remaining()) + ")");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }

 private:
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

/// Magic + u32 version + u64 manifest length + JSON manifest + float blob.
/// Tensors referenced by the manifest carry {shape, offset (bytes into the
/// blob), count}.
struct Container {
  nlohmann::json manifest;
  std::vector<float> blob;
};

constexpr std::uint32_t kFormatVersion = 1;

inline std::string encode_container(std::string_view magic, const Container& c) {
  std::string out;
  out.append(magic);
  put_u32(out, kFormatVersion);
  const std::string manifest = c.manifest.dump();
  put_u64(out, manifest.size());
  out += manifest;
  out.reserve(out.size() + c.blob.size() * 4);
  for (float v : c.blob) put_f32(out, v);
  return out;
}

inline Container decode_container(std::string_view bytes, std::string_view magic,
                                  const std::string& what) {
  Reader r(bytes, what);
  require(bytes.size() >= magic.size() && bytes.substr(0, magic.size()) == magic,
          ErrorCode::kBadMagic, what + " does not start with magic '" + std::string(magic) + "'");
  r.take(magic.size());
  const std::uint32_t version = r.u32();
  require(version == kFormatVersion, ErrorCode::kVersionMismatch,
          what + " has version " + std::to_string(version) + ", expected " +
              std::to_string(kFormatVersion));
  const std::uint64_t manifest_len = r.u64();
  require(manifest_len <= r.remaining(), ErrorCode::kTruncated,
          what + " manifest length exceeds file size");
  const auto text = r.take(static_cast<std::size_t>(manifest_len));
  Container c;
  try {
    c.manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidation, what + " manifest is not valid JSON: " + e.what());
  }
  const std::size_t declared = c.manifest.value("blob_floats", std::size_t{0});
  require(r.remaining() % 4 == 0, ErrorCode::kSizeMismatch,
          what + " blob length is not a multiple of 4 bytes");
  const std::size_t available = r.remaining() / 4;
  require(available >= declared, ErrorCode::kTruncated,
          what + " declares " + std::to_string(declared) + " floats but blob has " +
              std::to_string(available));
  require(available == declared, ErrorCode::kSizeMismatch,
          what + " blob has " + std::to_string(available) + " floats, manifest declares " +
              std::to_string(declared));
  c.blob.resize(declared);
  for (auto& v : c.blob) v = r.f32();
  return c;
}

inline nlohmann::json append_tensor(Container& c, const Tensor& t) {
  nlohmann::json ref = {{"shape", t.shape()}, {"offset", c.blob.size() * 4}, {"count", t.size()}};
  c.blob.insert(c.blob.end(), t.values().begin(), t.values().end());
  c.manifest["blob_floats"] = c.blob.size();
  return ref;
}

inline Tensor extract_tensor(const Container& c, const nlohmann::json& ref, const std::string& what) {
  Shape shape;
  std::size_t offset = 0, count = 0;
  try {
    shape = ref.at("shape").get<Shape>();
    offset = ref.at("offset").get<std::size_t>();
    count = ref.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidation, what + ": malformed tensor reference: " + e.what());
  }
  require(offset % 4 == 0, ErrorCode::kValidation, what + ": tensor offset not float aligned");
  require(count == shape_numel(shape) && !shape.empty(), ErrorCode::kSizeMismatch,
          what + ": tensor count " + std::to_string(count) + " disagrees with shape " +
              shape_string(shape));
  const std::size_t first = offset / 4;
  require(first + count <= c.blob.size(), ErrorCode::kTruncated,
          what + ": tensor extends past the end of the blob");
  return Tensor(std::move(shape),
                std::vector<float>(c.blob.begin() + static_cast<std::ptrdiff_t>(first),
                                   c.blob.begin() + static_cast<std::ptrdiff_t>(first + count)));
}

}  // namespace io

constexpr std::string_view kModelMagic = "SFM1";
constexpr std::string_view kTensorBundleMagic = "SFB1";

inline std::string encode_model(const NetworkGraph& g) {
  io::Container c;
  c.manifest = {{"format_version", g.metadata().format_version},
                {"metadata",
                 {{"input_shape", g.metadata().input_shape},
                  {"class_count", g.metadata().class_count}}},
                {"blob_floats", 0}};
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : g.nodes()) {
    nlohmann::json j = {{"id", n.id}, {"kind", to_string(n.kind)}, {"inputs", n.inputs}};
    nlohmann::json tensors = nlohmann::json::object();
    switch (n.kind) {
      case LayerKind::kConv: {
        const auto& p = n.conv();
        j["stride"] = {p.stride.h, p.stride.w};
        j["padding"] = {p.padding.h, p.padding.w};
        j["groups"] = p.groups;
        tensors["weight"] = io::append_tensor(c, p.weight);
        tensors["bias"] = io::append_tensor(c, p.bias);
        break;
      }
      case LayerKind::kLinear:
        tensors["weight"] = io::append_tensor(c, n.linear().weight);
        tensors["bias"] = io::append_tensor(c, n.linear().bias);
        break;
      case LayerKind::kBatchNorm: {
        const auto& bn = n.batchnorm();
        j["epsilon"] = bn.epsilon;
        tensors["gamma"] = io::append_tensor(c, bn.gamma);
        tensors["beta"] = io::append_tensor(c, bn.beta);
        tensors["running_mean"] = io::append_tensor(c, bn.running_mean);
        tensors["running_var"] = io::append_tensor(c, bn.running_var);
        break;
      }
      case LayerKind::kAvgPool:
        j["kernel"] = {n.pool().kernel.h, n.pool().kernel.w};
        j["stride"] = {n.pool().stride.h, n.pool().stride.w};
        break;
      default:
        break;
    }
    if (!tensors.empty()) j["tensors"] = tensors;
    nodes.push_back(std::move(j));
  }
  c.manifest["nodes"] = std::move(nodes);
  return io::encode_container(kModelMagic, c);
}

inline NetworkGraph decode_model(std::string_view bytes, const std::string& what = "model") {
  const io::Container c = io::decode_container(bytes, kModelMagic, what);
  const auto& m = c.manifest;
  GraphMetadata meta;
  std::vector<LayerNode> nodes;
  try {
    meta.format_version = m.value("format_version", 1u);
    meta.input_shape = m.at("metadata").at("input_shape").get<Shape>();
    meta.class_count = m.at("metadata").at("class_count").get<std::size_t>();
    for (const auto& j : m.at("nodes")) {
      LayerNode n;
      n.id = j.at("id").get<std::string>();
      const auto kind_name = j.at("kind").get<std::string>();
      if (kind_name == "MaxPool")
        fail(ErrorCode::kUnsupportedTopology,
             "max pooling ('" + n.id + "') cannot be converted to spiking form");
      const auto kind = layer_kind_from_string(kind_name);
      require(kind.has_value(), ErrorCode::kUnsupportedTopology,
              "unknown layer kind '" + kind_name + "' for node '" + n.id + "'");
      n.kind = *kind;
      n.inputs = j.value("inputs", std::vector<std::string>{});
      const auto tensors = j.value("tensors", nlohmann::json::object());
      auto tensor = [&](const char* name) {
        return io::extract_tensor(c, tensors.at(name), what + " node '" + n.id + "' " + name);
      };
      auto pair = [&](const char* name, Pair fallback) {
        if (!j.contains(name)) return fallback;
        auto v = j.at(name).get<std::vector<std::size_t>>();
        require(v.size() == 2, ErrorCode::kValidation, "'" + std::string(name) + "' must have 2 entries");
        return Pair{v[0], v[1]};
      };
      switch (n.kind) {
        case LayerKind::kConv: {
          ConvParams p;
          p.weight = tensor("weight");
          require(p.weight.rank() == 4, ErrorCode::kValidation, "conv weight must be rank 4");
          p.bias = tensors.contains("bias") ? tensor("bias") : Tensor({p.weight.dim(0)}, 0.0f);
          p.stride = pair("stride", {1, 1});
          p.padding = pair("padding", {0, 0});
          p.groups = j.value("groups", std::size_t{1});
          n.params = std::move(p);
          break;
        }
        case LayerKind::kLinear: {
          LinearParams p;
          p.weight = tensor("weight");
          require(p.weight.rank() == 2, ErrorCode::kValidation, "linear weight must be rank 2");
          p.bias = tensors.contains("bias") ? tensor("bias") : Tensor({p.weight.dim(0)}, 0.0f);
          n.params = std::move(p);
          break;
        }
        case LayerKind::kBatchNorm: {
          BatchNormParams p;
          p.gamma = tensor("gamma");
          p.beta = tensor("beta");
          p.running_mean = tensor("running_mean");
          p.running_var = tensor("running_var");
          p.epsilon = j.value("epsilon", 1e-5f);
          n.params = std::move(p);
          break;
        }
        case LayerKind::kAvgPool: {
          PoolParams p;
          p.kernel = pair("kernel", {2, 2});
          p.stride = pair("stride", p.kernel);
          n.params = p;
          break;
        }
        default:
          break;
      }
      nodes.push_back(std::move(n));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidation, what + " manifest is malformed: " + e.what());
  }
  return NetworkGraph(std::move(nodes), std::move(meta));
}

inline void save_model(const NetworkGraph& g, const std::filesystem::path& path) {
  io::write_file(path, encode_model(g));
}

/// Load an SFM file and check it against the graph invariants.
inline NetworkGraph load_model(const std::filesystem::path& path) {
  NetworkGraph g = decode_model(io::read_file(path), "'" + path.string() + "'");
  const auto violations = validate_graph(g);
  if (!violations.empty()) {
    std::string msg = "'" + path.string() + "' is not a valid network:";
    for (const auto& v : violations) msg += "\n  " + v;
    fail(ErrorCode::kValidation, msg);
  }
  for (const auto& n : g.nodes())
    if (n.has_weights())
      require(n.weight().all_finite() && n.bias().all_finite(), ErrorCode::kValidation,
              "node '" + n.id + "' has non-finite parameters");
  return g;
}

/// Named tensors in the SFB container (same layout as SFM, manifest lists
/// {name, shape, offset, count}).
inline std::string encode_tensor_bundle(const std::map<std::string, Tensor>& tensors) {
  io::Container c;
  c.manifest = {{"blob_floats", 0}};
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    nlohmann::json ref = io::append_tensor(c, t);
    ref["name"] = name;
    list.push_back(std::move(ref));
  }
  c.manifest["tensors"] = std::move(list);
  return io::encode_container(kTensorBundleMagic, c);
}

inline std::map<std::string, Tensor> decode_tensor_bundle(std::string_view bytes,
                                                          const std::string& what = "tensor bundle") {
  const io::Container c = io::decode_container(bytes, kTensorBundleMagic, what);
  std::map<std::string, Tensor> out;
  try {
    for (const auto& ref : c.manifest.at("tensors")) {
      const auto name = ref.at("name").get<std::string>();
      out.emplace(name, io::extract_tensor(c, ref, what + " tensor '" + name + "'"));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidation, what + " manifest is malformed: " + e.what());
  }
  return out;
}

}  // namespace spikeforge
