// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Checkpoint container, tensor topology and parent deltas.
//
// Container layout (little-endian throughout):
//   bytes [0, 8)       u64 N, length of the JSON header
//   bytes [8, 8 + N)   JSON object: name -> {"dtype", "shape", "data_offsets"}
//   bytes [8 + N, ..)  tensor data; offsets are relative to byte 8 + N
// The sorted data ranges must tile the data region exactly.

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "darwin/core/error.hpp"
#include "darwin/core/tensor.hpp"

namespace darwin {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

enum class ComponentClass { kAttention, kFfn, kEmbedding, kNorm, kOther };

constexpr std::string_view component_name(ComponentClass c) {
  switch (c) {
    case ComponentClass::kAttention: return "attention";
    case ComponentClass::kFfn: return "ffn";
    case ComponentClass::kEmbedding: return "embedding";
    case ComponentClass::kNorm: return "norm";
    case ComponentClass::kOther: return "other";
  }
  return "other";
}

struct TensorClass {
  ComponentClass component = ComponentClass::kOther;
  std::optional<int> layer;

  bool is_layer_tensor() const { return layer.has_value(); }
  bool operator==(const TensorClass&) const = default;
};

/// Classifies a tensor by name. Layer tensors look like
/// `<prefix>.layers.<i>.<sub>`; within `<sub>`, "attn"/"attention" wins over
/// "mlp"/"ffn", which wins over "norm". Any name containing "embed" that is
/// not otherwise classified is an embedding.
inline TensorClass classify_tensor(std::string_view name) {
  TensorClass out;
  std::string_view sub;
  std::size_t pos = 0;
  while (pos <= name.size()) {
    const std::size_t hit = name.find("layers.", pos);
    if (hit == std::string_view::npos) break;
    const bool at_segment_start = hit == 0 || name[hit - 1] == '.';
    std::size_t digits_end = hit + 7;
    while (digits_end < name.size() && std::isdigit(static_cast<unsigned char>(name[digits_end]))) {
      ++digits_end;
    }
    if (at_segment_start && digits_end > hit + 7 && digits_end < name.size() &&
        name[digits_end] == '.') {
      int layer = 0;
      const auto [ptr, ec] = std::from_chars(name.data() + hit + 7, name.data() + digits_end, layer);
      if (ec == std::errc{} && ptr == name.data() + digits_end) {
        out.layer = layer;
        sub = name.substr(digits_end + 1);
        break;
      }
    }
    pos = hit + 1;
  }

  auto contains = [](std::string_view s, std::string_view needle) {
    return s.find(needle) != std::string_view::npos;
  };
  if (out.layer) {
    if (contains(sub, "attn") || contains(sub, "attention")) {
      out.component = ComponentClass::kAttention;
      return out;
    }
    if (contains(sub, "mlp") || contains(sub, "ffn")) {
      out.component = ComponentClass::kFfn;
      return out;
    }
    if (contains(sub, "norm")) {
      out.component = ComponentClass::kNorm;
      return out;
    }
  }
  out.component = contains(name, "embed") ? ComponentClass::kEmbedding : ComponentClass::kOther;
  return out;
}

struct ModelTopology {
  int layer_count = 0;
  std::map<std::string, TensorClass, std::less<>> classes;

  const TensorClass& at(std::string_view name) const {
    auto it = classes.find(name);
    if (it == classes.end()) {
      fail(ErrorCode::kMissingTensor, "tensor not in topology: " + std::string(name));
    }
    return it->second;
  }
  bool contains(std::string_view name) const { return classes.find(name) != classes.end(); }
};

template <typename Names>
ModelTopology derive_topology(const Names& names) {
  ModelTopology topo;
  for (const auto& name : names) {
    TensorClass c = classify_tensor(name);
    if (c.layer) topo.layer_count = std::max(topo.layer_count, *c.layer + 1);
    topo.classes.emplace(std::string(name), c);
  }
  return topo;
}

/// Named tensor collection; iteration is lexicographic by name.
class Checkpoint {
 public:
  using Map = std::map<std::string, Tensor, std::less<>>;

  void insert(std::string name, Tensor tensor) {
    if (entries_.contains(name)) {
      fail(ErrorCode::kDuplicateName, "duplicate tensor name: " + name);
    }
    entries_.emplace(std::move(name), std::move(tensor));
  }

  void insert_or_assign(std::string name, Tensor tensor) {
    entries_.insert_or_assign(std::move(name), std::move(tensor));
  }

  const Tensor& at(std::string_view name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
      fail(ErrorCode::kMissingTensor, "missing tensor: " + std::string(name));
    }
    return it->second;
  }

  const Tensor* find(std::string_view name) const {
    auto it = entries_.find(name);
    return it == entries_.end() ? nullptr : &it->second;
  }

  bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }
  const Map& entries() const { return entries_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  ModelTopology topology() const { return derive_topology(names()); }

  bool operator==(const Checkpoint&) const = default;

 private:
  Map entries_;
};

/// IEEE 754 binary16 -> binary32, including subnormals, infinities and NaN.
inline float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = std::uint32_t{h & 0x8000u} << 16;
  std::uint32_t exponent = (h >> 10) & 0x1Fu;
  std::uint32_t mantissa = h & 0x3FFu;
  std::uint32_t bits;
  if (exponent == 0x1F) {
    bits = sign | 0x7F800000u | (mantissa << 13);
  } else if (exponent != 0) {
    bits = sign | ((exponent + 112) << 23) | (mantissa << 13);
  } else if (mantissa == 0) {
    bits = sign;
  } else {
    // Subnormal: renormalize.
    exponent = 113;
    while ((mantissa & 0x400u) == 0) {
      mantissa <<= 1;
      --exponent;
    }
    bits = sign | (exponent << 23) | ((mantissa & 0x3FFu) << 13);
  }
  return std::bit_cast<float>(bits);
}

namespace detail {

inline std::uint64_t load_u64(const std::uint8_t* p) {
  std::uint64_t v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

struct RangeRecord {
  std::uint64_t start;
  std::uint64_t end;
  std::string name;
};

inline std::uint64_t require_u64(const nlohmann::json& v, const std::string& what) {
  if (!v.is_number_unsigned()) {
    fail(ErrorCode::kMalformedHeader, what + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

}  // namespace detail

/// Decodes a container held in memory. F16 tensors are upcast to F32.
inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  using nlohmann::json;
  if (bytes.size() < 8) {
    fail(ErrorCode::kMalformedHeader,
         "file is " + std::to_string(bytes.size()) + " bytes; header length needs 8 (offset 0)");
  }
  const std::uint64_t header_len = detail::load_u64(bytes.data());
  if (header_len > bytes.size() - 8) {
    fail(ErrorCode::kMalformedHeader, "header length " + std::to_string(header_len) +
                                          " exceeds file size " + std::to_string(bytes.size()) +
                                          " (offset 0)");
  }
  const auto* header_begin = reinterpret_cast<const char*>(bytes.data() + 8);
  std::set<std::string> seen;
  std::string duplicate;
  json::parser_callback_t on_event = [&](int depth, json::parse_event_t event, json& parsed) {
    if (depth == 1 && event == json::parse_event_t::key) {
      auto key = parsed.get<std::string>();
      if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
    }
    return true;
  };
  json header;
  try {
    header = json::parse(header_begin, header_begin + header_len, on_event);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kMalformedHeader,
         "header JSON invalid at byte offset " + std::to_string(8 + e.byte) + ": " + e.what());
  }
  if (!duplicate.empty()) {
    fail(ErrorCode::kDuplicateName, "duplicate tensor name in header: " + duplicate);
  }
  if (!header.is_object()) {
    fail(ErrorCode::kMalformedHeader, "header is not a JSON object (offset 8)");
  }

  const std::uint64_t data_begin = 8 + header_len;
  const std::uint64_t data_size = bytes.size() - data_begin;
  const std::uint8_t* data = bytes.data() + data_begin;

  struct Pending {
    std::string name;
    bool half;
    Shape shape;
    std::uint64_t start;
    std::uint64_t end;
  };
  std::vector<Pending> pending;
  std::vector<detail::RangeRecord> ranges;
  for (const auto& [name, info] : header.items()) {
    const std::string where = "tensor '" + name + "'";
    if (!info.is_object() || !info.contains("dtype") || !info.contains("shape") ||
        !info.contains("data_offsets")) {
      fail(ErrorCode::kMalformedHeader, where + " lacks dtype/shape/data_offsets");
    }
    const auto& dtype = info["dtype"];
    if (!dtype.is_string()) fail(ErrorCode::kMalformedHeader, where + " dtype is not a string");
    const auto dtype_name = dtype.get<std::string>();
    if (dtype_name != "F32" && dtype_name != "F16") {
      fail(ErrorCode::kUnsupportedDtype, where + " has unsupported dtype " + dtype_name);
    }
    const auto& shape_json = info["shape"];
    if (!shape_json.is_array()) fail(ErrorCode::kMalformedHeader, where + " shape is not a list");
    Shape shape;
    for (const auto& e : shape_json) shape.push_back(detail::require_u64(e, where + " shape"));
    const auto& offsets = info["data_offsets"];
    if (!offsets.is_array() || offsets.size() != 2) {
      fail(ErrorCode::kMalformedHeader, where + " data_offsets must be [start, end]");
    }
    const std::uint64_t start = detail::require_u64(offsets[0], where + " data_offsets");
    const std::uint64_t end = detail::require_u64(offsets[1], where + " data_offsets");
    if (end < start) fail(ErrorCode::kMalformedHeader, where + " has end < start");
    if (end > data_size) {
      fail(ErrorCode::kOffsetOutOfRange,
           where + " range [" + std::to_string(start) + ", " + std::to_string(end) +
               ") exceeds data region of " + std::to_string(data_size) + " bytes (file offset " +
               std::to_string(data_begin + end) + ")");
    }
    const bool half = dtype_name == "F16";
    const std::uint64_t expected = shape_numel(shape) * (half ? 2 : 4);
    if (end - start != expected) {
      fail(ErrorCode::kMalformedHeader, where + " byte length " + std::to_string(end - start) +
                                            " does not match shape " + shape_string(shape) +
                                            " x " + dtype_name);
    }
    ranges.push_back({start, end, name});
    pending.push_back({name, half, std::move(shape), start, end});
  }

  std::sort(ranges.begin(), ranges.end(), [](const auto& a, const auto& b) {
    return std::tie(a.start, a.end, a.name) < std::tie(b.start, b.end, b.name);
  });
  std::uint64_t cursor = 0;
  for (const auto& r : ranges) {
    if (r.start < cursor) {
      fail(ErrorCode::kOverlappingRanges, "tensor '" + r.name + "' overlaps previous range at file offset " +
                                              std::to_string(data_begin + r.start));
    }
    if (r.start > cursor) {
      fail(ErrorCode::kRangeGap, "unclaimed bytes before tensor '" + r.name + "' at file offset " +
                                     std::to_string(data_begin + cursor));
    }
    cursor = r.end;
  }
  if (cursor != data_size) {
    fail(ErrorCode::kRangeGap,
         "unclaimed trailing bytes at file offset " + std::to_string(data_begin + cursor));
  }

  Checkpoint ckpt;
  for (auto& p : pending) {
    const std::uint64_t n = shape_numel(p.shape);
    std::vector<float> values(n);
    const std::uint8_t* src = data + p.start;
    if (p.half) {
      for (std::uint64_t i = 0; i < n; ++i) {
        std::uint16_t h;
        std::memcpy(&h, src + 2 * i, 2);
        values[i] = half_to_float(h);
      }
    } else if (n) {
      std::memcpy(values.data(), src, n * 4);
    }
    ckpt.insert(std::move(p.name), Tensor(std::move(p.shape), std::move(values)));
  }
  return ckpt;
}

/// Encodes as F32 with tensors laid out in name order; header keys sorted.
inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt) {
    if (shape_numel(t.shape) != t.data.size()) {
      fail(ErrorCode::kShapeMismatch, "tensor '" + name + "' data does not match its shape");
    }
    const std::uint64_t len = t.data.size() * 4;
    header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + len}}};
    offset += len;
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(8 + text.size() + offset);
  const std::uint64_t n = text.size();
  std::memcpy(out.data(), &n, 8);
  std::memcpy(out.data() + 8, text.data(), text.size());
  std::uint8_t* dst = out.data() + 8 + text.size();
  for (const auto& [_, t] : ckpt) {
    if (!t.data.empty()) std::memcpy(dst, t.data.data(), t.data.size() * 4);
    dst += t.data.size() * 4;
  }
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::kIo, "read failed: " + path.string());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failed: " + path.string());
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

inline void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

/// Per-tensor parent deviation from the shared base.
struct DeltaMap {
  std::map<std::string, DeltaTensor, std::less<>> deltas;
  /// Names present in only one model, or present in both with unequal shapes.
  std::vector<std::string> excluded;
};

inline DeltaTensor subtract(const Tensor& parent, const Tensor& base) {
  require_same_shape(parent, base, "delta");
  std::vector<double> d(parent.numel());
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = static_cast<double>(parent.data[i]) - static_cast<double>(base.data[i]);
  }
  return DeltaTensor(parent.shape, std::move(d));
}

inline DeltaMap tensor_delta(const Checkpoint& parent, const Checkpoint& base) {
  DeltaMap out;
  for (const auto& [name, t] : parent) {
    const Tensor* b = base.find(name);
    if (b && b->shape == t.shape) {
      out.deltas.emplace(name, subtract(t, *b));
    } else {
      out.excluded.push_back(name);
    }
  }
  for (const auto& [name, _] : base) {
    if (!parent.contains(name)) out.excluded.push_back(name);
  }
  std::sort(out.excluded.begin(), out.excluded.end());
  if (out.deltas.empty()) {
    fail(ErrorCode::kIncompatible, "parent and base share no tensor with equal shape");
  }
  return out;
}

/// base + delta, rounded to F32.
inline Tensor reconstruct(const Tensor& base, const DeltaTensor& delta) {
  require_same_shape(base, delta, "reconstruct");
  std::vector<float> out(base.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(base.data[i]) + delta.data[i]);
  }
  return Tensor(base.shape, std::move(out));
}

struct ShapeConflict {
  std::string name;
  Shape shape_a;
  Shape shape_b;
};

struct CompatReport {
  std::vector<std::string> shared;  // in both models, any shape
  std::vector<ShapeConflict> mismatches;
  std::vector<std::string> only_a;
  std::vector<std::string> only_b;
  bool homologous = true;
};

inline CompatReport validate_pair(const Checkpoint& a, const Checkpoint& b) {
  CompatReport r;
  for (const auto& [name, t] : a) {
    if (const Tensor* other = b.find(name)) {
      r.shared.push_back(name);
      if (other->shape != t.shape) r.mismatches.push_back({name, t.shape, other->shape});
    } else {
      r.only_a.push_back(name);
    }
  }
  for (const auto& [name, _] : b) {
    if (!a.contains(name)) r.only_b.push_back(name);
  }
  r.homologous = r.mismatches.empty();
  return r;
}

inline void to_json(nlohmann::json& j, const CompatReport& r) {
  j = nlohmann::json{{"shared", r.shared}, {"only_a", r.only_a}, {"only_b", r.only_b},
                     {"homologous", r.homologous}, {"mismatches", nlohmann::json::array()}};
  for (const auto& m : r.mismatches) {
    j["mismatches"].push_back({{"name", m.name}, {"shape_a", m.shape_a}, {"shape_b", m.shape_b}});
  }
}

}  // namespace darwin
