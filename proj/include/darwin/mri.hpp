// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Model-layer Response Importance: per-tensor importance of each parent from
// weight statistics and probe activations, and the resulting Mother share
// r_MRI = MRI_B / (MRI_A + MRI_B).

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "darwin/checkpoint.hpp"
#include "darwin/core/error.hpp"
#include "darwin/core/parallel.hpp"

namespace darwin {

struct StaticConfig {
  int histogram_bins = 64;
};

struct StaticStats {
  double entropy = 0;         // histogram entropy of |v| / ln(bins)
  double variance_score = 0;  // v / (1 + v)
  double capped_norm = 0;     // min(1, ||v||_2 / sqrt(n))
  double static_score = 0;    // mean of the three

  bool operator==(const StaticStats&) const = default;
};

inline StaticStats static_score(const Tensor& t, const StaticConfig& cfg = {}) {
  if (t.empty()) fail(ErrorCode::kInvalidArgument, "static_score of an empty tensor");
  if (cfg.histogram_bins < 2) fail(ErrorCode::kInvalidArgument, "histogram needs >= 2 bins");
  const auto n = static_cast<double>(t.numel());
  double max_abs = 0, sum = 0, sum_sq = 0;
  for (float f : t.data) {
    const double v = f;
    if (!std::isfinite(v)) fail(ErrorCode::kInvalidArgument, "static_score of non-finite tensor");
    max_abs = std::max(max_abs, std::abs(v));
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / n;
  double var_acc = 0;
  for (float f : t.data) var_acc += (f - mean) * (f - mean);
  const double variance = var_acc / n;

  std::vector<std::size_t> counts(cfg.histogram_bins, 0);
  const auto bins = static_cast<std::size_t>(cfg.histogram_bins);
  for (float f : t.data) {
    std::size_t idx = 0;
    if (max_abs > 0) {
      idx = std::min(bins - 1, static_cast<std::size_t>(std::abs(double{f}) / max_abs * double(bins)));
    }
    ++counts[idx];
  }
  double entropy = 0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = double(c) / n;
    entropy -= p * std::log(p);
  }

  StaticStats s;
  s.entropy = std::clamp(entropy / std::log(double(bins)), 0.0, 1.0);
  s.variance_score = variance / (1.0 + variance);
  s.capped_norm = std::min(1.0, std::sqrt(sum_sq) / std::sqrt(n));
  s.static_score = (s.entropy + s.variance_score + s.capped_norm) / 3.0;
  return s;
}

enum class ProbeCategory { kReasoning, kCode, kLogic, kMultilingualKo, kMultilingualEn, kGeneric };

inline constexpr std::array<ProbeCategory, 6> kProbeCategories = {
    ProbeCategory::kReasoning,      ProbeCategory::kCode,           ProbeCategory::kLogic,
    ProbeCategory::kMultilingualKo, ProbeCategory::kMultilingualEn, ProbeCategory::kGeneric};

constexpr std::string_view category_name(ProbeCategory c) {
  switch (c) {
    case ProbeCategory::kReasoning: return "REASONING";
    case ProbeCategory::kCode: return "CODE";
    case ProbeCategory::kLogic: return "LOGIC";
    case ProbeCategory::kMultilingualKo: return "MULTILINGUAL_KO";
    case ProbeCategory::kMultilingualEn: return "MULTILINGUAL_EN";
    case ProbeCategory::kGeneric: return "GENERIC";
  }
  return "GENERIC";
}

inline ProbeCategory parse_category(std::string_view name) {
  for (auto c : kProbeCategories) {
    if (category_name(c) == name) return c;
  }
  fail(ErrorCode::kInvalidArgument, "unknown probe category '" + std::string(name) + "'");
}

/// Name of a per-layer, per-category mean activation in a probe dump.
inline std::string probe_tensor_name(ProbeCategory c, int layer) {
  return "probe/" + std::string(category_name(c)) + "/layer_" + std::to_string(layer);
}

struct ProbeSample {
  ProbeCategory category;
  std::string text;
};

struct ProbeManifest {
  std::vector<ProbeSample> samples;

  std::vector<std::string> texts(ProbeCategory c) const {
    std::vector<std::string> out;
    for (const auto& s : samples) {
      if (s.category == c) out.push_back(s.text);
    }
    return out;
  }

  void validate() const {
    if (texts(ProbeCategory::kGeneric).empty()) {
      fail(ErrorCode::kInvalidArgument, "probe manifest has no GENERIC samples");
    }
  }
};

inline void to_json(nlohmann::json& j, const ProbeManifest& m) {
  j = nlohmann::json::array();
  for (const auto& s : m.samples) j.push_back({{"category", category_name(s.category)}, {"text", s.text}});
}

inline void from_json(const nlohmann::json& j, ProbeManifest& m) {
  if (!j.is_array()) fail(ErrorCode::kInvalidArgument, "probe manifest must be a JSON list");
  m.samples.clear();
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("category") || !e.contains("text") ||
        !e["category"].is_string() || !e["text"].is_string()) {
      fail(ErrorCode::kInvalidArgument, "probe sample must be {category, text}");
    }
    m.samples.push_back({parse_category(e["category"].get<std::string>()), e["text"].get<std::string>()});
  }
  m.validate();
}

namespace detail {

inline double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double{a[i]} * b[i];
    na += double{a[i]} * a[i];
    nb += double{b[i]} * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

}  // namespace detail

/// Mean over the non-GENERIC categories present at `layer` of
/// 1 - cos(h_category, h_GENERIC). In [0, 2].
inline double probe_score(const Checkpoint& dump, int layer) {
  const Tensor* anchor = dump.find(probe_tensor_name(ProbeCategory::kGeneric, layer));
  if (!anchor) {
    fail(ErrorCode::kMissingTensor, "probe dump lacks GENERIC anchor at layer " + std::to_string(layer));
  }
  double total = 0;
  int present = 0;
  for (auto c : kProbeCategories) {
    if (c == ProbeCategory::kGeneric) continue;
    const Tensor* h = dump.find(probe_tensor_name(c, layer));
    if (!h) continue;
    require_same_shape(*h, *anchor, probe_tensor_name(c, layer));
    total += 1.0 - detail::cosine(h->values(), anchor->values());
    ++present;
  }
  if (present == 0) {
    fail(ErrorCode::kMissingTensor,
         "probe dump has no non-GENERIC category at layer " + std::to_string(layer));
  }
  return total / present;
}

/// alpha * static + (1 - alpha) * probe / 2.
inline double mri_score(double static_value, double probe_value, double alpha) {
  return alpha * static_value + (1.0 - alpha) * (probe_value / 2.0);
}

/// Mother share mri_b / (mri_a + mri_b); 0.5 when both are zero.
///
/// The smaller share is snapped to a 2^-53 grid and the larger one formed as
/// its complement, so mri_ratio(a, b) == 1 - mri_ratio(b, a) exactly.
inline double mri_ratio(double mri_a, double mri_b) {
  if (!(mri_a >= 0) || !(mri_b >= 0)) {
    fail(ErrorCode::kInvalidArgument, "MRI scores must be non-negative");
  }
  const double sum = mri_a + mri_b;
  if (sum == 0 || mri_a == mri_b) return 0.5;
  double minor = std::min(mri_a, mri_b) / sum;
  minor = std::ldexp(std::nearbyint(std::ldexp(minor, 53)), -53);
  return mri_b < mri_a ? minor : 1.0 - minor;
}

struct MriEntry {
  StaticStats static_a;
  StaticStats static_b;
  double probe_a = 0;
  double probe_b = 0;
  double mri_a = 0;
  double mri_b = 0;
  double r_mri = 0.5;
};

struct MriReport {
  double alpha = 0.5;
  std::map<std::string, MriEntry, std::less<>> tensors;

  const MriEntry* find(std::string_view name) const {
    auto it = tensors.find(name);
    return it == tensors.end() ? nullptr : &it->second;
  }
};

/// Output projections are named like embeddings but sit after the last layer.
inline bool is_output_head(std::string_view name) {
  return name.find("lm_head") != std::string_view::npos || name.find("unembed") != std::string_view::npos;
}

/// Layer whose probe response stands for a tensor: its own layer; first layer
/// for input embeddings; last layer for output heads and the remaining
/// non-layer tensors.
inline int probe_layer_for(std::string_view name, const TensorClass& cls, int layer_count) {
  if (cls.layer) return *cls.layer;
  if (layer_count == 0) return 0;
  if (cls.component == ComponentClass::kEmbedding && !is_output_head(name)) return 0;
  return layer_count - 1;
}

inline MriReport extract_report(const Checkpoint& father, const Checkpoint& mother,
                                const Checkpoint& dump_father, const Checkpoint& dump_mother,
                                double alpha = 0.5, unsigned threads = 1,
                                const StaticConfig& cfg = {}) {
  if (!(alpha >= 0 && alpha <= 1)) fail(ErrorCode::kInvalidArgument, "alpha must lie in [0, 1]");
  std::vector<std::string> shared;
  for (const auto& [name, _] : father) {
    if (mother.contains(name)) shared.push_back(name);
  }
  if (shared.empty()) fail(ErrorCode::kIncompatible, "parents share no tensor names");
  const ModelTopology topo = father.topology();

  std::map<int, std::pair<double, double>> probes;
  for (const auto& name : shared) {
    const int layer = probe_layer_for(name, topo.at(name), topo.layer_count);
    if (!probes.contains(layer)) {
      probes[layer] = {probe_score(dump_father, layer), probe_score(dump_mother, layer)};
    }
  }

  std::vector<MriEntry> entries(shared.size());
  parallel_for(shared.size(), threads, [&](std::size_t i) {
    const auto& name = shared[i];
    MriEntry e;
    e.static_a = static_score(father.at(name), cfg);
    e.static_b = static_score(mother.at(name), cfg);
    const auto [pa, pb] = probes.at(probe_layer_for(name, topo.at(name), topo.layer_count));
    e.probe_a = pa;
    e.probe_b = pb;
    e.mri_a = mri_score(e.static_a.static_score, pa, alpha);
    e.mri_b = mri_score(e.static_b.static_score, pb, alpha);
    e.r_mri = mri_ratio(e.mri_a, e.mri_b);
    entries[i] = e;
  });

  MriReport report;
  report.alpha = alpha;
  for (std::size_t i = 0; i < shared.size(); ++i) report.tensors.emplace(shared[i], entries[i]);
  return report;
}

inline void to_json(nlohmann::json& j, const StaticStats& s) {
  j = {{"entropy", s.entropy},
       {"variance_score", s.variance_score},
       {"capped_norm", s.capped_norm},
       {"static_score", s.static_score}};
}

inline void from_json(const nlohmann::json& j, StaticStats& s) {
  s.entropy = j.at("entropy").get<double>();
  s.variance_score = j.at("variance_score").get<double>();
  s.capped_norm = j.at("capped_norm").get<double>();
  s.static_score = j.at("static_score").get<double>();
}

inline void to_json(nlohmann::json& j, const MriReport& r) {
  j = {{"alpha", r.alpha}, {"tensors", nlohmann::json::object()}};
  for (const auto& [name, e] : r.tensors) {
    j["tensors"][name] = {{"static_a", e.static_a}, {"static_b", e.static_b},
                          {"probe_a", e.probe_a},   {"probe_b", e.probe_b},
                          {"mri_a", e.mri_a},       {"mri_b", e.mri_b},
                          {"r_mri", e.r_mri}};
  }
}

inline void from_json(const nlohmann::json& j, MriReport& r) {
  try {
    r.alpha = j.at("alpha").get<double>();
    r.tensors.clear();
    for (const auto& [name, e] : j.at("tensors").items()) {
      MriEntry m;
      m.static_a = e.at("static_a").get<StaticStats>();
      m.static_b = e.at("static_b").get<StaticStats>();
      m.probe_a = e.at("probe_a").get<double>();
      m.probe_b = e.at("probe_b").get<double>();
      m.mri_a = e.at("mri_a").get<double>();
      m.mri_b = e.at("mri_b").get<double>();
      m.r_mri = e.at("r_mri").get<double>();
      if (!(m.r_mri >= 0 && m.r_mri <= 1)) {
        fail(ErrorCode::kInvalidArgument, "r_mri of '" + name + "' outside [0, 1]");
      }
      r.tensors.emplace(name, m);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed MRI report: ") + e.what());
  }
}

/// Mean r_MRI per component class, in component order.
inline std::map<std::string, double> component_means(const MriReport& r) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& [name, e] : r.tensors) {
    auto& slot = acc[std::string(component_name(classify_tensor(name).component))];
    slot.first += e.r_mri;
    ++slot.second;
  }
  std::map<std::string, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / v.second;
  return out;
}

}  // namespace darwin
