// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Architecture mapper: tensor correspondences between two parents scored by
// Comp = b1 * Type + b2 * Dim + b3 * Param and accepted greedily above a
// threshold.

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "darwin/checkpoint.hpp"
#include "darwin/core/error.hpp"

namespace darwin {

struct MapperConfig {
  double beta1 = 0.5;  // type
  double beta2 = 0.3;  // dim
  double beta3 = 0.2;  // param
  double threshold = 0.6;
  bool enforce_monotone_layers = true;

  void validate() const {
    if (std::abs(beta1 + beta2 + beta3 - 1.0) > 1e-12 || beta1 < 0 || beta2 < 0 || beta3 < 0) {
      fail(ErrorCode::kInvalidArgument, "mapper weights must be non-negative and sum to 1");
    }
    // Thresholds above 1 are accepted: they simply admit no match.
    if (!(threshold >= 0)) fail(ErrorCode::kInvalidArgument, "mapper threshold must be >= 0");
  }
};

/// 1 for equal classes, 0.5 for two layer tensors of different classes,
/// 0 otherwise.
inline double type_score(const TensorClass& a, const TensorClass& b) {
  if (a.component == b.component) return 1.0;
  if (a.is_layer_tensor() && b.is_layer_tensor()) return 0.5;
  return 0.0;
}

/// 1 for equal shapes; for equal rank, the mean per-axis extent ratio;
/// 0 for different rank.
inline double dim_score(const Shape& a, const Shape& b) {
  if (a == b) return 1.0;
  if (a.size() != b.size() || a.empty()) return 0.0;
  double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto lo = std::min(a[i], b[i]);
    const auto hi = std::max(a[i], b[i]);
    total += hi == 0 ? 1.0 : double(lo) / double(hi);
  }
  return total / double(a.size());
}

inline double param_score(const Shape& a, const Shape& b) {
  const auto na = shape_numel(a);
  const auto nb = shape_numel(b);
  if (na == 0 && nb == 0) return 1.0;
  return double(std::min(na, nb)) / double(std::max(na, nb));
}

struct TensorDescriptor {
  std::string name;
  TensorClass cls;
  Shape shape;
};

struct MatchScore {
  double comp = 0;
  double type = 0;
  double dim = 0;
  double param = 0;
};

inline MatchScore compatibility(const TensorDescriptor& a, const TensorDescriptor& b,
                                const MapperConfig& cfg) {
  MatchScore s;
  s.type = type_score(a.cls, b.cls);
  s.dim = dim_score(a.shape, b.shape);
  s.param = param_score(a.shape, b.shape);
  s.comp = cfg.beta1 * s.type + cfg.beta2 * s.dim + cfg.beta3 * s.param;
  return s;
}

struct Match {
  std::string name_a;
  std::string name_b;
  MatchScore score;
  bool same_shape = false;
};

struct MatchTable {
  std::vector<Match> matches;  // sorted by name_a
  std::vector<std::string> unmatched_a;
  std::vector<std::string> unmatched_b;
};

inline std::vector<TensorDescriptor> describe(const Checkpoint& ckpt) {
  std::vector<TensorDescriptor> out;
  for (const auto& [name, t] : ckpt) out.push_back({name, classify_tensor(name), t.shape});
  return out;
}

/// True when (la, lb) does not cross any accepted layer-to-layer match.
inline bool keeps_layer_order(const std::vector<std::pair<int, int>>& accepted, int la, int lb) {
  for (const auto& [xa, xb] : accepted) {
    if ((la < xa && lb > xb) || (la > xa && lb < xb)) return false;
  }
  return true;
}

inline MatchTable match_tensors(const std::vector<TensorDescriptor>& a,
                                const std::vector<TensorDescriptor>& b, const MapperConfig& cfg) {
  cfg.validate();
  struct Candidate {
    std::size_t i;
    std::size_t j;
    MatchScore score;
  };
  std::vector<Candidate> candidates;
  candidates.reserve(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      auto s = compatibility(a[i], b[j], cfg);
      if (s.comp >= cfg.threshold) candidates.push_back({i, j, s});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [&](const Candidate& x, const Candidate& y) {
    if (x.score.comp != y.score.comp) return x.score.comp > y.score.comp;
    return std::tie(a[x.i].name, b[x.j].name) < std::tie(a[y.i].name, b[y.j].name);
  });

  std::vector<bool> used_a(a.size()), used_b(b.size());
  std::vector<std::pair<int, int>> layer_pairs;
  MatchTable table;
  for (const auto& c : candidates) {
    if (used_a[c.i] || used_b[c.j]) continue;
    const auto& la = a[c.i].cls.layer;
    const auto& lb = b[c.j].cls.layer;
    const bool layered = la && lb;
    if (cfg.enforce_monotone_layers && layered && !keeps_layer_order(layer_pairs, *la, *lb)) continue;
    used_a[c.i] = used_b[c.j] = true;
    if (layered) layer_pairs.emplace_back(*la, *lb);
    table.matches.push_back({a[c.i].name, b[c.j].name, c.score, a[c.i].shape == b[c.j].shape});
  }
  std::sort(table.matches.begin(), table.matches.end(),
            [](const Match& x, const Match& y) { return x.name_a < y.name_a; });
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!used_a[i]) table.unmatched_a.push_back(a[i].name);
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    if (!used_b[j]) table.unmatched_b.push_back(b[j].name);
  }
  return table;
}

inline MatchTable match_models(const Checkpoint& a, const Checkpoint& b, const MapperConfig& cfg = {}) {
  return match_tensors(describe(a), describe(b), cfg);
}

inline void to_json(nlohmann::json& j, const MatchTable& t) {
  j = {{"matches", nlohmann::json::array()}, {"unmatched_a", t.unmatched_a}, {"unmatched_b", t.unmatched_b}};
  for (const auto& m : t.matches) {
    j["matches"].push_back({{"name_a", m.name_a},
                            {"name_b", m.name_b},
                            {"comp_score", m.score.comp},
                            {"type_score", m.score.type},
                            {"dim_score", m.score.dim},
                            {"param_score", m.score.param},
                            {"same_shape", m.same_shape}});
  }
}

}  // namespace darwin
