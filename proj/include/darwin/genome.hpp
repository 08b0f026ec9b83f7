// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "darwin/checkpoint.hpp"
#include "darwin/core/error.hpp"
#include "darwin/core/rng.hpp"

namespace darwin {

inline constexpr std::size_t kGeneCount = 14;
inline constexpr int kBlockCount = 6;

struct GeneInfo {
  std::string_view name;
  double lo;
  double hi;
  // Spread used for random initialization; narrower than [lo, hi] for the
  // genes that have a conventional starting range.
  double init_lo;
  double init_hi;

  double width() const { return hi - lo; }
};

inline constexpr std::array<GeneInfo, kGeneCount> kGenes = {{
    {"global_ratio", 0.05, 0.95, 0.30, 0.70},
    {"attn_ratio", 0.05, 0.95, 0.20, 0.80},
    {"ffn_ratio", 0.05, 0.95, 0.20, 0.80},
    {"embed_ratio", 0.05, 0.95, 0.05, 0.95},
    {"density_a", 0.30, 1.00, 0.30, 1.00},
    {"density_b", 0.30, 1.00, 0.30, 1.00},
    {"block_0_ratio", 0.05, 0.95, 0.05, 0.95},
    {"block_1_ratio", 0.05, 0.95, 0.05, 0.95},
    {"block_2_ratio", 0.05, 0.95, 0.05, 0.95},
    {"block_3_ratio", 0.05, 0.95, 0.05, 0.95},
    {"block_4_ratio", 0.05, 0.95, 0.05, 0.95},
    {"block_5_ratio", 0.05, 0.95, 0.05, 0.95},
    {"mri_trust", 0.00, 1.00, 0.00, 1.00},
    {"merge_method_weight", 0.00, 1.00, 0.00, 1.00},
}};

inline constexpr double kRatioLo = 0.05;
inline constexpr double kRatioHi = 0.95;

using GeneVector = std::array<double, kGeneCount>;

/// The 14-gene merge strategy. Ratios are Mother (parent B) weights.
struct Genome {
  double global_ratio = 0.5;
  double attn_ratio = 0.5;
  double ffn_ratio = 0.5;
  double embed_ratio = 0.5;
  double density_a = 1.0;
  double density_b = 1.0;
  std::array<double, kBlockCount> block_ratio = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  double mri_trust = 0.5;
  double merge_method_weight = 0.0;

  GeneVector genes() const {
    return {global_ratio,   attn_ratio,     ffn_ratio,      embed_ratio,    density_a,
            density_b,      block_ratio[0], block_ratio[1], block_ratio[2], block_ratio[3],
            block_ratio[4], block_ratio[5], mri_trust,      merge_method_weight};
  }

  static Genome from_genes(const GeneVector& v) {
    Genome g;
    g.global_ratio = v[0];
    g.attn_ratio = v[1];
    g.ffn_ratio = v[2];
    g.embed_ratio = v[3];
    g.density_a = v[4];
    g.density_b = v[5];
    for (int b = 0; b < kBlockCount; ++b) g.block_ratio[b] = v[6 + b];
    g.mri_trust = v[12];
    g.merge_method_weight = v[13];
    return g;
  }

  bool operator==(const Genome&) const = default;
};

inline Genome clamp(const Genome& g) {
  auto v = g.genes();
  for (std::size_t i = 0; i < kGeneCount; ++i) v[i] = std::clamp(v[i], kGenes[i].lo, kGenes[i].hi);
  return Genome::from_genes(v);
}

inline bool within_bounds(const Genome& g) {
  const auto v = g.genes();
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    if (!(v[i] >= kGenes[i].lo && v[i] <= kGenes[i].hi)) return false;
  }
  return true;
}

/// Per-gene coordinates in [0, 1]^14.
inline GeneVector to_unit(const Genome& g) {
  auto v = g.genes();
  for (std::size_t i = 0; i < kGeneCount; ++i) v[i] = (v[i] - kGenes[i].lo) / kGenes[i].width();
  return v;
}

inline Genome from_unit(const GeneVector& u) {
  GeneVector v;
  for (std::size_t i = 0; i < kGeneCount; ++i) v[i] = kGenes[i].lo + u[i] * kGenes[i].width();
  return clamp(Genome::from_genes(v));
}

inline bool nearly_equal(const Genome& a, const Genome& b, double tol) {
  const auto x = a.genes();
  const auto y = b.genes();
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    if (std::abs(x[i] - y[i]) > tol) return false;
  }
  return true;
}

/// floor(layer * 6 / layer_count).
inline int block_index(int layer, int layer_count) {
  if (layer_count < 1 || layer < 0 || layer >= layer_count) {
    fail(ErrorCode::kInvalidArgument, "layer " + std::to_string(layer) + " out of range for " +
                                          std::to_string(layer_count) + " layers");
  }
  return static_cast<int>((static_cast<long long>(layer) * kBlockCount) / layer_count);
}

/// Genome-side merge ratio of one tensor: the equal-weight mean of the
/// genes that govern it, clamped to the ratio bounds.
inline double genome_ratio(const Genome& g, const TensorClass& cls, int layer_count) {
  const bool embedding = cls.component == ComponentClass::kEmbedding;
  if (!cls.layer || embedding) {
    return std::clamp((g.global_ratio + g.embed_ratio) / 2.0, kRatioLo, kRatioHi);
  }
  const double block = g.block_ratio[block_index(*cls.layer, layer_count)];
  switch (cls.component) {
    case ComponentClass::kAttention:
      return std::clamp((g.global_ratio + g.attn_ratio + block) / 3.0, kRatioLo, kRatioHi);
    case ComponentClass::kFfn:
      return std::clamp((g.global_ratio + g.ffn_ratio + block) / 3.0, kRatioLo, kRatioHi);
    default:
      return std::clamp((g.global_ratio + block) / 2.0, kRatioLo, kRatioHi);
  }
}

/// Spherical interpolation of two genomes in unit-cube coordinates.
/// Falls back to linear interpolation when the vectors are (nearly)
/// collinear or one of them is the zero vector.
inline Genome slerp_crossover(const Genome& g1, const Genome& g2, double t) {
  const Genome a = clamp(g1);
  const Genome b = clamp(g2);
  if (t == 0.0 || a == b) return a;
  if (t == 1.0) return b;

  const GeneVector u = to_unit(a);
  const GeneVector w = to_unit(b);
  double dot = 0, nu = 0, nw = 0;
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    dot += u[i] * w[i];
    nu += u[i] * u[i];
    nw += w[i] * w[i];
  }
  const double denom = std::sqrt(nu * nw);
  const double omega = denom > 0 ? std::acos(std::clamp(dot / denom, -1.0, 1.0)) : 0.0;
  if (denom == 0.0 || omega < 1e-6) {
    const auto x = a.genes();
    const auto y = b.genes();
    GeneVector v;
    for (std::size_t i = 0; i < kGeneCount; ++i) v[i] = x[i] + t * (y[i] - x[i]);
    return clamp(Genome::from_genes(v));
  }
  const double s = std::sin(omega);
  const double ca = std::sin((1.0 - t) * omega) / s;
  const double cb = std::sin(t * omega) / s;
  GeneVector out;
  for (std::size_t i = 0; i < kGeneCount; ++i) out[i] = ca * u[i] + cb * w[i];
  return from_unit(out);
}

/// Adds N(0, (sigma * scale_i)^2) to every gene and clamps.
inline Genome mutate_scaled(const Genome& g, double sigma, const GeneVector& scale,
                            RandomStream& rng) {
  auto v = g.genes();
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    const double z = rng.normal();
    if (sigma > 0) v[i] += sigma * scale[i] * z;
  }
  return clamp(Genome::from_genes(v));
}

/// Gaussian mutation with standard deviation sigma * (hi - lo) per gene.
inline Genome mutate(const Genome& g, double sigma, RandomStream& rng) {
  if (sigma < 0) fail(ErrorCode::kInvalidArgument, "mutation sigma must be >= 0");
  GeneVector widths;
  for (std::size_t i = 0; i < kGeneCount; ++i) widths[i] = kGenes[i].width();
  return mutate_scaled(g, sigma, widths, rng);
}

/// Uniform draw from the initialization spread.
inline Genome random_genome(RandomStream& rng) {
  GeneVector v;
  for (std::size_t i = 0; i < kGeneCount; ++i) v[i] = rng.uniform(kGenes[i].init_lo, kGenes[i].init_hi);
  return clamp(Genome::from_genes(v));
}

inline void to_json(nlohmann::json& j, const Genome& g) {
  j = nlohmann::json::object();
  const auto v = g.genes();
  for (std::size_t i = 0; i < kGeneCount; ++i) j[std::string(kGenes[i].name)] = v[i];
}

/// Strict: exactly the 14 gene keys, numeric, within bounds.
inline void from_json(const nlohmann::json& j, Genome& g) {
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "genome must be a JSON object");
  std::set<std::string> known;
  GeneVector v{};
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    const std::string key(kGenes[i].name);
    known.insert(key);
    auto it = j.find(key);
    if (it == j.end()) fail(ErrorCode::kInvalidArgument, "genome missing gene '" + key + "'");
    if (!it->is_number()) fail(ErrorCode::kInvalidArgument, "gene '" + key + "' is not a number");
    v[i] = it->get<double>();
    if (!(v[i] >= kGenes[i].lo && v[i] <= kGenes[i].hi)) {
      fail(ErrorCode::kInvalidArgument, "gene '" + key + "' = " + std::to_string(v[i]) +
                                            " outside [" + std::to_string(kGenes[i].lo) + ", " +
                                            std::to_string(kGenes[i].hi) + "]");
    }
  }
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) fail(ErrorCode::kInvalidArgument, "unknown genome key '" + key + "'");
  }
  g = Genome::from_genes(v);
}

}  // namespace darwin
