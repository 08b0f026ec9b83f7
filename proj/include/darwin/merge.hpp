// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Merge kernels and plan execution. Every kernel works in the base + delta
// frame with r the weight of parent B (the Mother):
//   linear     base + (1 - r) dA + r dB
//   dare_ties  base + (1 - r) (mA . dA) / rhoA + r (mB . dB) / rhoB
//   slerp      base + [sin((1 - r) W) dA + sin(r W) dB] / sin W
//   blend      (1 - lambda) dare_ties + lambda slerp
// Arithmetic is f64; results are rounded to f32 once.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "darwin/checkpoint.hpp"
#include "darwin/core/error.hpp"
#include "darwin/core/parallel.hpp"
#include "darwin/core/rng.hpp"
#include "darwin/genome.hpp"
#include "darwin/mri.hpp"

namespace darwin {

enum class KernelKind { kLinear, kDareTies, kSlerp, kBlend };

constexpr std::string_view kernel_name(KernelKind k) {
  switch (k) {
    case KernelKind::kLinear: return "linear";
    case KernelKind::kDareTies: return "dare_ties";
    case KernelKind::kSlerp: return "slerp";
    case KernelKind::kBlend: return "blend";
  }
  return "blend";
}

inline KernelKind parse_kernel(std::string_view name) {
  for (auto k : {KernelKind::kLinear, KernelKind::kDareTies, KernelKind::kSlerp, KernelKind::kBlend}) {
    if (kernel_name(k) == name) return k;
  }
  fail(ErrorCode::kInvalidArgument, "unknown kernel '" + std::string(name) + "'");
}

inline double fuse_ratio(double r_mri, double r_genome, double tau) {
  auto in_unit = [](double x) { return x >= 0 && x <= 1; };
  if (!in_unit(r_mri) || !in_unit(r_genome) || !in_unit(tau)) {
    fail(ErrorCode::kInvalidArgument, "fuse_ratio inputs must lie in [0, 1]");
  }
  return tau * r_mri + (1.0 - tau) * r_genome;
}

namespace detail {

inline void check_kernel_inputs(const Tensor& base, const DeltaTensor& da, const DeltaTensor& db) {
  require_same_shape(base, da, "merge kernel (base vs delta A)");
  require_same_shape(base, db, "merge kernel (base vs delta B)");
}

inline void check_density(double density) {
  if (!(density > 0 && density <= 1)) {
    fail(ErrorCode::kInvalidArgument, "density must lie in (0, 1], got " + std::to_string(density));
  }
}

inline Tensor round_to_f32(const Shape& shape, const std::vector<double>& values) {
  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(values[i]);
  return Tensor(shape, std::move(out));
}

}  // namespace detail

inline Tensor linear_merge_tensor(const Tensor& base, const DeltaTensor& da, const DeltaTensor& db,
                                  double r) {
  detail::check_kernel_inputs(base, da, db);
  std::vector<double> out(base.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = double{base.data[i]} + (1.0 - r) * da.data[i] + r * db.data[i];
  }
  return detail::round_to_f32(base.shape, out);
}

/// Independent masks for the two parents come from separate streams.
inline constexpr std::uint64_t kMaskStreamA = 0;
inline constexpr std::uint64_t kMaskStreamB = 1;

struct BernoulliMask {
  Shape shape;
  std::vector<std::uint8_t> keep;
  double density = 1;

  std::size_t kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1)); }
};

/// Element i is kept iff uniform(seed, stream, i) < density.
inline BernoulliMask dare_mask(const Shape& shape, double density, std::uint64_t seed,
                               std::uint64_t stream = kMaskStreamA) {
  if (!(density > 0)) fail(ErrorCode::kInvalidArgument, "mask density must be > 0");
  if (density > 1) fail(ErrorCode::kInvalidArgument, "mask density must be <= 1");
  BernoulliMask m{shape, std::vector<std::uint8_t>(shape_numel(shape), 1), density};
  if (density < 1) {
    for (std::size_t i = 0; i < m.keep.size(); ++i) {
      m.keep[i] = uniform_at(seed, stream, i) < density ? 1 : 0;
    }
  }
  return m;
}

inline Tensor dare_ties_merge_tensor(const Tensor& base, const DeltaTensor& da, const DeltaTensor& db,
                                     double r, double density_a, double density_b, std::uint64_t seed) {
  detail::check_kernel_inputs(base, da, db);
  detail::check_density(density_a);
  detail::check_density(density_b);
  const auto ma = dare_mask(base.shape, density_a, seed, kMaskStreamA);
  const auto mb = dare_mask(base.shape, density_b, seed, kMaskStreamB);
  std::vector<double> out(base.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double ka = ma.keep[i] ? da.data[i] / density_a : 0.0;
    const double kb = mb.keep[i] ? db.data[i] / density_b : 0.0;
    out[i] = double{base.data[i]} + (1.0 - r) * ka + r * kb;
  }
  return detail::round_to_f32(base.shape, out);
}

inline Tensor slerp_merge_tensor(const Tensor& base, const DeltaTensor& da, const DeltaTensor& db, double r) {
  detail::check_kernel_inputs(base, da, db);
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < da.numel(); ++i) {
    dot += da.data[i] * db.data[i];
    na += da.data[i] * da.data[i];
    nb += db.data[i] * db.data[i];
  }
  const double denom = std::sqrt(na * nb);
  const double omega = denom > 0 ? std::acos(std::clamp(dot / denom, -1.0, 1.0)) : 0.0;
  const double s = std::sin(omega);
  if (s < 1e-7) return linear_merge_tensor(base, da, db, r);
  const double ca = std::sin((1.0 - r) * omega) / s;
  const double cb = std::sin(r * omega) / s;
  std::vector<double> out(base.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = double{base.data[i]} + ca * da.data[i] + cb * db.data[i];
  }
  return detail::round_to_f32(base.shape, out);
}

/// (1 - lambda) * t_dare + lambda * t_slerp, kept inside the elementwise
/// interval spanned by the two inputs.
inline Tensor blend_kernels(const Tensor& t_dare, const Tensor& t_slerp, double lambda) {
  require_same_shape(t_dare, t_slerp, "blend_kernels");
  if (!(lambda >= 0 && lambda <= 1)) fail(ErrorCode::kInvalidArgument, "lambda must lie in [0, 1]");
  std::vector<float> out(t_dare.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = t_dare.data[i];
    const double y = t_slerp.data[i];
    const double v = (1.0 - lambda) * x + lambda * y;
    out[i] = static_cast<float>(std::clamp(v, std::min(x, y), std::max(x, y)));
  }
  return Tensor(t_dare.shape, std::move(out));
}

struct PlanEntry {
  double r_final = 0.5;
  double r_mri = 0.5;
  double r_genome = 0.5;
  double density_a = 1;
  double density_b = 1;
  double lambda = 0;
  std::uint64_t mask_seed = 0;
  KernelKind kernel = KernelKind::kBlend;
};

struct MergePlan {
  std::uint64_t master_seed = 0;
  double tau = 0;
  Genome genome;
  std::map<std::string, PlanEntry, std::less<>> tensors;
};

/// Plans every tensor of `topo`; each must be present in the report.
inline MergePlan build_merge_plan(const Genome& genome, const MriReport& report,
                                  const ModelTopology& topo, std::uint64_t master_seed) {
  const Genome g = clamp(genome);
  std::vector<std::string> missing;
  for (const auto& [name, _] : topo.classes) {
    if (!report.find(name)) missing.push_back(name);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    fail(ErrorCode::kMissingTensor, "MRI report lacks planned tensors: " + list);
  }
  MergePlan plan;
  plan.master_seed = master_seed;
  plan.tau = g.mri_trust;
  plan.genome = g;
  for (const auto& [name, cls] : topo.classes) {
    PlanEntry e;
    e.r_mri = report.find(name)->r_mri;
    e.r_genome = genome_ratio(g, cls, topo.layer_count);
    e.r_final = fuse_ratio(e.r_mri, e.r_genome, g.mri_trust);
    e.density_a = g.density_a;
    e.density_b = g.density_b;
    e.lambda = g.merge_method_weight;
    e.mask_seed = tensor_seed(master_seed, name);
    e.kernel = KernelKind::kBlend;
    plan.tensors.emplace(name, e);
  }
  return plan;
}

inline Tensor merge_tensor(const PlanEntry& e, const Tensor& base, const DeltaTensor& da, const DeltaTensor& db) {
  switch (e.kernel) {
    case KernelKind::kLinear:
      return linear_merge_tensor(base, da, db, e.r_final);
    case KernelKind::kDareTies:
      return dare_ties_merge_tensor(base, da, db, e.r_final, e.density_a, e.density_b, e.mask_seed);
    case KernelKind::kSlerp:
      return slerp_merge_tensor(base, da, db, e.r_final);
    case KernelKind::kBlend:
      break;
  }
  if (e.lambda == 0.0) {
    return dare_ties_merge_tensor(base, da, db, e.r_final, e.density_a, e.density_b, e.mask_seed);
  }
  if (e.lambda == 1.0) return slerp_merge_tensor(base, da, db, e.r_final);
  return blend_kernels(
      dare_ties_merge_tensor(base, da, db, e.r_final, e.density_a, e.density_b, e.mask_seed),
      slerp_merge_tensor(base, da, db, e.r_final), e.lambda);
}

/// Merged checkpoint over parent A's tensor set: planned tensors are merged,
/// the rest keep parent A's values.
inline Checkpoint execute_plan(const MergePlan& plan, const Checkpoint& base, const Checkpoint& a,
                               const Checkpoint& b, unsigned threads = 1) {
  for (const auto& [name, _] : plan.tensors) {
    if (!a.contains(name) || !b.contains(name) || !base.contains(name)) {
      fail(ErrorCode::kMissingTensor, "planned tensor '" + name + "' is missing from an input model");
    }
  }
  const auto names = a.names();
  std::vector<Tensor> merged(names.size());
  parallel_for(names.size(), threads, [&](std::size_t i) {
    const auto& name = names[i];
    auto it = plan.tensors.find(name);
    if (it == plan.tensors.end()) {
      merged[i] = a.at(name);
      return;
    }
    const Tensor& tb = base.at(name);
    const Tensor& ta = a.at(name);
    const Tensor& tm = b.at(name);
    if (ta.shape != tb.shape || tm.shape != tb.shape) {
      fail(ErrorCode::kShapeMismatch, "tensor '" + name + "' shapes differ across base/A/B: " +
                                          shape_string(tb.shape) + ", " + shape_string(ta.shape) +
                                          ", " + shape_string(tm.shape));
    }
    merged[i] = merge_tensor(it->second, tb, subtract(ta, tb), subtract(tm, tb));
  });
  Checkpoint out;
  for (std::size_t i = 0; i < names.size(); ++i) out.insert(names[i], std::move(merged[i]));
  return out;
}

/// Names eligible for merging: present in base, A and B with one shape.
inline std::vector<std::string> mergeable_names(const Checkpoint& base, const Checkpoint& a,
                                                const Checkpoint& b) {
  std::vector<std::string> out;
  for (const auto& [name, t] : a) {
    const Tensor* tb = base.find(name);
    const Tensor* tm = b.find(name);
    if (tb && tm && tb->shape == t.shape && tm->shape == t.shape) out.push_back(name);
  }
  return out;
}

inline void to_json(nlohmann::json& j, const MergePlan& p) {
  j = {{"master_seed", p.master_seed}, {"tau", p.tau}, {"genome", p.genome}, {"tensors", nlohmann::json::object()}};
  for (const auto& [name, e] : p.tensors) {
    j["tensors"][name] = {{"r_final", e.r_final},     {"r_mri", e.r_mri},         {"r_genome", e.r_genome},
                          {"density_a", e.density_a}, {"density_b", e.density_b}, {"lambda", e.lambda},
                          {"mask_seed", e.mask_seed}, {"kernel", kernel_name(e.kernel)}};
  }
}

inline void from_json(const nlohmann::json& j, MergePlan& p) {
  try {
    p.master_seed = j.at("master_seed").get<std::uint64_t>();
    p.tau = j.at("tau").get<double>();
    p.genome = j.at("genome").get<Genome>();
    p.tensors.clear();
    for (const auto& [name, e] : j.at("tensors").items()) {
      PlanEntry pe;
      pe.r_final = e.at("r_final").get<double>();
      pe.r_mri = e.at("r_mri").get<double>();
      pe.r_genome = e.at("r_genome").get<double>();
      pe.density_a = e.at("density_a").get<double>();
      pe.density_b = e.at("density_b").get<double>();
      pe.lambda = e.at("lambda").get<double>();
      pe.mask_seed = e.at("mask_seed").get<std::uint64_t>();
      pe.kernel = parse_kernel(e.at("kernel").get<std::string>());
      p.tensors.emplace(name, pe);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed merge plan: ") + e.what());
  }
}

}  // namespace darwin
