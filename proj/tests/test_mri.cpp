// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "darwin/mri.hpp"
#include "test_support.hpp"

namespace darwin {
namespace {

// Straight transcription of the static statistics, used as an oracle.
double reference_static(const std::vector<float>& v) {
  const double n = double(v.size());
  double max_abs = 0;
  for (float x : v) max_abs = std::max(max_abs, double(std::fabs(x)));
  std::vector<double> hist(64, 0.0);
  for (float x : v) {
    int bin = max_abs == 0 ? 0 : int(std::floor(std::fabs(x) / max_abs * 64));
    hist[std::min(bin, 63)] += 1;
  }
  double h = 0;
  for (double c : hist) {
    if (c > 0) h += -(c / n) * std::log(c / n);
  }
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0, ss = 0;
  for (float x : v) {
    var += (x - mean) * (x - mean) / n;
    ss += double(x) * x;
  }
  return (h / std::log(64.0) + var / (1 + var) + std::min(1.0, std::sqrt(ss / n))) / 3;
}

Checkpoint make_dump(int layers, std::uint64_t seed, std::size_t dim = 8) {
  Checkpoint d;
  for (int l = 0; l < layers; ++l) {
    for (auto c : kProbeCategories) {
      d.insert(probe_tensor_name(c, l),
               testing::random_tensor({dim}, derive_seed(seed, std::uint64_t(l), std::uint64_t(c))));
    }
  }
  return d;
}

Checkpoint scaled(const Checkpoint& c, float s) {
  Checkpoint out;
  for (const auto& [name, t] : c) {
    Tensor x = t;
    for (auto& v : x.data) v *= s;
    out.insert(name, std::move(x));
  }
  return out;
}

TEST(StaticScore, Examples) {
  const StaticStats constant = static_score(Tensor({4}, {3, 3, 3, 3}));
  EXPECT_EQ(constant.entropy, 0.0);
  EXPECT_EQ(constant.variance_score, 0.0);

  const StaticStats zero = static_score(Tensor::zeros({5}));
  EXPECT_EQ(zero.entropy, 0.0);
  EXPECT_EQ(zero.variance_score, 0.0);
  EXPECT_EQ(zero.capped_norm, 0.0);
  EXPECT_EQ(zero.static_score, 0.0);

  EXPECT_DOUBLE_EQ(static_score(Tensor({4}, {1, -1, 1, -1})).capped_norm, 1.0);
  EXPECT_THROW(static_score(Tensor({0}, {})), Error);
}

TEST(StaticScore, SmallNormIsNotCapped) {
  const StaticStats s = static_score(Tensor({4}, {0.1f, -0.1f, 0.1f, -0.1f}));
  EXPECT_NEAR(s.capped_norm, 0.1, 1e-7);
}

TEST(StaticScore, MatchesReferenceAndStaysInUnitRange) {
  RandomStream rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::uint64_t n = 1 + rng.below(500);
    const Tensor t = testing::random_tensor({n}, 100 + trial, rng.uniform(0.01, 5.0));
    const StaticStats s = static_score(t);
    EXPECT_NEAR(s.static_score, reference_static(t.data), 1e-12);
    for (double x : {s.entropy, s.variance_score, s.capped_norm, s.static_score}) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
    }
  }
}

TEST(StaticScore, OrderInvariant) {
  Tensor t = testing::random_tensor({300}, 8);
  const StaticStats before = static_score(t);
  RandomStream rng(9);
  std::shuffle(t.data.begin(), t.data.end(), rng);
  const StaticStats after = static_score(t);
  EXPECT_EQ(before.entropy, after.entropy);
  EXPECT_NEAR(before.variance_score, after.variance_score, 1e-15);
  EXPECT_NEAR(before.capped_norm, after.capped_norm, 1e-15);
}

TEST(StaticScore, ScalingKeepsEntropyAndRaisesNorm) {
  // Power-of-two scale keeps every bin assignment bit-exact.
  const Tensor t = testing::random_tensor({256}, 10, 0.2);
  Tensor big = t;
  for (auto& v : big.data) v *= 4.0f;
  const StaticStats a = static_score(t);
  const StaticStats b = static_score(big);
  EXPECT_EQ(a.entropy, b.entropy);
  EXPECT_GE(b.capped_norm, a.capped_norm);
}

TEST(ProbeScore, Examples) {
  const Tensor g({3}, {1, 2, 3});
  Checkpoint same, ortho, opposite;
  same.insert(probe_tensor_name(ProbeCategory::kGeneric, 0), g);
  ortho.insert(probe_tensor_name(ProbeCategory::kGeneric, 0), g);
  opposite.insert(probe_tensor_name(ProbeCategory::kGeneric, 0), g);
  for (auto c : {ProbeCategory::kReasoning, ProbeCategory::kCode, ProbeCategory::kLogic}) {
    same.insert(probe_tensor_name(c, 0), g);
  }
  ortho.insert(probe_tensor_name(ProbeCategory::kCode, 0), Tensor({3}, {3, 0, -1}));
  opposite.insert(probe_tensor_name(ProbeCategory::kLogic, 0), Tensor({3}, {-1, -2, -3}));
  EXPECT_NEAR(probe_score(same, 0), 0.0, 1e-12);
  EXPECT_NEAR(probe_score(ortho, 0), 1.0, 1e-12);
  EXPECT_NEAR(probe_score(opposite, 0), 2.0, 1e-12);
}

TEST(ProbeScore, MeanOverPresentCategories) {
  const Tensor g({2}, {1, 0});
  Checkpoint d;
  d.insert(probe_tensor_name(ProbeCategory::kGeneric, 1), g);
  d.insert(probe_tensor_name(ProbeCategory::kCode, 1), Tensor({2}, {0, 1}));
  d.insert(probe_tensor_name(ProbeCategory::kLogic, 1), Tensor({2}, {1, 0}));
  EXPECT_NEAR(probe_score(d, 1), 0.5, 1e-12);
  // zero vectors have cosine 0
  d.insert(probe_tensor_name(ProbeCategory::kReasoning, 1), Tensor::zeros({2}));
  EXPECT_NEAR(probe_score(d, 1), 2.0 / 3.0, 1e-12);
}

TEST(ProbeScore, Errors) {
  Checkpoint d;
  d.insert(probe_tensor_name(ProbeCategory::kCode, 0), Tensor({1}, {1}));
  EXPECT_THROW(probe_score(d, 0), Error);
  Checkpoint only_generic;
  only_generic.insert(probe_tensor_name(ProbeCategory::kGeneric, 0), Tensor({1}, {1}));
  EXPECT_THROW(probe_score(only_generic, 0), Error);
  EXPECT_EQ(probe_tensor_name(ProbeCategory::kMultilingualKo, 3), "probe/MULTILINGUAL_KO/layer_3");
}

TEST(MriScore, Examples) {
  EXPECT_EQ(mri_score(0.37, 1.4, 1.0), 0.37);
  EXPECT_EQ(mri_score(0.37, 1.4, 0.0), 0.7);
  EXPECT_NEAR(mri_score(0.4, 0.6, 0.5), 0.35, 1e-15);
}

TEST(MriRatio, Examples) {
  EXPECT_EQ(mri_ratio(0.3, 0.3), 0.5);
  EXPECT_EQ(mri_ratio(0, 0), 0.5);
  EXPECT_EQ(mri_ratio(1, 3), 0.75);
  EXPECT_EQ(mri_ratio(0, 2), 1.0);
  EXPECT_THROW(mri_ratio(-1, 1), Error);
}

TEST(MriRatio, SwapIsExactComplement) {
  RandomStream rng(20);
  for (int i = 0; i < 10000; ++i) {
    const double a = rng.uniform() * std::pow(10.0, rng.uniform(-6, 3));
    const double b = rng.uniform() * std::pow(10.0, rng.uniform(-6, 3));
    const double r = mri_ratio(a, b);
    ASSERT_EQ(r + mri_ratio(b, a), 1.0);
    ASSERT_NEAR(r, b / (a + b), 1e-15);
  }
}

class ExtractReport : public ::testing::Test {
 protected:
  toy::ToyModelSpec spec = testing::small_spec(2);
  Checkpoint father = toy::random_checkpoint(spec, 1, 0.5);
  Checkpoint mother = testing::perturbed(father, 2, 0.3);
  Checkpoint dump_f = make_dump(2, 3);
  Checkpoint dump_m = make_dump(2, 4);
};

TEST_F(ExtractReport, IdenticalParentsGiveHalf) {
  const MriReport r = extract_report(father, father, dump_f, dump_f);
  EXPECT_EQ(r.tensors.size(), father.size());
  for (const auto& [name, e] : r.tensors) EXPECT_EQ(e.r_mri, 0.5) << name;
}

TEST_F(ExtractReport, ProbeOnlyWithIdenticalDumpsGivesHalf) {
  const MriReport r = extract_report(father, mother, dump_f, dump_f, 0.0);
  for (const auto& [name, e] : r.tensors) EXPECT_EQ(e.r_mri, 0.5) << name;
}

TEST_F(ExtractReport, SwapGivesComplement) {
  const MriReport ab = extract_report(father, mother, dump_f, dump_m, 0.5);
  const MriReport ba = extract_report(mother, father, dump_m, dump_f, 0.5);
  for (const auto& [name, e] : ab.tensors) {
    EXPECT_EQ(e.r_mri + ba.find(name)->r_mri, 1.0) << name;
    EXPECT_GE(e.r_mri, 0.0);
    EXPECT_LE(e.r_mri, 1.0);
  }
}

TEST_F(ExtractReport, DoubledMotherRaisesRatio) {
  const Checkpoint small = scaled(father, 0.25f);
  const Checkpoint doubled = scaled(small, 2.0f);
  const MriReport r = extract_report(small, doubled, dump_f, dump_f, 0.5);
  for (const auto& [name, e] : r.tensors) {
    // recompute from the definitions
    const double sa = reference_static(small.at(name).data);
    const double sb = reference_static(doubled.at(name).data);
    const double p = e.probe_a;
    const double ma = 0.5 * sa + 0.25 * p;
    const double mb = 0.5 * sb + 0.25 * p;
    EXPECT_NEAR(e.r_mri, mb / (ma + mb), 1e-12) << name;
    EXPECT_GT(e.r_mri, 0.5) << name;
  }
}

TEST_F(ExtractReport, ProbeAssignmentByLayer) {
  const MriReport r = extract_report(father, mother, dump_f, dump_m, 0.5);
  const double p0 = probe_score(dump_f, 0);
  const double p1 = probe_score(dump_f, 1);
  EXPECT_EQ(r.find(toy::names::kTokenEmbed)->probe_a, p0);
  EXPECT_EQ(r.find(toy::names::kFinalNorm)->probe_a, p1);
  EXPECT_EQ(r.find(toy::names::kUnembed)->probe_a, p1);
  EXPECT_EQ(r.find(toy::names::layer(0, "attn.q_proj.weight"))->probe_a, p0);
  EXPECT_EQ(r.find(toy::names::layer(1, "mlp.up_proj.weight"))->probe_b, probe_score(dump_m, 1));
}

TEST_F(ExtractReport, DeterministicAcrossThreads) {
  const MriReport one = extract_report(father, mother, dump_f, dump_m, 0.5, 1);
  const MriReport many = extract_report(father, mother, dump_f, dump_m, 0.5, 4);
  EXPECT_EQ(nlohmann::json(one).dump(), nlohmann::json(many).dump());
}

TEST_F(ExtractReport, JsonRoundTrip) {
  const MriReport r = extract_report(father, mother, dump_f, dump_m, 0.3);
  const MriReport back = nlohmann::json::parse(nlohmann::json(r).dump()).get<MriReport>();
  EXPECT_EQ(back.alpha, 0.3);
  for (const auto& [name, e] : r.tensors) EXPECT_EQ(back.find(name)->r_mri, e.r_mri);
}

TEST_F(ExtractReport, MissingAnchorFails) {
  Checkpoint broken;
  for (const auto& [name, t] : dump_f) {
    if (name.find("GENERIC") == std::string::npos) broken.insert(name, t);
  }
  EXPECT_THROW(extract_report(father, mother, broken, dump_m), Error);
}

TEST(ComponentMeans, AveragesPerClass) {
  MriReport r;
  r.tensors["m.layers.0.attn.q"].r_mri = 0.2;
  r.tensors["m.layers.1.attn.q"].r_mri = 0.4;
  r.tensors["m.layers.0.mlp.up"].r_mri = 0.9;
  const auto means = component_means(r);
  EXPECT_NEAR(means.at("attention"), 0.3, 1e-15);
  EXPECT_EQ(means.at("ffn"), 0.9);
}

}  // namespace
}  // namespace darwin
