// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>

#include "darwin/evolution.hpp"
#include "test_support.hpp"

namespace darwin {
namespace {

double landscape(const Genome& g, const GeneVector& target) {
  const GeneVector u = to_unit(g);
  double d = 0;
  for (std::size_t i = 0; i < kGeneCount; ++i) d += (u[i] - target[i]) * (u[i] - target[i]);
  return 1.0 - d / double(kGeneCount);
}

EvolutionConfig small_config(std::uint64_t seed) {
  EvolutionConfig cfg;
  cfg.population_size = 20;
  cfg.generations_phase1 = 8;
  cfg.elite_count = 3;
  cfg.master_seed = seed;
  cfg.warm_start = false;
  return cfg;
}

ProxyEntry entry(const std::string& name, double conflict, double r_mri) {
  ProxyEntry e;
  e.name = name;
  e.cls = classify_tensor(name);
  e.conflict = conflict;
  e.r_mri = r_mri;
  return e;
}

class ScriptedScorer : public CandidateScorer {
 public:
  std::function<std::vector<double>(const Genome&, int)> fn;
  std::vector<double> evaluate(const Genome& g, int runs) override { return fn(g, runs); }
};

TEST(Config, DefaultsAndValidation) {
  EvolutionConfig cfg;
  EXPECT_EQ(cfg.population_size, 50);
  EXPECT_EQ(cfg.generations_phase1, 20);
  EXPECT_EQ(cfg.generations_phase2, 5);
  EXPECT_EQ(cfg.sigma_init, 0.01);
  EXPECT_EQ(cfg.sigma_decay, 0.95);
  EXPECT_EQ(cfg.elite_count, 5);
  EXPECT_EQ(cfg.tournament_size, 3);
  EXPECT_EQ(cfg.phase2_top_k, 5);
  EXPECT_EQ(cfg.eval_runs_n, 30);
  EXPECT_NO_THROW(cfg.validate());
  cfg.elite_count = 50;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.sigma_decay = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.sigma_decay = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Config, SigmaSchedule) {
  EvolutionConfig cfg;
  for (int g = 0; g < 30; ++g) EXPECT_EQ(cfg.sigma_at(g), 0.01 * std::pow(0.95, g));
}

TEST(Config, ParsesKeyValueText) {
  EvolutionConfig cfg;
  apply_config_text("# comment\npopulation_size = 12\n\n  sigma_init=0.02  \nmaster_seed = 18446744073709551615\n"
                    "warm_start = false\nphase2_top_k = 2 # trailing\n",
                    cfg);
  EXPECT_EQ(cfg.population_size, 12);
  EXPECT_EQ(cfg.sigma_init, 0.02);
  EXPECT_EQ(cfg.master_seed, 18446744073709551615ull);
  EXPECT_FALSE(cfg.warm_start);
  EXPECT_EQ(cfg.phase2_top_k, 2);
}

TEST(Config, RejectsBadText) {
  EvolutionConfig cfg;
  EXPECT_THROW(apply_config_text("nonsense = 3\n", cfg), Error);
  EXPECT_THROW(apply_config_text("population_size = many\n", cfg), Error);
  EXPECT_THROW(apply_config_text("population_size = 3x\n", cfg), Error);
  EXPECT_THROW(apply_config_text("population_size\n", cfg), Error);
  EXPECT_THROW(apply_config_text("warm_start = yes\n", cfg), Error);
}

TEST(Config, JsonListsFields) {
  EvolutionConfig cfg;
  cfg.frozen[12] = true;
  const nlohmann::json j = cfg;
  EXPECT_EQ(j.at("population_size"), 50);
  EXPECT_EQ(j.at("frozen_genes"), nlohmann::json::array({"mri_trust"}));
}

TEST(WarmStart, UniformReportGivesHalf) {
  const Checkpoint c = toy::random_checkpoint(testing::small_spec(6), 1);
  MriReport r;
  for (const auto& name : c.names()) r.tensors[name].r_mri = 0.5;
  const Genome g = warm_start_genome(r, c.topology());
  EXPECT_EQ(g.global_ratio, 0.5);
  EXPECT_EQ(g.attn_ratio, 0.5);
  EXPECT_EQ(g.ffn_ratio, 0.5);
  EXPECT_EQ(g.embed_ratio, 0.5);
  for (double b : g.block_ratio) EXPECT_EQ(b, 0.5);
  EXPECT_EQ(g.density_a, 0.9);
  EXPECT_EQ(g.density_b, 0.9);
  EXPECT_EQ(g.mri_trust, 0.5);
  EXPECT_EQ(g.merge_method_weight, 0.3);
}

TEST(WarmStart, ClassMeans) {
  const Checkpoint c = toy::random_checkpoint(testing::small_spec(6), 1);
  const ModelTopology topo = c.topology();
  MriReport r;
  RandomStream rng(2);
  double attn = 0, ffn = 0, all = 0;
  int na = 0, nf = 0;
  std::array<double, 6> block{};
  std::array<int, 6> nb{};
  for (const auto& [name, cls] : topo.classes) {
    double v = 0.5;
    if (cls.component == ComponentClass::kAttention) v = 0.2 + 0.02 * (rng.uniform() - 0.5);
    if (cls.component == ComponentClass::kFfn) v = 0.9 + 0.02 * (rng.uniform() - 0.5);
    r.tensors[name].r_mri = v;
    all += v;
    if (cls.component == ComponentClass::kAttention) attn += v, ++na;
    if (cls.component == ComponentClass::kFfn) ffn += v, ++nf;
    if (cls.layer) block[std::size_t(*cls.layer)] += v, ++nb[std::size_t(*cls.layer)];
  }
  const Genome g = warm_start_genome(r, topo);
  EXPECT_NEAR(g.attn_ratio, attn / na, 1e-12);
  EXPECT_NEAR(g.ffn_ratio, ffn / nf, 1e-12);
  EXPECT_NEAR(g.attn_ratio, 0.2, 0.011);
  EXPECT_NEAR(g.ffn_ratio, 0.9, 0.011);
  EXPECT_NEAR(g.global_ratio, all / double(topo.classes.size()), 1e-12);
  for (int b = 0; b < 6; ++b) EXPECT_NEAR(g.block_ratio[std::size_t(b)], block[std::size_t(b)] / nb[std::size_t(b)], 1e-12);
}

TEST(InitPopulation, WarmStartIsIndividualZeroAndDeterministic) {
  const Checkpoint c = toy::random_checkpoint(testing::small_spec(6), 1);
  MriReport r;
  for (const auto& name : c.names()) r.tensors[name].r_mri = 0.4;
  EvolutionConfig cfg;
  cfg.master_seed = 3;
  const EvolutionState a = init_population(cfg, r, c.topology());
  const EvolutionState b = init_population(cfg, r, c.topology());
  ASSERT_EQ(a.population.size(), 50u);
  EXPECT_EQ(a.population[0].genome, warm_start_genome(r, c.topology()));
  for (std::size_t i = 0; i < a.population.size(); ++i) {
    EXPECT_EQ(a.population[i].genome, b.population[i].genome);
    EXPECT_TRUE(within_bounds(a.population[i].genome));
  }
  EXPECT_NE(a.population[1].genome, a.population[2].genome);
  cfg.master_seed = 4;
  EXPECT_NE(init_population(cfg, r, c.topology()).population[1].genome, a.population[1].genome);
  MriReport empty;
  EXPECT_THROW(init_population(cfg, empty, c.topology()), Error);
}

TEST(StepGeneration, IdenticalPopulationWithZeroSigmaIsFixedPoint) {
  EvolutionConfig cfg = small_config(1);
  cfg.sigma_init = 0;
  const Genome g = Genome::from_genes({0.3, 0.4, 0.6, 0.2, 0.8, 0.7, 0.5, 0.4, 0.3, 0.6, 0.7, 0.2, 0.5, 0.4});
  EvolutionState s;
  s.master_seed = 1;
  s.population.assign(std::size_t(cfg.population_size), Individual{g});
  const GenomeEvaluator eval = [](const Genome&) { return 0.7; };
  const EvolutionState next = step_generation(s, cfg, eval);
  ASSERT_EQ(next.population.size(), s.population.size());
  for (const auto& ind : next.population) EXPECT_EQ(ind.genome, g);
  EXPECT_EQ(next.generation, 1);
}

TEST(StepGeneration, ElitesCarriedUnchanged) {
  EvolutionConfig cfg = small_config(2);
  GeneVector target;
  target.fill(0.3);
  const GenomeEvaluator eval = [&](const Genome& g) { return landscape(g, target); };
  EvolutionState s = random_population(cfg);
  evaluate_population(s, cfg, eval);
  const auto elites = s.elites;
  const EvolutionState next = step_generation(s, cfg, eval);
  for (int k = 0; k < cfg.elite_count; ++k) {
    EXPECT_EQ(next.population[std::size_t(k)].genome, elites[std::size_t(k)].genome);
    EXPECT_EQ(next.population[std::size_t(k)].score, elites[std::size_t(k)].score);
  }
  for (std::size_t k = 1; k < elites.size(); ++k) EXPECT_GE(elites[k - 1].score, elites[k].score);
  EXPECT_EQ(next.sigma, cfg.sigma_at(1));
}

TEST(Phase1, ElitismAndBounds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EvolutionConfig cfg = small_config(seed);
    cfg.sigma_init = 0.2;  // large steps exercise clamping
    GeneVector target;
    RandomStream rng(seed + 50);
    for (auto& t : target) t = rng.uniform();
    std::atomic<bool> in_bounds{true};
    const GenomeEvaluator eval = [&](const Genome& g) {
      if (!within_bounds(g)) in_bounds = false;
      return landscape(g, target);
    };
    const Phase1Result res = run_phase1(random_population(cfg), cfg, eval);
    ASSERT_EQ(res.trace.size(), std::size_t(cfg.generations_phase1 + 1));
    for (std::size_t g = 1; g < res.trace.size(); ++g) {
      EXPECT_GE(res.trace[g].best, res.trace[g - 1].best) << "seed " << seed << " gen " << g;
      EXPECT_EQ(res.trace[g].sigma, cfg.sigma_at(int(g)));
    }
    EXPECT_TRUE(in_bounds.load());
    EXPECT_EQ(res.top.size(), std::size_t(cfg.phase2_top_k));
    EXPECT_EQ(res.top_scores.front(), res.trace.back().best);
  }
}

TEST(Phase1, DeterministicAcrossThreadCounts) {
  EvolutionConfig cfg = small_config(9);
  GeneVector target;
  target.fill(0.6);
  const GenomeEvaluator eval = [&](const Genome& g) { return landscape(g, target); };
  const Phase1Result one = run_phase1(random_population(cfg), cfg, eval);
  cfg.threads = 3;
  const Phase1Result three = run_phase1(random_population(cfg), cfg, eval);
  EXPECT_EQ(trace_jsonl(one.trace), trace_jsonl(three.trace));
  EXPECT_EQ(one.top, three.top);
}

TEST(Phase1, TopKCollapsesDuplicates) {
  EvolutionConfig cfg = small_config(1);
  cfg.generations_phase1 = 0;
  cfg.phase2_top_k = 5;
  EvolutionState s;
  s.master_seed = 1;
  Genome a, b;
  b.global_ratio = 0.3;
  for (int i = 0; i < cfg.population_size; ++i) s.population.push_back({i % 2 ? a : b});
  const Phase1Result res = run_phase1(s, cfg, [](const Genome& g) { return g.global_ratio; });
  ASSERT_EQ(res.top.size(), 2u);
  EXPECT_EQ(res.top[0], a);
  EXPECT_EQ(res.top[1], b);
}

TEST(Phase1, FrozenGenesNeverMove) {
  EvolutionConfig cfg = small_config(4);
  cfg.sigma_init = 0.3;
  cfg.frozen.fill(true);
  cfg.frozen[12] = false;
  const Genome ref = Genome::from_genes({0.3, 0.4, 0.6, 0.2, 0.8, 0.7, 0.5, 0.4, 0.3, 0.6, 0.7, 0.2, 0.5, 0.4});
  std::atomic<bool> ok{true};
  const GenomeEvaluator eval = [&](const Genome& g) {
    Genome h = g;
    h.mri_trust = ref.mri_trust;
    if (h != ref) ok = false;
    return 1.0 - std::abs(g.mri_trust - 0.9);
  };
  const Phase1Result res = run_phase1(population_around(ref, cfg), cfg, eval);
  EXPECT_TRUE(ok.load());
  EXPECT_NEAR(res.top.front().mri_trust, 0.9, 0.1);
}

TEST(Proxy, Examples) {
  Genome full_trust;
  full_trust.mri_trust = 1.0;
  const std::vector<ProxyEntry> agree = {entry("m.layers.0.attn.q", 0.0, 0.3), entry("m.layers.1.mlp.up", 0.0, 0.7)};
  EXPECT_DOUBLE_EQ(proxy_fitness(full_trust, agree, 2), 1.0);

  Genome half;  // every ratio gene 0.5, so r_final = 0.5 for any trust
  const std::vector<ProxyEntry> opposed = {entry("m.layers.0.attn.q", 1.0, 0.5)};
  EXPECT_DOUBLE_EQ(proxy_fitness(half, opposed, 2), 0.5);
  EXPECT_THROW(proxy_fitness(half, {}, 2), Error);
}

TEST(Proxy, FullTrustDependsOnlyOnConflict) {
  RandomStream rng(3);
  std::vector<ProxyEntry> sample;
  for (int i = 0; i < 10; ++i) sample.push_back(entry("m.layers." + std::to_string(i % 6) + ".attn.q", rng.uniform(), rng.uniform()));
  Genome g1, g2;
  g1.mri_trust = g2.mri_trust = 1.0;
  g2.global_ratio = 0.05;
  g2.attn_ratio = 0.95;
  EXPECT_DOUBLE_EQ(proxy_fitness(g1, sample, 6), proxy_fitness(g2, sample, 6));
}

TEST(Proxy, SignConflict) {
  const DeltaTensor a({4}, {1, -1, 0, 2});
  const DeltaTensor b({4}, {-1, -1, 3, -0.5});
  EXPECT_EQ(sign_conflict(a, b), 0.5);
  EXPECT_EQ(sign_conflict(a, a), 0.0);
}

TEST(Proxy, SampleTakesLargestLayerTensors) {
  const auto spec = testing::small_spec(3);
  const Checkpoint base = toy::random_checkpoint(spec, 1);
  const Checkpoint a = testing::perturbed(base, 2, 0.1);
  const Checkpoint b = testing::perturbed(base, 3, 0.1);
  MriReport r;
  for (const auto& name : base.names()) r.tensors[name].r_mri = 0.5;
  const auto sample = build_proxy_sample(base, a, b, r, base.topology(), 4);
  ASSERT_EQ(sample.size(), 4u);
  for (const auto& e : sample) {
    EXPECT_TRUE(e.cls.layer.has_value()) << e.name;
    EXPECT_NE(e.name.find("mlp"), std::string::npos) << e.name;  // ffn matrices are the largest
  }
}

TEST(Phase2, PicksArgmaxWithLowIndexTies) {
  EvolutionConfig cfg;
  cfg.eval_runs_n = 3;
  std::vector<Genome> cands(4);
  for (int i = 0; i < 4; ++i) cands[std::size_t(i)].global_ratio = 0.1 * (i + 1);
  ScriptedScorer scorer;
  scorer.fn = [](const Genome& g, int runs) {
    const double v = g.global_ratio > 0.25 ? 0.8 : 0.2;  // candidates 2 and 3 tie
    return std::vector<double>(std::size_t(runs), v);
  };
  const Phase2Result res = run_phase2(cands, scorer, cfg);
  EXPECT_EQ(res.best_index, 2u);
  EXPECT_EQ(res.best, cands[2]);
  for (const auto& rec : res.records) EXPECT_EQ(rec.runs.size(), 3u);
}

TEST(Phase2, MeanOfRuns) {
  EvolutionConfig cfg;
  cfg.eval_runs_n = 4;
  ScriptedScorer scorer;
  scorer.fn = [](const Genome&, int runs) {
    std::vector<double> v;
    for (int r = 0; r < runs; ++r) v.push_back(r);
    return v;
  };
  const Phase2Result res = run_phase2({Genome{}}, scorer, cfg);
  EXPECT_EQ(res.records[0].mean, 1.5);
}

TEST(Phase2, FailedCandidatesAreExcluded) {
  EvolutionConfig cfg;
  cfg.eval_runs_n = 1;
  std::vector<Genome> cands(3);
  for (int i = 0; i < 3; ++i) cands[std::size_t(i)].global_ratio = 0.1 * (i + 1);
  ScriptedScorer scorer;
  scorer.fn = [](const Genome& g, int) -> std::vector<double> {
    if (g.global_ratio > 0.25) fail(ErrorCode::kEvaluatorExit, "exit 1");
    return {g.global_ratio};
  };
  const Phase2Result res = run_phase2(cands, scorer, cfg);
  EXPECT_EQ(res.best_index, 1u);
  EXPECT_TRUE(res.records[2].failed);
  EXPECT_FALSE(res.records[2].error.empty());

  scorer.fn = [](const Genome&, int) -> std::vector<double> { fail(ErrorCode::kEvaluatorTimeout, "slow"); };
  try {
    run_phase2(cands, scorer, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEvaluationFailed);
  }

  scorer.fn = [](const Genome&, int) -> std::vector<double> { fail(ErrorCode::kShapeMismatch, "bug"); };
  EXPECT_THROW(run_phase2(cands, scorer, cfg), Error);
}

TEST(Phase2Rounds, SingleRoundIsTopKOnly) {
  EvolutionConfig cfg;
  cfg.generations_phase2 = 1;
  cfg.eval_runs_n = 1;
  std::vector<Genome> cands(3);
  for (int i = 0; i < 3; ++i) cands[std::size_t(i)].attn_ratio = 0.2 * (i + 1);
  ScriptedScorer scorer;
  scorer.fn = [](const Genome& g, int runs) { return std::vector<double>(std::size_t(runs), g.attn_ratio); };
  const EvolutionResult res = run_phase2_rounds(cands, scorer, cfg);
  EXPECT_EQ(res.records.size(), 3u);
  EXPECT_EQ(res.winner, cands[2]);

  cfg.generations_phase2 = 3;
  const EvolutionResult more = run_phase2_rounds(cands, scorer, cfg);
  EXPECT_EQ(more.records.size(), 3u + 2u * std::size_t(cfg.phase2_top_k));
  EXPECT_GE(more.winner_score, res.winner_score);
}

class ConstantEvaluator : public ModelEvaluator {
 public:
  double score(const Checkpoint&, int) override { return 0.42; }
  bool deterministic() const override { return true; }
};

TEST(RunEvolution, DeterministicEndToEndOnToyModels) {
  const auto spec = testing::small_spec(6);
  const Checkpoint base = toy::random_checkpoint(spec, 1);
  const Checkpoint a = testing::perturbed(base, 2, 0.05);
  const Checkpoint b = testing::perturbed(base, 3, 0.05);
  MriReport r;
  RandomStream rng(4);
  for (const auto& name : base.names()) r.tensors[name].r_mri = rng.uniform(0.2, 0.8);
  EvolutionConfig cfg;
  cfg.population_size = 10;
  cfg.generations_phase1 = 3;
  cfg.generations_phase2 = 2;
  cfg.elite_count = 2;
  cfg.phase2_top_k = 2;
  cfg.eval_runs_n = 2;
  cfg.master_seed = 5;
  const MergeInputs in = MergeInputs::make(base, a, b, r, cfg.master_seed);
  ConstantEvaluator eval;
  const EvolutionResult x = run_evolution(cfg, in, eval);
  const EvolutionResult y = run_evolution(cfg, in, eval);
  EXPECT_EQ(x.winner, y.winner);
  EXPECT_EQ(x.winner_score, 0.42);
  EXPECT_EQ(trace_jsonl(x.phase1_trace), trace_jsonl(y.phase1_trace));
  EXPECT_EQ(x.records.size(), 4u);
  for (const auto& rec : x.records) EXPECT_EQ(rec.runs, (std::vector<double>{0.42, 0.42}));
}

}  // namespace
}  // namespace darwin
