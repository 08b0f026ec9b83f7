// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Two-phase genome search. Phase 1 is a generational GA (tournament
// selection, SLERP crossover, elitism, decaying Gaussian mutation) on a cheap
// proxy; Phase 2 materializes the surviving genomes and scores them with a
// real evaluator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "darwin/checkpoint.hpp"
#include "darwin/core/error.hpp"
#include "darwin/core/parallel.hpp"
#include "darwin/core/rng.hpp"
#include "darwin/genome.hpp"
#include "darwin/merge.hpp"
#include "darwin/mri.hpp"

namespace darwin {

struct EvolutionConfig {
  int population_size = 50;
  int generations_phase1 = 20;
  int generations_phase2 = 5;
  double sigma_init = 0.01;
  double sigma_decay = 0.95;
  int elite_count = 5;
  int tournament_size = 3;
  int phase2_top_k = 5;
  int eval_runs_n = 30;
  std::uint64_t master_seed = 0;
  bool warm_start = true;
  unsigned threads = 1;
  // Genes held at the initial reference genome (individual 0) throughout.
  std::array<bool, kGeneCount> frozen{};

  void validate() const {
    auto need = [](bool ok, const char* msg) {
      if (!ok) fail(ErrorCode::kInvalidArgument, msg);
    };
    need(population_size >= 1, "population_size must be >= 1");
    need(generations_phase1 >= 0, "generations_phase1 must be >= 0");
    need(generations_phase2 >= 1, "generations_phase2 must be >= 1");
    need(elite_count >= 1 && elite_count < population_size, "elite_count must lie in [1, population_size)");
    need(tournament_size >= 1, "tournament_size must be >= 1");
    need(phase2_top_k >= 1, "phase2_top_k must be >= 1");
    need(eval_runs_n >= 1, "eval_runs_n must be >= 1");
    need(sigma_init >= 0, "sigma_init must be >= 0");
    need(sigma_decay > 0 && sigma_decay <= 1, "sigma_decay must lie in (0, 1]");
  }

  double sigma_at(int generation) const { return sigma_init * std::pow(sigma_decay, generation); }
};

/// Applies `key = value` lines (blank lines and `#` comments ignored) onto
/// `cfg`. Keys are the EvolutionConfig field names.
inline void apply_config_text(std::string_view text, EvolutionConfig& cfg) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(lineno);
    if (eq == std::string::npos) fail(ErrorCode::kInvalidArgument, where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      std::size_t used = 0;
      auto as_int = [&] {
        const int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
      };
      auto as_double = [&] {
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
      };
      if (key == "population_size") cfg.population_size = as_int();
      else if (key == "generations_phase1") cfg.generations_phase1 = as_int();
      else if (key == "generations_phase2") cfg.generations_phase2 = as_int();
      else if (key == "sigma_init") cfg.sigma_init = as_double();
      else if (key == "sigma_decay") cfg.sigma_decay = as_double();
      else if (key == "elite_count") cfg.elite_count = as_int();
      else if (key == "tournament_size") cfg.tournament_size = as_int();
      else if (key == "phase2_top_k") cfg.phase2_top_k = as_int();
      else if (key == "eval_runs_n") cfg.eval_runs_n = as_int();
      else if (key == "master_seed") {
        const auto v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        cfg.master_seed = v;
      } else if (key == "threads") cfg.threads = static_cast<unsigned>(as_int());
      else if (key == "warm_start") {
        if (value != "true" && value != "false") throw std::invalid_argument(value);
        cfg.warm_start = value == "true";
      } else {
        fail(ErrorCode::kInvalidArgument, where + ": unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      fail(ErrorCode::kInvalidArgument, where + ": bad value '" + value + "' for " + key);
    }
  }
}

inline void to_json(nlohmann::json& j, const EvolutionConfig& c) {
  std::vector<std::string> frozen;
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    if (c.frozen[i]) frozen.emplace_back(kGenes[i].name);
  }
  j = {{"population_size", c.population_size},
       {"generations_phase1", c.generations_phase1},
       {"generations_phase2", c.generations_phase2},
       {"sigma_init", c.sigma_init},
       {"sigma_decay", c.sigma_decay},
       {"elite_count", c.elite_count},
       {"tournament_size", c.tournament_size},
       {"phase2_top_k", c.phase2_top_k},
       {"eval_runs_n", c.eval_runs_n},
       {"master_seed", c.master_seed},
       {"warm_start", c.warm_start},
       {"frozen_genes", frozen}};
}

struct Individual {
  Genome genome;
  double score = 0;
  bool scored = false;
};

struct EvolutionState {
  int generation = 0;
  std::vector<Individual> population;
  std::vector<Individual> elites;  // best first
  double sigma = 0;
  std::uint64_t master_seed = 0;
};

using GenomeEvaluator = std::function<double(const Genome&)>;

namespace detail {
// Stream tags keep initialization, Phase 1 and Phase 2 draws disjoint.
inline constexpr std::uint64_t kInitTag = 0x494E4954;    // "INIT"
inline constexpr std::uint64_t kPhase1Tag = 0x50483031;  // "PH01"
inline constexpr std::uint64_t kPhase2Tag = 0x50483032;  // "PH02"

inline Genome apply_frozen(const Genome& g, const Genome& reference, const EvolutionConfig& cfg) {
  auto v = g.genes();
  const auto r = reference.genes();
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    if (cfg.frozen[i]) v[i] = r[i];
  }
  return Genome::from_genes(v);
}

/// Indices sorted by score descending, ties by lower index.
inline std::vector<std::size_t> ranking(const std::vector<Individual>& pop) {
  std::vector<std::size_t> idx(pop.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return pop[a].score > pop[b].score; });
  return idx;
}

inline std::size_t tournament(const std::vector<Individual>& pop, int size, RandomStream& rng) {
  std::size_t best = rng.below(pop.size());
  for (int k = 1; k < size; ++k) {
    const std::size_t c = rng.below(pop.size());
    if (pop[c].score > pop[best].score || (pop[c].score == pop[best].score && c < best)) best = c;
  }
  return best;
}
}  // namespace detail

/// Mean r_MRI per class, globally and per block, over the tensors of `topo`.
inline Genome warm_start_genome(const MriReport& report, const ModelTopology& topo) {
  double total = 0;
  int count = 0;
  std::map<ComponentClass, std::pair<double, int>> by_class;
  std::array<std::pair<double, int>, kBlockCount> by_block{};
  for (const auto& [name, cls] : topo.classes) {
    const MriEntry* e = report.find(name);
    if (!e) continue;
    total += e->r_mri;
    ++count;
    auto& c = by_class[cls.component];
    c.first += e->r_mri;
    ++c.second;
    if (cls.layer) {
      auto& b = by_block[static_cast<std::size_t>(block_index(*cls.layer, topo.layer_count))];
      b.first += e->r_mri;
      ++b.second;
    }
  }
  if (count == 0) fail(ErrorCode::kInvalidArgument, "MRI report covers no tensor of the topology");
  const double global = total / count;
  auto class_mean = [&](ComponentClass c) {
    auto it = by_class.find(c);
    return it == by_class.end() ? global : it->second.first / it->second.second;
  };
  Genome g;
  g.global_ratio = global;
  g.attn_ratio = class_mean(ComponentClass::kAttention);
  g.ffn_ratio = class_mean(ComponentClass::kFfn);
  g.embed_ratio = class_mean(ComponentClass::kEmbedding);
  for (int b = 0; b < kBlockCount; ++b) {
    const auto& [sum, n] = by_block[static_cast<std::size_t>(b)];
    g.block_ratio[static_cast<std::size_t>(b)] = n == 0 ? global : sum / n;
  }
  g.density_a = 0.9;
  g.density_b = 0.9;
  g.mri_trust = 0.5;
  g.merge_method_weight = 0.3;
  return clamp(g);
}

/// Individual 0 is `reference`; the others are `reference` mutated with
/// sigma 0.05 relative to the initialization spread of each gene.
inline EvolutionState population_around(const Genome& reference, const EvolutionConfig& cfg) {
  cfg.validate();
  GeneVector spread;
  for (std::size_t i = 0; i < kGeneCount; ++i) spread[i] = kGenes[i].init_hi - kGenes[i].init_lo;
  EvolutionState s;
  s.master_seed = cfg.master_seed;
  s.sigma = cfg.sigma_at(0);
  const Genome ref = clamp(reference);
  s.population.push_back({ref});
  for (int slot = 1; slot < cfg.population_size; ++slot) {
    RandomStream rng(derive_seed(cfg.master_seed, detail::kInitTag, std::uint64_t(slot)));
    s.population.push_back({detail::apply_frozen(mutate_scaled(ref, 0.05, spread, rng), ref, cfg)});
  }
  return s;
}

/// Uniform draws from the initialization spread (warm start disabled).
/// Frozen genes, if any, are taken from individual 0.
inline EvolutionState random_population(const EvolutionConfig& cfg) {
  cfg.validate();
  EvolutionState s;
  s.master_seed = cfg.master_seed;
  s.sigma = cfg.sigma_at(0);
  for (int slot = 0; slot < cfg.population_size; ++slot) {
    RandomStream rng(derive_seed(cfg.master_seed, detail::kInitTag, std::uint64_t(slot)));
    Genome g = random_genome(rng);
    if (slot > 0) g = detail::apply_frozen(g, s.population[0].genome, cfg);
    s.population.push_back({g});
  }
  return s;
}

inline EvolutionState init_population(const EvolutionConfig& cfg, const MriReport& report,
                                      const ModelTopology& topo) {
  if (report.tensors.empty()) fail(ErrorCode::kInvalidArgument, "MRI report is empty");
  if (!cfg.warm_start) return random_population(cfg);
  return population_around(warm_start_genome(report, topo), cfg);
}

/// Scores every unscored individual (concurrently) and refreshes the elite
/// archive.
inline void evaluate_population(EvolutionState& s, const EvolutionConfig& cfg, const GenomeEvaluator& eval) {
  parallel_for(s.population.size(), cfg.threads, [&](std::size_t i) {
    Individual& ind = s.population[i];
    if (ind.scored) return;
    ind.score = eval(ind.genome);
    ind.scored = true;
  });
  const auto order = detail::ranking(s.population);
  s.elites.clear();
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(cfg.elite_count), order.size());
  for (std::size_t k = 0; k < n; ++k) s.elites.push_back(s.population[order[k]]);
}

/// One generational transition. Elites keep their scores; offspring are
/// unscored until the next evaluation.
inline EvolutionState step_generation(EvolutionState state, const EvolutionConfig& cfg,
                                      const GenomeEvaluator& eval) {
  cfg.validate();
  evaluate_population(state, cfg, eval);
  const Genome reference = state.population.front().genome;
  EvolutionState next;
  next.generation = state.generation + 1;
  next.master_seed = state.master_seed;
  next.sigma = cfg.sigma_at(next.generation);
  next.population = state.elites;
  const double sigma = cfg.sigma_at(state.generation);
  for (int slot = cfg.elite_count; slot < cfg.population_size; ++slot) {
    RandomStream rng(derive_seed(state.master_seed, detail::kPhase1Tag,
                                 std::uint64_t(state.generation), std::uint64_t(slot)));
    const auto& p1 = state.population[detail::tournament(state.population, cfg.tournament_size, rng)];
    const auto& p2 = state.population[detail::tournament(state.population, cfg.tournament_size, rng)];
    const double t = rng.uniform();
    Genome child = mutate(slerp_crossover(p1.genome, p2.genome, t), sigma, rng);
    next.population.push_back({detail::apply_frozen(child, reference, cfg)});
  }
  next.elites = state.elites;
  return next;
}

struct GenerationSummary {
  int generation = 0;
  double best = 0;
  double mean = 0;
  double sigma = 0;
  Genome elite;
};

inline void to_json(nlohmann::json& j, const GenerationSummary& s) {
  j = {{"generation", s.generation}, {"best", s.best}, {"mean", s.mean}, {"sigma", s.sigma}, {"elite", s.elite}};
}

inline GenerationSummary summarize(const EvolutionState& s) {
  GenerationSummary out;
  out.generation = s.generation;
  out.sigma = s.sigma;
  double total = 0;
  for (const auto& ind : s.population) total += ind.score;
  out.mean = s.population.empty() ? 0 : total / static_cast<double>(s.population.size());
  if (!s.elites.empty()) {
    out.best = s.elites.front().score;
    out.elite = s.elites.front().genome;
  }
  return out;
}

struct Phase1Result {
  std::vector<Genome> top;          // best first, duplicates collapsed
  std::vector<double> top_scores;
  std::vector<GenerationSummary> trace;  // one entry per evaluated generation
};

/// Runs generations_phase1 transitions from `state`, then ranks the final
/// population.
inline Phase1Result run_phase1(EvolutionState state, const EvolutionConfig& cfg, const GenomeEvaluator& eval) {
  cfg.validate();
  Phase1Result out;
  for (int g = 0; g < cfg.generations_phase1; ++g) {
    evaluate_population(state, cfg, eval);
    out.trace.push_back(summarize(state));
    state = step_generation(std::move(state), cfg, eval);
  }
  evaluate_population(state, cfg, eval);
  out.trace.push_back(summarize(state));
  for (std::size_t i : detail::ranking(state.population)) {
    const auto& ind = state.population[i];
    const bool dup = std::any_of(out.top.begin(), out.top.end(),
                                 [&](const Genome& g) { return nearly_equal(g, ind.genome, 1e-9); });
    if (dup) continue;
    out.top.push_back(ind.genome);
    out.top_scores.push_back(ind.score);
    if (out.top.size() == static_cast<std::size_t>(cfg.phase2_top_k)) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Proxy fitness

struct ProxyEntry {
  std::string name;
  TensorClass cls;
  double r_mri = 0.5;
  double conflict = 0;  // fraction of elements with opposite nonzero signs
};

inline double sign_conflict(const DeltaTensor& da, const DeltaTensor& db) {
  require_same_shape(da, db, "sign conflict");
  if (da.numel() == 0) return 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < da.data.size(); ++i) {
    const double x = da.data[i];
    const double y = db.data[i];
    if (x != 0 && y != 0 && ((x < 0) != (y < 0))) ++n;
  }
  return double(n) / double(da.data.size());
}

inline ProxyEntry make_proxy_entry(std::string name, const DeltaTensor& da, const DeltaTensor& db, double r_mri) {
  ProxyEntry e;
  e.cls = classify_tensor(name);
  e.name = std::move(name);
  e.r_mri = r_mri;
  e.conflict = sign_conflict(da, db);
  return e;
}

/// The `limit` largest layer tensors of `topo` by element count (ties by
/// name); all tensors are eligible when the model has no layer tensors.
inline std::vector<ProxyEntry> build_proxy_sample(const Checkpoint& base, const Checkpoint& a, const Checkpoint& b,
                                                  const MriReport& report, const ModelTopology& topo,
                                                  std::size_t limit = 32) {
  struct Cand {
    std::string name;
    std::uint64_t numel;
  };
  std::vector<Cand> layered, all;
  for (const auto& [name, cls] : topo.classes) {
    if (!report.find(name)) continue;
    const Cand c{name, shape_numel(base.at(name).shape)};
    all.push_back(c);
    if (cls.layer) layered.push_back(c);
  }
  auto& pool = layered.empty() ? all : layered;
  std::sort(pool.begin(), pool.end(), [](const Cand& x, const Cand& y) {
    if (x.numel != y.numel) return x.numel > y.numel;
    return x.name < y.name;
  });
  if (pool.size() > limit) pool.resize(limit);
  std::vector<ProxyEntry> out;
  for (const auto& c : pool) {
    const Tensor& tb = base.at(c.name);
    out.push_back(make_proxy_entry(c.name, subtract(a.at(c.name), tb), subtract(b.at(c.name), tb),
                                   report.find(c.name)->r_mri));
  }
  return out;
}

inline double proxy_fitness(const Genome& genome, const std::vector<ProxyEntry>& sample, int layer_count) {
  if (sample.empty()) fail(ErrorCode::kInvalidArgument, "proxy sample is empty");
  const Genome g = clamp(genome);
  double conflict = 0, disagreement = 0;
  for (const auto& e : sample) {
    const double r_final = fuse_ratio(e.r_mri, genome_ratio(g, e.cls, layer_count), g.mri_trust);
    conflict += e.conflict * 2.0 * std::min(r_final, 1.0 - r_final);
    disagreement += std::abs(r_final - e.r_mri);
  }
  const double n = static_cast<double>(sample.size());
  return 0.5 * (1.0 - conflict / n) + 0.5 * (1.0 - disagreement / n);
}

// ---------------------------------------------------------------------------
// Phase 2

struct FitnessRecord {
  Genome genome;
  std::vector<double> runs;
  double mean = 0;
  std::string phase = "phase2";
  bool failed = false;
  std::string error;
};

inline void to_json(nlohmann::json& j, const FitnessRecord& r) {
  j = {{"genome", r.genome}, {"runs", r.runs}, {"mean", r.mean}, {"phase", r.phase}, {"failed", r.failed}};
  if (r.failed) j["error"] = r.error;
}

/// Scores a genome `runs` times. Must be safe to call concurrently.
class CandidateScorer {
 public:
  virtual ~CandidateScorer() = default;
  virtual std::vector<double> evaluate(const Genome& genome, int runs) = 0;
};

/// Scores a materialized checkpoint once per run.
class ModelEvaluator {
 public:
  virtual ~ModelEvaluator() = default;
  virtual double score(const Checkpoint& merged, int run) = 0;
  // A deterministic evaluator returns one value for every run; it is called
  // once and the value repeated.
  virtual bool deterministic() const { return false; }
};

/// Everything needed to turn a genome into a merged checkpoint.
struct MergeInputs {
  const Checkpoint* base = nullptr;
  const Checkpoint* father = nullptr;
  const Checkpoint* mother = nullptr;
  const MriReport* report = nullptr;
  ModelTopology topo;  // tensors to plan
  std::uint64_t master_seed = 0;

  static MergeInputs make(const Checkpoint& base, const Checkpoint& father, const Checkpoint& mother,
                          const MriReport& report, std::uint64_t master_seed) {
    MergeInputs in;
    in.base = &base;
    in.father = &father;
    in.mother = &mother;
    in.report = &report;
    in.topo = derive_topology(mergeable_names(base, father, mother));
    in.master_seed = master_seed;
    return in;
  }

  MergePlan plan(const Genome& g) const { return build_merge_plan(g, *report, topo, master_seed); }

  Checkpoint materialize(const Genome& g, unsigned threads = 1) const {
    return execute_plan(plan(g), *base, *father, *mother, threads);
  }
};

class MergedModelScorer final : public CandidateScorer {
 public:
  MergedModelScorer(const MergeInputs& inputs, ModelEvaluator& evaluator) : inputs_(inputs), eval_(evaluator) {}

  std::vector<double> evaluate(const Genome& genome, int runs) override {
    const Checkpoint merged = inputs_.materialize(genome);
    std::vector<double> out;
    if (eval_.deterministic()) {
      out.assign(static_cast<std::size_t>(runs), eval_.score(merged, 0));
      return out;
    }
    for (int r = 0; r < runs; ++r) out.push_back(eval_.score(merged, r));
    return out;
  }

 private:
  const MergeInputs& inputs_;
  ModelEvaluator& eval_;
};

inline bool is_evaluation_failure(ErrorCode c) {
  return c == ErrorCode::kEvaluatorExit || c == ErrorCode::kEvaluatorTimeout || c == ErrorCode::kEvaluatorOutput ||
         c == ErrorCode::kEvaluationFailed;
}

struct Phase2Result {
  Genome best;
  std::size_t best_index = 0;
  std::vector<FitnessRecord> records;  // aligned with the candidates
};

/// Scores each candidate eval_runs_n times; the winner is the highest mean,
/// ties going to the lower index. Failed candidates are excluded.
inline Phase2Result run_phase2(const std::vector<Genome>& candidates, CandidateScorer& scorer,
                               const EvolutionConfig& cfg) {
  cfg.validate();
  if (candidates.empty()) fail(ErrorCode::kInvalidArgument, "phase 2 needs at least one candidate");
  Phase2Result out;
  out.records.resize(candidates.size());
  parallel_for(candidates.size(), cfg.threads, [&](std::size_t i) {
    FitnessRecord& rec = out.records[i];
    rec.genome = candidates[i];
    try {
      rec.runs = scorer.evaluate(candidates[i], cfg.eval_runs_n);
      if (rec.runs.empty()) fail(ErrorCode::kEvaluationFailed, "scorer returned no runs");
      rec.mean = std::accumulate(rec.runs.begin(), rec.runs.end(), 0.0) / static_cast<double>(rec.runs.size());
    } catch (const Error& e) {
      if (!is_evaluation_failure(e.code())) throw;
      rec.failed = true;
      rec.error = e.what();
      rec.runs.clear();
      rec.mean = 0;
    }
  });
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    if (out.records[i].failed) continue;
    if (!best || out.records[i].mean > out.records[*best].mean) best = i;
  }
  if (!best) fail(ErrorCode::kEvaluationFailed, "every phase 2 candidate failed evaluation");
  out.best_index = *best;
  out.best = out.records[*best].genome;
  return out;
}

struct EvolutionResult {
  Genome winner;
  double winner_score = 0;
  std::vector<GenerationSummary> phase1_trace;
  std::vector<FitnessRecord> records;  // every Phase 2 evaluation, in order
};

/// Phase 2 as a short refinement loop: round 0 scores the Phase-1 top-k;
/// each further round scores k offspring (tournament on mean score, SLERP
/// crossover, mutation continuing the sigma schedule) of all successful
/// records so far. The winner is the best record overall, earliest on ties.
inline EvolutionResult run_phase2_rounds(const std::vector<Genome>& candidates, CandidateScorer& scorer,
                                         const EvolutionConfig& cfg) {
  EvolutionResult out;
  std::vector<Genome> round = candidates;
  const Genome reference = candidates.front();
  for (int r = 0; r < cfg.generations_phase2; ++r) {
    Phase2Result res = run_phase2(round, scorer, cfg);
    for (auto& rec : res.records) out.records.push_back(std::move(rec));
    if (r + 1 == cfg.generations_phase2) break;
    std::vector<Individual> pool;
    for (const auto& rec : out.records) {
      if (!rec.failed) pool.push_back({rec.genome, rec.mean, true});
    }
    const double sigma = cfg.sigma_at(cfg.generations_phase1 + r);
    round.clear();
    for (int slot = 0; slot < cfg.phase2_top_k; ++slot) {
      RandomStream rng(derive_seed(cfg.master_seed, detail::kPhase2Tag, std::uint64_t(r), std::uint64_t(slot)));
      const auto& p1 = pool[detail::tournament(pool, cfg.tournament_size, rng)];
      const auto& p2 = pool[detail::tournament(pool, cfg.tournament_size, rng)];
      const double t = rng.uniform();
      round.push_back(detail::apply_frozen(mutate(slerp_crossover(p1.genome, p2.genome, t), sigma, rng),
                                           reference, cfg));
    }
  }
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    if (out.records[i].failed) continue;
    if (!best || out.records[i].mean > out.records[*best].mean) best = i;
  }
  out.winner = out.records[*best].genome;
  out.winner_score = out.records[*best].mean;
  return out;
}

/// Full two-phase search on merge inputs.
inline EvolutionResult run_evolution(const EvolutionConfig& cfg, const MergeInputs& inputs, ModelEvaluator& evaluator,
                                     const Genome* reference = nullptr) {
  cfg.validate();
  const auto sample = build_proxy_sample(*inputs.base, *inputs.father, *inputs.mother, *inputs.report, inputs.topo);
  const int layers = inputs.topo.layer_count;
  const GenomeEvaluator proxy = [&](const Genome& g) { return proxy_fitness(g, sample, layers); };
  EvolutionState init = reference ? population_around(*reference, cfg)
                                  : init_population(cfg, *inputs.report, inputs.topo);
  Phase1Result p1 = run_phase1(std::move(init), cfg, proxy);
  for (auto& g : p1.top) g = clamp(g);
  MergedModelScorer scorer(inputs, evaluator);
  EvolutionResult out = run_phase2_rounds(p1.top, scorer, cfg);
  out.phase1_trace = std::move(p1.trace);
  return out;
}

inline std::string trace_jsonl(const std::vector<GenerationSummary>& trace) {
  std::string out;
  for (const auto& s : trace) out += nlohmann::json(s).dump() + "\n";
  return out;
}

}  // namespace darwin
