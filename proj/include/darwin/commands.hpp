// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Command implementations behind the `darwin` tool. Each command reads its
// inputs, writes its outputs and a run manifest, and reports to `out`.
// Failures are thrown as darwin::Error.

#include <chrono>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "darwin/checkpoint.hpp"
#include "darwin/core/error.hpp"
#include "darwin/core/md5.hpp"
#include "darwin/evolution.hpp"
#include "darwin/fitness/external.hpp"
#include "darwin/fitness/fixture.hpp"
#include "darwin/fitness/probe_dump.hpp"
#include "darwin/fitness/tasks.hpp"
#include "darwin/fitness/toy_model.hpp"
#include "darwin/genome.hpp"
#include "darwin/mapper.hpp"
#include "darwin/merge.hpp"
#include "darwin/mri.hpp"

namespace darwin::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::string_view kToolVersion = "0.1.0";

inline std::string file_digest(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return to_hex(md5(std::span<const std::uint8_t>(bytes)));
}

class RunManifest {
 public:
  explicit RunManifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  void config(json c) { config_ = std::move(c); }
  void seed(std::uint64_t s) { seed_ = s; }
  void input(const fs::path& p) { inputs_[p.string()] = file_digest(p); }
  void output(const fs::path& p) { outputs_[p.string()] = file_digest(p); }

  json to_json() const {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json j = {{"tool_version", kToolVersion}, {"command", command_}, {"config", config_},
              {"inputs", inputs_},            {"outputs", outputs_}, {"wall_time_seconds", wall}};
    j["master_seed"] = seed_ ? json(*seed_) : json(nullptr);
    return j;
  }

  void write(const fs::path& path) const { write_text_file(path, to_json().dump(2) + "\n"); }

 private:
  std::string command_;
  json config_ = json::object();
  std::optional<std::uint64_t> seed_;
  std::map<std::string, std::string> inputs_, outputs_;
  std::chrono::steady_clock::time_point start_;
};

inline json read_json_file(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kInvalidArgument, path.string() + ": invalid JSON: " + e.what());
  }
}

inline void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

inline fs::path with_suffix(const fs::path& p, std::string_view suffix) { return fs::path(p.string() + std::string(suffix)); }

inline void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

template <typename T>
T load_json_as(const fs::path& path, std::string_view what) {
  const json j = read_json_file(path);
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, path.string() + ": malformed " + std::string(what) + ": " + e.what());
  } catch (const Error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
}

inline void require_homologous(const Checkpoint& a, const Checkpoint& b, std::string_view what) {
  const CompatReport compat = validate_pair(a, b);
  if (compat.shared.empty()) fail(ErrorCode::kIncompatible, std::string(what) + " share no tensor names");
  if (!compat.mismatches.empty()) {
    std::string list;
    for (const auto& m : compat.mismatches) {
      list += (list.empty() ? "" : ", ") + m.name + " " + shape_string(m.shape_a) + " vs " + shape_string(m.shape_b);
    }
    fail(ErrorCode::kIncompatible, std::string(what) + " disagree on shapes: " + list);
  }
}

// ---------------------------------------------------------------------------

struct InspectArgs {
  fs::path checkpoint;
  bool json = false;
};

inline void cmd_inspect(const InspectArgs& a, std::ostream& out) {
  const Checkpoint ckpt = read_checkpoint(a.checkpoint);
  const ModelTopology topo = ckpt.topology();
  auto block_of = [&](const TensorClass& cls) -> std::optional<int> {
    if (!cls.layer) return std::nullopt;
    return block_index(*cls.layer, topo.layer_count);
  };
  if (a.json) {
    json j = {{"layer_count", topo.layer_count}, {"tensors", json::array()}, {"blocks", json::array()}};
    for (const auto& [name, t] : ckpt) {
      const auto& cls = topo.at(name);
      const auto blk = block_of(cls);
      j["tensors"].push_back({{"name", name},
                              {"shape", t.shape},
                              {"numel", t.numel()},
                              {"component", component_name(cls.component)},
                              {"layer", cls.layer ? json(*cls.layer) : json(nullptr)},
                              {"block", blk ? json(*blk) : json(nullptr)}});
    }
    for (int l = 0; l < topo.layer_count; ++l) j["blocks"].push_back({{"layer", l}, {"block", block_index(l, topo.layer_count)}});
    out << j.dump(2) << "\n";
    return;
  }
  out << "tensors: " << ckpt.size() << "  layers: " << topo.layer_count << "\n";
  for (const auto& [name, t] : ckpt) {
    const auto& cls = topo.at(name);
    const auto blk = block_of(cls);
    out << name << "  " << shape_string(t.shape) << "  " << component_name(cls.component);
    if (cls.layer) out << "  layer " << *cls.layer << "  block " << *blk;
    out << "\n";
  }
  if (topo.layer_count > 0) {
    out << "block  layers\n";
    for (int b = 0; b < kBlockCount; ++b) {
      std::vector<int> layers;
      for (int l = 0; l < topo.layer_count; ++l) {
        if (block_index(l, topo.layer_count) == b) layers.push_back(l);
      }
      out << b << "      ";
      if (layers.empty()) out << "-";
      for (std::size_t i = 0; i < layers.size(); ++i) out << (i ? "," : "") << layers[i];
      out << "\n";
    }
  }
}

// ---------------------------------------------------------------------------

struct MapArgs {
  fs::path father;
  fs::path mother;
  fs::path out;
  double threshold = 0.6;
  bool monotone = true;
  bool json = false;
};

inline MatchTable cmd_map(const MapArgs& a, std::ostream& out) {
  RunManifest manifest("map");
  const Checkpoint fa = read_checkpoint(a.father);
  const Checkpoint mo = read_checkpoint(a.mother);
  manifest.input(a.father);
  manifest.input(a.mother);
  MapperConfig cfg;
  cfg.threshold = a.threshold;
  cfg.enforce_monotone_layers = a.monotone;
  const MatchTable table = match_models(fa, mo, cfg);
  manifest.config({{"threshold", cfg.threshold}, {"enforce_monotone_layers", cfg.enforce_monotone_layers},
                   {"beta", {cfg.beta1, cfg.beta2, cfg.beta3}}});
  json j = table;
  j["config"] = manifest.to_json()["config"];
  if (!a.out.empty()) {
    ensure_parent(a.out);
    write_json_file(a.out, j);
    manifest.output(a.out);
    manifest.write(with_suffix(a.out, ".manifest.json"));
  }
  double min_score = 1.0;
  for (const auto& m : table.matches) min_score = std::min(min_score, m.score.comp);
  if (a.json) {
    out << j.dump(2) << "\n";
  } else {
    if (table.unmatched_a.empty() && table.unmatched_b.empty() && !table.matches.empty()) {
      out << "all matched, min score " << min_score << "\n";
    } else {
      out << "matched " << table.matches.size() << "; unmatched " << table.unmatched_a.size() << " in father, "
          << table.unmatched_b.size() << " in mother";
      if (!table.matches.empty()) out << "; min score " << min_score;
      out << "\n";
    }
    std::map<int, std::set<int>> layer_map;
    for (const auto& m : table.matches) {
      const auto ca = classify_tensor(m.name_a);
      const auto cb = classify_tensor(m.name_b);
      if (ca.layer && cb.layer) layer_map[*ca.layer].insert(*cb.layer);
    }
    for (const auto& [la, lbs] : layer_map) {
      out << "layer " << la << " ->";
      for (int lb : lbs) out << " " << lb;
      out << "\n";
    }
  }
  return table;
}

// ---------------------------------------------------------------------------

struct MriArgs {
  fs::path father;
  fs::path mother;
  fs::path probes_father;
  fs::path probes_mother;
  fs::path out;
  double alpha = 0.5;
  unsigned threads = 0;
  bool json = false;
};

inline MriReport cmd_mri(const MriArgs& a, std::ostream& out) {
  RunManifest manifest("mri");
  const Checkpoint fa = read_checkpoint(a.father);
  const Checkpoint mo = read_checkpoint(a.mother);
  const Checkpoint pf = read_checkpoint(a.probes_father);
  const Checkpoint pm = read_checkpoint(a.probes_mother);
  for (const auto* p : {&a.father, &a.mother, &a.probes_father, &a.probes_mother}) manifest.input(*p);
  require_homologous(fa, mo, "father and mother");
  const MriReport report = extract_report(fa, mo, pf, pm, a.alpha, a.threads);
  manifest.config({{"alpha", a.alpha}, {"histogram_bins", StaticConfig{}.histogram_bins}});
  ensure_parent(a.out);
  write_json_file(a.out, report);
  manifest.output(a.out);
  manifest.write(with_suffix(a.out, ".manifest.json"));
  const auto means = component_means(report);
  if (a.json) {
    out << json(means).dump(2) << "\n";
  } else {
    out << "component,mean_r_mri\n";
    for (const auto& [k, v] : means) out << k << "," << std::fixed << std::setprecision(4) << v << "\n";
    out.unsetf(std::ios::floatfield);
  }
  return report;
}

// ---------------------------------------------------------------------------

struct MergeArgs {
  fs::path base;
  fs::path father;
  fs::path mother;
  fs::path genome;
  fs::path report;
  fs::path out;
  fs::path plan;  // default: <out>.plan.json
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

inline MergePlan cmd_merge(const MergeArgs& a, std::ostream& out) {
  RunManifest manifest("merge");
  const Checkpoint base = read_checkpoint(a.base);
  const Checkpoint fa = read_checkpoint(a.father);
  const Checkpoint mo = read_checkpoint(a.mother);
  const Genome genome = load_json_as<Genome>(a.genome, "genome");
  const MriReport report = load_json_as<MriReport>(a.report, "MRI report");
  for (const auto* p : {&a.base, &a.father, &a.mother, &a.genome, &a.report}) manifest.input(*p);
  manifest.seed(a.seed);
  manifest.config({{"genome", genome}});
  require_homologous(fa, mo, "father and mother");
  const ModelTopology topo = derive_topology(mergeable_names(base, fa, mo));
  if (topo.classes.empty()) fail(ErrorCode::kIncompatible, "no tensor is shared by base, father and mother");
  const MergePlan plan = build_merge_plan(genome, report, topo, a.seed);
  const Checkpoint merged = execute_plan(plan, base, fa, mo, a.threads);
  ensure_parent(a.out);
  write_checkpoint(merged, a.out);
  const fs::path plan_path = a.plan.empty() ? with_suffix(a.out, ".plan.json") : a.plan;
  write_json_file(plan_path, plan);
  manifest.output(a.out);
  manifest.output(plan_path);
  manifest.write(with_suffix(a.out, ".manifest.json"));
  out << "merged " << plan.tensors.size() << " tensors (tau " << plan.tau << ") -> " << a.out.string() << "\n";
  return plan;
}

// ---------------------------------------------------------------------------

struct EvolutionOverrides {
  std::optional<int> population_size, generations_phase1, generations_phase2, elite_count, tournament_size,
      phase2_top_k, eval_runs_n;
  std::optional<double> sigma_init, sigma_decay;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  bool no_warm_start = false;
};

inline EvolutionConfig resolve_config(const fs::path& config_file, const EvolutionOverrides& o) {
  EvolutionConfig cfg;
  if (!config_file.empty()) {
    const auto bytes = read_file_bytes(config_file);
    try {
      apply_config_text(std::string(bytes.begin(), bytes.end()), cfg);
    } catch (const Error& e) {
      fail(e.code(), config_file.string() + ": " + e.what());
    }
  }
  if (o.population_size) cfg.population_size = *o.population_size;
  if (o.generations_phase1) cfg.generations_phase1 = *o.generations_phase1;
  if (o.generations_phase2) cfg.generations_phase2 = *o.generations_phase2;
  if (o.elite_count) cfg.elite_count = *o.elite_count;
  if (o.tournament_size) cfg.tournament_size = *o.tournament_size;
  if (o.phase2_top_k) cfg.phase2_top_k = *o.phase2_top_k;
  if (o.eval_runs_n) cfg.eval_runs_n = *o.eval_runs_n;
  if (o.sigma_init) cfg.sigma_init = *o.sigma_init;
  if (o.sigma_decay) cfg.sigma_decay = *o.sigma_decay;
  if (o.seed) cfg.master_seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (o.no_warm_start) cfg.warm_start = false;
  cfg.validate();
  return cfg;
}

struct EvolveArgs {
  fs::path base;
  fs::path father;
  fs::path mother;
  fs::path report;
  fs::path evaluator;
  fs::path out;  // directory
  fs::path config;
  EvolutionOverrides overrides;
};

/// Evaluator from a spec file; relative task paths resolve against the
/// spec's directory.
inline std::unique_ptr<ModelEvaluator> load_evaluator(const fs::path& spec_path, const fs::path& scratch,
                                                      RunManifest* manifest) {
  toy::EvaluatorSpec spec = load_json_as<toy::EvaluatorSpec>(spec_path, "evaluator spec");
  if (manifest) manifest->input(spec_path);
  if (spec.kind == toy::EvaluatorKind::kToy) {
    fs::path tasks = spec.tasks_path;
    if (tasks.is_relative()) tasks = spec_path.parent_path() / tasks;
    if (manifest) manifest->input(tasks);
    return std::make_unique<toy::ToyEvaluator>(spec.model, load_json_as<toy::ToyTaskSet>(tasks, "task set"));
  }
  return std::make_unique<toy::ExternalEvaluator>(spec.command, scratch);
}

struct EvolveOutcome {
  EvolutionConfig config;
  EvolutionResult result;
  fs::path winner_path, merged_path, trace_path, report_path;
};

inline EvolveOutcome cmd_evolve(const EvolveArgs& a, std::ostream& out) {
  RunManifest manifest("evolve");
  EvolveOutcome o;
  o.config = resolve_config(a.config, a.overrides);
  if (!a.config.empty()) manifest.input(a.config);
  const Checkpoint base = read_checkpoint(a.base);
  const Checkpoint fa = read_checkpoint(a.father);
  const Checkpoint mo = read_checkpoint(a.mother);
  const MriReport report = load_json_as<MriReport>(a.report, "MRI report");
  for (const auto* p : {&a.base, &a.father, &a.mother, &a.report}) manifest.input(*p);
  require_homologous(fa, mo, "father and mother");
  fs::create_directories(a.out);
  auto evaluator = load_evaluator(a.evaluator, a.out / "scratch", &manifest);
  manifest.seed(o.config.master_seed);
  manifest.config(o.config);

  const MergeInputs inputs = MergeInputs::make(base, fa, mo, report, o.config.master_seed);
  o.result = run_evolution(o.config, inputs, *evaluator);

  o.winner_path = a.out / "winner_genome.json";
  o.merged_path = a.out / "merged.safetensors";
  o.trace_path = a.out / "trace.jsonl";
  o.report_path = a.out / "evolution_report.json";
  write_json_file(o.winner_path, o.result.winner);
  const MergePlan plan = inputs.plan(o.result.winner);
  write_checkpoint(execute_plan(plan, base, fa, mo, o.config.threads), o.merged_path);
  write_json_file(with_suffix(o.merged_path, ".plan.json"), plan);
  write_text_file(o.trace_path, trace_jsonl(o.result.phase1_trace));
  json rep = {{"winner", o.result.winner}, {"winner_score", o.result.winner_score}, {"records", o.result.records},
              {"config", o.config}};
  write_json_file(o.report_path, rep);
  for (const auto* p : {&o.winner_path, &o.merged_path, &o.trace_path, &o.report_path}) manifest.output(*p);
  manifest.output(with_suffix(o.merged_path, ".plan.json"));
  manifest.write(a.out / "manifest.json");
  out << "phase 1: " << o.result.phase1_trace.size() << " evaluated generations, best proxy "
      << (o.result.phase1_trace.empty() ? 0.0 : o.result.phase1_trace.back().best) << "\n";
  out << "phase 2: " << o.result.records.size() << " candidates, winner score " << o.result.winner_score << "\n";
  out << "winner: " << json(o.result.winner).dump() << "\n";
  return o;
}

// ---------------------------------------------------------------------------

struct AblationRow {
  std::string configuration;
  std::string tau_setting;
  double tau = 0;
  double score = 0;
  double delta_vs_full = 0;
};

struct AblateArgs {
  fs::path base;
  fs::path father;
  fs::path mother;
  fs::path report;
  fs::path evaluator;
  fs::path genome;  // reference genome; default: warm start
  fs::path out;     // directory
  fs::path config;
  EvolutionOverrides overrides;
};

inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << std::left << std::setw(36) << "Configuration" << std::setw(22) << "tau setting" << std::setw(10) << "Score"
    << "Delta vs. full\n";
  for (const auto& r : rows) {
    std::ostringstream score, delta;
    score << std::fixed << std::setprecision(4) << r.score;
    if (&r == &rows.back()) {
      delta << "baseline";
    } else {
      delta << std::showpos << std::fixed << std::setprecision(4) << r.delta_vs_full;
    }
    s << std::left << std::setw(36) << r.configuration << std::setw(22) << r.tau_setting << std::setw(10)
      << score.str() << delta.str() << "\n";
  }
  return s.str();
}

/// Fixed tau = 0, 1 and 0.7 against a tau-only search, every other gene
/// held at the reference genome.
inline std::vector<AblationRow> cmd_ablate(const AblateArgs& a, std::ostream& out) {
  RunManifest manifest("ablate");
  EvolutionConfig cfg = resolve_config(a.config, a.overrides);
  if (!a.config.empty()) manifest.input(a.config);
  const Checkpoint base = read_checkpoint(a.base);
  const Checkpoint fa = read_checkpoint(a.father);
  const Checkpoint mo = read_checkpoint(a.mother);
  const MriReport report = load_json_as<MriReport>(a.report, "MRI report");
  for (const auto* p : {&a.base, &a.father, &a.mother, &a.report}) manifest.input(*p);
  require_homologous(fa, mo, "father and mother");
  fs::create_directories(a.out);
  auto evaluator = load_evaluator(a.evaluator, a.out / "scratch", &manifest);
  const MergeInputs inputs = MergeInputs::make(base, fa, mo, report, cfg.master_seed);

  Genome reference;
  if (a.genome.empty()) {
    reference = warm_start_genome(report, inputs.topo);
  } else {
    reference = load_json_as<Genome>(a.genome, "genome");
    manifest.input(a.genome);
  }
  cfg.frozen.fill(true);
  cfg.frozen[12] = false;  // mri_trust
  manifest.seed(cfg.master_seed);
  manifest.config({{"evolution", cfg}, {"reference_genome", reference}});

  MergedModelScorer scorer(inputs, *evaluator);
  auto score_tau = [&](double tau) {
    Genome g = reference;
    g.mri_trust = tau;
    return run_phase2({g}, scorer, cfg).records.front().mean;
  };
  std::vector<AblationRow> rows = {
      {"No-MRI (genome only)", "tau = 0 (fixed)", 0.0, score_tau(0.0), 0},
      {"MRI-only (static merge heuristic)", "tau = 1 (fixed)", 1.0, score_tau(1.0), 0},
      {"Fixed-tau 0.7", "tau = 0.7 (fixed)", 0.7, score_tau(0.7), 0},
  };
  const EvolutionResult evolved = run_evolution(cfg, inputs, *evaluator, &reference);
  std::ostringstream tau_text;
  tau_text << "tau = evolved " << std::fixed << std::setprecision(3) << evolved.winner.mri_trust;
  rows.push_back({"Full (adaptive tau)", tau_text.str(), evolved.winner.mri_trust, evolved.winner_score, 0});
  for (auto& r : rows) r.delta_vs_full = r.score - rows.back().score;

  json j = json::array();
  for (const auto& r : rows) {
    j.push_back({{"configuration", r.configuration}, {"tau_setting", r.tau_setting}, {"tau", r.tau},
                 {"score", r.score}, {"delta_vs_full", r.delta_vs_full}});
  }
  const fs::path table_json = a.out / "ablation.json";
  const fs::path table_txt = a.out / "ablation.txt";
  write_json_file(table_json, {{"rows", j}, {"reference_genome", reference}, {"evolved_genome", evolved.winner}});
  const std::string table = format_ablation_table(rows);
  write_text_file(table_txt, table);
  manifest.output(table_json);
  manifest.output(table_txt);
  manifest.write(a.out / "manifest.json");
  out << table;
  return rows;
}

// ---------------------------------------------------------------------------

struct FixtureArgs {
  fs::path out;  // directory
  std::uint64_t seed = 2026;
};

/// Writes the complementary toy setup: base, parents, task sets, probe
/// dumps, model spec and a toy evaluator spec.
inline void cmd_fixture(const FixtureArgs& a, std::ostream& out) {
  RunManifest manifest("fixture");
  manifest.seed(a.seed);
  const toy::ComplementaryFixture fx = toy::make_complementary_fixture(a.seed);
  fs::create_directories(a.out);
  const ProbeManifest probes = toy::default_probe_manifest();
  std::vector<fs::path> written;
  auto ckpt = [&](const Checkpoint& c, const char* name) {
    written.push_back(a.out / name);
    write_checkpoint(c, written.back());
  };
  auto js = [&](const json& j, const char* name) {
    written.push_back(a.out / name);
    write_json_file(written.back(), j);
  };
  ckpt(fx.base, "base.safetensors");
  ckpt(fx.father, "father.safetensors");
  ckpt(fx.mother, "mother.safetensors");
  ckpt(toy::emit_probe_dump(fx.father, fx.spec, probes), "probes_father.safetensors");
  ckpt(toy::emit_probe_dump(fx.mother, fx.spec, probes), "probes_mother.safetensors");
  js(fx.spec, "model.json");
  js(probes, "probe_manifest.json");
  js(fx.copy_tasks, "tasks_copy.json");
  js(fx.mirror_tasks, "tasks_mirror.json");
  js(fx.combined(), "tasks_combined.json");
  js({{"kind", "toy"}, {"tasks", "tasks_combined.json"}, {"model", fx.spec}}, "evaluator.json");
  for (const auto& p : written) manifest.output(p);
  manifest.config({{"model", fx.spec}});
  manifest.write(a.out / "manifest.json");
  out << "wrote " << written.size() << " files to " << a.out.string() << "\n";
}

struct ProbeArgs {
  fs::path checkpoint;
  fs::path model;     // ToyModelSpec JSON
  fs::path manifest;  // default: built-in manifest
  fs::path out;
};

inline void cmd_probe(const ProbeArgs& a, std::ostream& out) {
  RunManifest manifest("probe");
  const Checkpoint ckpt = read_checkpoint(a.checkpoint);
  const auto spec = load_json_as<toy::ToyModelSpec>(a.model, "model spec");
  manifest.input(a.checkpoint);
  manifest.input(a.model);
  ProbeManifest probes = toy::default_probe_manifest();
  if (!a.manifest.empty()) {
    probes = load_json_as<ProbeManifest>(a.manifest, "probe manifest");
    manifest.input(a.manifest);
  }
  std::vector<std::string> warnings;
  const Checkpoint dump = toy::emit_probe_dump(ckpt, spec, probes, &warnings);
  for (const auto& w : warnings) out << "warning: " << w << "\n";
  ensure_parent(a.out);
  write_checkpoint(dump, a.out);
  manifest.output(a.out);
  manifest.write(with_suffix(a.out, ".manifest.json"));
  out << "wrote " << dump.size() << " probe tensors to " << a.out.string() << "\n";
}

}  // namespace darwin::cli
