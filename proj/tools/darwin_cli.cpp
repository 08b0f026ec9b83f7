// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "darwin/commands.hpp"

namespace {

using namespace darwin;
using namespace darwin::cli;

void add_evolution_flags(CLI::App* app, EvolutionOverrides& o) {
  auto opt = [&](const char* name, auto& field, const char* help) {
    app->add_option_function<std::remove_reference_t<decltype(*field)>>(
        name, [&field](const auto& v) { field = v; }, help);
  };
  opt("--population-size", o.population_size, "individuals per generation");
  opt("--generations-phase1", o.generations_phase1, "proxy-fitness generations");
  opt("--generations-phase2", o.generations_phase2, "evaluated rounds in phase 2");
  opt("--sigma-init", o.sigma_init, "initial mutation scale (fraction of gene range)");
  opt("--sigma-decay", o.sigma_decay, "per-generation mutation decay");
  opt("--elite-count", o.elite_count, "elites carried per generation");
  opt("--tournament-size", o.tournament_size, "tournament selection size");
  opt("--phase2-top-k", o.phase2_top_k, "candidates passed to phase 2");
  opt("--eval-runs-n", o.eval_runs_n, "evaluations per phase-2 candidate");
  opt("--seed", o.seed, "master seed");
  opt("--threads", o.threads, "worker threads (0 = auto)");
  app->add_flag("--no-warm-start", o.no_warm_start, "random initial population");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evolutionary merging of homologous checkpoints"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  InspectArgs inspect;
  auto* c_inspect = app.add_subcommand("inspect", "list tensors, shapes, classes and block indices");
  c_inspect->add_option("checkpoint", inspect.checkpoint, "checkpoint file")->required();
  c_inspect->add_flag("--json", inspect.json, "machine-readable output");

  MapArgs map;
  auto* c_map = app.add_subcommand("map", "tensor correspondences between two models");
  c_map->add_option("--father", map.father, "parent A")->required();
  c_map->add_option("--mother", map.mother, "parent B")->required();
  c_map->add_option("--out", map.out, "match table JSON");
  c_map->add_option("--threshold", map.threshold, "minimum compatibility score");
  bool no_monotone = false;
  c_map->add_flag("--no-monotone", no_monotone, "allow crossing layer matches");
  c_map->add_flag("--json", map.json, "print the table as JSON");

  MriArgs mri;
  auto* c_mri = app.add_subcommand("mri", "per-tensor importance report");
  c_mri->add_option("--father", mri.father, "parent A")->required();
  c_mri->add_option("--mother", mri.mother, "parent B")->required();
  c_mri->add_option("--probes-father", mri.probes_father, "activation dump of parent A")->required();
  c_mri->add_option("--probes-mother", mri.probes_mother, "activation dump of parent B")->required();
  c_mri->add_option("--out", mri.out, "report JSON")->required();
  c_mri->add_option("--alpha", mri.alpha, "static/probe weighting");
  c_mri->add_option("--threads", mri.threads, "worker threads (0 = auto)");
  c_mri->add_flag("--json", mri.json, "print component means as JSON");

  MergeArgs merge;
  auto* c_merge = app.add_subcommand("merge", "merge two parents under a genome");
  c_merge->add_option("--base", merge.base, "shared base model")->required();
  c_merge->add_option("--father", merge.father, "parent A")->required();
  c_merge->add_option("--mother", merge.mother, "parent B")->required();
  c_merge->add_option("--genome", merge.genome, "genome JSON")->required();
  c_merge->add_option("--report", merge.report, "MRI report JSON")->required();
  c_merge->add_option("--out", merge.out, "merged checkpoint")->required();
  c_merge->add_option("--plan", merge.plan, "plan JSON (default <out>.plan.json)");
  c_merge->add_option("--seed", merge.seed, "master seed for masks");
  c_merge->add_option("--threads", merge.threads, "worker threads (0 = auto)");

  EvolveArgs evolve;
  auto* c_evolve = app.add_subcommand("evolve", "two-phase genome search");
  c_evolve->add_option("--base", evolve.base, "shared base model")->required();
  c_evolve->add_option("--father", evolve.father, "parent A")->required();
  c_evolve->add_option("--mother", evolve.mother, "parent B")->required();
  c_evolve->add_option("--report", evolve.report, "MRI report JSON")->required();
  c_evolve->add_option("--evaluator", evolve.evaluator, "evaluator spec JSON")->required();
  c_evolve->add_option("--out", evolve.out, "output directory")->required();
  c_evolve->add_option("--config", evolve.config, "key = value config file");
  add_evolution_flags(c_evolve, evolve.overrides);

  AblateArgs ablate;
  auto* c_ablate = app.add_subcommand("ablate", "fixed-tau arms against a tau-only search");
  c_ablate->add_option("--base", ablate.base, "shared base model")->required();
  c_ablate->add_option("--father", ablate.father, "parent A")->required();
  c_ablate->add_option("--mother", ablate.mother, "parent B")->required();
  c_ablate->add_option("--report", ablate.report, "MRI report JSON")->required();
  c_ablate->add_option("--evaluator", ablate.evaluator, "evaluator spec JSON")->required();
  c_ablate->add_option("--out", ablate.out, "output directory")->required();
  c_ablate->add_option("--genome", ablate.genome, "reference genome (default: warm start)");
  c_ablate->add_option("--config", ablate.config, "key = value config file");
  add_evolution_flags(c_ablate, ablate.overrides);

  FixtureArgs fixture;
  auto* c_fixture = app.add_subcommand("fixture", "write the complementary toy setup");
  c_fixture->add_option("--out", fixture.out, "output directory")->required();
  c_fixture->add_option("--seed", fixture.seed, "construction seed");

  ProbeArgs probe;
  auto* c_probe = app.add_subcommand("probe", "activation dump from a toy checkpoint");
  c_probe->add_option("--checkpoint", probe.checkpoint, "toy checkpoint")->required();
  c_probe->add_option("--model", probe.model, "toy model spec JSON")->required();
  c_probe->add_option("--manifest", probe.manifest, "probe manifest JSON (default: built-in)");
  c_probe->add_option("--out", probe.out, "dump file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*c_inspect) cmd_inspect(inspect, std::cout);
    if (*c_map) {
      map.monotone = !no_monotone;
      cmd_map(map, std::cout);
    }
    if (*c_mri) cmd_mri(mri, std::cout);
    if (*c_merge) cmd_merge(merge, std::cout);
    if (*c_evolve) cmd_evolve(evolve, std::cout);
    if (*c_ablate) cmd_ablate(ablate, std::cout);
    if (*c_fixture) cmd_fixture(fixture, std::cout);
    if (*c_probe) cmd_probe(probe, std::cout);
  } catch (const Error& e) {
    std::string msg = e.what();
    for (auto& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    std::cerr << "error: " << error_code_name(e.code()) << ": " << msg << "\n";
    return exit_status(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << error_code_name(ErrorCode::kIo) << ": " << e.what() << "\n";
    return exit_status(ErrorCode::kIo);
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
