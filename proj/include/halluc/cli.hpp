#pragma once

#include <cstdio>

#include "CLI11.hpp"

#include "halluc/commands.hpp"

namespace halluc {

// argv -> CliArgs -> run_command. Kept out of main() so argument handling is
// testable in-process.
inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"few-shot transfer pipeline: pretrain, hallucinate labels, finetune, evaluate"};
  app.require_subcommand(1);

  CliArgs args;
  uint64_t seed_val = 0;
  int workers_val = 1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "experiment config JSON")->required();
    cmd->add_option("--out", args.out_dir, "output directory (overrides config output_dir)");
    cmd->add_option("--seed", seed_val, "override the seed this command consumes");
    cmd->add_option("--workers", workers_val, "episode worker threads (1 = sequential)")
        ->check(CLI::PositiveNumber);
    cmd->callback([&args, cmd, &seed_val, &workers_val] {
      args.command = cmd->get_name();
      if (cmd->count("--seed")) args.seed = seed_val;
      if (cmd->count("--workers")) args.workers = workers_val;
    });
    return cmd;
  };

  add_common(app.add_subcommand("generate", "write base/novel CSVs and a split manifest"));

  CLI::App* pre = add_common(
      app.add_subcommand("pretrain", "train the backbone on base data, write a checkpoint"));
  pre->add_option("--resume", args.resume, "checkpoint to continue from");

  CLI::App* run = add_common(
      app.add_subcommand("run", "episodic evaluation; per-episode CSV + summary table"));
  run->add_option("--checkpoint", args.checkpoint, "pretrained checkpoint (default <out>/checkpoint.json)");
  run->add_option("--strategy", args.strategy,
                  "run only this strategy (frozen_lr, finetune_only, hard_halluc, soft_halluc)");
  run->add_flag("--ablation", args.ablation,
                "run all strategies plus the base-gradient gating matrix");

  CLI::App* sw = add_common(app.add_subcommand("sweep", "sweep one knob across values"));
  sw->add_option("--checkpoint", args.checkpoint, "pretrained checkpoint (default <out>/checkpoint.json)");
  sw->add_option("--strategy", args.strategy, "strategy to sweep (default soft_halluc)");
  sw->add_option("--axis", args.axis, "base_fraction, way, temperature, or lambda_kl")
      ->required();
  sw->add_option("--values", args.values, "comma-separated axis values")
      ->required()
      ->delimiter(',');

  CLI::App* ins = add_common(app.add_subcommand(
      "inspect", "top pseudo-labeled base examples per novel class for one episode"));
  ins->add_option("--checkpoint", args.checkpoint, "pretrained checkpoint (default <out>/checkpoint.json)");
  ins->add_option("--episode", args.episode, "episode index under the master seed");
  ins->add_option("--top", args.top_k, "examples per novel class");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help and friends
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return run_command(args);
}

}  // namespace halluc
