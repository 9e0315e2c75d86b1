#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "halluc/config.hpp"
#include "halluc/harness.hpp"

namespace halluc {

// Parsed command line. Every command behavior lives behind these fields so
// the whole CLI is exercisable as plain function calls.
struct CliArgs {
  std::string command;
  std::string config_path;
  std::string out_dir;     // overrides config output_dir when nonempty
  std::string checkpoint;  // run/sweep/inspect input; default <out>/checkpoint.json
  std::string resume;      // pretrain: continue from this checkpoint
  std::string strategy;    // run: filter to one strategy; sweep: strategy to sweep
  std::string axis = "temperature";  // sweep axis name
  std::vector<double> values;        // sweep axis values
  bool ablation = false;             // run: full strategy + gradient-gating matrix
  int episode = 0;                   // inspect: episode index under the master seed
  int top_k = 5;                     // inspect: examples per novel class
  std::optional<uint64_t> seed;
  std::optional<int> workers;
};

namespace climpl {

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << content;
  f.flush();
  if (!f) throw DataError("write failed for '" + path + "'");
}

inline std::string ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output dir '" + dir + "': " + ec.message());
  return dir;
}

// Load + validate the config file, then fold in the CLI overrides. --seed
// retargets the seed the command actually consumes: the generator for
// `generate`, pretraining for `pretrain`, the episode master seed otherwise.
inline ExperimentConfig resolved_config(const CliArgs& a) {
  if (a.config_path.empty()) throw ConfigError(a.command + ": --config is required");
  ExperimentConfig cfg = load_experiment_config(a.config_path);
  if (!a.out_dir.empty()) cfg.output_dir = a.out_dir;
  if (a.workers) cfg.workers = *a.workers;
  if (a.seed) {
    if (a.command == "generate")
      cfg.generator.seed = *a.seed;
    else if (a.command == "pretrain")
      cfg.pretrain.seed = *a.seed;
    else
      cfg.master_seed = *a.seed;
  }
  return cfg;
}

inline void write_resolved_config(const std::string& dir, const ExperimentConfig& cfg) {
  write_text_file(dir + "/resolved_config.json", experiment_to_json(cfg).dump(2) + "\n");
}

struct LoadedData {
  LabeledDataset base;
  LabeledDataset novel;
};

inline LoadedData load_data(const ExperimentConfig& cfg) {
  if (cfg.use_generator) {
    SyntheticData d = generate_synthetic(cfg.generator);
    return {std::move(d.base), std::move(d.novel)};
  }
  LoadedData d;
  d.base = load_csv(cfg.base_csv);
  d.base.name = "base";
  d.novel = load_csv(cfg.novel_csv);
  d.novel.name = "novel";
  require_disjoint_classes(d.base.class_set, d.novel.class_set);
  if (d.base.dim() != d.novel.dim())
    throw DataError("base dim " + std::to_string(d.base.dim()) + " does not match novel dim " +
                    std::to_string(d.novel.dim()));
  return d;
}

inline std::string dim_fingerprint(int input_dim, const std::vector<int>& hidden, int embed_dim,
                                   int classes) {
  std::string s = "in=" + std::to_string(input_dim) + " hidden=[";
  for (size_t i = 0; i < hidden.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(hidden[i]);
  }
  s += "] embed=" + std::to_string(embed_dim) + " classes=" + std::to_string(classes);
  return s;
}

inline std::string model_dim_fingerprint(const Model& m) {
  return dim_fingerprint(m.backbone.input_dim, m.backbone.hidden_dims, m.backbone.embed_dim,
                         m.head.classes());
}

inline std::string expected_dim_fingerprint(const ExperimentConfig& cfg,
                                            const LabeledDataset& base) {
  const int input = base.dim();
  const int embed = cfg.model.hidden_dims.empty() ? input : cfg.model.embed_dim;
  return dim_fingerprint(input, cfg.model.hidden_dims, embed,
                         static_cast<int>(base.class_set.size()));
}

inline void check_dims_match(const std::string& path, const Model& m,
                             const ExperimentConfig& cfg, const LabeledDataset& base) {
  const std::string got = model_dim_fingerprint(m);
  const std::string want = expected_dim_fingerprint(cfg, base);
  if (got != want)
    throw ConfigError("checkpoint '" + path + "' does not match config: checkpoint has [" +
                      got + "], config and data expect [" + want + "]");
}

inline std::string checkpoint_path(const CliArgs& a, const std::string& dir) {
  return a.checkpoint.empty() ? dir + "/checkpoint.json" : a.checkpoint;
}

inline Model load_snapshot(const CliArgs& a, const std::string& dir,
                           const ExperimentConfig& cfg, const LabeledDataset& base) {
  const std::string path = checkpoint_path(a, dir);
  auto [model, state] = load_checkpoint(path);
  check_dims_match(path, model, cfg, base);
  return std::move(model);
}

}  // namespace climpl

inline void cmd_generate(const CliArgs& a) {
  ExperimentConfig cfg = climpl::resolved_config(a);
  if (!cfg.use_generator)
    throw ConfigError("generate: config data section points at CSV files, nothing to generate");
  const std::string dir = climpl::ensure_out_dir(cfg.output_dir);
  SyntheticData d = generate_synthetic(cfg.generator);
  save_csv(d.base, dir + "/base.csv");
  save_csv(d.novel, dir + "/novel.csv");
  nlohmann::json manifest{{"seed", cfg.generator.seed},
                          {"dim", d.base.dim()},
                          {"base_classes", d.split.base_classes},
                          {"novel_classes", d.split.novel_classes},
                          {"base_rows", d.base.size()},
                          {"novel_rows", d.novel.size()}};
  climpl::write_text_file(dir + "/split_manifest.json", manifest.dump(2) + "\n");
  climpl::write_resolved_config(dir, cfg);
}

inline void cmd_pretrain(const CliArgs& a) {
  ExperimentConfig cfg = climpl::resolved_config(a);
  const std::string dir = climpl::ensure_out_dir(cfg.output_dir);
  climpl::LoadedData data = climpl::load_data(cfg);

  PretrainResult r;
  if (a.resume.empty()) {
    ModelConfig mc = cfg.model;
    mc.input_dim = data.base.dim();
    mc.num_classes = static_cast<int>(data.base.class_set.size());
    r = pretrain(data.base, mc, cfg.pretrain);
  } else {
    cfg.pretrain.validate(data.base.size());
    auto [model, state] = load_checkpoint(a.resume);
    climpl::check_dims_match(a.resume, model, cfg, data.base);
    auto [epochs_done, velocity] = pretrain_state_from_json(state);
    r = pretrain_epochs(std::move(model), std::move(velocity), epochs_done, data.base,
                        cfg.pretrain, cfg.pretrain.epochs);
  }

  save_checkpoint(dir + "/checkpoint.json", r.model, pretrain_state_to_json(r));
  std::string log = "epoch,loss,accuracy\n";
  for (const PretrainLogRow& row : r.log) {
    log += std::to_string(row.epoch);
    log += ',';
    log += format_double(row.loss);
    log += ',';
    log += format_double(row.accuracy);
    log += '\n';
  }
  climpl::write_text_file(dir + "/pretrain_log.csv", log);
  climpl::write_resolved_config(dir, cfg);
}

inline void cmd_run(const CliArgs& a) {
  ExperimentConfig cfg = climpl::resolved_config(a);
  const std::string dir = climpl::ensure_out_dir(cfg.output_dir);
  climpl::LoadedData data = climpl::load_data(cfg);
  const Model snapshot = climpl::load_snapshot(a, dir, cfg, data.base);

  std::vector<MatrixRow> rows;
  if (a.ablation) {
    rows = ablation_matrix(snapshot, data.novel, data.base,
                           cfg.strategy_config(Strategy::soft_halluc));
  } else {
    std::vector<Strategy> wanted = cfg.strategies;
    if (!a.strategy.empty()) wanted = {strategy_from_name(a.strategy)};
    for (Strategy s : wanted) {
      StrategyConfig c = cfg.strategy_config(s);
      rows.push_back({strategy_name(s), c, run_strategy(snapshot, data.novel, data.base, c)});
    }
  }

  climpl::write_text_file(dir + "/episodes.csv", episodes_csv(rows));
  climpl::write_text_file(dir + "/summary.md", summary_markdown(rows));
  climpl::write_resolved_config(dir, cfg);
}

inline void cmd_sweep(const CliArgs& a) {
  ExperimentConfig cfg = climpl::resolved_config(a);
  const std::string dir = climpl::ensure_out_dir(cfg.output_dir);
  if (a.values.empty()) throw ConfigError("sweep: --values must list at least one number");
  const SweepAxis axis = sweep_axis_from_name(a.axis);
  climpl::LoadedData data = climpl::load_data(cfg);
  const Model snapshot = climpl::load_snapshot(a, dir, cfg, data.base);

  const Strategy s =
      a.strategy.empty() ? Strategy::soft_halluc : strategy_from_name(a.strategy);
  std::vector<SweepPoint> pts =
      sweep(snapshot, data.novel, data.base, axis, a.values, cfg.strategy_config(s));
  climpl::write_text_file(dir + "/sweep_" + a.axis + ".csv", sweep_csv(axis, pts));
  climpl::write_resolved_config(dir, cfg);
}

inline void cmd_inspect(const CliArgs& a) {
  ExperimentConfig cfg = climpl::resolved_config(a);
  const std::string dir = climpl::ensure_out_dir(cfg.output_dir);
  if (a.episode < 0) throw ConfigError("inspect: --episode must be >= 0");
  climpl::LoadedData data = climpl::load_data(cfg);
  const Model snapshot = climpl::load_snapshot(a, dir, cfg, data.base);

  // Same labeling path an episode takes inside a run: subsampled base,
  // derived episode seed, support-fit head, one frozen labeling pass.
  StrategyConfig sc = cfg.strategy_config(Strategy::soft_halluc);
  sc.validate();
  const LabeledDataset base_used = subsample(data.base, sc.base_fraction, sc.master_seed);
  const uint64_t ep_seed = episode_seed_for(sc.master_seed, a.episode);
  Episode ep = sample_episode(data.novel, sc.way, sc.shot, sc.query_per_class, ep_seed);
  LinearHead phi =
      fit_support_classifier(snapshot.backbone, ep.support, ep.classes, sc.support_fit);
  PseudoLabelStore store =
      pseudo_label(base_used, snapshot.backbone, phi, ep.classes, ep_seed);
  auto top = top_base_examples(store, base_used, a.top_k);
  climpl::write_text_file(dir + "/top_examples.csv", top_examples_csv(top, ep.classes));
  climpl::write_resolved_config(dir, cfg);
}

inline void dispatch(const CliArgs& a) {
  if (a.command == "generate")
    cmd_generate(a);
  else if (a.command == "pretrain")
    cmd_pretrain(a);
  else if (a.command == "run")
    cmd_run(a);
  else if (a.command == "sweep")
    cmd_sweep(a);
  else if (a.command == "inspect")
    cmd_inspect(a);
  else
    throw ConfigError("unknown command '" + a.command +
                      "' (expected generate, pretrain, run, sweep, inspect)");
}

// Stable scripting contract: 0 success, 1 config error, 2 data error,
// 3 numeric or internal failure.
inline int run_command(const CliArgs& a) {
  try {
    dispatch(a);
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  }
}

}  // namespace halluc
