#pragma once

#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include "json.hpp"

#include "halluc/data.hpp"
#include "halluc/errors.hpp"
#include "halluc/models.hpp"
#include "halluc/pipeline.hpp"

namespace halluc {

enum class Strategy { frozen_lr, finetune_only, hard_halluc, soft_halluc };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::frozen_lr: return "frozen_lr";
    case Strategy::finetune_only: return "finetune_only";
    case Strategy::hard_halluc: return "hard_halluc";
    case Strategy::soft_halluc: return "soft_halluc";
  }
  throw ContractError("strategy_name: bad enum value");
}

inline Strategy strategy_from_name(const std::string& name) {
  if (name == "frozen_lr") return Strategy::frozen_lr;
  if (name == "finetune_only") return Strategy::finetune_only;
  if (name == "hard_halluc") return Strategy::hard_halluc;
  if (name == "soft_halluc") return Strategy::soft_halluc;
  throw ConfigError("unknown strategy '" + name +
                    "' (expected frozen_lr, finetune_only, hard_halluc, soft_halluc)");
}

// One episodic experiment: which strategy, how many episodes, the episode
// geometry, and the stage configs it delegates to. `workers` is an
// execution detail: results and fingerprints do not depend on it.
struct StrategyConfig {
  Strategy strategy = Strategy::soft_halluc;
  int episodes = 50;
  int way = 5;
  int shot = 5;
  int query_per_class = 15;
  double base_fraction = 1.0;
  uint64_t master_seed = 0;
  int workers = 1;
  SupportFitConfig support_fit;
  FinetuneConfig finetune;

  void validate() const {
    if (episodes < 1) throw ConfigError("harness.episodes must be >= 1");
    if (way < 1 || shot < 1 || query_per_class < 1)
      throw ConfigError("harness: way, shot, query_per_class must be >= 1");
    if (base_fraction <= 0.0 || base_fraction > 1.0)
      throw ConfigError("harness.base_fraction must be in (0,1]");
    if (workers < 1) throw ConfigError("harness.workers must be >= 1");
    support_fit.validate();
    finetune.validate();
  }
};

// -------- JSON (de)serialization with strict schemas --------
//
// Parsing uses section allowlists: an unknown key anywhere is a ConfigError,
// absent keys keep the struct defaults, and dumps always include every
// field, so a dumped config is the fully-resolved experiment record.

namespace cfgdetail {

inline void check_keys(const nlohmann::json& j, const char* section,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw ConfigError(std::string("config section '") + section + "' must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError("config: unknown key '" + item.key() + "' in section '" + section +
                        "'");
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config: bad value for '") + section + "." + key + "'");
  }
}

}  // namespace cfgdetail

inline nlohmann::json aug_to_json(const AugmentationConfig& a) {
  return {{"jitter_sigma", a.jitter_sigma},
          {"mask_fraction", a.mask_fraction},
          {"flip_prob", a.flip_prob}};
}

inline AugmentationConfig aug_from_json(const nlohmann::json& j) {
  cfgdetail::check_keys(j, "aug", {"jitter_sigma", "mask_fraction", "flip_prob"});
  AugmentationConfig a;
  cfgdetail::read(j, "aug", "jitter_sigma", a.jitter_sigma);
  cfgdetail::read(j, "aug", "mask_fraction", a.mask_fraction);
  cfgdetail::read(j, "aug", "flip_prob", a.flip_prob);
  return a;
}

inline nlohmann::json mask_to_json(const ParamGroupMask& m) {
  return {{"base_grads_to_backbone", m.base_grads_to_backbone},
          {"base_grads_to_head", m.base_grads_to_head}};
}

inline ParamGroupMask mask_from_json(const nlohmann::json& j) {
  cfgdetail::check_keys(j, "mask", {"base_grads_to_backbone", "base_grads_to_head"});
  ParamGroupMask m;
  cfgdetail::read(j, "mask", "base_grads_to_backbone", m.base_grads_to_backbone);
  cfgdetail::read(j, "mask", "base_grads_to_head", m.base_grads_to_head);
  return m;
}

inline nlohmann::json generator_to_json(const GeneratorConfig& g) {
  return {{"num_base_classes", g.num_base_classes},
          {"num_novel_classes", g.num_novel_classes},
          {"dim", g.dim},
          {"examples_per_class", g.examples_per_class},
          {"cluster_spread", g.cluster_spread},
          {"base_class_counts", g.base_class_counts},
          {"novel_shift", g.novel_shift},
          {"seed", g.seed}};
}

inline GeneratorConfig generator_from_json(const nlohmann::json& j) {
  cfgdetail::check_keys(j, "generator",
                        {"num_base_classes", "num_novel_classes", "dim",
                         "examples_per_class", "cluster_spread", "base_class_counts",
                         "novel_shift", "seed"});
  GeneratorConfig g;
  cfgdetail::read(j, "generator", "num_base_classes", g.num_base_classes);
  cfgdetail::read(j, "generator", "num_novel_classes", g.num_novel_classes);
  cfgdetail::read(j, "generator", "dim", g.dim);
  cfgdetail::read(j, "generator", "examples_per_class", g.examples_per_class);
  cfgdetail::read(j, "generator", "cluster_spread", g.cluster_spread);
  cfgdetail::read(j, "generator", "base_class_counts", g.base_class_counts);
  cfgdetail::read(j, "generator", "novel_shift", g.novel_shift);
  cfgdetail::read(j, "generator", "seed", g.seed);
  return g;
}

inline nlohmann::json model_config_to_json(const ModelConfig& m) {
  return {{"hidden_dims", m.hidden_dims}, {"embed_dim", m.embed_dim}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  cfgdetail::check_keys(j, "model", {"hidden_dims", "embed_dim"});
  ModelConfig m;
  cfgdetail::read(j, "model", "hidden_dims", m.hidden_dims);
  cfgdetail::read(j, "model", "embed_dim", m.embed_dim);
  return m;
}

inline nlohmann::json pretrain_to_json(const PretrainConfig& p) {
  return {{"epochs", p.epochs},
          {"batch_size", p.batch_size},
          {"learning_rate", p.learning_rate},
          {"momentum", p.momentum},
          {"weight_decay", p.weight_decay},
          {"lr_decay_epochs", p.lr_decay_epochs},
          {"lr_decay_factor", p.lr_decay_factor},
          {"seed", p.seed}};
}

inline PretrainConfig pretrain_from_json(const nlohmann::json& j) {
  cfgdetail::check_keys(j, "pretrain",
                        {"epochs", "batch_size", "learning_rate", "momentum",
                         "weight_decay", "lr_decay_epochs", "lr_decay_factor", "seed"});
  PretrainConfig p;
  cfgdetail::read(j, "pretrain", "epochs", p.epochs);
  cfgdetail::read(j, "pretrain", "batch_size", p.batch_size);
  cfgdetail::read(j, "pretrain", "learning_rate", p.learning_rate);
  cfgdetail::read(j, "pretrain", "momentum", p.momentum);
  cfgdetail::read(j, "pretrain", "weight_decay", p.weight_decay);
  cfgdetail::read(j, "pretrain", "lr_decay_epochs", p.lr_decay_epochs);
  cfgdetail::read(j, "pretrain", "lr_decay_factor", p.lr_decay_factor);
  cfgdetail::read(j, "pretrain", "seed", p.seed);
  return p;
}

inline nlohmann::json support_fit_to_json(const SupportFitConfig& s) {
  return {{"steps", s.steps},
          {"learning_rate", s.learning_rate},
          {"lr_scale", s.lr_scale},
          {"momentum", s.momentum},
          {"weight_decay", s.weight_decay}};
}

inline SupportFitConfig support_fit_from_json(const nlohmann::json& j) {
  cfgdetail::check_keys(j, "support_fit",
                        {"steps", "learning_rate", "lr_scale", "momentum", "weight_decay"});
  SupportFitConfig s;
  cfgdetail::read(j, "support_fit", "steps", s.steps);
  cfgdetail::read(j, "support_fit", "learning_rate", s.learning_rate);
  cfgdetail::read(j, "support_fit", "lr_scale", s.lr_scale);
  cfgdetail::read(j, "support_fit", "momentum", s.momentum);
  cfgdetail::read(j, "support_fit", "weight_decay", s.weight_decay);
  return s;
}

inline nlohmann::json finetune_to_json(const FinetuneConfig& f) {
  return {{"lambda_kl", f.lambda_kl},
          {"lambda_ce", f.lambda_ce},
          {"temperature", f.temperature},
          {"steps", f.steps},
          {"batch_size", f.batch_size},
          {"learning_rate", f.learning_rate},
          {"momentum", f.momentum},
          {"weight_decay", f.weight_decay},
          {"mask", mask_to_json(f.mask)},
          {"label_mode", f.label_mode == LabelMode::soft ? "soft" : "hard"},
          {"on_the_fly", f.on_the_fly},
          {"sample_base", f.sample_base},
          {"aug", aug_to_json(f.aug)},
          {"seed", f.seed}};
}

inline FinetuneConfig finetune_from_json(const nlohmann::json& j) {
  cfgdetail::check_keys(j, "finetune",
                        {"lambda_kl", "lambda_ce", "temperature", "steps", "batch_size",
                         "learning_rate", "momentum", "weight_decay", "mask", "label_mode",
                         "on_the_fly", "sample_base", "aug", "seed"});
  FinetuneConfig f;
  cfgdetail::read(j, "finetune", "lambda_kl", f.lambda_kl);
  cfgdetail::read(j, "finetune", "lambda_ce", f.lambda_ce);
  cfgdetail::read(j, "finetune", "temperature", f.temperature);
  cfgdetail::read(j, "finetune", "steps", f.steps);
  cfgdetail::read(j, "finetune", "batch_size", f.batch_size);
  cfgdetail::read(j, "finetune", "learning_rate", f.learning_rate);
  cfgdetail::read(j, "finetune", "momentum", f.momentum);
  cfgdetail::read(j, "finetune", "weight_decay", f.weight_decay);
  if (j.contains("mask")) f.mask = mask_from_json(j.at("mask"));
  if (j.contains("label_mode")) {
    const std::string mode = j.at("label_mode").get<std::string>();
    if (mode == "soft")
      f.label_mode = LabelMode::soft;
    else if (mode == "hard")
      f.label_mode = LabelMode::hard;
    else
      throw ConfigError("config: finetune.label_mode must be 'soft' or 'hard'");
  }
  cfgdetail::read(j, "finetune", "on_the_fly", f.on_the_fly);
  cfgdetail::read(j, "finetune", "sample_base", f.sample_base);
  if (j.contains("aug")) f.aug = aug_from_json(j.at("aug"));
  cfgdetail::read(j, "finetune", "seed", f.seed);
  return f;
}

inline nlohmann::json strategy_config_to_json(const StrategyConfig& c) {
  return {{"strategy", strategy_name(c.strategy)},
          {"episodes", c.episodes},
          {"way", c.way},
          {"shot", c.shot},
          {"query_per_class", c.query_per_class},
          {"base_fraction", c.base_fraction},
          {"master_seed", c.master_seed},
          {"support_fit", support_fit_to_json(c.support_fit)},
          {"finetune", finetune_to_json(c.finetune)}};
}

// -------- whole-experiment config file --------

struct ExperimentConfig {
  // data: either a generator spec or a pair of CSV paths
  bool use_generator = true;
  GeneratorConfig generator;
  std::string base_csv;
  std::string novel_csv;

  ModelConfig model;  // input_dim and num_classes are derived from the data
  PretrainConfig pretrain;
  SupportFitConfig support_fit;
  FinetuneConfig finetune;

  std::vector<Strategy> strategies = {Strategy::frozen_lr, Strategy::finetune_only,
                                      Strategy::hard_halluc, Strategy::soft_halluc};
  int episodes = 50;
  int way = 5;
  int shot = 5;
  int query_per_class = 15;
  double base_fraction = 1.0;
  uint64_t master_seed = 0;
  int workers = 1;

  std::string output_dir = "out";

  StrategyConfig strategy_config(Strategy s) const {
    StrategyConfig c;
    c.strategy = s;
    c.episodes = episodes;
    c.way = way;
    c.shot = shot;
    c.query_per_class = query_per_class;
    c.base_fraction = base_fraction;
    c.master_seed = master_seed;
    c.workers = workers;
    c.support_fit = support_fit;
    c.finetune = finetune;
    return c;
  }

  void validate() const {
    if (use_generator) generator.validate();
    else if (base_csv.empty() || novel_csv.empty())
      throw ConfigError("config: data section needs base_csv and novel_csv when no generator");
    if (strategies.empty()) throw ConfigError("config: harness.strategies must be nonempty");
    strategy_config(strategies.front()).validate();
    if (output_dir.empty()) throw ConfigError("config: output_dir must be nonempty");
  }
};

inline nlohmann::json experiment_to_json(const ExperimentConfig& c) {
  nlohmann::json data;
  if (c.use_generator)
    data = {{"generator", generator_to_json(c.generator)}};
  else
    data = {{"base_csv", c.base_csv}, {"novel_csv", c.novel_csv}};
  nlohmann::json strategies = nlohmann::json::array();
  for (Strategy s : c.strategies) strategies.push_back(strategy_name(s));
  return {{"data", std::move(data)},
          {"model", model_config_to_json(c.model)},
          {"pretrain", pretrain_to_json(c.pretrain)},
          {"support_fit", support_fit_to_json(c.support_fit)},
          {"finetune", finetune_to_json(c.finetune)},
          {"harness",
           {{"strategies", std::move(strategies)},
            {"episodes", c.episodes},
            {"way", c.way},
            {"shot", c.shot},
            {"query_per_class", c.query_per_class},
            {"base_fraction", c.base_fraction},
            {"master_seed", c.master_seed},
            {"workers", c.workers}}},
          {"output_dir", c.output_dir}};
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  cfgdetail::check_keys(j, "root",
                        {"data", "model", "pretrain", "support_fit", "finetune", "harness",
                         "output_dir"});
  ExperimentConfig c;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    cfgdetail::check_keys(d, "data", {"generator", "base_csv", "novel_csv"});
    if (d.contains("generator") && (d.contains("base_csv") || d.contains("novel_csv")))
      throw ConfigError("config: data section must give a generator or CSV paths, not both");
    if (d.contains("generator")) {
      c.use_generator = true;
      c.generator = generator_from_json(d.at("generator"));
    } else {
      c.use_generator = false;
      cfgdetail::read(d, "data", "base_csv", c.base_csv);
      cfgdetail::read(d, "data", "novel_csv", c.novel_csv);
    }
  }
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("pretrain")) c.pretrain = pretrain_from_json(j.at("pretrain"));
  if (j.contains("support_fit")) c.support_fit = support_fit_from_json(j.at("support_fit"));
  if (j.contains("finetune")) c.finetune = finetune_from_json(j.at("finetune"));
  if (j.contains("harness")) {
    const auto& h = j.at("harness");
    cfgdetail::check_keys(h, "harness",
                          {"strategies", "episodes", "way", "shot", "query_per_class",
                           "base_fraction", "master_seed", "workers"});
    if (h.contains("strategies")) {
      c.strategies.clear();
      for (const auto& s : h.at("strategies"))
        c.strategies.push_back(strategy_from_name(s.get<std::string>()));
    }
    cfgdetail::read(h, "harness", "episodes", c.episodes);
    cfgdetail::read(h, "harness", "way", c.way);
    cfgdetail::read(h, "harness", "shot", c.shot);
    cfgdetail::read(h, "harness", "query_per_class", c.query_per_class);
    cfgdetail::read(h, "harness", "base_fraction", c.base_fraction);
    cfgdetail::read(h, "harness", "master_seed", c.master_seed);
    cfgdetail::read(h, "harness", "workers", c.workers);
  }
  cfgdetail::read(j, "root", "output_dir", c.output_dir);
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  ExperimentConfig c = experiment_from_json(j);
  c.validate();
  return c;
}

}  // namespace halluc
