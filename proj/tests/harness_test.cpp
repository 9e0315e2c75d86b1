#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "halluc/harness.hpp"

using namespace halluc;

namespace {

struct Bench {
  SyntheticData data;
  Model snapshot;
};

const Bench& small_bench() {
  static Bench* b = [] {
    auto* x = new Bench{generate_synthetic(6, 4, 8, 30, 0.2, 5), {}};
    ModelConfig mc;
    mc.input_dim = 8;
    mc.hidden_dims = {16};
    mc.embed_dim = 8;
    mc.num_classes = 6;
    PretrainConfig pc;
    pc.epochs = 15;
    pc.batch_size = 32;
    pc.seed = 11;
    x->snapshot = pretrain(x->data.base, mc, pc).model;
    return x;
  }();
  return *b;
}

// Episode geometry and step counts cut down so one strategy run is cheap.
StrategyConfig fast_cfg(Strategy s) {
  StrategyConfig cfg;
  cfg.strategy = s;
  cfg.episodes = 4;
  cfg.way = 3;
  cfg.shot = 3;
  cfg.query_per_class = 5;
  cfg.master_seed = 99;
  cfg.support_fit.steps = 200;
  cfg.finetune.steps = 20;
  cfg.finetune.batch_size = 8;
  return cfg;
}

RunSummary run_fast(Strategy s) {
  const Bench& b = small_bench();
  return run_strategy(b.snapshot, b.data.novel, b.data.base, fast_cfg(s));
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

TEST(Stats, KnownTriple) {
  RunSummary s = summarize({0.8, 0.9, 1.0});
  EXPECT_NEAR(s.mean, 0.9, 1e-15);
  EXPECT_TRUE(s.ci95_defined);
  EXPECT_NEAR(s.ci95, 1.96 * 0.1 / std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(s.ci95, 0.1132, 1e-4);
}

TEST(Stats, SingleEpisodeHasNoInterval) {
  RunSummary s = summarize({0.42});
  EXPECT_DOUBLE_EQ(s.mean, 0.42);
  EXPECT_FALSE(s.ci95_defined);
  EXPECT_DOUBLE_EQ(s.ci95, 0.0);
}

TEST(Stats, EmptyRejected) { EXPECT_THROW(summarize({}), ContractError); }

TEST(Stats, MeanMatchesArithmeticMean) {
  RngStream rng(4, StreamTag::generator, 0);
  std::vector<double> v(37);
  double sum = 0.0;
  for (double& x : v) {
    x = rng.uniform();
    sum += x;
  }
  RunSummary s = summarize(v);
  EXPECT_NEAR(s.mean, sum / 37.0, 1e-12);
  EXPECT_GT(s.ci95, 0.0);
}

TEST(Fingerprint, StableAndSensitive) {
  StrategyConfig a = fast_cfg(Strategy::soft_halluc);
  const std::string fp = config_fingerprint(a);
  EXPECT_EQ(fp.size(), 16u);
  EXPECT_EQ(fp.find_first_not_of("0123456789abcdef"), std::string::npos);
  EXPECT_EQ(config_fingerprint(a), fp);

  StrategyConfig b = a;
  b.way += 1;
  EXPECT_NE(config_fingerprint(b), fp);

  StrategyConfig c = a;
  c.finetune.temperature = 2.0;
  EXPECT_NE(config_fingerprint(c), fp);

  // Worker count is an execution detail, not part of the experiment identity.
  StrategyConfig d = a;
  d.workers = 7;
  EXPECT_EQ(config_fingerprint(d), fp);
}

TEST(EffectiveConfig, StrategyCoherence) {
  StrategyConfig cfg = fast_cfg(Strategy::finetune_only);
  cfg.finetune.lambda_kl = 3.0;
  cfg.finetune.sample_base = true;
  FinetuneConfig f = effective_finetune_config(cfg);
  EXPECT_DOUBLE_EQ(f.lambda_kl, 0.0);
  EXPECT_FALSE(f.sample_base);

  cfg.strategy = Strategy::hard_halluc;
  cfg.finetune.label_mode = LabelMode::soft;
  EXPECT_EQ(effective_finetune_config(cfg).label_mode, LabelMode::hard);

  cfg.strategy = Strategy::soft_halluc;
  cfg.finetune.label_mode = LabelMode::hard;
  EXPECT_EQ(effective_finetune_config(cfg).label_mode, LabelMode::soft);

  cfg.strategy = Strategy::frozen_lr;
  cfg.finetune.lambda_kl = 3.0;
  EXPECT_DOUBLE_EQ(effective_finetune_config(cfg).lambda_kl, 3.0);
}

TEST(Run, DeterministicAcrossCalls) {
  RunSummary a = run_fast(Strategy::soft_halluc);
  RunSummary b = run_fast(Strategy::soft_halluc);
  ASSERT_EQ(a.per_episode_accuracy.size(), 4u);
  EXPECT_EQ(a.per_episode_accuracy, b.per_episode_accuracy);
  EXPECT_EQ(a.fingerprint, b.fingerprint);
  for (double acc : a.per_episode_accuracy) {
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
  }
}

TEST(Run, WorkerCountDoesNotChangeResults) {
  const Bench& b = small_bench();
  StrategyConfig cfg = fast_cfg(Strategy::soft_halluc);
  RunSummary serial = run_strategy(b.snapshot, b.data.novel, b.data.base, cfg);
  cfg.workers = 3;
  RunSummary parallel = run_strategy(b.snapshot, b.data.novel, b.data.base, cfg);
  EXPECT_EQ(serial.per_episode_accuracy, parallel.per_episode_accuracy);
  EXPECT_EQ(serial.fingerprint, parallel.fingerprint);
}

TEST(Run, EpisodeErrorCarriesIndexAndType) {
  const Bench& b = small_bench();
  StrategyConfig cfg = fast_cfg(Strategy::frozen_lr);
  cfg.query_per_class = 40;  // 3 + 40 > 30 examples per novel class
  try {
    run_strategy(b.snapshot, b.data.novel, b.data.base, cfg);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("episode 0:"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("class"), std::string::npos) << e.what();
  }
}

TEST(Run, ValidatesConfig) {
  const Bench& b = small_bench();
  StrategyConfig cfg = fast_cfg(Strategy::soft_halluc);
  cfg.episodes = 0;
  EXPECT_THROW(run_strategy(b.snapshot, b.data.novel, b.data.base, cfg), ConfigError);
}

TEST(Ablation, EightRowsInFixedOrder) {
  const Bench& b = small_bench();
  std::vector<MatrixRow> rows =
      ablation_matrix(b.snapshot, b.data.novel, b.data.base, fast_cfg(Strategy::soft_halluc));
  ASSERT_EQ(rows.size(), 8u);
  const char* expected[] = {"frozen_lr",    "finetune_only", "hard_halluc",  "soft_halluc",
                            "soft_mask_FF", "soft_mask_FT",  "soft_mask_TF", "soft_mask_TT"};
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(rows[i].label, expected[i]);
    EXPECT_EQ(rows[i].summary.per_episode_accuracy.size(), 4u);
  }

  // Fully gating base gradients must reproduce plain finetuning bit for bit:
  // both rows see the same episode seeds and the support stream is
  // independent of the base stream.
  EXPECT_EQ(rows[4].summary.per_episode_accuracy, rows[1].summary.per_episode_accuracy);

  // Each row's stored config re-runs to the same result.
  const Bench& bb = small_bench();
  RunSummary again = run_strategy(bb.snapshot, bb.data.novel, bb.data.base, rows[3].config);
  EXPECT_EQ(again.per_episode_accuracy, rows[3].summary.per_episode_accuracy);
}

TEST(Sweep, LambdaKlZeroPointMatchesFinetuneOnly) {
  const Bench& b = small_bench();
  std::vector<SweepPoint> pts = sweep(b.snapshot, b.data.novel, b.data.base,
                                      SweepAxis::lambda_kl, {0.0},
                                      fast_cfg(Strategy::soft_halluc));
  ASSERT_EQ(pts.size(), 1u);
  RunSummary ft_only = run_fast(Strategy::finetune_only);
  EXPECT_EQ(pts[0].summary.per_episode_accuracy, ft_only.per_episode_accuracy);
}

TEST(Sweep, FullBaseFractionPointMatchesDirectRun) {
  const Bench& b = small_bench();
  StrategyConfig cfg = fast_cfg(Strategy::soft_halluc);
  std::vector<SweepPoint> pts =
      sweep(b.snapshot, b.data.novel, b.data.base, SweepAxis::base_fraction, {1.0}, cfg);
  RunSummary direct = run_strategy(b.snapshot, b.data.novel, b.data.base, cfg);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_DOUBLE_EQ(pts[0].value, 1.0);
  EXPECT_EQ(pts[0].summary.per_episode_accuracy, direct.per_episode_accuracy);
}

TEST(Sweep, WayValuesMustBeIntegral) {
  const Bench& b = small_bench();
  StrategyConfig cfg = fast_cfg(Strategy::soft_halluc);
  EXPECT_THROW(sweep(b.snapshot, b.data.novel, b.data.base, SweepAxis::way, {2.5}, cfg),
               ConfigError);
  EXPECT_THROW(sweep(b.snapshot, b.data.novel, b.data.base, SweepAxis::way, {}, cfg),
               ConfigError);
}

TEST(Sweep, AxisNames) {
  EXPECT_EQ(sweep_axis_from_name("base_fraction"), SweepAxis::base_fraction);
  EXPECT_EQ(sweep_axis_from_name("way"), SweepAxis::way);
  EXPECT_EQ(sweep_axis_from_name("temperature"), SweepAxis::temperature);
  EXPECT_EQ(sweep_axis_from_name("lambda_kl"), SweepAxis::lambda_kl);
  EXPECT_STREQ(sweep_axis_name(SweepAxis::temperature), "temperature");
  EXPECT_THROW(sweep_axis_from_name("shot"), ConfigError);
}

LabeledDataset tiny_base(std::vector<int> labels) {
  LabeledDataset ds;
  ds.features = Matrix(static_cast<int>(labels.size()), 1);
  ds.labels = std::move(labels);
  ds.class_set = LabeledDataset::collect_class_set(ds.labels);
  ds.name = "tiny";
  return ds;
}

TEST(TopExamples, RankedByConfidencePerClass) {
  PseudoLabelStore store;
  store.logits = Matrix(4, 2, {5, 0, 0, 5, 4, 0, 0.5, 0.5});
  LabeledDataset base = tiny_base({10, 11, 10, 11});

  auto top = top_base_examples(store, base, 2);
  ASSERT_EQ(top.size(), 2u);
  ASSERT_EQ(top[0].size(), 2u);

  const double p5 = 1.0 / (1.0 + std::exp(-5.0));
  const double p4 = 1.0 / (1.0 + std::exp(-4.0));
  EXPECT_EQ(top[0][0].base_index, 0);
  EXPECT_EQ(top[0][0].base_label, 10);
  EXPECT_NEAR(top[0][0].confidence, p5, 1e-12);
  EXPECT_EQ(top[0][1].base_index, 2);
  EXPECT_NEAR(top[0][1].confidence, p4, 1e-12);

  EXPECT_EQ(top[1][0].base_index, 1);
  EXPECT_NEAR(top[1][0].confidence, p5, 1e-12);
  EXPECT_EQ(top[1][1].base_index, 3);
  EXPECT_NEAR(top[1][1].confidence, 0.5, 1e-12);
}

TEST(TopExamples, TiesGoToLowestIndex) {
  PseudoLabelStore store;
  store.logits = Matrix(3, 2, {1, 1, 1, 1, 1, 1});
  auto top = top_base_examples(store, tiny_base({0, 0, 0}), 2);
  for (int j = 0; j < 2; ++j) {
    EXPECT_EQ(top[j][0].base_index, 0);
    EXPECT_EQ(top[j][1].base_index, 1);
  }
}

TEST(TopExamples, ClampAndValidation) {
  PseudoLabelStore store;
  store.logits = Matrix(4, 2);
  LabeledDataset base = tiny_base({0, 0, 1, 1});
  auto top = top_base_examples(store, base, 10);
  EXPECT_EQ(top[0].size(), 4u);
  EXPECT_THROW(top_base_examples(store, base, 0), ConfigError);
  EXPECT_THROW(top_base_examples(store, tiny_base({0, 0}), 2), ContractError);
}

TEST(Reports, EpisodesCsvShape) {
  MatrixRow row;
  row.label = "soft_halluc";
  row.config = fast_cfg(Strategy::soft_halluc);
  row.summary = summarize({0.5, 0.75});
  std::vector<std::string> lines = split_lines(episodes_csv({row}));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "strategy,episode,seed,accuracy");
  const std::string seed0 = std::to_string(episode_seed_for(row.config.master_seed, 0));
  EXPECT_EQ(lines[1], "soft_halluc,0," + seed0 + ",0.5");
  EXPECT_NE(lines[2].find("soft_halluc,1,"), std::string::npos);
  EXPECT_NE(lines[2].find(",0.75"), std::string::npos);
}

TEST(Reports, SummaryMarkdownShape) {
  MatrixRow a;
  a.label = "frozen_lr";
  a.config = fast_cfg(Strategy::frozen_lr);
  a.summary = summarize({0.5, 0.75});
  a.summary.fingerprint = config_fingerprint(a.config);
  std::vector<std::string> lines = split_lines(summary_markdown({a}));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "| strategy | mean | ci95 | episodes | fingerprint |");
  EXPECT_EQ(lines[1], "|---|---|---|---|---|");
  EXPECT_NE(lines[2].find("| frozen_lr | 0.6250 |"), std::string::npos);
  EXPECT_NE(lines[2].find(a.summary.fingerprint), std::string::npos);
}

TEST(Reports, SweepCsvShape) {
  SweepPoint p;
  p.value = 2.0;
  p.summary = summarize({1.0, 0.5});
  std::vector<std::string> lines = split_lines(sweep_csv(SweepAxis::temperature, {p}));
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0], "temperature,mean,ci95,episodes");
  EXPECT_EQ(lines[1].substr(0, 7), "2,0.75,");
  EXPECT_NE(lines[1].find(",2"), std::string::npos);
}

TEST(Reports, TopExamplesCsvShape) {
  PseudoLabelStore store;
  store.logits = Matrix(3, 2, {2, 0, 0, 2, 1, 0});
  LabeledDataset base = tiny_base({4, 5, 4});
  auto top = top_base_examples(store, base, 2);
  std::vector<std::string> lines = split_lines(top_examples_csv(top, {7, 9}));
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "novel_class,rank,base_index,base_label,confidence");
  EXPECT_EQ(lines[1].substr(0, 6), "7,1,0,");
  EXPECT_EQ(lines[2].substr(0, 6), "7,2,2,");
  EXPECT_EQ(lines[3].substr(0, 6), "9,1,1,");
  EXPECT_THROW(top_examples_csv(top, {7}), ContractError);
}

}  // namespace
