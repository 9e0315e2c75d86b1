#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "halluc/config.hpp"
#include "halluc/data.hpp"
#include "halluc/models.hpp"
#include "halluc/pipeline.hpp"

namespace halluc {

struct RunSummary {
  std::vector<double> per_episode_accuracy;
  double mean = 0.0;
  double ci95 = 0.0;        // 1.96 * s / sqrt(n), sample std with n-1 denominator
  bool ci95_defined = false;  // false when n < 2; ci95 then reported as 0
  std::string fingerprint;
};

inline RunSummary summarize(std::vector<double> accuracies) {
  if (accuracies.empty()) throw ContractError("summarize: no episode accuracies");
  RunSummary s;
  s.per_episode_accuracy = std::move(accuracies);
  const int n = static_cast<int>(s.per_episode_accuracy.size());
  double sum = 0.0;
  for (double a : s.per_episode_accuracy) sum += a;
  s.mean = sum / n;
  if (n > 1) {
    double sq = 0.0;
    for (double a : s.per_episode_accuracy) sq += (a - s.mean) * (a - s.mean);
    s.ci95 = 1.96 * std::sqrt(sq / (n - 1)) / std::sqrt(static_cast<double>(n));
    s.ci95_defined = true;
  }
  return s;
}

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string config_fingerprint(const StrategyConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(strategy_config_to_json(cfg).dump())));
  return buf;
}

// Strategy coherence: frozen_lr never reaches finetuning; the other
// strategies pin the fields that define them and leave the rest to config.
inline FinetuneConfig effective_finetune_config(const StrategyConfig& cfg) {
  FinetuneConfig f = cfg.finetune;
  switch (cfg.strategy) {
    case Strategy::frozen_lr:
      break;
    case Strategy::finetune_only:
      f.lambda_kl = 0.0;
      f.sample_base = false;
      break;
    case Strategy::hard_halluc:
      f.label_mode = LabelMode::hard;
      break;
    case Strategy::soft_halluc:
      f.label_mode = LabelMode::soft;
      break;
  }
  return f;
}

inline uint64_t episode_seed_for(uint64_t master_seed, int episode_index) {
  return derive_seed(master_seed, StreamTag::episode, static_cast<uint64_t>(episode_index));
}

// One seeded episode, end to end: sample, fit the support head, optionally
// hallucinate labels and finetune, then score the query set.
inline double run_one_episode(const Model& snapshot, const LabeledDataset& novel,
                              const LabeledDataset& base, const StrategyConfig& cfg,
                              const FinetuneConfig& ft, uint64_t ep_seed) {
  Episode ep = sample_episode(novel, cfg.way, cfg.shot, cfg.query_per_class, ep_seed);
  LinearHead phi =
      fit_support_classifier(snapshot.backbone, ep.support, ep.classes, cfg.support_fit);
  if (cfg.strategy == Strategy::frozen_lr)
    return evaluate(snapshot.backbone, phi, ep.query, ep.classes);

  FinetuneConfig ecfg = ft;
  ecfg.seed = ep_seed;
  PseudoLabelStore store;
  if (ecfg.sample_base && ecfg.lambda_kl > 0.0 && !ecfg.on_the_fly)
    store = pseudo_label(base, snapshot.backbone, phi, ep.classes, ep_seed);
  Model student;
  student.backbone = snapshot.backbone;
  student.head = phi;
  FinetuneResult r = finetune(std::move(student), ep.support, ep.classes, base, store,
                              snapshot.backbone, phi, ecfg);
  return evaluate(r.model.backbone, r.model.head, ep.query, ep.classes);
}

namespace detail {

[[noreturn]] inline void rethrow_with_episode(int episode, std::exception_ptr ep) {
  const std::string tag = "episode " + std::to_string(episode) + ": ";
  try {
    std::rethrow_exception(ep);
  } catch (const ConfigError& e) {
    throw ConfigError(tag + e.what());
  } catch (const DataError& e) {
    throw DataError(tag + e.what());
  } catch (const NumericError& e) {
    throw NumericError(tag + e.what());
  } catch (const ContractError& e) {
    throw ContractError(tag + e.what());
  } catch (const std::exception& e) {
    throw Error(tag + e.what());
  }
}

}  // namespace detail

// Episode i always runs with seed derive(master_seed, episode, i), so every
// strategy sees byte-identical episodes and results are a pure function of
// the config regardless of worker count.
inline RunSummary run_strategy(const Model& snapshot, const LabeledDataset& novel,
                               const LabeledDataset& base, const StrategyConfig& cfg) {
  cfg.validate();
  const LabeledDataset base_used = subsample(base, cfg.base_fraction, cfg.master_seed);
  const FinetuneConfig ft = effective_finetune_config(cfg);

  std::vector<double> acc(cfg.episodes, 0.0);
  std::vector<std::exception_ptr> errors(cfg.episodes);
  std::atomic<int> next{0};
  auto work = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= cfg.episodes) return;
      try {
        acc[i] = run_one_episode(snapshot, novel, base_used, cfg, ft,
                                 episode_seed_for(cfg.master_seed, i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (cfg.workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    const int threads = std::min(cfg.workers, cfg.episodes);
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }
  for (int i = 0; i < cfg.episodes; ++i)
    if (errors[i]) detail::rethrow_with_episode(i, errors[i]);

  RunSummary s = summarize(std::move(acc));
  s.fingerprint = config_fingerprint(cfg);
  return s;
}

struct MatrixRow {
  std::string label;
  StrategyConfig config;
  RunSummary summary;
};

// The four transfer strategies plus the four base-gradient gatings of the
// soft strategy, all on identical episode seeds.
inline std::vector<MatrixRow> ablation_matrix(const Model& snapshot,
                                              const LabeledDataset& novel,
                                              const LabeledDataset& base,
                                              const StrategyConfig& master) {
  std::vector<MatrixRow> rows;
  for (Strategy s : {Strategy::frozen_lr, Strategy::finetune_only, Strategy::hard_halluc,
                     Strategy::soft_halluc}) {
    StrategyConfig cfg = master;
    cfg.strategy = s;
    rows.push_back({strategy_name(s), cfg, run_strategy(snapshot, novel, base, cfg)});
  }
  const bool flags[4][2] = {{false, false}, {false, true}, {true, false}, {true, true}};
  for (const bool* f : flags) {
    StrategyConfig cfg = master;
    cfg.strategy = Strategy::soft_halluc;
    cfg.finetune.mask.base_grads_to_backbone = f[0];
    cfg.finetune.mask.base_grads_to_head = f[1];
    const std::string label = std::string("soft_mask_") + (f[0] ? "T" : "F") +
                              (f[1] ? "T" : "F");
    rows.push_back({label, cfg, run_strategy(snapshot, novel, base, cfg)});
  }
  return rows;
}

enum class SweepAxis { base_fraction, way, temperature, lambda_kl };

inline const char* sweep_axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::base_fraction: return "base_fraction";
    case SweepAxis::way: return "way";
    case SweepAxis::temperature: return "temperature";
    case SweepAxis::lambda_kl: return "lambda_kl";
  }
  throw ContractError("sweep_axis_name: bad enum value");
}

inline SweepAxis sweep_axis_from_name(const std::string& name) {
  if (name == "base_fraction") return SweepAxis::base_fraction;
  if (name == "way") return SweepAxis::way;
  if (name == "temperature") return SweepAxis::temperature;
  if (name == "lambda_kl") return SweepAxis::lambda_kl;
  throw ConfigError("unknown sweep axis '" + name +
                    "' (expected base_fraction, way, temperature, lambda_kl)");
}

struct SweepPoint {
  double value;
  RunSummary summary;
};

inline std::vector<SweepPoint> sweep(const Model& snapshot, const LabeledDataset& novel,
                                     const LabeledDataset& base, SweepAxis axis,
                                     const std::vector<double>& values,
                                     const StrategyConfig& master) {
  if (values.empty()) throw ConfigError("sweep: no axis values given");
  std::vector<SweepPoint> out;
  for (double v : values) {
    StrategyConfig cfg = master;
    switch (axis) {
      case SweepAxis::base_fraction:
        cfg.base_fraction = v;
        break;
      case SweepAxis::way:
        if (v != static_cast<int>(v))
          throw ConfigError("sweep: way values must be integers");
        cfg.way = static_cast<int>(v);
        break;
      case SweepAxis::temperature:
        cfg.finetune.temperature = v;
        break;
      case SweepAxis::lambda_kl:
        cfg.finetune.lambda_kl = v;
        break;
    }
    out.push_back({v, run_strategy(snapshot, novel, base, cfg)});
  }
  return out;
}

struct TopExample {
  int base_index;
  int base_label;
  double confidence;
};

// For each novel class (store column), the k base examples whose softmaxed
// pseudo-label gives that class the highest probability. Ties go to the
// lower base index.
inline std::vector<std::vector<TopExample>> top_base_examples(const PseudoLabelStore& store,
                                                              const LabeledDataset& base,
                                                              int k) {
  if (k < 1) throw ConfigError("top_base_examples: k must be >= 1");
  if (store.logits.rows != base.size())
    throw ContractError("top_base_examples: store rows do not match base size");
  if (k > store.logits.rows) {
    std::fprintf(stderr, "top_base_examples: k=%d clamped to %d base examples\n", k,
                 store.logits.rows);
    k = store.logits.rows;
  }
  const Matrix probs = Graph::softmax_rows(store.logits, 1.0);
  std::vector<std::vector<TopExample>> out(probs.cols);
  std::vector<int> order(probs.rows);
  for (int j = 0; j < probs.cols; ++j) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (probs(a, j) != probs(b, j)) return probs(a, j) > probs(b, j);
      return a < b;
    });
    out[j].reserve(k);
    for (int r = 0; r < k; ++r)
      out[j].push_back({order[r], base.labels[order[r]], probs(order[r], j)});
  }
  return out;
}

// -------- report emission --------

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string episodes_csv(const std::vector<MatrixRow>& rows) {
  std::string out = "strategy,episode,seed,accuracy\n";
  for (const MatrixRow& row : rows)
    for (size_t i = 0; i < row.summary.per_episode_accuracy.size(); ++i) {
      out += row.label;
      out += ',';
      out += std::to_string(i);
      out += ',';
      out += std::to_string(episode_seed_for(row.config.master_seed, static_cast<int>(i)));
      out += ',';
      out += format_double(row.summary.per_episode_accuracy[i]);
      out += '\n';
    }
  return out;
}

inline std::string summary_markdown(const std::vector<MatrixRow>& rows) {
  std::string out = "| strategy | mean | ci95 | episodes | fingerprint |\n";
  out += "|---|---|---|---|---|\n";
  char buf[64];
  for (const MatrixRow& row : rows) {
    std::snprintf(buf, sizeof(buf), "| %s | %.4f | %.4f | %zu | %s |\n", row.label.c_str(),
                  row.summary.mean, row.summary.ci95,
                  row.summary.per_episode_accuracy.size(), row.summary.fingerprint.c_str());
    out += buf;
  }
  return out;
}

inline std::string sweep_csv(SweepAxis axis, const std::vector<SweepPoint>& points) {
  std::string out = std::string(sweep_axis_name(axis)) + ",mean,ci95,episodes\n";
  for (const SweepPoint& p : points) {
    out += format_double(p.value);
    out += ',';
    out += format_double(p.summary.mean);
    out += ',';
    out += format_double(p.summary.ci95);
    out += ',';
    out += std::to_string(p.summary.per_episode_accuracy.size());
    out += '\n';
  }
  return out;
}

inline std::string top_examples_csv(const std::vector<std::vector<TopExample>>& top,
                                    const std::vector<int>& episode_classes) {
  if (top.size() != episode_classes.size())
    throw ContractError("top_examples_csv: class list does not match report width");
  std::string out = "novel_class,rank,base_index,base_label,confidence\n";
  for (size_t j = 0; j < top.size(); ++j)
    for (size_t r = 0; r < top[j].size(); ++r) {
      out += std::to_string(episode_classes[j]);
      out += ',';
      out += std::to_string(r + 1);
      out += ',';
      out += std::to_string(top[j][r].base_index);
      out += ',';
      out += std::to_string(top[j][r].base_label);
      out += ',';
      out += format_double(top[j][r].confidence);
      out += '\n';
    }
  return out;
}

}  // namespace halluc
