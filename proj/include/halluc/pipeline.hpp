#pragma once

#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "halluc/data.hpp"
#include "halluc/diff.hpp"
#include "halluc/models.hpp"

namespace halluc {

// -------- stage 1: base pretraining --------

struct PretrainConfig {
  int epochs = 60;
  int batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<int> lr_decay_epochs;  // absolute epoch indices, 0-based
  double lr_decay_factor = 0.1;
  uint64_t seed = 0;

  void validate(int dataset_size) const {
    if (epochs < 0) throw ConfigError("pretrain.epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
    if (batch_size > dataset_size)
      throw ConfigError("pretrain.batch_size " + std::to_string(batch_size) +
                        " exceeds dataset size " + std::to_string(dataset_size));
    if (learning_rate <= 0.0) throw ConfigError("pretrain.learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0)
      throw ConfigError("pretrain.momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("pretrain.weight_decay must be >= 0");
    if (lr_decay_factor <= 0.0) throw ConfigError("pretrain.lr_decay_factor must be > 0");
  }
};

struct PretrainLogRow {
  int epoch;
  double loss;
  double accuracy;
};

struct PretrainResult {
  Model model;
  std::vector<PretrainLogRow> log;
  int epochs_done = 0;
  std::vector<Matrix> velocity;  // optimizer state, parallel to model.params()
};

inline double pretrain_lr_at(const PretrainConfig& cfg, int epoch) {
  double lr = cfg.learning_rate;
  for (int d : cfg.lr_decay_epochs)
    if (epoch >= d) lr *= cfg.lr_decay_factor;
  return lr;
}

inline double train_accuracy(const Model& m, const Matrix& features,
                             const std::vector<int>& labels) {
  const Matrix logits = logits_frozen(m.backbone, m.head, features);
  int correct = 0;
  for (int i = 0; i < logits.rows; ++i) {
    const double* row = logits.row_ptr(i);
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
      if (row[j] > row[best]) best = j;
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / logits.rows;
}

// Runs `epochs_to_run` epochs starting at absolute epoch `start_epoch`.
// Shuffle order is drawn from a per-epoch derived stream and the learning
// rate is a pure function of the absolute epoch index, so a resumed run
// retraces the uninterrupted trajectory exactly.
inline PretrainResult pretrain_epochs(Model model, std::vector<Matrix> velocity,
                                      int start_epoch, const LabeledDataset& base,
                                      const PretrainConfig& cfg, int epochs_to_run) {
  if (base.size() == 0) throw DataError("pretrain: empty base dataset");
  cfg.validate(base.size());
  const LabeledDataset re = relabel_contiguous(base);
  if (model.head.classes() != static_cast<int>(re.class_set.size()))
    throw ConfigError("pretrain: head has " + std::to_string(model.head.classes()) +
                      " classes, dataset has " + std::to_string(re.class_set.size()));

  std::vector<Param*> params = model.params();
  OptimizerState opt(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  if (velocity.empty())
    opt.bind(params);
  else
    opt.velocity = std::move(velocity);

  PretrainResult out;
  const int n = re.size();
  const int dim = re.dim();
  std::vector<int> order(n);
  for (int e = start_epoch; e < start_epoch + epochs_to_run; ++e) {
    opt.learning_rate = pretrain_lr_at(cfg, e);
    RngStream shuffle_rng(cfg.seed, StreamTag::pretrain_shuffle, static_cast<uint64_t>(e));
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int rows = std::min(cfg.batch_size, n - start);
      Matrix bx(rows, dim);
      std::vector<int> by(rows);
      for (int i = 0; i < rows; ++i) {
        const int src = order[start + i];
        std::copy(re.features.row_ptr(src), re.features.row_ptr(src) + dim, bx.row_ptr(i));
        by[i] = re.labels[src];
      }
      try {
        Graph g;
        DiffNode* loss = g.cross_entropy(forward_logits(g, model, g.constant(std::move(bx))), by);
        loss_sum += loss->value.scalar_value();
        g.backward(loss);
        sgd_step(params, opt);
      } catch (const NumericError& err) {
        throw NumericError("pretrain epoch " + std::to_string(e) + " step " +
                           std::to_string(batches) + ": " + err.what());
      }
      ++batches;
    }
    out.log.push_back({e, loss_sum / batches, train_accuracy(model, re.features, re.labels)});
  }
  out.model = std::move(model);
  out.epochs_done = start_epoch + epochs_to_run;
  out.velocity = std::move(opt.velocity);
  return out;
}

inline PretrainResult pretrain(const LabeledDataset& base, const ModelConfig& mcfg,
                               const PretrainConfig& cfg) {
  cfg.validate(base.size() > 0 ? base.size() : 1);
  Model m = init_model(mcfg, cfg.seed);
  return pretrain_epochs(std::move(m), {}, 0, base, cfg, cfg.epochs);
}

inline nlohmann::json pretrain_state_to_json(const PretrainResult& r) {
  nlohmann::json vel = nlohmann::json::array();
  for (const Matrix& v : r.velocity) vel.push_back(detail::matrix_to_json(v));
  return nlohmann::json{{"epochs_done", r.epochs_done}, {"velocity", std::move(vel)}};
}

inline std::pair<int, std::vector<Matrix>> pretrain_state_from_json(const nlohmann::json& j) {
  try {
    std::vector<Matrix> vel;
    for (const auto& vj : j.at("velocity"))
      vel.push_back(detail::matrix_from_json(vj, "velocity"));
    return {j.at("epochs_done").get<int>(), std::move(vel)};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("pretrain state: ") + e.what());
  }
}

// -------- stage 2: support fit + pseudo-labeling --------

struct SupportFitConfig {
  int steps = 1500;
  double learning_rate = 0.0;  // 0 selects the Lipschitz-scaled step below
  double lr_scale = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-2;

  void validate() const {
    if (steps < 1) throw ConfigError("support_fit.steps must be >= 1");
    if (learning_rate < 0.0) throw ConfigError("support_fit.learning_rate must be >= 0");
    if (lr_scale <= 0.0) throw ConfigError("support_fit.lr_scale must be > 0");
    if (momentum < 0.0 || momentum >= 1.0)
      throw ConfigError("support_fit.momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("support_fit.weight_decay must be >= 0");
  }
};

// Step size from the curvature bound of regularized multinomial logistic
// regression: the Hessian spectral norm is at most wd + max_i ||x_i||^2 / 2.
inline double logistic_auto_lr(const Matrix& emb, double weight_decay, double lr_scale) {
  double max_sq = 0.0;
  for (int i = 0; i < emb.rows; ++i) {
    const double* row = emb.row_ptr(i);
    double sq = 0.0;
    for (int j = 0; j < emb.cols; ++j) sq += row[j] * row[j];
    max_sq = std::max(max_sq, sq);
  }
  return lr_scale / (weight_decay + 0.5 * max_sq);
}

// Full-batch gradient descent with momentum on frozen embeddings, from a
// zero head: the regularized objective is strictly convex, so the result is
// the unique optimum regardless of starting point, and a zero start keeps
// the fit free of any seed.
inline LinearHead fit_support_classifier(const Backbone& bb, const LabeledDataset& support,
                                         const std::vector<int>& classes,
                                         const SupportFitConfig& cfg) {
  cfg.validate();
  if (support.size() == 0) throw DataError("fit_support_classifier: empty support set");
  const Matrix emb = embed_frozen(bb, support.features);
  const std::vector<int> y = local_labels(support.labels, classes);
  LinearHead head = zero_head(emb.cols, static_cast<int>(classes.size()));
  const double lr = cfg.learning_rate > 0.0
                        ? cfg.learning_rate
                        : logistic_auto_lr(emb, cfg.weight_decay, cfg.lr_scale);
  OptimizerState opt(lr, cfg.momentum, cfg.weight_decay);
  std::vector<Param*> params = head.params();
  opt.bind(params);
  for (int step = 0; step < cfg.steps; ++step) {
    Graph g;
    DiffNode* logits =
        g.add_rowvec(g.matmul(g.constant(emb), g.leaf(head.weight)), g.leaf(head.bias));
    g.backward(g.cross_entropy(logits, y));
    sgd_step(params, opt);
  }
  return head;
}

// Mean cross-entropy plus the coupled-decay penalty (wd/2)*||head||^2 — the
// exact objective the fit minimizes. Used by convergence oracles.
inline double support_objective(const Backbone& bb, const LinearHead& head,
                                const LabeledDataset& support,
                                const std::vector<int>& classes, double weight_decay) {
  const Matrix logits = logits_frozen(bb, head, support.features);
  const std::vector<int> y = local_labels(support.labels, classes);
  double ce = 0.0;
  for (int i = 0; i < logits.rows; ++i) {
    const double* row = logits.row_ptr(i);
    ce += Graph::log_sum_exp(row, logits.cols) - row[y[i]];
  }
  ce /= logits.rows;
  double sq = 0.0;
  for (double v : head.weight.value.data) sq += v * v;
  for (double v : head.bias.value.data) sq += v * v;
  return ce + 0.5 * weight_decay * sq;
}

struct PseudoLabelStore {
  Matrix logits;  // N_base x way
  uint64_t source_episode = 0;
  bool frozen = true;
};

// Label the whole base set in the episode's novel ontology: one frozen
// forward pass, logits kept pre-softmax.
inline PseudoLabelStore pseudo_label(const LabeledDataset& base, const Backbone& bb,
                                     const LinearHead& head,
                                     const std::vector<int>& episode_classes,
                                     uint64_t episode_seed = 0) {
  require_disjoint_classes(base.class_set, episode_classes);
  if (head.classes() != static_cast<int>(episode_classes.size()))
    throw ContractError("pseudo_label: head width " + std::to_string(head.classes()) +
                        " does not match episode way " +
                        std::to_string(episode_classes.size()));
  PseudoLabelStore store;
  store.logits = logits_frozen(bb, head, base.features);
  store.source_episode = episode_seed;
  store.frozen = true;
  return store;
}

// Per-row argmax; ties go to the lowest class index.
inline std::vector<int> hardify(const PseudoLabelStore& store) {
  std::vector<int> out(store.logits.rows);
  for (int i = 0; i < store.logits.rows; ++i) {
    const double* row = store.logits.row_ptr(i);
    int best = 0;
    for (int j = 1; j < store.logits.cols; ++j)
      if (row[j] > row[best]) best = j;
    out[i] = best;
  }
  return out;
}

// -------- stage 3: distillation finetuning + evaluation --------

enum class LabelMode { soft, hard };

struct FinetuneConfig {
  double lambda_kl = 1.0;
  double lambda_ce = 1.0;
  double temperature = 4.0;
  int steps = 300;
  int batch_size = 50;  // even: half augmented support views, half base examples
  double learning_rate = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  ParamGroupMask mask;
  LabelMode label_mode = LabelMode::soft;
  bool on_the_fly = false;
  bool sample_base = true;
  AugmentationConfig aug;
  uint64_t seed = 0;

  void validate() const {
    if (lambda_kl < 0.0 || lambda_ce < 0.0)
      throw ConfigError("finetune: loss weights must be >= 0");
    if (temperature <= 0.0) throw ConfigError("finetune.temperature must be > 0");
    if (steps < 1) throw ConfigError("finetune.steps must be >= 1");
    if (batch_size < 2 || batch_size % 2 != 0)
      throw ConfigError("finetune.batch_size must be even and >= 2, got " +
                        std::to_string(batch_size));
    if (learning_rate < 0.0) throw ConfigError("finetune.learning_rate must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0)
      throw ConfigError("finetune.momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("finetune.weight_decay must be >= 0");
    aug.validate();
  }
};

struct FinetuneStepLog {
  int step;
  double kd_loss;  // raw distillation (or hard-label) term
  double ce_loss;  // raw support cross-entropy term
  double total;    // lambda_kl * kd + lambda_ce * ce
};

struct FinetuneResult {
  Model model;
  std::vector<FinetuneStepLog> log;
};

// One batch = batch_size/2 augmented support views (drawn with replacement)
// plus batch_size/2 base examples (drawn without replacement per shuffled
// cycle). Base-loss gradients are masked per cfg.mask before the support
// loss is accumulated; both halves share one optimizer step. Support and
// base draws come from independent streams, so toggling one term never
// perturbs the other's samples.
inline FinetuneResult finetune(Model student, const LabeledDataset& support,
                               const std::vector<int>& classes, const LabeledDataset& base,
                               const PseudoLabelStore& store, const Backbone& teacher_backbone,
                               const LinearHead& teacher_head, const FinetuneConfig& cfg) {
  cfg.validate();
  require_disjoint_classes(base.class_set, classes);
  const int way = static_cast<int>(classes.size());
  if (student.head.classes() != way)
    throw ContractError("finetune: student head width does not match episode way");
  const bool use_kd = cfg.sample_base && cfg.lambda_kl > 0.0;
  if (use_kd && !cfg.on_the_fly) {
    if (store.logits.rows != base.size() || store.logits.cols != way)
      throw ContractError("finetune: store shape " + store.logits.shape_str() +
                          " does not match base size " + std::to_string(base.size()) +
                          " and way " + std::to_string(way));
  }
  const std::vector<int> support_local = local_labels(support.labels, classes);

  const int half = cfg.batch_size / 2;
  const int dim = base.dim();
  RngStream support_rng(cfg.seed, StreamTag::finetune_support);
  RngStream base_rng(cfg.seed, StreamTag::finetune_base);

  std::vector<int> cycle(base.size());
  std::iota(cycle.begin(), cycle.end(), 0);
  size_t cursor = cycle.size();  // forces a shuffle before the first draw
  auto next_base_row = [&]() {
    if (cursor >= cycle.size()) {
      base_rng.shuffle(cycle);
      cursor = 0;
    }
    return cycle[cursor++];
  };

  std::vector<int> hard_store_labels;
  if (use_kd && cfg.label_mode == LabelMode::hard && !cfg.on_the_fly)
    hard_store_labels = hardify(store);

  std::vector<Param*> params = student.params();
  OptimizerState opt(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  opt.bind(params);

  FinetuneResult out;
  for (int step = 0; step < cfg.steps; ++step) {
    try {
      bool any_backward = false;
      double kd_value = 0.0;
      double ce_value = 0.0;

      if (cfg.sample_base) {
        std::vector<int> bidx(half);
        for (int i = 0; i < half; ++i) bidx[i] = next_base_row();
        if (cfg.lambda_kl > 0.0) {
          Matrix bx(half, dim);
          for (int i = 0; i < half; ++i)
            std::copy(base.features.row_ptr(bidx[i]), base.features.row_ptr(bidx[i]) + dim,
                      bx.row_ptr(i));
          Matrix teacher_logits;
          if (cfg.on_the_fly) {
            teacher_logits = logits_frozen(teacher_backbone, teacher_head, bx);
          } else {
            teacher_logits = Matrix(half, way);
            for (int i = 0; i < half; ++i)
              std::copy(store.logits.row_ptr(bidx[i]), store.logits.row_ptr(bidx[i]) + way,
                        teacher_logits.row_ptr(i));
          }
          Graph g;
          DiffNode* logits = forward_logits(g, student, g.constant(std::move(bx)));
          DiffNode* loss;
          if (cfg.label_mode == LabelMode::soft) {
            loss = g.kd_loss(logits, teacher_logits, cfg.temperature);
          } else {
            std::vector<int> hard(half);
            if (cfg.on_the_fly) {
              for (int i = 0; i < half; ++i) {
                const double* row = teacher_logits.row_ptr(i);
                int best = 0;
                for (int j = 1; j < way; ++j)
                  if (row[j] > row[best]) best = j;
                hard[i] = best;
              }
            } else {
              for (int i = 0; i < half; ++i) hard[i] = hard_store_labels[bidx[i]];
            }
            loss = g.cross_entropy(logits, hard);
          }
          kd_value = loss->value.scalar_value();
          g.backward(g.scale(loss, cfg.lambda_kl));
          mask_base_gradients(student, cfg.mask);
          any_backward = true;
        }
      }

      {
        Matrix sx(half, dim);
        std::vector<int> sy(half);
        for (int i = 0; i < half; ++i) {
          const int src = support_rng.uniform_int(support.size());
          augment_into(support.features.row_ptr(src), dim, cfg.aug, support_rng,
                       sx.row_ptr(i));
          sy[i] = support_local[src];
        }
        if (cfg.lambda_ce > 0.0) {
          Graph g;
          DiffNode* logits = forward_logits(g, student, g.constant(std::move(sx)));
          DiffNode* loss = g.cross_entropy(logits, sy);
          ce_value = loss->value.scalar_value();
          g.backward(g.scale(loss, cfg.lambda_ce));
          any_backward = true;
        }
      }

      if (any_backward) sgd_step(params, opt);
      out.log.push_back(
          {step, kd_value, ce_value, cfg.lambda_kl * kd_value + cfg.lambda_ce * ce_value});
    } catch (const NumericError& err) {
      throw NumericError("finetune step " + std::to_string(step) + ": " + err.what());
    }
  }
  out.model = std::move(student);
  return out;
}

// Argmax accuracy over the query set; no augmentation, ties to the lowest
// class index.
inline double evaluate(const Backbone& bb, const LinearHead& head,
                       const LabeledDataset& query, const std::vector<int>& classes) {
  if (query.size() == 0) throw ContractError("evaluate: empty query set");
  if (head.classes() != static_cast<int>(classes.size()))
    throw ContractError("evaluate: head width " + std::to_string(head.classes()) +
                        " does not match episode way " + std::to_string(classes.size()));
  const std::vector<int> y = local_labels(query.labels, classes);
  const Matrix logits = logits_frozen(bb, head, query.features);
  int correct = 0;
  for (int i = 0; i < logits.rows; ++i) {
    const double* row = logits.row_ptr(i);
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
      if (row[j] > row[best]) best = j;
    if (best == y[i]) ++correct;
  }
  return static_cast<double>(correct) / logits.rows;
}

}  // namespace halluc
