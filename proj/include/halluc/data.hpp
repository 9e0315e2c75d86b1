#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "halluc/errors.hpp"
#include "halluc/matrix.hpp"
#include "halluc/rng.hpp"

namespace halluc {

struct LabeledDataset {
  Matrix features;              // num_examples x dim
  std::vector<int> labels;      // parallel to feature rows
  std::vector<int> class_set;   // sorted, unique
  std::string name;

  int size() const { return features.rows; }
  int dim() const { return features.cols; }

  static std::vector<int> collect_class_set(const std::vector<int>& labels) {
    std::vector<int> cs(labels.begin(), labels.end());
    std::sort(cs.begin(), cs.end());
    cs.erase(std::unique(cs.begin(), cs.end()), cs.end());
    return cs;
  }

  void validate() const {
    if (static_cast<int>(labels.size()) != features.rows)
      throw DataError("dataset '" + name + "': " + std::to_string(labels.size()) +
                      " labels for " + std::to_string(features.rows) + " rows");
    if (!all_finite(features))
      throw DataError("dataset '" + name + "': non-finite feature value");
    for (int y : labels)
      if (!std::binary_search(class_set.begin(), class_set.end(), y))
        throw DataError("dataset '" + name + "': label " + std::to_string(y) +
                        " outside declared class set");
  }
};

struct ClassSplit {
  std::vector<int> base_classes;   // sorted
  std::vector<int> novel_classes;  // sorted

  ClassSplit(std::vector<int> base, std::vector<int> novel)
      : base_classes(std::move(base)), novel_classes(std::move(novel)) {
    std::sort(base_classes.begin(), base_classes.end());
    std::sort(novel_classes.begin(), novel_classes.end());
    for (int c : novel_classes)
      if (std::binary_search(base_classes.begin(), base_classes.end(), c))
        throw ContractError("ClassSplit: class " + std::to_string(c) +
                            " appears in both base and novel sets");
  }
};

inline void require_disjoint_classes(const std::vector<int>& base_classes,
                                     const std::vector<int>& episode_classes) {
  std::unordered_set<int> base(base_classes.begin(), base_classes.end());
  for (int c : episode_classes)
    if (base.count(c))
      throw ContractError("base and episode class sets overlap at class " +
                          std::to_string(c));
}

struct Episode {
  LabeledDataset support;
  LabeledDataset query;
  std::vector<int> classes;          // episode class ids; position = local label
  std::vector<int> support_indices;  // rows of the source novel dataset
  std::vector<int> query_indices;
  int way = 0;
  int shot = 0;
  int query_per_class = 0;
  uint64_t episode_seed = 0;
};

// Original class ids -> positions in the episode's class list.
inline std::vector<int> local_labels(const std::vector<int>& labels,
                                     const std::vector<int>& classes) {
  std::unordered_map<int, int> index;
  for (size_t i = 0; i < classes.size(); ++i) index[classes[i]] = static_cast<int>(i);
  std::vector<int> out(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    auto it = index.find(labels[i]);
    if (it == index.end())
      throw ContractError("label " + std::to_string(labels[i]) +
                          " is not an episode class");
    out[i] = it->second;
  }
  return out;
}

struct AugmentationConfig {
  double jitter_sigma = 0.0;
  double mask_fraction = 0.0;
  double flip_prob = 0.0;

  void validate() const {
    if (jitter_sigma < 0.0) throw ConfigError("aug.jitter_sigma must be >= 0");
    if (mask_fraction < 0.0 || mask_fraction >= 1.0)
      throw ConfigError("aug.mask_fraction must be in [0,1)");
    if (flip_prob < 0.0 || flip_prob > 1.0)
      throw ConfigError("aug.flip_prob must be in [0,1]");
  }

  bool is_identity() const {
    return jitter_sigma == 0.0 && mask_fraction == 0.0 && flip_prob == 0.0;
  }
};

// One augmented view: (x + noise) with a masked coordinate subset zeroed,
// then an optional whole-vector sign flip. Knobs at zero consume no draws,
// so the identity config is the identity map bitwise.
inline void augment_into(const double* x, int dim, const AugmentationConfig& cfg,
                         RngStream& rng, double* out) {
  if (cfg.jitter_sigma > 0.0) {
    for (int i = 0; i < dim; ++i) out[i] = x[i] + cfg.jitter_sigma * rng.gaussian();
  } else {
    std::copy(x, x + dim, out);
  }
  const int masked = static_cast<int>(cfg.mask_fraction * dim);
  if (masked > 0)
    for (int i : rng.sample_without_replacement(dim, masked)) out[i] = 0.0;
  if (cfg.flip_prob > 0.0 && rng.uniform() < cfg.flip_prob)
    for (int i = 0; i < dim; ++i) out[i] = -out[i];
}

inline std::vector<double> augment(const std::vector<double>& x,
                                   const AugmentationConfig& cfg, RngStream& rng) {
  cfg.validate();
  std::vector<double> out(x.size());
  augment_into(x.data(), static_cast<int>(x.size()), cfg, rng, out.data());
  return out;
}

struct GeneratorConfig {
  int num_base_classes = 20;
  int num_novel_classes = 5;
  int dim = 32;
  int examples_per_class = 100;
  double cluster_spread = 0.25;
  std::vector<int> base_class_counts;  // optional per-class override (imbalanced base)
  double novel_shift = 0.0;            // offset added to novel means (far-domain mode)
  uint64_t seed = 0;

  void validate() const {
    if (num_base_classes < 1 || num_novel_classes < 1)
      throw ConfigError("generator: class counts must be >= 1");
    if (dim < 2) throw ConfigError("generator: dim must be >= 2");
    if (examples_per_class < 1)
      throw ConfigError("generator: examples_per_class must be >= 1");
    if (cluster_spread <= 0.0) throw ConfigError("generator: cluster_spread must be > 0");
    if (!base_class_counts.empty()) {
      if (static_cast<int>(base_class_counts.size()) != num_base_classes)
        throw ConfigError("generator: base_class_counts length must equal num_base_classes");
      for (int c : base_class_counts)
        if (c < 1) throw ConfigError("generator: base_class_counts entries must be >= 1");
    }
  }
};

struct SyntheticData {
  LabeledDataset base;
  LabeledDataset novel;
  ClassSplit split;
};

namespace detail {

inline Matrix draw_means(int classes, int dim, RngStream& rng, double shift) {
  Matrix means(classes, dim);
  for (double& v : means.data) v = rng.uniform(-1.0, 1.0) + shift;
  return means;
}

inline LabeledDataset draw_clusters(const Matrix& means, const std::vector<int>& counts,
                                    int first_class_id, double spread, RngStream& rng,
                                    std::string name) {
  int total = 0;
  for (int c : counts) total += c;
  LabeledDataset ds;
  ds.name = std::move(name);
  ds.features = Matrix(total, means.cols);
  ds.labels.reserve(total);
  int row = 0;
  for (int c = 0; c < means.rows; ++c) {
    const double* mean = means.row_ptr(c);
    for (int e = 0; e < counts[c]; ++e, ++row) {
      double* out = ds.features.row_ptr(row);
      for (int d = 0; d < means.cols; ++d) out[d] = mean[d] + spread * rng.gaussian();
      ds.labels.push_back(first_class_id + c);
    }
  }
  ds.class_set.resize(means.rows);
  for (int c = 0; c < means.rows; ++c) ds.class_set[c] = first_class_id + c;
  return ds;
}

}  // namespace detail

// Gaussian cluster benchmark. Base classes take ids 0..B-1, novel B..B+V-1.
// Means and examples come from separate seeded streams per dataset, so base
// and novel draws are independent of each other's sizes.
inline SyntheticData generate_synthetic(const GeneratorConfig& cfg) {
  cfg.validate();
  RngStream base_means_rng(cfg.seed, StreamTag::generator, 0);
  RngStream novel_means_rng(cfg.seed, StreamTag::generator, 1);
  RngStream base_noise_rng(cfg.seed, StreamTag::generator, 2);
  RngStream novel_noise_rng(cfg.seed, StreamTag::generator, 3);

  Matrix base_means = detail::draw_means(cfg.num_base_classes, cfg.dim, base_means_rng, 0.0);
  Matrix novel_means =
      detail::draw_means(cfg.num_novel_classes, cfg.dim, novel_means_rng, cfg.novel_shift);

  std::vector<int> base_counts = cfg.base_class_counts;
  if (base_counts.empty())
    base_counts.assign(cfg.num_base_classes, cfg.examples_per_class);
  std::vector<int> novel_counts(cfg.num_novel_classes, cfg.examples_per_class);

  SyntheticData out{
      detail::draw_clusters(base_means, base_counts, 0, cfg.cluster_spread, base_noise_rng,
                            "base"),
      detail::draw_clusters(novel_means, novel_counts, cfg.num_base_classes,
                            cfg.cluster_spread, novel_noise_rng, "novel"),
      ClassSplit(std::vector<int>(), std::vector<int>())};
  out.split = ClassSplit(out.base.class_set, out.novel.class_set);
  out.base.validate();
  out.novel.validate();
  return out;
}

inline SyntheticData generate_synthetic(int num_base_classes, int num_novel_classes, int dim,
                                        int examples_per_class, double cluster_spread,
                                        uint64_t seed) {
  GeneratorConfig cfg;
  cfg.num_base_classes = num_base_classes;
  cfg.num_novel_classes = num_novel_classes;
  cfg.dim = dim;
  cfg.examples_per_class = examples_per_class;
  cfg.cluster_spread = cluster_spread;
  cfg.seed = seed;
  return generate_synthetic(cfg);
}

// way classes without replacement, then shot + query_per_class distinct
// examples per class, the first shot of them forming the support set.
inline Episode sample_episode(const LabeledDataset& novel, int way, int shot,
                              int query_per_class, uint64_t seed) {
  if (way < 1 || shot < 1 || query_per_class < 1)
    throw ConfigError("sample_episode: way, shot, query_per_class must be >= 1");
  const int num_classes = static_cast<int>(novel.class_set.size());
  if (way > num_classes)
    throw DataError("sample_episode: way " + std::to_string(way) + " exceeds " +
                    std::to_string(num_classes) + " novel classes");

  RngStream rng(seed, StreamTag::episode);
  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.query_per_class = query_per_class;
  ep.episode_seed = seed;
  for (int idx : rng.sample_without_replacement(num_classes, way))
    ep.classes.push_back(novel.class_set[idx]);

  std::unordered_map<int, std::vector<int>> rows_by_class;
  for (int i = 0; i < novel.size(); ++i) rows_by_class[novel.labels[i]].push_back(i);

  const int dim = novel.dim();
  ep.support.features = Matrix(way * shot, dim);
  ep.query.features = Matrix(way * query_per_class, dim);
  ep.support.name = "support";
  ep.query.name = "query";
  int srow = 0, qrow = 0;
  for (int c : ep.classes) {
    const std::vector<int>& rows = rows_by_class[c];
    const int needed = shot + query_per_class;
    if (static_cast<int>(rows.size()) < needed)
      throw DataError("sample_episode: class " + std::to_string(c) + " has " +
                      std::to_string(rows.size()) + " examples, needs " +
                      std::to_string(needed));
    const std::vector<int> picks =
        rng.sample_without_replacement(static_cast<int>(rows.size()), needed);
    for (int k = 0; k < needed; ++k) {
      const int src = rows[picks[k]];
      if (k < shot) {
        std::copy(novel.features.row_ptr(src), novel.features.row_ptr(src) + dim,
                  ep.support.features.row_ptr(srow++));
        ep.support.labels.push_back(c);
        ep.support_indices.push_back(src);
      } else {
        std::copy(novel.features.row_ptr(src), novel.features.row_ptr(src) + dim,
                  ep.query.features.row_ptr(qrow++));
        ep.query.labels.push_back(c);
        ep.query_indices.push_back(src);
      }
    }
  }
  ep.support.class_set = LabeledDataset::collect_class_set(ep.support.labels);
  ep.query.class_set = ep.support.class_set;
  ep.support.validate();
  ep.query.validate();
  return ep;
}

// Uniform subsample without replacement; fraction 1.0 returns the input
// verbatim and consumes no randomness.
inline LabeledDataset subsample(const LabeledDataset& ds, double fraction, uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw ConfigError("subsample: fraction must be in (0,1]");
  if (fraction == 1.0) return ds;
  const int n = ds.size();
  const int k = std::max(1, static_cast<int>(fraction * n));
  RngStream rng(seed, StreamTag::base_subsample);
  std::vector<int> picks = rng.sample_without_replacement(n, k);
  std::sort(picks.begin(), picks.end());
  LabeledDataset out;
  out.name = ds.name + "[" + std::to_string(k) + "/" + std::to_string(n) + "]";
  out.features = Matrix(k, ds.dim());
  out.labels.reserve(k);
  for (int i = 0; i < k; ++i) {
    std::copy(ds.features.row_ptr(picks[i]), ds.features.row_ptr(picks[i]) + ds.dim(),
              out.features.row_ptr(i));
    out.labels.push_back(ds.labels[picks[i]]);
  }
  out.class_set = LabeledDataset::collect_class_set(out.labels);
  return out;
}

// Labels mapped to positions in the sorted class set (0..C-1).
inline LabeledDataset relabel_contiguous(const LabeledDataset& ds) {
  LabeledDataset out = ds;
  out.labels = local_labels(ds.labels, ds.class_set);
  out.class_set.resize(ds.class_set.size());
  for (size_t i = 0; i < out.class_set.size(); ++i) out.class_set[i] = static_cast<int>(i);
  return out;
}

inline void save_csv(const LabeledDataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("save_csv: cannot open '" + path + "' for writing");
  char buf[64];
  for (int i = 0; i < ds.size(); ++i) {
    f << ds.labels[i];
    const double* row = ds.features.row_ptr(i);
    for (int j = 0; j < ds.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[j]);
      f << ',' << buf;
    }
    f << '\n';
  }
  if (!f) throw DataError("save_csv: write to '" + path + "' failed");
}

inline LabeledDataset load_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("load_csv: cannot open '" + path + "'");
  LabeledDataset ds;
  ds.name = path;
  std::vector<double> values;
  std::string line;
  int dim = -1;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty())
      throw DataError("load_csv: " + path + ":" + std::to_string(line_no) + ": empty row");
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.push_back("");
    if (static_cast<int>(fields.size()) < 2)
      throw DataError("load_csv: " + path + ":" + std::to_string(line_no) +
                      ": expected label plus features");
    if (dim == -1)
      dim = static_cast<int>(fields.size()) - 1;
    else if (static_cast<int>(fields.size()) - 1 != dim)
      throw DataError("load_csv: " + path + ":" + std::to_string(line_no) + ": row has " +
                      std::to_string(fields.size() - 1) + " features, expected " +
                      std::to_string(dim));
    char* end = nullptr;
    const long label = std::strtol(fields[0].c_str(), &end, 10);
    if (end == fields[0].c_str() || *end != '\0')
      throw DataError("load_csv: " + path + ":" + std::to_string(line_no) +
                      ": bad label '" + fields[0] + "'");
    ds.labels.push_back(static_cast<int>(label));
    for (int j = 1; j <= dim; ++j) {
      const double v = std::strtod(fields[j].c_str(), &end);
      if (end == fields[j].c_str() || *end != '\0' || !std::isfinite(v))
        throw DataError("load_csv: " + path + ":" + std::to_string(line_no) +
                        ": bad feature '" + fields[j] + "'");
      values.push_back(v);
    }
  }
  if (line_no == 0) throw DataError("load_csv: " + path + ": empty file");
  ds.features = Matrix(static_cast<int>(ds.labels.size()), dim, std::move(values));
  ds.class_set = LabeledDataset::collect_class_set(ds.labels);
  ds.validate();
  return ds;
}

}  // namespace halluc
