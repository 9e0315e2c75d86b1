#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "halluc/diff.hpp"
#include "halluc/errors.hpp"
#include "halluc/matrix.hpp"
#include "halluc/rng.hpp"

namespace halluc {

struct Layer {
  Param weight;  // in x out
  Param bias;    // 1 x out
};

// MLP feature extractor with ReLU after every layer. An empty layer list is
// the identity map (raw features pass straight to the head).
struct Backbone {
  int input_dim = 0;
  int embed_dim = 0;  // equals input_dim when layers is empty
  std::vector<int> hidden_dims;
  std::vector<Layer> layers;

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (Layer& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }
};

struct LinearHead {
  Param weight;  // embed_dim x classes
  Param bias;    // 1 x classes

  int in_dim() const { return weight.value.rows; }
  int classes() const { return weight.value.cols; }

  std::vector<Param*> params() { return {&weight, &bias}; }
};

struct Model {
  Backbone backbone;
  LinearHead head;

  std::vector<Param*> params() {
    std::vector<Param*> out = backbone.params();
    for (Param* p : head.params()) out.push_back(p);
    return out;
  }
};

// Which parameter groups receive gradients from base-example losses.
// Support-loss gradients always flow everywhere.
struct ParamGroupMask {
  bool base_grads_to_backbone = true;
  bool base_grads_to_head = true;
};

inline void mask_base_gradients(Model& m, const ParamGroupMask& mask) {
  if (!mask.base_grads_to_backbone)
    for (Param* p : m.backbone.params()) p->grad.fill(0.0);
  if (!mask.base_grads_to_head)
    for (Param* p : m.head.params()) p->grad.fill(0.0);
}

inline DiffNode* forward_embed(Graph& g, Backbone& bb, DiffNode* x) {
  if (x->value.cols != bb.input_dim)
    throw ContractError("forward_embed: input has " + std::to_string(x->value.cols) +
                        " columns, backbone expects " + std::to_string(bb.input_dim));
  DiffNode* h = x;
  for (Layer& l : bb.layers)
    h = g.relu(g.add_rowvec(g.matmul(h, g.leaf(l.weight)), g.leaf(l.bias)));
  return h;
}

inline DiffNode* forward_logits(Graph& g, Model& m, DiffNode* x) {
  DiffNode* emb = forward_embed(g, m.backbone, x);
  return g.add_rowvec(g.matmul(emb, g.leaf(m.head.weight)), g.leaf(m.head.bias));
}

// Forward passes without a graph, for frozen models. Bitwise identical to
// the graph forward: same kernels, same per-row accumulation order.
inline Matrix embed_frozen(const Backbone& bb, const Matrix& x) {
  if (x.cols != bb.input_dim)
    throw ContractError("embed_frozen: input has " + std::to_string(x.cols) +
                        " columns, backbone expects " + std::to_string(bb.input_dim));
  Matrix h = x;
  for (const Layer& l : bb.layers) {
    Matrix next(h.rows, l.weight.value.cols);
    add_matmul_nn(next, h, l.weight.value);
    for (int i = 0; i < next.rows; ++i) {
      double* row = next.row_ptr(i);
      for (int j = 0; j < next.cols; ++j) {
        row[j] += l.bias.value.data[j];
        if (row[j] < 0.0) row[j] = 0.0;
      }
    }
    h = std::move(next);
  }
  return h;
}

inline Matrix head_logits_frozen(const LinearHead& head, const Matrix& emb) {
  Matrix out(emb.rows, head.classes());
  add_matmul_nn(out, emb, head.weight.value);
  for (int i = 0; i < out.rows; ++i) {
    double* row = out.row_ptr(i);
    for (int j = 0; j < out.cols; ++j) row[j] += head.bias.value.data[j];
  }
  return out;
}

inline Matrix logits_frozen(const Backbone& bb, const LinearHead& head, const Matrix& x) {
  return head_logits_frozen(head, embed_frozen(bb, x));
}

struct ModelConfig {
  int input_dim = 0;
  std::vector<int> hidden_dims = {64, 64};
  int embed_dim = 64;
  int num_classes = 0;

  void validate() const {
    if (input_dim < 1) throw ConfigError("model.input_dim must be >= 1");
    if (num_classes < 1) throw ConfigError("model.num_classes must be >= 1");
    for (int h : hidden_dims)
      if (h < 1) throw ConfigError("model.hidden_dims entries must be >= 1");
    if (!hidden_dims.empty() && embed_dim < 1)
      throw ConfigError("model.embed_dim must be >= 1");
  }
};

namespace detail {

inline Param he_weight(int fan_in, int fan_out, RngStream& rng, const std::string& name) {
  Matrix w(fan_in, fan_out);
  const double std = std::sqrt(2.0 / fan_in);
  for (double& v : w.data) v = std * rng.gaussian();
  return Param(std::move(w), name);
}

}  // namespace detail

inline LinearHead make_head(int in_dim, int classes, RngStream& rng) {
  LinearHead head;
  head.weight = detail::he_weight(in_dim, classes, rng, "head.weight");
  head.bias = Param(Matrix(1, classes), "head.bias");
  return head;
}

inline LinearHead zero_head(int in_dim, int classes) {
  LinearHead head;
  head.weight = Param(Matrix(in_dim, classes), "head.weight");
  head.bias = Param(Matrix(1, classes), "head.bias");
  return head;
}

// He-initialized weights (std sqrt(2/fan_in)), zero biases. An empty
// hidden_dims list builds an identity backbone; the head then reads raw
// features and embed_dim is forced to input_dim.
inline Model init_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  RngStream rng(seed, StreamTag::model_init);
  Model m;
  m.backbone.input_dim = cfg.input_dim;
  m.backbone.hidden_dims = cfg.hidden_dims;
  if (cfg.hidden_dims.empty()) {
    m.backbone.embed_dim = cfg.input_dim;
  } else {
    m.backbone.embed_dim = cfg.embed_dim;
    std::vector<int> dims;
    dims.push_back(cfg.input_dim);
    for (int h : cfg.hidden_dims) dims.push_back(h);
    dims.push_back(cfg.embed_dim);
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
      const std::string tag = "backbone." + std::to_string(i);
      Layer l;
      l.weight = detail::he_weight(dims[i], dims[i + 1], rng, tag + ".weight");
      l.bias = Param(Matrix(1, dims[i + 1]), tag + ".bias");
      m.backbone.layers.push_back(std::move(l));
    }
  }
  m.head = make_head(m.backbone.embed_dim, cfg.num_classes, rng);
  return m;
}

inline Model init_model(int input_dim, std::vector<int> hidden_dims, int embed_dim,
                        int num_classes, uint64_t seed) {
  ModelConfig cfg;
  cfg.input_dim = input_dim;
  cfg.hidden_dims = std::move(hidden_dims);
  cfg.embed_dim = embed_dim;
  cfg.num_classes = num_classes;
  return init_model(cfg, seed);
}

inline LinearHead replace_head(const Backbone& bb, int num_classes, uint64_t seed) {
  if (num_classes < 1) throw ConfigError("replace_head: num_classes must be >= 1");
  RngStream rng(seed, StreamTag::head_init);
  return make_head(bb.embed_dim, num_classes, rng);
}

inline size_t param_count(Model& m) {
  size_t n = 0;
  for (Param* p : m.params()) n += p->value.size();
  return n;
}

// -------- checkpoint serialization (versioned JSON) --------

inline constexpr const char* kCheckpointFormat = "halluc-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  return nlohmann::json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    throw DataError("checkpoint: malformed matrix for " + what);
  Matrix m(j.at("rows").get<int>(), j.at("cols").get<int>(),
           j.at("data").get<std::vector<double>>());
  return m;
}

}  // namespace detail

inline nlohmann::json model_to_json(const Model& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& l : m.backbone.layers)
    layers.push_back({{"weight", detail::matrix_to_json(l.weight.value)},
                      {"bias", detail::matrix_to_json(l.bias.value)}});
  return nlohmann::json{
      {"input_dim", m.backbone.input_dim},
      {"hidden_dims", m.backbone.hidden_dims},
      {"embed_dim", m.backbone.embed_dim},
      {"num_classes", m.head.classes()},
      {"backbone", std::move(layers)},
      {"head",
       {{"weight", detail::matrix_to_json(m.head.weight.value)},
        {"bias", detail::matrix_to_json(m.head.bias.value)}}}};
}

inline Model model_from_json(const nlohmann::json& j) {
  Model m;
  try {
    m.backbone.input_dim = j.at("input_dim").get<int>();
    m.backbone.embed_dim = j.at("embed_dim").get<int>();
    m.backbone.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
    int idx = 0;
    for (const auto& lj : j.at("backbone")) {
      const std::string tag = "backbone." + std::to_string(idx++);
      Layer l;
      l.weight = Param(detail::matrix_from_json(lj.at("weight"), tag + ".weight"),
                       tag + ".weight");
      l.bias = Param(detail::matrix_from_json(lj.at("bias"), tag + ".bias"), tag + ".bias");
      m.backbone.layers.push_back(std::move(l));
    }
    m.head.weight = Param(detail::matrix_from_json(j.at("head").at("weight"), "head.weight"),
                          "head.weight");
    m.head.bias =
        Param(detail::matrix_from_json(j.at("head").at("bias"), "head.bias"), "head.bias");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  // shape chain check
  int prev = m.backbone.input_dim;
  for (const Layer& l : m.backbone.layers) {
    if (l.weight.value.rows != prev || l.bias.value.cols != l.weight.value.cols)
      throw DataError("checkpoint: layer shapes do not chain");
    prev = l.weight.value.cols;
  }
  const int out_dim = m.backbone.layers.empty() ? m.backbone.input_dim : prev;
  if (out_dim != m.backbone.embed_dim && !m.backbone.layers.empty())
    throw DataError("checkpoint: embed_dim does not match final layer");
  if (m.head.weight.value.rows != out_dim)
    throw DataError("checkpoint: head input width does not match backbone output");
  return m;
}

inline void save_checkpoint(const std::string& path, const Model& m,
                            const nlohmann::json& state = nlohmann::json::object()) {
  nlohmann::json doc{{"format", kCheckpointFormat},
                     {"version", kCheckpointVersion},
                     {"model", model_to_json(m)},
                     {"state", state}};
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("save_checkpoint: cannot open '" + path + "' for writing");
  f << doc.dump(2) << '\n';
  if (!f) throw DataError("save_checkpoint: write to '" + path + "' failed");
}

inline std::pair<Model, nlohmann::json> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("load_checkpoint: cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    f >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_checkpoint: " + path + ": " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kCheckpointFormat)
    throw DataError("load_checkpoint: " + path + ": not a checkpoint file");
  if (doc.value("version", -1) != kCheckpointVersion)
    throw DataError("load_checkpoint: " + path + ": unsupported version");
  return {model_from_json(doc.at("model")),
          doc.value("state", nlohmann::json::object())};
}

}  // namespace halluc
