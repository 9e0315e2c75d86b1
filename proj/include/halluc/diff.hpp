#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "halluc/errors.hpp"
#include "halluc/matrix.hpp"

namespace halluc {

// A trainable tensor. Lives outside any computation graph; graphs bind to it
// through leaf nodes and flush gradients back here on backward().
struct Param {
  Matrix value;
  Matrix grad;
  bool grad_live = false;  // set by backward, cleared by the optimizer step
  std::string name;

  Param() = default;
  Param(Matrix v, std::string n = "") : value(std::move(v)), name(std::move(n)) {
    grad = Matrix(value.rows, value.cols);
  }

  void zero_grad() {
    grad.fill(0.0);
    grad_live = false;
  }
};

// One node of the reverse-mode computation graph.
struct DiffNode {
  Matrix value;
  Matrix grad;
  const char* op = "leaf";
  std::vector<DiffNode*> parents;
  std::function<void(DiffNode&)> backprop;  // accumulates into parents' grads
  Param* param = nullptr;                   // non-null for parameter leaves
  bool visited = false;

  DiffNode(Matrix v, const char* o) : value(std::move(v)), op(o) {
    grad = Matrix(value.rows, value.cols);
  }
};

// Owns the nodes of one forward/backward pass. Confined to a single thread;
// build a fresh graph per training step.
class Graph {
 public:
  DiffNode* leaf(Param& p) {
    DiffNode* n = make(p.value, "param");
    n->param = &p;
    return n;
  }

  DiffNode* constant(Matrix v) { return make(std::move(v), "const"); }

  DiffNode* matmul(DiffNode* a, DiffNode* b) {
    if (a->value.cols != b->value.rows)
      throw ContractError("matmul: inner dimensions disagree, " + a->value.shape_str() +
                          " x " + b->value.shape_str());
    Matrix out(a->value.rows, b->value.cols);
    add_matmul_nn(out, a->value, b->value);
    DiffNode* n = make_checked(std::move(out), "matmul");
    n->parents = {a, b};
    n->backprop = [](DiffNode& self) {
      add_matmul_nt(self.parents[0]->grad, self.grad, self.parents[1]->value);
      add_matmul_tn(self.parents[1]->grad, self.parents[0]->value, self.grad);
    };
    return n;
  }

  DiffNode* add(DiffNode* a, DiffNode* b) {
    require_same_shape(a->value, b->value, "add");
    Matrix out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] += b->value.data[i];
    DiffNode* n = make_checked(std::move(out), "add");
    n->parents = {a, b};
    n->backprop = [](DiffNode& self) {
      for (size_t i = 0; i < self.grad.size(); ++i) {
        self.parents[0]->grad.data[i] += self.grad.data[i];
        self.parents[1]->grad.data[i] += self.grad.data[i];
      }
    };
    return n;
  }

  // Broadcast a 1xC row vector across every row of an NxC matrix.
  DiffNode* add_rowvec(DiffNode* a, DiffNode* b) {
    if (b->value.rows != 1 || b->value.cols != a->value.cols)
      throw ContractError("add_rowvec: expected 1x" + std::to_string(a->value.cols) +
                          ", got " + b->value.shape_str());
    Matrix out = a->value;
    for (int i = 0; i < out.rows; ++i) {
      double* row = out.row_ptr(i);
      for (int j = 0; j < out.cols; ++j) row[j] += b->value.data[j];
    }
    DiffNode* n = make_checked(std::move(out), "add_rowvec");
    n->parents = {a, b};
    n->backprop = [](DiffNode& self) {
      DiffNode* a = self.parents[0];
      DiffNode* b = self.parents[1];
      for (size_t i = 0; i < self.grad.size(); ++i) a->grad.data[i] += self.grad.data[i];
      for (int i = 0; i < self.grad.rows; ++i) {
        const double* row = self.grad.row_ptr(i);
        for (int j = 0; j < self.grad.cols; ++j) b->grad.data[j] += row[j];
      }
    };
    return n;
  }

  DiffNode* hadamard(DiffNode* a, DiffNode* b) {
    require_same_shape(a->value, b->value, "hadamard");
    Matrix out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] *= b->value.data[i];
    DiffNode* n = make_checked(std::move(out), "hadamard");
    n->parents = {a, b};
    n->backprop = [](DiffNode& self) {
      DiffNode* a = self.parents[0];
      DiffNode* b = self.parents[1];
      for (size_t i = 0; i < self.grad.size(); ++i) {
        a->grad.data[i] += self.grad.data[i] * b->value.data[i];
        b->grad.data[i] += self.grad.data[i] * a->value.data[i];
      }
    };
    return n;
  }

  // Sum of all elements, as a 1x1 node.
  DiffNode* sum(DiffNode* a) {
    double total = 0.0;
    for (double v : a->value.data) total += v;
    DiffNode* n = make_checked(Matrix::scalar(total), "sum");
    n->parents = {a};
    n->backprop = [](DiffNode& self) {
      const double g = self.grad.data[0];
      for (double& v : self.parents[0]->grad.data) v += g;
    };
    return n;
  }

  DiffNode* relu(DiffNode* a) {
    Matrix out = a->value;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    DiffNode* n = make_checked(std::move(out), "relu");
    n->parents = {a};
    n->backprop = [](DiffNode& self) {
      DiffNode* a = self.parents[0];
      for (size_t i = 0; i < self.grad.size(); ++i)
        if (a->value.data[i] > 0.0) a->grad.data[i] += self.grad.data[i];
    };
    return n;
  }

  DiffNode* scale(DiffNode* a, double k) {
    Matrix out = a->value;
    for (double& v : out.data) v *= k;
    DiffNode* n = make_checked(std::move(out), "scale");
    n->parents = {a};
    n->backprop = [k](DiffNode& self) {
      for (size_t i = 0; i < self.grad.size(); ++i)
        self.parents[0]->grad.data[i] += k * self.grad.data[i];
    };
    return n;
  }

  // Row-wise softmax with max subtraction.
  DiffNode* softmax(DiffNode* a) {
    if (!all_finite(a->value)) throw NumericError("softmax: non-finite input");
    Matrix out = softmax_rows(a->value, 1.0);
    DiffNode* n = make_checked(std::move(out), "softmax");
    n->parents = {a};
    n->backprop = [](DiffNode& self) {
      DiffNode* a = self.parents[0];
      for (int i = 0; i < self.value.rows; ++i) {
        const double* s = self.value.row_ptr(i);
        const double* g = self.grad.row_ptr(i);
        double* out = a->grad.row_ptr(i);
        double dot = 0.0;
        for (int j = 0; j < self.value.cols; ++j) dot += g[j] * s[j];
        for (int j = 0; j < self.value.cols; ++j) out[j] += s[j] * (g[j] - dot);
      }
    };
    return n;
  }

  // Mean over rows of -log softmax(logits)[label], computed via log-sum-exp.
  DiffNode* cross_entropy(DiffNode* logits, const std::vector<int>& labels) {
    const int n_rows = logits->value.rows;
    const int n_cols = logits->value.cols;
    if (static_cast<int>(labels.size()) != n_rows)
      throw ContractError("cross_entropy: " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(n_rows) + " rows");
    for (int i = 0; i < n_rows; ++i)
      if (labels[i] < 0 || labels[i] >= n_cols)
        throw ContractError("cross_entropy: label " + std::to_string(labels[i]) +
                            " out of range [0, " + std::to_string(n_cols) + ") at row " +
                            std::to_string(i));
    if (!all_finite(logits->value)) throw NumericError("cross_entropy: non-finite logits");
    Matrix probs = softmax_rows(logits->value, 1.0);
    double loss = 0.0;
    for (int i = 0; i < n_rows; ++i) {
      const double* row = logits->value.row_ptr(i);
      loss += log_sum_exp(row, n_cols) - row[labels[i]];
    }
    loss /= n_rows;
    DiffNode* n = make_checked(Matrix::scalar(loss), "cross_entropy");
    n->parents = {logits};
    n->backprop = [probs = std::move(probs), labels](DiffNode& self) {
      DiffNode* logits = self.parents[0];
      const double g = self.grad.data[0] / probs.rows;
      for (int i = 0; i < probs.rows; ++i) {
        const double* p = probs.row_ptr(i);
        double* out = logits->grad.row_ptr(i);
        for (int j = 0; j < probs.cols; ++j)
          out[j] += g * (p[j] - (j == labels[i] ? 1.0 : 0.0));
      }
    };
    return n;
  }

  // Temperature-scaled distillation loss:
  //   T^2 * mean over rows of KL( softmax(teacher/T) || softmax(student/T) ).
  // Teacher logits are constants; no gradient flows to them.
  DiffNode* kd_loss(DiffNode* student, const Matrix& teacher, double temperature) {
    if (temperature <= 0.0)
      throw ConfigError("kd_loss: temperature must be positive, got " +
                        std::to_string(temperature));
    require_same_shape(student->value, teacher, "kd_loss");
    if (!all_finite(teacher)) throw NumericError("kd_loss: non-finite teacher logits");
    const int n_rows = student->value.rows;
    const int n_cols = teacher.cols;
    Matrix p_teacher = softmax_rows(teacher, temperature);
    Matrix p_student = softmax_rows(student->value, temperature);
    // KL in log space: sum_j pt[j] * (log_softmax_t[j] - log_softmax_s[j]).
    double loss = 0.0;
    for (int i = 0; i < n_rows; ++i) {
      const double* pt = p_teacher.row_ptr(i);
      const double* trow = teacher.row_ptr(i);
      const double* srow = student->value.row_ptr(i);
      const double lse_t = log_sum_exp_scaled(trow, n_cols, temperature);
      const double lse_s = log_sum_exp_scaled(srow, n_cols, temperature);
      for (int j = 0; j < n_cols; ++j) {
        if (pt[j] > 0.0)
          loss += pt[j] * ((trow[j] - srow[j]) / temperature - lse_t + lse_s);
      }
    }
    loss *= temperature * temperature / n_rows;
    DiffNode* n = make_checked(Matrix::scalar(loss), "kd_loss");
    n->parents = {student};
    n->backprop = [p_teacher = std::move(p_teacher), p_student = std::move(p_student),
                   temperature](DiffNode& self) {
      DiffNode* student = self.parents[0];
      // d/ds [ T^2/n * KL ] = (T/n) * (softmax(s/T) - softmax(t/T))
      const double g = self.grad.data[0] * temperature / p_student.rows;
      for (size_t i = 0; i < p_student.size(); ++i)
        student->grad.data[i] += g * (p_student.data[i] - p_teacher.data[i]);
    };
    return n;
  }

  // Reverse pass from a scalar root. Every parameter leaf reachable from the
  // root gets its grad accumulated exactly once per call.
  void backward(DiffNode* root) {
    if (!root->value.is_scalar())
      throw ContractError("backward: root must be scalar, got " + root->value.shape_str());
    for (auto& n : nodes_) n->visited = false;
    mark_reachable(root);
    root->grad.data[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      DiffNode* n = it->get();
      if (!n->visited) continue;
      if (n->backprop) n->backprop(*n);
      if (n->param) {
        require_same_shape(n->param->grad, n->grad, "backward: param grad");
        for (size_t i = 0; i < n->grad.size(); ++i) n->param->grad.data[i] += n->grad.data[i];
        n->param->grad_live = true;
      }
    }
  }

  static double log_sum_exp(const double* row, int n) {
    return log_sum_exp_scaled(row, n, 1.0);
  }

  static double log_sum_exp_scaled(const double* row, int n, double temperature) {
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += std::exp((row[j] - mx) / temperature);
    return mx / temperature + std::log(sum);
  }

  static Matrix softmax_rows(const Matrix& logits, double temperature) {
    Matrix out(logits.rows, logits.cols);
    for (int i = 0; i < logits.rows; ++i) {
      const double* in = logits.row_ptr(i);
      double* o = out.row_ptr(i);
      double mx = in[0];
      for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, in[j]);
      double sum = 0.0;
      for (int j = 0; j < logits.cols; ++j) {
        o[j] = std::exp((in[j] - mx) / temperature);
        sum += o[j];
      }
      for (int j = 0; j < logits.cols; ++j) o[j] /= sum;
    }
    return out;
  }

 private:
  DiffNode* make(Matrix v, const char* op) {
    nodes_.push_back(std::make_unique<DiffNode>(std::move(v), op));
    return nodes_.back().get();
  }

  DiffNode* make_checked(Matrix v, const char* op) {
    if (!all_finite(v))
      throw NumericError(std::string(op) + ": non-finite value in forward pass");
    return make(std::move(v), op);
  }

  void mark_reachable(DiffNode* root) {
    std::vector<DiffNode*> stack{root};
    while (!stack.empty()) {
      DiffNode* n = stack.back();
      stack.pop_back();
      if (n->visited) continue;
      n->visited = true;
      for (DiffNode* p : n->parents) stack.push_back(p);
    }
  }

  std::vector<std::unique_ptr<DiffNode>> nodes_;
};

// SGD with momentum and coupled weight decay:
//   v <- mu * v + (g + wd * theta);  theta <- theta - lr * v
// A parameter whose gradient is identically zero is left untouched for that
// step, velocity included, so a fully gated loss moves nothing.
struct OptimizerState {
  double learning_rate = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::vector<Matrix> velocity;  // parallel to the bound parameter list

  OptimizerState() = default;
  OptimizerState(double lr, double mu, double wd)
      : learning_rate(lr), momentum(mu), weight_decay(wd) {
    if (lr < 0.0) throw ConfigError("OptimizerState: learning_rate must be >= 0");
    if (mu < 0.0 || mu >= 1.0) throw ConfigError("OptimizerState: momentum must be in [0,1)");
    if (wd < 0.0) throw ConfigError("OptimizerState: weight_decay must be >= 0");
  }

  void bind(const std::vector<Param*>& params) {
    velocity.clear();
    velocity.reserve(params.size());
    for (const Param* p : params) velocity.emplace_back(p->value.rows, p->value.cols);
  }
};

inline void sgd_step(const std::vector<Param*>& params, OptimizerState& state) {
  if (state.velocity.empty() && !params.empty()) state.bind(params);
  if (state.velocity.size() != params.size())
    throw ContractError("sgd_step: velocity count does not match parameter count");
  for (size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    if (!p.grad_live)
      throw ContractError("sgd_step: parameter '" + p.name +
                          "' has no gradient (missing backward pass)");
    require_same_shape(state.velocity[k], p.value, "sgd_step: velocity");
  }
  for (size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    Matrix& v = state.velocity[k];
    bool any = false;
    for (double g : p.grad.data)
      if (g != 0.0) {
        any = true;
        break;
      }
    if (any) {
      for (size_t i = 0; i < v.size(); ++i) {
        v.data[i] = state.momentum * v.data[i] +
                    (p.grad.data[i] + state.weight_decay * p.value.data[i]);
        p.value.data[i] -= state.learning_rate * v.data[i];
      }
      if (!all_finite(p.value))
        throw NumericError("sgd_step: parameter '" + p.name + "' became non-finite");
    }
    p.zero_grad();
  }
}

}  // namespace halluc
