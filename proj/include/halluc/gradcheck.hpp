#pragma once

#include <functional>
#include <vector>

#include "halluc/diff.hpp"

namespace halluc {

// Builds a fresh graph over the given parameters and returns the scalar root.
using LossBuilder = std::function<DiffNode*(Graph&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  int checked_elements = 0;
};

// Central finite-difference verification of reverse-mode gradients.
// Perturbs every element of every parameter by +/-step and compares
// (f+ - f-) / 2step against the gradient from backward().
inline GradCheckReport check_gradients(const std::vector<Param*>& params,
                                       const LossBuilder& build, double step = 1e-5) {
  for (Param* p : params) p->zero_grad();
  {
    Graph g;
    DiffNode* root = build(g);
    g.backward(root);
  }
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) {
    analytic.push_back(p->grad);
    p->zero_grad();
  }

  const auto value = [&]() {
    Graph g;
    return build(g)->value.scalar_value();
  };

  GradCheckReport report;
  for (size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.data[i];
      p.value.data[i] = saved + step;
      const double f_plus = value();
      p.value.data[i] = saved - step;
      const double f_minus = value();
      p.value.data[i] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * step);
      const double an = analytic[k].data[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-3});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(fd - an) / denom);
      ++report.checked_elements;
    }
  }
  return report;
}

}  // namespace halluc
