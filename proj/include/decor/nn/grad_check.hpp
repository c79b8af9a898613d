// Central finite-difference verification of Graph gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "decor/nn/graph.hpp"

namespace decor::nn {

using LossFn = std::function<Var(Graph&, const ParamStore&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries
// whose true derivative is ~0 from being judged on round-off alone.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double evaluate_loss(const LossFn& loss_fn, const ParamStore& params) {
  Graph g;
  return g.value(loss_fn(g, params)).item();
}

inline GradCheckReport grad_check(const LossFn& loss_fn, ParamStore& params, double step = 1e-5,
                                  double tolerance = 1e-4) {
  Graph g;
  Var loss = loss_fn(g, params);
  g.backward(loss);
  std::map<std::string, Tensor> analytic;
  for (auto& [name, p] : params) analytic[name] = Tensor(p.value.shape);
  for (const auto& [name, grad] : g.param_grads()) analytic[name] = *grad;

  GradCheckReport rep;
  for (auto& [name, p] : params) {
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double orig = p.value.data[i];
      p.value.data[i] = orig + step;
      const double up = evaluate_loss(loss_fn, params);
      p.value.data[i] = orig - step;
      const double down = evaluate_loss(loss_fn, params);
      p.value.data[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[name].data[i];
      const double err = relative_error(a, numeric);
      ++rep.checked;
      if (err > rep.max_rel_error || rep.worst_param.empty()) {
        rep.max_rel_error = std::max(rep.max_rel_error, err);
        if (err >= rep.max_rel_error) {
          rep.worst_param = name;
          rep.worst_index = i;
          rep.worst_analytic = a;
          rep.worst_numeric = numeric;
        }
      }
    }
  }
  rep.passed = rep.max_rel_error < tolerance;
  return rep;
}

}  // namespace decor::nn
