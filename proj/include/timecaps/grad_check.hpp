#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "timecaps/graph.hpp"
#include "timecaps/tensor.hpp"

namespace timecaps {

// Scalar-valued function of several tensors, expressed on a graph.
using MultiFn = std::function<Var(Graph&, const std::vector<Var>&)>;
using SingleFn = std::function<Var(Graph&, Var)>;

struct GradCheckResult {
  double max_error = 0.0;  // max |analytic - numeric| / max(1, |analytic|)
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckOptions {
  double step = 1e-5;
  // Added to every analytic gradient entry; only used to prove the checker
  // notices a wrong gradient.
  double analytic_bias = 0.0;
};

namespace detail {

inline double eval_scalar(const MultiFn& f, const std::vector<Tensor>& inputs) {
  Graph g(false);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(g.constant(t));
  return f(g, vars).value().item();
}

}  // namespace detail

// Compares reverse-mode gradients against central differences coordinate by coordinate.
inline GradCheckResult grad_check(const MultiFn& f, std::vector<Tensor> inputs, const GradCheckOptions& opt = {}) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(g.leaf(t, true));
    Var loss = f(g, vars);
    g.backward(loss);
    for (Var v : vars) analytic.push_back(g.grad(v));
  }

  GradCheckResult res;
  bool first = true;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + opt.step;
      const double up = detail::eval_scalar(f, inputs);
      inputs[k][i] = orig - opt.step;
      const double down = detail::eval_scalar(f, inputs);
      inputs[k][i] = orig;

      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[k][i] + opt.analytic_bias;
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (first || err > res.max_error) {
        res = {err, k, i, a, numeric};
        first = false;
      }
    }
  }
  return res;
}

inline GradCheckResult grad_check(const SingleFn& f, const Tensor& x, const GradCheckOptions& opt = {}) {
  return grad_check([&f](Graph& g, const std::vector<Var>& v) { return f(g, v[0]); },
                    std::vector<Tensor>{x}, opt);
}

inline double grad_check(const SingleFn& f, const Tensor& x, double step) {
  return grad_check(f, x, GradCheckOptions{step, 0.0}).max_error;
}

}  // namespace timecaps
