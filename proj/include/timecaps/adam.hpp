#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "timecaps/error.hpp"
#include "timecaps/tensor.hpp"

namespace timecaps {

struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  AdamState() = default;
  AdamState(double lr_, double beta1_ = 0.9, double beta2_ = 0.999, double eps = 1e-8)
      : lr(lr_), beta1(beta1_), beta2(beta2_), epsilon(eps) {}
};

// One bias-corrected Adam update. Moments are created (zeroed) on first use
// and keep their shapes afterwards.
inline void adam_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads, AdamState& st) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient count mismatch");
  if (st.first_moment.empty()) {
    for (const Tensor* p : params) {
      st.first_moment.emplace_back(p->shape());
      st.second_moment.emplace_back(p->shape());
    }
  }
  if (st.first_moment.size() != params.size()) throw ShapeError("adam: state tracks a different parameter set");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->shape() != grads[k].shape() || params[k]->shape() != st.first_moment[k].shape()) {
      throw ShapeError("adam: shape mismatch for parameter " + std::to_string(k) + " " +
                       to_string(params[k]->shape()) + " vs gradient " + to_string(grads[k].shape()));
    }
  }
  ++st.step_count;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->data();
    const auto g = grads[k].data();
    auto m = st.first_moment[k].data();
    auto v = st.second_moment[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      p[i] -= st.lr * mh / (std::sqrt(vh) + st.epsilon);
    }
  }
}

}  // namespace timecaps
