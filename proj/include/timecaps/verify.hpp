#pragma once

// Finite-difference verification suite: every differentiable building block
// and the assembled model, each checked against central differences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "timecaps/capsule.hpp"
#include "timecaps/grad_check.hpp"
#include "timecaps/model.hpp"
#include "timecaps/ops.hpp"
#include "timecaps/training.hpp"

namespace timecaps {

struct GradCheckEntry {
  std::string component;
  GradCheckResult result;
  std::string worst_input;  // name of the tensor holding the worst coordinate
};

struct GradCheckSuiteOptions {
  GradCheckOptions check;
  std::uint64_t seed = 1;
  // Model points whose hidden ReLU inputs come closer than this to zero are
  // skipped: central differences straddling a kink are meaningless.
  double relu_margin = 1e-4;
};

namespace verify_detail {

// Projects a tensor output to a scalar with fixed random weights so every
// output coordinate contributes to the gradient.
inline Var project(Var y, const Tensor& weights) { return ops::sum(ops::mul_const(y, weights)); }

inline double min_abs(const std::vector<Tensor>& ts) {
  double m = std::numeric_limits<double>::infinity();
  for (const Tensor& t : ts) {
    for (double v : t.data()) m = std::min(m, std::abs(v));
  }
  return m;
}

struct ModelPoint {
  ModelParams params;
  Tensor x;
  std::size_t label = 0;
};

// Initialized parameters plus N(0, 0.05^2) jitter, which moves biases and
// the concatenation weights off their exact starting values.
inline ModelPoint make_point(const ModelConfig& cfg, std::uint64_t seed) {
  ModelPoint pt{init_params(cfg, seed), Tensor({cfg.L}), 0};
  std::mt19937_64 rng(seed ^ 0x51ed2701a4c3b5e9ULL);
  std::normal_distribution<double> jitter(0.0, 0.05);
  pt.params.for_each([&](const std::string&, Tensor& t) {
    for (double& v : t.data()) v += jitter(rng);
  });
  pt.x = Tensor::normal({cfg.L}, 1.0, rng);
  pt.label = std::uniform_int_distribution<std::size_t>(0, cfg.num_classes - 1)(rng);
  return pt;
}

inline ModelPoint smooth_point(const ModelConfig& cfg, std::uint64_t seed, double margin) {
  ModelPoint pt;
  for (std::uint64_t s = seed; s < seed + 64; ++s) {
    pt = make_point(cfg, s);
    Graph g(false);
    const auto out = model_forward(g.constant(pt.x), attach(g, pt.params, false), cfg, pt.label);
    if (min_abs(out.decoder_relu_inputs) >= margin) break;
  }
  return pt;
}

inline std::vector<std::string> param_names(const ModelParams& p) {
  std::vector<std::string> names;
  p.for_each([&](const std::string& n, const Tensor&) { names.push_back(n); });
  return names;
}

inline std::vector<Tensor> param_list(const ModelParams& p) {
  std::vector<Tensor> ts;
  p.for_each([&](const std::string&, const Tensor& t) { ts.push_back(t); });
  return ts;
}

inline ParamVars bind(const std::vector<Var>& vars) {
  ParamVars pv;
  std::size_t i = 0;
  pv.for_each([&](const std::string&, Var& v) { v = vars[i++]; });
  return pv;
}

}  // namespace verify_detail

using GradCheckProgress = std::function<void(const GradCheckEntry&)>;

inline std::vector<GradCheckEntry> run_gradcheck_suite(const ModelConfig& cfg, const GradCheckSuiteOptions& opt = {},
                                                       const GradCheckProgress& progress = {}) {
  using verify_detail::project;
  cfg.validate();
  std::mt19937_64 rng(opt.seed);
  std::vector<GradCheckEntry> entries;

  auto run = [&](const std::string& name, const MultiFn& f, const std::vector<Tensor>& inputs,
                 const std::vector<std::string>& names) {
    GradCheckEntry e{name, grad_check(f, inputs, opt.check), {}};
    e.worst_input = e.result.worst_input < names.size() ? names[e.result.worst_input] : "";
    entries.push_back(e);
    if (progress) progress(e);
  };

  {
    const Tensor x = Tensor::normal({11, 3}, 1.0, rng), k = Tensor::normal({4, 5, 3}, 0.5, rng);
    const Tensor w = Tensor::normal({6, 4}, 1.0, rng), w2 = Tensor::normal({7, 4}, 1.0, rng);
    run("conv1d",
        [&](Graph&, const std::vector<Var>& v) {
          return ops::add(project(ops::conv1d(v[0], v[1], 2, Pad::same), w),
                          project(ops::conv1d(v[0], v[1], 1, Pad::valid), w2));
        },
        {x, k}, {"input", "kernel"});
  }
  {
    const Tensor x = Tensor::normal({6, 8, 1}, 1.0, rng), k = Tensor::normal({3, 3, 2}, 0.5, rng);
    const Tensor w = Tensor::normal({6, 4, 3}, 1.0, rng);
    run("conv2d",
        [&](Graph&, const std::vector<Var>& v) { return project(ops::conv2d(v[0], v[1], 1, 2), w); },
        {x, k}, {"input", "kernel"});
  }
  {
    const Tensor x = Tensor::normal({5, 3}, 1.0, rng), k = Tensor::normal({3, 3, 2}, 0.5, rng);
    const Tensor w = Tensor::normal({11, 2}, 1.0, rng);
    run("deconv1d",
        [&](Graph&, const std::vector<Var>& v) { return project(ops::deconv1d(v[0], v[1], 2), w); },
        {x, k}, {"input", "kernel"});
  }
  {
    const Tensor x = Tensor::normal({4, 5}, 1.5, rng), w = Tensor::normal({4, 5}, 1.0, rng);
    run("squash",
        [&](Graph&, const std::vector<Var>& v) {
          return ops::add(project(squash(v[0], 1), w), ops::sum(capsule_length(v[0], 1)));
        },
        {x}, {"input"});
  }
  {
    const Tensor b = Tensor::normal({3, 4}, 2.0, rng), w = Tensor::normal({3, 4}, 1.0, rng);
    run("softmax", [&](Graph&, const std::vector<Var>& v) { return project(ops::softmax(v[0], {1}), w); }, {b},
        {"logits"});
  }
  for (RoutingNorm norm : {RoutingNorm::parents, RoutingNorm::blocks}) {
    const Tensor votes = Tensor::normal({2, 3, 4, 5}, 0.8, rng), w = Tensor::normal({2, 3, 5}, 1.0, rng);
    run("routing[" + to_string(norm) + "]",
        [&, norm](Graph&, const std::vector<Var>& v) { return project(dynamic_routing(v[0], 3, norm), w); },
        {votes}, {"votes"});
  }
  {
    Tensor lengths({4});
    std::uniform_real_distribution<double> u(0.15, 0.85);
    for (double& l : lengths.data()) l = u(rng);
    run("margin_loss", [&](Graph&, const std::vector<Var>& v) { return margin_loss(v[0], 2); }, {lengths},
        {"lengths"});
  }

  const auto pt = verify_detail::smooth_point(cfg, opt.seed, opt.relu_margin);
  const auto names = verify_detail::param_names(pt.params);
  const auto tensors = verify_detail::param_list(pt.params);
  Tensor omega;
  Tensor capsules;
  {
    Graph g(false);
    const auto out = model_forward(g.constant(pt.x), attach(g, pt.params, false), cfg, pt.label);
    omega = out.omega_cc.value();
    capsules = out.class_capsules.value();
  }
  {
    run("classification",
        [&](Graph&, const std::vector<Var>& v) {
          ParamVars pv;
          pv.class_w = v[1];
          return margin_loss(classification_forward(v[0], pv, cfg).lengths, pt.label);
        },
        {omega, pt.params.class_w}, {"capsules", "classify.weight"});
  }
  {
    std::vector<Tensor> inputs{capsules, pt.x};
    std::vector<std::string> in_names{"class_capsules", "target"};
    for (std::size_t i = 0; i < 2; ++i) {
      inputs.insert(inputs.end(), {pt.params.fc_w[i], pt.params.fc_b[i]});
      in_names.insert(in_names.end(), {"decoder.fc" + std::to_string(i + 1) + ".weight",
                                       "decoder.fc" + std::to_string(i + 1) + ".bias"});
    }
    for (std::size_t i = 0; i < 5; ++i) {
      inputs.insert(inputs.end(), {pt.params.deconv_w[i], pt.params.deconv_b[i]});
      in_names.insert(in_names.end(), {"decoder.deconv" + std::to_string(i + 1) + ".weight",
                                       "decoder.deconv" + std::to_string(i + 1) + ".bias"});
    }
    run("decoder",
        [&](Graph&, const std::vector<Var>& v) {
          ParamVars pv;
          for (std::size_t i = 0; i < 2; ++i) {
            pv.fc_w[i] = v[2 + 2 * i];
            pv.fc_b[i] = v[3 + 2 * i];
          }
          for (std::size_t i = 0; i < 5; ++i) {
            pv.deconv_w[i] = v[6 + 2 * i];
            pv.deconv_b[i] = v[7 + 2 * i];
          }
          return mse_loss(decoder_forward(v[0], pt.label, pv, cfg).reconstruction, v[1]);
        },
        inputs, in_names);
  }
  {
    // Reconstruction weight raised so decoder gradients are not dwarfed.
    TrainConfig tc;
    tc.recon_weight = 0.5;
    std::vector<Tensor> inputs = tensors;
    inputs.push_back(pt.x);
    std::vector<std::string> in_names = names;
    in_names.push_back("input");
    run("full_model",
        [&](Graph&, const std::vector<Var>& v) {
          const ParamVars pv = verify_detail::bind(v);
          const Var x = v.back();
          return total_loss(model_forward(x, pv, cfg, pt.label), x, pt.label, tc);
        },
        inputs, in_names);
  }
  return entries;
}

}  // namespace timecaps
