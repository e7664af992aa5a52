#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "timecaps/adam.hpp"
#include "timecaps/capsule.hpp"
#include "timecaps/data.hpp"
#include "timecaps/error.hpp"
#include "timecaps/model.hpp"

namespace timecaps {

struct TrainConfig {
  int epochs = 35;
  double lr = 0.001;
  double lambda_margin = 0.5;
  double m_plus = 0.9;
  double m_minus = 0.1;
  double recon_weight = 0.0005;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double lr_decay = 1.0;  // per-epoch multiplier; 1 disables decay

  LossParams loss_params() const { return {m_plus, m_minus, lambda_margin}; }

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(recon_weight >= 0.0)) throw ConfigError("recon_weight must be non-negative");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
    loss_params().validate();
  }
};

struct EpochStats {
  int epoch = 0;
  double margin_loss = 0.0;  // mean over training examples
  double recon_loss = 0.0;   // mean MSE over training examples
  double total_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

struct TrainReport {
  std::vector<EpochStats> epochs;
  ConfusionMatrix confusion;  // on the test split after the last epoch
  std::size_t parameter_count = 0;
  double wall_seconds = 0.0;
};

struct LossTerms {
  Var margin;
  Var recon;
  Var total;  // margin + recon_weight * recon
};

inline LossTerms loss_terms(const ForwardOutput& fwd, Var target, std::size_t true_class, const TrainConfig& cfg) {
  LossTerms t;
  t.margin = margin_loss(fwd.class_lengths, true_class, cfg.loss_params());
  t.recon = mse_loss(fwd.reconstruction, target);
  t.total = ops::add(t.margin, ops::scale(t.recon, cfg.recon_weight));
  return t;
}

inline Var total_loss(const ForwardOutput& fwd, Var target, std::size_t true_class, const TrainConfig& cfg) {
  return loss_terms(fwd, target, true_class, cfg).total;
}

// Worker count for evaluation: TIMECAPS_THREADS when set, else hardware concurrency.
inline std::size_t evaluation_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("TIMECAPS_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
  }
  return n;
}

struct EvalResult {
  double accuracy = 0.0;
  ConfusionMatrix confusion;  // [true][predicted]
  std::vector<std::size_t> predictions;
};

// Predicted class = argmax of class-capsule lengths. Workers only read the
// parameters; results are merged by example index.
inline EvalResult evaluate(const ModelParams& params, const ModelConfig& cfg, const Dataset& data,
                           std::size_t threads = evaluation_threads()) {
  if (data.empty()) throw ArgumentError("cannot evaluate on an empty dataset");
  if (data.L != cfg.L) {
    throw ConfigError("dataset length " + std::to_string(data.L) + " != model length " + std::to_string(cfg.L));
  }
  if (data.num_classes > cfg.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, model has " +
                      std::to_string(cfg.num_classes));
  }
  EvalResult r;
  r.predictions.assign(data.size(), 0);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) r.predictions[i] = predict(params, cfg, data.input(i)).predicted;
  };
  threads = std::clamp<std::size_t>(threads, 1, data.size());
  if (threads == 1) {
    work(0, data.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (data.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(data.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  r.confusion.assign(cfg.num_classes, std::vector<std::size_t>(cfg.num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t truth = data.signals[i].label;
    ++r.confusion[truth][r.predictions[i]];
    correct += truth == r.predictions[i];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return r;
}

struct StepLoss {
  double margin = 0.0;
  double recon = 0.0;
};

// Forward/backward of one example with true-label masking; adds the
// parameter gradients into `grad_sum`.
inline StepLoss accumulate_example(const ModelParams& params, const ModelConfig& cfg, const TrainConfig& tc,
                                   const LabeledSignal& example, std::vector<Tensor>& grad_sum) {
  Graph g;
  const ParamVars vars = attach(g, params, true);
  const Tensor x({cfg.L}, example.samples);
  Var input = g.constant(x);
  const ForwardOutput fwd = model_forward(input, vars, cfg, example.label);
  const LossTerms loss = loss_terms(fwd, input, example.label, tc);
  g.backward(loss.total);
  std::size_t k = 0;
  vars.for_each([&](const std::string&, const Var& v) {
    const Tensor gr = g.grad(v);
    if (grad_sum.size() <= k) {
      grad_sum.push_back(gr);
    } else {
      auto dst = grad_sum[k].data();
      const auto src = gr.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    ++k;
  });
  return {loss.margin.value().item(), loss.recon.value().item()};
}

using EpochCallback = std::function<void(const EpochStats&)>;

// Mini-batch Adam over shuffled data; gradients are averaged over each batch.
// Deterministic for a given seed: single-threaded, fixed reduction order.
inline TrainReport train(ModelParams& params, const ModelConfig& cfg, const Dataset& train_set,
                         const Dataset& test_set, const TrainConfig& tc, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  tc.validate();
  check_param_shapes(params, cfg);
  for (const Dataset* d : {&train_set, &test_set}) {
    if (d->L != cfg.L) {
      throw ConfigError("dataset length " + std::to_string(d->L) + " != model length " + std::to_string(cfg.L));
    }
    if (d->num_classes > cfg.num_classes) throw ConfigError("dataset has more classes than the model");
  }
  if (train_set.empty() && tc.epochs > 0) throw ArgumentError("training set is empty");

  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.parameter_count = count_parameters(params);
  AdamState adam(tc.lr);
  std::mt19937_64 rng(tc.seed ^ 0x7a3c9e15d2b4f681ULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double margin_sum = 0.0, recon_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
      const std::size_t e = std::min(order.size(), b + tc.batch_size);
      std::vector<Tensor> grads;
      for (std::size_t i = b; i < e; ++i) {
        const StepLoss l = accumulate_example(params, cfg, tc, train_set.signals[order[i]], grads);
        margin_sum += l.margin;
        recon_sum += l.recon;
      }
      const double inv = 1.0 / static_cast<double>(e - b);
      for (Tensor& gr : grads) {
        for (double& v : gr.data()) v *= inv;
      }
      adam_step(param_pointers(params), grads, adam);
    }
    adam.lr *= tc.lr_decay;

    EpochStats st;
    st.epoch = epoch;
    const double count = static_cast<double>(train_set.size());
    st.margin_loss = margin_sum / count;
    st.recon_loss = recon_sum / count;
    st.total_loss = st.margin_loss + tc.recon_weight * st.recon_loss;
    st.train_accuracy = evaluate(params, cfg, train_set).accuracy;
    if (!test_set.empty()) {
      auto ev = evaluate(params, cfg, test_set);
      st.test_accuracy = ev.accuracy;
      if (epoch == tc.epochs) report.confusion = std::move(ev.confusion);
    }
    st.alpha = params.alpha.item();
    st.beta = params.beta.item();
    report.epochs.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace timecaps
