#pragma once

// The TimeCaps network: shared front convolution, Cell A (channel-sliced
// capsules), Cell B (segment capsules), weighted concatenation,
// classification capsules and a masked reconstruction decoder.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "timecaps/capsule.hpp"
#include "timecaps/error.hpp"
#include "timecaps/graph.hpp"
#include "timecaps/ops.hpp"
#include "timecaps/tensor.hpp"

namespace timecaps {

struct DeconvLayer {
  std::size_t channels = 1;
  std::size_t width = 1;
  std::size_t stride = 1;

  friend bool operator==(const DeconvLayer&, const DeconvLayer&) = default;
};

struct ModelConfig {
  std::size_t L = 64;  // signal length
  std::size_t k = 16;  // front conv kernels
  std::size_t g1 = 9;  // front conv width
  std::size_t g2 = 9;  // Cell A feature conv width
  std::size_t g3 = 5;  // Cell A vote kernel height
  std::size_t g_b = 3; // Cell B conv width and vote kernel height

  std::size_t c_p = 4;   // Cell A primary capsule channels
  std::size_t a_p = 8;   // Cell A primary capsule dimension
  std::size_t c_sa = 2;  // Cell A output capsule channels
  std::size_t a_sa = 16; // Cell A output capsule dimension

  std::size_t c_b = 2;   // Cell B feature-map grouping
  std::size_t a_b = 8;
  std::size_t n = 8;     // segment length
  std::size_t c_sb = 4;
  std::size_t a_sb = 16;

  std::size_t a_sig = 16;
  std::size_t num_classes = 3;
  int routing_iters = 3;
  RoutingNorm routing_norm = RoutingNorm::parents;

  std::array<std::size_t, 2> decoder_fc{128, 256};
  std::array<DeconvLayer, 5> decoder_deconv{{{32, 2, 2}, {16, 2, 2}, {8, 2, 2}, {4, 2, 2}, {1, 1, 1}}};

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  // Default desk-scale architecture.
  static ModelConfig toy() { return {}; }

  // Small enough for exhaustive finite differences.
  static ModelConfig tiny() {
    ModelConfig c;
    c.L = 32;
    c.k = 4;
    c.g1 = 5;
    c.g2 = 3;
    c.g3 = 3;
    c.g_b = 3;
    c.c_p = 2;
    c.a_p = 4;
    c.c_sa = 2;
    c.a_sa = 4;
    c.c_b = 2;
    c.a_b = 2;
    c.n = 4;
    c.c_sb = 2;
    c.a_sb = 4;
    c.a_sig = 4;
    c.num_classes = 3;
    c.decoder_fc = {8, 16};
    c.decoder_deconv = {{{4, 2, 2}, {4, 2, 2}, {2, 2, 2}, {2, 2, 2}, {1, 1, 1}}};
    return c;
  }

  std::size_t a_s() const { return a_sa; }
  std::size_t segments() const { return L / n; }
  std::size_t cell_a_capsules() const { return L * c_sa; }
  std::size_t cell_b_capsules() const { return segments() * c_sb; }
  // N = L*c_sa + (L/n)*c_sb
  std::size_t num_capsules() const { return cell_a_capsules() + cell_b_capsules(); }

  // Length the decoder's deconvolution stack starts from, found by inverting
  // Lout = stride*(Lin-1) + width layer by layer from L.
  std::optional<std::size_t> decoder_seed_len() const {
    std::size_t len = L;
    for (std::size_t i = decoder_deconv.size(); i-- > 0;) {
      const auto& d = decoder_deconv[i];
      if (len < d.width || (len - d.width) % d.stride != 0) return std::nullopt;
      len = (len - d.width) / d.stride + 1;
    }
    return len;
  }

  std::size_t decoder_seed_channels() const { return decoder_fc[1] / decoder_seed_len().value_or(1); }

  void validate() const {
    const std::pair<const char*, std::size_t> extents[] = {
        {"L", L},       {"k", k},         {"g1", g1},     {"g2", g2},     {"g3", g3},
        {"g_b", g_b},   {"c_p", c_p},     {"a_p", a_p},   {"c_sa", c_sa}, {"a_sa", a_sa},
        {"c_b", c_b},   {"a_b", a_b},     {"n", n},       {"c_sb", c_sb}, {"a_sb", a_sb},
        {"a_sig", a_sig}, {"num_classes", num_classes}, {"decoder_fc[0]", decoder_fc[0]},
        {"decoder_fc[1]", decoder_fc[1]}};
    for (const auto& [name, v] : extents) {
      if (v == 0) throw ConfigError(std::string(name) + " must be positive");
    }
    for (const auto& d : decoder_deconv) {
      if (d.channels == 0 || d.width == 0 || d.stride == 0) {
        throw ConfigError("decoder deconvolution extents must be positive");
      }
    }
    if (routing_iters < 1) throw ConfigError("routing_iters must be at least 1");
    if (L % n != 0) {
      throw ConfigError("L=" + std::to_string(L) + " is not divisible by segment length n=" + std::to_string(n));
    }
    if (a_sa != a_sb) {
      throw ConfigError("concatenation needs a_sa == a_sb (got " + std::to_string(a_sa) + " and " +
                        std::to_string(a_sb) + ")");
    }
    if (decoder_deconv.back().channels != 1) throw ConfigError("last deconvolution must produce 1 channel");
    const auto seed = decoder_seed_len();
    if (!seed || *seed == 0) {
      throw ConfigError("decoder deconvolutions cannot produce length L=" + std::to_string(L));
    }
    if (decoder_fc[1] % *seed != 0) {
      throw ConfigError("decoder_fc[1]=" + std::to_string(decoder_fc[1]) + " is not divisible by the seed length " +
                        std::to_string(*seed));
    }
  }
};

// Every trainable tensor of the network. Instantiated with Tensor for
// storage and with Var for a forward pass on a graph.
template <class T>
struct ParamSet {
  T front_w, front_b;                    // [k x g1 x 1], [k]
  T a_conv_w, a_conv_b;                  // [c_p*a_p x g2 x k]
  T a_vote_w;                            // [c_sa*a_sa x g3 x a_p]
  T b_reduce_w, b_reduce_b;              // [c_b*a_b x 1 x k]
  T b_conv_w, b_conv_b;                  // [c_b*a_b x g_b x c_b*a_b]
  T b_vote_w;                            // [c_sb*a_sb x g_b x c_b*a_b]
  T alpha, beta;                         // [1]
  T class_w;                             // [N x classes x a_sig x a_s]
  std::array<T, 2> fc_w, fc_b;           // [out x in], [out]
  std::array<T, 5> deconv_w, deconv_b;   // [Cin x width x Cout], [Cout]

  // Visits members in a fixed order with stable names (checkpoint order).
  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    f("front.weight", s.front_w);
    f("front.bias", s.front_b);
    f("cell_a.conv.weight", s.a_conv_w);
    f("cell_a.conv.bias", s.a_conv_b);
    f("cell_a.vote.weight", s.a_vote_w);
    f("cell_b.reduce.weight", s.b_reduce_w);
    f("cell_b.reduce.bias", s.b_reduce_b);
    f("cell_b.conv.weight", s.b_conv_w);
    f("cell_b.conv.bias", s.b_conv_b);
    f("cell_b.vote.weight", s.b_vote_w);
    f("concat.alpha", s.alpha);
    f("concat.beta", s.beta);
    f("classify.weight", s.class_w);
    for (std::size_t i = 0; i < 2; ++i) {
      f("decoder.fc" + std::to_string(i + 1) + ".weight", s.fc_w[i]);
      f("decoder.fc" + std::to_string(i + 1) + ".bias", s.fc_b[i]);
    }
    for (std::size_t i = 0; i < 5; ++i) {
      f("decoder.deconv" + std::to_string(i + 1) + ".weight", s.deconv_w[i]);
      f("decoder.deconv" + std::to_string(i + 1) + ".bias", s.deconv_b[i]);
    }
  }

  template <class F>
  void for_each(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, std::forward<F>(f));
  }
};

using ModelParams = ParamSet<Tensor>;
using ParamVars = ParamSet<Var>;

// Shapes of every parameter, as a pure function of the config. Biases carry
// fan 0 and are zero-initialized.
struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
};

inline std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  c.validate();
  const std::size_t fa = c.c_p * c.a_p;
  const std::size_t fb = c.c_b * c.a_b;
  const std::size_t va = c.c_sa * c.a_sa;
  const std::size_t vb = c.c_sb * c.a_sb;
  const std::size_t flat = c.num_classes * c.a_sig;
  std::vector<ParamSpec> s = {
      {"front.weight", {c.k, c.g1, 1}, c.g1, c.g1 * c.k},
      {"front.bias", {c.k}, 0, 0},
      {"cell_a.conv.weight", {fa, c.g2, c.k}, c.g2 * c.k, c.g2 * fa},
      {"cell_a.conv.bias", {fa}, 0, 0},
      {"cell_a.vote.weight", {va, c.g3, c.a_p}, c.g3 * c.a_p, c.g3 * c.a_p * va},
      {"cell_b.reduce.weight", {fb, 1, c.k}, c.k, fb},
      {"cell_b.reduce.bias", {fb}, 0, 0},
      {"cell_b.conv.weight", {fb, c.g_b, fb}, c.g_b * fb, c.g_b * fb},
      {"cell_b.conv.bias", {fb}, 0, 0},
      {"cell_b.vote.weight", {vb, c.g_b, fb}, c.g_b * fb, c.g_b * fb * vb},
      {"concat.alpha", {1}, 0, 0},
      {"concat.beta", {1}, 0, 0},
      {"classify.weight", {c.num_capsules(), c.num_classes, c.a_sig, c.a_s()}, c.a_s(), c.a_sig},
      {"decoder.fc1.weight", {c.decoder_fc[0], flat}, flat, c.decoder_fc[0]},
      {"decoder.fc1.bias", {c.decoder_fc[0]}, 0, 0},
      {"decoder.fc2.weight", {c.decoder_fc[1], c.decoder_fc[0]}, c.decoder_fc[0], c.decoder_fc[1]},
      {"decoder.fc2.bias", {c.decoder_fc[1]}, 0, 0},
  };
  std::size_t cin = c.decoder_seed_channels();
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& d = c.decoder_deconv[i];
    s.push_back({"decoder.deconv" + std::to_string(i + 1) + ".weight", {cin, d.width, d.channels},
                 d.width * cin, d.width * d.channels});
    s.push_back({"decoder.deconv" + std::to_string(i + 1) + ".bias", {d.channels}, 0, 0});
    cin = d.channels;
  }
  return s;
}

// Glorot-uniform weights, zero biases, alpha = beta = 1.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  const auto specs = param_specs(cfg);
  std::mt19937_64 rng(seed);
  ModelParams p;
  std::size_t idx = 0;
  p.for_each([&](const std::string& name, Tensor& t) {
    const ParamSpec& s = specs[idx++];
    if (s.name != name) throw Error("parameter spec order mismatch at " + name);
    if (name == "concat.alpha" || name == "concat.beta") {
      t = Tensor(s.shape, 1.0);
    } else if (s.fan_in == 0) {
      t = Tensor(s.shape, 0.0);
    } else {
      t = Tensor::uniform(s.shape, std::sqrt(6.0 / static_cast<double>(s.fan_in + s.fan_out)), rng);
    }
  });
  return p;
}

// Throws when `p` does not have exactly the shapes `cfg` implies.
inline void check_param_shapes(const ModelParams& p, const ModelConfig& cfg) {
  const auto specs = param_specs(cfg);
  std::size_t idx = 0;
  p.for_each([&](const std::string& name, const Tensor& t) {
    if (t.shape() != specs[idx].shape) {
      throw ShapeError("parameter " + name + " has shape " + to_string(t.shape()) + ", config implies " +
                       to_string(specs[idx].shape));
    }
    ++idx;
  });
}

inline std::size_t count_parameters(const ModelParams& p) {
  std::size_t total = 0;
  p.for_each([&](const std::string&, const Tensor& t) { total += t.numel(); });
  return total;
}

inline ParamVars attach(Graph& g, const ModelParams& p, bool trainable) {
  ParamVars v;
  std::vector<const Tensor*> flat;
  p.for_each([&](const std::string&, const Tensor& t) { flat.push_back(&t); });
  std::size_t i = 0;
  v.for_each([&](const std::string&, Var& var) { var = g.leaf(*flat[i++], trainable); });
  return v;
}

// Collects gradients of every parameter leaf in visit order.
inline std::vector<Tensor> gradients(const Graph& g, const ParamVars& v) {
  std::vector<Tensor> out;
  v.for_each([&](const std::string&, const Var& var) { out.push_back(g.grad(var)); });
  return out;
}

inline std::vector<Tensor*> param_pointers(ModelParams& p) {
  std::vector<Tensor*> out;
  p.for_each([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

// Intermediate values of one capsule cell.
struct CellTrace {
  Var features;  // feature maps before capsule formation
  Var primary;   // squashed primary capsules
  Var votes;     // raw vote convolution output
  Var routed;    // routing output [rows x channels x dim]
  Var output;    // flattened capsules [(rows*channels) x dim]
};

struct ForwardOutput {
  Var phi;             // [L x k]
  CellTrace cell_a;
  CellTrace cell_b;
  Var omega_cc;        // [N x a_s]
  Var class_votes;     // [1 x classes x N x a_sig]
  Var class_capsules;  // [classes x a_sig]
  Var class_lengths;   // [classes]
  Var decoder_input;   // masked capsules [classes x a_sig]
  Var reconstruction;  // [L]
  std::vector<Tensor> decoder_relu_inputs;
  std::size_t mask_class = 0;
};

inline Var front_conv(Var x, const ParamVars& p, const ModelConfig& cfg) {
  if (x.shape() != Shape{cfg.L}) {
    throw ShapeError("input of shape " + to_string(x.shape()) + " for model length L=" + std::to_string(cfg.L));
  }
  Var col = ops::reshape(x, {cfg.L, 1});
  return ops::add_bias(ops::conv1d(col, p.front_w, 1, Pad::same), p.front_b);
}

inline CellTrace cell_a_forward(Var phi, const ParamVars& p, const ModelConfig& cfg) {
  const std::size_t L = cfg.L;
  if (phi.shape() != Shape{L, cfg.k}) throw ShapeError("cell A input " + to_string(phi.shape()));
  CellTrace t;
  t.features = ops::add_bias(ops::conv1d(phi, p.a_conv_w, 1, Pad::same), p.a_conv_b);
  t.primary = squash(ops::reshape(t.features, {L, cfg.c_p, cfg.a_p}), 2);
  Var column = ops::reshape(t.primary, {L, cfg.c_p * cfg.a_p, 1});
  // Sweep width (c_p*a_p - a_p)/a_p + 1 == c_p.
  t.votes = ops::conv2d(column, p.a_vote_w, 1, cfg.a_p);
  Var votes = ops::reshape(t.votes, {L, cfg.c_p, cfg.c_sa, cfg.a_sa});
  votes = ops::permute(votes, {0, 2, 1, 3});  // route over the c_p block axis
  t.routed = dynamic_routing(votes, cfg.routing_iters, cfg.routing_norm);
  t.output = ops::flatten_leading(t.routed, 1);
  return t;
}

inline CellTrace cell_b_forward(Var phi, const ParamVars& p, const ModelConfig& cfg) {
  const std::size_t L = cfg.L;
  if (L % cfg.n != 0) throw ConfigError("L is not divisible by n");
  if (phi.shape() != Shape{L, cfg.k}) throw ShapeError("cell B input " + to_string(phi.shape()));
  const std::size_t fb = cfg.c_b * cfg.a_b;
  const std::size_t segs = cfg.segments();
  CellTrace t;
  Var reduced = ops::add_bias(ops::conv1d(phi, p.b_reduce_w, 1, Pad::same), p.b_reduce_b);
  t.features = ops::add_bias(ops::conv1d(reduced, p.b_conv_w, 1, Pad::same), p.b_conv_b);
  t.primary = squash(ops::reshape(t.features, {segs, cfg.n, fb}), 2);
  Var column = ops::reshape(t.primary, {segs, cfg.n * fb, 1});
  t.votes = ops::conv2d(column, p.b_vote_w, 1, fb);
  Var votes = ops::reshape(t.votes, {segs, cfg.n, cfg.c_sb, cfg.a_sb});
  votes = ops::permute(votes, {0, 2, 1, 3});  // route over the n segment axis
  t.routed = dynamic_routing(votes, cfg.routing_iters, cfg.routing_norm);
  t.output = ops::flatten_leading(t.routed, 1);
  return t;
}

// Stacks alpha*omega_a on top of beta*omega_b.
inline Var concat_weighted(Var omega_a, Var omega_b, Var alpha, Var beta) {
  if (omega_a.shape().size() != 2 || omega_b.shape().size() != 2 ||
      omega_a.shape()[1] != omega_b.shape()[1]) {
    throw ShapeError("concatenating " + to_string(omega_a.shape()) + " with " + to_string(omega_b.shape()));
  }
  return ops::concat_rows(ops::mul(omega_a, alpha), ops::mul(omega_b, beta));
}

// votes[0, j, i, :] = W[i, j] u_i with u [N x a_s], W [N x J x a_sig x a_s].
inline Var transform_votes(Var u, Var weights) {
  const Tensor& x = u.value();
  const Tensor& w = weights.value();
  if (x.rank() != 2 || w.rank() != 4 || w.dim(0) != x.dim(0) || w.dim(3) != x.dim(1)) {
    throw ShapeError("capsule transform of " + to_string(x.shape()) + " with " + to_string(w.shape()));
  }
  const std::size_t N = w.dim(0), J = w.dim(1), D = w.dim(2), A = w.dim(3);
  Tensor out({1, J, N, D});
  for (std::size_t i = 0; i < N; ++i) {
    const double* ui = &x.data()[i * A];
    for (std::size_t j = 0; j < J; ++j) {
      const double* wij = &w.data()[((i * J + j) * D) * A];
      double* o = &out.data()[(j * N + i) * D];
      for (std::size_t d = 0; d < D; ++d) {
        double acc = 0.0;
        for (std::size_t a = 0; a < A; ++a) acc += wij[d * A + a] * ui[a];
        o[d] = acc;
      }
    }
  }
  return u.graph->record(std::move(out), {u, weights}, [u, weights, N, J, D, A](Graph& g, const Tensor& go) {
    const Tensor& x = u.value();
    const Tensor& w = weights.value();
    Tensor* gu = g.grad_buffer(u);
    Tensor* gw = g.grad_buffer(weights);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = 0; j < J; ++j) {
        const double* gr = &go.data()[(j * N + i) * D];
        const std::size_t wb = ((i * J + j) * D) * A;
        for (std::size_t d = 0; d < D; ++d) {
          if (gr[d] == 0.0) continue;
          for (std::size_t a = 0; a < A; ++a) {
            if (gu) (*gu)[i * A + a] += w[wb + d * A + a] * gr[d];
            if (gw) (*gw)[wb + d * A + a] += x[i * A + a] * gr[d];
          }
        }
      }
    }
  });
}

struct ClassificationOutput {
  Var votes;     // [1 x J x N x a_sig]
  Var capsules;  // [J x a_sig]
  Var lengths;   // [J]
};

inline ClassificationOutput classification_forward(Var omega_cc, const ParamVars& p, const ModelConfig& cfg) {
  if (omega_cc.shape() != Shape{cfg.num_capsules(), cfg.a_s()}) {
    throw ShapeError("classification input " + to_string(omega_cc.shape()));
  }
  ClassificationOutput out;
  out.votes = transform_votes(omega_cc, p.class_w);
  Var routed = dynamic_routing(out.votes, cfg.routing_iters, cfg.routing_norm);
  out.capsules = ops::reshape(routed, {cfg.num_classes, cfg.a_sig});
  out.lengths = capsule_length(out.capsules, 1);
  return out;
}

inline Tensor class_mask(const ModelConfig& cfg, std::size_t mask_class) {
  if (mask_class >= cfg.num_classes) {
    throw ArgumentError("mask class " + std::to_string(mask_class) + " out of range");
  }
  Tensor m({cfg.num_classes, cfg.a_sig});
  for (std::size_t d = 0; d < cfg.a_sig; ++d) m.at(mask_class, d) = 1.0;
  return m;
}

struct DecoderOutput {
  Var masked;
  Var reconstruction;
  std::vector<Tensor> relu_inputs;  // pre-activations of every hidden ReLU
};

inline DecoderOutput decoder_forward(Var class_capsules, std::size_t mask_class, const ParamVars& p,
                                     const ModelConfig& cfg) {
  DecoderOutput out;
  out.masked = ops::mul_const(class_capsules, class_mask(cfg, mask_class));
  Var h = ops::reshape(out.masked, {cfg.num_classes * cfg.a_sig});
  auto relu = [&out](Var v) {
    out.relu_inputs.push_back(v.value());
    return ops::relu(v);
  };
  h = relu(ops::linear(h, p.fc_w[0], p.fc_b[0]));
  h = relu(ops::linear(h, p.fc_w[1], p.fc_b[1]));
  const std::size_t seed = cfg.decoder_seed_len().value();
  h = ops::reshape(h, {seed, cfg.decoder_fc[1] / seed});
  for (std::size_t i = 0; i < 5; ++i) {
    h = ops::add_bias(ops::deconv1d(h, p.deconv_w[i], cfg.decoder_deconv[i].stride), p.deconv_b[i]);
    if (i + 1 < 5) h = relu(h);
  }
  out.reconstruction = ops::reshape(h, {cfg.L});
  return out;
}

inline std::size_t argmax(const Tensor& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.numel(); ++i) {
    if (t[i] > t[best]) best = i;
  }
  return best;
}

// Full pipeline. Without `mask_class` the decoder is fed the predicted class.
inline ForwardOutput model_forward(Var x, const ParamVars& p, const ModelConfig& cfg,
                                   std::optional<std::size_t> mask_class = std::nullopt) {
  ForwardOutput out;
  out.phi = front_conv(x, p, cfg);
  out.cell_a = cell_a_forward(out.phi, p, cfg);
  out.cell_b = cell_b_forward(out.phi, p, cfg);
  out.omega_cc = concat_weighted(out.cell_a.output, out.cell_b.output, p.alpha, p.beta);
  auto cls = classification_forward(out.omega_cc, p, cfg);
  out.class_votes = cls.votes;
  out.class_capsules = cls.capsules;
  out.class_lengths = cls.lengths;
  out.mask_class = mask_class.value_or(argmax(cls.lengths.value()));
  auto dec = decoder_forward(cls.capsules, out.mask_class, p, cfg);
  out.decoder_input = dec.masked;
  out.reconstruction = dec.reconstruction;
  out.decoder_relu_inputs = std::move(dec.relu_inputs);
  return out;
}

struct Prediction {
  Tensor class_lengths;
  Tensor class_capsules;
  Tensor reconstruction;
  std::size_t predicted = 0;
};

// Tape-free inference with predicted-class masking.
inline Prediction predict(const ModelParams& params, const ModelConfig& cfg, const Tensor& x) {
  Graph g(false);
  const ParamVars p = attach(g, params, false);
  const auto out = model_forward(g.constant(x), p, cfg);
  return {out.class_lengths.value(), out.class_capsules.value(), out.reconstruction.value(), out.mask_class};
}

}  // namespace timecaps
