#pragma once

// Capsule mathematics: squash, capsule length, block routing by agreement and
// the two training losses.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "timecaps/error.hpp"
#include "timecaps/graph.hpp"
#include "timecaps/ops.hpp"
#include "timecaps/tensor.hpp"

namespace timecaps {

struct LossParams {
  double m_plus = 0.9;
  double m_minus = 0.1;
  double lambda = 0.5;

  void validate() const {
    if (!(0.0 < m_minus && m_minus < m_plus && m_plus <= 1.0)) {
      throw ConfigError("margins must satisfy 0 < m_minus < m_plus <= 1");
    }
    if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in (0, 1]");
  }
};

// Axis over which routing logits are softmax-normalized. `parents` makes
// each child block distribute its vote among the R parents; `blocks` makes
// each parent average over its S child blocks.
enum class RoutingNorm { parents, blocks };

inline RoutingNorm parse_routing_norm(const std::string& s) {
  if (s == "parents") return RoutingNorm::parents;
  if (s == "blocks") return RoutingNorm::blocks;
  throw ConfigError("unknown routing normalization '" + s + "' (expected parents or blocks)");
}

inline std::string to_string(RoutingNorm n) { return n == RoutingNorm::parents ? "parents" : "blocks"; }

inline std::size_t routing_axis(RoutingNorm n) { return n == RoutingNorm::parents ? 1 : 2; }

// Snapshot of every routing iteration, for inspection and tests.
struct RoutingState {
  Tensor votes;                       // [P x R x S x D]
  std::vector<Tensor> logits;         // B entering each iteration, [P x R x S]
  std::vector<Tensor> couplings;      // softmax(B) over the normalized axis
  std::vector<Tensor> weighted_sums;  // S before squash, [P x R x D]
  std::vector<Tensor> squashed;       // squash(S)
  int iterations = 0;
};

namespace capsule_detail {

struct AxisSplit {
  std::size_t outer = 1, dim = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw ArgumentError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.dim = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

inline void check_votes(const Tensor& v) {
  if (v.rank() != 4) throw ShapeError("votes must be [P x R x S x D], got " + to_string(v.shape()));
}

}  // namespace capsule_detail

// v -> (|v|^2 / (1 + |v|^2)) * v / |v| along `axis`; zero maps to zero.
inline Var squash(Var t, std::size_t axis) {
  const auto sp = capsule_detail::split_axis(t.shape(), axis);
  const Tensor& x = t.value();
  Tensor out(x.shape());
  std::vector<double> norms(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.dim * sp.inner + i;
      double sq = 0.0;
      for (std::size_t d = 0; d < sp.dim; ++d) sq += x[base + d * sp.inner] * x[base + d * sp.inner];
      const double n = std::sqrt(sq);
      norms[o * sp.inner + i] = n;
      const double f = n / (1.0 + sq);
      for (std::size_t d = 0; d < sp.dim; ++d) out[base + d * sp.inner] = f * x[base + d * sp.inner];
    }
  }
  return t.graph->record(std::move(out), {t}, [t, sp, norms = std::move(norms)](Graph& g, const Tensor& go) {
    Tensor* gt = g.grad_buffer(t);
    if (!gt) return;
    const Tensor& x = t.value();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.dim * sp.inner + i;
        const double n = norms[o * sp.inner + i];
        const double sq = n * n;
        const double f = n / (1.0 + sq);
        // d(f(n) v)/dv = f I + f'(n)/n v v^T, f'(n) = (1 - n^2) / (1 + n^2)^2
        double radial = 0.0;
        if (n > 0.0) {
          double gv = 0.0;
          for (std::size_t d = 0; d < sp.dim; ++d) gv += go[base + d * sp.inner] * x[base + d * sp.inner];
          radial = (1.0 - sq) / ((1.0 + sq) * (1.0 + sq) * n) * gv;
        }
        for (std::size_t d = 0; d < sp.dim; ++d) {
          const std::size_t k = base + d * sp.inner;
          (*gt)[k] += f * go[k] + radial * x[k];
        }
      }
    }
  });
}

// Euclidean norm along `axis` (axis removed). Gradient at the zero vector is taken as 0.
inline Var capsule_length(Var t, std::size_t axis) {
  const auto sp = capsule_detail::split_axis(t.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < t.shape().size(); ++i) {
    if (i != axis) out_shape.push_back(t.shape()[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  const Tensor& x = t.value();
  Tensor out(out_shape);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.dim * sp.inner + i;
      double sq = 0.0;
      for (std::size_t d = 0; d < sp.dim; ++d) sq += x[base + d * sp.inner] * x[base + d * sp.inner];
      out[o * sp.inner + i] = std::sqrt(sq);
    }
  }
  Tensor lengths = out;
  return t.graph->record(std::move(out), {t}, [t, sp, lengths = std::move(lengths)](Graph& g, const Tensor& go) {
    Tensor* gt = g.grad_buffer(t);
    if (!gt) return;
    const Tensor& x = t.value();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const double n = lengths[o * sp.inner + i];
        if (n == 0.0) continue;
        const double c = go[o * sp.inner + i] / n;
        const std::size_t base = o * sp.dim * sp.inner + i;
        for (std::size_t d = 0; d < sp.dim; ++d) (*gt)[base + d * sp.inner] += c * x[base + d * sp.inner];
      }
    }
  });
}

// S[p,r,:] = sum_s K[p,r,s] * V[p,r,s,:]
inline Var weighted_votes(Var couplings, Var votes) {
  const Tensor& k = couplings.value();
  const Tensor& v = votes.value();
  capsule_detail::check_votes(v);
  const std::size_t P = v.dim(0), R = v.dim(1), S = v.dim(2), D = v.dim(3);
  if (k.shape() != Shape{P, R, S}) {
    throw ShapeError("couplings " + to_string(k.shape()) + " for votes " + to_string(v.shape()));
  }
  Tensor out({P, R, D});
  for (std::size_t pr = 0; pr < P * R; ++pr) {
    for (std::size_t s = 0; s < S; ++s) {
      const double c = k[pr * S + s];
      const double* vr = &v.data()[(pr * S + s) * D];
      for (std::size_t d = 0; d < D; ++d) out[pr * D + d] += c * vr[d];
    }
  }
  return votes.graph->record(std::move(out), {couplings, votes},
                             [couplings, votes, P, R, S, D](Graph& g, const Tensor& go) {
                               const Tensor& k = couplings.value();
                               const Tensor& v = votes.value();
                               Tensor* gk = g.grad_buffer(couplings);
                               Tensor* gv = g.grad_buffer(votes);
                               for (std::size_t pr = 0; pr < P * R; ++pr) {
                                 for (std::size_t s = 0; s < S; ++s) {
                                   const std::size_t vb = (pr * S + s) * D;
                                   double acc = 0.0;
                                   for (std::size_t d = 0; d < D; ++d) {
                                     acc += go[pr * D + d] * v[vb + d];
                                     if (gv) (*gv)[vb + d] += k[pr * S + s] * go[pr * D + d];
                                   }
                                   if (gk) (*gk)[pr * S + s] += acc;
                                 }
                               }
                             });
}

// A[p,r,s] = <S_hat[p,r,:], V[p,r,s,:]>
inline Var agreement(Var squashed, Var votes) {
  const Tensor& sh = squashed.value();
  const Tensor& v = votes.value();
  capsule_detail::check_votes(v);
  const std::size_t P = v.dim(0), R = v.dim(1), S = v.dim(2), D = v.dim(3);
  if (sh.shape() != Shape{P, R, D}) {
    throw ShapeError("parent capsules " + to_string(sh.shape()) + " for votes " + to_string(v.shape()));
  }
  Tensor out({P, R, S});
  for (std::size_t pr = 0; pr < P * R; ++pr) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = 0.0;
      for (std::size_t d = 0; d < D; ++d) acc += sh[pr * D + d] * v[(pr * S + s) * D + d];
      out[pr * S + s] = acc;
    }
  }
  return votes.graph->record(std::move(out), {squashed, votes},
                             [squashed, votes, P, R, S, D](Graph& g, const Tensor& go) {
                               const Tensor& sh = squashed.value();
                               const Tensor& v = votes.value();
                               Tensor* gs = g.grad_buffer(squashed);
                               Tensor* gv = g.grad_buffer(votes);
                               for (std::size_t pr = 0; pr < P * R; ++pr) {
                                 for (std::size_t s = 0; s < S; ++s) {
                                   const double c = go[pr * S + s];
                                   const std::size_t vb = (pr * S + s) * D;
                                   for (std::size_t d = 0; d < D; ++d) {
                                     if (gs) (*gs)[pr * D + d] += c * v[vb + d];
                                     if (gv) (*gv)[vb + d] += c * sh[pr * D + d];
                                   }
                                 }
                               }
                             });
}

// Routes blocks of child votes to parents. votes: [P x R x S x D] where R
// indexes parents and S the routed block; returns squashed parents [P x R x D].
// Per iteration: K = softmax(B); S = sum_s K V; S_hat = squash(S);
// B += <S_hat, V>. Logits start at zero and the whole loop stays on the tape.
inline Var dynamic_routing(Var votes, int iterations, RoutingNorm norm = RoutingNorm::parents,
                           RoutingState* state = nullptr) {
  if (iterations < 1) throw ArgumentError("routing needs at least one iteration");
  capsule_detail::check_votes(votes.value());
  const Shape& vs = votes.shape();
  Graph& g = *votes.graph;
  Var logits = g.constant(Tensor({vs[0], vs[1], vs[2]}));
  if (state) {
    *state = RoutingState{};
    state->votes = votes.value();
    state->iterations = iterations;
  }
  Var parents{};
  for (int it = 0; it < iterations; ++it) {
    Var k = ops::softmax(logits, {routing_axis(norm)});
    Var s = weighted_votes(k, votes);
    parents = squash(s, 2);
    if (state) {
      state->logits.push_back(logits.value());
      state->couplings.push_back(k.value());
      state->weighted_sums.push_back(s.value());
      state->squashed.push_back(parents.value());
    }
    if (it + 1 < iterations) logits = ops::add(logits, agreement(parents, votes));
  }
  return parents;
}

// sum_k T_k max(0, m+ - |v_k|)^2 + lambda (1 - T_k) max(0, |v_k| - m-)^2
inline Var margin_loss(Var lengths, std::size_t true_class, const LossParams& p = {}) {
  const Tensor& l = lengths.value();
  if (true_class >= l.numel()) {
    throw ArgumentError("class index " + std::to_string(true_class) + " out of range for " +
                        std::to_string(l.numel()) + " classes");
  }
  double loss = 0.0;
  Tensor dl(l.shape());
  for (std::size_t k = 0; k < l.numel(); ++k) {
    if (k == true_class) {
      const double h = std::max(0.0, p.m_plus - l[k]);
      loss += h * h;
      dl[k] = -2.0 * h;
    } else {
      const double h = std::max(0.0, l[k] - p.m_minus);
      loss += p.lambda * h * h;
      dl[k] = 2.0 * p.lambda * h;
    }
  }
  return lengths.graph->record(Tensor::scalar(loss), {lengths}, [lengths, dl = std::move(dl)](Graph& g, const Tensor& go) {
    if (Tensor* gl = g.grad_buffer(lengths)) {
      for (std::size_t k = 0; k < dl.numel(); ++k) (*gl)[k] += go[0] * dl[k];
    }
  });
}

inline Var mse_loss(Var reconstruction, Var target) {
  const Tensor& r = reconstruction.value();
  const Tensor& t = target.value();
  if (r.shape() != t.shape()) {
    throw ShapeError("mse of " + to_string(r.shape()) + " vs " + to_string(t.shape()));
  }
  const double n = static_cast<double>(r.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < r.numel(); ++i) acc += (r[i] - t[i]) * (r[i] - t[i]);
  return reconstruction.graph->record(Tensor::scalar(acc / n), {reconstruction, target},
                                      [reconstruction, target, n](Graph& g, const Tensor& go) {
                                        const Tensor& r = reconstruction.value();
                                        const Tensor& t = target.value();
                                        const double c = 2.0 * go[0] / n;
                                        if (Tensor* gr = g.grad_buffer(reconstruction)) {
                                          for (std::size_t i = 0; i < r.numel(); ++i) (*gr)[i] += c * (r[i] - t[i]);
                                        }
                                        if (Tensor* gt = g.grad_buffer(target)) {
                                          for (std::size_t i = 0; i < r.numel(); ++i) (*gt)[i] -= c * (r[i] - t[i]);
                                        }
                                      });
}

// Tape-free conveniences.

inline Tensor squash(const Tensor& t, std::size_t axis) {
  Graph g(false);
  return squash(g.constant(t), axis).value();
}

inline Tensor capsule_length(const Tensor& t, std::size_t axis) {
  Graph g(false);
  return capsule_length(g.constant(t), axis).value();
}

inline Tensor dynamic_routing(const Tensor& votes, int iterations, RoutingNorm norm = RoutingNorm::parents,
                              RoutingState* state = nullptr) {
  Graph g(false);
  return dynamic_routing(g.constant(votes), iterations, norm, state).value();
}

inline double margin_loss(const Tensor& lengths, std::size_t true_class, const LossParams& p = {}) {
  Graph g(false);
  return margin_loss(g.constant(lengths), true_class, p).value().item();
}

inline double mse_loss(const Tensor& reconstruction, const Tensor& target) {
  Graph g(false);
  return mse_loss(g.constant(reconstruction), g.constant(target)).value().item();
}

}  // namespace timecaps
