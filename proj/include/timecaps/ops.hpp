#pragma once

// Differentiable tensor operations recorded on a Graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "timecaps/error.hpp"
#include "timecaps/graph.hpp"
#include "timecaps/kernels.hpp"
#include "timecaps/tensor.hpp"

namespace timecaps::ops {

namespace detail {

inline void require_same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw ArgumentError("variables live on different graphs");
}

// b broadcasts only when it holds a single element.
inline bool broadcast_scalar(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return false;
  if (b.numel() == 1) return true;
  throw ShapeError("elementwise shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
}

inline std::vector<bool> axis_mask(std::size_t rank, const std::vector<std::size_t>& axes) {
  std::vector<bool> mask(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank) {
      throw ArgumentError("axis " + std::to_string(a) + " out of range for rank " + std::to_string(rank));
    }
    mask[a] = true;
  }
  return mask;
}

// For each input flat index, the flat index of the slot it reduces into.
struct ReduceMap {
  Shape out_shape;
  std::vector<std::size_t> target;
};

inline ReduceMap reduce_map(const Shape& shape, const std::vector<std::size_t>& axes, bool keepdims) {
  const auto mask = axis_mask(shape.size(), axes);
  Shape kept;
  for (std::size_t i = 0; i < shape.size(); ++i) kept.push_back(mask[i] ? 1 : shape[i]);
  const auto kept_strides = strides_of(kept);

  ReduceMap m;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (!mask[i]) m.out_shape.push_back(shape[i]);
    else if (keepdims) m.out_shape.push_back(1);
  }
  if (m.out_shape.empty()) m.out_shape.push_back(1);

  const std::size_t n = numel(shape);
  m.target.resize(n);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t t = 0;
    for (std::size_t a = 0; a < shape.size(); ++a) {
      if (!mask[a]) t += idx[a] * kept_strides[a];
    }
    m.target[flat] = t;
    for (std::size_t a = shape.size(); a-- > 0;) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Var add(Var a, Var b) {
  detail::require_same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool bc = detail::broadcast_scalar(x, y);
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bc ? y[0] : y[i];
  return a.graph->record(std::move(out), {a, b}, [a, b, bc](Graph& g, const Tensor& go) {
    g.accumulate(a, go);
    if (!bc) {
      g.accumulate(b, go);
    } else if (Tensor* gb = g.grad_buffer(b)) {
      for (double v : go.data()) (*gb)[0] += v;
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool bc = detail::broadcast_scalar(x, y);
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bc ? y[0] : y[i];
  return a.graph->record(std::move(out), {a, b}, [a, b, bc](Graph& g, const Tensor& go) {
    g.accumulate(a, go);
    if (Tensor* gb = g.grad_buffer(b)) {
      for (std::size_t i = 0; i < go.numel(); ++i) (*gb)[bc ? 0 : i] -= go[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool bc = detail::broadcast_scalar(x, y);
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bc ? y[0] : y[i];
  return a.graph->record(std::move(out), {a, b}, [a, b, bc](Graph& g, const Tensor& go) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (Tensor* ga = g.grad_buffer(a)) {
      for (std::size_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i] * (bc ? y[0] : y[i]);
    }
    if (Tensor* gb = g.grad_buffer(b)) {
      for (std::size_t i = 0; i < go.numel(); ++i) (*gb)[bc ? 0 : i] += go[i] * x[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return a.graph->record(std::move(out), {a}, [a, s](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_buffer(a)) {
      for (std::size_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i] * s;
    }
  });
}

// Multiplies by a fixed tensor (no gradient to the mask).
inline Var mul_const(Var a, const Tensor& mask) {
  if (mask.shape() != a.shape()) {
    throw ShapeError("mask " + to_string(mask.shape()) + " vs " + to_string(a.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return a.graph->record(std::move(out), {a}, [a, mask](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_buffer(a)) {
      for (std::size_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i] * mask[i];
    }
  });
}

inline Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::max(0.0, v);
  return a.graph->record(std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    const Tensor& x = a.value();
    if (Tensor* ga = g.grad_buffer(a)) {
      for (std::size_t i = 0; i < go.numel(); ++i) {
        if (x[i] > 0.0) (*ga)[i] += go[i];
      }
    }
  });
}

inline Var sigmoid(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  Tensor y = out;
  return a.graph->record(std::move(out), {a}, [a, y = std::move(y)](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_buffer(a)) {
      for (std::size_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i] * y[i] * (1.0 - y[i]);
    }
  });
}

// ------------------------------------------------------------------ reductions

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.graph->record(Tensor::scalar(s), {a}, [a](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_buffer(a)) {
      for (double& v : ga->data()) v += go[0];
    }
  });
}

inline Var sum(Var a, const std::vector<std::size_t>& axes, bool keepdims = false) {
  auto map = detail::reduce_map(a.shape(), axes, keepdims);
  Tensor out(map.out_shape);
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.numel(); ++i) out[map.target[i]] += x[i];
  return a.graph->record(std::move(out), {a}, [a, target = std::move(map.target)](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_buffer(a)) {
      for (std::size_t i = 0; i < target.size(); ++i) (*ga)[i] += go[target[i]];
    }
  });
}

// Gradient flows to the first maximal element of each group.
inline Var max(Var a, const std::vector<std::size_t>& axes, bool keepdims = false) {
  auto map = detail::reduce_map(a.shape(), axes, keepdims);
  const Tensor& x = a.value();
  Tensor out(map.out_shape, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> arg(out.numel(), 0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t t = map.target[i];
    if (x[i] > out[t]) {
      out[t] = x[i];
      arg[t] = i;
    }
  }
  return a.graph->record(std::move(out), {a}, [a, arg = std::move(arg)](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_buffer(a)) {
      for (std::size_t t = 0; t < arg.size(); ++t) (*ga)[arg[t]] += go[t];
    }
  });
}

inline Var max(Var a) {
  std::vector<std::size_t> all(a.shape().size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return max(a, all, false);
}

// -------------------------------------------------------------- index shuffles

inline Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph->record(std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    g.accumulate(a, go.reshaped(a.shape()));
  });
}

inline Var permute(Var a, const std::vector<std::size_t>& order) {
  const Shape& in_shape = a.shape();
  const std::size_t rank = in_shape.size();
  if (order.size() != rank) throw ArgumentError("permutation rank mismatch");
  std::vector<bool> seen(rank, false);
  for (std::size_t o : order) {
    if (o >= rank || seen[o]) throw ArgumentError("axis order is not a permutation");
    seen[o] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[order[i]];
  const auto in_strides = strides_of(in_shape);

  const std::size_t n = a.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < rank; ++i) s += idx[i] * in_strides[order[i]];
    src[flat] = s;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out(out_shape);
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < n; ++i) out[i] = x[src[i]];
  return a.graph->record(std::move(out), {a}, [a, src = std::move(src)](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_buffer(a)) {
      for (std::size_t i = 0; i < src.size(); ++i) (*ga)[src[i]] += go[i];
    }
  });
}

// Merges every axis except the trailing `keep_last` ones into a single axis.
inline Var flatten_leading(Var a, std::size_t keep_last) {
  const Shape& s = a.shape();
  if (keep_last >= s.size()) {
    throw ArgumentError("flatten_leading keep_last=" + std::to_string(keep_last) + " on rank " +
                        std::to_string(s.size()));
  }
  const std::size_t lead = s.size() - keep_last;
  Shape out{std::accumulate(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(lead), std::size_t{1},
                            std::multiplies<>())};
  out.insert(out.end(), s.begin() + static_cast<std::ptrdiff_t>(lead), s.end());
  return reshape(a, out);
}

// Stacks along axis 0; trailing extents must agree.
inline Var concat_rows(Var a, Var b) {
  detail::require_same_graph(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1)) {
    throw ShapeError("concat of " + to_string(sa) + " and " + to_string(sb));
  }
  Shape out_shape = sa;
  out_shape[0] += sb[0];
  std::vector<double> data;
  data.reserve(numel(out_shape));
  data.insert(data.end(), a.value().vec().begin(), a.value().vec().end());
  data.insert(data.end(), b.value().vec().begin(), b.value().vec().end());
  const std::size_t split = a.numel();
  return a.graph->record(Tensor(out_shape, std::move(data)), {a, b}, [a, b, split](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_buffer(a)) {
      for (std::size_t i = 0; i < split; ++i) (*ga)[i] += go[i];
    }
    if (Tensor* gb = g.grad_buffer(b)) {
      for (std::size_t i = split; i < go.numel(); ++i) (*gb)[i - split] += go[i];
    }
  });
}

// ------------------------------------------------------------------- softmax

// Normalizes over `axes`; max-subtracted per group.
inline Var softmax(Var a, const std::vector<std::size_t>& axes) {
  auto map = detail::reduce_map(a.shape(), axes, true);
  const Tensor& x = a.value();
  const std::size_t groups = numel(map.out_shape);
  std::vector<double> peak(groups, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < x.numel(); ++i) peak[map.target[i]] = std::max(peak[map.target[i]], x[i]);
  std::vector<double> denom(groups, 0.0);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    out[i] = std::exp(x[i] - peak[map.target[i]]);
    denom[map.target[i]] += out[i];
  }
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] /= denom[map.target[i]];
  Tensor y = out;
  return a.graph->record(std::move(out), {a},
                         [a, y = std::move(y), target = std::move(map.target), groups](Graph& g, const Tensor& go) {
                           Tensor* ga = g.grad_buffer(a);
                           if (!ga) return;
                           std::vector<double> inner(groups, 0.0);
                           for (std::size_t i = 0; i < y.numel(); ++i) inner[target[i]] += go[i] * y[i];
                           for (std::size_t i = 0; i < y.numel(); ++i) {
                             (*ga)[i] += y[i] * (go[i] - inner[target[i]]);
                           }
                         });
}

// -------------------------------------------------------------- convolutions

inline Var conv1d(Var input, Var kernels, std::size_t stride, Pad pad) {
  detail::require_same_graph(input, kernels);
  Tensor out = kernels::conv1d(input.value(), kernels.value(), stride, pad);
  return input.graph->record(std::move(out), {input, kernels},
                             [input, kernels, stride, pad](Graph& g, const Tensor& go) {
                               kernels::conv1d_backward(input.value(), kernels.value(), go, stride, pad,
                                                        g.grad_buffer(input), g.grad_buffer(kernels));
                             });
}

inline Var conv2d(Var input, Var kernels, std::size_t stride_h, std::size_t stride_w) {
  detail::require_same_graph(input, kernels);
  Tensor out = kernels::conv2d(input.value(), kernels.value(), stride_h, stride_w);
  return input.graph->record(std::move(out), {input, kernels},
                             [input, kernels, stride_h, stride_w](Graph& g, const Tensor& go) {
                               kernels::conv2d_backward(input.value(), kernels.value(), go, stride_h,
                                                        stride_w, g.grad_buffer(input),
                                                        g.grad_buffer(kernels));
                             });
}

inline Var deconv1d(Var input, Var kernels, std::size_t stride) {
  detail::require_same_graph(input, kernels);
  Tensor out = kernels::deconv1d(input.value(), kernels.value(), stride);
  return input.graph->record(std::move(out), {input, kernels},
                             [input, kernels, stride](Graph& g, const Tensor& go) {
                               kernels::deconv1d_backward(input.value(), kernels.value(), go, stride,
                                                          g.grad_buffer(input), g.grad_buffer(kernels));
                             });
}

// Adds bias[c] along the trailing axis.
inline Var add_bias(Var x, Var bias) {
  detail::require_same_graph(x, bias);
  const std::size_t c = bias.numel();
  if (bias.shape().size() != 1 || x.shape().back() != c) {
    throw ShapeError("bias " + to_string(bias.shape()) + " for input " + to_string(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bias.value()[i % c];
  return x.graph->record(std::move(out), {x, bias}, [x, bias, c](Graph& g, const Tensor& go) {
    g.accumulate(x, go);
    if (Tensor* gb = g.grad_buffer(bias)) {
      for (std::size_t i = 0; i < go.numel(); ++i) (*gb)[i % c] += go[i];
    }
  });
}

// y = W x + b with x [in], W [out x in], b [out].
inline Var linear(Var x, Var weight, Var bias) {
  detail::require_same_graph(x, weight);
  detail::require_same_graph(x, bias);
  const Tensor& xv = x.value();
  const Tensor& w = weight.value();
  if (xv.rank() != 1 || w.rank() != 2 || w.dim(1) != xv.dim(0) || bias.numel() != w.dim(0)) {
    throw ShapeError("linear with x " + to_string(xv.shape()) + ", W " + to_string(w.shape()) + ", b " +
                     to_string(bias.shape()));
  }
  const std::size_t n_out = w.dim(0), n_in = w.dim(1);
  Tensor out = bias.value();
  for (std::size_t o = 0; o < n_out; ++o) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n_in; ++i) acc += w[o * n_in + i] * xv[i];
    out[o] += acc;
  }
  return x.graph->record(std::move(out), {x, weight, bias},
                         [x, weight, bias, n_out, n_in](Graph& g, const Tensor& go) {
                           g.accumulate(bias, go);
                           const Tensor& xv = x.value();
                           const Tensor& w = weight.value();
                           if (Tensor* gw = g.grad_buffer(weight)) {
                             for (std::size_t o = 0; o < n_out; ++o) {
                               if (go[o] == 0.0) continue;
                               for (std::size_t i = 0; i < n_in; ++i) (*gw)[o * n_in + i] += go[o] * xv[i];
                             }
                           }
                           if (Tensor* gx = g.grad_buffer(x)) {
                             for (std::size_t o = 0; o < n_out; ++o) {
                               if (go[o] == 0.0) continue;
                               for (std::size_t i = 0; i < n_in; ++i) (*gx)[i] += go[o] * w[o * n_in + i];
                             }
                           }
                         });
}

}  // namespace timecaps::ops
