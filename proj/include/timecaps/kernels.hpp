#pragma once

// Raw forward/backward numerics on Tensors. No tape; the differentiable
// wrappers in ops.hpp call into these.

#include <cstddef>
#include <string>

#include "timecaps/error.hpp"
#include "timecaps/tensor.hpp"

namespace timecaps {

enum class Pad { same, valid };

struct ConvGeometry {
  std::size_t out_len = 0;
  std::size_t pad_left = 0;
};

// Same padding: symmetric zeros, the odd extra sample goes on the right.
inline ConvGeometry conv_geometry(std::size_t len, std::size_t width, std::size_t stride, Pad pad) {
  if (stride == 0) throw ArgumentError("stride must be positive");
  if (width == 0) throw ShapeError("kernel width must be positive");
  if (pad == Pad::valid) {
    if (width > len) {
      throw ShapeError("kernel width " + std::to_string(width) + " exceeds input length " +
                       std::to_string(len));
    }
    return {(len - width) / stride + 1, 0};
  }
  const std::size_t out = (len + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + width;
  const std::size_t total = needed > len ? needed - len : 0;
  return {out, total / 2};
}

namespace kernels {

// in [L x Cin], k [Cout x g x Cin] -> [Lout x Cout]
inline Tensor conv1d(const Tensor& in, const Tensor& k, std::size_t stride, Pad pad) {
  if (in.rank() != 2 || k.rank() != 3) {
    throw ShapeError("conv1d expects input [L x Cin] and kernels [Cout x g x Cin], got " +
                     to_string(in.shape()) + " and " + to_string(k.shape()));
  }
  const std::size_t len = in.dim(0), cin = in.dim(1);
  const std::size_t cout = k.dim(0), width = k.dim(1);
  if (k.dim(2) != cin) {
    throw ShapeError("conv1d kernel channels " + std::to_string(k.dim(2)) + " != input channels " +
                     std::to_string(cin));
  }
  const auto geo = conv_geometry(len, width, stride, pad);
  Tensor out({geo.out_len, cout});
  const auto x = in.data();
  const auto w = k.data();
  auto y = out.data();
  for (std::size_t t = 0; t < geo.out_len; ++t) {
    for (std::size_t j = 0; j < width; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) -
                                 static_cast<std::ptrdiff_t>(geo.pad_left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      const double* xr = &x[static_cast<std::size_t>(src) * cin];
      for (std::size_t o = 0; o < cout; ++o) {
        const double* wr = &w[(o * width + j) * cin];
        double acc = 0.0;
        for (std::size_t c = 0; c < cin; ++c) acc += wr[c] * xr[c];
        y[t * cout + o] += acc;
      }
    }
  }
  return out;
}

// Accumulates into grad_in / grad_k when non-null.
inline void conv1d_backward(const Tensor& in, const Tensor& k, const Tensor& grad_out,
                            std::size_t stride, Pad pad, Tensor* grad_in, Tensor* grad_k) {
  const std::size_t len = in.dim(0), cin = in.dim(1);
  const std::size_t cout = k.dim(0), width = k.dim(1);
  const auto geo = conv_geometry(len, width, stride, pad);
  const auto x = in.data();
  const auto w = k.data();
  const auto gy = grad_out.data();
  for (std::size_t t = 0; t < geo.out_len; ++t) {
    for (std::size_t j = 0; j < width; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) -
                                 static_cast<std::ptrdiff_t>(geo.pad_left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      const std::size_t s = static_cast<std::size_t>(src);
      for (std::size_t o = 0; o < cout; ++o) {
        const double g = gy[t * cout + o];
        if (g == 0.0) continue;
        if (grad_in) {
          auto gx = grad_in->data();
          for (std::size_t c = 0; c < cin; ++c) gx[s * cin + c] += w[(o * width + j) * cin + c] * g;
        }
        if (grad_k) {
          auto gw = grad_k->data();
          for (std::size_t c = 0; c < cin; ++c) gw[(o * width + j) * cin + c] += x[s * cin + c] * g;
        }
      }
    }
  }
}

// Transposed convolution. in [Lin x Cin], k [Cin x g x Cout] -> [stride*(Lin-1)+g x Cout].
// The kernel uses the layout of the conv1d it is the adjoint of, so
// <conv1d(x, k, valid), y> == <x, deconv1d(y, k)>.
inline Tensor deconv1d(const Tensor& in, const Tensor& k, std::size_t stride) {
  if (stride == 0) throw ArgumentError("stride must be positive");
  if (in.rank() != 2 || k.rank() != 3) {
    throw ShapeError("deconv1d expects input [L x Cin] and kernels [Cin x g x Cout], got " +
                     to_string(in.shape()) + " and " + to_string(k.shape()));
  }
  const std::size_t lin = in.dim(0), cin = in.dim(1);
  const std::size_t width = k.dim(1), cout = k.dim(2);
  if (k.dim(0) != cin) {
    throw ShapeError("deconv1d kernel input channels " + std::to_string(k.dim(0)) +
                     " != input channels " + std::to_string(cin));
  }
  Tensor out({stride * (lin - 1) + width, cout});
  const auto x = in.data();
  const auto w = k.data();
  auto y = out.data();
  for (std::size_t t = 0; t < lin; ++t) {
    for (std::size_t c = 0; c < cin; ++c) {
      const double v = x[t * cin + c];
      if (v == 0.0) continue;
      for (std::size_t j = 0; j < width; ++j) {
        double* yr = &y[(t * stride + j) * cout];
        const double* wr = &w[(c * width + j) * cout];
        for (std::size_t o = 0; o < cout; ++o) yr[o] += wr[o] * v;
      }
    }
  }
  return out;
}

inline void deconv1d_backward(const Tensor& in, const Tensor& k, const Tensor& grad_out,
                              std::size_t stride, Tensor* grad_in, Tensor* grad_k) {
  const std::size_t lin = in.dim(0), cin = in.dim(1);
  const std::size_t width = k.dim(1), cout = k.dim(2);
  const auto x = in.data();
  const auto w = k.data();
  const auto gy = grad_out.data();
  for (std::size_t t = 0; t < lin; ++t) {
    for (std::size_t c = 0; c < cin; ++c) {
      double gacc = 0.0;
      const double v = x[t * cin + c];
      for (std::size_t j = 0; j < width; ++j) {
        const double* gr = &gy[(t * stride + j) * cout];
        const double* wr = &w[(c * width + j) * cout];
        for (std::size_t o = 0; o < cout; ++o) gacc += wr[o] * gr[o];
        if (grad_k) {
          auto gw = grad_k->data();
          for (std::size_t o = 0; o < cout; ++o) gw[(c * width + j) * cout + o] += v * gr[o];
        }
      }
      if (grad_in) grad_in->data()[t * cin + c] += gacc;
    }
  }
}

struct Conv2dGeometry {
  ConvGeometry rows;
  std::size_t out_cols = 0;
};

inline Conv2dGeometry conv2d_geometry(const Tensor& in, const Tensor& k, std::size_t stride_h,
                                      std::size_t stride_w) {
  if (in.rank() != 3 || in.dim(2) != 1 || k.rank() != 3) {
    throw ShapeError("conv2d expects input [H x W x 1] and kernels [Cout x gh x gw], got " +
                     to_string(in.shape()) + " and " + to_string(k.shape()));
  }
  if (stride_h == 0 || stride_w == 0) throw ArgumentError("stride must be positive");
  const std::size_t cols = in.dim(1), gw = k.dim(2);
  if (gw > cols) {
    throw ShapeError("conv2d kernel width " + std::to_string(gw) + " exceeds input width " +
                     std::to_string(cols));
  }
  if ((cols - gw) % stride_w != 0) {
    throw ShapeError("conv2d sweep (" + std::to_string(cols) + " - " + std::to_string(gw) +
                     ") is not divisible by stride " + std::to_string(stride_w));
  }
  return {conv_geometry(in.dim(0), k.dim(1), stride_h, Pad::same), (cols - gw) / stride_w + 1};
}

// in [H x W x 1], k [Cout x gh x gw]; same padding along H, valid along W.
// Output [Hout x Wout x Cout].
inline Tensor conv2d(const Tensor& in, const Tensor& k, std::size_t stride_h, std::size_t stride_w) {
  const auto geo = conv2d_geometry(in, k, stride_h, stride_w);
  const std::size_t rows = in.dim(0), cols = in.dim(1);
  const std::size_t cout = k.dim(0), gh = k.dim(1), gw = k.dim(2);
  Tensor out({geo.rows.out_len, geo.out_cols, cout});
  const auto x = in.data();
  const auto w = k.data();
  auto y = out.data();
  for (std::size_t h = 0; h < geo.rows.out_len; ++h) {
    for (std::size_t i = 0; i < gh; ++i) {
      const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(h * stride_h + i) -
                               static_cast<std::ptrdiff_t>(geo.rows.pad_left);
      if (r < 0 || r >= static_cast<std::ptrdiff_t>(rows)) continue;
      const double* xr = &x[static_cast<std::size_t>(r) * cols];
      for (std::size_t c = 0; c < geo.out_cols; ++c) {
        const double* xw = xr + c * stride_w;
        double* yr = &y[(h * geo.out_cols + c) * cout];
        for (std::size_t o = 0; o < cout; ++o) {
          const double* wr = &w[(o * gh + i) * gw];
          double acc = 0.0;
          for (std::size_t j = 0; j < gw; ++j) acc += wr[j] * xw[j];
          yr[o] += acc;
        }
      }
    }
  }
  return out;
}

inline void conv2d_backward(const Tensor& in, const Tensor& k, const Tensor& grad_out,
                            std::size_t stride_h, std::size_t stride_w, Tensor* grad_in,
                            Tensor* grad_k) {
  const auto geo = conv2d_geometry(in, k, stride_h, stride_w);
  const std::size_t rows = in.dim(0), cols = in.dim(1);
  const std::size_t cout = k.dim(0), gh = k.dim(1), gw = k.dim(2);
  const auto x = in.data();
  const auto w = k.data();
  const auto gy = grad_out.data();
  for (std::size_t h = 0; h < geo.rows.out_len; ++h) {
    for (std::size_t i = 0; i < gh; ++i) {
      const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(h * stride_h + i) -
                               static_cast<std::ptrdiff_t>(geo.rows.pad_left);
      if (r < 0 || r >= static_cast<std::ptrdiff_t>(rows)) continue;
      const std::size_t base = static_cast<std::size_t>(r) * cols;
      for (std::size_t c = 0; c < geo.out_cols; ++c) {
        const std::size_t xoff = base + c * stride_w;
        const double* gr = &gy[(h * geo.out_cols + c) * cout];
        for (std::size_t o = 0; o < cout; ++o) {
          const double g = gr[o];
          if (g == 0.0) continue;
          const std::size_t woff = (o * gh + i) * gw;
          if (grad_in) {
            auto gx = grad_in->data();
            for (std::size_t j = 0; j < gw; ++j) gx[xoff + j] += w[woff + j] * g;
          }
          if (grad_k) {
            auto gk = grad_k->data();
            for (std::size_t j = 0; j < gw; ++j) gk[woff + j] += x[xoff + j] * g;
          }
        }
      }
    }
  }
}

}  // namespace kernels
}  // namespace timecaps
