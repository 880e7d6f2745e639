#include "noc/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

namespace noc {

namespace {

using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapF = Eigen::Map<RowMajorF>;
using ConstMapF = Eigen::Map<const RowMajorF>;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* operand) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": " + operand + " must have rank " + std::to_string(rank) +
                     ", got shape " + shape_string(t.shape()));
}

struct ConvGeometry {
  std::size_t cin, h, w, cout, kh, kw, oh, ow;
};

ConvGeometry conv_geometry(const Tensor& input, const ConvParams& p) {
  require_rank(input, 3, "conv2d", "input");
  require_rank(p.kernel, 4, "conv2d", "kernel");
  if (p.stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (p.dilation < 1) throw ShapeError("conv2d: dilation must be >= 1");
  ConvGeometry g{};
  g.cin = input.dim(0);
  g.h = input.dim(1);
  g.w = input.dim(2);
  g.cout = p.kernel.dim(0);
  g.kh = p.kernel.dim(2);
  g.kw = p.kernel.dim(3);
  if (p.kernel.dim(1) != g.cin)
    throw ShapeError("conv2d: input channels " + std::to_string(g.cin) + " but kernel expects " +
                     std::to_string(p.kernel.dim(1)));
  if (p.bias.rank() != 1 || p.bias.dim(0) != g.cout)
    throw ShapeError("conv2d: bias shape " + shape_string(p.bias.shape()) + " but output channels " +
                     std::to_string(g.cout));
  g.oh = conv_output_extent(g.h, g.kh, p.stride, p.padding, p.dilation, "height");
  g.ow = conv_output_extent(g.w, g.kw, p.stride, p.padding, p.dilation, "width");
  return g;
}

// Column matrix: row k = (ci, ky, kx), column = output pixel. Out-of-bounds taps are 0.
std::vector<float> im2col(const Tensor& input, const ConvParams& p, const ConvGeometry& g) {
  const std::size_t npix = g.oh * g.ow;
  std::vector<float> col(g.cin * g.kh * g.kw * npix, 0.0f);
  const auto in = input.data();
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
        float* dst = col.data() + row * npix;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * p.stride + ky * p.dilation) -
                          static_cast<std::ptrdiff_t>(p.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          const float* src = in.data() + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * p.stride + kx * p.dilation) -
                            static_cast<std::ptrdiff_t>(p.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dst[oy * g.ow + ox] = src[ix];
          }
        }
      }
    }
  }
  return col;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding, std::size_t dilation, const char* dim_name) {
  const std::size_t effective = (kernel - 1) * dilation + 1;
  const std::size_t padded = in + 2 * padding;
  if (kernel == 0 || padded < effective)
    throw ShapeError(std::string("conv2d: ") + dim_name + " extent " + std::to_string(in) +
                     " (padding " + std::to_string(padding) + ") is smaller than the effective kernel extent " +
                     std::to_string(effective));
  return (padded - effective) / stride + 1;
}

Tensor conv2d_forward(const Tensor& input, const ConvParams& p) {
  const ConvGeometry g = conv_geometry(input, p);
  const std::size_t npix = g.oh * g.ow;
  const std::size_t krows = g.cin * g.kh * g.kw;
  const std::vector<float> col = im2col(input, p, g);
  const auto kernel = p.kernel.data();

  const RowMajorF acc = RowMajorF::Map(kernel.data(), g.cout, krows) * ConstMapF(col.data(), krows, npix);
  Tensor out({g.cout, g.oh, g.ow});
  float* dst = out.data().data();
  for (std::size_t co = 0; co < g.cout; ++co) {
    const float b = p.bias[co];
    for (std::size_t i = 0; i < npix; ++i) dst[co * npix + i] = acc(co, i) + b;
  }
  return out;
}

LayerGrad conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& d_output) {
  const ConvGeometry g = conv_geometry(input, p);
  if (d_output.shape() != Shape{g.cout, g.oh, g.ow})
    throw ShapeError("conv2d_backward: d_output shape " + shape_string(d_output.shape()) +
                     " but forward output is " + shape_string({g.cout, g.oh, g.ow}));
  const std::size_t npix = g.oh * g.ow;
  const std::size_t krows = g.cin * g.kh * g.kw;
  const std::vector<float> col = im2col(input, p, g);
  const auto kernel = p.kernel.data();

  const auto w = RowMajorF::Map(kernel.data(), g.cout, krows);
  const auto dout = RowMajorF::Map(d_output.data().data(), g.cout, npix);
  const ConstMapF colm(col.data(), krows, npix);

  LayerGrad grad;
  grad.d_weights = Tensor(p.kernel.shape());
  grad.d_bias = Tensor(p.bias.shape());
  const RowMajorF dw = dout * colm.transpose();
  float* dwp = grad.d_weights.data().data();
  for (std::size_t co = 0; co < g.cout; ++co) {
    grad.d_bias[co] = static_cast<float>(dout.row(co).template cast<double>().sum());
    for (std::size_t k = 0; k < krows; ++k) dwp[co * krows + k] = static_cast<float>(dw(co, k));
  }
  std::vector<float> dcol(krows * npix, 0.0f);
  MapF(dcol.data(), krows, npix).noalias() = w.transpose() * dout;

  // col2im
  std::vector<double> din(g.cin * g.h * g.w, 0.0);
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
        const float* src = dcol.data() + row * npix;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * p.stride + ky * p.dilation) -
                          static_cast<std::ptrdiff_t>(p.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = din.data() + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * p.stride + kx * p.dilation) -
                            static_cast<std::ptrdiff_t>(p.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dst[ix] += src[oy * g.ow + ox];
          }
        }
      }
    }
  }
  grad.d_input = Tensor(input.shape());
  for (std::size_t i = 0; i < din.size(); ++i) grad.d_input[i] = static_cast<float>(din[i]);
  return grad;
}

Tensor fc_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank(weights, 2, "fc", "weights");
  const std::size_t out_dim = weights.dim(0);
  const std::size_t in_dim = weights.dim(1);
  if (input.size() != in_dim)
    throw ShapeError("fc: input length " + std::to_string(input.size()) + " but weights expect " +
                     std::to_string(in_dim));
  if (bias.rank() != 1 || bias.dim(0) != out_dim)
    throw ShapeError("fc: bias shape " + shape_string(bias.shape()) + " but output width " +
                     std::to_string(out_dim));
  Tensor out({out_dim});
  Eigen::Map<Eigen::VectorXf> y(out.data().data(), static_cast<Eigen::Index>(out_dim));
  y.noalias() = RowMajorF::Map(weights.data().data(), out_dim, in_dim) *
                Eigen::Map<const Eigen::VectorXf>(input.data().data(), static_cast<Eigen::Index>(in_dim));
  y += Eigen::Map<const Eigen::VectorXf>(bias.data().data(), static_cast<Eigen::Index>(out_dim));
  return out;
}

LayerGrad fc_backward(const Tensor& input, const Tensor& weights, const Tensor& d_output) {
  require_rank(weights, 2, "fc_backward", "weights");
  const std::size_t out_dim = weights.dim(0);
  const std::size_t in_dim = weights.dim(1);
  if (input.size() != in_dim)
    throw ShapeError("fc_backward: input length " + std::to_string(input.size()) + " but weights expect " +
                     std::to_string(in_dim));
  if (d_output.size() != out_dim)
    throw ShapeError("fc_backward: d_output length " + std::to_string(d_output.size()) +
                     " but output width " + std::to_string(out_dim));
  using VecMap = Eigen::Map<const Eigen::VectorXf>;
  const auto in = static_cast<Eigen::Index>(in_dim), out = static_cast<Eigen::Index>(out_dim);
  const VecMap x(input.data().data(), in), d(d_output.data().data(), out);
  LayerGrad g;
  g.d_weights = Tensor(weights.shape());
  g.d_bias = Tensor({out_dim});
  Eigen::Map<RowMajorF>(g.d_weights.data().data(), out, in).noalias() = d * x.transpose();
  Eigen::Map<Eigen::VectorXf>(g.d_bias.data().data(), out) = d;
  g.d_input = Tensor(input.shape());
  Eigen::Map<Eigen::VectorXf>(g.d_input.data().data(), in).noalias() =
      RowMajorF::Map(weights.data().data(), out_dim, in_dim).transpose() * d;
  return g;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0f ? input[i] : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& d_output) {
  require_same_shape(input, d_output, "relu_backward");
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0f ? d_output[i] : 0.0f;
  return out;
}

std::vector<double> softmax(const Tensor& logits) {
  if (logits.empty()) throw ShapeError("softmax: empty logits");
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : logits.data()) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

XentResult softmax_xent(const Tensor& logits, std::size_t label) {
  if (label >= logits.size())
    throw std::out_of_range("softmax_xent: label " + std::to_string(label) + " outside [0, " +
                            std::to_string(logits.size()) + ")");
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : logits.data()) mx = std::max(mx, static_cast<double>(v));
  double z = 0.0;
  for (float v : logits.data()) z += std::exp(static_cast<double>(v) - mx);
  const double log_z = std::log(z) + mx;
  XentResult r;
  r.loss = log_z - static_cast<double>(logits[label]);
  r.d_logits = Tensor(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double pi = std::exp(static_cast<double>(logits[i]) - log_z);
    if (i == label) pi -= 1.0;
    r.d_logits[i] = static_cast<float>(pi);
  }
  return r;
}

Tensor elementwise_max(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise_max");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] >= b[i] ? a[i] : b[i];
  return out;
}

std::pair<Tensor, Tensor> elementwise_max_backward(const Tensor& a, const Tensor& b, const Tensor& d_output) {
  require_same_shape(a, b, "elementwise_max_backward");
  require_same_shape(a, d_output, "elementwise_max_backward");
  Tensor da(a.shape()), db(b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] >= b[i])
      da[i] = d_output[i];
    else
      db[i] = d_output[i];
  }
  return {std::move(da), std::move(db)};
}

PoolResult maxpool2d_forward(const Tensor& input, std::size_t kernel, std::size_t stride, std::size_t dilation) {
  require_rank(input, 3, "maxpool2d", "input");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t oh = conv_output_extent(h, kernel, stride, 0, dilation, "height");
  const std::size_t ow = conv_output_extent(w, kernel, stride, 0, dilation, "width");
  PoolResult r;
  r.output = Tensor({c, oh, ow});
  r.argmax.resize(c * oh * ow);
  const auto in = input.data();
  std::size_t o = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        float best = -std::numeric_limits<float>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t y = oy * stride + ky * dilation;
            const std::size_t x = ox * stride + kx * dilation;
            const std::size_t idx = (ch * h + y) * w + x;
            if (in[idx] > best || (in[idx] == best && idx < best_idx)) {
              best = in[idx];
              best_idx = idx;
            }
          }
        }
        r.output[o] = best;
        r.argmax[o] = static_cast<std::uint32_t>(best_idx);
      }
    }
  }
  return r;
}

Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                          const Tensor& d_output) {
  if (argmax.size() != d_output.size())
    throw ShapeError("maxpool2d_backward: d_output has " + std::to_string(d_output.size()) +
                     " elements but argmax has " + std::to_string(argmax.size()));
  Tensor d_input(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) d_input[argmax[i]] += d_output[i];
  return d_input;
}

}  // namespace noc
