#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "noc/tensor.hpp"

namespace noc {

/// 2-D cross-correlation parameters. The kernel is Cout x Cin x Kh x Kw and the
/// bias has Cout entries. Effective kernel extent is (k - 1) * dilation + 1.
struct ConvParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  Tensor kernel;
  Tensor bias;

  std::size_t out_channels() const { return kernel.dim(0); }
  std::size_t in_channels() const { return kernel.dim(1); }
  std::size_t kernel_h() const { return kernel.dim(2); }
  std::size_t kernel_w() const { return kernel.dim(3); }
};

/// Gradients of a parametric layer; each shape mirrors its forward operand.
struct LayerGrad {
  Tensor d_input;
  Tensor d_weights;
  Tensor d_bias;
};

/// floor((in + 2 * padding - effective_extent) / stride) + 1; throws ShapeError
/// naming `dim_name` if the result would be < 1.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding, std::size_t dilation, const char* dim_name);

Tensor conv2d_forward(const Tensor& input, const ConvParams& p);
LayerGrad conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& d_output);

/// Affine map over the row-major flattening of `input`. Weights are Out x In.
Tensor fc_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
LayerGrad fc_backward(const Tensor& input, const Tensor& weights, const Tensor& d_output);

Tensor relu(const Tensor& input);
/// Subgradient at exactly 0 is 0.
Tensor relu_backward(const Tensor& input, const Tensor& d_output);

struct XentResult {
  double loss = 0.0;
  Tensor d_logits;
};

/// Max-subtracted softmax cross-entropy; d_logits = softmax(logits) - onehot(label).
XentResult softmax_xent(const Tensor& logits, std::size_t label);
std::vector<double> softmax(const Tensor& logits);

Tensor elementwise_max(const Tensor& a, const Tensor& b);

/// Routes each gradient entry to the operand that won the max; ties go to `a`.
std::pair<Tensor, Tensor> elementwise_max_backward(const Tensor& a, const Tensor& b,
                                                   const Tensor& d_output);

struct PoolResult {
  Tensor output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// Unpadded max pooling with square window; window taps are `dilation` apart.
/// Ties inside a window resolve to the smallest flat index.
PoolResult maxpool2d_forward(const Tensor& input, std::size_t kernel, std::size_t stride,
                             std::size_t dilation = 1);
Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                          const Tensor& d_output);

}  // namespace noc
