#pragma once

#include "speechflow/tensor.hpp"

namespace speechflow {

// "Same"-padded 2-d cross-correlation: x is C x H x W, kernel is
// O x C x kh x kw with odd kh, kw, bias has O entries.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

struct Conv2dGrads {
  Tensor x;
  Tensor kernel;
  Tensor bias;
};

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& x, const Tensor& kernel);

// Accumulating variants used by the flow layers; grad_kernel and grad_bias
// are added to, grad_x is overwritten when non-null.
void conv2d_backward_accumulate(const Tensor& grad_out, const Tensor& x, const Tensor& kernel,
                                Tensor* grad_x, Tensor& grad_kernel, Tensor& grad_bias);

}  // namespace speechflow
