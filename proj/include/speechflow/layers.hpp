#pragma once

#include <span>

#include "speechflow/rng.hpp"
#include "speechflow/tensor.hpp"

namespace speechflow {

// Output of one invertible layer together with its log|det J|.
struct LayerOutput {
  Tensor y;
  double logdet = 0.0;
};

// y = exp(log_scale) * x + bias, per channel.
struct ActNormParams {
  Tensor log_scale;
  Tensor bias;
  bool initialized = false;

  static ActNormParams identity(std::size_t channels);
};

// Sets bias/log_scale so the batch has per-channel mean 0 and variance 1.
void actnorm_initialize(ActNormParams& p, std::span<const Tensor> batch);
LayerOutput actnorm_forward(const ActNormParams& p, const Tensor& x);
Tensor actnorm_inverse(const ActNormParams& p, const Tensor& y);
// Returns dL/dx and accumulates parameter gradients into grads.
Tensor actnorm_backward(const ActNormParams& p, const Tensor& x, const Tensor& grad_y, double grad_logdet,
                        ActNormParams& grads);

// y[:, i, j] = W x[:, i, j].
struct InvConvParams {
  Tensor weight;

  static InvConvParams identity(std::size_t channels);
  static InvConvParams random_orthogonal(std::size_t channels, Rng& rng);
};

LayerOutput invconv_forward(const InvConvParams& p, const Tensor& x);
Tensor invconv_inverse(const InvConvParams& p, const Tensor& y);
Tensor invconv_backward(const InvConvParams& p, const Tensor& x, const Tensor& grad_y, double grad_logdet,
                        InvConvParams& grads);

// Affine coupling. The first half of the channels conditions a small conv
// net (3x3 -> ReLU -> 3x3 -> ReLU -> 3x3) whose output holds a shift for each
// channel of the second half followed by a raw scale; the applied scale is
// exp(2 tanh(raw)).
struct CouplingParams {
  Tensor w1, b1, w2, b2, w3, b3;

  // Hidden layers random, output layer zero: the identity map.
  static CouplingParams zero_output(std::size_t channels, std::size_t width, Rng& rng);
};

struct CouplingCache {
  Tensor h1;  // post-ReLU activations
  Tensor h2;
  Tensor net_out;
};

LayerOutput coupling_forward(const CouplingParams& p, const Tensor& x, CouplingCache* cache = nullptr);
Tensor coupling_inverse(const CouplingParams& p, const Tensor& y);
Tensor coupling_backward(const CouplingParams& p, const Tensor& x, const CouplingCache& cache,
                         const Tensor& grad_y, double grad_logdet, CouplingParams& grads);

// 2x2 spatial blocks to channels: y[4c + 2di + dj, i, j] = x[c, 2i + di, 2j + dj].
Tensor squeeze(const Tensor& x);
Tensor unsqueeze(const Tensor& y);

// Channel slicing helpers: [0, first) and [first, C).
std::pair<Tensor, Tensor> split_channels(const Tensor& x, std::size_t first);
Tensor concat_channels(const Tensor& a, const Tensor& b);

}  // namespace speechflow
