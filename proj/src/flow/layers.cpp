#include "speechflow/layers.hpp"

#include <cmath>

#include "speechflow/conv.hpp"
#include "speechflow/error.hpp"
#include "speechflow/linalg.hpp"

namespace speechflow {

namespace {

void require_chw(const Tensor& x, std::size_t channels, const char* context) {
  if (x.rank() != 3 || x.dim(0) != channels)
    throw DimensionError(std::string(context) + ": expected " + std::to_string(channels) +
                         " channels, got " + shape_string(x.shape()));
}

std::size_t pixels(const Tensor& x) { return x.dim(1) * x.dim(2); }

Tensor relu(Tensor x) {
  for (auto& v : x.data()) v = v > 0 ? v : 0.0;
  return x;
}

// Zeroes gradient entries where the post-activation value is not positive.
void relu_mask(Tensor& grad, const Tensor& activated) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(activated[i] > 0)) grad[i] = 0.0;
}

Tensor scaled_normal(Rng& rng, Shape shape, double stddev) {
  Tensor t = randn(rng, std::move(shape));
  t *= stddev;
  return t;
}

}  // namespace

// ---------------------------------------------------------------- actnorm

ActNormParams ActNormParams::identity(std::size_t channels) {
  return {Tensor({channels}), Tensor({channels}), true};
}

void actnorm_initialize(ActNormParams& p, std::span<const Tensor> batch) {
  if (batch.empty()) throw InvalidArgument("actnorm_initialize: empty batch");
  const std::size_t channels = p.log_scale.size();
  std::vector<double> mean(channels, 0.0), var(channels, 0.0);
  const double count = double(batch.size() * pixels(batch[0]));
  for (const Tensor& x : batch) {
    require_chw(x, channels, "actnorm_initialize");
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < pixels(x); ++i) mean[c] += x[c * pixels(x) + i];
  }
  for (auto& m : mean) m /= count;
  for (const Tensor& x : batch)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < pixels(x); ++i) {
        const double d = x[c * pixels(x) + i] - mean[c];
        var[c] += d * d;
      }
  for (std::size_t c = 0; c < channels; ++c) {
    var[c] /= count;
    // Constant channels keep unit scale.
    const double log_scale = var[c] > 1e-20 ? -0.5 * std::log(var[c]) : 0.0;
    p.log_scale[c] = log_scale;
    p.bias[c] = -mean[c] * std::exp(log_scale);
  }
  p.initialized = true;
}

LayerOutput actnorm_forward(const ActNormParams& p, const Tensor& x) {
  if (!p.initialized) throw InvalidArgument("actnorm used before data-dependent initialization");
  const std::size_t channels = p.log_scale.size();
  require_chw(x, channels, "actnorm_forward");
  LayerOutput out{Tensor(x.shape()), 0.0};
  const std::size_t n = pixels(x);
  for (std::size_t c = 0; c < channels; ++c) {
    const double s = std::exp(p.log_scale[c]), b = p.bias[c];
    for (std::size_t i = 0; i < n; ++i) out.y[c * n + i] = s * x[c * n + i] + b;
    out.logdet += double(n) * p.log_scale[c];
  }
  return out;
}

Tensor actnorm_inverse(const ActNormParams& p, const Tensor& y) {
  if (!p.initialized) throw InvalidArgument("actnorm used before data-dependent initialization");
  const std::size_t channels = p.log_scale.size();
  require_chw(y, channels, "actnorm_inverse");
  Tensor x(y.shape());
  const std::size_t n = pixels(y);
  for (std::size_t c = 0; c < channels; ++c) {
    const double inv = std::exp(-p.log_scale[c]), b = p.bias[c];
    for (std::size_t i = 0; i < n; ++i) x[c * n + i] = (y[c * n + i] - b) * inv;
  }
  return x;
}

Tensor actnorm_backward(const ActNormParams& p, const Tensor& x, const Tensor& grad_y, double grad_logdet,
                        ActNormParams& grads) {
  const std::size_t channels = p.log_scale.size();
  const std::size_t n = pixels(x);
  Tensor gx(x.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const double s = std::exp(p.log_scale[c]);
    double g_scale = 0.0, g_bias = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad_y[c * n + i];
      gx[c * n + i] = g * s;
      g_scale += g * x[c * n + i];
      g_bias += g;
    }
    grads.log_scale[c] += g_scale * s + grad_logdet * double(n);
    grads.bias[c] += g_bias;
  }
  return gx;
}

// ---------------------------------------------------------------- invconv

InvConvParams InvConvParams::identity(std::size_t channels) { return {Tensor::identity(channels)}; }

InvConvParams InvConvParams::random_orthogonal(std::size_t channels, Rng& rng) {
  return {orthonormalize(randn(rng, {channels, channels}))};
}

LayerOutput invconv_forward(const InvConvParams& p, const Tensor& x) {
  const std::size_t channels = p.weight.dim(0);
  require_chw(x, channels, "invconv_forward");
  const std::size_t n = pixels(x);
  const Tensor y = matmul(p.weight, x.reshaped({channels, n}));
  return {y.reshaped(x.shape()), double(n) * log_abs_det(p.weight)};
}

Tensor invconv_inverse(const InvConvParams& p, const Tensor& y) {
  const std::size_t channels = p.weight.dim(0);
  require_chw(y, channels, "invconv_inverse");
  return matmul(mat_inverse(p.weight), y.reshaped({channels, pixels(y)})).reshaped(y.shape());
}

Tensor invconv_backward(const InvConvParams& p, const Tensor& x, const Tensor& grad_y, double grad_logdet,
                        InvConvParams& grads) {
  const std::size_t channels = p.weight.dim(0);
  const std::size_t n = pixels(x);
  const Tensor gy = grad_y.reshaped({channels, n});
  const Tensor xm = x.reshaped({channels, n});
  // d ln|det W| / dW = W^{-T}
  const Tensor inv_t = transpose(mat_inverse(p.weight));
  for (std::size_t i = 0; i < channels; ++i)
    for (std::size_t j = 0; j < channels; ++j) {
      double s = 0.0;
      for (std::size_t q = 0; q < n; ++q) s += gy.at(i, q) * xm.at(j, q);
      grads.weight.at(i, j) += s + grad_logdet * double(n) * inv_t.at(i, j);
    }
  return matmul(transpose(p.weight), gy).reshaped(x.shape());
}

// ---------------------------------------------------------------- coupling

CouplingParams CouplingParams::zero_output(std::size_t channels, std::size_t width, Rng& rng) {
  if (channels % 2 != 0) throw DimensionError("coupling needs an even channel count");
  const std::size_t half = channels / 2;
  CouplingParams p;
  p.w1 = scaled_normal(rng, {width, half, 3, 3}, std::sqrt(1.0 / double(half * 9)));
  p.b1 = Tensor({width});
  p.w2 = scaled_normal(rng, {width, width, 3, 3}, std::sqrt(1.0 / double(width * 9)));
  p.b2 = Tensor({width});
  p.w3 = Tensor({channels, width, 3, 3});
  p.b3 = Tensor({channels});
  return p;
}

namespace {

CouplingCache run_net(const CouplingParams& p, const Tensor& xa) {
  CouplingCache c;
  c.h1 = relu(conv2d(xa, p.w1, p.b1));
  c.h2 = relu(conv2d(c.h1, p.w2, p.b2));
  c.net_out = conv2d(c.h2, p.w3, p.b3);
  return c;
}

void check_coupling_input(const CouplingParams& p, const Tensor& x, const char* context) {
  require_chw(x, p.b3.size(), context);
}

}  // namespace

LayerOutput coupling_forward(const CouplingParams& p, const Tensor& x, CouplingCache* cache) {
  check_coupling_input(p, x, "coupling_forward");
  const std::size_t half = x.dim(0) / 2, n = pixels(x);
  auto [xa, xb] = split_channels(x, half);
  CouplingCache net = run_net(p, xa);
  LayerOutput out{x, 0.0};
  for (std::size_t i = 0; i < half * n; ++i) {
    const double shift = net.net_out[i];
    const double log_scale = 2.0 * std::tanh(net.net_out[half * n + i]);
    out.y[half * n + i] = xb[i] * std::exp(log_scale) + shift;
    out.logdet += log_scale;
  }
  if (cache) *cache = std::move(net);
  return out;
}

Tensor coupling_inverse(const CouplingParams& p, const Tensor& y) {
  check_coupling_input(p, y, "coupling_inverse");
  const std::size_t half = y.dim(0) / 2, n = pixels(y);
  const auto [ya, yb] = split_channels(y, half);
  const CouplingCache net = run_net(p, ya);
  Tensor x = y;
  for (std::size_t i = 0; i < half * n; ++i) {
    const double log_scale = 2.0 * std::tanh(net.net_out[half * n + i]);
    x[half * n + i] = (yb[i] - net.net_out[i]) * std::exp(-log_scale);
  }
  return x;
}

Tensor coupling_backward(const CouplingParams& p, const Tensor& x, const CouplingCache& cache,
                         const Tensor& grad_y, double grad_logdet, CouplingParams& grads) {
  const std::size_t half = x.dim(0) / 2, n = pixels(x);
  Tensor gx = grad_y;  // the pass-through half starts with dL/dy_a
  Tensor g_net(cache.net_out.shape());
  for (std::size_t i = 0; i < half * n; ++i) {
    const double th = std::tanh(cache.net_out[half * n + i]);
    const double scale = std::exp(2.0 * th);
    const double gyb = grad_y[half * n + i];
    const double xb = x[half * n + i];
    gx[half * n + i] = gyb * scale;
    g_net[i] = gyb;
    const double g_log_scale = gyb * xb * scale + grad_logdet;
    g_net[half * n + i] = g_log_scale * 2.0 * (1.0 - th * th);
  }

  Tensor g_h2, g_h1, g_xa;
  conv2d_backward_accumulate(g_net, cache.h2, p.w3, &g_h2, grads.w3, grads.b3);
  relu_mask(g_h2, cache.h2);
  conv2d_backward_accumulate(g_h2, cache.h1, p.w2, &g_h1, grads.w2, grads.b2);
  relu_mask(g_h1, cache.h1);
  const Tensor xa = split_channels(x, half).first;
  conv2d_backward_accumulate(g_h1, xa, p.w1, &g_xa, grads.w1, grads.b1);
  for (std::size_t i = 0; i < half * n; ++i) gx[i] += g_xa[i];
  return gx;
}

// ---------------------------------------------------------------- reshaping

Tensor squeeze(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("squeeze: expected C x H x W");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H % 2 || W % 2) throw DimensionError("squeeze: odd spatial extent " + shape_string(x.shape()));
  Tensor y({4 * C, H / 2, W / 2});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H / 2; ++i)
      for (std::size_t j = 0; j < W / 2; ++j)
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) y.at(4 * c + 2 * di + dj, i, j) = x.at(c, 2 * i + di, 2 * j + dj);
  return y;
}

Tensor unsqueeze(const Tensor& y) {
  if (y.rank() != 3 || y.dim(0) % 4) throw DimensionError("unsqueeze: channel count must be a multiple of 4");
  const std::size_t C = y.dim(0) / 4, H = y.dim(1), W = y.dim(2);
  Tensor x({C, 2 * H, 2 * W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) x.at(c, 2 * i + di, 2 * j + dj) = y.at(4 * c + 2 * di + dj, i, j);
  return x;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x, std::size_t first) {
  if (x.rank() != 3 || first == 0 || first >= x.dim(0)) throw DimensionError("split_channels: bad split");
  const std::size_t n = pixels(x);
  const auto data = x.data();
  Tensor a({first, x.dim(1), x.dim(2)}, std::vector<double>(data.begin(), data.begin() + first * n));
  Tensor b({x.dim(0) - first, x.dim(1), x.dim(2)}, std::vector<double>(data.begin() + first * n, data.end()));
  return {std::move(a), std::move(b)};
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw DimensionError("concat_channels: spatial extents differ");
  std::vector<double> data(a.values());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(data));
}

}  // namespace speechflow
