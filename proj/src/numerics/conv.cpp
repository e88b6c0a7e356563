#include "speechflow/conv.hpp"

#include <algorithm>
#include <vector>

#include "speechflow/error.hpp"

namespace speechflow {

namespace {

struct ConvGeometry {
  std::size_t channels, height, width, outputs, kh, kw;
  std::size_t taps() const { return channels * kh * kw; }
  std::size_t pixels() const { return height * width; }
};

ConvGeometry check_geometry(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 3) throw DimensionError("conv2d: input must be C x H x W, got " + shape_string(x.shape()));
  if (kernel.rank() != 4)
    throw DimensionError("conv2d: kernel must be O x C x kh x kw, got " + shape_string(kernel.shape()));
  if (kernel.dim(1) != x.dim(0))
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                         " channels, input has " + std::to_string(x.dim(0)));
  if (kernel.dim(2) % 2 == 0 || kernel.dim(3) % 2 == 0)
    throw DimensionError("conv2d: kernel extents must be odd");
  return {x.dim(0), x.dim(1), x.dim(2), kernel.dim(0), kernel.dim(2), kernel.dim(3)};
}

// Column matrix of shape (C*kh*kw) x (H*W); out-of-range taps read zero.
std::vector<double> im2col(const Tensor& x, const ConvGeometry& g) {
  const std::size_t pixels = g.pixels();
  std::vector<double> col(g.taps() * pixels, 0.0);
  const long ph = static_cast<long>(g.kh / 2), pw = static_cast<long>(g.kw / 2);
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* src = &x[c * pixels];
    for (long ki = 0; ki < static_cast<long>(g.kh); ++ki) {
      for (long kj = 0; kj < static_cast<long>(g.kw); ++kj, ++row) {
        double* dst = &col[row * pixels];
        const long di = ki - ph, dj = kj - pw;
        const long j0 = std::max(0L, -dj), j1 = std::min(W, W - dj);
        for (long i = std::max(0L, -di); i < std::min(H, H - di); ++i) {
          const double* s = src + (i + di) * W + dj;
          double* d = dst + i * W;
          for (long j = j0; j < j1; ++j) d[j] = s[j];
        }
      }
    }
  }
  return col;
}

void col2im_add(const std::vector<double>& col, const ConvGeometry& g, Tensor& x) {
  const std::size_t pixels = g.pixels();
  const long ph = static_cast<long>(g.kh / 2), pw = static_cast<long>(g.kw / 2);
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* dst = &x[c * pixels];
    for (long ki = 0; ki < static_cast<long>(g.kh); ++ki) {
      for (long kj = 0; kj < static_cast<long>(g.kw); ++kj, ++row) {
        const double* src = &col[row * pixels];
        const long di = ki - ph, dj = kj - pw;
        const long j0 = std::max(0L, -dj), j1 = std::min(W, W - dj);
        for (long i = std::max(0L, -di); i < std::min(H, H - di); ++i) {
          double* d = dst + (i + di) * W + dj;
          const double* s = src + i * W;
          for (long j = j0; j < j1; ++j) d[j] += s[j];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  const ConvGeometry g = check_geometry(x, kernel);
  if (bias.size() != g.outputs) throw DimensionError("conv2d: bias length must equal output channels");
  const std::size_t pixels = g.pixels(), taps = g.taps();
  const std::vector<double> col = im2col(x, g);
  Tensor out({g.outputs, g.height, g.width});
  for (std::size_t o = 0; o < g.outputs; ++o) {
    double* dst = &out[o * pixels];
    std::fill(dst, dst + pixels, bias[o]);
    const double* krow = &kernel[o * taps];
    for (std::size_t r = 0; r < taps; ++r) {
      const double k = krow[r];
      if (k == 0.0) continue;
      const double* src = &col[r * pixels];
      for (std::size_t p = 0; p < pixels; ++p) dst[p] += k * src[p];
    }
  }
  return out;
}

void conv2d_backward_accumulate(const Tensor& grad_out, const Tensor& x, const Tensor& kernel,
                                Tensor* grad_x, Tensor& grad_kernel, Tensor& grad_bias) {
  const ConvGeometry g = check_geometry(x, kernel);
  if (grad_out.shape() != Shape{g.outputs, g.height, g.width})
    throw DimensionError("conv2d_backward: grad_out shape " + shape_string(grad_out.shape()));
  require_same_shape(grad_kernel, kernel, "conv2d_backward grad_kernel");
  if (grad_bias.size() != g.outputs) throw DimensionError("conv2d_backward: grad_bias length");
  const std::size_t pixels = g.pixels(), taps = g.taps();
  const std::vector<double> col = im2col(x, g);

  for (std::size_t o = 0; o < g.outputs; ++o) {
    const double* go = &grad_out[o * pixels];
    double bsum = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) bsum += go[p];
    grad_bias[o] += bsum;
    double* gk = &grad_kernel[o * taps];
    for (std::size_t r = 0; r < taps; ++r) {
      const double* src = &col[r * pixels];
      double s = 0.0;
      for (std::size_t p = 0; p < pixels; ++p) s += go[p] * src[p];
      gk[r] += s;
    }
  }

  if (grad_x == nullptr) return;
  std::vector<double> gcol(taps * pixels, 0.0);
  for (std::size_t o = 0; o < g.outputs; ++o) {
    const double* go = &grad_out[o * pixels];
    const double* krow = &kernel[o * taps];
    for (std::size_t r = 0; r < taps; ++r) {
      const double k = krow[r];
      if (k == 0.0) continue;
      double* dst = &gcol[r * pixels];
      for (std::size_t p = 0; p < pixels; ++p) dst[p] += k * go[p];
    }
  }
  *grad_x = Tensor(x.shape());
  col2im_add(gcol, g, *grad_x);
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& x, const Tensor& kernel) {
  Conv2dGrads grads{Tensor(x.shape()), Tensor(kernel.shape()), Tensor({kernel.dim(0)})};
  conv2d_backward_accumulate(grad_out, x, kernel, &grads.x, grads.kernel, grads.bias);
  return grads;
}

}  // namespace speechflow
