#include <cmath>

#include "speechflow/latent.hpp"

namespace speechflow {

EncodeResult encode(const FlowModel& model, const Tensor& x) {
  Encoded e = model.forward(x);
  const double log_px = prior_logprob(e.code.flat) + e.logdet;
  return {std::move(e.code), log_px};
}

Tensor decode(const FlowModel& model, const LatentCode& z) { return model.inverse(z); }

LatentCode make_code(const FlowModel& model, Tensor flat) {
  if (flat.size() != model.layout().dims)
    throw DimensionError("code of length " + std::to_string(flat.size()) + " does not match model dimension " +
                         std::to_string(model.layout().dims));
  return {flat.reshaped({flat.size()}), model.layout()};
}

Samples sample(const FlowModel& model, Rng& rng, std::size_t n, double temperature) {
  if (!(temperature >= 0) || !std::isfinite(temperature))
    throw InvalidArgument("sample: temperature must be finite and non-negative");
  Samples out;
  for (std::size_t i = 0; i < n; ++i) {
    LatentCode z{temperature * randn(rng, {model.layout().dims}), model.layout()};
    out.spectrograms.push_back(decode(model, z));
    out.codes.push_back(std::move(z));
  }
  return out;
}

std::vector<double> sweep(double lo, double hi, double step) {
  if (!(step > 0) || !(hi >= lo)) throw InvalidArgument("sweep: need step > 0 and hi >= lo");
  std::vector<double> out;
  for (std::size_t i = 0;; ++i) {
    const double v = lo + static_cast<double>(i) * step;
    if (v > hi + step * 1e-3) break;
    out.push_back(std::min(v, hi));
  }
  return out;
}

std::vector<double> default_alphas() {
  std::vector<double> out;
  for (int i = 1; i <= 9; ++i) out.push_back(i / 10.0);
  return out;
}

std::vector<double> default_betas() {
  std::vector<double> out;
  for (int i = 0; i <= 8; ++i) out.push_back(i / 10.0);
  return out;
}

std::vector<LatentCode> interpolate(const LatentCode& a, const LatentCode& b, std::span<const double> alphas) {
  if (a.dims() != b.dims())
    throw DimensionError("interpolate: codes of length " + std::to_string(a.dims()) + " and " +
                         std::to_string(b.dims()));
  std::vector<LatentCode> out;
  for (double alpha : alphas) {
    Tensor z(a.flat.shape());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = (1.0 - alpha) * a.flat[i] + alpha * b.flat[i];
    out.push_back({std::move(z), a.layout});
  }
  return out;
}

Tensor mean_vector(std::span<const Tensor> vectors) {
  if (vectors.empty()) throw InvalidArgument("mean of an empty set");
  Tensor m({vectors[0].size()});
  for (const Tensor& v : vectors) {
    if (v.size() != m.size()) throw DimensionError("vectors of unequal length");
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += v[i];
  }
  m *= 1.0 / static_cast<double>(vectors.size());
  return m;
}

DisplacementVector displacement(std::span<const Tensor> clean, std::span<const Tensor> noisy,
                                std::optional<double> snr_db) {
  if (clean.empty() || noisy.empty()) throw InvalidArgument("displacement: empty code set");
  const Tensor mc = mean_vector(clean);
  const Tensor mn = mean_vector(noisy);
  if (mc.size() != mn.size()) throw DimensionError("displacement: clean and noisy codes differ in length");
  return {mn - mc, clean.size(), noisy.size(), snr_db};
}

LatentCode denoise(const LatentCode& z, const Tensor& xi, double beta) {
  if (xi.size() != z.dims())
    throw DimensionError("denoise: displacement of length " + std::to_string(xi.size()) + " for code of length " +
                         std::to_string(z.dims()));
  Tensor out = z.flat;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= beta * xi[i];
  return {std::move(out), z.layout};
}

}  // namespace speechflow
