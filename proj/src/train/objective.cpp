#include <cmath>
#include <numbers>

#include "speechflow/train.hpp"

namespace speechflow {

double bits_per_dim(double nats_per_dim) { return nats_per_dim / std::numbers::ln2; }

double log_likelihood(const FlowModel& model, const Tensor& x) {
  const Encoded e = model.forward(x);
  return prior_logprob(e.code.flat) + e.logdet;
}

NllResult nll(const FlowModel& model, std::span<const Tensor> batch) {
  if (batch.empty()) throw InvalidArgument("nll: empty batch");
  NllResult r;
  double total = 0.0;
  for (const Tensor& x : batch) {
    r.log_px.push_back(log_likelihood(model, x));
    total += r.log_px.back();
  }
  r.loss = -total / (static_cast<double>(batch.size()) * static_cast<double>(model.config().dims()));
  return r;
}

LossAndGrad backward(const FlowModel& model, std::span<const Tensor> batch) {
  if (batch.empty()) throw InvalidArgument("backward: empty batch");
  const double scale = 1.0 / (static_cast<double>(batch.size()) * static_cast<double>(model.config().dims()));
  LossAndGrad out;
  out.grads = zeros_like(model.params());
  double total = 0.0;
  FlowTrace trace;
  for (const Tensor& x : batch) {
    const Encoded e = model.forward_trace(x, trace);
    const double lp = prior_logprob(e.code.flat) + e.logdet;
    out.nll.log_px.push_back(lp);
    total += lp;
    // d(-prior)/dz = z; d(-logdet)/dlogdet = -1.
    model.backward(trace, scale * e.code.flat, -scale, out.grads);
  }
  out.nll.loss = -total * scale;
  return out;
}

double global_norm(const FlowParams& grads) {
  double ss = 0.0;
  for_each_tensor(grads, [&](const std::string&, const Tensor& t) {
    for (double v : t.data()) ss += v * v;
  });
  return std::sqrt(ss);
}

AdamState AdamState::zeros_for(const FlowParams& params) { return {zeros_like(params), zeros_like(params), 0}; }

double adam_step(FlowParams& params, FlowParams grads, AdamState& state, const TrainConfig& config) {
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw NonFiniteError(-1, "gradient norm");
  if (config.grad_clip_norm > 0 && norm > config.grad_clip_norm) {
    const double s = config.grad_clip_norm / norm;
    for_each_tensor(grads, [&](const std::string&, Tensor& t) { t *= s; });
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));

  std::vector<Tensor*> p, g, m, v;
  for_each_tensor(params, [&](const std::string&, Tensor& t) { p.push_back(&t); });
  for_each_tensor(grads, [&](const std::string&, Tensor& t) { g.push_back(&t); });
  for_each_tensor(state.m, [&](const std::string&, Tensor& t) { m.push_back(&t); });
  for_each_tensor(state.v, [&](const std::string&, Tensor& t) { v.push_back(&t); });
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
    throw DimensionError("adam_step: parameter structure mismatch");

  for (std::size_t i = 0; i < p.size(); ++i) {
    require_same_shape(*p[i], *g[i], "adam_step");
    require_same_shape(*p[i], *m[i], "adam_step");
    auto pd = p[i]->data();
    auto gd = g[i]->data();
    auto md = m[i]->data();
    auto vd = v[i]->data();
    for (std::size_t j = 0; j < pd.size(); ++j) {
      md[j] = config.beta1 * md[j] + (1.0 - config.beta1) * gd[j];
      vd[j] = config.beta2 * vd[j] + (1.0 - config.beta2) * gd[j] * gd[j];
      const double mhat = md[j] / c1;
      const double vhat = vd[j] / c2;
      pd[j] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
    }
  }
  return norm;
}

}  // namespace speechflow
