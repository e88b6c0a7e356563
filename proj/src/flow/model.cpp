#include <cmath>
#include <numbers>

#include "speechflow/error.hpp"
#include "speechflow/flow.hpp"
#include "speechflow/linalg.hpp"

namespace speechflow {

namespace {
// Tensors visited per step by for_each_tensor.
constexpr std::size_t kTensorsPerStep = 9;
}  // namespace

void FlowConfig::validate() const {
  if (levels < 1 || depth < 1 || width < 1) throw InvalidArgument("flow levels, depth and width must be positive");
  if (size == 0 || size % (std::size_t{1} << levels) != 0)
    throw InvalidArgument("flow input size " + std::to_string(size) + " must be divisible by 2^levels");
}

std::size_t FlowConfig::channels_at(int level) const {
  // 4 after the first squeeze; each split halves, each squeeze quadruples.
  std::size_t c = 4;
  for (int l = 0; l < level; ++l) c = 4 * (c / 2);
  return c;
}

std::size_t FlowConfig::extent_at(int level) const { return size >> (level + 1); }

void for_each_tensor(FlowParams& params, const std::function<void(const std::string&, Tensor&)>& fn) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string p = "step" + std::to_string(i) + ".";
    auto& s = params[i];
    fn(p + "actnorm.log_scale", s.actnorm.log_scale);
    fn(p + "actnorm.bias", s.actnorm.bias);
    fn(p + "invconv.weight", s.invconv.weight);
    fn(p + "coupling.w1", s.coupling.w1);
    fn(p + "coupling.b1", s.coupling.b1);
    fn(p + "coupling.w2", s.coupling.w2);
    fn(p + "coupling.b2", s.coupling.b2);
    fn(p + "coupling.w3", s.coupling.w3);
    fn(p + "coupling.b3", s.coupling.b3);
  }
}

void for_each_tensor(const FlowParams& params, const std::function<void(const std::string&, const Tensor&)>& fn) {
  for_each_tensor(const_cast<FlowParams&>(params), [&](const std::string& name, Tensor& t) { fn(name, t); });
}

FlowParams zeros_like(const FlowParams& params) {
  FlowParams z = params;
  for_each_tensor(z, [](const std::string&, Tensor& t) { t.fill(0.0); });
  return z;
}

std::size_t parameter_count(const FlowParams& params) {
  std::size_t n = 0;
  for_each_tensor(params, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

LatentLayout LatentLayout::for_config(const FlowConfig& config) {
  config.validate();
  LatentLayout layout;
  for (int l = 0; l < config.levels; ++l) {
    const std::size_t c = config.channels_at(l), e = config.extent_at(l);
    const std::size_t emitted = (l + 1 < config.levels) ? c / 2 : c;
    layout.parts.push_back({l, Shape{emitted, e, e}, layout.dims});
    layout.dims += emitted * e * e;
  }
  return layout;
}

Tensor LatentCode::part(std::size_t index) const {
  const LatentPart& p = layout.parts.at(index);
  const auto data = flat.data();
  return Tensor(p.shape, std::vector<double>(data.begin() + p.offset, data.begin() + p.offset + p.size()));
}

namespace {

void require_same_layout(const LatentCode& a, const LatentCode& b) {
  if (a.flat.shape() != b.flat.shape()) throw DimensionError("latent codes differ in dimension");
}

}  // namespace

LatentCode operator+(const LatentCode& a, const LatentCode& b) {
  require_same_layout(a, b);
  return {a.flat + b.flat, a.layout};
}

LatentCode operator-(const LatentCode& a, const LatentCode& b) {
  require_same_layout(a, b);
  return {a.flat - b.flat, a.layout};
}

LatentCode operator*(double s, const LatentCode& a) { return {s * a.flat, a.layout}; }

double prior_logprob(const Tensor& z) {
  const double half_log_2pi = 0.5 * std::log(2 * std::numbers::pi);
  double s = 0.0;
  for (double v : z.data()) s += -0.5 * v * v - half_log_2pi;
  return s;
}

FlowModel::FlowModel(const FlowConfig& config, Rng& rng)
    : config_(config), layout_(LatentLayout::for_config(config)) {
  for (int l = 0; l < config_.levels; ++l) {
    const std::size_t c = config_.channels_at(l);
    for (int k = 0; k < config_.depth; ++k) {
      FlowStepParams s;
      s.actnorm = ActNormParams::identity(c);
      s.actnorm.initialized = false;
      s.invconv = InvConvParams::random_orthogonal(c, rng);
      s.coupling = CouplingParams::zero_output(c, static_cast<std::size_t>(config_.width), rng);
      params_.push_back(std::move(s));
    }
  }
}

FlowModel::FlowModel(const FlowConfig& config, FlowParams params)
    : config_(config), layout_(LatentLayout::for_config(config)), params_(std::move(params)) {
  if (params_.size() != static_cast<std::size_t>(config_.levels * config_.depth))
    throw DimensionError("flow parameter count does not match config");
  for (int l = 0; l < config_.levels; ++l)
    for (int k = 0; k < config_.depth; ++k) {
      const auto& s = step(l, k);
      const std::size_t c = config_.channels_at(l);
      const auto w = static_cast<std::size_t>(config_.width);
      if (s.actnorm.log_scale.shape() != Shape{c} || s.actnorm.bias.shape() != Shape{c} ||
          s.invconv.weight.shape() != Shape{c, c} || s.coupling.w1.shape() != Shape{w, c / 2, 3, 3} ||
          s.coupling.w2.shape() != Shape{w, w, 3, 3} || s.coupling.w3.shape() != Shape{c, w, 3, 3} ||
          s.coupling.b1.size() != w || s.coupling.b2.size() != w || s.coupling.b3.size() != c)
        throw DimensionError("flow parameter shapes do not match config at level " + std::to_string(l));
    }
}

FlowModel FlowModel::identity(const FlowConfig& config) {
  Rng rng(0);
  FlowModel m(config, rng);
  for (int l = 0; l < config.levels; ++l)
    for (int k = 0; k < config.depth; ++k) {
      auto& s = m.step(l, k);
      const std::size_t c = config.channels_at(l);
      s.actnorm = ActNormParams::identity(c);
      s.invconv = InvConvParams::identity(c);
    }
  return m;
}

bool FlowModel::initialized() const {
  for (const auto& s : params_)
    if (!s.actnorm.initialized) return false;
  return true;
}

void FlowModel::validate_params() const {
  std::size_t tensor_index = 0;
  for_each_tensor(params_, [&](const std::string& name, const Tensor& t) {
    if (!t.all_finite()) throw NonFiniteError(static_cast<int>(tensor_index / kTensorsPerStep), name + " is not finite");
    ++tensor_index;
  });
  for (std::size_t i = 0; i < params_.size(); ++i) {
    try {
      lu_decompose(params_[i].invconv.weight);
    } catch (const SingularMatrixError& e) {
      throw SingularMatrixError("step " + std::to_string(i) + " 1x1 convolution: " + e.what());
    }
  }
}

void FlowModel::initialize(std::span<const Tensor> batch) {
  if (batch.empty()) throw InvalidArgument("initialize: empty batch");
  std::vector<Tensor> h;
  for (const Tensor& x : batch) {
    if (x.shape() != Shape{1, config_.size, config_.size})
      throw DimensionError("initialize: input shape " + shape_string(x.shape()));
    h.push_back(x);
  }
  for (int l = 0; l < config_.levels; ++l) {
    for (auto& t : h) t = squeeze(t);
    for (int k = 0; k < config_.depth; ++k) {
      auto& s = step(l, k);
      if (!s.actnorm.initialized) actnorm_initialize(s.actnorm, h);
      for (auto& t : h) {
        t = actnorm_forward(s.actnorm, t).y;
        t = invconv_forward(s.invconv, t).y;
        t = coupling_forward(s.coupling, t).y;
      }
    }
    if (l + 1 < config_.levels)
      for (auto& t : h) t = split_channels(t, t.dim(0) / 2).second;
  }
}

Encoded FlowModel::run_forward(const Tensor& x, FlowTrace* trace) const {
  if (x.shape() != Shape{1, config_.size, config_.size})
    throw DimensionError("flow input must be " + shape_string({1, config_.size, config_.size}) + ", got " +
                         shape_string(x.shape()));
  Encoded out;
  out.code.layout = layout_;
  out.code.flat = Tensor({layout_.dims});
  if (trace) trace->steps.assign(params_.size(), {});
  auto emit = [&](int level, const Tensor& part) {
    const auto& p = layout_.parts[level];
    std::copy(part.data().begin(), part.data().end(), out.code.flat.data().begin() + p.offset);
  };

  Tensor h = x;
  int index = 0;
  for (int l = 0; l < config_.levels; ++l) {
    h = squeeze(h);
    for (int k = 0; k < config_.depth; ++k, ++index) {
      const auto& s = step(l, k);
      FlowTrace::Step* record = trace ? &trace->steps[index] : nullptr;
      if (record) record->actnorm_in = h;
      auto a = actnorm_forward(s.actnorm, h);
      if (record) record->invconv_in = a.y;
      auto b = invconv_forward(s.invconv, a.y);
      if (record) record->coupling_in = b.y;
      auto c = coupling_forward(s.coupling, b.y, record ? &record->coupling : nullptr);
      const double logdet = a.logdet + b.logdet + c.logdet;
      if (!std::isfinite(logdet)) throw NonFiniteError(index, "log-determinant");
      if (!c.y.all_finite()) throw NonFiniteError(index, "activations");
      out.logdet += logdet;
      h = std::move(c.y);
    }
    if (l + 1 < config_.levels) {
      auto [code, rest] = split_channels(h, h.dim(0) / 2);
      emit(l, code);
      h = std::move(rest);
    } else {
      emit(l, h);
    }
  }
  return out;
}

Encoded FlowModel::forward(const Tensor& x) const { return run_forward(x, nullptr); }

Encoded FlowModel::forward_trace(const Tensor& x, FlowTrace& trace) const { return run_forward(x, &trace); }

Tensor FlowModel::inverse(const LatentCode& z) const {
  if (z.flat.size() != layout_.dims)
    throw DimensionError("latent code has " + std::to_string(z.flat.size()) + " entries, model expects " +
                         std::to_string(layout_.dims));
  const LatentCode code{z.flat.reshaped({layout_.dims}), layout_};
  Tensor h = code.part(layout_.parts.size() - 1);
  for (int l = config_.levels - 1; l >= 0; --l) {
    if (l + 1 < config_.levels) h = concat_channels(code.part(l), h);
    for (int k = config_.depth - 1; k >= 0; --k) {
      const auto& s = step(l, k);
      h = coupling_inverse(s.coupling, h);
      h = invconv_inverse(s.invconv, h);
      h = actnorm_inverse(s.actnorm, h);
    }
    h = unsqueeze(h);
  }
  return h;
}

Tensor FlowModel::backward(const FlowTrace& trace, const Tensor& grad_code, double grad_logdet,
                           FlowParams& grads) const {
  if (grad_code.size() != layout_.dims) throw DimensionError("backward: gradient length mismatch");
  if (trace.steps.size() != params_.size()) throw InvalidArgument("backward: trace does not match model");
  const LatentCode g{grad_code.reshaped({layout_.dims}), layout_};
  Tensor gh = g.part(layout_.parts.size() - 1);
  for (int l = config_.levels - 1; l >= 0; --l) {
    if (l + 1 < config_.levels) gh = concat_channels(g.part(l), gh);
    for (int k = config_.depth - 1; k >= 0; --k) {
      const int index = l * config_.depth + k;
      const auto& s = step(l, k);
      const auto& rec = trace.steps[index];
      auto& gs = grads[index];
      gh = coupling_backward(s.coupling, rec.coupling_in, rec.coupling, gh, grad_logdet, gs.coupling);
      gh = invconv_backward(s.invconv, rec.invconv_in, gh, grad_logdet, gs.invconv);
      gh = actnorm_backward(s.actnorm, rec.actnorm_in, gh, grad_logdet, gs.actnorm);
    }
    gh = unsqueeze(gh);
  }
  return gh;
}

void perturb_parameters(FlowModel& model, Rng& rng, double scale) {
  for_each_tensor(model.params(), [&](const std::string&, Tensor& t) {
    for (auto& v : t.data()) v += scale * rng.normal();
  });
  for (auto& s : model.params()) s.actnorm.initialized = true;
  model.validate_params();
}

}  // namespace speechflow
