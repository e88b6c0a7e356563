#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "speechflow/layers.hpp"
#include "speechflow/rng.hpp"
#include "speechflow/tensor.hpp"

namespace speechflow {

struct FlowConfig {
  int levels = 3;
  int depth = 2;
  int width = 32;
  std::size_t size = 32;  // input is 1 x size x size

  void validate() const;
  std::size_t dims() const { return size * size; }
  // Channels and spatial extent inside level l (after its squeeze).
  std::size_t channels_at(int level) const;
  std::size_t extent_at(int level) const;

  static FlowConfig desk() { return {3, 2, 32, 32}; }
  static FlowConfig full() { return {4, 8, 128, 288}; }

  friend bool operator==(const FlowConfig&, const FlowConfig&) = default;
};

struct FlowStepParams {
  ActNormParams actnorm;
  InvConvParams invconv;
  CouplingParams coupling;
};

// One entry per flow step, level-major (index = level * depth + k).
using FlowParams = std::vector<FlowStepParams>;

void for_each_tensor(FlowParams& params, const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_tensor(const FlowParams& params, const std::function<void(const std::string&, const Tensor&)>& fn);
FlowParams zeros_like(const FlowParams& params);
std::size_t parameter_count(const FlowParams& params);

struct LatentPart {
  int level;
  Shape shape;
  std::size_t offset;
  std::size_t size() const { return shape_volume(shape); }
  friend bool operator==(const LatentPart&, const LatentPart&) = default;
};

// Order in which the multi-scale parts are packed into the flat code.
struct LatentLayout {
  std::vector<LatentPart> parts;
  std::size_t dims = 0;

  static LatentLayout for_config(const FlowConfig& config);
  friend bool operator==(const LatentLayout&, const LatentLayout&) = default;
};

struct LatentCode {
  Tensor flat;  // shape [dims]
  LatentLayout layout;

  std::size_t dims() const { return flat.size(); }
  Tensor part(std::size_t index) const;
};

LatentCode operator+(const LatentCode& a, const LatentCode& b);
LatentCode operator-(const LatentCode& a, const LatentCode& b);
LatentCode operator*(double s, const LatentCode& a);

// Sum over entries of the standard-normal log density.
double prior_logprob(const Tensor& z);

// Per-example activations kept by forward_trace for the reverse pass.
struct FlowTrace {
  struct Step {
    Tensor actnorm_in, invconv_in, coupling_in;
    CouplingCache coupling;
  };
  std::vector<Step> steps;
};

struct Encoded {
  LatentCode code;
  double logdet = 0.0;
};

class FlowModel {
 public:
  // Random orthogonal 1x1 convolutions, zero coupling outputs, actnorm
  // awaiting data-dependent initialization.
  FlowModel(const FlowConfig& config, Rng& rng);
  FlowModel(const FlowConfig& config, FlowParams params);

  // All layers at identity (W = I, actnorm initialized to the identity).
  static FlowModel identity(const FlowConfig& config);

  const FlowConfig& config() const { return config_; }
  const LatentLayout& layout() const { return layout_; }
  FlowParams& params() { return params_; }
  const FlowParams& params() const { return params_; }
  FlowStepParams& step(int level, int k) { return params_[level * config_.depth + k]; }
  const FlowStepParams& step(int level, int k) const { return params_[level * config_.depth + k]; }

  bool initialized() const;
  // Data-dependent actnorm initialization, layer by layer over the batch.
  void initialize(std::span<const Tensor> batch);

  Encoded forward(const Tensor& x) const;
  Encoded forward_trace(const Tensor& x, FlowTrace& trace) const;
  Tensor inverse(const LatentCode& z) const;

  // Reverse pass for one example: grad_code = dL/dz, grad_logdet = dL/dlogdet.
  // Accumulates into grads and returns dL/dx.
  Tensor backward(const FlowTrace& trace, const Tensor& grad_code, double grad_logdet, FlowParams& grads) const;

  // Rejects non-finite parameters and singular 1x1 convolutions.
  void validate_params() const;

 private:
  Encoded run_forward(const Tensor& x, FlowTrace* trace) const;

  FlowConfig config_;
  LatentLayout layout_;
  FlowParams params_;
};

// Adds scale * N(0, 1) noise to every parameter (including coupling output
// layers) and marks actnorm initialized; used for audits and tests.
void perturb_parameters(FlowModel& model, Rng& rng, double scale);

}  // namespace speechflow
