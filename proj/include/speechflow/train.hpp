#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "speechflow/error.hpp"
#include "speechflow/flow.hpp"
#include "speechflow/signal.hpp"

namespace speechflow {

struct TrainConfig {
  int batch_size = 16;
  int steps = 500;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip_norm = 50.0;
  std::uint64_t seed = 0;
  int checkpoint_every = 100;
  double jitter = 1e-2;
  bool include_noisy = false;
  // Wall-clock time makes the metrics log non-reproducible; off by default
  // and the column is written as 0.
  bool log_wall_time = false;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FlowConfig& c);
FlowConfig flow_config_from_json(const nlohmann::json& j);

double bits_per_dim(double nats_per_dim);

struct NllResult {
  double loss = 0.0;            // -mean ln p(x) / dims, nats
  std::vector<double> log_px;   // per example, nats
};

// ln p(x) = prior_logprob(z(x)) + logdet.
double log_likelihood(const FlowModel& model, const Tensor& x);
NllResult nll(const FlowModel& model, std::span<const Tensor> batch);

struct LossAndGrad {
  NllResult nll;
  FlowParams grads;
};

// Exact gradients of nll(model, batch).loss for every parameter.
LossAndGrad backward(const FlowModel& model, std::span<const Tensor> batch);

double global_norm(const FlowParams& grads);

struct AdamState {
  FlowParams m;
  FlowParams v;
  std::int64_t t = 0;

  static AdamState zeros_for(const FlowParams& params);
};

// Clips grads to config.grad_clip_norm (global norm) then applies one
// bias-corrected Adam update. Returns the pre-clip norm.
double adam_step(FlowParams& params, FlowParams grads, AdamState& state, const TrainConfig& config);

struct TrainState {
  FlowModel model;
  AdamState adam;
  std::int64_t step = 0;
  NormStats stats;
  TrainConfig train;
  double initial_loss = 0.0;  // loss of the first step, for the divergence check
  int steps_above_threshold = 0;
  nlohmann::json run_config = nlohmann::json::object();
};

// Fresh model initialized from a stream derived from train.seed.
TrainState make_train_state(const FlowConfig& flow, const TrainConfig& train, const NormStats& stats,
                            nlohmann::json run_config = nlohmann::json::object());

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const TrainState& state);
TrainState decode_checkpoint(const std::string& bytes);

struct MetricsRow {
  std::int64_t step = 0;
  double nats_per_dim = 0.0;
  double bits_per_dim = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

std::string metrics_header(const nlohmann::json& config_echo);
std::string metrics_line(const MetricsRow& row);

// Raised when training diverges; names the last checkpoint written, if any.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::filesystem::path last_good)
      : Error(what), last_good_(std::move(last_good)) {}
  const std::filesystem::path& last_good() const { return last_good_; }

 private:
  std::filesystem::path last_good_;
};

inline constexpr int kDivergencePatience = 50;
inline constexpr double kDivergenceFactor = 10.0;

struct TrainOptions {
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  std::filesystem::path metrics_path;     // empty: metrics only returned
  std::function<void(const MetricsRow&)> on_step;
};

struct TrainResult {
  TrainState state;
  std::vector<MetricsRow> metrics;
};

// Runs until state.step == state.train.steps. Batch order, jitter and
// initialization are pure functions of (seed, step), so a resumed run
// reproduces the uninterrupted one.
TrainResult train_loop(std::span<const Tensor> corpus, TrainState state, const TrainOptions& options = {});

// Indices of the examples used at a given step.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::int64_t step, std::size_t batch_size,
                                       std::size_t corpus_size);

struct AuditGroup {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

struct AuditReport {
  std::vector<AuditGroup> groups;
  double tolerance = 0.0;

  double worst() const;
  bool passed() const { return worst() <= tolerance; }
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor) for the
// per-example nats objective; floor absorbs entries that are zero.
inline constexpr double kAuditFloor = 1e-6;

// max_per_tensor > 0 checks that many entries per tensor, picked from seed.
AuditReport grad_audit(const FlowModel& model, std::span<const Tensor> batch, double h, double tolerance,
                       std::size_t max_per_tensor = 0, std::uint64_t seed = 0);

}  // namespace speechflow
