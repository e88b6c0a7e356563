#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "speechflow/dataset.hpp"
#include "speechflow/train.hpp"

namespace speechflow {

namespace {

constexpr std::uint64_t kShuffleStream = 1ULL << 40;
constexpr std::uint64_t kJitterStream = 2ULL << 40;

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng(seed).derive(kShuffleStream + epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

// Keeps the header and the rows up to `step` of an existing log.
void truncate_metrics(const std::filesystem::path& path, std::int64_t step) {
  std::ifstream in(path);
  if (!in) return;
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#' || line.rfind("step,", 0) == 0 || std::stoll(line.substr(0, line.find(','))) <= step)
      kept += line + "\n";
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kept;
}

}  // namespace

std::string metrics_header(const nlohmann::json& config_echo) {
  return "# config: " + config_echo.dump() + "\nstep,nats_per_dim,bits_per_dim,grad_norm,wall_ms\n";
}

std::string metrics_line(const MetricsRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.3f\n", static_cast<long long>(row.step),
                row.nats_per_dim, row.bits_per_dim, row.grad_norm, row.wall_ms);
  return buf;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::int64_t step, std::size_t batch_size,
                                       std::size_t corpus_size) {
  if (corpus_size == 0) throw InvalidArgument("batch_indices: empty corpus");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::uint64_t cached_epoch = ~0ULL;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::uint64_t pos = static_cast<std::uint64_t>(step) * batch_size + i;
    const std::uint64_t epoch = pos / corpus_size;
    if (epoch != cached_epoch) {
      order = epoch_order(seed, epoch, corpus_size);
      cached_epoch = epoch;
    }
    out.push_back(order[pos % corpus_size]);
  }
  return out;
}

TrainResult train_loop(std::span<const Tensor> corpus, TrainState state, const TrainOptions& options) {
  const TrainConfig cfg = state.train;
  cfg.validate();
  if (corpus.empty()) throw InvalidArgument("train_loop: empty corpus");
  const Shape expected{1, state.model.config().size, state.model.config().size};
  for (const Tensor& x : corpus)
    if (x.shape() != expected)
      throw DimensionError("train_loop: corpus tensor " + shape_string(x.shape()) + ", model expects " +
                           shape_string(expected));

  std::ofstream metrics;
  if (!options.metrics_path.empty()) {
    if (options.metrics_path.has_parent_path()) std::filesystem::create_directories(options.metrics_path.parent_path());
    if (state.step == 0 || !std::filesystem::exists(options.metrics_path)) {
      std::ofstream(options.metrics_path, std::ios::trunc) << metrics_header(state.run_config);
    } else {
      truncate_metrics(options.metrics_path, state.step);
    }
    metrics.open(options.metrics_path, std::ios::app);
    if (!metrics) throw IoError("cannot write metrics log " + options.metrics_path.string());
  }

  std::filesystem::path last_good;
  if (!options.checkpoint_path.empty() && state.step > 0 && std::filesystem::exists(options.checkpoint_path))
    last_good = options.checkpoint_path;
  auto diverged = [&](const std::string& why) {
    return DivergenceError("training diverged at step " + std::to_string(state.step + 1) + ": " + why, last_good);
  };

  std::vector<MetricsRow> rows;
  const Rng root(cfg.seed);
  while (state.step < cfg.steps) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng jitter = root.derive(kJitterStream + static_cast<std::uint64_t>(state.step));
    std::vector<Tensor> batch;
    for (std::size_t i : batch_indices(cfg.seed, state.step, cfg.batch_size, corpus.size()))
      batch.push_back(add_jitter(corpus[i], jitter, cfg.jitter));
    if (!state.model.initialized()) state.model.initialize(batch);

    LossAndGrad lg;
    double norm = 0.0;
    try {
      lg = backward(state.model, batch);
      if (!std::isfinite(lg.nll.loss)) throw diverged("loss is not finite");
      if (state.step == 0) state.initial_loss = lg.nll.loss;
      const double threshold = state.initial_loss + (kDivergenceFactor - 1.0) * std::abs(state.initial_loss);
      state.steps_above_threshold = lg.nll.loss > threshold ? state.steps_above_threshold + 1 : 0;
      if (state.steps_above_threshold >= kDivergencePatience)
        throw diverged("loss above " + std::to_string(threshold) + " for " + std::to_string(kDivergencePatience) +
                       " consecutive steps");
      norm = adam_step(state.model.params(), std::move(lg.grads), state.adam, cfg);
    } catch (const NonFiniteError& e) {
      throw diverged(e.what());
    }
    ++state.step;

    MetricsRow row{state.step, lg.nll.loss, bits_per_dim(lg.nll.loss), norm, 0.0};
    if (cfg.log_wall_time)
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(row);
    if (metrics.is_open()) {
      metrics << metrics_line(row);
      metrics.flush();
    }
    if (options.on_step) options.on_step(row);

    if (!options.checkpoint_path.empty() && (state.step % cfg.checkpoint_every == 0 || state.step == cfg.steps)) {
      save_checkpoint(options.checkpoint_path, state);
      last_good = options.checkpoint_path;
    }
  }
  return TrainResult{std::move(state), std::move(rows)};
}

}  // namespace speechflow
