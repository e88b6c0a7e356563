#include <algorithm>
#include <cmath>
#include <numeric>

#include "speechflow/train.hpp"

namespace speechflow {

double AuditReport::worst() const {
  double w = 0.0;
  for (const auto& g : groups) w = std::max(w, g.max_rel_error);
  return w;
}

AuditReport grad_audit(const FlowModel& model, std::span<const Tensor> batch, double h, double tolerance,
                       std::size_t max_per_tensor, std::uint64_t seed) {
  if (!(h > 0) || !std::isfinite(h)) throw InvalidArgument("grad_audit: step h must be positive");
  if (!(tolerance > 0)) throw InvalidArgument("grad_audit: tolerance must be positive");
  const double dims = static_cast<double>(model.config().dims());
  // Per-example nats keeps gradients O(1) regardless of input size.
  LossAndGrad lg = backward(model, batch);
  for_each_tensor(lg.grads, [&](const std::string&, Tensor& t) { t *= dims; });

  FlowModel probe = model;
  auto objective = [&] { return nll(probe, batch).loss * dims; };

  std::vector<std::pair<std::string, Tensor*>> params;
  for_each_tensor(probe.params(), [&](const std::string& n, Tensor& t) { params.emplace_back(n, &t); });
  std::vector<const Tensor*> grads;
  for_each_tensor(std::as_const(lg.grads), [&](const std::string&, const Tensor& t) { grads.push_back(&t); });

  AuditReport report;
  report.tolerance = tolerance;
  Rng pick(seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].second->data();
    const auto analytic = grads[p]->data();
    std::vector<std::size_t> entries(values.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (max_per_tensor > 0 && entries.size() > max_per_tensor) {
      for (std::size_t i = 0; i < max_per_tensor; ++i)
        std::swap(entries[i], entries[i + pick.below(entries.size() - i)]);
      entries.resize(max_per_tensor);
    }
    AuditGroup group{params[p].first, 0.0, 0};
    for (std::size_t j : entries) {
      const double orig = values[j];
      values[j] = orig + h;
      const double up = objective();
      values[j] = orig - h;
      const double down = objective();
      values[j] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[j]), std::abs(numeric), kAuditFloor});
      group.max_rel_error = std::max(group.max_rel_error, std::abs(analytic[j] - numeric) / denom);
      ++group.checked;
    }
    report.groups.push_back(group);
  }
  return report;
}

}  // namespace speechflow
