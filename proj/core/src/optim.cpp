#include "stmtl/optim.hpp"

#include <cmath>

namespace stmtl {

double poly_lr(double base_lr, int iter, int max_iter, double power) {
  if (iter < 0 || max_iter <= 0 || iter > max_iter)
    throw ContractError("poly_lr: need 0 <= iter <= max_iter, got iter=" + std::to_string(iter) +
                        " max_iter=" + std::to_string(max_iter));
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter),
                            power);
}

bool converged(const std::vector<double>& history, int patience, double min_delta) {
  if (patience < 1) throw ContractError("converged: patience must be >= 1");
  if (history.empty()) return false;
  double best = -std::numeric_limits<double>::infinity();
  int stale = 0;
  for (double v : history) {
    if (v > best + min_delta) {
      best = v;
      stale = 0;
    } else {
      ++stale;
    }
  }
  return stale >= patience;
}

Adam::Adam(ParamGroups& groups, const AdamConfig& config) : config_(config) {
  for (const char* name : {"sh", "s", "t"}) {
    if (groups.frozen.count(name)) continue;
    for (auto& e : groups.group(name)) {
      if (!e.trainable) continue;
      Slot slot;
      slot.name = e.name;
      slot.param = e.tensor;
      slot.m.assign(static_cast<size_t>(e.tensor.numel()), 0.0);
      slot.v.assign(static_cast<size_t>(e.tensor.numel()), 0.0);
      params_.push_back(std::move(slot));
    }
  }
}

void Adam::step(double lr) {
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, step_);
  const double bc2 = 1.0 - std::pow(config_.beta2, step_);
  for (auto& slot : params_) {
    if (!slot.param.has_grad()) continue;  // no gradient reached this tensor
    auto w = slot.param.mutable_data();
    auto g = slot.param.grad_data();
    for (size_t i = 0; i < w.size(); ++i) {
      double grad = g[i];
      if (!std::isfinite(grad))
        throw NumericError("adam: non-finite gradient in " + slot.name);
      grad += config_.weight_decay * w[i];
      slot.m[i] = config_.beta1 * slot.m[i] + (1.0 - config_.beta1) * grad;
      slot.v[i] = config_.beta2 * slot.v[i] + (1.0 - config_.beta2) * grad * grad;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
    slot.param.round_to_dtype();
  }
}

void Adam::zero_grad() {
  for (auto& slot : params_) slot.param.zero_grad();
}

}  // namespace stmtl
