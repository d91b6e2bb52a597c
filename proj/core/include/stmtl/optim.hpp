#pragma once

#include <string>
#include <vector>

#include "stmtl/model.hpp"

namespace stmtl {

/// base_lr * (1 - iter/max_iter)^power.
double poly_lr(double base_lr, int iter, int max_iter, double power = 0.9);

/// True once the best entry has not improved by more than min_delta for
/// `patience` consecutive epochs. Entries are higher-is-better; callers
/// negate losses. Empty history is never converged.
bool converged(const std::vector<double>& history, int patience = 5, double min_delta = 1e-4);

struct AdamConfig {
  double beta1 = 0.99;  // the paper-style momentum; 0.9 is the conventional value
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // added to the raw gradient (L2 style)
};

/// Adam with bias correction over the unfrozen trainable entries of the given
/// groups. Frozen groups are not registered at all, so their parameters stay
/// bit-identical across any number of steps.
class Adam {
 public:
  Adam(ParamGroups& groups, const AdamConfig& config);

  /// Applies one update using gradients accumulated on the parameters, then
  /// leaves gradients untouched (callers zero them per minibatch).
  void step(double lr);
  void zero_grad();
  int step_count() const { return step_; }
  size_t size() const { return params_.size(); }

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
  };
  std::vector<Slot> params_;
  AdamConfig config_;
  int step_ = 0;
};

}  // namespace stmtl
