#pragma once

#include <vector>

#include "stmtl/losses.hpp"
#include "stmtl/tensor.hpp"

namespace stmtl {

/// Euclidean distances between pixel centers of an h x w grid, row-major on
/// both sides (unit: one pixel).
std::vector<double> grid_cost_matrix(std::int64_t h, std::int64_t w);

/// Differentiable entropic transport objective <plan,C> - eps*H(plan) between
/// two normalized maps over their own pixel grid. Runs `iters` fixed
/// row-then-column sweeps of log-domain scaling; gradients unroll the same
/// iteration count in reverse over the stored potentials.
Tensor sinkhorn_loss(const Tensor& mu, const Tensor& nu, double eps, int iters);
Tensor sinkhorn_loss(const ProbMap& mu, const ProbMap& nu, double eps, int iters);

/// Non-differentiating evaluation exposing the plan, its marginals, and the
/// bare transport cost <plan,C> for oracle comparison.
struct SinkhornResult {
  double objective = 0.0;  // <plan,C> - eps*H(plan)
  double plan_cost = 0.0;  // <plan,C>
  double entropy = 0.0;    // H(plan)
  std::vector<double> plan;
  std::vector<double> row_marginals, col_marginals;
};
SinkhornResult sinkhorn_analyze(const Tensor& mu, const Tensor& nu, double eps, int iters);

}  // namespace stmtl
