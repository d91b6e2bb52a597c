#pragma once

#include <vector>

#include "stmtl/common.hpp"

namespace stmtl {

struct Point2 {
  double x = 0.0, y = 0.0;
};

/// Exact optimal transport cost for small discrete measures (supports of at
/// most 10 points each) solved as min-cost flow by successive shortest paths.
double exact_ot_cost(const std::vector<double>& mu, const std::vector<double>& nu,
                     const std::vector<double>& cost);

/// Euclidean ground-cost convenience overload.
double exact_ot_cost(const std::vector<double>& mu, const std::vector<Point2>& mu_pts,
                     const std::vector<double>& nu, const std::vector<Point2>& nu_pts);

}  // namespace stmtl
