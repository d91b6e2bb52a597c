#pragma once

#include <functional>

#include "stmtl/tensor.hpp"

namespace stmtl {

/// Compares analytic gradients of the scalar-valued f against central
/// differences over every coordinate of every tensor in `wrt`, which must be
/// f64. Returns max over coordinates of |analytic - numeric| / max(1, |numeric|).
/// Coordinates are perturbed in place and restored.
double gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt,
                 double eps = 1e-6);

/// Single-input form: f maps the input tensor to a scalar.
double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& input,
                 double eps = 1e-6);

}  // namespace stmtl
