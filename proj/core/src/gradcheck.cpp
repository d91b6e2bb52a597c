#include "stmtl/gradcheck.hpp"

#include <cmath>

namespace stmtl {

double gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt, double eps) {
  if (eps <= 0.0) throw ContractError("gradcheck: eps must be positive");
  for (const auto& w : wrt) {
    if (w.dtype() != Dtype::f64) throw ContractError("gradcheck requires f64 inputs");
    if (!w.requires_grad()) throw ContractError("gradcheck: input does not require grad");
  }
  for (const auto& w : wrt) const_cast<Tensor&>(w).zero_grad();

  Tensor y = f();
  if (y.numel() != 1) throw ContractError("gradcheck: f must be scalar-valued");
  y.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(wrt.size());
  for (const auto& w : wrt) analytic.push_back(w.grad_to_vector());

  double max_err = 0.0;
  NoGradGuard ng;
  for (size_t wi = 0; wi < wrt.size(); ++wi) {
    Tensor w = wrt[wi];
    auto data = w.mutable_data();
    for (size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double y1 = f().item();
      data[i] = saved - eps;
      const double y2 = f().item();
      data[i] = saved;
      const double numeric = (y1 - y2) / (2.0 * eps);
      const double a = analytic[wi][i];
      if (!std::isfinite(numeric) || !std::isfinite(a))
        throw NumericError("gradcheck: non-finite derivative encountered");
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      if (err > max_err) max_err = err;
    }
  }
  return max_err;
}

double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& input, double eps) {
  Tensor in = input;
  return gradcheck([&]() { return f(in); }, {in}, eps);
}

}  // namespace stmtl
