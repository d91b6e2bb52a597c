#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "stmtl/common.hpp"

namespace stmtl {

class Tensor;

/// Reverse-mode autodiff node. Tensors are shared handles to one of these;
/// non-leaf nodes keep their parents alive and carry a closure that pushes
/// this node's gradient into the parents' gradient buffers.
struct TensorImpl {
  std::vector<std::int64_t> dims;
  Dtype dtype = Dtype::f64;
  bool requires_grad = false;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation

  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void()> backward_fn;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  bool in_graph() const { return static_cast<bool>(backward_fn); }
  bool wants_grad() const { return requires_grad || in_graph(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(static_cast<size_t>(numel()), 0.0);
  }
  // f32 tensors hold values rounded to float precision; math runs in double.
  void round_data() {
    if (dtype == Dtype::f32)
      for (auto& v : data) v = static_cast<double>(static_cast<float>(v));
  }
  void round_grad() {
    if (dtype == Dtype::f32)
      for (auto& v : grad) v = static_cast<double>(static_cast<float>(v));
  }
};

/// Dense n-dimensional array (row major) with optional gradient tracking.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<std::int64_t> dims, Dtype dtype = Dtype::f64,
                      bool requires_grad = false);
  static Tensor full(std::vector<std::int64_t> dims, double value, Dtype dtype = Dtype::f64,
                     bool requires_grad = false);
  static Tensor ones(std::vector<std::int64_t> dims, Dtype dtype = Dtype::f64,
                     bool requires_grad = false) {
    return full(std::move(dims), 1.0, dtype, requires_grad);
  }
  static Tensor scalar(double value, Dtype dtype = Dtype::f64, bool requires_grad = false) {
    return full({1}, value, dtype, requires_grad);
  }
  static Tensor from_data(std::vector<double> data, std::vector<std::int64_t> dims,
                          Dtype dtype = Dtype::f64, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::int64_t>& dims() const { return impl_->dims; }
  std::int64_t dim(int i) const { return impl_->dims.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(impl_->dims.size()); }
  std::int64_t numel() const { return impl_->numel(); }
  Dtype dtype() const { return impl_->dtype; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  std::span<const double> data() const { return impl_->data; }
  /// Direct mutation is only legal on tensors outside a recorded graph
  /// (parameters between steps, freshly built constants).
  std::span<double> mutable_data() { return impl_->data; }
  /// Re-applies the dtype rounding after direct mutation.
  void round_to_dtype() { impl_->round_data(); }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad_data() const { return impl_->grad; }
  std::vector<double> grad_to_vector() const {
    if (impl_->grad.empty()) return std::vector<double>(static_cast<size_t>(numel()), 0.0);
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }

  double item() const;
  double at(std::initializer_list<std::int64_t> idx) const;

  /// Value copy without graph history.
  Tensor detach() const;
  Tensor clone() const;

  void backward() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Recorded operations reachable from a scalar root, in topological order
/// (root last). Running backward visits each node exactly once; clearing
/// gradients never touches parameter values.
class Graph {
 public:
  static Graph build(const Tensor& root);
  /// Seeds the root gradient with 1 (accumulating) and propagates.
  void backward();
  void zero_grads();
  const std::vector<std::shared_ptr<TensorImpl>>& nodes() const { return topo_; }
  bool contains(const Tensor& t) const;

 private:
  Tensor root_;
  std::vector<std::shared_ptr<TensorImpl>> topo_;
};

/// Globally disables graph recording while alive (evaluation, numeric
/// differentiation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

/// Builds an op result node: rounds to dtype, and if grad is enabled and any
/// parent wants a gradient, records parents and the backward closure factory.
/// The factory receives the new node and returns the closure to store.
Tensor make_result(std::vector<std::int64_t> dims, Dtype dtype, std::vector<double> data,
                   const std::vector<Tensor>& parents,
                   const std::function<std::function<void()>(TensorImpl*)>& make_backward);

/// Adds `contribution[i] * scale` into t's gradient buffer (allocating it on
/// first use) and re-rounds for f32 tensors.
void accumulate_grad(TensorImpl* t, std::span<const double> contribution, double scale = 1.0);

void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace stmtl
