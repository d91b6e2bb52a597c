#include "stmtl/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace stmtl {

std::string shape_str(const std::vector<std::int64_t>& dims) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ",";
    os << dims[i];
  }
  os << "]";
  return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<TensorImpl> new_impl(std::vector<std::int64_t> dims, Dtype dtype,
                                     bool requires_grad) {
  for (auto d : dims)
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(dims));
  auto impl = std::make_shared<TensorImpl>();
  impl->dims = std::move(dims);
  impl->dtype = dtype;
  impl->requires_grad = requires_grad;
  return impl;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(std::vector<std::int64_t> dims, Dtype dtype, bool requires_grad) {
  auto impl = new_impl(std::move(dims), dtype, requires_grad);
  impl->data.assign(static_cast<size_t>(impl->numel()), 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<std::int64_t> dims, double value, Dtype dtype,
                    bool requires_grad) {
  auto impl = new_impl(std::move(dims), dtype, requires_grad);
  impl->data.assign(static_cast<size_t>(impl->numel()), value);
  impl->round_data();
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(std::vector<double> data, std::vector<std::int64_t> dims, Dtype dtype,
                         bool requires_grad) {
  auto impl = new_impl(std::move(dims), dtype, requires_grad);
  if (static_cast<std::int64_t>(data.size()) != impl->numel())
    throw ShapeError("payload length " + std::to_string(data.size()) + " does not match dims " +
                     shape_str(impl->dims));
  impl->data = std::move(data);
  impl->round_data();
  return Tensor(std::move(impl));
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(dims()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  if (static_cast<int>(idx.size()) != ndim())
    throw ContractError("at(): index rank mismatch for shape " + shape_str(dims()));
  std::int64_t off = 0;
  int i = 0;
  for (auto v : idx) {
    if (v < 0 || v >= impl_->dims[static_cast<size_t>(i)])
      throw ContractError("at(): index out of range");
    off = off * impl_->dims[static_cast<size_t>(i)] + v;
    ++i;
  }
  return impl_->data[static_cast<size_t>(off)];
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->dims = impl_->dims;
  impl->dtype = impl_->dtype;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  auto t = detach();
  t.impl()->requires_grad = impl_->requires_grad;
  return t;
}

void Tensor::backward() const {
  Graph g = Graph::build(*this);
  g.backward();
}

Graph Graph::build(const Tensor& root) {
  if (!root.defined()) throw ContractError("backward: undefined root");
  if (root.numel() != 1)
    throw ContractError("backward requires a scalar root, got " + shape_str(root.dims()));
  Graph g;
  g.root_ = root;
  // Iterative post-order DFS over parents; parents order fixes determinism.
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    std::shared_ptr<TensorImpl> node;
    size_t next_parent = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({root.impl_ptr()});
  visited.insert(root.impl());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      auto p = f.node->parents[f.next_parent++];
      if (!visited.count(p.get())) {
        visited.insert(p.get());
        stack.push_back({std::move(p)});
      }
    } else {
      g.topo_.push_back(f.node);
      stack.pop_back();
    }
  }
  return g;
}

void Graph::backward() {
  // Cotangents of recorded (non-leaf) nodes are per-pass temporaries; only
  // leaf gradients persist, so repeated backward accumulates leaf grads.
  for (auto& n : topo_)
    if (n->in_graph()) n->grad.clear();
  TensorImpl* root = root_.impl();
  root->ensure_grad();
  root->grad[0] += 1.0;
  root->round_grad();
  for (auto it = topo_.rbegin(); it != topo_.rend(); ++it) {
    TensorImpl* node = it->get();
    if (node->backward_fn && !node->grad.empty()) {
      node->backward_fn();
      for (auto& p : node->parents) p->round_grad();
    }
  }
}

void Graph::zero_grads() {
  for (auto& n : topo_) n->grad.clear();
}

bool Graph::contains(const Tensor& t) const {
  for (auto& n : topo_)
    if (n.get() == t.impl()) return true;
  return false;
}

Tensor make_result(std::vector<std::int64_t> dims, Dtype dtype, std::vector<double> data,
                   const std::vector<Tensor>& parents,
                   const std::function<std::function<void()>(TensorImpl*)>& make_backward) {
  auto impl = new_impl(std::move(dims), dtype, false);
  if (static_cast<std::int64_t>(data.size()) != impl->numel())
    throw ShapeError("op result payload does not match dims " + shape_str(impl->dims));
  impl->data = std::move(data);
  impl->round_data();
  bool record = g_grad_enabled;
  if (record) {
    record = false;
    for (const auto& p : parents)
      if (p.defined() && p.impl()->wants_grad()) {
        record = true;
        break;
      }
  }
  if (record) {
    for (const auto& p : parents)
      if (p.defined()) impl->parents.push_back(p.impl_ptr());
    impl->backward_fn = make_backward(impl.get());
  }
  return Tensor(std::move(impl));
}

void accumulate_grad(TensorImpl* t, std::span<const double> contribution, double scale) {
  if (!t->wants_grad()) return;
  t->ensure_grad();
  const size_t n = t->grad.size();
  for (size_t i = 0; i < n; ++i) t->grad[i] += scale * contribution[i];
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dims() != b.dims())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.dims()) + " vs " +
                     shape_str(b.dims()));
}

}  // namespace stmtl
