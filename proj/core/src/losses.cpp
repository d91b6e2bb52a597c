#include "stmtl/losses.hpp"

#include <algorithm>
#include <cmath>

#include "stmtl/ops.hpp"
#include "stmtl/sinkhorn.hpp"

namespace stmtl {

Tensor cross_entropy_multiclass(const Tensor& logits, const ClassMap& target) {
  if (logits.ndim() != 4)
    throw ShapeError("cross_entropy: logits must be [N,K,H,W], got " + shape_str(logits.dims()));
  const std::int64_t N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  if (target.n != N || target.h != H || target.w != W)
    throw ShapeError("cross_entropy: target map " + std::to_string(target.n) + "x" +
                     std::to_string(target.h) + "x" + std::to_string(target.w) +
                     " does not match logits " + shape_str(logits.dims()));
  for (auto c : target.v)
    if (c < 0 || c >= K)
      throw ContractError("cross_entropy: class index " + std::to_string(c) + " outside [0," +
                          std::to_string(K) + ")");
  const std::int64_t pixels = N * H * W;
  const double* p = logits.data().data();
  const std::int64_t plane = H * W;
  double total = 0.0;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const std::int64_t base = n * K * plane + y * W + x;
        double mx = p[base];
        for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, p[base + k * plane]);
        double acc = 0.0;
        for (std::int64_t k = 0; k < K; ++k) acc += std::exp(p[base + k * plane] - mx);
        const double lse = mx + std::log(acc);
        total += lse - p[base + target.at(n, y, x) * plane];
      }
  auto li = logits.impl_ptr();
  auto tgt = std::make_shared<ClassMap>(target);
  return make_result({1}, logits.dtype(), {total / static_cast<double>(pixels)}, {logits},
                     [=](TensorImpl* self) {
                       return [=]() {
                         if (!li->wants_grad()) return;
                         li->ensure_grad();
                         const double g = self->grad[0] / static_cast<double>(pixels);
                         const double* v = li->data.data();
                         for (std::int64_t n = 0; n < N; ++n)
                           for (std::int64_t y = 0; y < H; ++y)
                             for (std::int64_t x = 0; x < W; ++x) {
                               const std::int64_t base = n * K * plane + y * W + x;
                               double mx = v[base];
                               for (std::int64_t k = 1; k < K; ++k)
                                 mx = std::max(mx, v[base + k * plane]);
                               double acc = 0.0;
                               for (std::int64_t k = 0; k < K; ++k)
                                 acc += std::exp(v[base + k * plane] - mx);
                               const std::int32_t cls = tgt->at(n, y, x);
                               for (std::int64_t k = 0; k < K; ++k) {
                                 const double soft = std::exp(v[base + k * plane] - mx) / acc;
                                 li->grad[static_cast<size_t>(base + k * plane)] +=
                                     g * (soft - (k == cls ? 1.0 : 0.0));
                               }
                             }
                       };
                     });
}

Tensor bce_loss(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "bce_loss");
  constexpr double kLo = 1e-7, kHi = 1.0 - 1e-7;
  const std::int64_t n = pred.numel();
  const double* p = pred.data().data();
  const double* t = target.data().data();
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double pc = std::clamp(p[i], kLo, kHi);
    total -= t[i] * std::log(pc) + (1.0 - t[i]) * std::log(1.0 - pc);
  }
  auto pi = pred.impl_ptr();
  auto ti = target.impl_ptr();
  return make_result({1}, pred.dtype(), {total / static_cast<double>(n)}, {pred, target},
                     [=](TensorImpl* self) {
                       return [=]() {
                         const double g = self->grad[0] / static_cast<double>(n);
                         if (pi->wants_grad()) {
                           pi->ensure_grad();
                           for (std::int64_t i = 0; i < n; ++i) {
                             const double v = pi->data[static_cast<size_t>(i)];
                             if (v <= kLo || v >= kHi) continue;  // clamped region
                             const double tv = ti->data[static_cast<size_t>(i)];
                             pi->grad[static_cast<size_t>(i)] +=
                                 g * (-tv / v + (1.0 - tv) / (1.0 - v));
                           }
                         }
                         if (ti->wants_grad()) {
                           ti->ensure_grad();
                           for (std::int64_t i = 0; i < n; ++i) {
                             const double pc = std::clamp(pi->data[static_cast<size_t>(i)], kLo, kHi);
                             ti->grad[static_cast<size_t>(i)] +=
                                 g * (std::log(1.0 - pc) - std::log(pc));
                           }
                         }
                       };
                     });
}

ProbMap ProbMap::from_map(const Tensor& map2d) {
  if (map2d.ndim() != 2)
    throw ContractError("ProbMap: expected a 2-d map, got " + shape_str(map2d.dims()));
  double lo = map2d.data()[0], total = 0.0;
  for (double v : map2d.data()) lo = std::min(lo, v);
  Tensor shifted = map2d;
  if (lo < 0.0) shifted = sub(map2d, Tensor::scalar(lo, map2d.dtype()));
  for (double v : shifted.data()) total += v;
  ProbMap out;
  out.total = total;
  if (total <= 0.0) {
    out.weights = Tensor::full(map2d.dims(), 1.0 / static_cast<double>(map2d.numel()),
                               map2d.dtype());
    return out;
  }
  out.weights = div(shifted, sum(shifted));
  return out;
}

Tensor saliency_loss(const Tensor& pred, const Tensor& target, double alpha, double sinkhorn_eps,
                     int sinkhorn_iters, int down_factor) {
  if (alpha < 0.0 || alpha > 1.0)
    throw ContractError("saliency_loss: alpha must be in [0,1], got " + std::to_string(alpha));
  check_same_shape(pred, target, "saliency_loss");
  if (pred.ndim() != 4 || pred.dim(1) != 1)
    throw ShapeError("saliency_loss: expected [N,1,H,W] maps, got " + shape_str(pred.dims()));
  for (double v : pred.data())
    if (v < -1e-3 || v > 1.0 + 1e-3)
      throw ContractError("saliency_loss: prediction outside [0,1]: " + std::to_string(v));

  Tensor bce = bce_loss(pred, target);
  if (alpha == 0.0) return bce;

  const std::int64_t N = pred.dim(0);
  const std::int64_t h = pred.dim(2) / down_factor, w = pred.dim(3) / down_factor;
  Tensor pred_small = avg_downsample(pred, down_factor);
  Tensor target_small = avg_downsample(target, down_factor);
  Tensor sk;
  for (std::int64_t i = 0; i < N; ++i) {
    ProbMap mu = ProbMap::from_map(reshape(select0(target_small, i), {h, w}));
    ProbMap nu = ProbMap::from_map(reshape(select0(pred_small, i), {h, w}));
    Tensor term = sinkhorn_loss(mu, nu, sinkhorn_eps, sinkhorn_iters);
    sk = sk.defined() ? add(sk, term) : term;
  }
  sk = scale(sk, 1.0 / static_cast<double>(N));
  if (alpha == 1.0) return sk;
  return add(scale(sk, alpha), scale(bce, 1.0 - alpha));
}

}  // namespace stmtl
