#pragma once

#include <cstdint>
#include <vector>

#include "stmtl/tensor.hpp"

namespace stmtl {

/// Class-index map, the segmentation target (values in [0, K)).
struct ClassMap {
  std::int64_t n = 1, h = 0, w = 0;
  std::vector<std::int32_t> v;

  std::int64_t numel() const { return n * h * w; }
  std::int32_t at(std::int64_t ni, std::int64_t y, std::int64_t x) const {
    return v[static_cast<size_t>((ni * h + y) * w + x)];
  }
};

/// Mean over pixels of -log softmax(logits)[target].
Tensor cross_entropy_multiclass(const Tensor& logits, const ClassMap& target);

/// Mean of -[t log p + (1-t) log(1-p)], p clamped to [1e-7, 1-1e-7].
Tensor bce_loss(const Tensor& pred, const Tensor& target);

/// Pixel-grid probability measure. from_map shifts negative mass to zero,
/// normalizes to unit sum, and substitutes uniform for an all-zero map.
struct ProbMap {
  Tensor weights;  // [h,w], nonnegative, sums to 1
  double total = 0.0;

  static ProbMap from_map(const Tensor& map2d);
};

/// alpha * Sinkhorn(down(target), down(pred)) + (1-alpha) * BCE(pred, target),
/// the Sinkhorn term averaged over the batch on 1/down-per-side maps.
Tensor saliency_loss(const Tensor& pred, const Tensor& target, double alpha = 0.3,
                     double sinkhorn_eps = 0.1, int sinkhorn_iters = 50, int down_factor = 4);

}  // namespace stmtl
