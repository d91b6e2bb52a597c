#pragma once

#include <string_view>
#include <vector>

#include "stmtl/tensor.hpp"

namespace stmtl {

/// 2-D convolution. kernel is [F, C, kh, kw]; output H' = (H + 2p - kh)/s + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int pad);
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad);

/// Transposed convolution, the adjoint of conv2d. kernel is [C, F, kh, kw]
/// with C the input channels; output H' = (H - 1)s - 2p + kh.
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, int stride, int pad);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

// Binary ops accept equal shapes, a scalar side, or the two gate broadcasts
// [N,C,1,1] and [N,1,H,W] against [N,C,H,W].
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
inline Tensor hadamard(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);

/// Name-dispatched elementwise surface: sigmoid/tanh/relu/exp/log take one
/// argument; add/sub/mul/hadamard/div two; scale takes (tensor, scalar tensor).
Tensor elementwise(std::string_view name, const std::vector<Tensor>& args);

Tensor global_avg_pool(const Tensor& x);                // [N,C,H,W] -> [N,C,1,1]
Tensor avg_downsample(const Tensor& x, int factor);     // block mean over factor x factor
Tensor sum(const Tensor& x);                            // -> scalar [1]
Tensor mean(const Tensor& x);                           // -> scalar [1]
Tensor pool_reduce(std::string_view name, const Tensor& x, int factor = 0);

Tensor concat(const std::vector<Tensor>& tensors, int axis);
Tensor select0(const Tensor& x, std::int64_t index);    // narrow to one slice of dim 0
Tensor reshape(const Tensor& x, std::vector<std::int64_t> dims);

/// Batch normalization over (N,H,W) per channel. Training mode normalizes by
/// batch statistics (biased variance) and, when update_stats is set, folds
/// them into the running buffers in place. Eval mode uses the running stats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor running_mean,
                  Tensor running_var, bool training, double momentum, double eps,
                  bool update_stats);

}  // namespace stmtl
