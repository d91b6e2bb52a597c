#include "stmtl/ops.hpp"

#include <array>
#include <cmath>
#include <cstring>

#include "stmtl/parallel.hpp"

namespace stmtl {

namespace {

void check_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw ContractError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                        dtype_name(b.dtype()));
}

struct Dim4 {
  std::int64_t n, c, h, w;
};

Dim4 dim4(const Tensor& t, const char* op) {
  if (t.ndim() != 4)
    throw ShapeError(std::string(op) + ": expected 4-d tensor, got " + shape_str(t.dims()));
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

// out[n,f,oy,ox] = bias[f] + sum_{c,u,v} x[n,c,oy*s-p+u, ox*s-p+v] * k[f,c,u,v]
void conv_fwd_kernel(double* out, const double* x, const double* k, const double* bias,
                     std::int64_t N, std::int64_t C, std::int64_t H, std::int64_t W,
                     std::int64_t F, std::int64_t kh, std::int64_t kw, std::int64_t s,
                     std::int64_t p, std::int64_t OH, std::int64_t OW) {
  parallel_for(N * F, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t nf = lo; nf < hi; ++nf) {
      const std::int64_t n = nf / F, f = nf % F;
      const double* kf = k + f * C * kh * kw;
      double* o = out + (n * F + f) * OH * OW;
      for (std::int64_t oy = 0; oy < OH; ++oy) {
        for (std::int64_t ox = 0; ox < OW; ++ox) {
          double acc = bias ? bias[f] : 0.0;
          for (std::int64_t c = 0; c < C; ++c) {
            const double* xc = x + (n * C + c) * H * W;
            const double* kc = kf + c * kh * kw;
            for (std::int64_t u = 0; u < kh; ++u) {
              const std::int64_t iy = oy * s - p + u;
              if (iy < 0 || iy >= H) continue;
              const double* xrow = xc + iy * W;
              const double* krow = kc + u * kw;
              for (std::int64_t v = 0; v < kw; ++v) {
                const std::int64_t ix = ox * s - p + v;
                if (ix < 0 || ix >= W) continue;
                acc += xrow[ix] * krow[v];
              }
            }
          }
          o[oy * OW + ox] = acc;
        }
      }
    }
  });
}

// gx[n,c,a,b] += sum over (f,u,v) with oy=(a+p-u)/s, ox=(b+p-v)/s integral and
// in range of gy[n,f,oy,ox] * k[f,c,u,v]. Gather form: each input cell is
// written by exactly one thread.
void conv_input_grad_kernel(double* gx, const double* gy, const double* k, std::int64_t N,
                            std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t F,
                            std::int64_t kh, std::int64_t kw, std::int64_t s, std::int64_t p,
                            std::int64_t OH, std::int64_t OW) {
  parallel_for(N * C, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t nc = lo; nc < hi; ++nc) {
      const std::int64_t n = nc / C, c = nc % C;
      double* g = gx + (n * C + c) * H * W;
      for (std::int64_t a = 0; a < H; ++a) {
        for (std::int64_t b = 0; b < W; ++b) {
          double acc = 0.0;
          for (std::int64_t u = 0; u < kh; ++u) {
            const std::int64_t ya = a + p - u;
            if (ya < 0 || ya % s != 0) continue;
            const std::int64_t oy = ya / s;
            if (oy >= OH) continue;
            for (std::int64_t v = 0; v < kw; ++v) {
              const std::int64_t xb = b + p - v;
              if (xb < 0 || xb % s != 0) continue;
              const std::int64_t ox = xb / s;
              if (ox >= OW) continue;
              for (std::int64_t f = 0; f < F; ++f)
                acc += gy[((n * F + f) * OH + oy) * OW + ox] * k[((f * C + c) * kh + u) * kw + v];
            }
          }
          g[a * W + b] += acc;
        }
      }
    }
  });
}

// gk[f,c,u,v] += sum_{n,oy,ox} gy[n,f,oy,ox] * x[n,c,oy*s-p+u, ox*s-p+v]
void conv_weight_grad_kernel(double* gk, const double* gy, const double* x, std::int64_t N,
                             std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t F,
                             std::int64_t kh, std::int64_t kw, std::int64_t s, std::int64_t p,
                             std::int64_t OH, std::int64_t OW) {
  parallel_for(F * C, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t fc = lo; fc < hi; ++fc) {
      const std::int64_t f = fc / C, c = fc % C;
      double* g = gk + (f * C + c) * kh * kw;
      for (std::int64_t u = 0; u < kh; ++u) {
        for (std::int64_t v = 0; v < kw; ++v) {
          double acc = 0.0;
          for (std::int64_t n = 0; n < N; ++n) {
            const double* gyn = gy + (n * F + f) * OH * OW;
            const double* xn = x + (n * C + c) * H * W;
            for (std::int64_t oy = 0; oy < OH; ++oy) {
              const std::int64_t iy = oy * s - p + u;
              if (iy < 0 || iy >= H) continue;
              for (std::int64_t ox = 0; ox < OW; ++ox) {
                const std::int64_t ix = ox * s - p + v;
                if (ix < 0 || ix >= W) continue;
                acc += gyn[oy * OW + ox] * xn[iy * W + ix];
              }
            }
          }
          g[u * kw + v] += acc;
        }
      }
    }
  });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int pad) {
  const Dim4 xd = dim4(input, "conv2d");
  const Dim4 kd = dim4(kernel, "conv2d kernel");
  check_dtype(input, kernel, "conv2d");
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (pad < 0) throw ContractError("conv2d: pad must be >= 0");
  if (kd.c != xd.c)
    throw ShapeError("conv2d: kernel channels " + shape_str(kernel.dims()) +
                     " do not match input " + shape_str(input.dims()));
  if (kd.h > xd.h + 2 * pad || kd.w > xd.w + 2 * pad)
    throw ShapeError("conv2d: kernel " + shape_str(kernel.dims()) + " larger than padded input " +
                     shape_str(input.dims()));
  if (bias.defined()) {
    check_dtype(input, bias, "conv2d");
    if (bias.ndim() != 1 || bias.dim(0) != kd.n)
      throw ShapeError("conv2d: bias " + shape_str(bias.dims()) + " does not match filters " +
                       std::to_string(kd.n));
  }
  const std::int64_t OH = (xd.h + 2 * pad - kd.h) / stride + 1;
  const std::int64_t OW = (xd.w + 2 * pad - kd.w) / stride + 1;
  std::vector<double> out(static_cast<size_t>(xd.n * kd.n * OH * OW));
  conv_fwd_kernel(out.data(), input.data().data(), kernel.data().data(),
                  bias.defined() ? bias.data().data() : nullptr, xd.n, xd.c, xd.h, xd.w, kd.n,
                  kd.h, kd.w, stride, pad, OH, OW);

  auto xi = input.impl_ptr();
  auto ki = kernel.impl_ptr();
  auto bi = bias.defined() ? bias.impl_ptr() : nullptr;
  return make_result(
      {xd.n, kd.n, OH, OW}, input.dtype(), std::move(out), {input, kernel, bias},
      [=](TensorImpl* self) {
        return [=]() {
          const double* gy = self->grad.data();
          if (xi->wants_grad()) {
            xi->ensure_grad();
            conv_input_grad_kernel(xi->grad.data(), gy, ki->data.data(), xd.n, xd.c, xd.h, xd.w,
                                   kd.n, kd.h, kd.w, stride, pad, OH, OW);
          }
          if (ki->wants_grad()) {
            ki->ensure_grad();
            conv_weight_grad_kernel(ki->grad.data(), gy, xi->data.data(), xd.n, xd.c, xd.h, xd.w,
                                    kd.n, kd.h, kd.w, stride, pad, OH, OW);
          }
          if (bi && bi->wants_grad()) {
            bi->ensure_grad();
            for (std::int64_t n = 0; n < xd.n; ++n)
              for (std::int64_t f = 0; f < kd.n; ++f) {
                double acc = 0.0;
                const double* gyp = gy + (n * kd.n + f) * OH * OW;
                for (std::int64_t i = 0; i < OH * OW; ++i) acc += gyp[i];
                bi->grad[static_cast<size_t>(f)] += acc;
              }
          }
        };
      });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  return conv2d(input, kernel, Tensor(), stride, pad);
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  const Dim4 xd = dim4(input, "conv_transpose2d");
  const Dim4 kd = dim4(kernel, "conv_transpose2d kernel");
  check_dtype(input, kernel, "conv_transpose2d");
  if (stride < 1) throw ContractError("conv_transpose2d: stride must be >= 1");
  if (pad < 0) throw ContractError("conv_transpose2d: pad must be >= 0");
  if (kd.n != xd.c)
    throw ShapeError("conv_transpose2d: kernel " + shape_str(kernel.dims()) +
                     " does not match input channels " + shape_str(input.dims()));
  const std::int64_t F = kd.c;
  const std::int64_t OH = (xd.h - 1) * stride - 2 * pad + kd.h;
  const std::int64_t OW = (xd.w - 1) * stride - 2 * pad + kd.w;
  if (OH <= 0 || OW <= 0)
    throw ShapeError("conv_transpose2d: non-positive output for input " + shape_str(input.dims()) +
                     " kernel " + shape_str(kernel.dims()));
  // Forward of the transpose is the conv input-gradient gather with the
  // kernel's first axis indexing this op's input channels.
  std::vector<double> out(static_cast<size_t>(xd.n * F * OH * OW), 0.0);
  conv_input_grad_kernel(out.data(), input.data().data(), kernel.data().data(), xd.n, F, OH, OW,
                         xd.c, kd.h, kd.w, stride, pad, xd.h, xd.w);

  auto xi = input.impl_ptr();
  auto ki = kernel.impl_ptr();
  return make_result(
      {xd.n, F, OH, OW}, input.dtype(), std::move(out), {input, kernel},
      [=](TensorImpl* self) {
        return [=]() {
          const double* gz = self->grad.data();
          if (xi->wants_grad()) {
            xi->ensure_grad();
            // d input = conv forward of the out-gradient with the same kernel.
            std::vector<double> tmp(static_cast<size_t>(xd.n * xd.c * xd.h * xd.w));
            conv_fwd_kernel(tmp.data(), gz, ki->data.data(), nullptr, xd.n, F, OH, OW, xd.c, kd.h,
                            kd.w, stride, pad, xd.h, xd.w);
            for (size_t i = 0; i < tmp.size(); ++i) xi->grad[i] += tmp[i];
          }
          if (ki->wants_grad()) {
            ki->ensure_grad();
            // gk[c,f,u,v] = sum_{n,i,j} x[n,c,i,j] * gz[n,f,i*s-p+u, j*s-p+v]
            conv_weight_grad_kernel(ki->grad.data(), xi->data.data(), gz, xd.n, F, OH, OW, xd.c,
                                    kd.h, kd.w, stride, pad, xd.h, xd.w);
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

template <typename Fwd, typename Dfn>
Tensor unary_op(const Tensor& x, const char* name, Fwd f, Dfn dfdx_from_xy) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = f(v);
  auto xi = x.impl_ptr();
  return make_result(x.dims(), x.dtype(), std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      if (!xi->wants_grad()) return;
      xi->ensure_grad();
      const size_t n = xi->grad.size();
      for (size_t i = 0; i < n; ++i)
        xi->grad[i] += self->grad[i] * dfdx_from_xy(xi->data[i], self->data[i]);
    };
  });
}

// Index plans for the accepted broadcast patterns.
struct BinaryPlan {
  std::int64_t n = 1, c = 1, h = 1, w = 1;
  std::array<std::int64_t, 4> sa{}, sb{};
};

BinaryPlan binary_plan(const Tensor& a, const Tensor& b, const char* op) {
  BinaryPlan p;
  auto fill = [](const Tensor& t, std::array<std::int64_t, 4>& s, const Dim4& d,
                 const Dim4& od) {
    (void)t;
    s[3] = d.w == od.w ? 1 : 0;
    s[2] = d.h == od.h ? d.w : 0;
    s[1] = d.c == od.c ? d.h * d.w : 0;
    s[0] = d.n == od.n ? d.c * d.h * d.w : 0;
  };
  if (a.dims() == b.dims()) {
    p.n = a.numel();
    p.sa = {0, 0, 0, 1};
    p.sb = {0, 0, 0, 1};
    p.c = p.h = 1;
    p.w = 1;
    // treat as flat: n counts elements, w stride 1 handled by caller fast path
    return p;
  }
  if (a.numel() == 1 || b.numel() == 1) {
    const Tensor& big = a.numel() == 1 ? b : a;
    p.n = big.numel();
    p.sa = {0, 0, 0, a.numel() == 1 ? 0 : 1};
    p.sb = {0, 0, 0, b.numel() == 1 ? 0 : 1};
    return p;
  }
  if (a.ndim() == 4 && b.ndim() == 4) {
    Dim4 da{a.dim(0), a.dim(1), a.dim(2), a.dim(3)};
    Dim4 db{b.dim(0), b.dim(1), b.dim(2), b.dim(3)};
    Dim4 od{std::max(da.n, db.n), std::max(da.c, db.c), std::max(da.h, db.h),
            std::max(da.w, db.w)};
    auto ok = [&](const Dim4& d) {
      const bool channel_gate = d.n == od.n && d.c == od.c && d.h == 1 && d.w == 1;
      const bool spatial_gate = d.n == od.n && d.c == 1 && d.h == od.h && d.w == od.w;
      const bool exact = d.n == od.n && d.c == od.c && d.h == od.h && d.w == od.w;
      return channel_gate || spatial_gate || exact;
    };
    if (ok(da) && ok(db)) {
      p.n = od.n;
      p.c = od.c;
      p.h = od.h;
      p.w = od.w;
      fill(a, p.sa, da, od);
      fill(b, p.sb, db, od);
      return p;
    }
  }
  throw ShapeError(std::string(op) + ": shapes not broadcastable " + shape_str(a.dims()) +
                   " vs " + shape_str(b.dims()));
}

bool is_flat(const BinaryPlan& p) { return p.c == 1 && p.h == 1 && p.w == 1; }

template <typename Fwd, typename DA, typename DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, Fwd f, DA dda, DB ddb) {
  check_dtype(a, b, op);
  BinaryPlan p = binary_plan(a, b, op);
  std::vector<std::int64_t> odims;
  std::vector<double> out;
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  if (is_flat(p)) {
    odims = a.numel() >= b.numel() ? a.dims() : b.dims();
    out.resize(static_cast<size_t>(p.n));
    const std::int64_t za = p.sa[3], zb = p.sb[3];
    for (std::int64_t i = 0; i < p.n; ++i) out[static_cast<size_t>(i)] = f(pa[i * za], pb[i * zb]);
  } else {
    odims = {p.n, p.c, p.h, p.w};
    out.resize(static_cast<size_t>(p.n * p.c * p.h * p.w));
    std::int64_t o = 0;
    for (std::int64_t n = 0; n < p.n; ++n)
      for (std::int64_t c = 0; c < p.c; ++c)
        for (std::int64_t h = 0; h < p.h; ++h)
          for (std::int64_t w = 0; w < p.w; ++w, ++o)
            out[static_cast<size_t>(o)] = f(pa[n * p.sa[0] + c * p.sa[1] + h * p.sa[2] + w * p.sa[3]],
                                            pb[n * p.sb[0] + c * p.sb[1] + h * p.sb[2] + w * p.sb[3]]);
  }
  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  return make_result(std::move(odims), a.dtype(), std::move(out), {a, b}, [=](TensorImpl* self) {
    return [=]() {
      const bool ga = ai->wants_grad(), gb = bi->wants_grad();
      if (!ga && !gb) return;
      if (ga) ai->ensure_grad();
      if (gb) bi->ensure_grad();
      const double* gy = self->grad.data();
      const double* va = ai->data.data();
      const double* vb = bi->data.data();
      if (is_flat(p)) {
        const std::int64_t za = p.sa[3], zb = p.sb[3];
        for (std::int64_t i = 0; i < p.n; ++i) {
          const double xa = va[i * za], xb = vb[i * zb];
          if (ga) ai->grad[static_cast<size_t>(i * za)] += gy[i] * dda(xa, xb);
          if (gb) bi->grad[static_cast<size_t>(i * zb)] += gy[i] * ddb(xa, xb);
        }
      } else {
        std::int64_t o = 0;
        for (std::int64_t n = 0; n < p.n; ++n)
          for (std::int64_t c = 0; c < p.c; ++c)
            for (std::int64_t h = 0; h < p.h; ++h)
              for (std::int64_t w = 0; w < p.w; ++w, ++o) {
                const std::int64_t ia = n * p.sa[0] + c * p.sa[1] + h * p.sa[2] + w * p.sa[3];
                const std::int64_t ib = n * p.sb[0] + c * p.sb[1] + h * p.sb[2] + w * p.sb[3];
                if (ga) ai->grad[static_cast<size_t>(ia)] += gy[o] * dda(va[ia], vb[ib]);
                if (gb) bi->grad[static_cast<size_t>(ib)] += gy[o] * ddb(va[ia], vb[ib]);
              }
      }
    };
  });
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data())
    if (v <= 0.0) throw DomainError("log: non-positive entry " + std::to_string(v));
  return unary_op(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double c) {
  return unary_op(
      x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor elementwise(std::string_view name, const std::vector<Tensor>& args) {
  auto want = [&](size_t n) {
    if (args.size() != n)
      throw ContractError(std::string("elementwise ") + std::string(name) + ": expected " +
                          std::to_string(n) + " args, got " + std::to_string(args.size()));
  };
  if (name == "sigmoid") return want(1), sigmoid(args[0]);
  if (name == "tanh") return want(1), tanh(args[0]);
  if (name == "relu") return want(1), relu(args[0]);
  if (name == "exp") return want(1), exp(args[0]);
  if (name == "log") return want(1), log(args[0]);
  if (name == "add") return want(2), add(args[0], args[1]);
  if (name == "sub") return want(2), sub(args[0], args[1]);
  if (name == "mul" || name == "hadamard") return want(2), mul(args[0], args[1]);
  if (name == "div") return want(2), div(args[0], args[1]);
  if (name == "scale") return want(2), scale(args[0], args[1].item());
  throw ContractError("elementwise: unknown op '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Reductions and pooling

Tensor global_avg_pool(const Tensor& x) {
  const Dim4 d = dim4(x, "global_avg_pool");
  std::vector<double> out(static_cast<size_t>(d.n * d.c));
  const double inv = 1.0 / static_cast<double>(d.h * d.w);
  const double* px = x.data().data();
  for (std::int64_t i = 0; i < d.n * d.c; ++i) {
    double acc = 0.0;
    const double* p = px + i * d.h * d.w;
    for (std::int64_t j = 0; j < d.h * d.w; ++j) acc += p[j];
    out[static_cast<size_t>(i)] = acc * inv;
  }
  auto xi = x.impl_ptr();
  return make_result({d.n, d.c, 1, 1}, x.dtype(), std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      if (!xi->wants_grad()) return;
      xi->ensure_grad();
      const double inv2 = 1.0 / static_cast<double>(d.h * d.w);
      for (std::int64_t i = 0; i < d.n * d.c; ++i) {
        const double g = self->grad[static_cast<size_t>(i)] * inv2;
        double* p = xi->grad.data() + i * d.h * d.w;
        for (std::int64_t j = 0; j < d.h * d.w; ++j) p[j] += g;
      }
    };
  });
}

Tensor avg_downsample(const Tensor& x, int factor) {
  const Dim4 d = dim4(x, "avg_downsample");
  if (factor < 1) throw ContractError("avg_downsample: factor must be >= 1");
  if (d.h % factor != 0 || d.w % factor != 0)
    throw ShapeError("avg_downsample: dims " + shape_str(x.dims()) + " not divisible by factor " +
                     std::to_string(factor));
  const std::int64_t oh = d.h / factor, ow = d.w / factor;
  std::vector<double> out(static_cast<size_t>(d.n * d.c * oh * ow));
  const double inv = 1.0 / static_cast<double>(factor * factor);
  const double* px = x.data().data();
  std::int64_t o = 0;
  for (std::int64_t nc = 0; nc < d.n * d.c; ++nc) {
    const double* p = px + nc * d.h * d.w;
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox, ++o) {
        double acc = 0.0;
        for (std::int64_t u = 0; u < factor; ++u)
          for (std::int64_t v = 0; v < factor; ++v)
            acc += p[(oy * factor + u) * d.w + ox * factor + v];
        out[static_cast<size_t>(o)] = acc * inv;
      }
  }
  auto xi = x.impl_ptr();
  return make_result({d.n, d.c, oh, ow}, x.dtype(), std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      if (!xi->wants_grad()) return;
      xi->ensure_grad();
      const double inv2 = 1.0 / static_cast<double>(factor * factor);
      std::int64_t o2 = 0;
      for (std::int64_t nc = 0; nc < d.n * d.c; ++nc) {
        double* p = xi->grad.data() + nc * d.h * d.w;
        for (std::int64_t oy = 0; oy < oh; ++oy)
          for (std::int64_t ox = 0; ox < ow; ++ox, ++o2) {
            const double g = self->grad[static_cast<size_t>(o2)] * inv2;
            for (std::int64_t u = 0; u < factor; ++u)
              for (std::int64_t v = 0; v < factor; ++v)
                p[(oy * factor + u) * d.w + ox * factor + v] += g;
          }
      }
    };
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  auto xi = x.impl_ptr();
  return make_result({1}, x.dtype(), {acc}, {x}, [=](TensorImpl* self) {
    return [=]() {
      if (!xi->wants_grad()) return;
      xi->ensure_grad();
      const double g = self->grad[0];
      for (auto& v : xi->grad) v += g;
    };
  });
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  auto xi = x.impl_ptr();
  return make_result({1}, x.dtype(), {acc * inv}, {x}, [=](TensorImpl* self) {
    return [=]() {
      if (!xi->wants_grad()) return;
      xi->ensure_grad();
      const double g = self->grad[0] * inv;
      for (auto& v : xi->grad) v += g;
    };
  });
}

Tensor pool_reduce(std::string_view name, const Tensor& x, int factor) {
  if (name == "global_avg_pool") return global_avg_pool(x);
  if (name == "avg_downsample") return avg_downsample(x, factor);
  if (name == "sum") return sum(x);
  if (name == "mean") return mean(x);
  throw ContractError("pool_reduce: unknown op '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Structure

Tensor concat(const std::vector<Tensor>& tensors, int axis) {
  if (tensors.empty()) throw ContractError("concat: no inputs");
  const Tensor& first = tensors[0];
  const int nd = first.ndim();
  if (axis < 0 || axis >= nd) throw ContractError("concat: axis out of range");
  std::int64_t axis_total = 0;
  for (const auto& t : tensors) {
    if (t.ndim() != nd || t.dtype() != first.dtype())
      throw ShapeError("concat: rank/dtype mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != axis && t.dim(i) != first.dim(i))
        throw ShapeError("concat: non-axis dims differ " + shape_str(first.dims()) + " vs " +
                         shape_str(t.dims()));
    axis_total += t.dim(axis);
  }
  std::vector<std::int64_t> odims = first.dims();
  odims[static_cast<size_t>(axis)] = axis_total;

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= first.dim(i);
  for (int i = axis + 1; i < nd; ++i) inner *= first.dim(i);

  std::vector<double> out(static_cast<size_t>(outer * axis_total * inner));
  std::int64_t axis_off = 0;
  for (const auto& t : tensors) {
    const std::int64_t ax = t.dim(axis);
    const double* p = t.data().data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * axis_total + axis_off) * inner, p + o * ax * inner,
                  static_cast<size_t>(ax * inner) * sizeof(double));
    axis_off += ax;
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  std::vector<std::int64_t> axes;
  for (const auto& t : tensors) {
    impls.push_back(t.impl_ptr());
    axes.push_back(t.dim(axis));
  }
  return make_result(std::move(odims), first.dtype(), std::move(out), tensors,
                     [=](TensorImpl* self) {
                       return [=]() {
                         std::int64_t off = 0;
                         for (size_t k = 0; k < impls.size(); ++k) {
                           auto& t = impls[k];
                           const std::int64_t ax = axes[k];
                           if (t->wants_grad()) {
                             t->ensure_grad();
                             for (std::int64_t o = 0; o < outer; ++o) {
                               const double* g = self->grad.data() + (o * axis_total + off) * inner;
                               double* dst = t->grad.data() + o * ax * inner;
                               for (std::int64_t i = 0; i < ax * inner; ++i) dst[i] += g[i];
                             }
                           }
                           off += ax;
                         }
                       };
                     });
}

Tensor select0(const Tensor& x, std::int64_t index) {
  if (x.ndim() < 1) throw ContractError("select0: needs at least 1-d tensor");
  if (index < 0 || index >= x.dim(0)) throw ContractError("select0: index out of range");
  std::vector<std::int64_t> odims(x.dims().begin() + 1, x.dims().end());
  if (odims.empty()) odims = {1};
  std::int64_t inner = 1;
  for (auto d : odims) inner *= d;
  std::vector<double> out(x.data().begin() + index * inner, x.data().begin() + (index + 1) * inner);
  auto xi = x.impl_ptr();
  return make_result(std::move(odims), x.dtype(), std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      if (!xi->wants_grad()) return;
      xi->ensure_grad();
      double* dst = xi->grad.data() + index * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += self->grad[static_cast<size_t>(i)];
    };
  });
}

Tensor reshape(const Tensor& x, std::vector<std::int64_t> dims) {
  std::int64_t n = 1;
  for (auto d : dims) n *= d;
  if (n != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.dims()) + " as " + shape_str(dims));
  std::vector<double> out(x.data().begin(), x.data().end());
  auto xi = x.impl_ptr();
  return make_result(std::move(dims), x.dtype(), std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      if (!xi->wants_grad()) return;
      xi->ensure_grad();
      for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += self->grad[i];
    };
  });
}

// ---------------------------------------------------------------------------
// Batch normalization

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor running_mean,
                  Tensor running_var, bool training, double momentum, double eps,
                  bool update_stats) {
  const Dim4 d = dim4(x, "batch_norm");
  if (gamma.numel() != d.c || beta.numel() != d.c || running_mean.numel() != d.c ||
      running_var.numel() != d.c)
    throw ShapeError("batch_norm: parameter size does not match channels " + std::to_string(d.c));
  const std::int64_t m = d.n * d.h * d.w;
  const std::int64_t plane = d.h * d.w;
  std::vector<double> ch_mean(static_cast<size_t>(d.c)), ch_ivar(static_cast<size_t>(d.c));
  const double* px = x.data().data();
  if (training) {
    for (std::int64_t c = 0; c < d.c; ++c) {
      double s = 0.0, s2 = 0.0;
      for (std::int64_t n = 0; n < d.n; ++n) {
        const double* p = px + (n * d.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          s += p[i];
          s2 += p[i] * p[i];
        }
      }
      const double mu = s / static_cast<double>(m);
      double var = s2 / static_cast<double>(m) - mu * mu;
      if (var < 0.0) var = 0.0;
      ch_mean[static_cast<size_t>(c)] = mu;
      ch_ivar[static_cast<size_t>(c)] = 1.0 / std::sqrt(var + eps);
      if (update_stats) {
        running_mean.mutable_data()[static_cast<size_t>(c)] =
            (1.0 - momentum) * running_mean.data()[static_cast<size_t>(c)] + momentum * mu;
        running_var.mutable_data()[static_cast<size_t>(c)] =
            (1.0 - momentum) * running_var.data()[static_cast<size_t>(c)] + momentum * var;
      }
    }
    if (update_stats) {
      running_mean.round_to_dtype();
      running_var.round_to_dtype();
    }
  } else {
    for (std::int64_t c = 0; c < d.c; ++c) {
      ch_mean[static_cast<size_t>(c)] = running_mean.data()[static_cast<size_t>(c)];
      ch_ivar[static_cast<size_t>(c)] =
          1.0 / std::sqrt(running_var.data()[static_cast<size_t>(c)] + eps);
    }
  }
  std::vector<double> xhat(static_cast<size_t>(x.numel()));
  std::vector<double> out(static_cast<size_t>(x.numel()));
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t c = 0; c < d.c; ++c) {
      const double mu = ch_mean[static_cast<size_t>(c)];
      const double iv = ch_ivar[static_cast<size_t>(c)];
      const double g = gamma.data()[static_cast<size_t>(c)];
      const double b = beta.data()[static_cast<size_t>(c)];
      const std::int64_t base = (n * d.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double xh = (px[base + i] - mu) * iv;
        xhat[static_cast<size_t>(base + i)] = xh;
        out[static_cast<size_t>(base + i)] = g * xh + b;
      }
    }
  auto xi = x.impl_ptr();
  auto gi = gamma.impl_ptr();
  auto bi = beta.impl_ptr();
  auto saved_xhat = std::make_shared<std::vector<double>>(std::move(xhat));
  auto saved_ivar = std::make_shared<std::vector<double>>(std::move(ch_ivar));
  return make_result(x.dims(), x.dtype(), std::move(out), {x, gamma, beta},
                     [=](TensorImpl* self) {
                       return [=]() {
                         const double* gy = self->grad.data();
                         const auto& xh = *saved_xhat;
                         if (gi->wants_grad()) gi->ensure_grad();
                         if (bi->wants_grad()) bi->ensure_grad();
                         if (gi->wants_grad() || bi->wants_grad()) {
                           for (std::int64_t c = 0; c < d.c; ++c) {
                             double dg = 0.0, db = 0.0;
                             for (std::int64_t n = 0; n < d.n; ++n) {
                               const std::int64_t base = (n * d.c + c) * plane;
                               for (std::int64_t i = 0; i < plane; ++i) {
                                 dg += gy[base + i] * xh[static_cast<size_t>(base + i)];
                                 db += gy[base + i];
                               }
                             }
                             if (gi->wants_grad()) gi->grad[static_cast<size_t>(c)] += dg;
                             if (bi->wants_grad()) bi->grad[static_cast<size_t>(c)] += db;
                           }
                         }
                         if (!xi->wants_grad()) return;
                         xi->ensure_grad();
                         for (std::int64_t c = 0; c < d.c; ++c) {
                           const double g = gi->data[static_cast<size_t>(c)];
                           const double iv = (*saved_ivar)[static_cast<size_t>(c)];
                           if (training) {
                             double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                             for (std::int64_t n = 0; n < d.n; ++n) {
                               const std::int64_t base = (n * d.c + c) * plane;
                               for (std::int64_t i = 0; i < plane; ++i) {
                                 const double dxh = gy[base + i] * g;
                                 sum_dxh += dxh;
                                 sum_dxh_xh += dxh * xh[static_cast<size_t>(base + i)];
                               }
                             }
                             const double inv_m = 1.0 / static_cast<double>(m);
                             for (std::int64_t n = 0; n < d.n; ++n) {
                               const std::int64_t base = (n * d.c + c) * plane;
                               for (std::int64_t i = 0; i < plane; ++i) {
                                 const double dxh = gy[base + i] * g;
                                 xi->grad[static_cast<size_t>(base + i)] +=
                                     iv * (dxh - inv_m * sum_dxh -
                                           xh[static_cast<size_t>(base + i)] * inv_m * sum_dxh_xh);
                               }
                             }
                           } else {
                             for (std::int64_t n = 0; n < d.n; ++n) {
                               const std::int64_t base = (n * d.c + c) * plane;
                               for (std::int64_t i = 0; i < plane; ++i)
                                 xi->grad[static_cast<size_t>(base + i)] += gy[base + i] * g * iv;
                             }
                           }
                         }
                       };
                     });
}

}  // namespace stmtl
