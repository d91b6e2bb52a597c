#include "stmtl/sinkhorn.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "stmtl/ops.hpp"
#include "stmtl/parallel.hpp"

namespace stmtl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kTinyMass = 1e-300;

// row/column sweeps: each unit is O(n), so use a coarse grain to keep thread
// fan-out off tiny instances
void par_rows(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
  parallel_for(n, body, 64);
}

struct Core {
  std::int64_t n = 0;
  double eps = 0.0;
  int iters = 0;
  std::vector<double> logmu, lognu;
  std::vector<double> C;                       // n x n pixel-center distances
  std::vector<std::vector<double>> f_hist;     // iters entries
  std::vector<std::vector<double>> g_hist;     // iters+1 entries, g_hist[0] = 0
};

void validate_prob_map(const Tensor& t, const char* side) {
  if (t.ndim() != 2)
    throw ContractError(std::string("sinkhorn: ") + side + " must be a 2-d map, got " +
                        shape_str(t.dims()));
  double s = 0.0;
  for (double v : t.data()) {
    if (v < -1e-12)
      throw ContractError(std::string("sinkhorn: ") + side + " has negative mass " +
                          std::to_string(v));
    s += v;
  }
  const double tol = t.dtype() == Dtype::f64 ? 1e-9 : 1e-5;
  if (std::abs(s - 1.0) > tol)
    throw ContractError(std::string("sinkhorn: ") + side + " not normalized, sum=" +
                        std::to_string(s));
}

std::vector<double> log_of(std::span<const double> w) {
  std::vector<double> out(w.size());
  for (size_t i = 0; i < w.size(); ++i) out[i] = w[i] > kTinyMass ? std::log(w[i]) : kNegInf;
  return out;
}

Core sinkhorn_forward(const Tensor& mu, const Tensor& nu, double eps, int iters) {
  if (eps <= 0.0) throw ContractError("sinkhorn: eps must be positive");
  if (iters < 1) throw ContractError("sinkhorn: iters must be >= 1");
  validate_prob_map(mu, "mu");
  validate_prob_map(nu, "nu");
  check_same_shape(mu, nu, "sinkhorn");

  Core core;
  core.n = mu.numel();
  core.eps = eps;
  core.iters = iters;
  core.logmu = log_of(mu.data());
  core.lognu = log_of(nu.data());
  core.C = grid_cost_matrix(mu.dim(0), mu.dim(1));

  const std::int64_t n = core.n;
  std::vector<double> f(static_cast<size_t>(n), 0.0);
  std::vector<double> g(static_cast<size_t>(n), 0.0);
  core.g_hist.push_back(g);
  for (int t = 0; t < iters; ++t) {
    par_rows(n, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t i = lo; i < hi; ++i) {
        if (core.logmu[static_cast<size_t>(i)] == kNegInf) {
          f[static_cast<size_t>(i)] = kNegInf;
          continue;
        }
        const double* Ci = core.C.data() + i * n;
        double mx = kNegInf;
        for (std::int64_t j = 0; j < n; ++j) {
          const double v = (g[static_cast<size_t>(j)] - Ci[j]) / eps;
          if (v > mx) mx = v;
        }
        double acc = 0.0;
        for (std::int64_t j = 0; j < n; ++j)
          acc += std::exp((g[static_cast<size_t>(j)] - Ci[j]) / eps - mx);
        f[static_cast<size_t>(i)] =
            eps * (core.logmu[static_cast<size_t>(i)] - mx - std::log(acc));
      }
    });
    core.f_hist.push_back(f);
    par_rows(n, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t j = lo; j < hi; ++j) {
        if (core.lognu[static_cast<size_t>(j)] == kNegInf) {
          g[static_cast<size_t>(j)] = kNegInf;
          continue;
        }
        double mx = kNegInf;
        for (std::int64_t i = 0; i < n; ++i) {
          const double v = (f[static_cast<size_t>(i)] - core.C[static_cast<size_t>(i * n + j)]) / eps;
          if (v > mx) mx = v;
        }
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
          acc += std::exp((f[static_cast<size_t>(i)] - core.C[static_cast<size_t>(i * n + j)]) / eps - mx);
        g[static_cast<size_t>(j)] =
            eps * (core.lognu[static_cast<size_t>(j)] - mx - std::log(acc));
      }
    });
    core.g_hist.push_back(g);
  }
  return core;
}

struct PlanStats {
  double cost = 0.0, entropy = 0.0, objective = 0.0;
};

// gamma_ij = exp((f_i + g_j - C_ij)/eps) from the final potentials
PlanStats plan_stats(const Core& core, std::vector<double>* plan_out = nullptr,
                     std::vector<double>* row_marg = nullptr,
                     std::vector<double>* col_marg = nullptr) {
  const std::int64_t n = core.n;
  const auto& f = core.f_hist.back();
  const auto& g = core.g_hist.back();
  PlanStats st;
  if (plan_out) plan_out->assign(static_cast<size_t>(n * n), 0.0);
  if (row_marg) row_marg->assign(static_cast<size_t>(n), 0.0);
  if (col_marg) col_marg->assign(static_cast<size_t>(n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    if (f[static_cast<size_t>(i)] == kNegInf) continue;
    for (std::int64_t j = 0; j < n; ++j) {
      if (g[static_cast<size_t>(j)] == kNegInf) continue;
      const double lg =
          (f[static_cast<size_t>(i)] + g[static_cast<size_t>(j)] - core.C[static_cast<size_t>(i * n + j)]) /
          core.eps;
      const double gamma = std::exp(lg);
      if (gamma == 0.0) continue;
      st.cost += gamma * core.C[static_cast<size_t>(i * n + j)];
      st.entropy -= gamma * lg;
      if (plan_out) (*plan_out)[static_cast<size_t>(i * n + j)] = gamma;
      if (row_marg) (*row_marg)[static_cast<size_t>(i)] += gamma;
      if (col_marg) (*col_marg)[static_cast<size_t>(j)] += gamma;
    }
  }
  st.objective = st.cost - core.eps * st.entropy;
  if (!std::isfinite(st.objective))
    throw NumericError("sinkhorn: non-finite objective (eps too small for this instance?)");
  return st;
}

// Reverse sweep over the stored potentials. Seeds are dObjective/df_T and
// dObjective/dg_T scaled by the upstream cotangent; each iteration t undoes
// the column update (softmax Q over rows) then the row update (softmax P over
// columns), accumulating into d log mu / d log nu.
void sinkhorn_backward(const Core& core, double upstream, std::vector<double>& dlogmu,
                       std::vector<double>& dlognu) {
  const std::int64_t n = core.n;
  const double eps = core.eps;
  const auto& fT = core.f_hist.back();
  const auto& gT = core.g_hist.back();
  std::vector<double> fbar(static_cast<size_t>(n), 0.0), gbar(static_cast<size_t>(n), 0.0);
  par_rows(n, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      if (fT[static_cast<size_t>(i)] == kNegInf) continue;
      double acc = 0.0;
      for (std::int64_t j = 0; j < n; ++j) {
        if (gT[static_cast<size_t>(j)] == kNegInf) continue;
        const double s = fT[static_cast<size_t>(i)] + gT[static_cast<size_t>(j)];
        const double gamma = std::exp((s - core.C[static_cast<size_t>(i * n + j)]) / eps);
        acc += gamma * (s + eps) / eps;
      }
      fbar[static_cast<size_t>(i)] = upstream * acc;
    }
  });
  par_rows(n, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t j = lo; j < hi; ++j) {
      if (gT[static_cast<size_t>(j)] == kNegInf) continue;
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        if (fT[static_cast<size_t>(i)] == kNegInf) continue;
        const double s = fT[static_cast<size_t>(i)] + gT[static_cast<size_t>(j)];
        const double gamma = std::exp((s - core.C[static_cast<size_t>(i * n + j)]) / eps);
        acc += gamma * (s + eps) / eps;
      }
      gbar[static_cast<size_t>(j)] = upstream * acc;
    }
  });

  std::vector<double> colmax(static_cast<size_t>(n)), coldenom(static_cast<size_t>(n));
  std::vector<double> rowmax(static_cast<size_t>(n)), rowdenom(static_cast<size_t>(n));
  for (int t = core.iters; t >= 1; --t) {
    const auto& f = core.f_hist[static_cast<size_t>(t - 1)];
    const auto& gprev = core.g_hist[static_cast<size_t>(t - 1)];

    // g_t = eps*lognu - eps*LSE_i((f_i - C_ij)/eps): push gbar through
    for (std::int64_t j = 0; j < n; ++j)
      if (core.lognu[static_cast<size_t>(j)] != kNegInf)
        dlognu[static_cast<size_t>(j)] += eps * gbar[static_cast<size_t>(j)];
    par_rows(n, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t j = lo; j < hi; ++j) {
        if (core.lognu[static_cast<size_t>(j)] == kNegInf) {
          colmax[static_cast<size_t>(j)] = kNegInf;
          coldenom[static_cast<size_t>(j)] = 1.0;
          continue;
        }
        double mx = kNegInf;
        for (std::int64_t i = 0; i < n; ++i) {
          const double v = (f[static_cast<size_t>(i)] - core.C[static_cast<size_t>(i * n + j)]) / eps;
          if (v > mx) mx = v;
        }
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
          acc += std::exp((f[static_cast<size_t>(i)] - core.C[static_cast<size_t>(i * n + j)]) / eps - mx);
        colmax[static_cast<size_t>(j)] = mx;
        coldenom[static_cast<size_t>(j)] = acc;
      }
    });
    par_rows(n, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t i = lo; i < hi; ++i) {
        if (f[static_cast<size_t>(i)] == kNegInf) continue;
        double acc = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
          if (colmax[static_cast<size_t>(j)] == kNegInf || gbar[static_cast<size_t>(j)] == 0.0)
            continue;
          const double q =
              std::exp((f[static_cast<size_t>(i)] - core.C[static_cast<size_t>(i * n + j)]) / eps -
                       colmax[static_cast<size_t>(j)]) /
              coldenom[static_cast<size_t>(j)];
          acc -= q * gbar[static_cast<size_t>(j)];
        }
        fbar[static_cast<size_t>(i)] += acc;
      }
    });

    // f_t = eps*logmu - eps*LSE_j((g_{t-1,j} - C_ij)/eps): push fbar through
    for (std::int64_t i = 0; i < n; ++i)
      if (core.logmu[static_cast<size_t>(i)] != kNegInf)
        dlogmu[static_cast<size_t>(i)] += eps * fbar[static_cast<size_t>(i)];
    if (t == 1) break;  // g_0 is the zero constant
    par_rows(n, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t i = lo; i < hi; ++i) {
        if (core.logmu[static_cast<size_t>(i)] == kNegInf) {
          rowmax[static_cast<size_t>(i)] = kNegInf;
          rowdenom[static_cast<size_t>(i)] = 1.0;
          continue;
        }
        const double* Ci = core.C.data() + i * n;
        double mx = kNegInf;
        for (std::int64_t j = 0; j < n; ++j) {
          const double v = (gprev[static_cast<size_t>(j)] - Ci[j]) / eps;
          if (v > mx) mx = v;
        }
        double acc = 0.0;
        for (std::int64_t j = 0; j < n; ++j)
          acc += std::exp((gprev[static_cast<size_t>(j)] - Ci[j]) / eps - mx);
        rowmax[static_cast<size_t>(i)] = mx;
        rowdenom[static_cast<size_t>(i)] = acc;
      }
    });
    std::vector<double> gbar_next(static_cast<size_t>(n), 0.0);
    par_rows(n, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t j = lo; j < hi; ++j) {
        if (gprev[static_cast<size_t>(j)] == kNegInf) continue;
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
          if (rowmax[static_cast<size_t>(i)] == kNegInf || fbar[static_cast<size_t>(i)] == 0.0)
            continue;
          const double p =
              std::exp((gprev[static_cast<size_t>(j)] - core.C[static_cast<size_t>(i * n + j)]) / eps -
                       rowmax[static_cast<size_t>(i)]) /
              rowdenom[static_cast<size_t>(i)];
          acc -= p * fbar[static_cast<size_t>(i)];
        }
        gbar_next[static_cast<size_t>(j)] = acc;
      }
    });
    gbar.swap(gbar_next);
    std::fill(fbar.begin(), fbar.end(), 0.0);
  }
}

}  // namespace

std::vector<double> grid_cost_matrix(std::int64_t h, std::int64_t w) {
  const std::int64_t n = h * w;
  std::vector<double> C(static_cast<size_t>(n * n));
  for (std::int64_t a = 0; a < n; ++a) {
    const double ay = static_cast<double>(a / w), ax = static_cast<double>(a % w);
    for (std::int64_t b = 0; b < n; ++b) {
      const double by = static_cast<double>(b / w), bx = static_cast<double>(b % w);
      C[static_cast<size_t>(a * n + b)] = std::hypot(ay - by, ax - bx);
    }
  }
  return C;
}

Tensor sinkhorn_loss(const Tensor& mu, const Tensor& nu, double eps, int iters) {
  auto core = std::make_shared<Core>(sinkhorn_forward(mu, nu, eps, iters));
  const PlanStats st = plan_stats(*core);
  auto mi = mu.impl_ptr();
  auto ni = nu.impl_ptr();
  return make_result({1}, mu.dtype(), {st.objective}, {mu, nu}, [=](TensorImpl* self) {
    return [=]() {
      const double upstream = self->grad[0];
      if (upstream == 0.0) return;
      const std::int64_t n = core->n;
      std::vector<double> dlogmu(static_cast<size_t>(n), 0.0),
          dlognu(static_cast<size_t>(n), 0.0);
      sinkhorn_backward(*core, upstream, dlogmu, dlognu);
      if (mi->wants_grad()) {
        mi->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
          const double m = mi->data[static_cast<size_t>(i)];
          if (m > kTinyMass) mi->grad[static_cast<size_t>(i)] += dlogmu[static_cast<size_t>(i)] / m;
        }
      }
      if (ni->wants_grad()) {
        ni->ensure_grad();
        for (std::int64_t j = 0; j < n; ++j) {
          const double m = ni->data[static_cast<size_t>(j)];
          if (m > kTinyMass) ni->grad[static_cast<size_t>(j)] += dlognu[static_cast<size_t>(j)] / m;
        }
      }
    };
  });
}

Tensor sinkhorn_loss(const ProbMap& mu, const ProbMap& nu, double eps, int iters) {
  return sinkhorn_loss(mu.weights, nu.weights, eps, iters);
}

SinkhornResult sinkhorn_analyze(const Tensor& mu, const Tensor& nu, double eps, int iters) {
  Core core = sinkhorn_forward(mu, nu, eps, iters);
  SinkhornResult r;
  PlanStats st = plan_stats(core, &r.plan, &r.row_marginals, &r.col_marginals);
  r.objective = st.objective;
  r.plan_cost = st.cost;
  r.entropy = st.entropy;
  return r;
}

}  // namespace stmtl
