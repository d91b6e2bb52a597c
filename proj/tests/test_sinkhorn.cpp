#include <doctest.h>

#include <cmath>

#include "stmtl/exact_ot.hpp"
#include "stmtl/gradcheck.hpp"
#include "stmtl/losses.hpp"
#include "stmtl/ops.hpp"
#include "stmtl/rng.hpp"
#include "stmtl/sinkhorn.hpp"

using namespace stmtl;

namespace {

Tensor gauss_map(int h, int w, double cy, double cx, double sig) {
  std::vector<double> v(static_cast<size_t>(h * w));
  double s = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double d = std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (2 * sig * sig));
      v[static_cast<size_t>(y * w + x)] = d;
      s += d;
    }
  for (auto& e : v) e /= s;
  return Tensor::from_data(std::move(v), {h, w});
}

struct SmallInstance {
  Tensor mu, nu;
  std::vector<double> muw, nuw;
  std::vector<Point2> mup, nup;
};

// Random supports where each source's mass flows to one or two receivers
// displaced by at most one cell: the optimal plan is unique and local, so
// fixed-iteration Sinkhorn resolves it even at tiny eps.
SmallInstance perturbed_pair_instance(Rng& rng, int h, int w) {
  while (true) {
    int k = 2 + static_cast<int>(rng.uniform_int(3));
    std::vector<std::pair<int, int>> base;
    int guard = 0;
    while (static_cast<int>(base.size()) < k && guard < 1000) {
      ++guard;
      int y = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - 2)));
      int x = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - 2)));
      bool ok = true;
      for (auto& q : base)
        if (std::hypot(q.first - y, q.second - x) < 3.0) {
          ok = false;
          break;
        }
      if (ok) base.emplace_back(y, x);
    }
    std::vector<double> mv(static_cast<size_t>(h * w), 0.0), nv(static_cast<size_t>(h * w), 0.0);
    double s = 0;
    std::vector<double> wts;
    for (size_t i = 0; i < base.size(); ++i) {
      wts.push_back(0.3 + rng.uniform());
      s += wts.back();
    }
    for (size_t i = 0; i < base.size(); ++i) {
      const double wn = wts[i] / s;
      mv[static_cast<size_t>(base[i].first * w + base[i].second)] += wn;
      int nsplit = 1 + static_cast<int>(rng.uniform_int(2));
      double parts[2] = {1.0, 0.0};
      if (nsplit == 2) {
        parts[0] = 0.6;
        parts[1] = 0.4;
      }
      for (int sp = 0; sp < nsplit; ++sp) {
        int dy = static_cast<int>(rng.uniform_int(3)) - 1;
        int dx = static_cast<int>(rng.uniform_int(3)) - 1;
        if (dy == 0 && dx == 0) dy = sp ? -1 : 1;
        int ny = std::min(h - 1, std::max(0, base[i].first + dy));
        int nx = std::min(w - 1, std::max(0, base[i].second + dx));
        nv[static_cast<size_t>(ny * w + nx)] += wn * parts[sp];
      }
    }
    SmallInstance inst;
    for (int p = 0; p < h * w; ++p) {
      if (mv[static_cast<size_t>(p)] > 0) {
        inst.muw.push_back(mv[static_cast<size_t>(p)]);
        inst.mup.push_back({static_cast<double>(p / w), static_cast<double>(p % w)});
      }
      if (nv[static_cast<size_t>(p)] > 0) {
        inst.nuw.push_back(nv[static_cast<size_t>(p)]);
        inst.nup.push_back({static_cast<double>(p / w), static_cast<double>(p % w)});
      }
    }
    if (inst.muw.size() > 8 || inst.nuw.size() > 8) continue;
    const double exact = exact_ot_cost(inst.muw, inst.mup, inst.nuw, inst.nup);
    if (exact < 0.2) continue;
    inst.mu = Tensor::from_data(std::move(mv), {h, w});
    inst.nu = Tensor::from_data(std::move(nv), {h, w});
    return inst;
  }
}

}  // namespace

TEST_CASE("point mass onto itself has zero transport cost") {
  std::vector<double> v(16, 0.0);
  v[5] = 1.0;
  auto m = Tensor::from_data(v, {4, 4});
  auto r = sinkhorn_analyze(m, m, 0.5, 50);
  CHECK(r.plan_cost == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("forced coupling between two point masses costs their distance") {
  std::vector<double> a(16, 0.0), b(16, 0.0);
  a[0] = 1.0;   // (0,0)
  b[3] = 1.0;   // (0,3)
  auto mu = Tensor::from_data(a, {4, 4});
  auto nu = Tensor::from_data(b, {4, 4});
  for (double eps : {1.0, 0.1, 0.01}) {
    auto r = sinkhorn_analyze(mu, nu, eps, 50);
    CHECK(r.plan_cost == doctest::Approx(3.0).epsilon(1e-9));
  }
}

TEST_CASE("eps ladder converges to the exact transport cost") {
  Rng rng(404);
  auto inst = perturbed_pair_instance(rng, 8, 8);
  const double exact = exact_ot_cost(inst.muw, inst.mup, inst.nuw, inst.nup);
  double prev_cost = std::numeric_limits<double>::infinity();
  for (double eps : {1.0, 0.1, 0.01, 0.001}) {
    auto r = sinkhorn_analyze(inst.mu, inst.nu, eps, 3000);
    // entropic smoothing only ever lowers the plan cost as eps decreases
    CHECK(r.plan_cost <= prev_cost + 1e-8);
    prev_cost = r.plan_cost;
    if (eps <= 0.001) CHECK(std::abs(r.plan_cost - exact) / exact < 0.02);
  }
}

TEST_CASE("plan marginals match the inputs at moderate eps") {
  auto mu = gauss_map(16, 16, 7.0, 7.0, 2.5);
  auto nu = gauss_map(16, 16, 9.4, 10.2, 2.8);
  for (double eps : {1.0, 0.5, 0.3}) {
    auto r = sinkhorn_analyze(mu, nu, eps, 50);
    for (int i = 0; i < 256; ++i) {
      CHECK(std::abs(r.row_marginals[static_cast<size_t>(i)] - mu.data()[static_cast<size_t>(i)]) <
            1e-6);
      CHECK(std::abs(r.col_marginals[static_cast<size_t>(i)] - nu.data()[static_cast<size_t>(i)]) <
            1e-6);
    }
  }
}

TEST_CASE("transport cost is symmetric in its arguments") {
  auto mu = gauss_map(16, 16, 6.0, 5.0, 2.2);
  auto nu = gauss_map(16, 16, 10.0, 11.0, 2.9);
  for (double eps : {1.0, 0.3, 0.1}) {
    auto
 a = sinkhorn_analyze(mu, nu, eps, 400);
    auto b = sinkhorn_analyze(nu, mu, eps, 400);
    CHECK(std::abs(a.plan_cost - b.plan_cost) < 1e-8);
  }
}

TEST_CASE("sinkhorn rejects unnormalized or malformed input") {
  auto ok = gauss_map(4, 4, 1.5, 1.5, 1.0);
  auto bad = Tensor::full({4, 4}, 0.1);  // sums to 1.6
  CHECK_THROWS_AS(sinkhorn_analyze(ok, bad, 0.1, 10), ContractError);
  CHECK_THROWS_AS(sinkhorn_analyze(bad, ok, 0.1, 10), ContractError);
  CHECK_THROWS_AS(sinkhorn_analyze(ok, ok, -1.0, 10), ContractError);
  CHECK_THROWS_AS(sinkhorn_analyze(ok, ok, 0.1, 0), ContractError);
}

TEST_CASE("sinkhorn objective differentiates through the normalization") {
  Rng rng(11);
  std::vector<double> mv(16), nv(16);
  for (auto& v : mv) v = 0.2 + rng.uniform();
  for (auto& v : nv) v = 0.2 + rng.uniform();
  auto mraw = Tensor::from_data(mv, {4, 4}, Dtype::f64, true);
  auto nraw = Tensor::from_data(nv, {4, 4}, Dtype::f64, true);
  auto f = [&]() {
    return sinkhorn_loss(ProbMap::from_map(mraw), ProbMap::from_map(nraw), 0.3, 15);
  };
  CHECK(gradcheck(f, {mraw, nraw}) < 1e-6);
}

TEST_CASE("saliency loss degenerate fusion weights") {
  Rng rng(12);
  std::vector<double> pv(64), tv(64);
  for (auto& v : pv) v = 0.05 + 0.9 * rng.uniform();
  for (auto& v : tv) v = rng.uniform() < 0.3 ? 0.9 : 0.05;
  auto pred = Tensor::from_data(pv, {1, 1, 8, 8});
  auto target = Tensor::from_data(tv, {1, 1, 8, 8});

  auto only_bce = saliency_loss(pred, target, 0.0, 0.1, 20);
  CHECK(only_bce.item() == bce_loss(pred, target).item());

  auto only_sd = saliency_loss(pred, target, 1.0, 0.1, 20);
  auto mu = ProbMap::from_map(reshape(avg_downsample(target, 4), {2, 2}));
  auto nu = ProbMap::from_map(reshape(avg_downsample(pred, 4), {2, 2}));
  CHECK(only_sd.item() == doctest::Approx(sinkhorn_loss(mu, nu, 0.1, 20).item()).epsilon(1e-12));
}

TEST_CASE("saliency loss recombines its two terms at alpha 0.3") {
  Rng rng(13);
  std::vector<double> tv(256);
  for (size_t i = 0; i < tv.size(); ++i) tv[i] = i % 7 == 0 ? 0.95 : 0.02;
  auto t = Tensor::from_data(tv, {1, 1, 16, 16});
  auto full = saliency_loss(t, t, 0.3, 0.1, 30);
  auto mu = ProbMap::from_map(reshape(avg_downsample(t, 4), {4, 4}));
  auto sd = sinkhorn_loss(mu, mu, 0.1, 30).item();
  auto bce = bce_loss(t, t).item();
  CHECK(full.item() == doctest::Approx(0.3 * sd + 0.7 * bce).epsilon(1e-12));
  CHECK(bce < 0.25);  // near-binary self target keeps the bce term small
}

TEST_CASE("saliency loss gradient w.r.t. prediction passes gradcheck") {
  Rng rng(14);
  std::vector<double> pv(64), tv(64);
  for (auto& v : pv) v = 0.1 + 0.8 * rng.uniform();
  for (auto& v : tv) v = rng.uniform();
  auto pred = Tensor::from_data(pv, {1, 1, 8, 8}, Dtype::f64, true);
  auto target = Tensor::from_data(tv, {1, 1, 8, 8});
  auto f = [&]() { return saliency_loss(pred, target, 0.3, 0.1, 20); };
  CHECK(gradcheck(f, {pred}) < 1e-4);
}

TEST_CASE("saliency loss contract checks") {
  auto p = Tensor::full({1, 1, 8, 8}, 0.5);
  CHECK_THROWS_AS(saliency_loss(p, p, -0.1), ContractError);
  CHECK_THROWS_AS(saliency_loss(p, p, 1.5), ContractError);
  CHECK_THROWS_AS(saliency_loss(p, Tensor::full({1, 1, 4, 4}, 0.5), 0.3), ShapeError);
  CHECK_THROWS_AS(saliency_loss(Tensor::full({1, 1, 8, 8}, 7.0), p, 0.3), ContractError);
}
