#include <doctest.h>

#include <cmath>

#include "stmtl/blocks.hpp"
#include "stmtl/gradcheck.hpp"
#include "stmtl/model.hpp"

using namespace stmtl;

namespace {

Tensor rand_t(Rng& rng, std::vector<std::int64_t> dims, double lo = -1.0, double hi = 1.0,
              bool rg = false) {
  std::int64_t n = 1;
  for (auto d : dims) n *= d;
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(v), std::move(dims), Dtype::f64, rg);
}

void zero_all(std::vector<ParamEntry>& entries) {
  for (auto& e : entries) {
    for (auto& v : e.tensor.mutable_data()) v = 0.0;
  }
}

// Straight-line scalar reimplementation of one ConvLSTM step for the oracle:
// naive same-padding conv plus the five gate equations, no Tensor machinery.
struct NaiveMap {
  std::int64_t c, h, w;
  std::vector<double> v;
  double at(std::int64_t ci, std::int64_t y, std::int64_t x) const {
    return v[static_cast<size_t>((ci * h + y) * w + x)];
  }
};

NaiveMap naive_conv_same(const NaiveMap& in, const Tensor& kernel, const Tensor& bias) {
  const std::int64_t F = kernel.dim(0), C = kernel.dim(1), k = kernel.dim(2);
  const std::int64_t p = k / 2;
  NaiveMap out{F, in.h, in.w, std::vector<double>(static_cast<size_t>(F * in.h * in.w), 0.0)};
  for (std::int64_t f = 0; f < F; ++f)
    for (std::int64_t y = 0; y < in.h; ++y)
      for (std::int64_t x = 0; x < in.w; ++x) {
        double acc = bias.defined() ? bias.data()[static_cast<size_t>(f)] : 0.0;
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t u = 0; u < k; ++u)
            for (std::int64_t vv = 0; vv < k; ++vv) {
              std::int64_t iy = y - p + u, ix = x - p + vv;
              if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
              acc += in.at(c, iy, ix) * kernel.at({f, c, u, vv});
            }
        out.v[static_cast<size_t>((f * in.h + y) * in.w + x)] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("scse zero-init gates are 0.5 and output equals x bit-exactly") {
  Rng rng(1);
  ScSEBlock block(rng, 4, 2, /*skip=*/false, Dtype::f64);
  auto x = rand_t(rng, {2, 4, 5, 5});
  ScSEBlock::Gates gates;
  auto y = block.forward(x, &gates);
  for (double v : gates.channel.data()) CHECK(v == 0.5);
  for (double v : gates.spatial.data()) CHECK(v == 0.5);
  for (size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("scse of zero input is zero") {
  Rng rng(2);
  ScSEBlock block(rng, 4, 2, false, Dtype::f64);
  auto y = block.forward(Tensor::zeros({1, 4, 3, 3}));
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("scse gate injection: 0.25 + 0.75 recovers x") {
  Rng rng(3);
  ScSEBlock block(rng, 4, 2, false, Dtype::f64);
  auto x = rand_t(rng, {1, 4, 4, 4});
  ScSEBlock::Gates inject{Tensor::full({1, 4, 1, 1}, 0.25), Tensor::full({1, 1, 4, 4}, 0.75)};
  auto y = block.forward(x, nullptr, &inject);
  for (size_t i = 0; i < x.data().size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("scse rejects channels below the reduction ratio") {
  Rng rng(4);
  CHECK_THROWS_AS(ScSEBlock(rng, 1, 2, false, Dtype::f64), ConfigError);
}

TEST_CASE("sc_scse zero-init doubles x bit-exactly and keeps zero at zero") {
  Rng rng(5);
  ScSEBlock block(rng, 6, 2, /*skip=*/true, Dtype::f64);
  auto x = rand_t(rng, {1, 6, 4, 4});
  auto y = block.forward(x);
  for (size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == 2.0 * x.data()[i]);
  auto z = block.forward(Tensor::zeros({1, 6, 4, 4}));
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("sc_scse algebra under injected gates") {
  Rng rng(6);
  ScSEBlock sc(rng, 4, 2, true, Dtype::f64);
  auto x = rand_t(rng, {2, 4, 3, 3});

  ScSEBlock::Gates strong{Tensor::full({2, 4, 1, 1}, 0.9), Tensor::full({2, 1, 3, 3}, 0.9)};
  auto y = sc.forward(x, nullptr, &strong);
  for (size_t i = 0; i < x.data().size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(2.8 * x.data()[i]).epsilon(1e-12));

  // as both gates vanish the skip keeps the input alive
  ScSEBlock::Gates weak{Tensor::full({2, 4, 1, 1}, 1e-9), Tensor::full({2, 1, 3, 3}, 1e-9)};
  auto yw = sc.forward(x, nullptr, &weak);
  for (size_t i = 0; i < x.data().size(); ++i)
    CHECK(yw.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-8));
}

TEST_CASE("sc_scse output is (1+gc+gs).x and the difference to scse is exactly x") {
  Rng rng(7);
  ScSEBlock sc(rng, 4, 2, true, Dtype::f64);
  ScSEBlock plain(rng, 4, 2, false, Dtype::f64);
  auto x = rand_t(rng, {1, 4, 6, 6});

  ScSEBlock::Gates g{rand_t(rng, {1, 4, 1, 1}, 0.05, 0.95), rand_t(rng, {1, 1, 6, 6}, 0.05, 0.95)};
  auto y = sc.forward(x, nullptr, &g);
  for (std::int64_t c = 0; c < 4; ++c)
    for (std::int64_t h = 0; h < 6; ++h)
      for (std::int64_t w = 0; w < 6; ++w) {
        const double factor = 1.0 + g.channel.at({0, c, 0, 0}) + g.spatial.at({0, 0, h, w});
        const double ref = factor * x.at({0, c, h, w});
        CHECK(std::abs(y.at({0, c, h, w}) - ref) <= 1e-12 * std::max(1.0, std::abs(ref)));
        // the ratio against x stays strictly inside (1,3): weak features are
        // retained, never squeezed to zero
        if (x.at({0, c, h, w}) != 0.0) {
          const double ratio = y.at({0, c, h, w}) / x.at({0, c, h, w});
          CHECK(ratio > 1.0);
          CHECK(ratio < 3.0);
        }
      }

  // identical dyadic gates make (scse + x) - scse exact
  ScSEBlock::Gates half{Tensor::full({1, 4, 1, 1}, 0.5), Tensor::full({1, 1, 6, 6}, 0.5)};
  auto y_sc = sc.forward(x, nullptr, &half);
  auto y_plain = plain.forward(x, nullptr, &half);
  for (size_t i = 0; i < x.data().size(); ++i)
    CHECK(y_sc.data()[i] - y_plain.data()[i] == x.data()[i]);
}

TEST_CASE("scse gradcheck") {
  Rng rng(8);
  ScSEBlock sc(rng, 4, 2, true, Dtype::f64);
  // move the zero-init excitation convs off their saddle for a meaningful check
  for (auto& v : sc.squeeze_b.w.mutable_data()) v = rng.uniform(-0.3, 0.3);
  for (auto& v : sc.spatial.w.mutable_data()) v = rng.uniform(-0.3, 0.3);
  auto x = rand_t(rng, {1, 4, 4, 4}, -1.0, 1.0, true);
  std::vector<Tensor> wrt = {x, sc.squeeze_a.w, sc.squeeze_b.w, sc.spatial.w};
  for (auto& t : wrt) t.set_requires_grad(true);
  CHECK(gradcheck([&]() { return sum(mul(sc.forward(x), x)); }, wrt) < 1e-6);
}

TEST_CASE("convlstm step with all-zero parameters and state") {
  Rng rng(9);
  ConvLSTMCell cell(rng, 2, 3, 3, /*concat_prev=*/true, Dtype::f64);
  std::vector<ParamEntry> entries;
  cell.collect("lstm", entries);
  zero_all(entries);
  auto x = rand_t(rng, {1, 2, 4, 4});
  auto xp = rand_t(rng, {1, 2, 4, 4});
  auto s0 = cell.zero_state(1, 4, 4, Dtype::f64);
  auto s1 = cell.step(x, xp, s0);
  for (double v : s1.c.data()) CHECK(v == 0.0);
  for (double v : s1.h.data()) CHECK(v == 0.0);
}

TEST_CASE("convlstm gate saturation preserves the cell state") {
  Rng rng(10);
  ConvLSTMCell cell(rng, 2, 3, 3, true, Dtype::f64);
  std::vector<ParamEntry> entries;
  cell.collect("lstm", entries);
  zero_all(entries);
  for (auto& v : cell.wxf.b.mutable_data()) v = 20.0;   // f ~ 1
  for (auto& v : cell.wxi.b.mutable_data()) v = -20.0;  // i ~ 0
  for (auto& v : cell.wxo.b.mutable_data()) v = -20.0;  // o ~ 0
  auto x = rand_t(rng, {1, 2, 4, 4});
  LstmState s{rand_t(rng, {1, 3, 4, 4}, -0.5, 0.5), rand_t(rng, {1, 3, 4, 4}, -0.5, 0.5)};
  const auto c_start = std::vector<double>(s.c.data().begin(), s.c.data().end());
  auto s1 = cell.step(x, x, s);
  for (size_t i = 0; i < c_start.size(); ++i)
    CHECK(std::abs(s1.c.data()[i] - c_start[i]) < 1e-6);
  for (double v : s1.h.data()) CHECK(std::abs(v) < 1e-6);
  // cell state drift stays tiny over 100 steps
  LstmState cur = s;
  for (int step = 0; step < 100; ++step) cur = cell.step(x, x, cur);
  for (size_t i = 0; i < c_start.size(); ++i)
    CHECK(std::abs(cur.c.data()[i] - c_start[i]) < 1e-5);
}

TEST_CASE("convlstm step matches equation-by-equation oracle") {
  Rng rng(11);
  ConvLSTMCell cell(rng, 2, 3, 3, true, Dtype::f64);
  // shrink weights so activations stay in the well-conditioned range
  std::vector<ParamEntry> entries;
  cell.collect("lstm", entries);
  for (auto& e : entries)
    for (auto& v : e.tensor.mutable_data()) v *= 0.3;

  auto x_in = rand_t(rng, {1, 2, 3, 3});
  auto x_prev = rand_t(rng, {1, 2, 3, 3});
  LstmState s{rand_t(rng, {1, 3, 3, 3}, -0.5, 0.5), rand_t(rng, {1, 3, 3, 3}, -0.5, 0.5)};
  auto out = cell.step(x_in, x_prev, s);

  NaiveMap xt{4, 3, 3, {}};
  xt.v.insert(xt.v.end(), x_in.data().begin(), x_in.data().end());
  xt.v.insert(xt.v.end(), x_prev.data().begin(), x_prev.data().end());
  NaiveMap h{3, 3, 3, std::vector<double>(s.h.data().begin(), s.h.data().end())};

  auto gate = [&](const Conv2dLayer& wx, const Conv2dLayer& wh) {
    NaiveMap a = naive_conv_same(xt, wx.w, wx.b);
    NaiveMap b = naive_conv_same(h, wh.w, Tensor());
    for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
    return a;
  };
  NaiveMap i = gate(cell.wxi, cell.whi);
  NaiveMap f = gate(cell.wxf, cell.whf);
  NaiveMap g = gate(cell.wxc, cell.whc);
  NaiveMap o = gate(cell.wxo, cell.who);
  for (size_t idx = 0; idx < i.v.size(); ++idx) {
    const double iv = 1.0 / (1.0 + std::exp(-i.v[idx]));
    const double fv = 1.0 / (1.0 + std::exp(-f.v[idx]));
    const double gv = std::tanh(g.v[idx]);
    const double ov = 1.0 / (1.0 + std::exp(-o.v[idx]));
    const double cv = fv * s.c.data()[idx] + iv * gv;
    const double hv = ov * std::tanh(cv);
    CHECK(out.c.data()[idx] == doctest::Approx(cv).epsilon(1e-12));
    CHECK(out.h.data()[idx] == doctest::Approx(hv).epsilon(1e-12));
    CHECK(out.h.data()[idx] > -1.0);
    CHECK(out.h.data()[idx] < 1.0);
  }
}

TEST_CASE("convlstm step gradcheck") {
  Rng rng(12);
  ConvLSTMCell cell(rng, 2, 2, 3, true, Dtype::f64);
  auto x = rand_t(rng, {1, 2, 3, 3}, -1, 1, true);
  auto xp = rand_t(rng, {1, 2, 3, 3});
  LstmState s{rand_t(rng, {1, 2, 3, 3}, -0.5, 0.5, true), rand_t(rng, {1, 2, 3, 3}, -0.5, 0.5, true)};
  std::vector<Tensor> wrt = {x, s.h, s.c, cell.wxi.w, cell.wxf.w, cell.wxc.w, cell.wxo.w,
                             cell.whi.w, cell.whf.w, cell.whc.w, cell.who.w, cell.wxc.b};
  for (auto& t : wrt) t.set_requires_grad(true);
  CHECK(gradcheck(
            [&]() {
              auto out = cell.step(x, xp, s);
              return add(sum(out.h), sum(mul(out.c, out.c)));
            },
            wrt) < 1e-6);
}

TEST_CASE("encoder shape law 64x64") {
  Rng rng(13);
  Encoder enc(rng, 3, {16, 32, 64, 128}, Dtype::f64);
  auto feats = enc.forward(Tensor::zeros({1, 3, 64, 64}));
  REQUIRE(feats.size() == 4);
  CHECK(feats[0].dims() == std::vector<std::int64_t>{1, 16, 32, 32});
  CHECK(feats[1].dims() == std::vector<std::int64_t>{1, 32, 16, 16});
  CHECK(feats[2].dims() == std::vector<std::int64_t>{1, 64, 8, 8});
  CHECK(feats[3].dims() == std::vector<std::int64_t>{1, 128, 4, 4});
  CHECK_THROWS_AS(enc.forward(Tensor::zeros({1, 3, 60, 60})), ShapeError);
}

TEST_CASE("encoder stages start as their trunk") {
  Rng rng(14);
  Encoder enc(rng, 3, {4, 8}, Dtype::f64);
  auto x = rand_t(rng, {2, 3, 16, 16});
  Tensor cur = x;
  for (auto& stage : enc.stages) {
    auto full = stage.forward(cur);
    auto trunk = stage.trunk(cur);
    REQUIRE(full.dims() == trunk.dims());
    for (size_t i = 0; i < full.data().size(); ++i) CHECK(full.data()[i] == trunk.data()[i]);
    cur = full;
  }
}

TEST_CASE("encoder is deterministic under a fixed seed") {
  ModelConfig cfg;
  cfg.enc_channels = {4, 8, 8, 8};
  cfg.dtype = Dtype::f64;
  cfg.seed = 99;
  STMTLModel a(cfg), b(cfg);
  Rng rng(15);
  auto x = rand_t(rng, {1, 3, 32, 32});
  auto fa = a.encode(x), fb = b.encode(x);
  for (size_t k = 0; k < fa.size(); ++k) {
    auto da = fa[k].data(), db = fb[k].data();
    REQUIRE(da.size() == db.size());
    for (size_t i = 0; i < da.size(); ++i) CHECK(da[i] == db[i]);
  }
  auto fa2 = a.encode(x);
  for (size_t i = 0; i < fa[3].data().size(); ++i) CHECK(fa[3].data()[i] == fa2[3].data()[i]);
}
