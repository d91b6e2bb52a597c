#include <doctest.h>

#include <cmath>

#include "stmtl/metrics.hpp"
#include "stmtl/rng.hpp"
#include "stmtl/synth.hpp"

using namespace stmtl;

namespace {

BinaryMask make_mask(int h, int w, std::initializer_list<std::pair<int, int>> pixels) {
  BinaryMask m{h, w, std::vector<std::uint8_t>(static_cast<size_t>(h * w), 0)};
  for (auto [y, x] : pixels) m.v[static_cast<size_t>(y * w + x)] = 1;
  return m;
}

// Independent all-pairs oracle over independently extracted boundary sets.
double hausdorff_oracle(const BinaryMask& a, const BinaryMask& b) {
  auto bounds = [](const BinaryMask& m) {
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x) {
        if (!m.v[static_cast<size_t>(y * m.w + x)]) continue;
        bool boundary = false;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (!dy && !dx) continue;
            int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= m.h || nx < 0 || nx >= m.w ||
                !m.v[static_cast<size_t>(ny * m.w + nx)])
              boundary = true;
          }
        if (boundary) out.emplace_back(y, x);
      }
    return out;
  };
  auto ba = bounds(a), bb = bounds(b);
  if (ba.empty() && bb.empty()) return 0.0;
  if (ba.empty() || bb.empty()) return std::hypot(a.h, a.w);
  double worst = 0.0;
  for (auto& p : ba) {
    double best = 1e18;
    for (auto& q : bb) best = std::min(best, std::hypot(p.first - q.first, p.second - q.second));
    worst = std::max(worst, best);
  }
  for (auto& p : bb) {
    double best = 1e18;
    for (auto& q : ba) best = std::min(best, std::hypot(p.first - q.first, p.second - q.second));
    worst = std::max(worst, best);
  }
  return worst;
}

Tensor gauss_sal(int h, int w, const std::vector<std::pair<int, int>>& peaks, double sigma) {
  std::vector<double> v(static_cast<size_t>(h * w), 0.0);
  double mx = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (auto [py, px] : peaks)
        acc += std::exp(-((y - py) * (y - py) + (x - px) * (x - px)) / (2 * sigma * sigma));
      v[static_cast<size_t>(y * w + x)] = acc;
      mx = std::max(mx, acc);
    }
  if (mx > 0)
    for (auto& e : v) e /= mx;
  return Tensor::from_data(std::move(v), {h, w});
}

}  // namespace

TEST_CASE("dice hand cases") {
  auto a = make_mask(4, 4, {{0, 0}, {1, 1}, {2, 2}});
  CHECK(dice(a, a) == 1.0);
  auto empty = make_mask(4, 4, {});
  CHECK(dice(empty, empty) == 1.0);
  auto b = make_mask(4, 4, {{3, 3}});
  CHECK(dice(a, b) == 0.0);
  // |A|=2, |B|=4, overlap 2 -> 4/6
  auto a2 = make_mask(4, 4, {{0, 0}, {0, 1}});
  auto b2 = make_mask(4, 4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  CHECK(dice(a2, b2) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(dice(a2, b2) == dice(b2, a2));
  CHECK_THROWS_AS(dice(a, make_mask(4, 5, {})), ShapeError);
}

TEST_CASE("dice stays within [0,1] on random masks") {
  Rng rng(404);
  for (int trial = 0; trial < 1000; ++trial) {
    BinaryMask a{6, 6, {}}, b{6, 6, {}};
    a.v.resize(36);
    b.v.resize(36);
    for (auto& v : a.v) v = rng.uniform() < 0.4 ? 1 : 0;
    for (auto& v : b.v) v = rng.uniform() < 0.4 ? 1 : 0;
    const double d = dice(a, b);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    CHECK(d == dice(b, a));
  }
}

TEST_CASE("hausdorff hand cases") {
  auto a = make_mask(8, 8, {{2, 2}, {2, 3}, {3, 2}, {3, 3}});
  CHECK(hausdorff(a, a) == 0.0);

  auto p = make_mask(8, 8, {{4, 1}});
  auto q = make_mask(8, 8, {{4, 6}});
  CHECK(hausdorff(p, q) == 5.0);
  CHECK(hausdorff(p, q) == hausdorff(q, p));

  CHECK(hausdorff(make_mask(8, 8, {}), make_mask(8, 8, {})) == 0.0);
  CHECK(hausdorff(a, make_mask(8, 8, {})) == std::hypot(8.0, 8.0));

  // 3x3 square against the same square shifted by (2,0)
  BinaryMask s1{10, 10, std::vector<std::uint8_t>(100, 0)};
  BinaryMask s2 = s1;
  for (int y = 3; y < 6; ++y)
    for (int x = 3; x < 6; ++x) {
      s1.v[static_cast<size_t>(y * 10 + x)] = 1;
      s2.v[static_cast<size_t>(y * 10 + x + 2)] = 1;
    }
  CHECK(hausdorff(s1, s2) == hausdorff_oracle(s1, s2));
  CHECK(hausdorff(s1, s2) == 2.0);
}

TEST_CASE("hausdorff equals the brute-force oracle on random small masks") {
  Rng rng(2025);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 3 + static_cast<int>(rng.uniform_int(10));
    const int w = 3 + static_cast<int>(rng.uniform_int(10));
    BinaryMask a{h, w, std::vector<std::uint8_t>(static_cast<size_t>(h * w), 0)};
    BinaryMask b = a;
    for (auto& v : a.v) v = rng.uniform() < 0.35 ? 1 : 0;
    for (auto& v : b.v) v = rng.uniform() < 0.35 ? 1 : 0;
    CHECK(hausdorff(a, b) == hausdorff_oracle(a, b));
  }
}

TEST_CASE("auc borji separates good, chance, and inverted predictions") {
  std::vector<std::pair<int, int>> fixations = {{10, 12}, {40, 45}, {25, 50}};
  std::vector<std::pair<int, int>> peaks_xy;
  for (auto [y, x] : fixations) peaks_xy.emplace_back(y, x);
  auto good = gauss_sal(64, 64, peaks_xy, 4.0);
  CHECK(auc_borji(good, fixations, 100, 9) > 0.95);

  auto flat = Tensor::full({64, 64}, 0.37);
  CHECK(auc_borji(flat, fixations, 100, 9) == doctest::Approx(0.5).epsilon(1e-12));

  std::vector<double> inv(64 * 64);
  for (size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 - good.data()[i];
  CHECK(auc_borji(Tensor::from_data(inv, {64, 64}), fixations, 100, 9) < 0.1);

  // deterministic under a fixed seed
  CHECK(auc_borji(good, fixations, 50, 1234) == auc_borji(good, fixations, 50, 1234));
  CHECK_THROWS_AS(auc_borji(good, {}, 10, 1), ContractError);
}

TEST_CASE("auc borji stays within [0,1] on random maps") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(256);
    for (auto& e : v) e = rng.uniform();
    auto sal = Tensor::from_data(v, {16, 16});
    std::vector<std::pair<int, int>> fix = {
        {static_cast<int>(rng.uniform_int(16)), static_cast<int>(rng.uniform_int(16))},
        {static_cast<int>(rng.uniform_int(16)), static_cast<int>(rng.uniform_int(16))}};
    const double a = auc_borji(sal, fix, 20, trial);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
}

TEST_CASE("extract_scanpath ranks by mean saliency inside predicted masks") {
  // instrument 1 occupies the left half, instrument 2 the right half
  ClassMap mask{1, 4, 4, {}};
  mask.v = {1, 1, 2, 2, 1, 1, 2, 2, 1, 1, 2, 2, 1, 1, 2, 2};
  std::vector<double> sal = {0.9, 0.9, 0.1, 0.1, 0.9, 0.9, 0.1, 0.1,
                             0.9, 0.9, 0.1, 0.1, 0.9, 0.9, 0.1, 0.1};
  auto path = extract_scanpath(Tensor::from_data(sal, {4, 4}), mask, 3);
  CHECK(path == std::vector<int>{1, 2});

  // an undetected instrument ranks last
  ClassMap m2{1, 4, 4, std::vector<std::int32_t>(16, 0)};
  m2.v[0] = 2;
  auto p2 = extract_scanpath(Tensor::from_data(sal, {4, 4}), m2, 3);
  CHECK(p2 == std::vector<int>{2, 1});

  // hand-computed means and invariance under a monotone transform
  ClassMap m3{1, 2, 2, {1, 2, 2, 0}};
  std::vector<double> s3 = {0.2, 0.5, 0.3, 0.9};
  auto p3 = extract_scanpath(Tensor::from_data(s3, {2, 2}), m3, 3);
  CHECK(p3 == std::vector<int>{2, 1});  // mean(2)=0.4 > mean(1)=0.2
  std::vector<double> s3m(4);
  for (size_t i = 0; i < 4; ++i) s3m[i] = std::pow(s3[i], 3.0) * 7.0 + 0.01;
  CHECK(extract_scanpath(Tensor::from_data(s3m, {2, 2}), m3, 3) == p3);
}

TEST_CASE("scanpath accuracy counting") {
  std::vector<std::vector<int>> gt = {{1, 2, 3}, {2, 1, 3}, {3, 2, 1}};
  CHECK(scanpath_accuracy(gt, gt) == std::pair<double, double>{1.0, 1.0});

  // top wrong, remaining positions right (spurious top id)
  std::vector<std::vector<int>> pred;
  for (const auto& path : gt) {
    std::vector<int> p = path;
    p[0] = 9;
    pred.push_back(p);
  }
  auto [top1, avg] = scanpath_accuracy(pred, gt);
  CHECK(top1 == 0.0);
  CHECK(avg == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  std::vector<std::vector<int>> single = {{1}, {1}};
  CHECK(scanpath_accuracy(single, single) == std::pair<double, double>{1.0, 1.0});
  CHECK_THROWS_AS(scanpath_accuracy({{1}}, gt), ContractError);
}

TEST_CASE("fps benchmark sanity") {
  int counter = 0;
  auto fps = fps_benchmark(
      [&]() {
        volatile double acc = 0;
        for (int i = 0; i < 20000; ++i) acc = acc + std::sqrt(static_cast<double>(i));
        ++counter;
      },
      2, 11);
  CHECK(fps > 0.0);
  CHECK(counter == 13);
  CHECK_THROWS_AS(fps_benchmark([] {}, 0, 5), ContractError);

  // repeated measurements stay within a 25% coefficient of variation
  std::vector<double> runs;
  for (int i = 0; i < 5; ++i)
    runs.push_back(fps_benchmark(
        [&]() {
          volatile double acc = 0;
          for (int j = 0; j < 50000; ++j) acc = acc + std::sqrt(static_cast<double>(j));
        },
        1, 11));
  double mean = 0;
  for (double v : runs) mean += v;
  mean /= runs.size();
  double var = 0;
  for (double v : runs) var += (v - mean) * (v - mean);
  var /= runs.size();
  CHECK(std::sqrt(var) / mean < 0.25);
}

TEST_CASE("bigger inputs do not run faster") {
  ModelConfig cfg;
  cfg.enc_channels = {4, 6, 8, 8};
  cfg.lstm_hidden = 8;
  cfg.head_channels = 4;
  cfg.num_classes = 3;
  cfg.dtype = Dtype::f32;
  STMTLModel model(cfg);
  auto run_at = [&](std::int64_t hw) {
    auto img = Tensor::zeros({1, 3, hw, hw}, Dtype::f32);
    auto state = model.zero_state(1, hw, hw);
    NoGradGuard ng;
    model.set_eval();
    return fps_benchmark([&]() { auto out = model.forward(img, img, state); (void)out; }, 2, 10);
  };
  const double small = run_at(32);
  const double big = run_at(64);  // 4x the area
  CHECK(big <= small * 1.10);
}
