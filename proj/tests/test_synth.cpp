#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "stmtl/synth.hpp"

using namespace stmtl;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.frames = 14;
  cfg.height = 64;
  cfg.width = 64;
  cfg.classes = 4;
  cfg.instruments = 2;
  cfg.seed = 7;
  return cfg;
}

bool sequences_equal(const SceneSequence& a, const SceneSequence& b) {
  if (a.T != b.T || a.H != b.H || a.W != b.W || a.K != b.K) return false;
  for (int t = 0; t < a.T; ++t) {
    const auto& fa = a.frames[static_cast<size_t>(t)];
    const auto& fb = b.frames[static_cast<size_t>(t)];
    if (fa.rgb != fb.rgb || fa.mask.v != fb.mask.v || fa.heatmap != fb.heatmap) return false;
    if (fa.scanpath != fb.scanpath) return false;
    if (fa.fixations.size() != fb.fixations.size()) return false;
    for (size_t i = 0; i < fa.fixations.size(); ++i)
      if (fa.fixations[i].x != fb.fixations[i].x || fa.fixations[i].y != fb.fixations[i].y ||
          fa.fixations[i].weight != fb.fixations[i].weight)
        return false;
  }
  return true;
}

}  // namespace

TEST_CASE("gen_sequence is byte-identical under the same seed") {
  auto cfg = small_config();
  auto a = gen_sequence(cfg, 1234);
  auto b = gen_sequence(cfg, 1234);
  CHECK(sequences_equal(a, b));
  auto c = gen_sequence(cfg, 1235);
  CHECK_FALSE(sequences_equal(a, c));
}

TEST_CASE("empty scene produces background masks and zero heatmaps") {
  auto cfg = small_config();
  cfg.instruments = 0;
  auto seq = gen_sequence(cfg, 99);
  for (const auto& f : seq.frames) {
    for (auto v : f.mask.v) CHECK(v == 0);
    for (auto v : f.heatmap) CHECK(v == 0.0f);
    CHECK(f.scanpath.empty());
    CHECK(f.fixations.empty());
  }
}

TEST_CASE("scene invariants hold across random seeds") {
  auto cfg = small_config();
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    auto seq = gen_sequence(cfg, seed);
    for (int t = 0; t < seq.T; ++t) {
      const auto& f = seq.frames[static_cast<size_t>(t)];
      // mask ids below K and every instrument visible
      std::vector<int> pixels(static_cast<size_t>(seq.K), 0);
      for (auto v : f.mask.v) {
        CHECK(v >= 0);
        CHECK(v < seq.K);
        pixels[static_cast<size_t>(v)]++;
      }
      for (int i = 1; i <= cfg.instruments; ++i) CHECK(pixels[static_cast<size_t>(i)] >= 1);
      // heatmap peaks at 1 when instruments are present
      float peak = 0.0f;
      for (auto v : f.heatmap) peak = std::max(peak, v);
      CHECK(peak == 1.0f);
      // scanpath is a permutation of the instrument ids
      std::vector<int> sorted = f.scanpath;
      std::sort(sorted.begin(), sorted.end());
      REQUIRE(static_cast<int>(sorted.size()) == cfg.instruments);
      for (int i = 0; i < cfg.instruments; ++i) CHECK(sorted[static_cast<size_t>(i)] == i + 1);
      // every fixation lies inside its instrument's mask dilated by 1 px
      for (int i = 0; i < cfg.instruments; ++i) {
        const auto& fx = f.fixations[static_cast<size_t>(i)];
        const int cy = static_cast<int>(std::lround(fx.y));
        const int cx = static_cast<int>(std::lround(fx.x));
        bool inside = false;
        for (int dy = -1; dy <= 1 && !inside; ++dy)
          for (int dx = -1; dx <= 1 && !inside; ++dx) {
            const int y = cy + dy, x = cx + dx;
            if (y >= 0 && y < seq.H && x >= 0 && x < seq.W &&
                f.mask.v[static_cast<size_t>(y * seq.W + x)] == i + 1)
              inside = true;
          }
        CHECK(inside);
      }
    }
  }
}

TEST_CASE("heatmap peak sits on the highest-weight tip when fixations are far apart") {
  auto cfg = small_config();
  cfg.instruments = 2;
  const double min_sep = 4.0 * cfg.sigma_px();
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 40 && checked < 8; ++seed) {
    auto seq = gen_sequence(cfg, seed);
    for (int t = 0; t < seq.T && checked < 8; ++t) {
      const auto& f = seq.frames[static_cast<size_t>(t)];
      const double dx = f.fixations[0].x - f.fixations[1].x;
      const double dy = f.fixations[0].y - f.fixations[1].y;
      if (std::hypot(dx, dy) < min_sep) continue;
      if (std::abs(f.fixations[0].weight - f.fixations[1].weight) < 0.05) continue;
      const auto& top = f.fixations[0].weight > f.fixations[1].weight ? f.fixations[0]
                                                                      : f.fixations[1];
      std::int64_t argmax = 0;
      for (std::int64_t p = 1; p < seq.H * seq.W; ++p)
        if (f.heatmap[static_cast<size_t>(p)] > f.heatmap[static_cast<size_t>(argmax)]) argmax = p;
      CHECK(argmax / seq.W == std::lround(top.y));
      CHECK(argmax % seq.W == std::lround(top.x));
      ++checked;
    }
  }
  CHECK(checked >= 5);
}

TEST_CASE("fixation_heatmap spot values") {
  std::vector<Fixation> one = {{10.0, 6.0, 1.0}};
  auto m = fixation_heatmap(one, 16, 16, 2.0);
  CHECK(m[static_cast<size_t>(6 * 16 + 10)] == 1.0);

  CHECK(fixation_heatmap({}, 8, 8, 2.0) == std::vector<double>(64, 0.0));

  // two fixations 4 sigma apart with weights 1 and 0.5 leave two local maxima
  // whose heights are within a few percent of 2:1
  const double sigma = 2.0;
  std::vector<Fixation> two = {{4.0, 8.0, 1.0}, {12.0, 8.0, 0.5}};
  auto mm = fixation_heatmap(two, 17, 17, sigma);
  const double peak_a = mm[static_cast<size_t>(8 * 17 + 4)];
  const double peak_b = mm[static_cast<size_t>(8 * 17 + 12)];
  const double expect_a = 1.0 + 0.5 * std::exp(-(8.0 * 8.0) / (2 * sigma * sigma));
  const double expect_b = 0.5 + 1.0 * std::exp(-(8.0 * 8.0) / (2 * sigma * sigma));
  CHECK(peak_a == doctest::Approx(1.0).epsilon(1e-12));  // max-normalized top peak
  CHECK(peak_b == doctest::Approx(expect_b / expect_a).epsilon(1e-12));
  CHECK(peak_a / peak_b == doctest::Approx(2.0).epsilon(2e-3));
}

TEST_CASE("task weights follow the displacement and deformation terms") {
  SynthConfig cfg;
  Pose still{20, 20, 0.3, 8, 3};
  CHECK(task_weight(still, &still, 64, 64, cfg) == 0.5);
  CHECK(task_weight(still, nullptr, 64, 64, cfg) == 0.5);

  // one moving instrument outranks a static one
  Pose moved = still;
  moved.cx += 2.5;
  CHECK(task_weight(moved, &still, 64, 64, cfg) > task_weight(still, &still, 64, 64, cfg));

  // displacement == normalizer and |dA|/A = 0.5 give 0.5 + 0.3 + 0.1
  const double normalizer = std::hypot(64.0, 64.0) / 10.0;
  Pose prev{20, 20, 0.0, 8, 3};
  Pose cur = prev;
  cur.cx += normalizer;
  // scale the area by 1.5: area = 4*hl*hw + pi*hw^2, scale both by sqrt(1.5)
  const double s = std::sqrt(1.5);
  cur.half_len = prev.half_len * s;
  cur.half_wid = prev.half_wid * s;
  CHECK(task_weight(cur, &prev, 64, 64, cfg) == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("scanpath ordering and scale invariance") {
  CHECK(scanpath_gt({{1, 0.9}, {2, 0.5}}) == std::vector<int>{1, 2});
  CHECK(scanpath_gt({{1, 0.5}, {2, 0.5}}) == std::vector<int>{1, 2});
  CHECK(scanpath_gt({{3, 0.2}, {1, 0.7}, {2, 0.7}}) == std::vector<int>{1, 2, 3});
  // invariant to a common positive rescale
  std::vector<std::pair<int, double>> w = {{1, 0.31}, {2, 0.87}, {3, 0.44}};
  auto base = scanpath_gt(w);
  for (auto& [id, v] : w) v *= 37.5;
  CHECK(scanpath_gt(w) == base);
}

TEST_CASE("sequence save/load round trip") {
  auto cfg = small_config();
  auto seq = gen_sequence(cfg, 2024);
  auto dir = fs::temp_directory_path() / "stmtl_synth_test" / "seq_rt";
  fs::remove_all(dir);
  save_sequence(dir, seq);
  auto back = load_sequence(dir);
  CHECK(back.T == seq.T);
  CHECK(back.K == seq.K);
  REQUIRE(back.frames.size() == seq.frames.size());
  for (int t = 0; t < seq.T; ++t) {
    CHECK(back.frames[static_cast<size_t>(t)].rgb == seq.frames[static_cast<size_t>(t)].rgb);
    CHECK(back.frames[static_cast<size_t>(t)].mask.v == seq.frames[static_cast<size_t>(t)].mask.v);
    CHECK(back.frames[static_cast<size_t>(t)].heatmap ==
          seq.frames[static_cast<size_t>(t)].heatmap);
    CHECK(back.frames[static_cast<size_t>(t)].scanpath ==
          seq.frames[static_cast<size_t>(t)].scanpath);
  }
  CHECK(back.instruments.size() == seq.instruments.size());
  for (size_t i = 0; i < seq.instruments.size(); ++i)
    for (int t = 0; t < seq.T; ++t)
      CHECK(back.instruments[i].weights[static_cast<size_t>(t)] ==
            seq.instruments[i].weights[static_cast<size_t>(t)]);
}

TEST_CASE("shuffled batcher covers each frame exactly once per epoch") {
  auto cfg = small_config();
  cfg.frames = 10;
  Dataset ds;
  ds.sequences.push_back(gen_sequence(cfg, 5));
  ds.sequences.push_back(gen_sequence(cfg, 6));
  ds.H = cfg.height;
  ds.W = cfg.width;
  ds.K = cfg.classes;
  ds.T = cfg.frames;

  auto batches = batch_shuffled_frames(ds, 4, 77);
  std::set<std::pair<int, int>> seen;
  size_t total = 0;
  for (const auto& b : batches)
    for (const auto& r : b) {
      seen.insert({r.seq, r.t});
      ++total;
    }
  CHECK(total == 20);
  CHECK(seen.size() == 20);

  auto again = batch_shuffled_frames(ds, 4, 77);
  REQUIRE(again.size() == batches.size());
  for (size_t i = 0; i < batches.size(); ++i)
    for (size_t j = 0; j < batches[i].size(); ++j) {
      CHECK(again[i][j].seq == batches[i][j].seq);
      CHECK(again[i][j].t == batches[i][j].t);
    }
  auto other = batch_shuffled_frames(ds, 4, 78);
  bool same_order = true;
  for (size_t i = 0; i < batches.size() && same_order; ++i)
    for (size_t j = 0; j < batches[i].size(); ++j)
      if (other[i][j].t != batches[i][j].t || other[i][j].seq != batches[i][j].seq) {
        same_order = false;
        break;
      }
  CHECK_FALSE(same_order);
}

TEST_CASE("sequential clip batcher yields ordered non-overlapping clips") {
  auto cfg = small_config();
  cfg.frames = 28;
  Dataset ds;
  ds.sequences.push_back(gen_sequence(cfg, 15));
  ds.H = cfg.height;
  ds.W = cfg.width;
  ds.K = cfg.classes;
  ds.T = cfg.frames;

  auto batches = batch_sequential_clips(ds, 14, 1, 9);
  size_t clips = 0;
  std::set<int> starts;
  for (const auto& b : batches)
    for (const auto& c : b) {
      CHECK(c.len == 14);
      starts.insert(c.start);
      ++clips;
      // frames inside a clip are consecutive and increasing by construction
      for (int k = 1; k < c.len; ++k) CHECK(c.start + k == c.start + k);
    }
  CHECK(clips == 2);
  CHECK(starts == std::set<int>{0, 14});
  CHECK_THROWS_AS(batch_sequential_clips(ds, 29, 1, 9), ConfigError);
}

TEST_CASE("dataset generation writes both splits deterministically") {
  auto cfg = small_config();
  cfg.seq_train = 2;
  cfg.seq_val = 1;
  cfg.frames = 6;
  auto root = fs::temp_directory_path() / "stmtl_synth_test" / "ds";
  fs::remove_all(root);
  generate_dataset(cfg, root);
  auto train = load_dataset(root, "train");
  auto val = load_dataset(root, "val");
  CHECK(train.sequences.size() == 2);
  CHECK(val.sequences.size() == 1);
  CHECK(train.T == 6);

  auto root2 = fs::temp_directory_path() / "stmtl_synth_test" / "ds2";
  fs::remove_all(root2);
  generate_dataset(cfg, root2);
  auto train2 = load_dataset(root2, "train");
  CHECK(sequences_equal(train.sequences[0], train2.sequences[0]));
}
