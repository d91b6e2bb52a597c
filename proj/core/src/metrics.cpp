#include "stmtl/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "stmtl/image_io.hpp"

namespace stmtl {

namespace {

void check_mask_shapes(const BinaryMask& a, const BinaryMask& b, const char* op) {
  if (a.h != b.h || a.w != b.w)
    throw ShapeError(std::string(op) + ": mask shapes differ " + std::to_string(a.h) + "x" +
                     std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" +
                     std::to_string(b.w));
}

BinaryMask class_mask(const ClassMap& m, std::int64_t sample, int cls) {
  BinaryMask out;
  out.h = static_cast<int>(m.h);
  out.w = static_cast<int>(m.w);
  out.v.resize(static_cast<size_t>(m.h * m.w));
  const std::int64_t base = sample * m.h * m.w;
  for (std::int64_t i = 0; i < m.h * m.w; ++i)
    out.v[static_cast<size_t>(i)] = m.v[static_cast<size_t>(base + i)] == cls ? 1 : 0;
  return out;
}

std::vector<std::pair<int, int>> boundary_pixels(const BinaryMask& m) {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      if (!m.v[static_cast<size_t>(y * m.w + x)]) continue;
      bool edge = false;
      for (int dy = -1; dy <= 1 && !edge; ++dy)
        for (int dx = -1; dx <= 1 && !edge; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= m.h || nx < 0 || nx >= m.w ||
              !m.v[static_cast<size_t>(ny * m.w + nx)])
            edge = true;
        }
      if (edge) out.emplace_back(y, x);
    }
  return out;
}

double directed_hausdorff(const std::vector<std::pair<int, int>>& from,
                          const std::vector<std::pair<int, int>>& to) {
  double worst = 0.0;
  for (const auto& [fy, fx] : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [ty, tx] : to)
      best = std::min(best, std::hypot(static_cast<double>(fy - ty), static_cast<double>(fx - tx)));
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace

double dice(const BinaryMask& a, const BinaryMask& b) {
  check_mask_shapes(a, b, "dice");
  std::int64_t inter = 0, ca = 0, cb = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const bool va = a.v[i] != 0, vb = b.v[i] != 0;
    inter += (va && vb) ? 1 : 0;
    ca += va ? 1 : 0;
    cb += vb ? 1 : 0;
  }
  if (ca + cb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(ca + cb);
}

double type_dice(const ClassMap& pred, const ClassMap& gt, int num_classes) {
  if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w)
    throw ShapeError("type_dice: map shapes differ");
  double total = 0.0;
  int counted = 0;
  for (std::int64_t s = 0; s < pred.n; ++s)
    for (int cls = 1; cls < num_classes; ++cls) {
      BinaryMask pm = class_mask(pred, s, cls);
      BinaryMask gm = class_mask(gt, s, cls);
      if (pm.count() == 0 && gm.count() == 0) continue;
      total += dice(pm, gm);
      ++counted;
    }
  return counted ? total / counted : 1.0;
}

double hausdorff(const BinaryMask& a, const BinaryMask& b) {
  check_mask_shapes(a, b, "hausdorff");
  const bool ea = a.count() == 0, eb = b.count() == 0;
  if (ea && eb) return 0.0;
  if (ea || eb) return std::hypot(static_cast<double>(a.h), static_cast<double>(a.w));
  auto ba = boundary_pixels(a);
  auto bb = boundary_pixels(b);
  return std::max(directed_hausdorff(ba, bb), directed_hausdorff(bb, ba));
}

double type_hausdorff(const ClassMap& pred, const ClassMap& gt, int num_classes) {
  if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w)
    throw ShapeError("type_hausdorff: map shapes differ");
  double total = 0.0;
  int counted = 0;
  for (std::int64_t s = 0; s < pred.n; ++s)
    for (int cls = 1; cls < num_classes; ++cls) {
      BinaryMask pm = class_mask(pred, s, cls);
      BinaryMask gm = class_mask(gt, s, cls);
      if (pm.count() == 0 && gm.count() == 0) continue;
      total += hausdorff(pm, gm);
      ++counted;
    }
  return counted ? total / counted : 0.0;
}

double auc_borji(const Tensor& saliency, const std::vector<std::pair<int, int>>& fixations_yx,
                 int n_splits, std::uint64_t seed) {
  if (saliency.ndim() != 2)
    throw ContractError("auc_borji: expected a 2-d saliency map, got " +
                        shape_str(saliency.dims()));
  if (fixations_yx.empty()) throw ContractError("auc_borji: empty fixation list");
  if (n_splits < 1) throw ContractError("auc_borji: n_splits must be >= 1");
  const int h = static_cast<int>(saliency.dim(0));
  const int w = static_cast<int>(saliency.dim(1));

  std::vector<double> pos;
  std::vector<std::uint8_t> excluded(static_cast<size_t>(h * w), 0);
  for (const auto& [y, x] : fixations_yx) {
    if (y < 0 || y >= h || x < 0 || x >= w)
      throw ContractError("auc_borji: fixation outside the map");
    pos.push_back(saliency.data()[static_cast<size_t>(y * w + x)]);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = y + dy, nx = x + dx;
        if (ny >= 0 && ny < h && nx >= 0 && nx < w)
          excluded[static_cast<size_t>(ny * w + nx)] = 1;
      }
  }
  std::vector<std::int32_t> candidates;
  for (int p = 0; p < h * w; ++p)
    if (!excluded[static_cast<size_t>(p)]) candidates.push_back(p);
  if (candidates.empty()) throw ContractError("auc_borji: no negative pixels available");

  Rng rng(seed);
  double total = 0.0;
  for (int split = 0; split < n_splits; ++split) {
    std::vector<double> neg;
    neg.reserve(pos.size());
    for (size_t i = 0; i < pos.size(); ++i) {
      const auto pick = candidates[static_cast<size_t>(rng.uniform_int(candidates.size()))];
      neg.push_back(saliency.data()[static_cast<size_t>(pick)]);
    }
    // threshold sweep over the union of scores
    std::vector<double> taus(pos.begin(), pos.end());
    taus.insert(taus.end(), neg.begin(), neg.end());
    std::sort(taus.begin(), taus.end(), std::greater<double>());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
    double auc = 0.0, prev_tpr = 0.0, prev_fpr = 0.0;
    for (double tau : taus) {
      std::int64_t tp = 0, fp = 0;
      for (double v : pos) tp += v >= tau ? 1 : 0;
      for (double v : neg) fp += v >= tau ? 1 : 0;
      const double tpr = static_cast<double>(tp) / static_cast<double>(pos.size());
      const double fpr = static_cast<double>(fp) / static_cast<double>(neg.size());
      auc += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
      prev_tpr = tpr;
      prev_fpr = fpr;
    }
    auc += (1.0 - prev_fpr) * (1.0 + prev_tpr) * 0.5;
    total += auc;
  }
  return total / n_splits;
}

std::vector<int> extract_scanpath(const Tensor& saliency, const ClassMap& pred_mask,
                                  int num_classes) {
  if (saliency.ndim() != 2 || saliency.dim(0) != pred_mask.h || saliency.dim(1) != pred_mask.w)
    throw ShapeError("extract_scanpath: saliency/mask shapes differ");
  std::vector<std::pair<int, double>> priorities;
  for (int cls = 1; cls < num_classes; ++cls) {
    double acc = 0.0;
    std::int64_t cnt = 0;
    for (std::int64_t i = 0; i < pred_mask.h * pred_mask.w; ++i)
      if (pred_mask.v[static_cast<size_t>(i)] == cls) {
        acc += saliency.data()[static_cast<size_t>(i)];
        ++cnt;
      }
    priorities.emplace_back(cls, cnt > 0 ? acc / static_cast<double>(cnt) : 0.0);
  }
  std::stable_sort(priorities.begin(), priorities.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<int> out;
  out.reserve(priorities.size());
  for (const auto& [cls, p] : priorities) out.push_back(cls);
  return out;
}

std::pair<double, double> scanpath_accuracy(const std::vector<std::vector<int>>& pred,
                                            const std::vector<std::vector<int>>& gt) {
  if (pred.size() != gt.size())
    throw ContractError("scanpath_accuracy: frame counts differ: " + std::to_string(pred.size()) +
                        " vs " + std::to_string(gt.size()));
  double top1 = 0.0, avg = 0.0;
  int counted = 0;
  for (size_t f = 0; f < gt.size(); ++f) {
    if (gt[f].empty()) continue;
    ++counted;
    if (!pred[f].empty() && pred[f][0] == gt[f][0]) top1 += 1.0;
    const size_t L = std::min(pred[f].size(), gt[f].size());
    if (L == 0) continue;
    int match = 0;
    for (size_t r = 0; r < L; ++r) match += pred[f][r] == gt[f][r] ? 1 : 0;
    avg += static_cast<double>(match) / static_cast<double>(L);
  }
  if (counted == 0) return {1.0, 1.0};
  return {top1 / counted, avg / counted};
}

double fps_benchmark(const std::function<void()>& step, int n_warmup, int n_timed) {
  if (n_timed < 10) throw ContractError("fps_benchmark: n_timed must be >= 10");
  for (int i = 0; i < n_warmup; ++i) step();
  std::vector<double> secs(static_cast<size_t>(n_timed));
  for (int i = 0; i < n_timed; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    step();
    const auto t1 = std::chrono::steady_clock::now();
    secs[static_cast<size_t>(i)] = std::chrono::duration<double>(t1 - t0).count();
  }
  std::nth_element(secs.begin(), secs.begin() + n_timed / 2, secs.end());
  const double median = secs[static_cast<size_t>(n_timed / 2)];
  return median > 0 ? 1.0 / median : 0.0;
}

std::string hardware_descriptor() {
  std::string cpu = "unknown-cpu";
  std::ifstream is("/proc/cpuinfo");
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto pos = line.find(':');
      if (pos != std::string::npos) cpu = line.substr(pos + 2);
      break;
    }
  }
  return cpu + " x" + std::to_string(std::thread::hardware_concurrency());
}

namespace {

std::string metrics_row(const SequenceMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", m.name.c_str(),
                m.bin_dice, m.type_dice_v, m.bin_hausdorff, m.type_hausdorff_v, m.bce, m.auc_b,
                m.top1, m.avg);
  return buf;
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "sequence,bin_dice,type_dice,bin_hausdorff,type_hausdorff,bce,auc_borji,scanpath_top1,"
        "scanpath_avg\n";
  for (const auto& m : per_sequence) os << metrics_row(m) << "\n";
  os << metrics_row(mean) << "\n";
  return os.str();
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "evaluation over " << per_sequence.size() << " sequence(s)\n";
  os << "  binary dice      " << mean.bin_dice << "\n";
  os << "  type dice        " << mean.type_dice_v << "\n";
  os << "  binary hausdorff " << mean.bin_hausdorff << " px\n";
  os << "  type hausdorff   " << mean.type_hausdorff_v << " px\n";
  os << "  saliency bce     " << mean.bce << "\n";
  os << "  auc-borji        " << mean.auc_b << "\n";
  os << "  scanpath top-1   " << mean.top1 << "\n";
  os << "  scanpath avg     " << mean.avg << "\n";
  if (fps > 0) os << "  fps              " << fps << " (" << hardware << ")\n";
  return os.str();
}

EvalReport evaluate_model(STMTLModel& model, const Dataset& ds, const EvalOptions& opt) {
  NoGradGuard ng;
  model.set_eval();
  const int K = model.config().num_classes;
  EvalReport report;
  SequenceMetrics acc;
  acc.name = "mean";

  for (size_t si = 0; si < ds.sequences.size(); ++si) {
    const auto& seq = ds.sequences[si];
    SequenceMetrics sm;
    sm.name = "seq_" + std::to_string(si);
    auto state = model.zero_state(1, seq.H, seq.W);
    std::vector<std::vector<int>> pred_paths, gt_paths;
    double bce_acc = 0.0;
    const std::filesystem::path seq_dump =
        opt.dump_dir.empty() ? std::filesystem::path()
                             : opt.dump_dir / ("pred_seq_" + std::to_string(si));
    if (!seq_dump.empty()) std::filesystem::create_directories(seq_dump);
    std::ostringstream path_listing;

    for (int t = 0; t < seq.T; ++t) {
      const std::vector<FrameRef> cur = {{static_cast<int>(si), t}};
      const std::vector<FrameRef> prev = {{static_cast<int>(si), std::max(t - 1, 0)}};
      Dataset view;  // shallow indexer over this dataset
      const Dataset& dsr = ds;
      (void)view;
      Tensor img = frames_to_tensor(dsr, cur, model.config().dtype);
      Tensor img_prev = frames_to_tensor(dsr, prev, model.config().dtype);
      ClassMap gt_mask = masks_to_classmap(dsr, cur);
      Tensor gt_heat = heatmaps_to_tensor(dsr, cur, model.config().dtype);

      ClassMap pred_mask;
      Tensor sal2d;
      if (opt.passthrough_gt) {
        pred_mask = gt_mask;
        sal2d = reshape(gt_heat, {seq.H, seq.W});
      } else {
        auto [out, next] = model.forward(img, img_prev, state);
        state = next;
        // argmax class decode
        pred_mask.n = 1;
        pred_mask.h = seq.H;
        pred_mask.w = seq.W;
        pred_mask.v.resize(static_cast<size_t>(seq.H * seq.W));
        const auto& lg = out.seg_logits;
        for (std::int64_t p = 0; p < seq.H * seq.W; ++p) {
          int best = 0;
          double bv = lg.data()[static_cast<size_t>(p)];
          for (int k = 1; k < K; ++k) {
            const double v = lg.data()[static_cast<size_t>(k * seq.H * seq.W + p)];
            if (v > bv) {
              bv = v;
              best = k;
            }
          }
          pred_mask.v[static_cast<size_t>(p)] = best;
        }
        sal2d = reshape(out.saliency, {seq.H, seq.W});
      }

      // binary foreground = any instrument class
      BinaryMask pb{seq.H, seq.W, {}}, gb{seq.H, seq.W, {}};
      pb.v.resize(static_cast<size_t>(seq.H * seq.W));
      gb.v.resize(static_cast<size_t>(seq.H * seq.W));
      for (std::int64_t p = 0; p < seq.H * seq.W; ++p) {
        pb.v[static_cast<size_t>(p)] = pred_mask.v[static_cast<size_t>(p)] > 0 ? 1 : 0;
        gb.v[static_cast<size_t>(p)] = gt_mask.v[static_cast<size_t>(p)] > 0 ? 1 : 0;
      }
      sm.bin_dice += dice(pb, gb);
      sm.type_dice_v += type_dice(pred_mask, gt_mask, K);
      sm.bin_hausdorff += hausdorff(pb, gb);
      sm.type_hausdorff_v += type_hausdorff(pred_mask, gt_mask, K);
      bce_acc += bce_loss(reshape(sal2d, {1, 1, seq.H, seq.W}), gt_heat).item();

      std::vector<std::pair<int, int>> fix;
      for (const auto& f : seq.frames[static_cast<size_t>(t)].fixations)
        fix.emplace_back(static_cast<int>(std::lround(f.y)), static_cast<int>(std::lround(f.x)));
      if (!fix.empty())
        sm.auc_b += auc_borji(sal2d, fix, opt.auc_splits,
                              derive_seed(opt.seed, "auc", static_cast<std::uint64_t>(si * 1000 + t)));

      pred_paths.push_back(extract_scanpath(sal2d, pred_mask, K));
      gt_paths.push_back(seq.frames[static_cast<size_t>(t)].scanpath);

      if (!seq_dump.empty()) {
        std::vector<std::uint8_t> pm(pred_mask.v.size());
        for (size_t i = 0; i < pm.size(); ++i) pm[i] = static_cast<std::uint8_t>(pred_mask.v[i]);
        write_pgm(seq_dump / ("mask_" + std::to_string(t) + ".pgm"), pm, seq.H, seq.W);
        std::vector<std::uint8_t> sp(static_cast<size_t>(seq.H * seq.W));
        for (std::int64_t i = 0; i < seq.H * seq.W; ++i)
          sp[static_cast<size_t>(i)] = static_cast<std::uint8_t>(
              std::lround(std::clamp(sal2d.data()[static_cast<size_t>(i)], 0.0, 1.0) * 255.0));
        write_pgm(seq_dump / ("sal_" + std::to_string(t) + ".pgm"), sp, seq.H, seq.W);
        path_listing << "frame " << t << " pred:";
        for (int id : pred_paths.back()) path_listing << " " << id;
        path_listing << " | gt:";
        for (int id : gt_paths.back()) path_listing << " " << id;
        path_listing << "\n";
      }
    }
    const double T = static_cast<double>(seq.T);
    sm.bin_dice /= T;
    sm.type_dice_v /= T;
    sm.bin_hausdorff /= T;
    sm.type_hausdorff_v /= T;
    sm.bce = bce_acc / T;
    sm.auc_b /= T;
    auto [top1, avg] = scanpath_accuracy(pred_paths, gt_paths);
    sm.top1 = top1;
    sm.avg = avg;
    if (!seq_dump.empty()) {
      std::ofstream listing(seq_dump / "scanpaths.txt");
      listing << path_listing.str();
    }
    report.per_sequence.push_back(sm);

    acc.bin_dice += sm.bin_dice;
    acc.type_dice_v += sm.type_dice_v;
    acc.bin_hausdorff += sm.bin_hausdorff;
    acc.type_hausdorff_v += sm.type_hausdorff_v;
    acc.bce += sm.bce;
    acc.auc_b += sm.auc_b;
    acc.top1 += sm.top1;
    acc.avg += sm.avg;
  }
  const double S = static_cast<double>(ds.sequences.size());
  acc.bin_dice /= S;
  acc.type_dice_v /= S;
  acc.bin_hausdorff /= S;
  acc.type_hausdorff_v /= S;
  acc.bce /= S;
  acc.auc_b /= S;
  acc.top1 /= S;
  acc.avg /= S;
  report.mean = acc;

  if (opt.measure_fps && !ds.sequences.empty()) {
    const std::vector<FrameRef> r0 = {{0, 0}};
    const std::vector<FrameRef> r1 = {{0, 1 % ds.T}};
    Tensor f0 = frames_to_tensor(ds, r0, model.config().dtype);
    Tensor f1 = frames_to_tensor(ds, r1, model.config().dtype);
    auto state = model.zero_state(1, ds.H, ds.W);
    report.fps = fps_benchmark([&]() { auto out = model.forward(f1, f0, state); (void)out; },
                               opt.fps_warmup, opt.fps_timed);
    report.hardware = hardware_descriptor();
  }
  return report;
}

}  // namespace stmtl
