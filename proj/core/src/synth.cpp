#include "stmtl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "stmtl/image_io.hpp"
#include "stmtl/io.hpp"

namespace stmtl {

void SynthConfig::validate() const {
  if (height % 16 != 0 || width % 16 != 0)
    throw ConfigError("synth: height/width must be divisible by 16");
  if (classes < 2) throw ConfigError("synth: classes must be >= 2");
  if (instruments < 0 || instruments > classes - 1)
    throw ConfigError("synth: need 0 <= instruments <= classes-1");
  if (frames < 2) throw ConfigError("synth: frames must be >= 2");
  if (seq_train < 0 || seq_val < 0) throw ConfigError("synth: negative sequence count");
  if (max_disp <= 0) throw ConfigError("synth: max_disp must be positive");
}

namespace {

struct Vec2 {
  double x = 0, y = 0;
};

double dist_point_segment(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = ax + t * dx, qy = ay + t * dy;
  return std::hypot(px - qx, py - qy);
}

void capsule_axis(const Pose& p, double& ax, double& ay, double& bx, double& by) {
  const double dx = std::cos(p.theta), dy = std::sin(p.theta);
  ax = p.cx - p.half_len * dx;
  ay = p.cy - p.half_len * dy;
  bx = p.cx + p.half_len * dx;
  by = p.cy + p.half_len * dy;
}

double segment_segment_distance(double ax, double ay, double bx, double by, double cx, double cy,
                                double dx, double dy) {
  // sample-free: min over the four point-segment distances plus a crossing test
  auto orient = [](double ox, double oy, double px, double py, double qx, double qy) {
    return (px - ox) * (qy - oy) - (py - oy) * (qx - ox);
  };
  const double o1 = orient(ax, ay, bx, by, cx, cy);
  const double o2 = orient(ax, ay, bx, by, dx, dy);
  const double o3 = orient(cx, cy, dx, dy, ax, ay);
  const double o4 = orient(cx, cy, dx, dy, bx, by);
  if (((o1 > 0) != (o2 > 0)) && ((o3 > 0) != (o4 > 0))) return 0.0;  // proper crossing
  double d = dist_point_segment(ax, ay, cx, cy, dx, dy);
  d = std::min(d, dist_point_segment(bx, by, cx, cy, dx, dy));
  d = std::min(d, dist_point_segment(cx, cy, ax, ay, bx, by));
  d = std::min(d, dist_point_segment(dx, dy, ax, ay, bx, by));
  return d;
}

double capsule_gap(const Pose& a, const Pose& b) {
  double a0x, a0y, a1x, a1y, b0x, b0y, b1x, b1y;
  capsule_axis(a, a0x, a0y, a1x, a1y);
  capsule_axis(b, b0x, b0y, b1x, b1y);
  return segment_segment_distance(a0x, a0y, a1x, a1y, b0x, b0y, b1x, b1y) - a.half_wid -
         b.half_wid;
}

struct Rgb {
  double r = 0, g = 0, b = 0;
};

Rgb class_color(int class_id) {
  static const Rgb palette[] = {
      {0.78, 0.78, 0.84},  // instrument class 1: metallic gray
      {0.25, 0.45, 0.85},  // 2: blue
      {0.30, 0.75, 0.40},  // 3: green
      {0.86, 0.72, 0.25},  // 4: yellow
      {0.70, 0.30, 0.75},  // 5: violet
      {0.86, 0.46, 0.25},  // 6: orange
  };
  const int n = static_cast<int>(sizeof(palette) / sizeof(palette[0]));
  if (class_id >= 1 && class_id <= n) return palette[class_id - 1];
  const double hue = std::fmod(0.61803398875 * class_id, 1.0) * 6.283185307179586;
  return {0.5 + 0.35 * std::cos(hue), 0.5 + 0.35 * std::cos(hue - 2.09),
          0.5 + 0.35 * std::cos(hue + 2.09)};
}

std::vector<double> value_noise(Rng& rng, int h, int w, int cells) {
  std::vector<double> grid(static_cast<size_t>((cells + 1) * (cells + 1)));
  for (auto& v : grid) v = rng.uniform();
  std::vector<double> out(static_cast<size_t>(h * w));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gy = static_cast<double>(y) / h * cells;
      const double gx = static_cast<double>(x) / w * cells;
      const int iy = static_cast<int>(gy), ix = static_cast<int>(gx);
      const double fy = gy - iy, fx = gx - ix;
      auto at = [&](int yy, int xx) { return grid[static_cast<size_t>(yy * (cells + 1) + xx)]; };
      const double top = at(iy, ix) * (1 - fx) + at(iy, ix + 1) * fx;
      const double bot = at(iy + 1, ix) * (1 - fx) + at(iy + 1, ix + 1) * fx;
      out[static_cast<size_t>(y * w + x)] = top * (1 - fy) + bot * fy;
    }
  return out;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

std::vector<double> fixation_heatmap(const std::vector<Fixation>& fixations, int h, int w,
                                     double sigma) {
  if (sigma <= 0) throw ContractError("fixation_heatmap: sigma must be positive");
  std::vector<double> map(static_cast<size_t>(h * w), 0.0);
  if (fixations.empty()) return map;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double peak = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (const auto& f : fixations) {
        const double d2 = (x - f.x) * (x - f.x) + (y - f.y) * (y - f.y);
        acc += f.weight * std::exp(-d2 * inv);
      }
      map[static_cast<size_t>(y * w + x)] = acc;
      peak = std::max(peak, acc);
    }
  if (peak > 0.0)
    for (auto& v : map) v /= peak;
  return map;
}

double task_weight(const Pose& cur, const Pose* prev, int h, int w, const SynthConfig& cfg) {
  if (!prev) return cfg.w_base;
  const double normalizer = std::hypot(static_cast<double>(h), static_cast<double>(w)) / 10.0;
  const double disp = std::hypot(cur.cx - prev->cx, cur.cy - prev->cy);
  const double area_prev = prev->area();
  const double darea = area_prev > 0 ? std::abs(cur.area() - area_prev) / area_prev : 0.0;
  const double wgt = cfg.w_base + cfg.lambda_disp * (disp / normalizer) + cfg.lambda_area * darea;
  return std::clamp(wgt, 0.0, 1.5);
}

std::vector<int> scanpath_gt(const std::vector<std::pair<int, double>>& weights) {
  std::vector<std::pair<int, double>> sorted = weights;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<int> ids;
  ids.reserve(sorted.size());
  for (const auto& [id, wgt] : sorted) ids.push_back(id);
  return ids;
}

SceneSequence gen_sequence(const SynthConfig& cfg, std::uint64_t seq_seed) {
  cfg.validate();
  const int H = cfg.height, W = cfg.width, T = cfg.frames;
  Rng rng(seq_seed ? seq_seed : 1);

  SceneSequence seq;
  seq.T = T;
  seq.H = H;
  seq.W = W;
  seq.K = cfg.classes;
  seq.seed = seq_seed;

  // background texture field, fixed for the sequence
  auto noise = value_noise(rng, H, W, 8);

  struct MotionState {
    Pose pose;
    double vx, vy, omega;
    double hl0, hw0;
  };
  std::vector<MotionState> state(static_cast<size_t>(cfg.instruments));

  // rejection-sampled initial placement with at least a 2 px capsule gap
  for (int i = 0; i < cfg.instruments; ++i) {
    MotionState ms;
    for (int attempt = 0; attempt < 500; ++attempt) {
      ms.pose.half_len = rng.uniform(H / 10.0, H / 6.4);
      ms.pose.half_wid = rng.uniform(2.0, 3.5);
      const double margin = ms.pose.half_len + ms.pose.half_wid + 2.0;
      ms.pose.cx = rng.uniform(margin, W - 1 - margin);
      ms.pose.cy = rng.uniform(margin, H - 1 - margin);
      ms.pose.theta = rng.uniform(0.0, 6.283185307179586);
      bool clear = true;
      for (int j = 0; j < i; ++j)
        if (capsule_gap(ms.pose, state[static_cast<size_t>(j)].pose) < 2.0) {
          clear = false;
          break;
        }
      if (clear) break;
    }
    ms.vx = rng.uniform(-cfg.max_disp, cfg.max_disp) * 0.5;
    ms.vy = rng.uniform(-cfg.max_disp, cfg.max_disp) * 0.5;
    ms.omega = rng.normal(0.0, 0.05);
    ms.hl0 = ms.pose.half_len;
    ms.hw0 = ms.pose.half_wid;
    state[static_cast<size_t>(i)] = ms;
  }

  seq.instruments.resize(static_cast<size_t>(cfg.instruments));
  for (int i = 0; i < cfg.instruments; ++i) {
    seq.instruments[static_cast<size_t>(i)].id = i + 1;
    seq.instruments[static_cast<size_t>(i)].class_id = i + 1;
  }

  for (int t = 0; t < T; ++t) {
    // advance motion (frame 0 keeps the initial placement)
    if (t > 0) {
      for (int i = 0; i < cfg.instruments; ++i) {
        MotionState& ms = state[static_cast<size_t>(i)];
        Pose prev = ms.pose;
        ms.vx = std::clamp(0.85 * ms.vx + rng.normal(0.0, 0.45 * cfg.max_disp), -cfg.max_disp,
                           cfg.max_disp);
        ms.vy = std::clamp(0.85 * ms.vy + rng.normal(0.0, 0.45 * cfg.max_disp), -cfg.max_disp,
                           cfg.max_disp);
        ms.omega = 0.9 * ms.omega + rng.normal(0.0, 0.04);
        Pose prop = prev;
        prop.theta = prev.theta + ms.omega;
        if (rng.uniform() < cfg.deform_prob) {
          prop.half_len = std::clamp(prev.half_len * rng.uniform(0.88, 1.12), 0.75 * ms.hl0,
                                     1.25 * ms.hl0);
          prop.half_wid = std::clamp(prev.half_wid * rng.uniform(0.88, 1.12), 0.75 * ms.hw0,
                                     1.25 * ms.hw0);
        }
        const double margin = prop.half_len + prop.half_wid + 2.0;
        prop.cx = prev.cx + ms.vx;
        prop.cy = prev.cy + ms.vy;
        if (prop.cx < margin || prop.cx > W - 1 - margin) {
          ms.vx = -ms.vx;
          prop.cx = std::clamp(prop.cx, margin, W - 1 - margin);
        }
        if (prop.cy < margin || prop.cy > H - 1 - margin) {
          ms.vy = -ms.vy;
          prop.cy = std::clamp(prop.cy, margin, H - 1 - margin);
        }
        bool collides = false;
        for (int j = 0; j < cfg.instruments; ++j) {
          if (j == i) continue;
          if (capsule_gap(prop, state[static_cast<size_t>(j)].pose) < 1.0) {
            collides = true;
            break;
          }
        }
        if (collides) {
          ms.vx = -ms.vx;
          ms.vy = -ms.vy;
          ms.pose = prev;
        } else {
          ms.pose = prop;
        }
      }
    }

    SceneFrame frame;
    frame.mask.n = 1;
    frame.mask.h = H;
    frame.mask.w = W;
    frame.mask.v.assign(static_cast<size_t>(H * W), 0);
    frame.rgb.resize(static_cast<size_t>(3 * H * W));

    // background with mild per-pixel grain
    std::vector<double> shade(static_cast<size_t>(H * W));
    for (int p = 0; p < H * W; ++p) {
      const double grain =
          (static_cast<double>(mix64(seq_seed ^ (static_cast<std::uint64_t>(t) << 24) ^
                                     static_cast<std::uint64_t>(p)) >>
                               40) /
           16777216.0 -
           0.5) *
          0.04;
      shade[static_cast<size_t>(p)] = noise[static_cast<size_t>(p)] * 0.16 - 0.08 + grain;
    }
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int p = y * W + x;
        const double s = shade[static_cast<size_t>(p)];
        frame.rgb[static_cast<size_t>(3 * p + 0)] = to_byte(0.44 + s);
        frame.rgb[static_cast<size_t>(3 * p + 1)] = to_byte(0.24 + 0.6 * s);
        frame.rgb[static_cast<size_t>(3 * p + 2)] = to_byte(0.22 + 0.5 * s);
      }

    // draw instruments in id order with 1 px anti-aliasing
    for (int i = 0; i < cfg.instruments; ++i) {
      const Pose& p = state[static_cast<size_t>(i)].pose;
      const Rgb col = class_color(i + 1);
      double ax, ay, bx, by;
      capsule_axis(p, ax, ay, bx, by);
      const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - p.half_wid - 2)));
      const int x1 = std::min(W - 1, static_cast<int>(std::ceil(std::max(ax, bx) + p.half_wid + 2)));
      const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - p.half_wid - 2)));
      const int y1 = std::min(H - 1, static_cast<int>(std::ceil(std::max(ay, by) + p.half_wid + 2)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double sd = dist_point_segment(x, y, ax, ay, bx, by) - p.half_wid;
          const double alpha = std::clamp(0.5 - sd, 0.0, 1.0);
          if (alpha <= 0.0) continue;
          const int px = y * W + x;
          // axial shading gives the body a lit, metallic look
          const double axdx = bx - ax, axdy = by - ay;
          const double len2 = axdx * axdx + axdy * axdy;
          const double tt =
              len2 > 0 ? std::clamp(((x - ax) * axdx + (y - ay) * axdy) / len2, 0.0, 1.0) : 0.5;
          const double lum = 0.82 + 0.30 * tt;
          const double rr = std::clamp(col.r * lum, 0.0, 1.0);
          const double gg = std::clamp(col.g * lum, 0.0, 1.0);
          const double bb = std::clamp(col.b * lum, 0.0, 1.0);
          auto blend = [&](int ch, double v) {
            const double bg = frame.rgb[static_cast<size_t>(3 * px + ch)] / 255.0;
            frame.rgb[static_cast<size_t>(3 * px + ch)] = to_byte(alpha * v + (1 - alpha) * bg);
          };
          blend(0, rr);
          blend(1, gg);
          blend(2, bb);
          if (alpha >= 0.5) frame.mask.v[static_cast<size_t>(px)] = static_cast<std::int32_t>(i + 1);
        }
    }

    // fixations at the tool tips, weighted by motion and deformation
    std::vector<std::pair<int, double>> weights;
    for (int i = 0; i < cfg.instruments; ++i) {
      auto& track = seq.instruments[static_cast<size_t>(i)];
      const Pose& cur = state[static_cast<size_t>(i)].pose;
      const Pose* prev = t > 0 ? &track.poses.back() : nullptr;
      const double wgt = task_weight(cur, prev, H, W, cfg);
      track.poses.push_back(cur);
      track.weights.push_back(wgt);
      frame.fixations.push_back({cur.tip_x(), cur.tip_y(), wgt});
      weights.emplace_back(i + 1, wgt);
    }
    auto hm = fixation_heatmap(frame.fixations, H, W, cfg.sigma_px());
    frame.heatmap.assign(hm.begin(), hm.end());
    frame.scanpath = scanpath_gt(weights);
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Disk layout

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_sequence(const std::filesystem::path& dir, const SceneSequence& seq) {
  std::filesystem::create_directories(dir);
  std::ostringstream meta;
  meta << "seed=" << seq.seed << "\n";
  meta << "T=" << seq.T << "\nH=" << seq.H << "\nW=" << seq.W << "\nK=" << seq.K << "\n";
  meta << "n_instruments=" << seq.instruments.size() << "\n";
  for (const auto& inst : seq.instruments) {
    meta << "inst." << inst.id << ".class=" << inst.class_id << "\n";
    for (int t = 0; t < seq.T; ++t) {
      const Pose& p = inst.poses[static_cast<size_t>(t)];
      meta << "inst." << inst.id << ".pose." << t << "=" << fmt_double(p.cx) << ","
           << fmt_double(p.cy) << "," << fmt_double(p.theta) << "," << fmt_double(p.half_len)
           << "," << fmt_double(p.half_wid) << "\n";
      meta << "inst." << inst.id << ".weight." << t << "="
           << fmt_double(inst.weights[static_cast<size_t>(t)]) << "\n";
    }
  }
  for (int t = 0; t < seq.T; ++t) {
    const auto& f = seq.frames[static_cast<size_t>(t)];
    meta << "fixations." << t << "=";
    for (size_t i = 0; i < f.fixations.size(); ++i) {
      if (i) meta << ";";
      meta << fmt_double(f.fixations[i].x) << "," << fmt_double(f.fixations[i].y) << ","
           << fmt_double(f.fixations[i].weight);
    }
    meta << "\n";
    meta << "scanpath." << t << "=";
    for (size_t i = 0; i < f.scanpath.size(); ++i) meta << (i ? "," : "") << f.scanpath[i];
    meta << "\n";
  }
  std::ofstream mf(dir / "meta.txt");
  if (!mf) throw ContractError("cannot write " + (dir / "meta.txt").string());
  mf << meta.str();

  for (int t = 0; t < seq.T; ++t) {
    const auto& f = seq.frames[static_cast<size_t>(t)];
    write_ppm(dir / ("frame_" + std::to_string(t) + ".ppm"), f.rgb, seq.H, seq.W);
    std::vector<std::uint8_t> gray(f.mask.v.size());
    for (size_t i = 0; i < gray.size(); ++i) gray[i] = static_cast<std::uint8_t>(f.mask.v[i]);
    write_pgm(dir / ("mask_" + std::to_string(t) + ".pgm"), gray, seq.H, seq.W);
    std::vector<double> hm(f.heatmap.begin(), f.heatmap.end());
    save_tensor(dir / ("heatmap_" + std::to_string(t) + ".stmt"),
                Tensor::from_data(std::move(hm), {seq.H, seq.W}, Dtype::f32));
    std::vector<std::uint8_t> preview(f.heatmap.size());
    for (size_t i = 0; i < preview.size(); ++i) preview[i] = to_byte(f.heatmap[i]);
    write_pgm(dir / ("heatmap_" + std::to_string(t) + ".pgm"), preview, seq.H, seq.W);
  }
}

namespace {

std::map<std::string, std::string> read_kv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ContractError("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto pos = line.find('=');
    if (pos == std::string::npos) continue;
    kv[line.substr(0, pos)] = line.substr(pos + 1);
  }
  return kv;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

SceneSequence load_sequence(const std::filesystem::path& dir) {
  auto kv = read_kv(dir / "meta.txt");
  auto need = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw ContractError("meta.txt missing key " + k);
    return it->second;
  };
  SceneSequence seq;
  seq.seed = std::stoull(need("seed"));
  seq.T = std::stoi(need("T"));
  seq.H = std::stoi(need("H"));
  seq.W = std::stoi(need("W"));
  seq.K = std::stoi(need("K"));
  const int n_inst = std::stoi(need("n_instruments"));
  for (int i = 1; i <= n_inst; ++i) {
    InstrumentTrack track;
    track.id = i;
    track.class_id = std::stoi(need("inst." + std::to_string(i) + ".class"));
    for (int t = 0; t < seq.T; ++t) {
      auto parts = split(need("inst." + std::to_string(i) + ".pose." + std::to_string(t)), ',');
      if (parts.size() != 5) throw ContractError("meta.txt: malformed pose");
      Pose p;
      p.cx = std::stod(parts[0]);
      p.cy = std::stod(parts[1]);
      p.theta = std::stod(parts[2]);
      p.half_len = std::stod(parts[3]);
      p.half_wid = std::stod(parts[4]);
      track.poses.push_back(p);
      track.weights.push_back(
          std::stod(need("inst." + std::to_string(i) + ".weight." + std::to_string(t))));
    }
    seq.instruments.push_back(std::move(track));
  }
  for (int t = 0; t < seq.T; ++t) {
    SceneFrame f;
    int h = 0, w = 0;
    f.rgb = read_ppm(dir / ("frame_" + std::to_string(t) + ".ppm"), h, w);
    if (h != seq.H || w != seq.W) throw ContractError("frame size mismatch in " + dir.string());
    auto gray = read_pgm(dir / ("mask_" + std::to_string(t) + ".pgm"), h, w);
    f.mask.n = 1;
    f.mask.h = seq.H;
    f.mask.w = seq.W;
    f.mask.v.assign(gray.begin(), gray.end());
    auto hm = load_tensor(dir / ("heatmap_" + std::to_string(t) + ".stmt"));
    f.heatmap.assign(hm.data().begin(), hm.data().end());
    const std::string fx = need("fixations." + std::to_string(t));
    if (!fx.empty())
      for (const auto& part : split(fx, ';')) {
        auto nums = split(part, ',');
        if (nums.size() != 3) throw ContractError("meta.txt: malformed fixation");
        f.fixations.push_back({std::stod(nums[0]), std::stod(nums[1]), std::stod(nums[2])});
      }
    const std::string sp = need("scanpath." + std::to_string(t));
    if (!sp.empty())
      for (const auto& part : split(sp, ',')) f.scanpath.push_back(std::stoi(part));
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

void generate_dataset(const SynthConfig& cfg, const std::filesystem::path& root) {
  cfg.validate();
  std::filesystem::create_directories(root / "train");
  std::filesystem::create_directories(root / "val");
  for (int i = 0; i < cfg.seq_train; ++i)
    save_sequence(root / "train" / ("seq_" + std::to_string(i)),
                  gen_sequence(cfg, derive_seed(cfg.seed, "train-seq", static_cast<std::uint64_t>(i))));
  for (int i = 0; i < cfg.seq_val; ++i)
    save_sequence(root / "val" / ("seq_" + std::to_string(i)),
                  gen_sequence(cfg, derive_seed(cfg.seed, "val-seq", static_cast<std::uint64_t>(i))));
}

Dataset load_dataset(const std::filesystem::path& root, const std::string& split) {
  Dataset ds;
  const auto dir = root / split;
  if (!std::filesystem::exists(dir)) throw ContractError("dataset split missing: " + dir.string());
  for (int i = 0;; ++i) {
    const auto seq_dir = dir / ("seq_" + std::to_string(i));
    if (!std::filesystem::exists(seq_dir)) break;
    ds.sequences.push_back(load_sequence(seq_dir));
  }
  if (ds.sequences.empty()) throw ContractError("no sequences under " + dir.string());
  ds.H = ds.sequences[0].H;
  ds.W = ds.sequences[0].W;
  ds.K = ds.sequences[0].K;
  ds.T = ds.sequences[0].T;
  return ds;
}

std::vector<std::vector<FrameRef>> batch_shuffled_frames(const Dataset& ds, int batch_size,
                                                         std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batcher: batch_size must be >= 1");
  std::vector<FrameRef> refs;
  for (size_t s = 0; s < ds.sequences.size(); ++s)
    for (int t = 0; t < ds.sequences[s].T; ++t) refs.push_back({static_cast<int>(s), t});
  Rng rng(seed);
  rng.shuffle(refs);
  std::vector<std::vector<FrameRef>> batches;
  for (size_t i = 0; i < refs.size(); i += static_cast<size_t>(batch_size)) {
    batches.emplace_back(refs.begin() + static_cast<std::ptrdiff_t>(i),
                         refs.begin() + static_cast<std::ptrdiff_t>(
                                            std::min(refs.size(), i + static_cast<size_t>(batch_size))));
  }
  return batches;
}

std::vector<std::vector<Clip>> batch_sequential_clips(const Dataset& ds, int clip_len,
                                                      int clip_batch, std::uint64_t seed) {
  if (clip_len < 1 || clip_batch < 1) throw ConfigError("batcher: bad clip parameters");
  if (clip_len > ds.T)
    throw ConfigError("batcher: clip_len " + std::to_string(clip_len) +
                      " exceeds sequence length " + std::to_string(ds.T));
  std::vector<Clip> clips;
  for (size_t s = 0; s < ds.sequences.size(); ++s)
    for (int start = 0; start + clip_len <= ds.sequences[s].T; start += clip_len)
      clips.push_back({static_cast<int>(s), start, clip_len});
  Rng rng(seed);
  rng.shuffle(clips);
  std::vector<std::vector<Clip>> batches;
  for (size_t i = 0; i < clips.size(); i += static_cast<size_t>(clip_batch)) {
    batches.emplace_back(clips.begin() + static_cast<std::ptrdiff_t>(i),
                         clips.begin() + static_cast<std::ptrdiff_t>(
                                             std::min(clips.size(), i + static_cast<size_t>(clip_batch))));
  }
  return batches;
}

Tensor frames_to_tensor(const Dataset& ds, const std::vector<FrameRef>& refs, Dtype dtype) {
  const std::int64_t B = static_cast<std::int64_t>(refs.size());
  const std::int64_t H = ds.H, W = ds.W;
  std::vector<double> out(static_cast<size_t>(B * 3 * H * W));
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& f = ds.sequences[static_cast<size_t>(refs[static_cast<size_t>(b)].seq)]
                        .frames[static_cast<size_t>(refs[static_cast<size_t>(b)].t)];
    for (std::int64_t p = 0; p < H * W; ++p)
      for (std::int64_t c = 0; c < 3; ++c)
        out[static_cast<size_t>(((b * 3 + c) * H * W) + p)] =
            f.rgb[static_cast<size_t>(3 * p + c)] / 255.0;
  }
  return Tensor::from_data(std::move(out), {B, 3, H, W}, dtype);
}

Tensor heatmaps_to_tensor(const Dataset& ds, const std::vector<FrameRef>& refs, Dtype dtype) {
  const std::int64_t B = static_cast<std::int64_t>(refs.size());
  const std::int64_t H = ds.H, W = ds.W;
  std::vector<double> out(static_cast<size_t>(B * H * W));
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& f = ds.sequences[static_cast<size_t>(refs[static_cast<size_t>(b)].seq)]
                        .frames[static_cast<size_t>(refs[static_cast<size_t>(b)].t)];
    for (std::int64_t p = 0; p < H * W; ++p)
      out[static_cast<size_t>(b * H * W + p)] = f.heatmap[static_cast<size_t>(p)];
  }
  return Tensor::from_data(std::move(out), {B, 1, H, W}, dtype);
}

ClassMap masks_to_classmap(const Dataset& ds, const std::vector<FrameRef>& refs) {
  ClassMap out;
  out.n = static_cast<std::int64_t>(refs.size());
  out.h = ds.H;
  out.w = ds.W;
  out.v.reserve(static_cast<size_t>(out.numel()));
  for (const auto& r : refs) {
    const auto& m = ds.sequences[static_cast<size_t>(r.seq)].frames[static_cast<size_t>(r.t)].mask;
    out.v.insert(out.v.end(), m.v.begin(), m.v.end());
  }
  return out;
}

}  // namespace stmtl
