#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stmtl/losses.hpp"
#include "stmtl/rng.hpp"
#include "stmtl/tensor.hpp"

namespace stmtl {

struct SynthConfig {
  int seq_train = 8;
  int seq_val = 2;
  int frames = 28;  // two default clips per sequence
  int height = 64;
  int width = 64;
  int classes = 4;      // K including background
  int instruments = 3;  // one fixed class per instrument, ids 1..n
  double sigma = 0.0;   // heatmap kernel width; 0 selects height/16
  double max_disp = 3.0;
  double deform_prob = 0.15;
  double w_base = 0.5;
  double lambda_disp = 0.3;
  double lambda_area = 0.2;
  std::uint64_t seed = 42;

  double sigma_px() const { return sigma > 0.0 ? sigma : height / 16.0; }
  void validate() const;
};

/// Capsule pose: a segment of half-length hl around (cx,cy) at angle theta,
/// inflated by half-width hw. The tip sits at the +theta end of the axis.
struct Pose {
  double cx = 0, cy = 0, theta = 0, half_len = 0, half_wid = 0;

  double tip_x() const { return cx + half_len * std::cos(theta); }
  double tip_y() const { return cy + half_len * std::sin(theta); }
  double area() const { return 4.0 * half_len * half_wid + 3.141592653589793 * half_wid * half_wid; }
};

struct InstrumentTrack {
  int id = 0;        // == class_id at desk scale
  int class_id = 0;  // stable across the sequence
  std::vector<Pose> poses;
  std::vector<double> weights;
};

struct Fixation {
  double x = 0, y = 0, weight = 0;
};

struct SceneFrame {
  std::vector<std::uint8_t> rgb;  // interleaved, 3*H*W
  ClassMap mask;
  std::vector<float> heatmap;  // H*W in [0,1]
  std::vector<Fixation> fixations;
  std::vector<int> scanpath;  // instrument ids, highest priority first
};

struct SceneSequence {
  int T = 0, H = 0, W = 0, K = 0;
  std::uint64_t seed = 0;
  std::vector<InstrumentTrack> instruments;
  std::vector<SceneFrame> frames;
};

/// Sum of isotropic Gaussians at the fixation points, max-normalized to [0,1]
/// when nonzero.
std::vector<double> fixation_heatmap(const std::vector<Fixation>& fixations, int h, int w,
                                     double sigma);

/// w_base + lambda_disp * (displacement/normalizer) + lambda_area * |dA|/A_prev,
/// clamped to [0, 1.5]; the normalizer is the image diagonal / 10. Without a
/// previous pose the weight is w_base.
double task_weight(const Pose& cur, const Pose* prev, int h, int w, const SynthConfig& cfg);

/// Instrument ids sorted by weight descending, ties by ascending id.
std::vector<int> scanpath_gt(const std::vector<std::pair<int, double>>& weights);

SceneSequence gen_sequence(const SynthConfig& cfg, std::uint64_t seq_seed);

void save_sequence(const std::filesystem::path& dir, const SceneSequence& seq);
SceneSequence load_sequence(const std::filesystem::path& dir);

struct Dataset {
  int H = 0, W = 0, K = 0, T = 0;
  std::vector<SceneSequence> sequences;

  std::int64_t total_frames() const {
    return static_cast<std::int64_t>(sequences.size()) * T;
  }
};

/// Writes <root>/train/seq_<n> and <root>/val/seq_<n>.
void generate_dataset(const SynthConfig& cfg, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root, const std::string& split);

struct FrameRef {
  int seq = 0;
  int t = 0;
};
struct Clip {
  int seq = 0;
  int start = 0;
  int len = 0;
};

/// Every frame exactly once per epoch, order shuffled by the seed.
std::vector<std::vector<FrameRef>> batch_shuffled_frames(const Dataset& ds, int batch_size,
                                                         std::uint64_t seed);
/// Non-overlapping ordered clips; clip order is shuffled, frames inside a
/// clip stay strictly increasing. The previous frame of clip-internal index t
/// is max(t-1, 0) within the sequence.
std::vector<std::vector<Clip>> batch_sequential_clips(const Dataset& ds, int clip_len,
                                                      int clip_batch, std::uint64_t seed);

// Batch materialization (images as [B,3,H,W] in [0,1]):
Tensor frames_to_tensor(const Dataset& ds, const std::vector<FrameRef>& refs, Dtype dtype);
Tensor heatmaps_to_tensor(const Dataset& ds, const std::vector<FrameRef>& refs, Dtype dtype);
ClassMap masks_to_classmap(const Dataset& ds, const std::vector<FrameRef>& refs);

}  // namespace stmtl
