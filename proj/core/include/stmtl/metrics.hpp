#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "stmtl/losses.hpp"
#include "stmtl/model.hpp"
#include "stmtl/synth.hpp"

namespace stmtl {

struct BinaryMask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;

  std::int64_t count() const {
    std::int64_t c = 0;
    for (auto b : v) c += b ? 1 : 0;
    return c;
  }
};

/// 2|A.B| / (|A|+|B|); both empty -> 1.
double dice(const BinaryMask& a, const BinaryMask& b);

/// Mean over the instrument classes present in either map of the per-class
/// dice (background excluded).
double type_dice(const ClassMap& pred, const ClassMap& gt, int num_classes);

/// Symmetric Hausdorff distance between 8-connected boundary pixel sets with
/// Euclidean point distances. Both empty -> 0; exactly one empty -> the image
/// diagonal as a finite sentinel.
double hausdorff(const BinaryMask& a, const BinaryMask& b);
double type_hausdorff(const ClassMap& pred, const ClassMap& gt, int num_classes);

/// ROC AUC of saliency values at fixations against uniformly sampled
/// non-fixation pixels (a 1 px dilation of the fixations is excluded from the
/// negatives), threshold sweep with trapezoidal integration, averaged over
/// n_splits resamples.
double auc_borji(const Tensor& saliency, const std::vector<std::pair<int, int>>& fixations_yx,
                 int n_splits, std::uint64_t seed);

/// Ranks instrument classes by mean predicted saliency inside each class's
/// predicted mask (empty mask -> priority 0); ties break by ascending id.
std::vector<int> extract_scanpath(const Tensor& saliency, const ClassMap& pred_mask,
                                  int num_classes);

/// top1: fraction of frames whose top-ranked id matches; avg: mean positional
/// match rate over the shorter of the two rankings. Frames with an empty
/// ground-truth path are skipped.
std::pair<double, double> scanpath_accuracy(const std::vector<std::vector<int>>& pred,
                                            const std::vector<std::vector<int>>& gt);

/// Median-of-runs wall-clock frames per second of `step` (one frame per call).
double fps_benchmark(const std::function<void()>& step, int n_warmup, int n_timed);

std::string hardware_descriptor();

struct SequenceMetrics {
  std::string name;
  double bin_dice = 0, type_dice_v = 0, bin_hausdorff = 0, type_hausdorff_v = 0;
  double bce = 0, auc_b = 0, top1 = 0, avg = 0;
};

struct EvalReport {
  std::vector<SequenceMetrics> per_sequence;
  SequenceMetrics mean;
  double fps = 0.0;
  std::string hardware;

  /// Deterministic: metric columns only, no wall-clock fields.
  std::string to_csv() const;
  /// Human summary including fps and the hardware descriptor.
  std::string to_text() const;
};

struct EvalOptions {
  int auc_splits = 100;
  std::uint64_t seed = 42;
  bool measure_fps = true;
  int fps_warmup = 5;
  int fps_timed = 20;
  bool passthrough_gt = false;  // score the ground truth against itself
  std::filesystem::path dump_dir;  // when set: per-frame PGMs + scanpath listing
};

EvalReport evaluate_model(STMTLModel& model, const Dataset& ds, const EvalOptions& opt);

}  // namespace stmtl
