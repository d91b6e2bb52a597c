#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stmtl/model.hpp"
#include "stmtl/optim.hpp"
#include "stmtl/synth.hpp"

namespace stmtl {

enum class TrainMode { asto, joint, single_seg, single_sal };
TrainMode parse_train_mode(const std::string& name);
std::string train_mode_name(TrainMode mode);

struct TrainOptions {
  TrainMode mode = TrainMode::asto;
  std::uint64_t seed = 42;
  int batch_size = 4;
  int clip_len = 14;
  int clip_batch = 2;
  double base_lr = 1e-4;
  double reg_lr = 1e-5;  // constant low-rate fine-tune of the whole model
  double poly_power = 0.9;
  AdamConfig adam;
  int patience = 5;
  double min_delta = 1e-4;
  int max_epochs_spatial = 60;
  int max_epochs_temporal = 60;
  int max_epochs_reg = 60;
  int max_epochs_joint = 60;
  double alpha = 0.3;
  double sinkhorn_eps = 0.1;
  int sinkhorn_iters = 50;
  int down_factor = 4;
  bool no_reg = false;
  bool cache_frozen_features = true;  // temporal phase: encoder is frozen, so
                                      // per-frame features are computed once
  std::string stop_after;             // "", "spatial", "temporal"
  bool resume = false;
};

struct PhaseRecord {
  std::string phase;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_metric;  // per epoch (dice, bce, or composite)
  std::vector<double> first_lr;    // lr at the first step of each epoch
  int convergence_epoch = -1;      // epoch index where the patience rule fired
  int epochs() const { return static_cast<int>(train_loss.size()); }
};

/// Drives the asynchronous spatio-temporal schedule: spatial decoder with the
/// shared encoder first, then the temporal decoder with everything else
/// frozen, then a joint low-rate regularization pass. Joint and single-task
/// modes reuse the same machinery for the ablation arms.
class Trainer {
 public:
  Trainer(STMTLModel& model, const Dataset& train, const Dataset& val, const TrainOptions& opt,
          std::filesystem::path out_dir);

  /// Executes the mode's phase list (with resume handling) and returns one
  /// record per executed phase.
  std::vector<PhaseRecord> run();

  /// Single-phase driver; phase is one of spatial/temporal/regularize/joint/
  /// single-sal. data_order "auto" picks the phase-appropriate order; naming
  /// the wrong order explicitly is a config error.
  PhaseRecord train_phase(const std::string& phase, const std::string& data_order = "auto");

  double validate_dice();
  double validate_bce();

  const std::filesystem::path& out_dir() const { return out_dir_; }

 private:
  struct EpochStats {
    double loss = 0.0;
    double first_lr = 0.0;
  };

  void log_row(const std::string& phase, int epoch, double lr, double loss, double val);
  EpochStats run_spatial_epoch(Adam& adam, int epoch, int* iter, int max_iter);
  EpochStats run_clip_epoch(const std::string& phase, Adam& adam, int epoch, int* iter,
                            int max_iter, bool seg_loss, bool sal_loss, bool frozen_encoder,
                            double fixed_lr);
  std::vector<Tensor> encode_frame_cached(int seq, int t);
  void clear_feature_cache() { feature_cache_.clear(); }
  void check_finite(double loss, const std::string& phase, int epoch) const;
  void save_phase_checkpoint(const std::string& phase) const;

  STMTLModel& model_;
  const Dataset& train_;
  const Dataset& val_;
  TrainOptions opt_;
  std::filesystem::path out_dir_;
  std::vector<std::vector<std::vector<Tensor>>> feature_cache_;  // [seq][t] -> stages
  std::string log_path_() const;
};

}  // namespace stmtl
