#pragma once

#include <filesystem>
#include <string>

#include "stmtl/model.hpp"
#include "stmtl/synth.hpp"
#include "stmtl/trainer.hpp"

namespace stmtl {

/// The full run configuration: plain-text key=value lines with '#' comments.
/// Unknown keys are rejected; every run writes its fully-resolved config next
/// to its outputs.
struct RunConfig {
  std::uint64_t seed = 42;
  int threads = 1;
  std::string dtype = "f32";

  // data generation
  int seq_train = 8;
  int seq_val = 2;
  int frames = 28;
  int height = 64;
  int width = 64;
  int classes = 4;
  int instruments = 3;
  double sigma = 0.0;  // 0 selects height/16
  double max_disp = 3.0;
  double deform_prob = 0.15;
  double w_base = 0.5;
  double lambda_disp = 0.3;
  double lambda_area = 0.2;

  // model
  std::string enc_channels = "16,32,64,128";
  int lstm_hidden = 0;  // 0 matches the deepest encoder stage
  int head_channels = 8;
  int reduction = 2;
  int sc_scse = 1;
  int lstmpp = 1;

  // loss
  double alpha = 0.3;
  double sinkhorn_eps = 0.1;
  int sinkhorn_iters = 50;
  int down_factor = 4;

  // optimization
  double base_lr = 1e-4;
  double reg_lr = 1e-5;
  double poly_power = 0.9;
  double beta1 = 0.99;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double adam_eps = 1e-8;
  int batch_size = 4;
  int clip_len = 14;
  int clip_batch = 2;
  int patience = 5;
  double min_delta = 1e-4;
  int max_epochs_spatial = 60;
  int max_epochs_temporal = 60;
  int max_epochs_reg = 60;
  int max_epochs_joint = 60;
  int cache_frozen_features = 1;
  std::string stop_after;  // "", "spatial", "temporal"
  int no_reg = 0;

  // evaluation
  int auc_splits = 100;
  int fps_warmup = 5;
  int fps_timed = 20;

  static RunConfig from_file(const std::filesystem::path& path);
  void apply_line(const std::string& key, const std::string& value);
  std::string to_text() const;
  void write(const std::filesystem::path& path) const;

  SynthConfig synth_config() const;
  ModelConfig model_config() const;
  TrainOptions train_options() const;
  std::vector<int> enc_channel_list() const;
};

}  // namespace stmtl
