#include "stmtl/trainer.hpp"

#include <cmath>
#include <fstream>

#include "stmtl/losses.hpp"
#include "stmtl/metrics.hpp"
#include "stmtl/ops.hpp"

namespace stmtl {

TrainMode parse_train_mode(const std::string& name) {
  if (name == "asto") return TrainMode::asto;
  if (name == "joint") return TrainMode::joint;
  if (name == "single-seg") return TrainMode::single_seg;
  if (name == "single-sal") return TrainMode::single_sal;
  throw ConfigError("unknown train mode '" + name + "'");
}

std::string train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::asto: return "asto";
    case TrainMode::joint: return "joint";
    case TrainMode::single_seg: return "single-seg";
    case TrainMode::single_sal: return "single-sal";
  }
  return "?";
}

Trainer::Trainer(STMTLModel& model, const Dataset& train, const Dataset& val,
                 const TrainOptions& opt, std::filesystem::path out_dir)
    : model_(model), train_(train), val_(val), opt_(opt), out_dir_(std::move(out_dir)) {
  if (opt_.clip_len > train_.T)
    throw ConfigError("clip_len " + std::to_string(opt_.clip_len) + " exceeds sequence length " +
                      std::to_string(train_.T));
  std::filesystem::create_directories(out_dir_);
}

std::string Trainer::log_path_() const { return (out_dir_ / "train_log.csv").string(); }

void Trainer::log_row(const std::string& phase, int epoch, double lr, double loss, double val) {
  const bool fresh = !std::filesystem::exists(log_path_());
  std::ofstream os(log_path_(), std::ios::app);
  if (fresh) os << "phase,epoch,iter_lr,loss,val_metric\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s,%d,%.9g,%.9g,%.9g\n", phase.c_str(), epoch, lr, loss, val);
  os << buf;
}

void Trainer::check_finite(double loss, const std::string& phase, int epoch) const {
  if (!std::isfinite(loss))
    throw NumericError("non-finite training loss in phase=" + phase +
                       " epoch=" + std::to_string(epoch));
}

std::vector<Tensor> Trainer::encode_frame_cached(int seq, int t) {
  if (feature_cache_.empty())
    feature_cache_.assign(train_.sequences.size(), std::vector<std::vector<Tensor>>());
  auto& per_seq = feature_cache_[static_cast<size_t>(seq)];
  if (per_seq.empty()) per_seq.assign(static_cast<size_t>(train_.T), std::vector<Tensor>());
  auto& slot = per_seq[static_cast<size_t>(t)];
  if (slot.empty()) {
    NoGradGuard ng;
    Tensor img = frames_to_tensor(train_, {{seq, t}}, model_.config().dtype);
    slot = model_.encode(img);
  }
  return slot;
}

double Trainer::validate_dice() {
  NoGradGuard ng;
  model_.set_eval();
  const int K = model_.config().num_classes;
  double total = 0.0;
  std::int64_t frames = 0;
  for (size_t si = 0; si < val_.sequences.size(); ++si) {
    for (int t0 = 0; t0 < val_.T; t0 += opt_.batch_size) {
      std::vector<FrameRef> refs;
      for (int t = t0; t < std::min(val_.T, t0 + opt_.batch_size); ++t)
        refs.push_back({static_cast<int>(si), t});
      Tensor logits = model_.forward_seg(frames_to_tensor(val_, refs, model_.config().dtype));
      ClassMap gt = masks_to_classmap(val_, refs);
      const std::int64_t plane = val_.H * val_.W;
      for (size_t b = 0; b < refs.size(); ++b) {
        BinaryMask pm{val_.H, val_.W, std::vector<std::uint8_t>(static_cast<size_t>(plane), 0)};
        BinaryMask gm = pm;
        for (std::int64_t p = 0; p < plane; ++p) {
          int best = 0;
          double bv = logits.data()[static_cast<size_t>((b * K) * plane + p)];
          for (int k = 1; k < K; ++k) {
            const double v = logits.data()[static_cast<size_t>((b * K + k) * plane + p)];
            if (v > bv) {
              bv = v;
              best = k;
            }
          }
          pm.v[static_cast<size_t>(p)] = best > 0 ? 1 : 0;
          gm.v[static_cast<size_t>(p)] =
              gt.v[static_cast<size_t>(static_cast<std::int64_t>(b) * plane + p)] > 0 ? 1 : 0;
        }
        total += dice(pm, gm);
        ++frames;
      }
    }
  }
  return frames ? total / static_cast<double>(frames) : 0.0;
}

double Trainer::validate_bce() {
  NoGradGuard ng;
  model_.set_eval();
  double total = 0.0;
  std::int64_t frames = 0;
  for (size_t si = 0; si < val_.sequences.size(); ++si) {
    auto state = model_.zero_state(1, val_.H, val_.W);
    std::vector<Tensor> prev_feats;
    for (int t = 0; t < val_.T; ++t) {
      Tensor img = frames_to_tensor(val_, {{static_cast<int>(si), t}}, model_.config().dtype);
      auto feats = model_.encode(img);
      const auto& feats_prev = t == 0 ? feats : prev_feats;
      auto [sal, next] = model_.sal_from_features(feats, feats_prev, state);
      state = next;
      prev_feats = feats;
      Tensor target =
          heatmaps_to_tensor(val_, {{static_cast<int>(si), t}}, model_.config().dtype);
      total += bce_loss(sal, target).item();
      ++frames;
    }
  }
  return frames ? total / static_cast<double>(frames) : 0.0;
}

Trainer::EpochStats Trainer::run_spatial_epoch(Adam& adam, int epoch, int* iter, int max_iter) {
  model_.set_train_mode(true, true, false);
  auto batches = batch_shuffled_frames(train_, opt_.batch_size,
                                       derive_seed(opt_.seed, "spatial-epoch", epoch));
  EpochStats st;
  double loss_sum = 0.0;
  bool first = true;
  for (const auto& refs : batches) {
    adam.zero_grad();
    Tensor imgs = frames_to_tensor(train_, refs, model_.config().dtype);
    ClassMap masks = masks_to_classmap(train_, refs);
    Tensor loss = cross_entropy_multiclass(model_.forward_seg(imgs), masks);
    check_finite(loss.item(), "spatial", epoch);
    loss.backward();
    const double lr = poly_lr(opt_.base_lr, std::min(*iter, max_iter), max_iter, opt_.poly_power);
    if (first) {
      st.first_lr = lr;
      first = false;
    }
    adam.step(lr);
    ++*iter;
    loss_sum += loss.item();
  }
  st.loss = loss_sum / static_cast<double>(batches.size());
  return st;
}

Trainer::EpochStats Trainer::run_clip_epoch(const std::string& phase, Adam& adam, int epoch,
                                            int* iter, int max_iter, bool seg_loss, bool sal_loss,
                                            bool frozen_encoder, double fixed_lr) {
  const bool encoder_trains = !frozen_encoder;
  model_.set_train_mode(encoder_trains, seg_loss && encoder_trains, true);
  auto cbatches = batch_sequential_clips(train_, opt_.clip_len, opt_.clip_batch,
                                         derive_seed(opt_.seed, phase + "-epoch", epoch));
  EpochStats st;
  double loss_sum = 0.0;
  bool first = true;
  for (const auto& clips : cbatches) {
    adam.zero_grad();
    const std::int64_t B = static_cast<std::int64_t>(clips.size());
    LstmState state = model_.zero_state(B, train_.H, train_.W);
    Tensor total;
    std::vector<Tensor> feats_prev;
    for (int k = 0; k < opt_.clip_len; ++k) {
      std::vector<FrameRef> refs, prev_refs;
      for (const auto& c : clips) {
        refs.push_back({c.seq, c.start + k});
        prev_refs.push_back({c.seq, std::max(c.start + k - 1, 0)});
      }
      std::vector<Tensor> feats_t;
      if (frozen_encoder) {
        // per-stage concat of cached single-frame features
        const size_t stages = model_.encoder().stages.size();
        for (size_t s = 0; s < stages; ++s) {
          std::vector<Tensor> parts;
          for (const auto& r : refs) parts.push_back(encode_frame_cached(r.seq, r.t)[s]);
          feats_t.push_back(concat(parts, 0));
        }
        if (k == 0) {
          feats_prev.clear();
          for (size_t s = 0; s < stages; ++s) {
            std::vector<Tensor> parts;
            for (const auto& r : prev_refs) parts.push_back(encode_frame_cached(r.seq, r.t)[s]);
            feats_prev.push_back(concat(parts, 0));
          }
        }
      } else {
        feats_t = model_.encode(frames_to_tensor(train_, refs, model_.config().dtype));
        if (k == 0)
          feats_prev =
              model_.encode(frames_to_tensor(train_, prev_refs, model_.config().dtype));
      }

      Tensor step_loss;
      if (sal_loss) {
        auto [sal, next] = model_.sal_from_features(feats_t, feats_prev, state);
        state = next;
        Tensor heat = heatmaps_to_tensor(train_, refs, model_.config().dtype);
        step_loss = saliency_loss(sal, heat, opt_.alpha, opt_.sinkhorn_eps, opt_.sinkhorn_iters,
                                  opt_.down_factor);
      }
      if (seg_loss) {
        ClassMap masks = masks_to_classmap(train_, refs);
        Tensor ce = cross_entropy_multiclass(model_.seg_from_features(feats_t), masks);
        step_loss = step_loss.defined() ? add(step_loss, ce) : ce;
      }
      total = total.defined() ? add(total, step_loss) : step_loss;
      feats_prev = std::move(feats_t);
    }
    Tensor loss = scale(total, 1.0 / static_cast<double>(opt_.clip_len));
    check_finite(loss.item(), phase, epoch);
    loss.backward();
    const double lr = fixed_lr >= 0.0
                          ? fixed_lr
                          : poly_lr(opt_.base_lr, std::min(*iter, max_iter), max_iter,
                                    opt_.poly_power);
    if (first) {
      st.first_lr = lr;
      first = false;
    }
    adam.step(lr);
    ++*iter;
    loss_sum += loss.item();
  }
  st.loss = loss_sum / static_cast<double>(cbatches.size());
  return st;
}

PhaseRecord Trainer::train_phase(const std::string& phase, const std::string& data_order) {
  const bool is_spatial = phase == "spatial";
  const bool is_temporal = phase == "temporal";
  const bool is_reg = phase == "regularize";
  const bool is_joint = phase == "joint";
  const bool is_single_sal = phase == "single-sal";
  if (!is_spatial && !is_temporal && !is_reg && !is_joint && !is_single_sal)
    throw ConfigError("unknown training phase '" + phase + "'");
  const std::string want_order = is_spatial ? "shuffled_frames" : "sequential_clips";
  if (data_order != "auto" && data_order != want_order)
    throw ConfigError("phase " + phase + " requires " + want_order + " data order, got " +
                      data_order);

  if (is_spatial) {
    set_frozen(model_.params(), {"t"});
  } else if (is_temporal) {
    set_frozen(model_.params(), {"sh", "s"});
  } else if (is_single_sal) {
    set_frozen(model_.params(), {"s"});
  } else {
    set_frozen(model_.params(), {});
  }

  Adam adam(model_.params(), opt_.adam);
  const int max_epochs = is_spatial    ? opt_.max_epochs_spatial
                         : is_temporal ? opt_.max_epochs_temporal
                         : is_reg      ? opt_.max_epochs_reg
                                       : opt_.max_epochs_joint;
  int batches_per_epoch;
  if (is_spatial) {
    batches_per_epoch =
        static_cast<int>(batch_shuffled_frames(train_, opt_.batch_size, 0).size());
  } else {
    batches_per_epoch = static_cast<int>(
        batch_sequential_clips(train_, opt_.clip_len, opt_.clip_batch, 0).size());
  }
  const int max_iter = std::max(1, max_epochs * batches_per_epoch);

  if (is_temporal && opt_.cache_frozen_features) {
    model_.set_eval();  // cached features come from the frozen encoder in eval mode
  } else {
    clear_feature_cache();
  }

  PhaseRecord rec;
  rec.phase = phase;
  std::vector<double> primary_hist;    // higher-is-better series for converged()
  std::vector<double> secondary_hist;  // regularize tracks both tasks
  int iter = 0;
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    EpochStats st;
    if (is_spatial) {
      st = run_spatial_epoch(adam, epoch, &iter, max_iter);
    } else if (is_temporal) {
      st = run_clip_epoch(phase, adam, epoch, &iter, max_iter, false, true,
                          opt_.cache_frozen_features, -1.0);
    } else if (is_single_sal) {
      st = run_clip_epoch(phase, adam, epoch, &iter, max_iter, false, true, false, -1.0);
    } else if (is_reg) {
      st = run_clip_epoch(phase, adam, epoch, &iter, max_iter, true, true, false, opt_.reg_lr);
    } else {  // joint
      st = run_clip_epoch(phase, adam, epoch, &iter, max_iter, true, true, false, -1.0);
    }

    double val = 0.0;
    bool stop = false;
    if (is_spatial) {
      val = validate_dice();
      primary_hist.push_back(val);
      stop = converged(primary_hist, opt_.patience, opt_.min_delta);
    } else if (is_temporal || is_single_sal) {
      const double bce = validate_bce();
      val = bce;
      primary_hist.push_back(-bce);
      stop = converged(primary_hist, opt_.patience, opt_.min_delta);
    } else {
      const double dice_v = validate_dice();
      const double bce = validate_bce();
      val = dice_v - bce;
      primary_hist.push_back(dice_v);
      secondary_hist.push_back(-bce);
      if (is_reg) {
        // the pass continues only while both tasks keep improving
        stop = converged(primary_hist, opt_.patience, opt_.min_delta) ||
               converged(secondary_hist, opt_.patience, opt_.min_delta);
      } else {
        stop = converged(primary_hist, opt_.patience, opt_.min_delta) &&
               converged(secondary_hist, opt_.patience, opt_.min_delta);
      }
    }
    rec.train_loss.push_back(st.loss);
    rec.val_metric.push_back(val);
    rec.first_lr.push_back(st.first_lr);
    log_row(phase, epoch, st.first_lr, st.loss, val);
    if (stop) {
      rec.convergence_epoch = epoch;
      break;
    }
  }
  clear_feature_cache();
  set_frozen(model_.params(), {});
  return rec;
}

void Trainer::save_phase_checkpoint(const std::string& phase) const {
  model_.save_checkpoint(out_dir_ / ("ckpt_" + phase + ".stmt"));
}

std::vector<PhaseRecord> Trainer::run() {
  std::vector<std::string> phases;
  switch (opt_.mode) {
    case TrainMode::asto:
      phases = {"spatial", "temporal"};
      if (!opt_.no_reg) phases.push_back("regularize");
      break;
    case TrainMode::joint:
      phases = {"joint"};
      break;
    case TrainMode::single_seg:
      phases = {"spatial"};
      break;
    case TrainMode::single_sal:
      phases = {"single-sal"};
      break;
  }
  if (!opt_.stop_after.empty() &&
      std::find(phases.begin(), phases.end(), opt_.stop_after) == phases.end())
    throw ConfigError("stop_after names an unknown phase '" + opt_.stop_after + "'");

  size_t start = 0;
  if (opt_.resume) {
    for (size_t i = phases.size(); i > 0; --i) {
      const auto ckpt = out_dir_ / ("ckpt_" + phases[i - 1] + ".stmt");
      if (std::filesystem::exists(ckpt)) {
        model_.load_checkpoint(ckpt);
        start = i;
        break;
      }
    }
  } else {
    std::filesystem::remove(log_path_());
  }

  std::vector<PhaseRecord> records;
  for (size_t i = start; i < phases.size(); ++i) {
    records.push_back(train_phase(phases[i]));
    save_phase_checkpoint(phases[i]);
    if (opt_.stop_after == phases[i]) break;
  }
  model_.save_checkpoint(out_dir_ / "ckpt_final.stmt");
  return records;
}

}  // namespace stmtl
