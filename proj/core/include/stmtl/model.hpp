#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "stmtl/blocks.hpp"
#include "stmtl/io.hpp"

namespace stmtl {

struct ModelConfig {
  int in_channels = 3;
  int num_classes = 4;
  std::vector<int> enc_channels = {16, 32, 64, 128};
  int lstm_hidden = 0;  // 0: matches the deepest encoder stage
  int head_channels = 8;
  int reduction = 2;
  bool sc_scse = true;  // skip-competitive attention in the segmentation decoder
  bool lstmpp = true;   // feed previous-frame encoder features into the LSTM
  Dtype dtype = Dtype::f32;
  std::uint64_t seed = 42;

  int hidden() const { return lstm_hidden > 0 ? lstm_hidden : enc_channels.back(); }
};

struct ModelOutputs {
  Tensor seg_logits;  // [N,K,H,W]
  Tensor saliency;    // [N,1,H,W], entries in [0,1]
};

/// The three named parameter sets: shared encoder (sh), spatial/segmentation
/// decoder (s), temporal/saliency decoder (t). Groups are disjoint and cover
/// every trainable parameter; frozen groups get requires_grad cleared so
/// they receive no gradients and are bit-unchanged by optimizer steps.
struct ParamGroups {
  std::vector<ParamEntry> sh, s, t;
  std::set<std::string> frozen;

  const std::vector<ParamEntry>& group(const std::string& name) const;
  std::vector<ParamEntry>& group(const std::string& name);
};

void set_frozen(ParamGroups& groups, const std::set<std::string>& frozen);

struct ForwardProbe {
  Tensor lstm_input;  // X_t fed to the LSTM (after any concat)
  std::vector<std::vector<std::string>> seg_block_trace;
};

/// Shared encoder with task-aware segmentation and saliency decoders.
class STMTLModel {
 public:
  explicit STMTLModel(const ModelConfig& config);

  std::vector<Tensor> encode(const Tensor& frame) const { return encoder_.forward(frame); }
  Tensor seg_from_features(const std::vector<Tensor>& feats,
                           std::vector<std::vector<std::string>>* traces = nullptr) const {
    return seg_decoder_.forward(feats, traces);
  }
  std::pair<Tensor, LstmState> sal_from_features(const std::vector<Tensor>& feats_t,
                                                 const std::vector<Tensor>& feats_prev,
                                                 const LstmState& state,
                                                 Tensor* xt_probe = nullptr) const {
    return sal_decoder_.forward(feats_t, feats_prev, state, xt_probe);
  }

  /// Segmentation-only pass (one encoder run).
  Tensor forward_seg(const Tensor& frame,
                     std::vector<std::vector<std::string>>* traces = nullptr) const;

  /// Full pass: one shared-encoder run per frame, both heads.
  std::pair<ModelOutputs, LstmState> forward(const Tensor& frame_t, const Tensor& frame_prev,
                                             const LstmState& state,
                                             ForwardProbe* probe = nullptr) const;

  LstmState zero_state(std::int64_t n, std::int64_t img_h, std::int64_t img_w) const;

  ParamGroups& params() { return groups_; }
  const ParamGroups& params() const { return groups_; }

  void set_train_mode(bool sh_train, bool s_train, bool t_train);
  void set_eval() { set_train_mode(false, false, false); }

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Loads an archive written by save_checkpoint; any name/shape/dtype
  /// mismatch names the offending tensor.
  void load_checkpoint(const std::filesystem::path& path);
  NamedTensors state_records() const;
  std::string manifest_text() const;

  const ModelConfig& config() const { return config_; }

  Encoder& encoder() { return encoder_; }
  SegDecoder& seg_decoder() { return seg_decoder_; }
  SalDecoder& sal_decoder() { return sal_decoder_; }

 private:
  ModelConfig config_;
  Encoder encoder_;
  SegDecoder seg_decoder_;
  SalDecoder sal_decoder_;
  ParamGroups groups_;
};

}  // namespace stmtl
