#pragma once

#include <string>
#include <vector>

#include "stmtl/ops.hpp"
#include "stmtl/rng.hpp"
#include "stmtl/tensor.hpp"

namespace stmtl {

struct ParamEntry {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

enum class Init { kaiming, zero };

/// Kaiming-uniform fan-in bound sqrt(6/fan_in).
Tensor kaiming_conv_weight(Rng& rng, std::int64_t out_ch, std::int64_t in_ch, std::int64_t kh,
                           std::int64_t kw, Dtype dtype);

struct Conv2dLayer {
  Tensor w;  // [out, in, k, k]
  Tensor b;  // optional [out]
  int stride = 1;
  int pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(Rng& rng, int in_ch, int out_ch, int k, int stride, int pad, Dtype dtype,
              bool bias = true, Init init = Init::kaiming);
  Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
  void collect(const std::string& prefix, std::vector<ParamEntry>& out);
};

struct ConvTranspose2dLayer {
  Tensor w;  // [in, out, k, k]
  int stride = 2;
  int pad = 0;

  ConvTranspose2dLayer() = default;
  ConvTranspose2dLayer(Rng& rng, int in_ch, int out_ch, int k, int stride, int pad, Dtype dtype,
                       Init init = Init::kaiming);
  Tensor forward(const Tensor& x) const { return conv_transpose2d(x, w, stride, pad); }
  void collect(const std::string& prefix, std::vector<ParamEntry>& out);
};

struct BatchNorm2dLayer {
  Tensor gamma, beta;
  Tensor running_mean, running_var;  // state buffers, not optimized
  double momentum = 0.1;
  double eps = 1e-5;
  bool training = true;

  BatchNorm2dLayer() = default;
  BatchNorm2dLayer(int channels, Dtype dtype, double gamma_init = 1.0);
  Tensor forward(const Tensor& x) const {
    // Running stats move only on recorded training passes.
    return batch_norm(x, gamma, beta, running_mean, running_var, training, momentum, eps,
                      training && grad_enabled());
  }
  void collect(const std::string& prefix, std::vector<ParamEntry>& out);
};

/// Concurrent channel + spatial squeeze-and-excitation. With `skip` set the
/// identity input is added back so weak features survive the gating
/// (x_out = cE(x) + sE(x) + x instead of cE(x) + sE(x)).
struct ScSEBlock {
  bool skip = true;
  Conv2dLayer squeeze_a;  // 1x1 C -> C/r
  Conv2dLayer squeeze_b;  // 1x1 C/r -> C, zero-init so gates start at 0.5
  Conv2dLayer spatial;    // 1x1 C -> 1, zero-init

  struct Gates {
    Tensor channel;  // [N,C,1,1], entries in (0,1)
    Tensor spatial;  // [N,1,H,W], entries in (0,1)
  };

  ScSEBlock() = default;
  ScSEBlock(Rng& rng, int channels, int reduction, bool skip, Dtype dtype);
  /// `inject` overrides the computed gates (test hook); `gates_out` returns
  /// the gates actually applied.
  Tensor forward(const Tensor& x, Gates* gates_out = nullptr,
                 const Gates* inject = nullptr) const;
  void collect(const std::string& prefix, std::vector<ParamEntry>& out);
};

struct LstmState {
  Tensor h;  // entries in (-1,1)
  Tensor c;

  bool defined() const { return h.defined(); }
};

/// Convolutional LSTM cell. With `concat_prev` the step input is the channel
/// concatenation of the current and previous encoder features.
struct ConvLSTMCell {
  bool concat_prev = true;
  int hidden = 0;
  Conv2dLayer wxi, wxf, wxc, wxo;  // input->gate convs carry the gate biases
  Conv2dLayer whi, whf, whc, who;  // hidden->gate convs, no bias

  ConvLSTMCell() = default;
  ConvLSTMCell(Rng& rng, int in_ch, int hidden_ch, int k, bool concat_prev, Dtype dtype);
  LstmState step(const Tensor& x_in, const Tensor& x_prev, const LstmState& state,
                 Tensor* xt_probe = nullptr) const;
  LstmState zero_state(std::int64_t n, std::int64_t h, std::int64_t w, Dtype dtype) const;
  void collect(const std::string& prefix, std::vector<ParamEntry>& out);
};

/// Stride-2 conv trunk plus one residual block; the residual branch's last
/// conv is zero-init so the stage starts as its trunk.
struct ResidualStage {
  Conv2dLayer down;
  BatchNorm2dLayer bn_down;
  Conv2dLayer res_a;
  BatchNorm2dLayer bn_res;
  Conv2dLayer res_b;  // zero-init

  ResidualStage() = default;
  ResidualStage(Rng& rng, int in_ch, int out_ch, Dtype dtype);
  Tensor forward(const Tensor& x) const;
  Tensor trunk(const Tensor& x) const { return relu(bn_down.forward(down.forward(x))); }
  void set_training(bool v) {
    bn_down.training = v;
    bn_res.training = v;
  }
  void collect(const std::string& prefix, std::vector<ParamEntry>& out);
};

/// 4-stage residual encoder; stage k output has spatial size H/2^k.
struct Encoder {
  std::vector<ResidualStage> stages;

  Encoder() = default;
  Encoder(Rng& rng, int in_ch, const std::vector<int>& channels, Dtype dtype);
  std::vector<Tensor> forward(const Tensor& image) const;
  void set_training(bool v) {
    for (auto& s : stages) s.set_training(v);
  }
  void collect(const std::string& prefix, std::vector<ParamEntry>& out);
};

/// One segmentation decoder block: concat skip and previous decoder features,
/// conv, batch norm, attention, then a x2 transposed-conv upsample. The
/// attention sits before the deconv.
struct SegDecoderBlock {
  Conv2dLayer conv;
  BatchNorm2dLayer bn;
  ScSEBlock scse;
  ConvTranspose2dLayer up;

  SegDecoderBlock() = default;
  SegDecoderBlock(Rng& rng, int skip_ch, int prev_ch, int mid_ch, int out_ch, int reduction,
                  bool sc_scse, Dtype dtype);
  Tensor forward(const Tensor& skip, const Tensor& prev,
                 std::vector<std::string>* trace = nullptr) const;
  void collect(const std::string& prefix, std::vector<ParamEntry>& out);
};

struct SegDecoder {
  std::vector<SegDecoderBlock> blocks;  // deepest first
  Conv2dLayer br_a;                     // boundary refinement x + conv(relu(conv(x)))
  Conv2dLayer br_b;                     // zero-init
  Conv2dLayer head;                     // 1x1 to class logits

  SegDecoder() = default;
  SegDecoder(Rng& rng, const std::vector<int>& enc_channels, int head_ch, int num_classes,
             int reduction, bool sc_scse, Dtype dtype);
  Tensor forward(const std::vector<Tensor>& enc_feats,
                 std::vector<std::vector<std::string>>* block_traces = nullptr) const;
  void set_training(bool v) {
    for (auto& b : blocks) b.bn.training = v;
  }
  void collect(const std::string& prefix, std::vector<ParamEntry>& out);
};

/// One saliency decoder block: fuse the encoder feature by 1x1 projection and
/// add, then conv -> deconv -> conv.
struct SalDecoderBlock {
  Conv2dLayer proj;
  Conv2dLayer conv_a;
  ConvTranspose2dLayer up;
  Conv2dLayer conv_b;

  SalDecoderBlock() = default;
  SalDecoderBlock(Rng& rng, int enc_ch, int in_ch, int out_ch, Dtype dtype);
  Tensor forward(const Tensor& d, const Tensor& enc_feat) const;
  void collect(const std::string& prefix, std::vector<ParamEntry>& out);
};

struct SalDecoder {
  ConvLSTMCell lstm;
  std::vector<SalDecoderBlock> blocks;  // deepest first
  Conv2dLayer head;                     // 1x1 to a single sigmoid channel

  SalDecoder() = default;
  SalDecoder(Rng& rng, const std::vector<int>& enc_channels, int hidden, int head_ch,
             bool lstmpp, Dtype dtype);
  /// Deepest features of frames t and t-1 drive the LSTM; the hidden state
  /// then climbs the decoder fused with frame-t encoder features.
  std::pair<Tensor, LstmState> forward(const std::vector<Tensor>& feats_t,
                                       const std::vector<Tensor>& feats_prev,
                                       const LstmState& state, Tensor* xt_probe = nullptr) const;
  void collect(const std::string& prefix, std::vector<ParamEntry>& out);
};

}  // namespace stmtl
