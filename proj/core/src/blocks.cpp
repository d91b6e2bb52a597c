#include "stmtl/blocks.hpp"

#include <cmath>

namespace stmtl {

Tensor kaiming_conv_weight(Rng& rng, std::int64_t out_ch, std::int64_t in_ch, std::int64_t kh,
                           std::int64_t kw, Dtype dtype) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in_ch * kh * kw));
  std::vector<double> v(static_cast<size_t>(out_ch * in_ch * kh * kw));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(v), {out_ch, in_ch, kh, kw}, dtype, true);
}

Conv2dLayer::Conv2dLayer(Rng& rng, int in_ch, int out_ch, int k, int stride_, int pad_,
                         Dtype dtype, bool bias, Init init)
    : stride(stride_), pad(pad_) {
  if (init == Init::kaiming) {
    w = kaiming_conv_weight(rng, out_ch, in_ch, k, k, dtype);
  } else {
    w = Tensor::zeros({out_ch, in_ch, k, k}, dtype, true);
  }
  if (bias) b = Tensor::zeros({out_ch}, dtype, true);
}

void Conv2dLayer::collect(const std::string& prefix, std::vector<ParamEntry>& out) {
  out.push_back({prefix + ".w", w, true});
  if (b.defined()) out.push_back({prefix + ".b", b, true});
}

ConvTranspose2dLayer::ConvTranspose2dLayer(Rng& rng, int in_ch, int out_ch, int k, int stride_,
                                           int pad_, Dtype dtype, Init init)
    : stride(stride_), pad(pad_) {
  if (init == Init::kaiming) {
    w = kaiming_conv_weight(rng, in_ch, out_ch, k, k, dtype);  // [in, out, k, k]
  } else {
    w = Tensor::zeros({in_ch, out_ch, k, k}, dtype, true);
  }
}

void ConvTranspose2dLayer::collect(const std::string& prefix, std::vector<ParamEntry>& out) {
  out.push_back({prefix + ".w", w, true});
}

BatchNorm2dLayer::BatchNorm2dLayer(int channels, Dtype dtype, double gamma_init) {
  gamma = Tensor::full({channels}, gamma_init, dtype, true);
  beta = Tensor::zeros({channels}, dtype, true);
  running_mean = Tensor::zeros({channels}, dtype);
  running_var = Tensor::ones({channels}, dtype);
}

void BatchNorm2dLayer::collect(const std::string& prefix, std::vector<ParamEntry>& out) {
  out.push_back({prefix + ".gamma", gamma, true});
  out.push_back({prefix + ".beta", beta, true});
  out.push_back({prefix + ".running_mean", running_mean, false});
  out.push_back({prefix + ".running_var", running_var, false});
}

ScSEBlock::ScSEBlock(Rng& rng, int channels, int reduction, bool skip_, Dtype dtype)
    : skip(skip_) {
  if (reduction < 1 || channels < reduction)
    throw ConfigError("scse: channels " + std::to_string(channels) +
                      " smaller than reduction ratio " + std::to_string(reduction));
  squeeze_a = Conv2dLayer(rng, channels, channels / reduction, 1, 1, 0, dtype, true,
                          Init::kaiming);
  squeeze_b = Conv2dLayer(rng, channels / reduction, channels, 1, 1, 0, dtype, true, Init::zero);
  spatial = Conv2dLayer(rng, channels, 1, 1, 1, 0, dtype, true, Init::zero);
}

Tensor ScSEBlock::forward(const Tensor& x, Gates* gates_out, const Gates* inject) const {
  Tensor cg, sg;
  if (inject) {
    cg = inject->channel;
    sg = inject->spatial;
  } else {
    cg = sigmoid(squeeze_b.forward(relu(squeeze_a.forward(global_avg_pool(x)))));
    sg = sigmoid(spatial.forward(x));
  }
  if (gates_out) {
    gates_out->channel = cg;
    gates_out->spatial = sg;
  }
  Tensor excited = add(mul(cg, x), mul(sg, x));
  return skip ? add(excited, x) : excited;
}

void ScSEBlock::collect(const std::string& prefix, std::vector<ParamEntry>& out) {
  squeeze_a.collect(prefix + ".sq_a", out);
  squeeze_b.collect(prefix + ".sq_b", out);
  spatial.collect(prefix + ".sp", out);
}

ConvLSTMCell::ConvLSTMCell(Rng& rng, int in_ch, int hidden_ch, int k, bool concat_prev_,
                           Dtype dtype)
    : concat_prev(concat_prev_), hidden(hidden_ch) {
  const int xc = concat_prev ? 2 * in_ch : in_ch;
  const int pad = k / 2;
  wxi = Conv2dLayer(rng, xc, hidden_ch, k, 1, pad, dtype, true);
  wxf = Conv2dLayer(rng, xc, hidden_ch, k, 1, pad, dtype, true);
  wxc = Conv2dLayer(rng, xc, hidden_ch, k, 1, pad, dtype, true);
  wxo = Conv2dLayer(rng, xc, hidden_ch, k, 1, pad, dtype, true);
  whi = Conv2dLayer(rng, hidden_ch, hidden_ch, k, 1, pad, dtype, false);
  whf = Conv2dLayer(rng, hidden_ch, hidden_ch, k, 1, pad, dtype, false);
  whc = Conv2dLayer(rng, hidden_ch, hidden_ch, k, 1, pad, dtype, false);
  who = Conv2dLayer(rng, hidden_ch, hidden_ch, k, 1, pad, dtype, false);
  // forget gate opens at init
  for (auto& v : wxf.b.mutable_data()) v = 1.0;
  wxf.b.round_to_dtype();
}

LstmState ConvLSTMCell::zero_state(std::int64_t n, std::int64_t h, std::int64_t w,
                                   Dtype dtype) const {
  return {Tensor::zeros({n, hidden, h, w}, dtype), Tensor::zeros({n, hidden, h, w}, dtype)};
}

LstmState ConvLSTMCell::step(const Tensor& x_in, const Tensor& x_prev, const LstmState& state,
                             Tensor* xt_probe) const {
  check_same_shape(x_in, x_prev, "convlstm step");
  Tensor xt = concat_prev ? concat({x_in, x_prev}, 1) : x_in;
  if (xt_probe) *xt_probe = xt;
  const Tensor& h = state.h;
  Tensor i = sigmoid(add(wxi.forward(xt), whi.forward(h)));
  Tensor f = sigmoid(add(wxf.forward(xt), whf.forward(h)));
  Tensor g = tanh(add(wxc.forward(xt), whc.forward(h)));
  Tensor c = add(mul(f, state.c), mul(i, g));
  Tensor o = sigmoid(add(wxo.forward(xt), who.forward(h)));
  return {mul(o, tanh(c)), c};
}

void ConvLSTMCell::collect(const std::string& prefix, std::vector<ParamEntry>& out) {
  wxi.collect(prefix + ".wxi", out);
  wxf.collect(prefix + ".wxf", out);
  wxc.collect(prefix + ".wxc", out);
  wxo.collect(prefix + ".wxo", out);
  whi.collect(prefix + ".whi", out);
  whf.collect(prefix + ".whf", out);
  whc.collect(prefix + ".whc", out);
  who.collect(prefix + ".who", out);
}

ResidualStage::ResidualStage(Rng& rng, int in_ch, int out_ch, Dtype dtype) {
  down = Conv2dLayer(rng, in_ch, out_ch, 3, 2, 1, dtype);
  bn_down = BatchNorm2dLayer(out_ch, dtype);
  res_a = Conv2dLayer(rng, out_ch, out_ch, 3, 1, 1, dtype);
  bn_res = BatchNorm2dLayer(out_ch, dtype);
  res_b = Conv2dLayer(rng, out_ch, out_ch, 3, 1, 1, dtype, true, Init::zero);
}

Tensor ResidualStage::forward(const Tensor& x) const {
  Tensor t = trunk(x);
  Tensor r = res_b.forward(relu(bn_res.forward(res_a.forward(t))));
  return relu(add(t, r));
}

void ResidualStage::collect(const std::string& prefix, std::vector<ParamEntry>& out) {
  down.collect(prefix + ".down", out);
  bn_down.collect(prefix + ".bn_down", out);
  res_a.collect(prefix + ".res_a", out);
  bn_res.collect(prefix + ".bn_res", out);
  res_b.collect(prefix + ".res_b", out);
}

Encoder::Encoder(Rng& rng, int in_ch, const std::vector<int>& channels, Dtype dtype) {
  int prev = in_ch;
  for (int c : channels) {
    stages.emplace_back(rng, prev, c, dtype);
    prev = c;
  }
}

std::vector<Tensor> Encoder::forward(const Tensor& image) const {
  if (image.ndim() != 4)
    throw ShapeError("encoder: expected [N,C,H,W] image, got " + shape_str(image.dims()));
  const std::int64_t div = 1ll << stages.size();
  if (image.dim(2) % div != 0 || image.dim(3) % div != 0)
    throw ShapeError("encoder: spatial dims " + shape_str(image.dims()) +
                     " not divisible by " + std::to_string(div));
  std::vector<Tensor> feats;
  Tensor x = image;
  for (const auto& s : stages) {
    x = s.forward(x);
    feats.push_back(x);
  }
  return feats;
}

void Encoder::collect(const std::string& prefix, std::vector<ParamEntry>& out) {
  for (size_t i = 0; i < stages.size(); ++i)
    stages[i].collect(prefix + ".s" + std::to_string(i + 1), out);
}

SegDecoderBlock::SegDecoderBlock(Rng& rng, int skip_ch, int prev_ch, int mid_ch, int out_ch,
                                 int reduction, bool sc_scse, Dtype dtype) {
  conv = Conv2dLayer(rng, skip_ch + prev_ch, mid_ch, 3, 1, 1, dtype);
  bn = BatchNorm2dLayer(mid_ch, dtype);
  scse = ScSEBlock(rng, mid_ch, reduction, sc_scse, dtype);
  up = ConvTranspose2dLayer(rng, mid_ch, out_ch, 2, 2, 0, dtype);
}

Tensor SegDecoderBlock::forward(const Tensor& skip, const Tensor& prev,
                                std::vector<std::string>* trace) const {
  auto mark = [&](const char* tag) {
    if (trace) trace->push_back(tag);
  };
  mark("concat");
  Tensor x = concat({skip, prev}, 1);
  mark("conv");
  x = conv.forward(x);
  mark("norm");
  x = relu(bn.forward(x));
  mark("sc_scse");
  x = scse.forward(x);
  mark("deconv");
  return up.forward(x);
}

void SegDecoderBlock::collect(const std::string& prefix, std::vector<ParamEntry>& out) {
  conv.collect(prefix + ".conv", out);
  bn.collect(prefix + ".bn", out);
  scse.collect(prefix + ".scse", out);
  up.collect(prefix + ".up", out);
}

SegDecoder::SegDecoder(Rng& rng, const std::vector<int>& enc_channels, int head_ch,
                       int num_classes, int reduction, bool sc_scse, Dtype dtype) {
  const int n = static_cast<int>(enc_channels.size());
  int prev = enc_channels[static_cast<size_t>(n - 1)];
  for (int k = n - 1; k >= 0; --k) {
    const int skip_ch = enc_channels[static_cast<size_t>(k)];
    const int mid = enc_channels[static_cast<size_t>(k)];
    const int out_ch = k > 0 ? enc_channels[static_cast<size_t>(k - 1)] : head_ch;
    blocks.emplace_back(rng, skip_ch, prev, mid, out_ch, reduction, sc_scse, dtype);
    prev = out_ch;
  }
  br_a = Conv2dLayer(rng, head_ch, head_ch, 3, 1, 1, dtype);
  br_b = Conv2dLayer(rng, head_ch, head_ch, 3, 1, 1, dtype, true, Init::zero);
  head = Conv2dLayer(rng, head_ch, num_classes, 1, 1, 0, dtype);
}

Tensor SegDecoder::forward(const std::vector<Tensor>& enc_feats,
                           std::vector<std::vector<std::string>>* block_traces) const {
  if (enc_feats.size() != blocks.size())
    throw ContractError("seg decoder: expected " + std::to_string(blocks.size()) +
                        " encoder stages, got " + std::to_string(enc_feats.size()));
  Tensor x = enc_feats.back();
  for (size_t i = 0; i < blocks.size(); ++i) {
    std::vector<std::string> trace;
    const Tensor& skip = enc_feats[enc_feats.size() - 1 - i];
    x = blocks[i].forward(skip, x, block_traces ? &trace : nullptr);
    if (block_traces) block_traces->push_back(std::move(trace));
  }
  x = add(x, br_b.forward(relu(br_a.forward(x))));
  return head.forward(x);
}

void SegDecoder::collect(const std::string& prefix, std::vector<ParamEntry>& out) {
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(prefix + ".b" + std::to_string(i + 1), out);
  br_a.collect(prefix + ".br_a", out);
  br_b.collect(prefix + ".br_b", out);
  head.collect(prefix + ".head", out);
}

SalDecoderBlock::SalDecoderBlock(Rng& rng, int enc_ch, int in_ch, int out_ch, Dtype dtype) {
  proj = Conv2dLayer(rng, enc_ch, in_ch, 1, 1, 0, dtype);
  conv_a = Conv2dLayer(rng, in_ch, in_ch, 3, 1, 1, dtype);
  up = ConvTranspose2dLayer(rng, in_ch, out_ch, 2, 2, 0, dtype);
  conv_b = Conv2dLayer(rng, out_ch, out_ch, 3, 1, 1, dtype);
}

Tensor SalDecoderBlock::forward(const Tensor& d, const Tensor& enc_feat) const {
  Tensor fused = add(d, proj.forward(enc_feat));
  return relu(conv_b.forward(up.forward(relu(conv_a.forward(fused)))));
}

void SalDecoderBlock::collect(const std::string& prefix, std::vector<ParamEntry>& out) {
  proj.collect(prefix + ".proj", out);
  conv_a.collect(prefix + ".conv_a", out);
  up.collect(prefix + ".up", out);
  conv_b.collect(prefix + ".conv_b", out);
}

SalDecoder::SalDecoder(Rng& rng, const std::vector<int>& enc_channels, int hidden, int head_ch,
                       bool lstmpp, Dtype dtype) {
  const int n = static_cast<int>(enc_channels.size());
  lstm = ConvLSTMCell(rng, enc_channels.back(), hidden, 3, lstmpp, dtype);
  int prev = hidden;
  for (int k = n - 1; k >= 0; --k) {
    const int out_ch = k > 0 ? std::max(prev / 2, head_ch) : head_ch;
    blocks.emplace_back(rng, enc_channels[static_cast<size_t>(k)], prev, out_ch, dtype);
    prev = out_ch;
  }
  head = Conv2dLayer(rng, head_ch, 1, 1, 1, 0, dtype);
}

std::pair<Tensor, LstmState> SalDecoder::forward(const std::vector<Tensor>& feats_t,
                                                 const std::vector<Tensor>& feats_prev,
                                                 const LstmState& state,
                                                 Tensor* xt_probe) const {
  if (feats_t.size() != blocks.size() || feats_prev.size() != blocks.size())
    throw ContractError("sal decoder: encoder stage count mismatch");
  LstmState next = lstm.step(feats_t.back(), feats_prev.back(), state, xt_probe);
  Tensor d = next.h;
  for (size_t i = 0; i < blocks.size(); ++i)
    d = blocks[i].forward(d, feats_t[feats_t.size() - 1 - i]);
  return {sigmoid(head.forward(d)), next};
}

void SalDecoder::collect(const std::string& prefix, std::vector<ParamEntry>& out) {
  lstm.collect(prefix + ".lstm", out);
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(prefix + ".b" + std::to_string(i + 1), out);
  head.collect(prefix + ".head", out);
}

}  // namespace stmtl
