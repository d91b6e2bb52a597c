#include "stmtl/model.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "stmtl/io.hpp"

namespace stmtl {

const std::vector<ParamEntry>& ParamGroups::group(const std::string& name) const {
  if (name == "sh") return sh;
  if (name == "s") return s;
  if (name == "t") return t;
  throw ConfigError("unknown parameter group '" + name + "'");
}

std::vector<ParamEntry>& ParamGroups::group(const std::string& name) {
  return const_cast<std::vector<ParamEntry>&>(
      static_cast<const ParamGroups&>(*this).group(name));
}

void set_frozen(ParamGroups& groups, const std::set<std::string>& frozen) {
  for (const auto& name : frozen) groups.group(name);  // validates the name
  groups.frozen = frozen;
  for (const char* name : {"sh", "s", "t"}) {
    const bool trainable = !frozen.count(name);
    for (auto& e : groups.group(name))
      if (e.trainable) e.tensor.set_requires_grad(trainable);
  }
}

STMTLModel::STMTLModel(const ModelConfig& config) : config_(config) {
  if (config_.enc_channels.empty()) throw ConfigError("model: enc_channels must be non-empty");
  if (config_.num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
  Rng rng(derive_seed(config_.seed, "model-init"));
  encoder_ = Encoder(rng, config_.in_channels, config_.enc_channels, config_.dtype);
  seg_decoder_ = SegDecoder(rng, config_.enc_channels, config_.head_channels,
                            config_.num_classes, config_.reduction, config_.sc_scse,
                            config_.dtype);
  sal_decoder_ = SalDecoder(rng, config_.enc_channels, config_.hidden(), config_.head_channels,
                            config_.lstmpp, config_.dtype);
  encoder_.collect("sh.enc", groups_.sh);
  seg_decoder_.collect("s.dec", groups_.s);
  sal_decoder_.collect("t.sal", groups_.t);
  set_frozen(groups_, {});
}

Tensor STMTLModel::forward_seg(const Tensor& frame,
                               std::vector<std::vector<std::string>>* traces) const {
  return seg_decoder_.forward(encoder_.forward(frame), traces);
}

std::pair<ModelOutputs, LstmState> STMTLModel::forward(const Tensor& frame_t,
                                                       const Tensor& frame_prev,
                                                       const LstmState& state,
                                                       ForwardProbe* probe) const {
  check_same_shape(frame_t, frame_prev, "model forward");
  auto feats_t = encoder_.forward(frame_t);
  auto feats_prev = encoder_.forward(frame_prev);
  Tensor seg = seg_decoder_.forward(feats_t, probe ? &probe->seg_block_trace : nullptr);
  auto [sal, next] = sal_decoder_.forward(feats_t, feats_prev, state,
                                          probe ? &probe->lstm_input : nullptr);
  return {{seg, sal}, next};
}

LstmState STMTLModel::zero_state(std::int64_t n, std::int64_t img_h, std::int64_t img_w) const {
  const std::int64_t div = 1ll << config_.enc_channels.size();
  return sal_decoder_.lstm.zero_state(n, img_h / div, img_w / div, config_.dtype);
}

void STMTLModel::set_train_mode(bool sh_train, bool s_train, bool t_train) {
  (void)t_train;  // the saliency decoder carries no normalization state
  encoder_.set_training(sh_train);
  seg_decoder_.set_training(s_train);
}

NamedTensors STMTLModel::state_records() const {
  NamedTensors records;
  for (const auto* g : {&groups_.sh, &groups_.s, &groups_.t})
    for (const auto& e : *g) records.emplace_back(e.name, e.tensor);
  return records;
}

void STMTLModel::save_checkpoint(const std::filesystem::path& path) const {
  save_archive(path, state_records());
  std::ofstream mf(path.string() + ".manifest");
  if (!mf) throw ContractError("cannot write manifest next to " + path.string());
  mf << manifest_text();
}

std::string STMTLModel::manifest_text() const {
  std::ostringstream os;
  os << "in_channels=" << config_.in_channels << "\n";
  os << "num_classes=" << config_.num_classes << "\n";
  os << "enc_channels=";
  for (size_t i = 0; i < config_.enc_channels.size(); ++i)
    os << (i ? "," : "") << config_.enc_channels[i];
  os << "\n";
  os << "lstm_hidden=" << config_.hidden() << "\n";
  os << "head_channels=" << config_.head_channels << "\n";
  os << "reduction=" << config_.reduction << "\n";
  os << "sc_scse=" << (config_.sc_scse ? 1 : 0) << "\n";
  os << "lstmpp=" << (config_.lstmpp ? 1 : 0) << "\n";
  os << "dtype=" << dtype_name(config_.dtype) << "\n";
  return os.str();
}

void STMTLModel::load_checkpoint(const std::filesystem::path& path) {
  auto records = load_archive(path);
  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : records) by_name.emplace(name, t);
  for (auto* g : {&groups_.sh, &groups_.s, &groups_.t}) {
    for (auto& e : *g) {
      auto it = by_name.find(e.name);
      if (it == by_name.end())
        throw ContractError("checkpoint mismatch: missing tensor " + e.name);
      const Tensor& src = it->second;
      if (src.dims() != e.tensor.dims() || src.dtype() != e.tensor.dtype())
        throw ContractError("checkpoint mismatch: tensor " + e.name + " has " +
                            shape_str(src.dims()) + "/" + dtype_name(src.dtype()) +
                            ", model expects " + shape_str(e.tensor.dims()) + "/" +
                            dtype_name(e.tensor.dtype()));
      auto dst = e.tensor.mutable_data();
      auto s = src.data();
      for (size_t i = 0; i < dst.size(); ++i) dst[i] = s[i];
      e.tensor.zero_grad();
      by_name.erase(it);
    }
  }
  if (!by_name.empty())
    throw ContractError("checkpoint mismatch: unexpected tensor " + by_name.begin()->first);
}

}  // namespace stmtl
