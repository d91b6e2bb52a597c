#include "stmtl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace stmtl {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

template <typename T>
T parse_num(const std::string& key, const std::string& value);

template <>
int parse_num<int>(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + value + "'");
  }
}

template <>
double parse_num<double>(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + value + "'");
  }
}

template <>
std::uint64_t parse_num<std::uint64_t>(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    std::uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + value + "'");
  }
}

}  // namespace

void RunConfig::apply_line(const std::string& key, const std::string& value) {
  using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
#define STMTL_NUM(field, type) \
  {#field, [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_num<type>(k, v); }}
#define STMTL_STR(field) \
  {#field, [](RunConfig& c, const std::string&, const std::string& v) { c.field = v; }}
      STMTL_NUM(seed, std::uint64_t),
      STMTL_NUM(threads, int),
      STMTL_STR(dtype),
      STMTL_NUM(seq_train, int),
      STMTL_NUM(seq_val, int),
      STMTL_NUM(frames, int),
      STMTL_NUM(height, int),
      STMTL_NUM(width, int),
      STMTL_NUM(classes, int),
      STMTL_NUM(instruments, int),
      STMTL_NUM(sigma, double),
      STMTL_NUM(max_disp, double),
      STMTL_NUM(deform_prob, double),
      STMTL_NUM(w_base, double),
      STMTL_NUM(lambda_disp, double),
      STMTL_NUM(lambda_area, double),
      STMTL_STR(enc_channels),
      STMTL_NUM(lstm_hidden, int),
      STMTL_NUM(head_channels, int),
      STMTL_NUM(reduction, int),
      STMTL_NUM(sc_scse, int),
      STMTL_NUM(lstmpp, int),
      STMTL_NUM(alpha, double),
      STMTL_NUM(sinkhorn_eps, double),
      STMTL_NUM(sinkhorn_iters, int),
      STMTL_NUM(down_factor, int),
      STMTL_NUM(base_lr, double),
      STMTL_NUM(reg_lr, double),
      STMTL_NUM(poly_power, double),
      STMTL_NUM(beta1, double),
      STMTL_NUM(beta2, double),
      STMTL_NUM(weight_decay, double),
      STMTL_NUM(adam_eps, double),
      STMTL_NUM(batch_size, int),
      STMTL_NUM(clip_len, int),
      STMTL_NUM(clip_batch, int),
      STMTL_NUM(patience, int),
      STMTL_NUM(min_delta, double),
      STMTL_NUM(max_epochs_spatial, int),
      STMTL_NUM(max_epochs_temporal, int),
      STMTL_NUM(max_epochs_reg, int),
      STMTL_NUM(max_epochs_joint, int),
      STMTL_NUM(cache_frozen_features, int),
      STMTL_STR(stop_after),
      STMTL_NUM(no_reg, int),
      STMTL_NUM(auc_splits, int),
      STMTL_NUM(fps_warmup, int),
      STMTL_NUM(fps_timed, int),
#undef STMTL_NUM
#undef STMTL_STR
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(*this, key, value);
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    cfg.apply_line(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  auto num = [&](const char* k, double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << k << "=" << buf << "\n";
  };
  os << "seed=" << seed << "\n";
  os << "threads=" << threads << "\n";
  os << "dtype=" << dtype << "\n";
  os << "seq_train=" << seq_train << "\nseq_val=" << seq_val << "\nframes=" << frames << "\n";
  os << "height=" << height << "\nwidth=" << width << "\nclasses=" << classes << "\n";
  os << "instruments=" << instruments << "\n";
  num("sigma", sigma);
  num("max_disp", max_disp);
  num("deform_prob", deform_prob);
  num("w_base", w_base);
  num("lambda_disp", lambda_disp);
  num("lambda_area", lambda_area);
  os << "enc_channels=" << enc_channels << "\n";
  os << "lstm_hidden=" << lstm_hidden << "\nhead_channels=" << head_channels << "\n";
  os << "reduction=" << reduction << "\nsc_scse=" << sc_scse << "\nlstmpp=" << lstmpp << "\n";
  num("alpha", alpha);
  num("sinkhorn_eps", sinkhorn_eps);
  os << "sinkhorn_iters=" << sinkhorn_iters << "\ndown_factor=" << down_factor << "\n";
  num("base_lr", base_lr);
  num("reg_lr", reg_lr);
  num("poly_power", poly_power);
  num("beta1", beta1);
  num("beta2", beta2);
  num("weight_decay", weight_decay);
  num("adam_eps", adam_eps);
  os << "batch_size=" << batch_size << "\nclip_len=" << clip_len << "\nclip_batch=" << clip_batch
     << "\n";
  os << "patience=" << patience << "\n";
  num("min_delta", min_delta);
  os << "max_epochs_spatial=" << max_epochs_spatial << "\nmax_epochs_temporal="
     << max_epochs_temporal << "\nmax_epochs_reg=" << max_epochs_reg << "\nmax_epochs_joint="
     << max_epochs_joint << "\n";
  os << "cache_frozen_features=" << cache_frozen_features << "\n";
  os << "stop_after=" << stop_after << "\nno_reg=" << no_reg << "\n";
  os << "auc_splits=" << auc_splits << "\nfps_warmup=" << fps_warmup << "\nfps_timed=" << fps_timed
     << "\n";
  return os.str();
}

void RunConfig::write(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write resolved config to " + path.string());
  os << to_text();
}

std::vector<int> RunConfig::enc_channel_list() const {
  std::vector<int> out;
  std::string cur;
  for (char c : enc_channels + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(parse_num<int>("enc_channels", cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (out.empty()) throw ConfigError("enc_channels must list at least one stage");
  return out;
}

SynthConfig RunConfig::synth_config() const {
  SynthConfig s;
  s.seq_train = seq_train;
  s.seq_val = seq_val;
  s.frames = frames;
  s.height = height;
  s.width = width;
  s.classes = classes;
  s.instruments = instruments;
  s.sigma = sigma;
  s.max_disp = max_disp;
  s.deform_prob = deform_prob;
  s.w_base = w_base;
  s.lambda_disp = lambda_disp;
  s.lambda_area = lambda_area;
  s.seed = seed;
  return s;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.num_classes = classes;
  m.enc_channels = enc_channel_list();
  m.lstm_hidden = lstm_hidden;
  m.head_channels = head_channels;
  m.reduction = reduction;
  m.sc_scse = sc_scse != 0;
  m.lstmpp = lstmpp != 0;
  if (dtype == "f32") {
    m.dtype = Dtype::f32;
  } else if (dtype == "f64") {
    m.dtype = Dtype::f64;
  } else {
    throw ConfigError("dtype must be f32 or f64, got '" + dtype + "'");
  }
  m.seed = seed;
  return m;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions t;
  t.seed = seed;
  t.batch_size = batch_size;
  t.clip_len = clip_len;
  t.clip_batch = clip_batch;
  t.base_lr = base_lr;
  t.reg_lr = reg_lr;
  t.poly_power = poly_power;
  t.adam.beta1 = beta1;
  t.adam.beta2 = beta2;
  t.adam.weight_decay = weight_decay;
  t.adam.eps = adam_eps;
  t.patience = patience;
  t.min_delta = min_delta;
  t.max_epochs_spatial = max_epochs_spatial;
  t.max_epochs_temporal = max_epochs_temporal;
  t.max_epochs_reg = max_epochs_reg;
  t.max_epochs_joint = max_epochs_joint;
  t.alpha = alpha;
  t.sinkhorn_eps = sinkhorn_eps;
  t.sinkhorn_iters = sinkhorn_iters;
  t.down_factor = down_factor;
  t.no_reg = no_reg != 0;
  t.cache_frozen_features = cache_frozen_features != 0;
  t.stop_after = stop_after;
  return t;
}

}  // namespace stmtl
