#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "stmtl/config.hpp"
#include "stmtl/io.hpp"
#include "stmtl/metrics.hpp"
#include "stmtl/model.hpp"
#include "stmtl/parallel.hpp"
#include "stmtl/synth.hpp"
#include "stmtl/trainer.hpp"

namespace fs = std::filesystem;
using namespace stmtl;

namespace {

constexpr int kExitUser = 2;
constexpr int kExitNumeric = 3;

RunConfig load_config(const std::string& path, std::uint64_t seed_override, bool has_seed) {
  RunConfig cfg = path.empty() ? RunConfig() : RunConfig::from_file(path);
  if (has_seed) cfg.seed = seed_override;
  return cfg;
}

void require_parent(const fs::path& out) {
  const fs::path parent = out.has_parent_path() ? out.parent_path() : fs::path(".");
  if (!fs::exists(parent))
    throw ConfigError("parent directory of --out does not exist: " + parent.string());
}

int cmd_gen_data(const std::string& config_path, const std::string& out, std::uint64_t seed,
                 bool has_seed) {
  RunConfig cfg = load_config(config_path, seed, has_seed);
  require_parent(out);
  fs::create_directories(out);
  generate_dataset(cfg.synth_config(), out);
  cfg.write(fs::path(out) / "config_resolved.txt");

  std::uint64_t checksum = 0xcbf29ce484222325ull;
  int count = 0;
  for (const char* split : {"train", "val"}) {
    for (int i = 0;; ++i) {
      const fs::path meta = fs::path(out) / split / ("seq_" + std::to_string(i)) / "meta.txt";
      if (!fs::exists(meta)) break;
      checksum ^= file_checksum(meta);
      checksum *= 0x100000001b3ull;
      ++count;
    }
  }
  std::cout << "wrote " << cfg.seq_train << " train / " << cfg.seq_val
            << " val sequences of " << cfg.frames << " frames to " << out << "\n";
  std::cout << "meta checksum " << std::hex << checksum << std::dec << " over " << count
            << " sequences\n";
  return 0;
}

ModelConfig model_config_from_manifest(const fs::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw ContractError("missing checkpoint manifest " + manifest_path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw ContractError("manifest missing key " + k);
    return it->second;
  };
  ModelConfig m;
  m.in_channels = std::stoi(need("in_channels"));
  m.num_classes = std::stoi(need("num_classes"));
  m.enc_channels.clear();
  std::string cur;
  for (char c : need("enc_channels") + ",") {
    if (c == ',') {
      if (!cur.empty()) m.enc_channels.push_back(std::stoi(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  m.lstm_hidden = std::stoi(need("lstm_hidden"));
  m.head_channels = std::stoi(need("head_channels"));
  m.reduction = std::stoi(need("reduction"));
  m.sc_scse = need("sc_scse") == "1";
  m.lstmpp = need("lstmpp") == "1";
  m.dtype = need("dtype") == "f64" ? Dtype::f64 : Dtype::f32;
  return m;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              const std::string& mode, bool resume, bool no_sc_scse, bool no_lstmpp, bool no_reg,
              int threads, std::uint64_t seed, bool has_seed) {
  RunConfig cfg = load_config(config_path, seed, has_seed);
  if (no_sc_scse) cfg.sc_scse = 0;
  if (no_lstmpp) cfg.lstmpp = 0;
  if (no_reg) cfg.no_reg = 1;
  if (threads > 0) cfg.threads = threads;
  set_num_threads(cfg.threads);

  if (!fs::exists(fs::path(data) / "train"))
    throw ConfigError("dataset not found under " + data + " (expected train/ and val/)");
  Dataset train_ds = load_dataset(data, "train");
  Dataset val_ds = load_dataset(data, "val");

  require_parent(out);
  fs::create_directories(out);
  cfg.write(fs::path(out) / "config_resolved.txt");
  std::ofstream(fs::path(out) / "mode.txt") << mode << "\n";

  STMTLModel model(cfg.model_config());
  TrainOptions opt = cfg.train_options();
  opt.mode = parse_train_mode(mode);
  opt.resume = resume;
  Trainer trainer(model, train_ds, val_ds, opt, out);
  auto records = trainer.run();
  for (const auto& rec : records)
    std::cout << "phase " << rec.phase << ": " << rec.epochs() << " epoch(s), final loss "
              << (rec.train_loss.empty() ? 0.0 : rec.train_loss.back()) << ", final val "
              << (rec.val_metric.empty() ? 0.0 : rec.val_metric.back())
              << (rec.convergence_epoch >= 0
                      ? " (converged at " + std::to_string(rec.convergence_epoch) + ")"
                      : "")
              << "\n";
  std::cout << "checkpoints and train_log.csv written to " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& out,
             const std::string& split, bool passthrough, const std::string& config_path,
             int threads, std::uint64_t seed, bool has_seed) {
  RunConfig cfg = load_config(config_path, seed, has_seed);
  if (threads > 0) cfg.threads = threads;
  set_num_threads(cfg.threads);
  Dataset ds = load_dataset(data, split);

  ModelConfig mc;
  if (!ckpt.empty()) {
    mc = model_config_from_manifest(ckpt + ".manifest");
  } else {
    if (!passthrough) throw ConfigError("--ckpt is required unless --passthrough-gt is set");
    mc = cfg.model_config();
    mc.num_classes = ds.K;
  }
  STMTLModel model(mc);
  if (!ckpt.empty()) model.load_checkpoint(ckpt);

  require_parent(out);
  fs::create_directories(out);
  cfg.write(fs::path(out) / "config_resolved.txt");

  EvalOptions opt;
  opt.auc_splits = cfg.auc_splits;
  opt.seed = cfg.seed;
  opt.fps_warmup = cfg.fps_warmup;
  opt.fps_timed = cfg.fps_timed;
  opt.passthrough_gt = passthrough;
  opt.dump_dir = out;
  EvalReport report = evaluate_model(model, ds, opt);

  std::ofstream(fs::path(out) / "eval.csv") << report.to_csv();
  std::ofstream(fs::path(out) / "summary.txt") << report.to_text();
  std::ofstream(fs::path(out) / "fps.txt") << report.fps << "\n";
  std::cout << report.to_text();
  return 0;
}

struct RunRow {
  std::string name;
  std::string mode = "?";
  bool sc_scse = true, lstmpp = true, reg = true;
  double type_dice = 0, top1 = 0, fps = 0;
  bool ok = false;
};

RunRow read_run(const fs::path& dir) {
  RunRow row;
  row.name = dir.filename().string();
  if (row.name.empty()) row.name = dir.parent_path().filename().string();
  const fs::path csv = dir / "eval.csv";
  if (!fs::exists(csv)) return row;
  std::ifstream is(csv);
  std::string line, mean_line;
  std::getline(is, line);  // header
  while (std::getline(is, line))
    if (!line.empty()) mean_line = line;
  std::vector<std::string> cols;
  std::string cur;
  for (char c : mean_line + ",") {
    if (c == ',') {
      cols.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (cols.size() < 9 || cols[0] != "mean") return row;
  row.type_dice = std::stod(cols[2]);
  row.top1 = std::stod(cols[7]);
  if (fs::exists(dir / "mode.txt")) {
    std::ifstream ms(dir / "mode.txt");
    std::getline(ms, row.mode);
  }
  if (fs::exists(dir / "config_resolved.txt")) {
    std::ifstream cs(dir / "config_resolved.txt");
    while (std::getline(cs, line)) {
      if (line.rfind("sc_scse=", 0) == 0) row.sc_scse = line.back() == '1';
      if (line.rfind("lstmpp=", 0) == 0) row.lstmpp = line.back() == '1';
      if (line.rfind("no_reg=", 0) == 0) row.reg = line.back() == '0';
    }
  }
  if (fs::exists(dir / "fps.txt")) {
    std::ifstream fsr(dir / "fps.txt");
    fsr >> row.fps;
  }
  row.ok = true;
  return row;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out) {
  std::vector<RunRow> rows;
  for (const auto& r : runs) {
    RunRow row = read_run(r);
    if (!row.ok) {
      std::cerr << "warning: skipping " << r << " (no eval.csv)\n";
      continue;
    }
    rows.push_back(row);
  }
  std::ostringstream csv, txt;
  csv << "run,mode,asto,sc_scse,lstmpp,reg,type_dice,scanpath_top1,fps\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-16s %-10s %-5s %-8s %-7s %-4s %-10s %-11s %-8s\n", "run",
                "mode", "asto", "sc_scse", "lstmpp", "reg", "type_dice", "scan_top1", "fps");
  txt << buf;
  for (const auto& r : rows) {
    const bool asto = r.mode == "asto";
    std::snprintf(buf, sizeof(buf), "%s,%s,%d,%d,%d,%d,%.6f,%.6f,%.2f\n", r.name.c_str(),
                  r.mode.c_str(), asto ? 1 : 0, r.sc_scse ? 1 : 0, r.lstmpp ? 1 : 0,
                  r.reg ? 1 : 0, r.type_dice, r.top1, r.fps);
    csv << buf;
    std::snprintf(buf, sizeof(buf), "%-16s %-10s %-5s %-8s %-7s %-4s %-10.4f %-11.4f %-8.2f\n",
                  r.name.c_str(), r.mode.c_str(), asto ? "yes" : "no", r.sc_scse ? "yes" : "no",
                  r.lstmpp ? "yes" : "no", r.reg ? "yes" : "no", r.type_dice, r.top1, r.fps);
    txt << buf;
  }
  fs::create_directories(out);
  std::ofstream(fs::path(out) / "report.csv") << csv.str();
  std::ofstream(fs::path(out) / "report.txt") << txt.str();
  std::cout << txt.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatio-temporal multi-task segmentation + saliency workbench"};
  app.require_subcommand(1);

  std::string config_path, data, out, mode = "asto", ckpt, split = "val";
  std::uint64_t seed = 0;
  bool resume = false, no_sc_scse = false, no_lstmpp = false, no_reg = false;
  bool passthrough = false;
  int threads = 0;
  std::vector<std::string> run_dirs;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  gen->add_option("--config", config_path, "config file (key=value)");
  gen->add_option("--out", out, "output dataset directory")->required();
  auto* gen_seed = gen->add_option("--seed", seed, "seed override");

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "config file");
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--out", out, "run output directory")->required();
  train->add_option("--mode", mode, "asto|joint|single-seg|single-sal")
      ->check(CLI::IsMember({"asto", "joint", "single-seg", "single-sal"}));
  train->add_flag("--resume", resume, "resume from the last phase checkpoint");
  train->add_flag("--no-sc-scse", no_sc_scse, "plain scSE attention (drop the skip term)");
  train->add_flag("--no-lstmpp", no_lstmpp, "plain ConvLSTM (current frame only)");
  train->add_flag("--no-reg", no_reg, "skip the regularization phase");
  train->add_option("--threads", threads, "forward-kernel threads");
  auto* train_seed = train->add_option("--seed", seed, "seed override");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt, "checkpoint archive");
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--out", out, "evaluation output directory")->required();
  eval->add_option("--split", split, "dataset split (train|val)");
  eval->add_flag("--passthrough-gt", passthrough, "score the ground truth against itself");
  eval->add_option("--config", config_path, "config file");
  eval->add_option("--threads", threads, "forward-kernel threads");
  auto* eval_seed = eval->add_option("--seed", seed, "seed override");

  auto* report = app.add_subcommand("report", "merge run evaluations into one table");
  report->add_option("runs", run_dirs, "run directories with eval.csv")->required();
  report->add_option("--out", out, "report output directory")->default_val(".");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out, seed, !gen_seed->empty());
    if (train->parsed())
      return cmd_train(config_path, data, out, mode, resume, no_sc_scse, no_lstmpp, no_reg,
                       threads, seed, !train_seed->empty());
    if (eval->parsed())
      return cmd_eval(ckpt, data, out, split, passthrough, config_path, threads, seed,
                      !eval_seed->empty());
    if (report->parsed()) return cmd_report(run_dirs, out);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  }
  return 0;
}
