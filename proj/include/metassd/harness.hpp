#pragma once

// Experiment orchestration: SNR sweeps under perfect/noisy CSI, ablation
// suites with paired task seeds, CSV emission, and resume bookkeeping.
//
// Pairing discipline: the tasks of a (snr, index) cell are generated from a
// child stream keyed only by (seed, snr, index) - never by method or
// scenario - so any two methods compared at one grid point see identical
// channel realizations and noise, and the noisy scenario differs from the
// perfect one only by the extra CSI perturbation.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "metassd/baselines.hpp"
#include "metassd/channel.hpp"
#include "metassd/detector.hpp"
#include "metassd/meta.hpp"
#include "metassd/nn.hpp"
#include "metassd/task_io.hpp"

namespace metassd {

struct ExperimentConfig {
  std::string scenario = "perfect";  // "perfect" or "noisy"
  double sigma_n_sq = 0.4;           // CSI noise variance in the noisy scenario
  std::vector<int> snr_grid = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  int tasks_per_snr = 500;
  std::vector<std::string> methods;
  int K = 4;
  double lambda = 0.01;
  double alpha = 0.05;
  std::string tap_map = "reverse";
  std::uint64_t seed = 1;
  int N = 10000;
  int P = 100;
  int L = 4;
  double gamma = 2.0;
  std::vector<int> hidden = {100, 300, 300, 100, 50};
  int block_size = 64;
  bool score_pilots = false;
  bool include_walltime = true;
  std::string out_csv;
  std::map<std::string, std::string> checkpoints;  // method name -> path

  double effective_sigma_n_sq() const { return scenario == "noisy" ? sigma_n_sq : 0.0; }
  TapMap tap_map_enum() const {
    if (tap_map == "reverse") return TapMap::reverse;
    if (tap_map == "forward") return TapMap::forward;
    throw std::invalid_argument("tap_map must be \"reverse\" or \"forward\"");
  }
  Architecture architecture() const {
    Architecture a;
    a.L = L;
    a.constellation_size = 2;
    a.hidden_dims = hidden;
    return a;
  }
};

struct ResultRecord {
  std::string method;
  std::string scenario;
  int snr_db = 0;
  int n_tasks = 0;
  double ser_mean = 0.0;
  double ser_stderr = 0.0;
  double wall_time_s = 0.0;
  std::string config_hash;
};

namespace detail {

inline std::string fmt_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

// ---- config file (TOML syntax, flat key = value) ----

inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "scenario = \"" << cfg.scenario << "\"\n";
  os << "sigma_n_sq = " << detail::fmt_g17(cfg.sigma_n_sq) << "\n";
  os << "snr_grid = [";
  for (std::size_t i = 0; i < cfg.snr_grid.size(); ++i)
    os << (i ? ", " : "") << cfg.snr_grid[i];
  os << "]\n";
  os << "tasks_per_snr = " << cfg.tasks_per_snr << "\n";
  os << "methods = [";
  for (std::size_t i = 0; i < cfg.methods.size(); ++i)
    os << (i ? ", " : "") << '"' << cfg.methods[i] << '"';
  os << "]\n";
  os << "K = " << cfg.K << "\n";
  os << "lambda = " << detail::fmt_g17(cfg.lambda) << "\n";
  os << "alpha = " << detail::fmt_g17(cfg.alpha) << "\n";
  os << "tap_map = \"" << cfg.tap_map << "\"\n";
  os << "seed = " << cfg.seed << "\n";
  os << "N = " << cfg.N << "\n";
  os << "P = " << cfg.P << "\n";
  os << "L = " << cfg.L << "\n";
  os << "gamma = " << detail::fmt_g17(cfg.gamma) << "\n";
  os << "hidden = [";
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) os << (i ? ", " : "") << cfg.hidden[i];
  os << "]\n";
  os << "block_size = " << cfg.block_size << "\n";
  os << "score_pilots = " << (cfg.score_pilots ? "true" : "false") << "\n";
  os << "include_walltime = " << (cfg.include_walltime ? "true" : "false") << "\n";
  os << "out_csv = \"" << cfg.out_csv << "\"\n";
  for (const auto& [method, path] : cfg.checkpoints)
    os << "ckpt_" << method << " = \"" << path << "\"\n";
  return os.str();
}

inline void write_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("config: cannot open for write: " + path);
  os << serialize_config(cfg);
}

namespace detail {

inline std::string strip(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string parse_toml_string(const std::string& v, const std::string& key) {
  if (v.size() < 2 || v.front() != '"' || v.back() != '"')
    throw std::runtime_error("config: expected quoted string for " + key);
  return v.substr(1, v.size() - 2);
}

inline std::vector<std::string> split_array(const std::string& v, const std::string& key) {
  if (v.size() < 2 || v.front() != '[' || v.back() != ']')
    throw std::runtime_error("config: expected array for " + key);
  std::vector<std::string> items;
  std::string body = v.substr(1, v.size() - 2);
  std::string cur;
  for (char ch : body) {
    if (ch == ',') {
      items.push_back(strip(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  cur = strip(cur);
  if (!cur.empty()) items.push_back(cur);
  return items;
}

inline bool parse_toml_bool(const std::string& v, const std::string& key) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::runtime_error("config: expected true/false for " + key);
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig cfg;
  cfg.snr_grid.clear();
  cfg.hidden.clear();
  std::string line;
  while (std::getline(is, line)) {
    // comments start with '#' outside quotes
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quotes = !in_quotes;
      if (line[i] == '#' && !in_quotes) {
        line = line.substr(0, i);
        break;
      }
    }
    line = detail::strip(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("config: bad line: " + line);
    std::string key = detail::strip(line.substr(0, eq));
    std::string val = detail::strip(line.substr(eq + 1));
    if (key == "scenario") cfg.scenario = detail::parse_toml_string(val, key);
    else if (key == "sigma_n_sq") cfg.sigma_n_sq = std::stod(val);
    else if (key == "snr_grid") {
      for (const auto& s : detail::split_array(val, key)) cfg.snr_grid.push_back(std::stoi(s));
    } else if (key == "tasks_per_snr") cfg.tasks_per_snr = std::stoi(val);
    else if (key == "methods") {
      for (const auto& s : detail::split_array(val, key))
        cfg.methods.push_back(detail::parse_toml_string(s, key));
    } else if (key == "K") cfg.K = std::stoi(val);
    else if (key == "lambda") cfg.lambda = std::stod(val);
    else if (key == "alpha") cfg.alpha = std::stod(val);
    else if (key == "tap_map") cfg.tap_map = detail::parse_toml_string(val, key);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "N") cfg.N = std::stoi(val);
    else if (key == "P") cfg.P = std::stoi(val);
    else if (key == "L") cfg.L = std::stoi(val);
    else if (key == "gamma") cfg.gamma = std::stod(val);
    else if (key == "hidden") {
      for (const auto& s : detail::split_array(val, key)) cfg.hidden.push_back(std::stoi(s));
    } else if (key == "block_size") cfg.block_size = std::stoi(val);
    else if (key == "score_pilots") cfg.score_pilots = detail::parse_toml_bool(val, key);
    else if (key == "include_walltime") cfg.include_walltime = detail::parse_toml_bool(val, key);
    else if (key == "out_csv") cfg.out_csv = detail::parse_toml_string(val, key);
    else if (key.rfind("ckpt_", 0) == 0)
      cfg.checkpoints[key.substr(5)] = detail::parse_toml_string(val, key);
    else throw std::runtime_error("config: unknown key: " + key);
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open: " + path);
  return parse_config(is);
}

// hash of the experiment-content fields: everything that determines a
// cell's numeric result except the method list and output/reporting knobs
inline std::string config_hash(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << cfg.scenario << "|" << detail::fmt_g17(cfg.effective_sigma_n_sq()) << "|"
     << cfg.tasks_per_snr << "|" << cfg.K << "|" << detail::fmt_g17(cfg.lambda) << "|"
     << detail::fmt_g17(cfg.alpha) << "|" << cfg.tap_map << "|" << cfg.seed << "|" << cfg.N
     << "|" << cfg.P << "|" << cfg.L << "|" << detail::fmt_g17(cfg.gamma) << "|";
  for (int h : cfg.hidden) os << h << ",";
  os << "|" << cfg.block_size << "|" << (cfg.score_pilots ? 1 : 0);
  return detail::hex64(detail::fnv1a64(os.str()));
}

// ---- CSV ----

inline constexpr const char* kCsvHeader =
    "method,scenario,snr_db,n_tasks,ser_mean,ser_stderr,wall_time_s,config_hash";

inline std::string format_record(const ResultRecord& r) {
  std::ostringstream os;
  os << r.method << "," << r.scenario << "," << r.snr_db << "," << r.n_tasks << ","
     << detail::fmt_g9(r.ser_mean) << "," << detail::fmt_g9(r.ser_stderr) << ","
     << detail::fmt_g9(r.wall_time_s) << "," << r.config_hash;
  return os.str();
}

inline ResultRecord parse_record(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(cur);
  if (fields.size() != 8) throw std::runtime_error("csv: bad record: " + line);
  ResultRecord r;
  r.method = fields[0];
  r.scenario = fields[1];
  r.snr_db = std::stoi(fields[2]);
  r.n_tasks = std::stoi(fields[3]);
  r.ser_mean = std::stod(fields[4]);
  r.ser_stderr = std::stod(fields[5]);
  r.wall_time_s = std::stod(fields[6]);
  r.config_hash = fields[7];
  return r;
}

inline void sort_records(std::vector<ResultRecord>& records) {
  std::sort(records.begin(), records.end(), [](const ResultRecord& a, const ResultRecord& b) {
    if (a.method != b.method) return a.method < b.method;
    if (a.scenario != b.scenario) return a.scenario < b.scenario;
    return a.snr_db < b.snr_db;
  });
}

inline void emit_csv(std::vector<ResultRecord> records, const std::string& path) {
  sort_records(records);
  std::ofstream os(path);
  if (!os) throw std::runtime_error("csv: cannot open for write: " + path);
  os << kCsvHeader << "\n";
  for (const auto& r : records) os << format_record(r) << "\n";
  if (!os) throw std::runtime_error("csv: write failed: " + path);
}

inline std::vector<ResultRecord> parse_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("csv: cannot open: " + path);
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader)
    throw std::runtime_error("csv: bad header: " + path);
  std::vector<ResultRecord> records;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    records.push_back(parse_record(line));
  }
  return records;
}

// ---- evaluation cells ----

inline Task make_eval_task(const ExperimentConfig& cfg, int snr_db, int index) {
  TaskConfig tc;
  tc.N = cfg.N;
  tc.P = cfg.P;
  tc.L = cfg.L;
  tc.gamma = cfg.gamma;
  tc.snr_uniform = false;
  tc.snr_db = snr_db;
  tc.sigma_n_sq = cfg.effective_sigma_n_sq();
  RngStream r = RngStream(cfg.seed)
                    .child(0xE7A1)
                    .child(static_cast<std::uint64_t>(snr_db))
                    .child(static_cast<std::uint64_t>(index));
  return make_task(tc, r);
}

namespace detail {

inline bool parse_method_steps(const std::string& name, const std::string& prefix, int* steps) {
  if (name.rfind(prefix, 0) != 0) return false;
  std::string rest = name.substr(prefix.size());
  if (rest.empty()) return false;
  for (char ch : rest)
    if (!std::isdigit(static_cast<unsigned char>(ch))) return false;
  *steps = std::stoi(rest);
  return true;
}

}  // namespace detail

inline bool method_needs_checkpoint(const std::string& name) {
  int steps = 0;
  return name == "metassd" || name == "metassd_no_ssl" || name == "metassd_no_temp" ||
         detail::parse_method_steps(name, "naive_", &steps);
}

inline bool method_is_known(const std::string& name) {
  int steps = 0;
  return name == "bcjr" || name == "mmse" || method_needs_checkpoint(name) ||
         detail::parse_method_steps(name, "only_adaptation_", &steps);
}

// per-task SER of one method on one task; learned-method checkpoints are
// passed in preloaded
inline double run_method_on_task(const std::string& name, const Task& task,
                                 const ExperimentConfig& cfg,
                                 const std::map<std::string, ModelParams>& loaded) {
  const int score_begin = cfg.score_pilots ? 0 : task.P;
  if (name == "bcjr") {
    auto res = bcjr_detect(task.y, task.h_est, task.noise_var);
    return symbol_error_rate(res.hard, task.x, score_begin);
  }
  if (name == "mmse") {
    auto res = mmse_ofdm_detect(task.y, task.h_est, task.noise_var, cfg.block_size);
    return symbol_error_rate(res.hard, task.x, score_begin);
  }

  AdaptOptions opts;
  opts.lambda = cfg.lambda;
  opts.K = cfg.K;
  opts.alpha = cfg.alpha;
  opts.tap_map = cfg.tap_map_enum();
  DetectorOptions dopts;
  dopts.tap_map = opts.tap_map;
  dopts.score_pilots = cfg.score_pilots;

  int steps = 0;
  if (name == "metassd" || name == "metassd_no_ssl" || name == "metassd_no_temp" ||
      detail::parse_method_steps(name, "naive_", &steps)) {
    if (name == "metassd_no_ssl") opts.alpha = 0.0;
    if (name == "metassd_no_temp") opts.freeze_temps = true;
    if (steps > 0) opts.K = steps;
    ModelParams adapted = adapt(loaded.at(name), task, opts);
    return detect(adapted, task, dopts).ser;
  }
  if (detail::parse_method_steps(name, "only_adaptation_", &steps)) {
    opts.K = steps;
    RngStream init_rng = RngStream(cfg.seed)
                             .child(0xA11C)
                             .child(static_cast<std::uint64_t>(task.snr_db))
                             .child(task.seed);
    ModelParams theta = init_params(cfg.architecture(), init_rng);
    ModelParams adapted = adapt(theta, task, opts);
    return detect(adapted, task, dopts).ser;
  }
  throw std::invalid_argument("unknown method: " + name);
}

// all per-task SERs of one (method, snr) cell, in task-index order
inline std::vector<double> run_cell(const std::string& method, int snr_db,
                                    const ExperimentConfig& cfg,
                                    const std::map<std::string, ModelParams>& loaded) {
  std::vector<double> sers(cfg.tasks_per_snr);
  for (int i = 0; i < cfg.tasks_per_snr; ++i) {
    Task task = make_eval_task(cfg, snr_db, i);
    sers[i] = run_method_on_task(method, task, cfg, loaded);
  }
  return sers;
}

inline std::pair<double, double> mean_and_stderr(const std::vector<double>& v) {
  const auto n = v.size();
  if (n == 0) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(n);
  if (n == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return {mean, sd / std::sqrt(static_cast<double>(n))};
}

inline std::map<std::string, ModelParams> load_method_checkpoints(const ExperimentConfig& cfg) {
  std::map<std::string, ModelParams> loaded;
  for (const auto& m : cfg.methods) {
    if (!method_is_known(m)) throw std::invalid_argument("unknown method: " + m);
    if (method_needs_checkpoint(m)) {
      auto it = cfg.checkpoints.find(m);
      if (it == cfg.checkpoints.end())
        throw std::runtime_error("missing checkpoint for method " + m);
      loaded.emplace(m, load_checkpoint(it->second));
    }
  }
  return loaded;
}

struct SweepReport {
  std::vector<ResultRecord> records;
  int cells_computed = 0;
  int cells_resumed = 0;
};

// Full (method x snr) sweep with resume: completed cells are read back from
// "<out_csv>.progress" when the config hash matches, so re-running a partial
// sweep never recomputes or re-randomizes them.
inline SweepReport run_sweep(const ExperimentConfig& cfg) {
  auto loaded = load_method_checkpoints(cfg);
  const std::string hash = config_hash(cfg);

  std::map<std::string, ResultRecord> done;  // "method|snr" -> record
  std::string progress_path = cfg.out_csv.empty() ? "" : cfg.out_csv + ".progress";
  if (!progress_path.empty()) {
    std::ifstream is(progress_path);
    std::string line;
    while (is && std::getline(is, line)) {
      if (line.empty()) continue;
      ResultRecord r = parse_record(line);
      if (r.config_hash == hash && r.scenario == cfg.scenario)
        done[r.method + "|" + std::to_string(r.snr_db)] = r;
    }
  }

  SweepReport report;
  std::ofstream progress;
  if (!progress_path.empty()) progress.open(progress_path, std::ios::app);
  for (const auto& method : cfg.methods) {
    for (int snr : cfg.snr_grid) {
      std::string key = method + "|" + std::to_string(snr);
      auto it = done.find(key);
      if (it != done.end()) {
        report.records.push_back(it->second);
        ++report.cells_resumed;
        continue;
      }
      auto t0 = std::chrono::steady_clock::now();
      std::vector<double> sers = run_cell(method, snr, cfg, loaded);
      auto t1 = std::chrono::steady_clock::now();
      auto [mean, se] = mean_and_stderr(sers);
      ResultRecord r;
      r.method = method;
      r.scenario = cfg.scenario;
      r.snr_db = snr;
      r.n_tasks = cfg.tasks_per_snr;
      r.ser_mean = mean;
      r.ser_stderr = se;
      r.wall_time_s =
          cfg.include_walltime ? std::chrono::duration<double>(t1 - t0).count() : 0.0;
      r.config_hash = hash;
      report.records.push_back(r);
      ++report.cells_computed;
      if (progress.is_open()) {
        progress << format_record(r) << "\n";
        progress.flush();
      }
    }
  }
  if (!cfg.out_csv.empty()) emit_csv(report.records, cfg.out_csv);
  return report;
}

// ablation suites share task seeds across their methods by construction
inline SweepReport run_ablation(const std::string& kind, ExperimentConfig cfg) {
  if (kind == "meta") {
    cfg.methods = {"metassd", "naive_" + std::to_string(cfg.K),
                   "only_adaptation_" + std::to_string(cfg.K), "only_adaptation_100"};
  } else if (kind == "ssl") {
    cfg.methods = {"metassd", "metassd_no_ssl"};
  } else if (kind == "temp") {
    cfg.methods = {"metassd", "metassd_no_temp"};
    cfg.scenario = "noisy";  // the temperature is aimed at CSI noise
  } else {
    throw std::invalid_argument("run_ablation: kind must be meta, ssl or temp");
  }
  return run_sweep(cfg);
}

}  // namespace metassd
