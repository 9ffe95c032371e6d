#pragma once

// Versioned binary task-set file. Header: magic "MSSD", u32 version, then
// u64 count/N/P/L. Body, per task: i32 snr_db, f64 noise_var, u64 seed,
// x as N f64, y as 2N f64 (re, im interleaved), h_true and h_est as 2L f64
// each. All fields little-endian. A companion "<path>.manifest" records the
// generating config and seed as plain text.

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "metassd/channel.hpp"

namespace metassd {

namespace detail {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_i32_le(std::ostream& os, std::int32_t v) {
  write_u32_le(os, static_cast<std::uint32_t>(v));
}

inline void write_f64_le(std::ostream& os, double d) {
  write_u64_le(os, std::bit_cast<std::uint64_t>(d));
}

inline std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("task file: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint32_t read_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("task file: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::int32_t read_i32_le(std::istream& is) {
  return static_cast<std::int32_t>(read_u32_le(is));
}

inline double read_f64_le(std::istream& is) {
  return std::bit_cast<double>(read_u64_le(is));
}

}  // namespace detail

inline constexpr char kTaskMagic[4] = {'M', 'S', 'S', 'D'};
inline constexpr std::uint32_t kTaskFormatVersion = 1;

inline void write_task(std::ostream& os, const Task& t) {
  using namespace detail;
  write_i32_le(os, t.snr_db);
  write_f64_le(os, t.noise_var);
  write_u64_le(os, t.seed);
  for (double v : t.x) write_f64_le(os, v);
  for (const cplx& v : t.y) {
    write_f64_le(os, v.real());
    write_f64_le(os, v.imag());
  }
  for (const cplx& v : t.h_true.taps) {
    write_f64_le(os, v.real());
    write_f64_le(os, v.imag());
  }
  for (const cplx& v : t.h_est.taps) {
    write_f64_le(os, v.real());
    write_f64_le(os, v.imag());
  }
}

inline Task read_task(std::istream& is, std::uint64_t N, std::uint64_t P, std::uint64_t L) {
  using namespace detail;
  Task t;
  t.P = static_cast<int>(P);
  t.snr_db = read_i32_le(is);
  t.noise_var = read_f64_le(is);
  t.seed = read_u64_le(is);
  t.x.resize(N);
  for (auto& v : t.x) v = read_f64_le(is);
  t.y.resize(N);
  for (auto& v : t.y) {
    double re = read_f64_le(is);
    double im = read_f64_le(is);
    v = {re, im};
  }
  t.h_true.taps.resize(L);
  for (auto& v : t.h_true.taps) {
    double re = read_f64_le(is);
    double im = read_f64_le(is);
    v = {re, im};
  }
  t.h_est.taps.resize(L);
  for (auto& v : t.h_est.taps) {
    double re = read_f64_le(is);
    double im = read_f64_le(is);
    v = {re, im};
  }
  return t;
}

class TaskSetWriter {
 public:
  TaskSetWriter(const std::string& path, std::uint64_t count, std::uint64_t N,
                std::uint64_t P, std::uint64_t L)
      : os_(path, std::ios::binary), expected_(count) {
    if (!os_) throw std::runtime_error("task file: cannot open for write: " + path);
    os_.write(kTaskMagic, 4);
    detail::write_u32_le(os_, kTaskFormatVersion);
    detail::write_u64_le(os_, count);
    detail::write_u64_le(os_, N);
    detail::write_u64_le(os_, P);
    detail::write_u64_le(os_, L);
  }

  void add(const Task& t) {
    write_task(os_, t);
    ++written_;
  }

  void finish() {
    if (written_ != expected_)
      throw std::runtime_error("task file: task count mismatch at finish");
    os_.flush();
    if (!os_) throw std::runtime_error("task file: write failed");
  }

 private:
  std::ofstream os_;
  std::uint64_t expected_ = 0;
  std::uint64_t written_ = 0;
};

struct TaskSetHeader {
  std::uint64_t count = 0;
  std::uint64_t N = 0;
  std::uint64_t P = 0;
  std::uint64_t L = 0;
};

class TaskSetReader {
 public:
  explicit TaskSetReader(const std::string& path) : is_(path, std::ios::binary) {
    if (!is_) throw std::runtime_error("task file: cannot open: " + path);
    char magic[4];
    is_.read(magic, 4);
    if (!is_ || std::string(magic, 4) != std::string(kTaskMagic, 4))
      throw std::runtime_error("task file: bad magic: " + path);
    std::uint32_t version = detail::read_u32_le(is_);
    if (version != kTaskFormatVersion)
      throw std::runtime_error("task file: unsupported version");
    header_.count = detail::read_u64_le(is_);
    header_.N = detail::read_u64_le(is_);
    header_.P = detail::read_u64_le(is_);
    header_.L = detail::read_u64_le(is_);
  }

  const TaskSetHeader& header() const { return header_; }

  Task next() {
    if (read_ >= header_.count) throw std::runtime_error("task file: read past end");
    ++read_;
    return read_task(is_, header_.N, header_.P, header_.L);
  }

  std::vector<Task> read_all() {
    std::vector<Task> tasks;
    tasks.reserve(header_.count);
    while (read_ < header_.count) tasks.push_back(next());
    return tasks;
  }

 private:
  std::ifstream is_;
  TaskSetHeader header_;
  std::uint64_t read_ = 0;
};

inline void write_task_set(const std::string& path, const std::vector<Task>& tasks,
                           std::uint64_t N, std::uint64_t P, std::uint64_t L) {
  TaskSetWriter w(path, tasks.size(), N, P, L);
  for (const Task& t : tasks) w.add(t);
  w.finish();
}

inline void write_task_manifest(const std::string& task_path, const TaskConfig& cfg,
                                std::uint64_t count, std::uint64_t seed) {
  std::ofstream os(task_path + ".manifest");
  if (!os) throw std::runtime_error("task manifest: cannot open for write");
  os << "format = \"MSSD\"\n";
  os << "version = " << kTaskFormatVersion << "\n";
  os << "count = " << count << "\n";
  os << "N = " << cfg.N << "\n";
  os << "P = " << cfg.P << "\n";
  os << "L = " << cfg.L << "\n";
  os << "gamma = " << cfg.gamma << "\n";
  os << "snr_uniform = " << (cfg.snr_uniform ? "true" : "false") << "\n";
  os << "snr_lo = " << cfg.snr_lo << "\n";
  os << "snr_hi = " << cfg.snr_hi << "\n";
  os << "snr_db = " << cfg.snr_db << "\n";
  os << "sigma_n_sq = " << cfg.sigma_n_sq << "\n";
  os << "seed = " << seed << "\n";
}

}  // namespace metassd
