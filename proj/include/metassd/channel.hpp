#pragma once

// Finite-memory ISI channel simulation: exponential power delay profile,
// Rayleigh taps, BPSK blocks, complex Gaussian noise, and noisy
// receiver-side channel estimates. Everything is a pure function of
// (config, rng stream).

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "metassd/rng.hpp"

namespace metassd {

using cplx = std::complex<double>;

struct ChannelProfile {
  int L = 0;
  double gamma = 0.0;
  std::vector<double> sigma_sq;  // per-tap variance, sums to 1
};

struct ChannelTaps {
  std::vector<cplx> taps;
  int length() const { return static_cast<int>(taps.size()); }
};

// One channel realization's dataset: symbols, outputs, pilot count, the
// true taps and the receiver-side estimate, plus provenance fields.
struct Task {
  std::vector<double> x;  // transmitted symbols, each +1 or -1
  std::vector<cplx> y;    // channel outputs
  int P = 0;              // pilot prefix known at the receiver
  ChannelTaps h_true;
  ChannelTaps h_est;
  int snr_db = 0;
  double noise_var = 1.0;
  std::uint64_t seed = 0;

  int N() const { return static_cast<int>(x.size()); }
  int L() const { return h_true.length(); }
};

struct TaskConfig {
  int N = 10000;
  int P = 100;
  int L = 4;
  double gamma = 2.0;
  bool snr_uniform = true;  // draw snr_db from unif{snr_lo..snr_hi}
  int snr_lo = 0;
  int snr_hi = 15;
  int snr_db = 10;          // used when snr_uniform is false
  double sigma_n_sq = 0.0;  // CSI noise variance; 0 means perfect estimate
};

// noise variance 1/rho^2 for a given SNR in dB
inline double noise_variance_from_snr(int snr_db) {
  return std::pow(10.0, -snr_db / 10.0);
}

inline ChannelProfile exp_pdp_profile(int L, double gamma) {
  if (L < 1) throw std::invalid_argument("exp_pdp_profile: L must be >= 1");
  ChannelProfile p;
  p.L = L;
  p.gamma = gamma;
  p.sigma_sq.resize(L);
  double sum = 0.0;
  for (int l = 0; l < L; ++l) {
    p.sigma_sq[l] = std::exp(-gamma * l);
    sum += p.sigma_sq[l];
  }
  for (double& v : p.sigma_sq) v /= sum;
  return p;
}

// circularly-symmetric complex gaussian: CN(0, var) has re, im ~ N(0, var/2)
inline cplx sample_cn(double var, RngStream& rng) {
  double s = std::sqrt(var / 2.0);
  double re = s * rng.normal();
  double im = s * rng.normal();
  return {re, im};
}

inline ChannelTaps sample_channel(const ChannelProfile& profile, RngStream& rng) {
  ChannelTaps h;
  h.taps.resize(profile.L);
  for (int l = 0; l < profile.L; ++l) h.taps[l] = sample_cn(profile.sigma_sq[l], rng);
  return h;
}

inline std::vector<double> sample_symbols(int N, RngStream& rng) {
  if (N < 1) throw std::invalid_argument("sample_symbols: N must be >= 1");
  std::vector<double> x(N);
  for (int i = 0; i < N; ++i) x[i] = rng.coin() ? 1.0 : -1.0;
  return x;
}

// y_i = sum_l h_l x_{i-l+1} + z_i with x zero-padded below the block start
inline std::vector<cplx> transmit(const std::vector<double>& x, const ChannelTaps& h,
                                  double noise_var, RngStream& rng) {
  if (noise_var < 0.0) throw std::invalid_argument("transmit: noise_var must be >= 0");
  const int N = static_cast<int>(x.size());
  const int L = h.length();
  std::vector<cplx> y(N);
  for (int i = 0; i < N; ++i) {
    cplx acc{0.0, 0.0};
    for (int l = 0; l < L; ++l) {
      int j = i - l;
      if (j >= 0) acc += h.taps[l] * x[j];
    }
    if (noise_var > 0.0) acc += sample_cn(noise_var, rng);
    y[i] = acc;
  }
  return y;
}

inline ChannelTaps corrupt_csi(const ChannelTaps& h, double sigma_n_sq, RngStream& rng) {
  if (sigma_n_sq < 0.0) throw std::invalid_argument("corrupt_csi: sigma_n_sq must be >= 0");
  if (sigma_n_sq == 0.0) return h;
  ChannelTaps out = h;
  for (auto& tap : out.taps) tap += sample_cn(sigma_n_sq, rng);
  return out;
}

inline Task make_task(const TaskConfig& cfg, RngStream& rng) {
  if (cfg.L < 1) throw std::invalid_argument("make_task: L must be >= 1");
  if (cfg.N < 1) throw std::invalid_argument("make_task: N must be >= 1");
  if (cfg.P < 0 || cfg.P > cfg.N) throw std::invalid_argument("make_task: require 0 <= P <= N");
  if (cfg.snr_uniform && cfg.snr_hi < cfg.snr_lo)
    throw std::invalid_argument("make_task: empty SNR range");

  Task t;
  t.seed = rng.seed();
  t.P = cfg.P;
  t.snr_db = cfg.snr_uniform
                 ? cfg.snr_lo + static_cast<int>(rng.uniform_int(
                       static_cast<std::uint64_t>(cfg.snr_hi - cfg.snr_lo + 1)))
                 : cfg.snr_db;
  t.noise_var = noise_variance_from_snr(t.snr_db);
  ChannelProfile prof = exp_pdp_profile(cfg.L, cfg.gamma);
  t.h_true = sample_channel(prof, rng);
  t.x = sample_symbols(cfg.N, rng);
  t.y = transmit(t.x, t.h_true, t.noise_var, rng);
  t.h_est = corrupt_csi(t.h_true, cfg.sigma_n_sq, rng);
  return t;
}

}  // namespace metassd
