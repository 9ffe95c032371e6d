#pragma once

// Classical detectors: exact per-symbol MAP via log-domain BCJR over the
// finite-memory trellis, a brute-force enumeration oracle for small blocks,
// and a per-tone frequency-domain MMSE equalizer.
//
// The trellis state after step i is the last L-1 symbols encoded base-|X|
// with the most recent symbol in the low digit. The initial state matches
// the transmitter's zero-padding: the forward pass starts from a single
// canonical state whose fictitious digits are never read, because branch
// metrics drop the tap terms that would reach before the block start.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "metassd/channel.hpp"
#include "metassd/detector.hpp"

namespace metassd {

inline constexpr double kBcjrVarianceFloor = 1e-12;

struct Trellis {
  int L = 0;
  int K = 0;        // constellation size
  int n_states = 0; // K^(L-1)

  Trellis(int L_, int K_) : L(L_), K(K_) {
    if (L < 1) throw std::invalid_argument("Trellis: L must be >= 1");
    n_states = 1;
    for (int i = 0; i < L - 1; ++i) n_states *= K;
  }

  // state after consuming input a from state s
  int next(int s, int a) const {
    if (L == 1) return 0;
    int high = n_states / K;
    return a * high + s / K;
  }

  // constellation index of symbol x_{i-m} given the state before step i
  // (m in [1, L-1]; digit 0 is the most recent)
  int digit(int s, int m) const {
    int v = s;
    for (int t = 1; t < m; ++t) v /= K;
    return v % K;
  }
};

namespace detail {

inline double logsumexp2(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace detail

struct BcjrResult {
  SymbolPosterior posterior;
  std::vector<double> hard;
};

inline BcjrResult bcjr_detect(const std::vector<cplx>& y, const ChannelTaps& h_est,
                              double noise_var) {
  const int N = static_cast<int>(y.size());
  const int L = h_est.length();
  const int K = 2;
  const Vec c = constellation_points(K);
  const double nv = std::max(noise_var, kBcjrVarianceFloor);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  Trellis tr(L, K);
  const int S = tr.n_states;

  // branch model value for step i (1-based), state s, input index a:
  // sum of h_l * x_{i-l+1} over taps that reach inside the block
  auto branch_mean = [&](int i, int s, int a) {
    cplx acc = h_est.taps[0] * c[a];
    int reach = std::min(L - 1, i - 1);  // older symbols available at step i
    for (int m = 1; m <= reach; ++m) acc += h_est.taps[m] * c[tr.digit(s, m)];
    return acc;
  };
  auto metric = [&](int i, int s, int a) {
    return -std::norm(y[i - 1] - branch_mean(i, s, a)) / nv;
  };

  // forward pass; alpha[i] indexed by state after step i
  Mat alpha(N + 1, S);
  alpha.row(0).setConstant(neg_inf);
  alpha(0, 0) = 0.0;  // canonical zero-history state
  for (int i = 1; i <= N; ++i) {
    alpha.row(i).setConstant(neg_inf);
    for (int s = 0; s < S; ++s) {
      if (alpha(i - 1, s) == neg_inf) continue;
      for (int a = 0; a < K; ++a) {
        int sn = tr.next(s, a);
        double v = alpha(i - 1, s) + metric(i, s, a);
        alpha(i, sn) = detail::logsumexp2(alpha(i, sn), v);
      }
    }
  }

  // backward pass with free final state
  Mat beta(N + 1, S);
  beta.row(N).setZero();
  for (int i = N; i >= 1; --i) {
    beta.row(i - 1).setConstant(neg_inf);
    for (int s = 0; s < S; ++s) {
      double acc = neg_inf;
      for (int a = 0; a < K; ++a) {
        double v = metric(i, s, a) + beta(i, tr.next(s, a));
        acc = detail::logsumexp2(acc, v);
      }
      beta(i - 1, s) = acc;
    }
  }

  BcjrResult res;
  res.posterior.probs.resize(N, K);
  res.hard.resize(N);
  for (int i = 1; i <= N; ++i) {
    double acc[2] = {neg_inf, neg_inf};
    for (int s = 0; s < S; ++s) {
      if (alpha(i - 1, s) == neg_inf) continue;
      for (int a = 0; a < K; ++a) {
        double v = alpha(i - 1, s) + metric(i, s, a) + beta(i, tr.next(s, a));
        acc[a] = detail::logsumexp2(acc[a], v);
      }
    }
    double m = std::max(acc[0], acc[1]);
    double p0 = std::exp(acc[0] - m);
    double p1 = std::exp(acc[1] - m);
    double z = p0 + p1;
    res.posterior.probs(i - 1, 0) = p0 / z;
    res.posterior.probs(i - 1, 1) = p1 / z;
    res.hard[i - 1] = p0 >= p1 ? c[0] : c[1];
  }
  return res;
}

// enumeration oracle: exact marginals over all |X|^N sequences
inline SymbolPosterior exhaustive_map(const std::vector<cplx>& y, const ChannelTaps& h_est,
                                      double noise_var) {
  const int N = static_cast<int>(y.size());
  if (N > 16) throw std::invalid_argument("exhaustive_map: N must be <= 16");
  const int L = h_est.length();
  const int K = 2;
  const Vec c = constellation_points(K);
  const double nv = std::max(noise_var, kBcjrVarianceFloor);
  const double neg_inf = -std::numeric_limits<double>::infinity();

  Mat acc = Mat::Constant(N, K, neg_inf);
  std::vector<int> idx(N);
  const long total = 1L << N;
  for (long code = 0; code < total; ++code) {
    for (int i = 0; i < N; ++i) idx[i] = static_cast<int>((code >> i) & 1);
    double ll = 0.0;
    for (int i = 0; i < N; ++i) {
      cplx mean{0.0, 0.0};
      for (int l = 0; l < L; ++l) {
        int j = i - l;
        if (j >= 0) mean += h_est.taps[l] * c[idx[j]];
      }
      ll -= std::norm(y[i] - mean) / nv;
    }
    for (int i = 0; i < N; ++i) acc(i, idx[i]) = detail::logsumexp2(acc(i, idx[i]), ll);
  }

  SymbolPosterior post;
  post.probs.resize(N, K);
  for (int i = 0; i < N; ++i) {
    double m = acc.row(i).maxCoeff();
    Vec p = (acc.row(i).transpose().array() - m).exp();
    post.probs.row(i) = (p / p.sum()).transpose();
  }
  return post;
}

struct MmseResult {
  std::vector<double> hard;
  bool degenerate = false;  // all-zero channel estimate: decisions are meaningless
};

// per-tone MMSE on fixed-size blocks: DFT the received block, equalize each
// tone with conj(H_k) / (|H_k|^2 + noise_var), inverse DFT, slice. Uses the
// circulant approximation of the linear ISI convolution.
inline MmseResult mmse_ofdm_detect(const std::vector<cplx>& y, const ChannelTaps& h_est,
                                   double noise_var, int block_size) {
  const int N = static_cast<int>(y.size());
  const int L = h_est.length();
  if (block_size < L) throw std::invalid_argument("mmse_ofdm_detect: block_size must be >= L");
  const int n = block_size;

  MmseResult res;
  double h_energy = 0.0;
  for (const cplx& h : h_est.taps) h_energy += std::norm(h);
  res.degenerate = h_energy == 0.0;

  // n-point DFT of the zero-padded channel estimate
  std::vector<cplx> H(n, cplx{0.0, 0.0});
  const double two_pi = 6.28318530717958647692;
  for (int k = 0; k < n; ++k)
    for (int m = 0; m < L; ++m) {
      double ang = -two_pi * k * m / n;
      H[k] += h_est.taps[m] * cplx{std::cos(ang), std::sin(ang)};
    }

  res.hard.resize(N);
  std::vector<cplx> Y(n), X(n);
  for (int b0 = 0; b0 < N; b0 += n) {
    for (int k = 0; k < n; ++k) {
      cplx acc{0.0, 0.0};
      for (int t = 0; t < n; ++t) {
        int src = b0 + t;
        if (src >= N) break;  // final block zero-padded
        double ang = -two_pi * k * t / n;
        acc += y[src] * cplx{std::cos(ang), std::sin(ang)};
      }
      Y[k] = acc;
      double denom = std::norm(H[k]) + noise_var;
      X[k] = denom > 0.0 ? std::conj(H[k]) * Y[k] / denom : cplx{0.0, 0.0};
    }
    for (int t = 0; t < n; ++t) {
      int dst = b0 + t;
      if (dst >= N) break;
      cplx acc{0.0, 0.0};
      for (int k = 0; k < n; ++k) {
        double ang = two_pi * k * t / n;
        acc += X[k] * cplx{std::cos(ang), std::sin(ang)};
      }
      res.hard[dst] = acc.real() >= 0.0 ? 1.0 : -1.0;
    }
  }
  return res;
}

inline double symbol_error_rate(const std::vector<double>& hard, const std::vector<double>& x,
                                int begin) {
  int errors = 0;
  int scored = 0;
  for (std::size_t i = begin; i < x.size(); ++i) {
    ++scored;
    if (hard[i] != x[i]) ++errors;
  }
  return scored > 0 ? static_cast<double>(errors) / scored : 0.0;
}

}  // namespace metassd
