#pragma once

// The neural detector path: sliding-window predictions, per-tap tempered
// softmax, magnitude-weighted ensemble over the L predictions of each
// symbol, supervised pilot loss, self-supervised reconstruction loss, the
// combined objective with its full analytic gradient, inner-loop
// adaptation, and hard-decision detection.
//
// Index convention (0-based): window i covers outputs y_{i-L+1..i+L-1}
// (zero-padded at the block edges) and its location l predicts symbol
// j = i - (L-1) + l. Symbols near the end of the block lose the windows
// that would start past y_N; their ensemble weights are renormalized over
// the surviving locations.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "metassd/channel.hpp"
#include "metassd/nn.hpp"

namespace metassd {

// which tap magnitude weights location l: reverse pairs the rightmost
// location (the newest symbol in the window) with the first tap
enum class TapMap { reverse, forward };

struct DetectorOptions {
  double alpha = 0.05;             // weight of the self-supervised loss
  TapMap tap_map = TapMap::reverse;
  bool score_pilots = false;       // include pilot positions in SER
  int pilot_begin = 0;             // supervised loss covers [pilot_begin, pilot_end)
  int pilot_end = -1;              // -1 means task.P
};

struct SymbolPosterior {
  Mat probs;  // N x |X|, row j = ensembled distribution of x_j
};

struct SoftSymbols {
  Vec values;  // posterior expectation of each symbol
};

struct LossBreakdown {
  double l_x = 0.0;
  double l_y = 0.0;
  double alpha = 0.0;
  double total = 0.0;
};

// BPSK points ordered so column 0 is +1
inline Vec constellation_points(int size) {
  if (size != 2)
    throw std::invalid_argument("constellation_points: only BPSK (|X|=2) is built");
  Vec c(2);
  c << 1.0, -1.0;
  return c;
}

inline int constellation_index(double symbol) { return symbol > 0.0 ? 0 : 1; }

// window y_{i-L+1..i+L-1} (1-based i) as 2(2L-1) reals, zeros out of range
inline Vec extract_window(const std::vector<cplx>& y, int i, int L) {
  const int N = static_cast<int>(y.size());
  if (i < 1 || i > N) throw std::invalid_argument("extract_window: i out of [1, N]");
  Vec w(2 * (2 * L - 1));
  int pos = 0;
  for (int t = i - L; t <= i + L - 2; ++t) {  // 0-based output indices
    if (t >= 0 && t < N) {
      w[pos++] = y[t].real();
      w[pos++] = y[t].imag();
    } else {
      w[pos++] = 0.0;
      w[pos++] = 0.0;
    }
  }
  return w;
}

inline Mat window_matrix(const std::vector<cplx>& y, int L) {
  const int N = static_cast<int>(y.size());
  Mat U = Mat::Zero(N, 2 * (2 * L - 1));
  for (int i = 0; i < N; ++i) {
    int pos = 0;
    for (int t = i - (L - 1); t <= i + (L - 1); ++t) {
      if (t >= 0 && t < N) {
        U(i, pos) = y[t].real();
        U(i, pos + 1) = y[t].imag();
      }
      pos += 2;
    }
  }
  return U;
}

inline Vec tempered_softmax(const Vec& logits, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("tempered_softmax: tau must be > 0");
  Vec s = logits / tau;
  double m = s.maxCoeff();
  Vec p = (s.array() - m).exp();
  return p / p.sum();
}

// normalized per-location weights |h_est[m(l)]|; uniform fallback when the
// estimate is all-zero
inline Vec location_weights(const ChannelTaps& h_est, TapMap map) {
  const int L = h_est.length();
  Vec w(L);
  for (int l = 0; l < L; ++l) {
    int tap = (map == TapMap::reverse) ? L - 1 - l : l;
    w[l] = std::abs(h_est.taps[tap]);
  }
  double s = w.sum();
  if (s > 0.0)
    w /= s;
  else
    w.setConstant(1.0 / L);
  return w;
}

// the L per-location distributions from window i (1-based)
inline std::vector<Vec> window_predictions(const ModelParams& p, const std::vector<cplx>& y,
                                           int i) {
  const int L = p.arch.L;
  const int K = p.arch.constellation_size;
  Vec logits = forward(p, extract_window(y, i, L));
  std::vector<Vec> preds;
  preds.reserve(L);
  for (int l = 0; l < L; ++l)
    preds.push_back(tempered_softmax(logits.segment(l * K, K), p.temp(l)));
  return preds;
}

namespace detail {

// everything the backward pass needs from one detector forward evaluation
struct DetectorTrace {
  Mat windows;                // N x input_dim
  std::vector<Mat> acts;      // layer activations from forward_batch
  Mat logits;                 // N x (K*L)
  std::vector<Mat> loc_probs; // per location, N x K
  Mat posterior;              // N x K
  Vec weights;                // base location weights, length L
  Vec tail_wsum;              // survivor weight sums for the last L-1 symbols
};

// effective weight of location l for symbol j (0-based); symbols past
// N - L lose locations whose window would start beyond the block
inline double effective_weight(const DetectorTrace& tr, int N, int L, int l, int j) {
  const int gap = L - 1 - l;
  if (j + gap >= N) return 0.0;  // window does not exist
  if (j <= N - L) return tr.weights[l];
  const int tail_begin = std::max(0, N - L + 1);
  const int d = L - (N - j);  // lowest surviving location index
  double wsum = tr.tail_wsum[j - tail_begin];
  if (wsum > 0.0) return tr.weights[l] / wsum;
  return 1.0 / static_cast<double>(L - d);  // all survivors weightless: uniform
}

inline DetectorTrace detector_forward(const ModelParams& p, const std::vector<cplx>& y,
                                      const ChannelTaps& h_est, TapMap map,
                                      bool keep_acts) {
  const int N = static_cast<int>(y.size());
  const int L = p.arch.L;
  const int K = p.arch.constellation_size;
  DetectorTrace tr;
  tr.windows = window_matrix(y, L);
  tr.logits = forward_batch(p, tr.windows, keep_acts ? &tr.acts : nullptr);
  tr.loc_probs.resize(L);
  for (int l = 0; l < L; ++l) {
    double tau = p.temp(l);
    Mat S = tr.logits.middleCols(l * K, K) / tau;
    Vec rowmax = S.rowwise().maxCoeff();
    Mat P = (S.colwise() - rowmax).array().exp();
    Vec rowsum = P.rowwise().sum();
    P.array().colwise() /= rowsum.array();
    tr.loc_probs[l] = std::move(P);
  }
  tr.weights = location_weights(h_est, map);

  // survivor weight sums for the tail symbols j in [max(0, N-L+1), N)
  const int tail_begin = std::max(0, N - L + 1);
  tr.tail_wsum = Vec::Zero(N - tail_begin);
  for (int j = tail_begin; j < N; ++j) {
    int d = L - (N - j);
    tr.tail_wsum[j - tail_begin] = tr.weights.segment(d, L - d).sum();
  }

  tr.posterior = Mat::Zero(N, K);
  const int interior = N - L + 1;  // symbols with all L windows available
  for (int l = 0; l < L; ++l) {
    const int gap = L - 1 - l;
    if (interior > 0)
      tr.posterior.topRows(interior) +=
          tr.weights[l] * tr.loc_probs[l].middleRows(gap, interior);
  }
  for (int j = std::max(interior, 0); j < N; ++j) {
    tr.posterior.row(j).setZero();
    for (int l = 0; l < L; ++l) {
      double w = effective_weight(tr, N, L, l, j);
      if (w > 0.0) tr.posterior.row(j) += w * tr.loc_probs[l].row(j + L - 1 - l);
    }
  }
  return tr;
}

}  // namespace detail

inline SymbolPosterior ensemble_posterior(const ModelParams& p, const std::vector<cplx>& y,
                                          const ChannelTaps& h_est,
                                          TapMap map = TapMap::reverse) {
  auto tr = detail::detector_forward(p, y, h_est, map, /*keep_acts=*/false);
  return SymbolPosterior{std::move(tr.posterior)};
}

inline SoftSymbols soft_symbols(const SymbolPosterior& posterior) {
  Vec c = constellation_points(static_cast<int>(posterior.probs.cols()));
  return SoftSymbols{posterior.probs * c};
}

// sum of -log p(true symbol) over pilot positions [begin, end)
inline double supervised_loss_range(const SymbolPosterior& posterior,
                                    const std::vector<double>& x, int begin, int end) {
  double loss = 0.0;
  for (int j = begin; j < end; ++j) {
    double prob = posterior.probs(j, constellation_index(x[j]));
    loss -= std::log(std::max(prob, 1e-300));
  }
  return loss;
}

inline double supervised_loss(const SymbolPosterior& posterior, const std::vector<double>& x,
                              int P) {
  if (P > static_cast<int>(x.size()))
    throw std::invalid_argument("supervised_loss: P exceeds block length");
  return supervised_loss_range(posterior, x, 0, P);
}

// channel-model resynthesis of the outputs from soft symbols
inline std::vector<cplx> reconstruct(const SoftSymbols& soft, const ChannelTaps& h_est) {
  const int N = static_cast<int>(soft.values.size());
  const int L = h_est.length();
  std::vector<cplx> yhat(N);
  for (int i = 0; i < N; ++i) {
    cplx acc{0.0, 0.0};
    for (int l = 0; l < L; ++l) {
      int j = i - l;
      if (j >= 0) acc += h_est.taps[l] * soft.values[j];
    }
    yhat[i] = acc;
  }
  return yhat;
}

inline double self_supervised_loss(const std::vector<cplx>& y, const std::vector<cplx>& y_hat) {
  if (y.size() != y_hat.size())
    throw std::invalid_argument("self_supervised_loss: length mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) loss += std::norm(y[i] - y_hat[i]);
  return loss;
}

namespace detail {

inline std::pair<int, int> pilot_range(const Task& task, const DetectorOptions& opts) {
  int begin = opts.pilot_begin;
  int end = opts.pilot_end < 0 ? task.P : opts.pilot_end;
  if (begin < 0 || end > task.N() || begin > end)
    throw std::invalid_argument("pilot range out of bounds");
  return {begin, end};
}

}  // namespace detail

inline LossBreakdown total_loss(const ModelParams& p, const Task& task,
                                const DetectorOptions& opts = {}) {
  if (opts.alpha < 0.0) throw std::invalid_argument("total_loss: alpha must be >= 0");
  auto [pb, pe] = detail::pilot_range(task, opts);
  auto tr = detail::detector_forward(p, task.y, task.h_est, opts.tap_map, false);
  SymbolPosterior posterior{std::move(tr.posterior)};
  LossBreakdown lb;
  lb.alpha = opts.alpha;
  lb.l_x = supervised_loss_range(posterior, task.x, pb, pe);
  lb.l_y = self_supervised_loss(task.y, reconstruct(soft_symbols(posterior), task.h_est));
  lb.total = lb.l_x + lb.alpha * lb.l_y;
  return lb;
}

// combined objective and its gradient w.r.t. every weight, bias and
// log-temperature, by explicit reverse-mode differentiation
inline std::pair<LossBreakdown, Gradient> loss_and_grad(const ModelParams& p, const Task& task,
                                                        const DetectorOptions& opts = {}) {
  if (opts.alpha < 0.0) throw std::invalid_argument("loss_and_grad: alpha must be >= 0");
  auto [pb, pe] = detail::pilot_range(task, opts);
  const int N = task.N();
  const int L = p.arch.L;
  const int K = p.arch.constellation_size;
  const Vec c = constellation_points(K);

  auto tr = detail::detector_forward(p, task.y, task.h_est, opts.tap_map, true);

  // forward tail: soft symbols, reconstruction, losses
  Vec xhat = tr.posterior * c;
  std::vector<cplx> residual(N);  // yhat - y
  for (int i = 0; i < N; ++i) {
    cplx acc{0.0, 0.0};
    for (int l = 0; l < L; ++l) {
      int j = i - l;
      if (j >= 0) acc += task.h_est.taps[l] * xhat[j];
    }
    residual[i] = acc - task.y[i];
  }

  LossBreakdown lb;
  lb.alpha = opts.alpha;
  for (int j = pb; j < pe; ++j) {
    double prob = tr.posterior(j, constellation_index(task.x[j]));
    lb.l_x -= std::log(std::max(prob, 1e-300));
  }
  for (int i = 0; i < N; ++i) lb.l_y += std::norm(residual[i]);
  lb.total = lb.l_x + lb.alpha * lb.l_y;

  // d total / d posterior
  Mat dpost = Mat::Zero(N, K);
  for (int j = pb; j < pe; ++j) {
    int k = constellation_index(task.x[j]);
    dpost(j, k) -= 1.0 / std::max(tr.posterior(j, k), 1e-300);
  }
  if (opts.alpha > 0.0) {
    for (int j = 0; j < N; ++j) {
      double dxhat = 0.0;
      for (int l = 0; l < L; ++l) {
        int i = j + l;
        if (i < N) {
          const cplx& r = residual[i];
          const cplx& h = task.h_est.taps[l];
          dxhat += 2.0 * (r.real() * h.real() + r.imag() * h.imag());
        }
      }
      dpost.row(j) += (opts.alpha * dxhat) * c.transpose();
    }
  }

  // d total / d per-location probabilities, mirroring the ensemble map
  const int interior = N - L + 1;
  Mat dlogits = Mat::Zero(N, K * L);
  Gradient grad = ModelParams::zeros(p.arch);
  for (int l = 0; l < L; ++l) {
    const int gap = L - 1 - l;
    Mat dloc = Mat::Zero(N, K);
    if (interior > 0) dloc.middleRows(gap, interior) = tr.weights[l] * dpost.topRows(interior);
    for (int j = std::max(interior, 0); j < N; ++j) {
      double w = detail::effective_weight(tr, N, L, l, j);
      if (w > 0.0) dloc.row(j + gap) = w * dpost.row(j);
    }

    // tempered softmax backward: with s = z / tau and p = softmax(s),
    // dL/ds = p .* (g - <g, p>), dL/dz = dL/ds / tau,
    // dL/dlog tau = -sum(dL/dz .* z)
    const Mat& P = tr.loc_probs[l];
    const double tau = p.temp(l);
    Vec srow = (dloc.array() * P.array()).rowwise().sum();
    Mat ds = P.array() * (dloc.colwise() - srow).array();
    Mat dz = ds / tau;
    grad.log_temps[l] = -(dz.array() * tr.logits.middleCols(l * K, K).array()).sum();
    dlogits.middleCols(l * K, K) = std::move(dz);
  }

  backward_batch(p, tr.acts, dlogits, grad);
  return {lb, std::move(grad)};
}

struct AdaptOptions {
  double lambda = 0.01;  // inner-loop learning rate
  int K = 4;             // adaptation step count
  double alpha = 0.05;
  TapMap tap_map = TapMap::reverse;
  bool freeze_temps = false;
  int pilot_begin = 0;
  int pilot_end = -1;
};

inline DetectorOptions detector_options(const AdaptOptions& a) {
  DetectorOptions d;
  d.alpha = a.alpha;
  d.tap_map = a.tap_map;
  d.pilot_begin = a.pilot_begin;
  d.pilot_end = a.pilot_end;
  return d;
}

// K full-batch gradient-descent steps on the task's combined loss
inline ModelParams adapt(const ModelParams& params, const Task& task, const AdaptOptions& opts) {
  if (opts.K < 0) throw std::invalid_argument("adapt: K must be >= 0");
  if (opts.lambda <= 0.0) throw std::invalid_argument("adapt: lambda must be > 0");
  ModelParams theta = params;
  DetectorOptions dopts = detector_options(opts);
  for (int k = 0; k < opts.K; ++k) {
    auto [lb, g] = loss_and_grad(theta, task, dopts);
    if (opts.freeze_temps) g.log_temps.setZero();
    theta.axpy(-opts.lambda, g);
  }
  return theta;
}

struct DetectionResult {
  std::vector<double> hard;  // argmax decisions, constellation values
  double ser = 0.0;          // over non-pilot positions unless score_pilots
  int errors = 0;
  int scored = 0;
};

inline DetectionResult detect(const ModelParams& params, const Task& task,
                              const DetectorOptions& opts = {}) {
  SymbolPosterior posterior = ensemble_posterior(params, task.y, task.h_est, opts.tap_map);
  const int N = task.N();
  const Vec c = constellation_points(params.arch.constellation_size);
  DetectionResult res;
  res.hard.resize(N);
  for (int j = 0; j < N; ++j) {
    Eigen::Index k;
    posterior.probs.row(j).maxCoeff(&k);
    res.hard[j] = c[k];
  }
  int begin = opts.score_pilots ? 0 : task.P;
  for (int j = begin; j < N; ++j) {
    ++res.scored;
    if (res.hard[j] != task.x[j]) ++res.errors;
  }
  res.ser = res.scored > 0 ? static_cast<double>(res.errors) / res.scored : 0.0;
  return res;
}

}  // namespace metassd
