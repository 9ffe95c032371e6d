#pragma once

// Fixed-architecture MLP with explicit reverse-mode gradients over plain
// double-precision storage. Parameters carry the layer weights/biases plus
// one log-temperature per channel tap; temperatures live in log-space so
// unconstrained gradient steps keep tau > 0.

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "metassd/rng.hpp"

namespace metassd {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Architecture {
  int L = 4;
  int constellation_size = 2;
  std::vector<int> hidden_dims;

  // complex window y_{i-L+1:i+L-1} fed as interleaved (re, im) pairs
  int input_dim() const { return 2 * (2 * L - 1); }
  int output_dim() const { return constellation_size * L; }

  std::vector<int> layer_dims() const {
    std::vector<int> dims;
    dims.push_back(input_dim());
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(output_dim());
    return dims;
  }

  bool operator==(const Architecture&) const = default;
};

struct ModelParams {
  Architecture arch;
  std::vector<Mat> weights;  // per layer, shape out x in
  std::vector<Vec> biases;   // per layer, shape out
  Vec log_temps;             // length L; tau_l = exp(log_temps[l])

  double temp(int l) const { return std::exp(log_temps[l]); }

  int param_count() const {
    int n = 0;
    for (std::size_t m = 0; m < weights.size(); ++m)
      n += static_cast<int>(weights[m].size() + biases[m].size());
    return n + static_cast<int>(log_temps.size());
  }

  // lossless round-trip to a single contiguous vector: weights row-major
  // layer by layer, then biases, then log-temps
  Vec flatten() const {
    Vec v(param_count());
    Eigen::Index pos = 0;
    for (std::size_t m = 0; m < weights.size(); ++m) {
      const Mat& W = weights[m];
      for (Eigen::Index r = 0; r < W.rows(); ++r)
        for (Eigen::Index c = 0; c < W.cols(); ++c) v[pos++] = W(r, c);
      v.segment(pos, biases[m].size()) = biases[m];
      pos += biases[m].size();
    }
    v.segment(pos, log_temps.size()) = log_temps;
    pos += log_temps.size();
    return v;
  }

  static ModelParams unflatten(const Architecture& arch, const Vec& v) {
    ModelParams p = zeros(arch);
    if (v.size() != p.param_count())
      throw std::invalid_argument("unflatten: size mismatch");
    Eigen::Index pos = 0;
    for (std::size_t m = 0; m < p.weights.size(); ++m) {
      Mat& W = p.weights[m];
      for (Eigen::Index r = 0; r < W.rows(); ++r)
        for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = v[pos++];
      p.biases[m] = v.segment(pos, p.biases[m].size());
      pos += p.biases[m].size();
    }
    p.log_temps = v.segment(pos, p.log_temps.size());
    return p;
  }

  static ModelParams zeros(const Architecture& arch) {
    ModelParams p;
    p.arch = arch;
    auto dims = arch.layer_dims();
    for (std::size_t m = 0; m + 1 < dims.size(); ++m) {
      p.weights.emplace_back(Mat::Zero(dims[m + 1], dims[m]));
      p.biases.emplace_back(Vec::Zero(dims[m + 1]));
    }
    p.log_temps = Vec::Zero(arch.L);
    return p;
  }

  // *this += a * g, all parameter groups
  void axpy(double a, const ModelParams& g) {
    for (std::size_t m = 0; m < weights.size(); ++m) {
      weights[m] += a * g.weights[m];
      biases[m] += a * g.biases[m];
    }
    log_temps += a * g.log_temps;
  }

  void setZero() {
    for (std::size_t m = 0; m < weights.size(); ++m) {
      weights[m].setZero();
      biases[m].setZero();
    }
    log_temps.setZero();
  }
};

// gradients share the parameter layout; log_temps holds d/d(log tau)
using Gradient = ModelParams;

// fan-in-scaled gaussian weights (std = sqrt(2/fan_in)), zero biases,
// neutral temperatures tau = 1
inline ModelParams init_params(const Architecture& arch, RngStream& rng) {
  ModelParams p = ModelParams::zeros(arch);
  for (std::size_t m = 0; m < p.weights.size(); ++m) {
    Mat& W = p.weights[m];
    double s = std::sqrt(2.0 / static_cast<double>(W.cols()));
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = s * rng.normal();
  }
  return p;
}

// raw logits for one input; temperatures are applied downstream
inline Vec forward(const ModelParams& p, const Vec& input) {
  if (input.size() != p.arch.input_dim())
    throw std::invalid_argument("forward: input dimension mismatch");
  Vec a = input;
  for (std::size_t m = 0; m < p.weights.size(); ++m) {
    Vec z = p.weights[m] * a + p.biases[m];
    if (m + 1 < p.weights.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

// batched forward over row-stacked inputs; when acts is non-null it receives
// the input and every post-ReLU hidden activation (what backward needs)
inline Mat forward_batch(const ModelParams& p, const Mat& inputs,
                         std::vector<Mat>* acts = nullptr) {
  if (inputs.cols() != p.arch.input_dim())
    throw std::invalid_argument("forward_batch: input dimension mismatch");
  if (acts) {
    acts->clear();
    acts->push_back(inputs);
  }
  Mat a = inputs;
  for (std::size_t m = 0; m < p.weights.size(); ++m) {
    Mat z = (a * p.weights[m].transpose()).rowwise() + p.biases[m].transpose();
    if (m + 1 < p.weights.size()) {
      z = z.cwiseMax(0.0);
      if (acts) acts->push_back(z);
    }
    a = std::move(z);
  }
  return a;
}

// accumulate dL/dW, dL/db into g given dL/dlogits and the cached activations
inline void backward_batch(const ModelParams& p, const std::vector<Mat>& acts,
                           const Mat& dlogits, Gradient& g) {
  Mat delta = dlogits;
  for (int m = static_cast<int>(p.weights.size()) - 1; m >= 0; --m) {
    g.weights[m] += delta.transpose() * acts[m];
    g.biases[m] += delta.colwise().sum().transpose();
    if (m > 0) {
      delta = delta * p.weights[m];
      delta.array() *= (acts[m].array() > 0.0).cast<double>();
    }
  }
}

// central finite-difference audit of an analytic gradient on a random
// coordinate subset. Error is measured relative to the larger of the
// coordinate magnitude and the gradient's sup-norm, so zero-gradient
// coordinates do not divide by zero.
inline double grad_check(const std::function<double(const ModelParams&)>& loss_fn,
                         const Gradient& analytic, const ModelParams& at, double epsilon,
                         int max_coords, RngStream& rng) {
  if (epsilon <= 0.0) throw std::invalid_argument("grad_check: epsilon must be > 0");
  Vec flat = at.flatten();
  Vec ga = analytic.flatten();
  const Eigen::Index n = flat.size();
  const double gscale = std::max(ga.cwiseAbs().maxCoeff(), 1e-8);

  std::vector<Eigen::Index> coords(n);
  std::iota(coords.begin(), coords.end(), Eigen::Index{0});
  if (n > max_coords) {
    // partial Fisher-Yates: first max_coords entries become the sample
    for (int i = 0; i < max_coords; ++i) {
      auto j = i + static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(n - i)));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(max_coords);
  }

  double max_rel = 0.0;
  for (Eigen::Index c : coords) {
    const double saved = flat[c];
    flat[c] = saved + epsilon;
    double fp = loss_fn(ModelParams::unflatten(at.arch, flat));
    flat[c] = saved - epsilon;
    double fm = loss_fn(ModelParams::unflatten(at.arch, flat));
    flat[c] = saved;
    double numeric = (fp - fm) / (2.0 * epsilon);
    double denom = std::max(std::abs(ga[c]) + std::abs(numeric), gscale);
    max_rel = std::max(max_rel, std::abs(ga[c] - numeric) / denom);
  }
  return max_rel;
}

// Checkpoint: plain-text header then the flat parameter vector as raw
// little-endian f64. Round-trips bit-exactly.
inline void save_checkpoint(const std::string& path, const ModelParams& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  os << "MSSD-CKPT 1\n";
  os << "L " << p.arch.L << "\n";
  os << "constellation " << p.arch.constellation_size << "\n";
  os << "hidden";
  for (int h : p.arch.hidden_dims) os << " " << h;
  os << "\n";
  Vec flat = p.flatten();
  os << "params " << flat.size() << "\n";
  os << "DATA\n";
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(flat[i]);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  std::string line;
  if (!std::getline(is, line) || line != "MSSD-CKPT 1")
    throw std::runtime_error("checkpoint: bad header: " + path);
  Architecture arch;
  Eigen::Index count = -1;
  while (std::getline(is, line)) {
    if (line == "DATA") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "L") {
      ls >> arch.L;
    } else if (key == "constellation") {
      ls >> arch.constellation_size;
    } else if (key == "hidden") {
      int h;
      while (ls >> h) arch.hidden_dims.push_back(h);
    } else if (key == "params") {
      ls >> count;
    } else {
      throw std::runtime_error("checkpoint: unknown header field: " + key);
    }
  }
  ModelParams probe = ModelParams::zeros(arch);
  if (count != probe.param_count())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  Vec flat(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated data");
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    flat[i] = std::bit_cast<double>(bits);
  }
  return ModelParams::unflatten(arch, flat);
}

}  // namespace metassd
