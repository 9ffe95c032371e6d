#pragma once

// Batched first-order MAML over a meta-training task set, with
// validation-based model selection. The outer update follows the
// first-order rule: adapt each batch task for K steps, evaluate the task
// gradient at the adapted parameters, and apply the summed gradient to the
// shared initialization without differentiating through the inner
// trajectory. A pooled SGD trainer (no inner loop) provides the naive
// baseline checkpoint.

#include <cstdint>
#include <ostream>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "metassd/detector.hpp"
#include "metassd/nn.hpp"

namespace metassd {

struct MetaConfig {
  Architecture arch;
  int B = 50;                  // meta-batch size
  int K = 4;                   // adaptation steps
  double lambda = 0.01;        // inner learning rate
  double eta = 0.001;          // meta learning rate
  double alpha = 0.05;         // self-supervised loss weight
  int max_meta_iters = 5000;
  int val_every = 50;
  int val_task_count = 500;
  std::uint64_t seed = 1;
  bool freeze_temps = false;
  TapMap tap_map = TapMap::reverse;
  bool query_split = false;    // adapt on the first half of the pilots,
                               // evaluate the outer loss on the second half
};

struct TrainState {
  ModelParams params;       // parameters at the last iteration
  ModelParams best_params;  // lowest-validation-SER snapshot
  double best_val_ser = 1.0;
  int best_iter = 0;
  int meta_iters = 0;
  std::set<std::size_t> train_ids_used;  // audit: indices sampled into batches
  std::vector<std::size_t> val_ids;
};

namespace detail {

inline AdaptOptions inner_options(const MetaConfig& cfg, int P) {
  AdaptOptions a;
  a.lambda = cfg.lambda;
  a.K = cfg.K;
  a.alpha = cfg.alpha;
  a.tap_map = cfg.tap_map;
  a.freeze_temps = cfg.freeze_temps;
  if (cfg.query_split) {
    a.pilot_begin = 0;
    a.pilot_end = P / 2;
  }
  return a;
}

inline DetectorOptions outer_options(const MetaConfig& cfg, int P) {
  DetectorOptions d;
  d.alpha = cfg.alpha;
  d.tap_map = cfg.tap_map;
  if (cfg.query_split) {
    d.pilot_begin = P / 2;
    d.pilot_end = P;
  }
  return d;
}

}  // namespace detail

struct MetaStepResult {
  ModelParams params;
  double mean_outer_loss = 0.0;  // mean of L_D(theta_K) over the batch
};

// generic first-order meta step; obj(theta, task, outer) returns the loss
// and gradient used for the inner (outer=false) or outer (outer=true)
// evaluation. The production objective wraps the detector loss; tests
// substitute closed-form objectives.
template <typename Objective>
MetaStepResult meta_step_with(const ModelParams& theta, const std::vector<Task>& batch,
                              const MetaConfig& cfg, Objective&& obj) {
  if (batch.empty()) throw std::invalid_argument("meta_step: empty batch");
  Gradient outer_sum = ModelParams::zeros(theta.arch);
  double loss_sum = 0.0;
  for (const Task& task : batch) {
    ModelParams adapted = theta;
    for (int k = 0; k < cfg.K; ++k) {
      auto [loss, g] = obj(adapted, task, /*outer=*/false);
      if (cfg.freeze_temps) g.log_temps.setZero();
      adapted.axpy(-cfg.lambda, g);
      (void)loss;
    }
    auto [loss, g] = obj(adapted, task, /*outer=*/true);
    if (cfg.freeze_temps) g.log_temps.setZero();
    outer_sum.axpy(1.0, g);
    loss_sum += loss;
  }
  MetaStepResult res{theta, loss_sum / static_cast<double>(batch.size())};
  res.params.axpy(-cfg.eta, outer_sum);
  return res;
}

inline MetaStepResult meta_step_result(const ModelParams& theta, const std::vector<Task>& batch,
                                       const MetaConfig& cfg) {
  return meta_step_with(theta, batch, cfg,
                        [&cfg](const ModelParams& p, const Task& t, bool outer) {
                          auto opts = outer ? detail::outer_options(cfg, t.P)
                                            : detector_options(detail::inner_options(cfg, t.P));
                          auto [lb, g] = loss_and_grad(p, t, opts);
                          return std::pair<double, Gradient>(lb.total, std::move(g));
                        });
}

inline ModelParams meta_step(const ModelParams& theta, const std::vector<Task>& batch,
                             const MetaConfig& cfg) {
  return meta_step_result(theta, batch, cfg).params;
}

// mean post-adaptation SER over a set of tasks (the validation metric and
// the evaluation path used at test time)
inline double mean_adapted_ser(const ModelParams& params, const std::vector<Task>& tasks,
                               const std::vector<std::size_t>& ids, const MetaConfig& cfg) {
  if (ids.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t id : ids) {
    const Task& t = tasks[id];
    ModelParams adapted = adapt(params, t, detail::inner_options(cfg, t.P));
    DetectorOptions d;
    d.tap_map = cfg.tap_map;
    sum += detect(adapted, t, d).ser;
  }
  return sum / static_cast<double>(ids.size());
}

namespace detail {

enum class TrainMode { meta, naive };

inline TrainState train_loop(const std::vector<Task>& tasks, const MetaConfig& cfg,
                             TrainMode mode, std::ostream* log) {
  const auto T = tasks.size();
  if (cfg.val_task_count < 0 || static_cast<std::size_t>(cfg.val_task_count) >= T)
    throw std::invalid_argument("train: validation holdout must leave training tasks");
  if (cfg.B < 1 || cfg.K < 1 || cfg.lambda <= 0.0 || cfg.eta <= 0.0)
    throw std::invalid_argument("train: bad config");

  RngStream rng(cfg.seed);

  // random validation holdout; remaining indices form the training pool
  std::vector<std::size_t> perm(T);
  for (std::size_t i = 0; i < T; ++i) perm[i] = i;
  for (std::size_t i = 0; i + 1 < T; ++i) {
    auto j = i + static_cast<std::size_t>(rng.uniform_int(T - i));
    std::swap(perm[i], perm[j]);
  }
  std::vector<std::size_t> val_ids(perm.begin(), perm.begin() + cfg.val_task_count);
  std::vector<std::size_t> pool(perm.begin() + cfg.val_task_count, perm.end());

  TrainState st;
  st.val_ids = val_ids;
  RngStream init_rng = rng.child(0x1717);
  st.params = init_params(cfg.arch, init_rng);
  st.best_params = st.params;
  st.best_val_ser = mean_adapted_ser(st.params, tasks, val_ids, cfg);
  st.best_iter = 0;
  if (log)
    (*log) << "iter=0 loss=nan val_ser=" << st.best_val_ser << " best=" << st.best_val_ser
           << "\n";

  std::vector<Task> batch;
  for (int iter = 1; iter <= cfg.max_meta_iters; ++iter) {
    batch.clear();
    for (int b = 0; b < cfg.B; ++b) {
      auto id = pool[static_cast<std::size_t>(rng.uniform_int(pool.size()))];
      st.train_ids_used.insert(id);
      batch.push_back(tasks[id]);
    }

    double mean_loss = 0.0;
    if (mode == TrainMode::meta) {
      MetaStepResult step = meta_step_result(st.params, batch, cfg);
      st.params = std::move(step.params);
      mean_loss = step.mean_outer_loss;
    } else {
      // pooled supervised training: direct gradient at theta, no inner loop
      Gradient sum = ModelParams::zeros(cfg.arch);
      DetectorOptions d;
      d.alpha = cfg.alpha;
      d.tap_map = cfg.tap_map;
      for (const Task& t : batch) {
        auto [lb, g] = loss_and_grad(st.params, t, d);
        if (cfg.freeze_temps) g.log_temps.setZero();
        sum.axpy(1.0, g);
        mean_loss += lb.total;
      }
      mean_loss /= static_cast<double>(batch.size());
      st.params.axpy(-cfg.eta, sum);
    }
    st.meta_iters = iter;

    if (iter % cfg.val_every == 0 || iter == cfg.max_meta_iters) {
      double val_ser = mean_adapted_ser(st.params, tasks, val_ids, cfg);
      if (val_ser < st.best_val_ser) {
        st.best_val_ser = val_ser;
        st.best_params = st.params;
        st.best_iter = iter;
      }
      if (log)
        (*log) << "iter=" << iter << " loss=" << mean_loss << " val_ser=" << val_ser
               << " best=" << st.best_val_ser << "\n";
    } else if (log) {
      (*log) << "iter=" << iter << " loss=" << mean_loss << "\n";
    }
  }
  return st;
}

}  // namespace detail

// Algorithm: sample a batch, adapt each task K steps from the shared
// parameters, apply the summed first-order outer gradient; keep the
// parameters with the best validation SER.
inline TrainState train(const std::vector<Task>& tasks, const MetaConfig& cfg,
                        std::ostream* log = nullptr) {
  return detail::train_loop(tasks, cfg, detail::TrainMode::meta, log);
}

// pooled mini-batch SGD on the same objective; at test time the harness
// applies K local steps exactly as for meta checkpoints
inline TrainState baseline_naive_train(const std::vector<Task>& tasks, const MetaConfig& cfg,
                                       std::ostream* log = nullptr) {
  return detail::train_loop(tasks, cfg, detail::TrainMode::naive, log);
}

}  // namespace metassd
