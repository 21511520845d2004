#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "odernn/eval/metrics.hpp"
#include "odernn/numerics/adam.hpp"
#include "odernn/training/engines.hpp"

namespace odernn {

struct TrainConfig {
  std::size_t steps = 5000;
  std::size_t batch = 20;
  double lr = 1e-3;
  GradientEngine engine = GradientEngine::checkpoint_adjoint;
  SolverConfig solver{SolverMethod::rk4, 1.0};
  std::uint64_t seed = 1;
  std::size_t eval_every = 500;
  double clip = 0.0;          // global-norm clip; 0 disables
  std::size_t threads = 1;    // per-sample workers; results do not depend on it
  std::size_t eval_samples = 0;  // test samples per log record; 0 means the whole split
  double obs_dropout = 0.0;      // per-observation removal probability; irregular-capable models only

  void validate() const {
    require(batch >= 1, "training.batch must be >= 1");
    require(lr >= 0.0 && std::isfinite(lr), "training.lr must be finite and >= 0");
    require(eval_every >= 1, "training.eval_every must be >= 1");
    require(clip >= 0.0, "training.clip must be >= 0");
    require(threads >= 1, "training.threads must be >= 1");
    require(obs_dropout >= 0.0 && obs_dropout < 1.0, "training.obs_dropout must be in [0, 1)");
    solver.validate();
  }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct LogRecord {
  std::size_t step = 0;
  double train_mse = 0.0;  // mean batch loss since the previous record
  double test_nmse = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
  bool final = false;
};

struct TrainResult {
  Model model;
  std::vector<double> step_loss;  // mean batch loss per step
  std::vector<LogRecord> log;
  double wall_ms = 0.0;
};

class TrainingError : public NumericError {
 public:
  TrainingError(std::size_t step, std::size_t sample, const std::string& what)
      : NumericError("training step " + std::to_string(step) + ", sample " + std::to_string(sample) + ": " + what),
        step_(step),
        sample_(sample) {}
  std::size_t step() const { return step_; }
  std::size_t sample() const { return sample_; }

 private:
  std::size_t step_;
  std::size_t sample_;
};

struct SampleGradient {
  Model grads;
  double loss = 0.0;
};

// Loss in normalized units: the decoder output against target / scale.
inline SampleGradient sample_gradient(const Model& m, const CsiSequence& seq, const SolverConfig& solver,
                                      GradientEngine engine) {
  Prediction p = forward(m, seq, solver, recording_for(engine));
  Vector target = csi_splice(seq.target);
  if (p.cache.scale != 1.0)
    for (double& v : target) v /= p.cache.scale;
  MseResult loss = mse_loss(p.cache.output, target);
  SampleGradient out{zeros_like(m), loss.loss};
  if (!std::isfinite(loss.loss)) return out;
  accumulate_gradients(m, p.cache, loss.cotangent, engine, out.grads);
  return out;
}

inline double global_norm(const Model& g) {
  double acc = 0.0;
  visit_blocks(g, "", [&](const ConstBlockRef& b) { acc += squared_norm(b.values); });
  return std::sqrt(acc);
}

inline void scale_model(Model& g, double a) {
  visit_blocks(g, "", [&](const BlockRef& b) {
    for (double& v : b.values) v *= a;
  });
}

inline void add_model(Model& acc, const Model& g) {
  auto dst = collect_blocks(acc);
  auto src = collect_blocks(g);
  for (std::size_t b = 0; b < dst.size(); ++b)
    for (std::size_t i = 0; i < dst[b].values.size(); ++i) dst[b].values[i] += src[b].values[i];
}

/// Removes each observation independently with probability `p`. Survivors keep
/// their timestamps; when every observation is drawn for removal, one chosen
/// uniformly survives.
inline CsiSequence thin_observations(const CsiSequence& seq, double p, SeededRng& rng) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (rng.uniform() >= p) keep.push_back(i);
  if (keep.empty()) keep.push_back(rng.uniform_index(seq.size()));
  CsiSequence out;
  out.target = seq.target;
  for (std::size_t i : keep) {
    out.times.push_back(seq.times[i]);
    out.observations.push_back(seq.observations[i]);
    out.noise_nmse.push_back(seq.noise_nmse[i]);
  }
  out.times.push_back(seq.target_time());
  return out;
}

// Test NMSE on the first `limit` test samples (all when 0); NaN without a test split.
inline double test_nmse(const Model& m, const Dataset& ds, const SolverConfig& solver, std::size_t limit) {
  if (ds.test.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> idx = ds.test;
  if (limit > 0 && limit < idx.size()) idx.resize(limit);
  return dataset_nmse(m, ds, idx, solver);
}

/// Minibatch Adam on the train split. Batches are drawn with replacement from a
/// stream seeded by cfg.seed; the batch gradient is the mean of per-sample
/// gradients summed in batch order, so the trajectory does not depend on threads.
inline TrainResult train(Model model, const Dataset& ds, const TrainConfig& cfg,
                         const std::function<void(const LogRecord&)>& on_log = {}) {
  cfg.validate();
  require(!ds.train.empty(), "train: dataset has no training samples");
  const CsiDims dims{ds.n_t(), ds.n_c()};
  require(shape_of(model).dims == dims, [&] { return "train: model dims " + shape_str(shape_of(model).dims.n_t, shape_of(model).dims.n_c) +
                                            " do not match dataset dims " + shape_str(dims.n_t, dims.n_c); });
  require(cfg.obs_dropout == 0.0 || uses_timestamps(kind_of(model)), [&] {
    return "training.obs_dropout needs an irregular-capable model; " + to_string(kind_of(model)) +
           " must see every observation";
  });
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  auto elapsed_ms = [&] { return std::chrono::duration<double, std::milli>(clock::now() - t_start).count(); };

  TrainResult result;
  AdamState adam = make_adam_state(model);
  SeededRng batch_rng(derive_seed(cfg.seed, 0xBA7Cu));
  std::vector<std::size_t> batch(cfg.batch);
  std::vector<SampleGradient> per_sample(cfg.batch);
  // A separate stream, so enabling dropout leaves the batch draws unchanged.
  SeededRng dropout_rng(derive_seed(cfg.seed, 0xD50Fu));
  std::vector<CsiSequence> thinned(cfg.batch);
  std::size_t window_start = 0;

  auto emit = [&](std::size_t step, bool final) {
    LogRecord r;
    r.step = step;
    const std::size_t from = final && window_start == result.step_loss.size() && step > 0
                                 ? step - std::min(step, cfg.eval_every)
                                 : window_start;
    double acc = 0.0;
    for (std::size_t i = from; i < result.step_loss.size(); ++i) acc += result.step_loss[i];
    r.train_mse = result.step_loss.size() > from ? acc / static_cast<double>(result.step_loss.size() - from)
                                                 : std::numeric_limits<double>::quiet_NaN();
    if (final && !result.log.empty() && result.log.back().step == step)
      r.test_nmse = result.log.back().test_nmse;
    else
      r.test_nmse = test_nmse(model, ds, cfg.solver, cfg.eval_samples);
    r.wall_ms = elapsed_ms();
    r.final = final;
    window_start = result.step_loss.size();
    result.log.push_back(r);
    if (on_log) on_log(r);
  };

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (auto& b : batch) b = ds.train[batch_rng.uniform_index(ds.train.size())];
    if (cfg.obs_dropout > 0.0)
      for (std::size_t k = 0; k < cfg.batch; ++k)
        thinned[k] = thin_observations(ds.samples[batch[k]], cfg.obs_dropout, dropout_rng);
    auto work = [&](std::size_t k) {
      const CsiSequence& seq = cfg.obs_dropout > 0.0 ? thinned[k] : ds.samples[batch[k]];
      per_sample[k] = sample_gradient(model, seq, cfg.solver, cfg.engine);
    };
    const std::size_t workers = std::min(cfg.threads, cfg.batch);
    if (workers <= 1) {
      for (std::size_t k = 0; k < cfg.batch; ++k) {
        try {
          work(k);
        } catch (const NumericError& e) {
          throw TrainingError(step, batch[k], e.what());
        }
      }
    } else {
      std::vector<std::exception_ptr> errors(cfg.batch);
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t k = w; k < cfg.batch; k += workers) {
            try {
              work(k);
            } catch (...) {
              errors[k] = std::current_exception();
            }
          }
        });
      for (auto& th : pool) th.join();
      for (std::size_t k = 0; k < cfg.batch; ++k) {
        if (!errors[k]) continue;
        try {
          std::rethrow_exception(errors[k]);
        } catch (const NumericError& e) {
          throw TrainingError(step, batch[k], e.what());
        }
      }
    }

    double loss = 0.0;
    for (std::size_t k = 0; k < cfg.batch; ++k) {
      if (!std::isfinite(per_sample[k].loss)) throw TrainingError(step, batch[k], "non-finite loss");
      loss += per_sample[k].loss;
    }
    Model grads = std::move(per_sample[0].grads);
    for (std::size_t k = 1; k < cfg.batch; ++k) add_model(grads, per_sample[k].grads);
    scale_model(grads, 1.0 / static_cast<double>(cfg.batch));
    if (cfg.clip > 0.0) {
      const double n = global_norm(grads);
      if (n > cfg.clip) scale_model(grads, cfg.clip / n);
    }
    try {
      adam_step(adam, model, grads, cfg.lr);
    } catch (const NumericError& e) {
      throw TrainingError(step, batch.front(), e.what());
    }
    result.step_loss.push_back(loss / static_cast<double>(cfg.batch));
    if (step % cfg.eval_every == 0) emit(step, false);
  }
  emit(cfg.steps, true);
  result.wall_ms = elapsed_ms();
  result.model = std::move(model);
  return result;
}

// Exponential moving average of a loss history.
inline std::vector<double> smoothed(const std::vector<double>& xs, double alpha = 0.05) {
  std::vector<double> out(xs.size());
  double s = xs.empty() ? 0.0 : xs.front();
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = s = (i == 0 ? xs[0] : alpha * xs[i] + (1.0 - alpha) * s);
  return out;
}

}  // namespace odernn
