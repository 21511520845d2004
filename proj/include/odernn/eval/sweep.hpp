#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "odernn/eval/metrics.hpp"
#include "odernn/training/train.hpp"

namespace odernn {

enum class SweepVariable { velocity, sampling_interval, sequence_length, channel_noise_nmse };

inline std::string to_string(SweepVariable v) {
  switch (v) {
    case SweepVariable::velocity: return "velocity";
    case SweepVariable::sampling_interval: return "sampling_interval";
    case SweepVariable::sequence_length: return "sequence_length";
    case SweepVariable::channel_noise_nmse: return "channel_noise_nmse";
  }
  return "?";
}

inline SweepVariable sweep_variable_from_string(const std::string& s) {
  if (s == "velocity") return SweepVariable::velocity;
  if (s == "sampling_interval") return SweepVariable::sampling_interval;
  if (s == "sequence_length") return SweepVariable::sequence_length;
  if (s == "channel_noise_nmse") return SweepVariable::channel_noise_nmse;
  throw InvalidArgument("unknown sweep variable '" + s +
                        "' (expected velocity, sampling_interval, sequence_length or channel_noise_nmse)");
}

struct SweepSpec {
  SweepVariable variable = SweepVariable::velocity;
  std::vector<double> grid{5.0, 10.0, 20.0, 40.0};
  std::vector<ModelKind> models{ModelKind::ode_rnn, ModelKind::neural_ode, ModelKind::rnn, ModelKind::lstm};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  DatasetConfig dataset;  // template; the swept field is overridden per cell
  ModelConfig model;      // architecture template; kind is overridden per cell
  TrainConfig training;   // its solver is replaced by `solver`
  SolverConfig solver{SolverMethod::rk4, 1.0};
  // Noise sweep: observations annotated above this NMSE are dropped for
  // irregular-capable models. Unset: the geometric mean of the two noise levels.
  std::optional<double> drop_threshold;

  void validate() const {
    require(!grid.empty(), "sweep.grid must be nonempty");
    require(!models.empty(), "sweep.models must be nonempty");
    require(seeds.size() >= 3, "sweep.seeds needs at least 3 entries for median aggregation");
    for (std::size_t i = 0; i < seeds.size(); ++i)
      for (std::size_t j = i + 1; j < seeds.size(); ++j) require(seeds[i] != seeds[j], "sweep.seeds must be distinct");
    for (double v : grid) {
      require(std::isfinite(v), "sweep.grid values must be finite");
      switch (variable) {
        case SweepVariable::velocity: require(v >= 0.0, "sweep.grid: velocity must be >= 0"); break;
        case SweepVariable::sampling_interval: require(v > 0.0, "sweep.grid: interval must be > 0"); break;
        case SweepVariable::sequence_length:
          require(v >= 1.0 && v == std::floor(v), "sweep.grid: sequence length must be a positive integer");
          break;
        case SweepVariable::channel_noise_nmse: require(v >= 0.0, "sweep.grid: noise level must be >= 0"); break;
      }
    }
    if (drop_threshold) require(*drop_threshold >= 0.0, "sweep.drop_threshold must be >= 0");
    dataset.validate();
    model.validate();
    training.validate();
    solver.validate();
  }
};

struct SweepRecord {
  ModelKind model = ModelKind::ode_rnn;
  double value = 0.0;
  std::uint64_t seed = 0;
  double nmse = std::numeric_limits<double>::quiet_NaN();
  double train_ms = 0.0;
  bool ok = false;
  std::string error;
};

struct SweepAggregate {
  ModelKind model = ModelKind::ode_rnn;
  double value = 0.0;
  double median = std::numeric_limits<double>::quiet_NaN();
  double min = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
  std::size_t count = 0;  // successful seeds
};

inline double median_of(std::vector<double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

struct SweepResult {
  SweepVariable variable = SweepVariable::velocity;
  std::vector<SweepRecord> records;  // ordered by model, grid value, seed

  std::size_t failures() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return !r.ok; }));
  }

  std::vector<SweepAggregate> aggregates() const {
    std::vector<SweepAggregate> out;
    for (const auto& r : records) {
      const bool seen =
          std::any_of(out.begin(), out.end(), [&](const auto& a) { return a.model == r.model && a.value == r.value; });
      if (!seen) out.push_back({r.model, r.value});
    }
    for (auto& a : out) {
      std::vector<double> xs;
      for (const auto& r : records)
        if (r.model == a.model && r.value == a.value && r.ok) xs.push_back(r.nmse);
      a.count = xs.size();
      if (xs.empty()) continue;
      a.median = median_of(xs);
      a.min = *std::min_element(xs.begin(), xs.end());
      a.max = *std::max_element(xs.begin(), xs.end());
    }
    return out;
  }

  // Median NMSE for (model, value); NaN when absent.
  double median(ModelKind model, double value) const {
    for (const auto& a : aggregates())
      if (a.model == model && a.value == value) return a.median;
    return std::numeric_limits<double>::quiet_NaN();
  }
};

// Dataset config for one grid value.
inline DatasetConfig cell_dataset(const SweepSpec& spec, double value, std::uint64_t seed) {
  DatasetConfig d = spec.dataset;
  d.seed = derive_seed(spec.dataset.seed, seed);
  switch (spec.variable) {
    case SweepVariable::velocity:
      d.generation.speed_min = value;
      d.generation.speed_max = value;
      break;
    case SweepVariable::sampling_interval: d.generation.interval = value; break;
    case SweepVariable::sequence_length: d.generation.n_obs = static_cast<std::size_t>(value); break;
    case SweepVariable::channel_noise_nmse: d.generation.noise.level = value; break;
  }
  return d;
}

inline double noise_drop_threshold(const SweepSpec& spec, double level) {
  if (spec.drop_threshold) return *spec.drop_threshold;
  return level * std::sqrt(spec.dataset.generation.noise.low_ratio);
}

inline Model train_cell_model(const SweepSpec& spec, ModelKind kind, const Dataset& ds, std::uint64_t seed,
                              double& train_ms) {
  ModelConfig mc = spec.model;
  mc.kind = kind;
  Model m = make_model(mc, {ds.n_t(), ds.n_c()}, derive_seed(seed, 0x4D4Fu));
  TrainConfig tc = spec.training;
  tc.solver = spec.solver;
  tc.seed = derive_seed(seed, 0x5452u);
  tc.threads = 1;
  tc.eval_every = std::max<std::size_t>(tc.steps, 1);
  tc.eval_samples = 1;
  if (!uses_timestamps(kind)) tc.obs_dropout = 0.0;  // baselines must see every observation
  TrainResult r = train(std::move(m), ds, tc);
  train_ms = r.wall_ms;
  return std::move(r.model);
}

struct SweepOptions {
  std::size_t jobs = 1;
  std::vector<SweepRecord> completed;  // successful records to reuse instead of recomputing
  std::function<void(const SweepRecord&)> on_record;
};

namespace detail {

struct SweepJob {
  ModelKind model;
  std::size_t seed_index;
  std::vector<std::size_t> grid_indices;  // one job may evaluate several grid values
};

inline std::vector<SweepRecord> run_sweep_job(const SweepSpec& spec, const SweepJob& job) {
  const std::uint64_t seed = spec.seeds[job.seed_index];
  std::vector<SweepRecord> out;
  auto fail = [&](double value, const std::string& msg) {
    SweepRecord r;
    r.model = job.model;
    r.value = value;
    r.seed = seed;
    r.error = msg;
    out.push_back(r);
  };
  if (spec.variable == SweepVariable::channel_noise_nmse) {
    // Noise only affects inference: train once on clean data, evaluate each level
    // on a noisy copy with the same geometry.
    double train_ms = 0.0;
    std::optional<Model> model;
    try {
      const DatasetConfig clean = cell_dataset(spec, 0.0, seed);
      const Dataset ds = generate_dataset(clean);
      model = train_cell_model(spec, job.model, ds, seed, train_ms);
    } catch (const std::exception& e) {
      for (std::size_t g : job.grid_indices) fail(spec.grid[g], e.what());
      return out;
    }
    for (std::size_t g : job.grid_indices) {
      const double level = spec.grid[g];
      try {
        const Dataset ds = generate_dataset(cell_dataset(spec, level, seed));
        std::optional<double> threshold;
        if (uses_timestamps(job.model) && level > 0.0) threshold = noise_drop_threshold(spec, level);
        SweepRecord r{job.model, level, seed, dataset_nmse(*model, ds, ds.test, spec.solver, threshold), train_ms, true, ""};
        out.push_back(r);
      } catch (const std::exception& e) {
        fail(level, e.what());
      }
    }
    return out;
  }
  for (std::size_t g : job.grid_indices) {
    const double value = spec.grid[g];
    try {
      const Dataset ds = generate_dataset(cell_dataset(spec, value, seed));
      double train_ms = 0.0;
      const Model m = train_cell_model(spec, job.model, ds, seed, train_ms);
      out.push_back({job.model, value, seed, dataset_nmse(m, ds, ds.test, spec.solver), train_ms, true, ""});
    } catch (const std::exception& e) {
      fail(value, e.what());
    }
  }
  return out;
}

}  // namespace detail

/// Runs every (model, grid value, seed) cell. Cell failures are recorded and
/// the sweep continues. Records come back in (model, value, seed) order
/// regardless of `jobs`.
inline SweepResult run_sweep(const SweepSpec& spec, const SweepOptions& opts = {}) {
  spec.validate();
  require(opts.jobs >= 1, "sweep: jobs must be >= 1");
  using Key = std::tuple<std::size_t, std::size_t, std::size_t>;  // model, grid, seed indices
  std::map<Key, SweepRecord> done;
  auto key_of = [&](const SweepRecord& r) -> std::optional<Key> {
    const auto m = std::find(spec.models.begin(), spec.models.end(), r.model);
    const auto g = std::find(spec.grid.begin(), spec.grid.end(), r.value);
    const auto s = std::find(spec.seeds.begin(), spec.seeds.end(), r.seed);
    if (m == spec.models.end() || g == spec.grid.end() || s == spec.seeds.end()) return std::nullopt;
    return Key{static_cast<std::size_t>(m - spec.models.begin()), static_cast<std::size_t>(g - spec.grid.begin()),
               static_cast<std::size_t>(s - spec.seeds.begin())};
  };
  for (const auto& r : opts.completed)
    if (r.ok)
      if (auto k = key_of(r)) done[*k] = r;

  std::vector<detail::SweepJob> jobs;
  const bool grouped = spec.variable == SweepVariable::channel_noise_nmse;
  for (std::size_t m = 0; m < spec.models.size(); ++m)
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) {
      std::vector<std::size_t> pending;
      for (std::size_t g = 0; g < spec.grid.size(); ++g)
        if (!done.count(Key{m, g, s})) pending.push_back(g);
      if (pending.empty()) continue;
      if (grouped) {
        jobs.push_back({spec.models[m], s, pending});
      } else {
        for (std::size_t g : pending) jobs.push_back({spec.models[m], s, {g}});
      }
    }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      std::vector<SweepRecord> recs = detail::run_sweep_job(spec, jobs[j]);
      std::lock_guard<std::mutex> lock(mu);
      for (auto& r : recs) {
        if (opts.on_record) opts.on_record(r);
        if (auto k = key_of(r)) done[*k] = std::move(r);
      }
    }
  };
  const std::size_t n_threads = std::min(opts.jobs, std::max<std::size_t>(jobs.size(), 1));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  SweepResult result;
  result.variable = spec.variable;
  for (const auto& [k, r] : done) result.records.push_back(r);
  return result;
}

inline void require_variable(const SweepSpec& spec, SweepVariable v) {
  require(spec.variable == v, [&] { return "sweep: expected variable " + to_string(v) + ", got " + to_string(spec.variable); });
}

inline SweepResult run_velocity_sweep(const SweepSpec& spec, const SweepOptions& opts = {}) {
  require_variable(spec, SweepVariable::velocity);
  return run_sweep(spec, opts);
}

// Recurrent baselines are excluded: they are not meant to converge at these intervals.
inline SweepResult run_interval_sweep(const SweepSpec& spec, const SweepOptions& opts = {}) {
  require_variable(spec, SweepVariable::sampling_interval);
  for (auto m : spec.models)
    require(uses_timestamps(m), [&] { return "interval sweep compares ode-rnn and neural-ode only; got " + to_string(m); });
  return run_sweep(spec, opts);
}

inline SweepResult run_length_sweep(const SweepSpec& spec, const SweepOptions& opts = {}) {
  require_variable(spec, SweepVariable::sequence_length);
  for (auto m : spec.models)
    require(m != ModelKind::neural_ode, "length sweep excludes neural-ode (it only reads the first observation)");
  return run_sweep(spec, opts);
}

inline SweepResult run_noise_sweep(const SweepSpec& spec, const SweepOptions& opts = {}) {
  require_variable(spec, SweepVariable::channel_noise_nmse);
  return run_sweep(spec, opts);
}

inline SweepResult run_any_sweep(const SweepSpec& spec, const SweepOptions& opts = {}) {
  switch (spec.variable) {
    case SweepVariable::velocity: return run_velocity_sweep(spec, opts);
    case SweepVariable::sampling_interval: return run_interval_sweep(spec, opts);
    case SweepVariable::sequence_length: return run_length_sweep(spec, opts);
    case SweepVariable::channel_noise_nmse: return run_noise_sweep(spec, opts);
  }
  return run_sweep(spec, opts);
}

// Default specs mirroring the four experiments.
inline SweepSpec default_sweep_spec(SweepVariable v) {
  SweepSpec s;
  s.variable = v;
  switch (v) {
    case SweepVariable::velocity: break;
    case SweepVariable::sampling_interval:
      s.grid = {1e-3, 2e-3, 5e-3, 10e-3};
      s.models = {ModelKind::ode_rnn, ModelKind::neural_ode};
      break;
    case SweepVariable::sequence_length:
      s.grid = {2, 3, 4, 5, 7};
      s.models = {ModelKind::ode_rnn, ModelKind::rnn, ModelKind::lstm};
      break;
    case SweepVariable::channel_noise_nmse:
      s.grid = {0.0, 0.1, 0.3, 1.0};
      s.models = {ModelKind::ode_rnn, ModelKind::rnn, ModelKind::lstm};
      // Irregular-capable models train on thinned sequences so the dynamics learn
      // the gaps that dropping leaves at inference.
      s.training.obs_dropout = s.dataset.generation.noise.fraction;
      break;
  }
  return s;
}

}  // namespace odernn
