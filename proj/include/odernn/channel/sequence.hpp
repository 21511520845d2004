#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "odernn/channel/channel.hpp"

namespace odernn {

// Adds i.i.d. circular complex Gaussian noise with per-entry variance
// target_nmse * ||H||_F^2 / (N_t N_c), so E[||N||^2 / ||H||^2] = target_nmse.
inline CsiMatrix add_noise(const CsiMatrix& h, double target_nmse, SeededRng& rng) {
  require(target_nmse >= 0.0 && std::isfinite(target_nmse), "add_noise: target_nmse must be >= 0");
  if (target_nmse == 0.0) return h;
  const double energy = squared_frobenius(h);
  if (!(energy > 0.0)) throw InvalidArgument("add_noise: zero channel cannot carry a relative noise level");
  const double sigma = std::sqrt(target_nmse * energy / static_cast<double>(2 * h.re.size()));
  CsiMatrix out = h;
  for (std::size_t i = 0; i < out.re.size(); ++i) {
    out.re.data[i] += sigma * rng.normal();
    out.im.data[i] += sigma * rng.normal();
  }
  return out;
}

// ||noisy - clean||^2 / ||clean||^2
inline double relative_error(const CsiMatrix& noisy, const CsiMatrix& clean) {
  return squared_frobenius(noisy - clean) / squared_frobenius(clean);
}

struct CsiSequence {
  std::vector<double> times;             // n + 1 timestamps, the last one is the target's
  std::vector<CsiMatrix> observations;   // n
  CsiMatrix target;
  std::vector<double> noise_nmse;        // n, 0 for clean observations

  std::size_t size() const { return observations.size(); }
  double target_time() const { return times.back(); }

  void validate() const {
    require(!observations.empty(), "sequence: needs at least one observation");
    require(times.size() == observations.size() + 1, [&] { return "sequence: expected n + 1 timestamps"; });
    require(noise_nmse.size() == observations.size(), "sequence: expected one noise annotation per observation");
    for (std::size_t i = 1; i < times.size(); ++i)
      require(times[i] > times[i - 1], "sequence: timestamps must be strictly increasing");
    for (const auto& h : observations) require(h.same_dims(target), "sequence: matrices must share dims");
  }

  friend bool operator==(const CsiSequence&, const CsiSequence&) = default;
};

enum class IntervalPolicy { uniform, jitter };

// `level` is the elevated observation NMSE. A `fraction` of the observations
// (rounded, at least one when both are positive) get `level`; the rest get
// level * low_ratio. level == 0 means clean observations.
struct NoisePolicy {
  double level = 0.0;
  double fraction = 0.2;
  double low_ratio = 0.1;
  friend bool operator==(const NoisePolicy&, const NoisePolicy&) = default;
};

struct GenerationConfig {
  std::size_t n_obs = 5;
  double interval = 1e-3;  // seconds
  IntervalPolicy policy = IntervalPolicy::uniform;
  double jitter = 0.5;     // relative half-width for the jitter policy, in [0, 1)
  double speed_min = 5.0;
  double speed_max = 40.0;
  NoisePolicy noise;
  std::size_t max_retries = 1000;

  void validate() const {
    require(n_obs >= 1, "generation.n_obs must be >= 1");
    require(interval > 0.0, "generation.interval must be > 0");
    require(jitter >= 0.0 && jitter < 1.0, "generation.jitter must be in [0, 1)");
    require(speed_min >= 0.0 && speed_max >= speed_min, "generation: bad speed range");
    require(noise.level >= 0.0 && noise.fraction >= 0.0 && noise.fraction <= 1.0 && noise.low_ratio >= 0.0,
            "generation.noise: bad policy");
    require(max_retries >= 1, "generation.max_retries must be >= 1");
  }
  friend bool operator==(const GenerationConfig&, const GenerationConfig&) = default;
};

inline std::vector<double> sample_times(const GenerationConfig& gen, SeededRng& rng) {
  std::vector<double> t(gen.n_obs + 1);
  for (std::size_t i = 0; i <= gen.n_obs; ++i) {
    if (gen.policy == IntervalPolicy::uniform) {
      t[i] = static_cast<double>(i) * gen.interval;
    } else {
      t[i] = i == 0 ? 0.0 : t[i - 1] + gen.interval * (1.0 + gen.jitter * (2.0 * rng.uniform() - 1.0));
    }
  }
  return t;
}

inline bool clear_of_scatterers(const Scene& scene, Vec2 p) {
  if (norm(p - scene.bs) < 1e-3) return false;
  for (const auto& s : scene.scatterers)
    if (norm(p - s.position) < 1e-3) return false;
  return true;
}

inline CsiSequence generate_sequence(const Scene& scene, const OfdmConfig& ofdm, const ArrayConfig& array,
                                     const GenerationConfig& gen, SeededRng& rng) {
  gen.validate();
  // Drawn unconditionally so clean and noisy datasets share their geometry.
  SeededRng noise_rng(rng.next_u64());
  CsiSequence seq;
  seq.times = sample_times(gen, rng);
  const double span = seq.times.back();

  UserState start;
  bool placed = false;
  for (std::size_t attempt = 0; attempt < gen.max_retries && !placed; ++attempt) {
    start.speed = rng.uniform(gen.speed_min, gen.speed_max);
    start.heading = rng.uniform(0.0, kTwoPi);
    start.position = {rng.uniform(scene.area.x_min, scene.area.x_max),
                      rng.uniform(scene.area.y_min, scene.area.y_max)};
    const Propagation end = propagate_user(start, span, scene.area);
    placed = end.inside && clear_of_scatterers(scene, start.position) && clear_of_scatterers(scene, end.user.position);
  }
  if (!placed) throw InvalidScene("generate_sequence: no trajectory stayed inside the area after retries");

  std::vector<CsiMatrix> clean;
  for (double t : seq.times) clean.push_back(csi_at(scene, propagate_user(start, t, scene.area).user, array, ofdm));
  seq.target = clean.back();
  clean.pop_back();

  const std::size_t n = gen.n_obs;
  std::vector<double> levels(n, 0.0);
  if (gen.noise.level > 0.0) {
    std::size_t n_high = static_cast<std::size_t>(std::llround(gen.noise.fraction * static_cast<double>(n)));
    if (gen.noise.fraction > 0.0) n_high = std::max<std::size_t>(n_high, 1);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[noise_rng.uniform_index(i)]);
    for (std::size_t i = 0; i < n; ++i) levels[order[i]] = i < n_high ? gen.noise.level : gen.noise.level * gen.noise.low_ratio;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (levels[i] > 0.0) {
      seq.observations.push_back(add_noise(clean[i], levels[i], noise_rng));
      seq.noise_nmse.push_back(relative_error(seq.observations.back(), clean[i]));
    } else {
      seq.observations.push_back(clean[i]);
      seq.noise_nmse.push_back(0.0);
    }
  }
  seq.validate();
  return seq;
}

struct DatasetConfig {
  SceneConfig scene;
  ArrayConfig array;
  OfdmConfig ofdm;
  GenerationConfig generation;
  std::size_t n_samples = 1000;
  std::uint64_t seed = 1;
  double train_fraction = 0.8;

  void validate() const {
    array.validate();
    ofdm.validate();
    generation.validate();
    require(n_samples >= 1, "dataset.n_samples must be >= 1");
    require(train_fraction >= 0.0 && train_fraction <= 1.0, "dataset.train_fraction must be in [0, 1]");
  }
  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct Dataset {
  DatasetConfig config;
  std::vector<CsiSequence> samples;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;

  std::size_t n_t() const { return config.array.n_t; }
  std::size_t n_c() const { return config.ofdm.n_c; }
};

// Deterministic shuffle of [0, n) split into train/test by train_fraction.
inline void assign_split(Dataset& ds, std::uint64_t seed) {
  const std::size_t n = ds.samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  SeededRng rng(derive_seed(seed, 0x5350u));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  const auto n_train = static_cast<std::size_t>(std::floor(ds.config.train_fraction * static_cast<double>(n) + 1e-9));
  ds.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.test.begin(), ds.test.end());
}

// Sample i uses the child seed derive_seed(rng.seed(), i), so any thread count
// produces the same dataset.
inline Dataset generate_dataset(const Scene& scene, const DatasetConfig& cfg, std::size_t n_samples,
                                const SeededRng& rng, std::size_t threads = 1) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  ds.config.n_samples = n_samples;
  ds.config.seed = rng.seed();
  ds.samples.resize(n_samples);
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < n_samples; i += stride) {
      SeededRng sample_rng = rng.child(i);
      ds.samples[i] = generate_sequence(scene, cfg.ofdm, cfg.array, cfg.generation, sample_rng);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n_samples));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        try {
          work(t, threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  assign_split(ds, rng.seed());
  return ds;
}

inline Dataset generate_dataset(const DatasetConfig& cfg, std::size_t threads = 1) {
  return generate_dataset(make_scene(cfg.scene), cfg, cfg.n_samples, SeededRng(cfg.seed), threads);
}

}  // namespace odernn
