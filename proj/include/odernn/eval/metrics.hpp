#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "odernn/channel/sequence.hpp"
#include "odernn/models/forward.hpp"

namespace odernn {

// sum |y - y_hat|^2 / sum |y|^2 for one sample.
inline double nmse(const CsiMatrix& pred, const CsiMatrix& target) {
  require(pred.same_dims(target), [&] { return "nmse: dims mismatch " + shape_str(pred.n_t(), pred.n_c()) + " vs " +
                                      shape_str(target.n_t(), target.n_c()); });
  const double denom = squared_frobenius(target);
  if (!(denom > 0.0)) throw InvalidArgument("nmse: target is zero");
  return squared_frobenius(pred - target) / denom;
}

/// Removes observations whose annotated noise NMSE exceeds `threshold`. The
/// surviving timestamps are kept as they are, so the result is generally
/// irregularly sampled. If every observation exceeds the threshold, the
/// least noisy one is kept.
inline CsiSequence drop_bad_observations(const CsiSequence& seq, double threshold) {
  require(seq.noise_nmse.size() == seq.observations.size(), "drop_bad_observations: missing noise annotations");
  CsiSequence out;
  out.target = seq.target;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.noise_nmse[i] > threshold) continue;
    out.times.push_back(seq.times[i]);
    out.observations.push_back(seq.observations[i]);
    out.noise_nmse.push_back(seq.noise_nmse[i]);
  }
  if (out.observations.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < seq.size(); ++i)
      if (seq.noise_nmse[i] < seq.noise_nmse[best]) best = i;
    out.times.push_back(seq.times[best]);
    out.observations.push_back(seq.observations[best]);
    out.noise_nmse.push_back(seq.noise_nmse[best]);
  }
  out.times.push_back(seq.target_time());
  return out;
}

// Mean per-sample NMSE over `indices`. A drop threshold is applied before the
// forward pass; it is rejected for models that cannot consume irregular sampling.
inline double dataset_nmse(const Model& model, const Dataset& ds, const std::vector<std::size_t>& indices,
                           const SolverConfig& solver, std::optional<double> drop_threshold = std::nullopt) {
  if (drop_threshold && std::isfinite(*drop_threshold) && !uses_timestamps(kind_of(model)))
    throw InvalidArgument("observation dropping needs an irregular-capable model; " + to_string(kind_of(model)) +
                          " must retain every observation");
  require(!indices.empty(), "dataset_nmse: no samples to evaluate");
  double acc = 0.0;
  for (std::size_t idx : indices) {
    const CsiSequence& seq = ds.samples.at(idx);
    const CsiMatrix pred = drop_threshold && std::isfinite(*drop_threshold)
                               ? predict(model, drop_bad_observations(seq, *drop_threshold), solver)
                               : predict(model, seq, solver);
    acc += nmse(pred, seq.target);
  }
  return acc / static_cast<double>(indices.size());
}

}  // namespace odernn
