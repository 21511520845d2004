#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "odernn/channel/sequence.hpp"
#include "odernn/models/models.hpp"
#include "odernn/odesolve.hpp"

namespace odernn {

// How much of each ODE segment the forward pass keeps for the backward pass.
enum class StepRecording {
  boundaries,   // segment start/end states only (continuous adjoint)
  checkpoints,  // plus (t, dt, h) of every accepted step (checkpointed adjoint)
  stages,       // plus every stage's network activations (direct backprop, fixed-step only)
};

struct StepCheckpoint {
  double t = 0.0;
  double dt = 0.0;
  Vector state;
};

struct SegmentRecord {
  double t0 = 0.0;  // solver time
  double t1 = 0.0;
  Vector start;
  Vector end;
  std::vector<StepCheckpoint> steps;
  std::vector<std::vector<MlpCache>> stages;  // [step][stage], only with StepRecording::stages
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t evaluations = 0;
};

struct ForwardCache {
  ModelKind kind = ModelKind::ode_rnn;
  SolverConfig solver;
  StepRecording recording = StepRecording::checkpoints;
  bool stages_recorded = false;
  double scale = 1.0;
  std::vector<Vector> inputs;  // encoder inputs (normalized, spliced observations)
  std::vector<LstmCache> lstm;
  std::vector<RnnCache> rnn;
  std::vector<SegmentRecord> segments;
  Vector decoder_input;
  Vector output;  // decoder output, normalized units
  bool consumed = false;

  // Floats retained for ODE-segment backward passes.
  std::size_t stored_segment_floats() const {
    std::size_t n = 0;
    for (const auto& s : segments) {
      for (const auto& c : s.steps) n += c.state.size() + 2;
      for (const auto& step : s.stages)
        for (const auto& st : step) n += st.stored_floats();
    }
    return n;
  }
  std::size_t accepted_steps() const {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.accepted;
    return n;
  }
};

struct Prediction {
  CsiMatrix csi;
  ForwardCache cache;
};

// Solver-time stamps: (t - t_1) / time_scale.
inline std::vector<double> solver_times(const CsiSequence& seq, double time_scale) {
  std::vector<double> out(seq.times.size());
  for (std::size_t i = 0; i < seq.times.size(); ++i) out[i] = (seq.times[i] - seq.times.front()) / time_scale;
  return out;
}

// RMS of all observed entries; 1 when normalization is off or the observations vanish.
inline double observation_scale(const CsiSequence& seq, bool normalize) {
  if (!normalize) return 1.0;
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& h : seq.observations) {
    acc += squared_frobenius(h);
    n += 2 * h.re.size();
  }
  const double rms = std::sqrt(acc / static_cast<double>(n));
  return rms > 0.0 && std::isfinite(rms) ? rms : 1.0;
}

inline void check_sequence(const CsiSequence& seq, const ModelShape& shape) {
  require(!seq.observations.empty(), "forward: sequence needs at least one observation");
  require(seq.times.size() == seq.observations.size() + 1, [&] { return "forward: expected n + 1 timestamps"; });
  for (std::size_t i = 1; i < seq.times.size(); ++i)
    require(seq.times[i] >= seq.times[i - 1], "forward: timestamps must be nondecreasing");
  for (const auto& h : seq.observations)
    require(dims_of(h) == shape.dims, [&] { return "forward: observation dims " + shape_str(h.n_t(), h.n_c()) +
                                          " do not match model dims " + shape_str(shape.dims.n_t, shape.dims.n_c); });
}

// Integrates the learned dynamics over one segment, keeping what `mode` asks for.
inline SegmentRecord integrate_segment(const MlpParams& dynamics, const Vector& h0, double t0, double t1,
                                       const SolverConfig& solver, StepRecording mode) {
  SegmentRecord seg;
  seg.t0 = t0;
  seg.t1 = t1;
  seg.start = h0;
  const bool keep_stages = mode == StepRecording::stages && solver.fixed_step();
  std::vector<MlpCache> caches;
  auto f = [&](const Vector& y, double) -> Vector {
    if (keep_stages) {
      caches.push_back(mlp_forward_cached(dynamics, y));
      return caches.back().output;
    }
    return mlp_forward(dynamics, y);
  };
  IntegrationResult r = integrate(f, h0, t0, t1, solver);
  const Trajectory& tr = r.trajectory;
  seg.accepted = tr.accepted();
  seg.rejected = tr.rejected;
  seg.evaluations = tr.evaluations;
  if (mode != StepRecording::boundaries) {
    for (std::size_t s = 0; s < tr.accepted(); ++s) seg.steps.push_back({tr.times[s], tr.steps[s], tr.states[s]});
  }
  if (keep_stages) {
    const std::size_t n_stage = tableau_for(solver.method).stages();
    seg.stages.resize(tr.accepted());
    for (std::size_t s = 0; s < tr.accepted(); ++s)
      for (std::size_t k = 0; k < n_stage; ++k) seg.stages[s].push_back(std::move(caches[s * n_stage + k]));
  }
  seg.end = std::move(r.state);
  return seg;
}

namespace detail {

inline Vector encoder_input(const CsiMatrix& h, double scale) {
  Vector x = csi_splice(h);
  if (scale != 1.0)
    for (double& v : x) v /= scale;
  return x;
}

inline CsiMatrix decode_output(const Vector& y, const ModelShape& shape, double scale) {
  CsiMatrix out = csi_unsplice(y, shape.dims);
  if (scale != 1.0) {
    for (double& v : out.re.data) v *= scale;
    for (double& v : out.im.data) v *= scale;
  }
  return out;
}

inline void rethrow_with_context(const std::exception& e, const std::string& where) {
  if (dynamic_cast<const DivergenceError*>(&e)) throw DivergenceError(where + ": " + e.what());
  if (dynamic_cast<const NumericError*>(&e)) throw NumericError(where + ": " + e.what());
  throw;
}

}  // namespace detail

/// h, c <- 0; for each observation i: h <- ODE(h) over [t_{i-1}, t_i] (i > 1),
/// (h, c) <- LSTM(encoder(x_i), h, c); then h <- ODE(h) over [t_n, t_{n+1}]
/// and the prediction is decoder(h). The cell state is held across gaps.
inline Prediction ode_rnn_forward(const OdeRnnModel& m, const CsiSequence& seq, const SolverConfig& solver,
                                  StepRecording mode = StepRecording::checkpoints) {
  check_sequence(seq, m.shape);
  ForwardCache cache;
  cache.kind = ModelKind::ode_rnn;
  cache.solver = solver;
  cache.recording = mode;
  cache.stages_recorded = mode == StepRecording::stages && solver.fixed_step();
  cache.scale = observation_scale(seq, m.shape.normalize);
  const auto times = solver_times(seq, m.shape.time_scale);
  const std::size_t d = m.shape.hidden;
  Vector h(d, 0.0), c(d, 0.0);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i > 0) {
      try {
        cache.segments.push_back(integrate_segment(m.dynamics, h, times[i - 1], times[i], solver, mode));
      } catch (const std::exception& e) {
        detail::rethrow_with_context(e, "ode_rnn_forward segment " + std::to_string(i));
      }
      h = cache.segments.back().end;
    }
    cache.inputs.push_back(detail::encoder_input(seq.observations[i], cache.scale));
    const Vector e = linear_forward(m.encoder, cache.inputs.back());
    LstmOutput o = lstm_cell_forward(m.lstm, e, h, c);
    h = std::move(o.h);
    c = std::move(o.c);
    cache.lstm.push_back(std::move(o.cache));
  }
  try {
    cache.segments.push_back(integrate_segment(m.dynamics, h, times[seq.size() - 1], times.back(), solver, mode));
  } catch (const std::exception& e) {
    detail::rethrow_with_context(e, "ode_rnn_forward final segment");
  }
  cache.decoder_input = cache.segments.back().end;
  cache.output = linear_forward(m.decoder, cache.decoder_input);
  CsiMatrix pred = detail::decode_output(cache.output, m.shape, cache.scale);
  return {std::move(pred), std::move(cache)};
}

/// h <- encoder(x_1); h <- ODE(h) over [t_1, t_{n+1}]; prediction = decoder(h).
/// Later observations only contribute through the normalization scale.
inline Prediction neural_ode_forward(const NeuralOdeModel& m, const CsiSequence& seq, const SolverConfig& solver,
                                     StepRecording mode = StepRecording::checkpoints) {
  check_sequence(seq, m.shape);
  ForwardCache cache;
  cache.kind = ModelKind::neural_ode;
  cache.solver = solver;
  cache.recording = mode;
  cache.stages_recorded = mode == StepRecording::stages && solver.fixed_step();
  // Scale from the first observation only, so later observations cannot leak in.
  CsiSequence first{{seq.times.front(), seq.times.back()}, {seq.observations.front()}, seq.target, {0.0}};
  cache.scale = observation_scale(first, m.shape.normalize);
  const auto times = solver_times(seq, m.shape.time_scale);
  cache.inputs.push_back(detail::encoder_input(seq.observations.front(), cache.scale));
  const Vector h0 = linear_forward(m.encoder, cache.inputs.back());
  try {
    cache.segments.push_back(integrate_segment(m.dynamics, h0, times.front(), times.back(), solver, mode));
  } catch (const std::exception& e) {
    detail::rethrow_with_context(e, "neural_ode_forward");
  }
  cache.decoder_input = cache.segments.back().end;
  cache.output = linear_forward(m.decoder, cache.decoder_input);
  CsiMatrix pred = detail::decode_output(cache.output, m.shape, cache.scale);
  return {std::move(pred), std::move(cache)};
}

/// Standard unroll over the encoded observations; timestamps are ignored.
inline Prediction recurrent_forward(const RecurrentBaseline& m, const CsiSequence& seq) {
  require(!seq.observations.empty(), "recurrent_forward: sequence needs at least one observation");
  for (const auto& h : seq.observations)
    require(dims_of(h) == m.shape.dims, "recurrent_forward: observation dims do not match model dims");
  ForwardCache cache;
  cache.kind = m.cell == CellType::lstm ? ModelKind::lstm : ModelKind::rnn;
  cache.scale = observation_scale(seq, m.shape.normalize);
  const std::size_t d = m.shape.hidden;
  Vector h(d, 0.0), c(d, 0.0);
  for (const auto& obs : seq.observations) {
    cache.inputs.push_back(detail::encoder_input(obs, cache.scale));
    const Vector e = linear_forward(m.encoder, cache.inputs.back());
    if (m.cell == CellType::lstm) {
      LstmOutput o = lstm_cell_forward(m.lstm, e, h, c);
      h = std::move(o.h);
      c = std::move(o.c);
      cache.lstm.push_back(std::move(o.cache));
    } else {
      RnnCache rc;
      h = rnn_cell_forward(m.rnn, e, h, rc);
      cache.rnn.push_back(std::move(rc));
    }
  }
  cache.decoder_input = h;
  cache.output = linear_forward(m.decoder, cache.decoder_input);
  CsiMatrix pred = detail::decode_output(cache.output, m.shape, cache.scale);
  return {std::move(pred), std::move(cache)};
}

inline Prediction forward(const Model& m, const CsiSequence& seq, const SolverConfig& solver,
                          StepRecording mode = StepRecording::checkpoints) {
  return std::visit(
      [&](const auto& inner) -> Prediction {
        using T = std::decay_t<decltype(inner)>;
        if constexpr (std::is_same_v<T, OdeRnnModel>) return ode_rnn_forward(inner, seq, solver, mode);
        else if constexpr (std::is_same_v<T, NeuralOdeModel>) return neural_ode_forward(inner, seq, solver, mode);
        else return recurrent_forward(inner, seq);
      },
      m);
}

inline CsiMatrix predict(const Model& m, const CsiSequence& seq, const SolverConfig& solver) {
  return forward(m, seq, solver, StepRecording::boundaries).csi;
}

}  // namespace odernn
