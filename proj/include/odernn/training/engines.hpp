#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "odernn/models/forward.hpp"

namespace odernn {

enum class GradientEngine { direct, adjoint, checkpoint_adjoint };

inline std::string to_string(GradientEngine e) {
  switch (e) {
    case GradientEngine::direct: return "direct";
    case GradientEngine::adjoint: return "adjoint";
    case GradientEngine::checkpoint_adjoint: return "checkpoint-adjoint";
  }
  return "?";
}

inline GradientEngine gradient_engine_from_string(const std::string& s) {
  if (s == "direct") return GradientEngine::direct;
  if (s == "adjoint") return GradientEngine::adjoint;
  if (s == "checkpoint-adjoint" || s == "checkpoint_adjoint" || s == "checkpoint") return GradientEngine::checkpoint_adjoint;
  throw InvalidArgument("unknown gradient engine '" + s + "' (expected direct, adjoint or checkpoint-adjoint)");
}

inline StepRecording recording_for(GradientEngine e) {
  switch (e) {
    case GradientEngine::direct: return StepRecording::stages;
    case GradientEngine::adjoint: return StepRecording::boundaries;
    case GradientEngine::checkpoint_adjoint: return StepRecording::checkpoints;
  }
  return StepRecording::checkpoints;
}

struct MseResult {
  double loss = 0.0;
  Vector cotangent;  // d loss / d pred
};

// (1/i) sum (y_m - y_hat_m)^2 over i spliced real entries.
inline MseResult mse_loss(std::span<const double> pred, std::span<const double> target) {
  require(pred.size() == target.size() && !pred.empty(), "mse_loss: length mismatch");
  const double inv = 1.0 / static_cast<double>(pred.size());
  MseResult r;
  r.cotangent.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double diff = pred[i] - target[i];
    r.loss += diff * diff;
    r.cotangent[i] = 2.0 * diff * inv;
  }
  r.loss *= inv;
  return r;
}

struct CsiMseResult {
  double loss = 0.0;
  CsiMatrix cotangent;
};

inline CsiMseResult mse_loss(const CsiMatrix& pred, const CsiMatrix& target) {
  require(pred.same_dims(target), "mse_loss: dims mismatch");
  MseResult r = mse_loss(csi_splice(pred), csi_splice(target));
  return {r.loss, csi_unsplice(r.cotangent, dims_of(pred))};
}

struct GradBundle {
  Model grads;
  double loss = 0.0;
};

// ---------------------------------------------------------------------------
// Reverse pass through one explicit RK step given its stage activations.
// Parameter gradients accumulate into `grads`; returns d/dh of the step input.

inline Vector rk_step_backward(const Tableau& tab, const MlpParams& f, const std::vector<MlpCache>& stages, double dt,
                               const Vector& out_grad, MlpParams& grads) {
  const std::size_t s = tab.stages();
  require(stages.size() == s, "rk_step_backward: stage count mismatch");
  std::vector<Vector> y_grad(s);
  Vector h_grad = out_grad;
  for (std::size_t i = s; i-- > 0;) {
    bool structural_zero = tab.b[i] == 0.0;
    for (std::size_t m = i + 1; m < s && structural_zero; ++m)
      if (tab.a[m].size() > i && tab.a[m][i] != 0.0) structural_zero = false;
    if (structural_zero) continue;
    Vector k_grad(out_grad.size(), 0.0);
    if (tab.b[i] != 0.0) axpy(dt * tab.b[i], out_grad.data(), k_grad.data(), k_grad.size());
    for (std::size_t m = i + 1; m < s; ++m) {
      if (tab.a[m].size() <= i || tab.a[m][i] == 0.0 || y_grad[m].empty()) continue;
      axpy(dt * tab.a[m][i], y_grad[m].data(), k_grad.data(), k_grad.size());
    }
    y_grad[i] = mlp_backward(f, stages[i], k_grad, grads);
    h_grad += y_grad[i];
  }
  return h_grad;
}

// Recomputes the stage activations of one accepted step from its checkpoint.
inline std::vector<MlpCache> recompute_stages(const Tableau& tab, const MlpParams& f, const Vector& h, double dt) {
  std::vector<MlpCache> caches;
  std::vector<Vector> k;
  caches.reserve(tab.stages());
  for (std::size_t i = 0; i < tab.stages(); ++i) {
    Vector y = stage_input(tab, i, h, dt, k);
    caches.push_back(mlp_forward_cached(f, y));
    k.push_back(caches.back().output);
  }
  return caches;
}

inline Vector segment_backward_direct(const MlpParams& f, const SegmentRecord& seg, const SolverConfig& solver,
                                      const Vector& end_grad, MlpParams& grads) {
  require(seg.stages.size() == seg.accepted, "direct_gradients: segment has no recorded stages");
  const Tableau& tab = tableau_for(solver.method);
  Vector g = end_grad;
  for (std::size_t s = seg.stages.size(); s-- > 0;) {
    const double dt = seg.steps.size() == seg.stages.size() ? seg.steps[s].dt : (seg.t1 - seg.t0) / seg.accepted;
    g = rk_step_backward(tab, f, seg.stages[s], dt, g, grads);
  }
  return g;
}

inline Vector segment_backward_checkpoint(const MlpParams& f, const SegmentRecord& seg, const SolverConfig& solver,
                                          const Vector& end_grad, MlpParams& grads) {
  require(seg.steps.size() == seg.accepted, "checkpoint_adjoint_gradients: segment has no step checkpoints");
  const Tableau& tab = tableau_for(solver.method);
  Vector g = end_grad;
  for (std::size_t s = seg.steps.size(); s-- > 0;) {
    const StepCheckpoint& cp = seg.steps[s];
    require(cp.state.size() == f.in_dim(), "checkpoint_adjoint_gradients: checkpoint does not match dynamics");
    const auto stages = recompute_stages(tab, f, cp.state, cp.dt);
    g = rk_step_backward(tab, f, stages, cp.dt, g, grads);
  }
  return g;
}

/// Continuous adjoint over one segment: integrates [h, a, g_theta] backward from
/// t1 to t0 with dh/dt = f(h), da/dt = -a^T df/dh, dg/dt = -a^T df/dtheta,
/// starting from the forward end state. Written in reversed time s = t1 - t so
/// the solver always runs forward.
inline Vector segment_backward_adjoint(const MlpParams& f, const Vector& h_end, double t0, double t1,
                                       const SolverConfig& solver, const Vector& end_grad, MlpParams& grads) {
  const std::size_t d = h_end.size();
  const std::size_t p = flat_size(f);
  Vector z(2 * d + p, 0.0);
  std::copy(h_end.begin(), h_end.end(), z.begin());
  std::copy(end_grad.begin(), end_grad.end(), z.begin() + static_cast<std::ptrdiff_t>(d));
  auto augmented = [&](const Vector& state, double) -> Vector {
    const std::span<const double> h(state.data(), d);
    const std::span<const double> a(state.data() + d, d);
    MlpCache cache = mlp_forward_cached(f, h);
    MlpParams pg = zeros_like(f);
    const Vector ha = mlp_backward(f, cache, a, pg);
    Vector out(2 * d + p);
    for (std::size_t i = 0; i < d; ++i) {
      out[i] = -cache.output[i];
      out[d + i] = ha[i];
    }
    std::size_t off = 2 * d;
    visit_blocks(pg, "", [&](const BlockRef& b) {
      std::copy(b.values.begin(), b.values.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
      off += b.values.size();
    });
    return out;
  };
  const IntegrationResult r = integrate(augmented, z, 0.0, t1 - t0, solver);
  add_flat(grads, std::span<const double>(r.state.data() + 2 * d, p));
  return Vector(r.state.begin() + static_cast<std::ptrdiff_t>(d), r.state.begin() + static_cast<std::ptrdiff_t>(2 * d));
}

namespace detail {

inline void mark_consumed(ForwardCache& cache) {
  require(!cache.consumed, "backward: forward cache was already consumed");
  cache.consumed = true;
}

template <class SegmentBackward>
void ode_rnn_backward(const OdeRnnModel& m, const ForwardCache& c, const Vector& y_grad, OdeRnnModel& g,
                      SegmentBackward&& seg_back) {
  require(c.lstm.size() == c.inputs.size() && c.segments.size() == c.inputs.size(),
          "ode_rnn backward: cache does not match the model");
  Vector h_grad = linear_backward(m.decoder, c.decoder_input, y_grad, g.decoder);
  h_grad = seg_back(m.dynamics, c.segments.back(), h_grad, g.dynamics, c.segments.size() - 1);
  Vector c_grad(m.shape.hidden, 0.0);
  for (std::size_t i = c.inputs.size(); i-- > 0;) {
    LstmGrads lg = lstm_cell_backward(m.lstm, c.lstm[i], h_grad, c_grad, g.lstm);
    linear_backward(m.encoder, c.inputs[i], lg.x_grad, g.encoder, false);
    h_grad = std::move(lg.h_prev_grad);
    c_grad = std::move(lg.c_prev_grad);
    if (i > 0) h_grad = seg_back(m.dynamics, c.segments[i - 1], h_grad, g.dynamics, i - 1);
  }
}

template <class SegmentBackward>
void neural_ode_backward(const NeuralOdeModel& m, const ForwardCache& c, const Vector& y_grad, NeuralOdeModel& g,
                         SegmentBackward&& seg_back) {
  require(c.segments.size() == 1 && c.inputs.size() == 1, "neural_ode backward: cache does not match the model");
  Vector h_grad = linear_backward(m.decoder, c.decoder_input, y_grad, g.decoder);
  h_grad = seg_back(m.dynamics, c.segments.front(), h_grad, g.dynamics, 0);
  linear_backward(m.encoder, c.inputs.front(), h_grad, g.encoder, false);
}

inline void recurrent_backward(const RecurrentBaseline& m, const ForwardCache& c, const Vector& y_grad,
                               RecurrentBaseline& g) {
  Vector h_grad = linear_backward(m.decoder, c.decoder_input, y_grad, g.decoder);
  if (m.cell == CellType::lstm) {
    require(c.lstm.size() == c.inputs.size(), "recurrent backward: cache does not match the model");
    Vector c_grad(m.shape.hidden, 0.0);
    for (std::size_t i = c.inputs.size(); i-- > 0;) {
      LstmGrads lg = lstm_cell_backward(m.lstm, c.lstm[i], h_grad, c_grad, g.lstm);
      linear_backward(m.encoder, c.inputs[i], lg.x_grad, g.encoder, false);
      h_grad = std::move(lg.h_prev_grad);
      c_grad = std::move(lg.c_prev_grad);
    }
  } else {
    require(c.rnn.size() == c.inputs.size(), "recurrent backward: cache does not match the model");
    for (std::size_t i = c.inputs.size(); i-- > 0;) {
      RnnGrads rg = rnn_cell_backward(m.rnn, c.rnn[i], h_grad, g.rnn);
      linear_backward(m.encoder, c.inputs[i], rg.x_grad, g.encoder, false);
      h_grad = std::move(rg.h_prev_grad);
    }
  }
}

template <class SegmentBackward>
void model_backward(const Model& m, const ForwardCache& c, const Vector& y_grad, Model& g, SegmentBackward&& seg_back) {
  require(c.kind == kind_of(m) && kind_of(g) == kind_of(m), "backward: cache/model kind mismatch");
  require(y_grad.size() == shape_of(m).dims.spliced(), "backward: cotangent length mismatch");
  if (auto* om = std::get_if<OdeRnnModel>(&m)) {
    ode_rnn_backward(*om, c, y_grad, std::get<OdeRnnModel>(g), seg_back);
  } else if (auto* nm = std::get_if<NeuralOdeModel>(&m)) {
    neural_ode_backward(*nm, c, y_grad, std::get<NeuralOdeModel>(g), seg_back);
  } else {
    recurrent_backward(std::get<RecurrentBaseline>(m), c, y_grad, std::get<RecurrentBaseline>(g));
  }
}

// Cotangent w.r.t. the prediction -> cotangent w.r.t. the decoder output.
inline Vector output_cotangent(const ForwardCache& c, const CsiMatrix& pred_grad) {
  Vector y = csi_splice(pred_grad);
  if (c.scale != 1.0)
    for (double& v : y) v *= c.scale;
  return y;
}

}  // namespace detail

/// Backward pass for the given engine, accumulating into `grads`.
/// `y_grad` is the cotangent of the decoder output (normalized units).
inline void accumulate_gradients(const Model& m, ForwardCache& cache, const Vector& y_grad, GradientEngine engine,
                                 Model& grads) {
  const bool has_ode = uses_timestamps(cache.kind);
  switch (engine) {
    case GradientEngine::direct:
      if (has_ode) {
        if (!cache.solver.fixed_step())
          throw InvalidArgument("direct_gradients: adaptive-solver caches are not supported; use a fixed-step solver");
        require(cache.stages_recorded, "direct_gradients: forward pass did not record solver stages");
      }
      detail::mark_consumed(cache);
      detail::model_backward(m, cache, y_grad, grads,
                             [&](const MlpParams& f, const SegmentRecord& seg, const Vector& g, MlpParams& fg,
                                 std::size_t) { return segment_backward_direct(f, seg, cache.solver, g, fg); });
      return;
    case GradientEngine::checkpoint_adjoint:
      if (has_ode)
        require(cache.recording != StepRecording::boundaries,
                "checkpoint_adjoint_gradients: forward pass did not store step checkpoints");
      detail::mark_consumed(cache);
      detail::model_backward(m, cache, y_grad, grads,
                             [&](const MlpParams& f, const SegmentRecord& seg, const Vector& g, MlpParams& fg,
                                 std::size_t) { return segment_backward_checkpoint(f, seg, cache.solver, g, fg); });
      return;
    case GradientEngine::adjoint:
      detail::mark_consumed(cache);
      detail::model_backward(
          m, cache, y_grad, grads,
          [&](const MlpParams& f, const SegmentRecord& seg, const Vector& g, MlpParams& fg, std::size_t index) {
            try {
              return segment_backward_adjoint(f, seg.end, seg.t0, seg.t1, cache.solver, g, fg);
            } catch (const NumericError& e) {
              throw NumericError("adjoint_gradients: backward integration failed on segment " +
                                 std::to_string(index) + ": " + e.what());
            }
          });
      return;
  }
}

inline GradBundle gradients(const Model& m, ForwardCache& cache, const CsiMatrix& pred_grad, GradientEngine engine) {
  GradBundle b{zeros_like(m), 0.0};
  accumulate_gradients(m, cache, detail::output_cotangent(cache, pred_grad), engine, b.grads);
  return b;
}

inline GradBundle direct_gradients(const Model& m, ForwardCache& cache, const CsiMatrix& pred_grad) {
  return gradients(m, cache, pred_grad, GradientEngine::direct);
}
inline GradBundle adjoint_gradients(const Model& m, ForwardCache& cache, const CsiMatrix& pred_grad) {
  return gradients(m, cache, pred_grad, GradientEngine::adjoint);
}
inline GradBundle checkpoint_adjoint_gradients(const Model& m, ForwardCache& cache, const CsiMatrix& pred_grad) {
  return gradients(m, cache, pred_grad, GradientEngine::checkpoint_adjoint);
}

}  // namespace odernn
