#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "odernn/channel/channel.hpp"
#include "odernn/numerics/layers.hpp"
#include "odernn/numerics/recurrent.hpp"

namespace odernn {

struct CsiDims {
  std::size_t n_t = 8;
  std::size_t n_c = 16;
  std::size_t spliced() const { return 2 * n_t * n_c; }
  friend bool operator==(const CsiDims&, const CsiDims&) = default;
};

inline CsiDims dims_of(const CsiMatrix& h) { return {h.n_t(), h.n_c()}; }

// Real parts (antenna-major) followed by imaginary parts.
inline Vector csi_splice(const CsiMatrix& h) {
  Vector v;
  v.reserve(2 * h.re.size());
  v.insert(v.end(), h.re.data.begin(), h.re.data.end());
  v.insert(v.end(), h.im.data.begin(), h.im.data.end());
  return v;
}

inline CsiMatrix csi_unsplice(std::span<const double> v, CsiDims dims) {
  require(v.size() == dims.spliced(), [&] { return "csi_unsplice: length " + std::to_string(v.size()) + " does not match 2x" +
                                          std::to_string(dims.n_t) + "x" + std::to_string(dims.n_c); });
  CsiMatrix h(dims.n_t, dims.n_c);
  const std::size_t half = dims.n_t * dims.n_c;
  std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(half), h.re.data.begin());
  std::copy(v.begin() + static_cast<std::ptrdiff_t>(half), v.end(), h.im.data.begin());
  return h;
}

enum class ModelKind { ode_rnn, neural_ode, rnn, lstm };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::ode_rnn: return "ode-rnn";
    case ModelKind::neural_ode: return "neural-ode";
    case ModelKind::rnn: return "rnn";
    case ModelKind::lstm: return "lstm";
  }
  return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "ode-rnn" || s == "odernn" || s == "ode_rnn") return ModelKind::ode_rnn;
  if (s == "neural-ode" || s == "neural_ode" || s == "node") return ModelKind::neural_ode;
  if (s == "rnn") return ModelKind::rnn;
  if (s == "lstm") return ModelKind::lstm;
  throw InvalidArgument("unknown model '" + s + "' (expected ode-rnn, neural-ode, rnn or lstm)");
}

// Models whose forward pass can consume irregular timestamps.
inline bool uses_timestamps(ModelKind k) { return k == ModelKind::ode_rnn || k == ModelKind::neural_ode; }

struct ModelConfig {
  ModelKind kind = ModelKind::ode_rnn;
  std::size_t hidden = 64;
  std::vector<std::size_t> dynamics_hidden{96, 128, 96};
  double time_scale = 1e-3;  // seconds per unit of solver time
  bool normalize = true;     // divide inputs by the observation RMS, rescale the prediction

  void validate() const {
    require(hidden >= 1, "model.hidden must be >= 1");
    require(time_scale > 0.0, "model.time_scale must be > 0");
    for (auto d : dynamics_hidden) require(d >= 1, "model.dynamics_hidden entries must be >= 1");
  }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ModelShape {
  CsiDims dims;
  std::size_t hidden = 0;
  double time_scale = 1e-3;
  bool normalize = true;
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Encoder -> LSTM at each observation, learned ODE between observations, decoder.
struct OdeRnnModel {
  ModelShape shape;
  LinearParams encoder;
  LstmParams lstm;
  MlpParams dynamics;
  LinearParams decoder;
  friend bool operator==(const OdeRnnModel&, const OdeRnnModel&) = default;
};

// Encoder on the first observation, learned ODE over the whole span, decoder.
struct NeuralOdeModel {
  ModelShape shape;
  LinearParams encoder;
  MlpParams dynamics;
  LinearParams decoder;
  friend bool operator==(const NeuralOdeModel&, const NeuralOdeModel&) = default;
};

enum class CellType { rnn, lstm };

// Discrete unroll; hidden state is constant between observations.
struct RecurrentBaseline {
  ModelShape shape;
  CellType cell = CellType::lstm;
  LinearParams encoder;
  LstmParams lstm;  // used when cell == lstm
  RnnParams rnn;    // used when cell == rnn
  LinearParams decoder;
  friend bool operator==(const RecurrentBaseline&, const RecurrentBaseline&) = default;
};

using Model = std::variant<OdeRnnModel, NeuralOdeModel, RecurrentBaseline>;

template <class P, class Fn>
  requires std::same_as<std::remove_const_t<P>, OdeRnnModel>
void visit_blocks(P& m, const std::string& prefix, Fn&& fn) {
  visit_blocks(m.encoder, prefix + "encoder", fn);
  visit_blocks(m.lstm, prefix + "lstm", fn);
  visit_blocks(m.dynamics, prefix + "dynamics", fn);
  visit_blocks(m.decoder, prefix + "decoder", fn);
}

template <class P, class Fn>
  requires std::same_as<std::remove_const_t<P>, NeuralOdeModel>
void visit_blocks(P& m, const std::string& prefix, Fn&& fn) {
  visit_blocks(m.encoder, prefix + "encoder", fn);
  visit_blocks(m.dynamics, prefix + "dynamics", fn);
  visit_blocks(m.decoder, prefix + "decoder", fn);
}

template <class P, class Fn>
  requires std::same_as<std::remove_const_t<P>, RecurrentBaseline>
void visit_blocks(P& m, const std::string& prefix, Fn&& fn) {
  visit_blocks(m.encoder, prefix + "encoder", fn);
  if (m.cell == CellType::lstm)
    visit_blocks(m.lstm, prefix + "lstm", fn);
  else
    visit_blocks(m.rnn, prefix + "rnn", fn);
  visit_blocks(m.decoder, prefix + "decoder", fn);
}

template <class P, class Fn>
  requires std::same_as<std::remove_const_t<P>, Model>
void visit_blocks(P& m, const std::string& prefix, Fn&& fn) {
  std::visit([&](auto& inner) { visit_blocks(inner, prefix, fn); }, m);
}

inline ModelKind kind_of(const Model& m) {
  if (std::holds_alternative<OdeRnnModel>(m)) return ModelKind::ode_rnn;
  if (std::holds_alternative<NeuralOdeModel>(m)) return ModelKind::neural_ode;
  return std::get<RecurrentBaseline>(m).cell == CellType::lstm ? ModelKind::lstm : ModelKind::rnn;
}

inline const ModelShape& shape_of(const Model& m) {
  return std::visit([](const auto& inner) -> const ModelShape& { return inner.shape; }, m);
}

inline std::vector<std::size_t> dynamics_dims(std::size_t hidden, const std::vector<std::size_t>& inner) {
  std::vector<std::size_t> d{hidden};
  d.insert(d.end(), inner.begin(), inner.end());
  d.push_back(hidden);
  return d;
}

// Zero-initialized model with the configured architecture.
inline Model make_model_zero(const ModelConfig& cfg, CsiDims dims) {
  cfg.validate();
  const ModelShape shape{dims, cfg.hidden, cfg.time_scale, cfg.normalize};
  const std::size_t io = dims.spliced();
  const std::size_t d = cfg.hidden;
  switch (cfg.kind) {
    case ModelKind::ode_rnn:
      return OdeRnnModel{shape, LinearParams(io, d), LstmParams(d, d), MlpParams(dynamics_dims(d, cfg.dynamics_hidden)),
                         LinearParams(d, io)};
    case ModelKind::neural_ode:
      return NeuralOdeModel{shape, LinearParams(io, d), MlpParams(dynamics_dims(d, cfg.dynamics_hidden)),
                            LinearParams(d, io)};
    case ModelKind::lstm:
      return RecurrentBaseline{shape, CellType::lstm, LinearParams(io, d), LstmParams(d, d), RnnParams(),
                               LinearParams(d, io)};
    case ModelKind::rnn:
      return RecurrentBaseline{shape, CellType::rnn, LinearParams(io, d), LstmParams(), RnnParams(d, d),
                               LinearParams(d, io)};
  }
  throw InvalidArgument("make_model: unknown kind");
}

inline void init_uniform(OdeRnnModel& m, SeededRng& rng) {
  init_uniform(m.encoder, rng);
  init_uniform(m.lstm, rng);
  init_uniform(m.dynamics, rng);
  init_uniform(m.decoder, rng);
}
inline void init_uniform(NeuralOdeModel& m, SeededRng& rng) {
  init_uniform(m.encoder, rng);
  init_uniform(m.dynamics, rng);
  init_uniform(m.decoder, rng);
}
inline void init_uniform(RecurrentBaseline& m, SeededRng& rng) {
  init_uniform(m.encoder, rng);
  if (m.cell == CellType::lstm)
    init_uniform(m.lstm, rng);
  else
    init_uniform(m.rnn, rng);
  init_uniform(m.decoder, rng);
}

inline Model make_model(const ModelConfig& cfg, CsiDims dims, std::uint64_t seed) {
  Model m = make_model_zero(cfg, dims);
  SeededRng rng(seed);
  std::visit([&](auto& inner) { init_uniform(inner, rng); }, m);
  return m;
}

// Same architecture and metadata, all parameters zero.
inline Model zeros_like(const Model& m) {
  Model z = m;
  visit_blocks(z, "", [](const BlockRef& b) { std::fill(b.values.begin(), b.values.end(), 0.0); });
  return z;
}

inline std::size_t parameter_count(const Model& m) { return flat_size(m); }

// Weight-sharing LSTM baseline built from an ODE-RNN's encoder, cell and decoder.
inline RecurrentBaseline lstm_baseline_from(const OdeRnnModel& m) {
  return RecurrentBaseline{m.shape, CellType::lstm, m.encoder, m.lstm, RnnParams(), m.decoder};
}

}  // namespace odernn
