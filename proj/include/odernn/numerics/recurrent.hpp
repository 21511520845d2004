#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "odernn/numerics/layers.hpp"

namespace odernn {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// LSTM cell without peepholes. Each gate acts on the concatenation [x; h].

struct LstmParams {
  LinearParams input_gate;
  LinearParams forget_gate;
  LinearParams output_gate;
  LinearParams candidate;

  LstmParams() = default;
  LstmParams(std::size_t input_dim, std::size_t hidden_dim)
      : input_gate(input_dim + hidden_dim, hidden_dim),
        forget_gate(input_dim + hidden_dim, hidden_dim),
        output_gate(input_dim + hidden_dim, hidden_dim),
        candidate(input_dim + hidden_dim, hidden_dim) {}

  std::size_t hidden_dim() const { return input_gate.out_dim(); }
  std::size_t input_dim() const { return input_gate.in_dim() - hidden_dim(); }

  friend bool operator==(const LstmParams&, const LstmParams&) = default;
};

template <class P, class Fn>
  requires std::same_as<std::remove_const_t<P>, LstmParams>
void visit_blocks(P& p, const std::string& prefix, Fn&& fn) {
  visit_blocks(p.input_gate, prefix + ".input_gate", fn);
  visit_blocks(p.forget_gate, prefix + ".forget_gate", fn);
  visit_blocks(p.output_gate, prefix + ".output_gate", fn);
  visit_blocks(p.candidate, prefix + ".candidate", fn);
}

inline LstmParams zeros_like(const LstmParams& p) { return LstmParams(p.input_dim(), p.hidden_dim()); }

// Forget-gate bias starts at 1.0.
inline void init_uniform(LstmParams& p, SeededRng& rng) {
  init_uniform(p.input_gate, rng);
  init_uniform(p.forget_gate, rng);
  init_uniform(p.output_gate, rng);
  init_uniform(p.candidate, rng);
  for (double& b : p.forget_gate.bias) b = 1.0;
}

struct LstmCache {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Vector concat;  // [x; h_prev]
  Vector c_prev;
  Vector i, f, o, g;
  Vector tanh_c;

  bool valid() const { return hidden_dim > 0; }
  std::size_t stored_floats() const { return concat.size() + c_prev.size() + 5 * hidden_dim; }
};

struct LstmOutput {
  Vector h;
  Vector c;
  LstmCache cache;
};

inline Vector concat(std::span<const double> a, std::span<const double> b) {
  Vector z;
  z.reserve(a.size() + b.size());
  z.insert(z.end(), a.begin(), a.end());
  z.insert(z.end(), b.begin(), b.end());
  return z;
}

inline LstmOutput lstm_cell_forward(const LstmParams& p, std::span<const double> x, std::span<const double> h,
                                    std::span<const double> c) {
  const std::size_t hd = p.hidden_dim();
  require(x.size() == p.input_dim(), [&] { return "lstm_cell_forward: input length " + std::to_string(x.size()) +
                                         " does not match input dim " + std::to_string(p.input_dim()); });
  require(h.size() == hd && c.size() == hd, [&] { return "lstm_cell_forward: state length does not match hidden dim " +
                                                std::to_string(hd); });
  LstmOutput out;
  LstmCache& k = out.cache;
  k.input_dim = x.size();
  k.hidden_dim = hd;
  k.concat = concat(x, h);
  k.c_prev.assign(c.begin(), c.end());
  k.i = linear_forward(p.input_gate, k.concat);
  k.f = linear_forward(p.forget_gate, k.concat);
  k.o = linear_forward(p.output_gate, k.concat);
  k.g = linear_forward(p.candidate, k.concat);
  out.c.resize(hd);
  out.h.resize(hd);
  k.tanh_c.resize(hd);
  for (std::size_t j = 0; j < hd; ++j) {
    k.i[j] = sigmoid(k.i[j]);
    k.f[j] = sigmoid(k.f[j]);
    k.o[j] = sigmoid(k.o[j]);
    k.g[j] = std::tanh(k.g[j]);
    out.c[j] = k.f[j] * c[j] + k.i[j] * k.g[j];
    k.tanh_c[j] = std::tanh(out.c[j]);
    out.h[j] = k.o[j] * k.tanh_c[j];
  }
  return out;
}

struct LstmGrads {
  Vector x_grad;
  Vector h_prev_grad;
  Vector c_prev_grad;
};

// Gradients of <h_grad, h_new> + <c_grad, c_new>. Parameter gradients accumulate into `grads`.
inline LstmGrads lstm_cell_backward(const LstmParams& p, const LstmCache& k, std::span<const double> h_grad,
                                    std::span<const double> c_grad, LstmParams& grads) {
  const std::size_t hd = p.hidden_dim();
  require(k.valid(), "lstm_cell_backward: empty cache");
  require(k.hidden_dim == hd && k.input_dim == p.input_dim() && k.concat.size() == k.input_dim + hd &&
              k.i.size() == hd && k.c_prev.size() == hd,
          "lstm_cell_backward: cache does not match cell dims");
  require(h_grad.size() == hd && c_grad.size() == hd, "lstm_cell_backward: cotangent length mismatch");

  Vector di(hd), df(hd), dout(hd), dg(hd);
  LstmGrads out;
  out.c_prev_grad.resize(hd);
  for (std::size_t j = 0; j < hd; ++j) {
    const double dtc = h_grad[j] * k.o[j];
    const double dc = c_grad[j] + dtc * (1.0 - k.tanh_c[j] * k.tanh_c[j]);
    dout[j] = h_grad[j] * k.tanh_c[j] * k.o[j] * (1.0 - k.o[j]);
    di[j] = dc * k.g[j] * k.i[j] * (1.0 - k.i[j]);
    df[j] = dc * k.c_prev[j] * k.f[j] * (1.0 - k.f[j]);
    dg[j] = dc * k.i[j] * (1.0 - k.g[j] * k.g[j]);
    out.c_prev_grad[j] = dc * k.f[j];
  }
  Vector dz(k.concat.size(), 0.0);
  auto gate = [&](const LinearParams& w, const Vector& d, LinearParams& gw) {
    add_outer(gw.weight, d, k.concat);
    for (std::size_t j = 0; j < hd; ++j) gw.bias[j] += d[j];
    add_transposed_product(w.weight, d, dz);
  };
  gate(p.input_gate, di, grads.input_gate);
  gate(p.forget_gate, df, grads.forget_gate);
  gate(p.output_gate, dout, grads.output_gate);
  gate(p.candidate, dg, grads.candidate);
  out.x_grad.assign(dz.begin(), dz.begin() + static_cast<std::ptrdiff_t>(k.input_dim));
  out.h_prev_grad.assign(dz.begin() + static_cast<std::ptrdiff_t>(k.input_dim), dz.end());
  return out;
}

// ---------------------------------------------------------------------------
// Vanilla (Elman) RNN cell: h' = tanh(W [x; h] + b).

struct RnnParams {
  LinearParams cell;
  std::size_t input = 0;

  RnnParams() = default;
  RnnParams(std::size_t input_dim, std::size_t hidden_dim) : cell(input_dim + hidden_dim, hidden_dim), input(input_dim) {}

  std::size_t hidden_dim() const { return cell.out_dim(); }
  std::size_t input_dim() const { return input; }

  friend bool operator==(const RnnParams&, const RnnParams&) = default;
};

template <class P, class Fn>
  requires std::same_as<std::remove_const_t<P>, RnnParams>
void visit_blocks(P& p, const std::string& prefix, Fn&& fn) {
  visit_blocks(p.cell, prefix + ".cell", fn);
}

inline RnnParams zeros_like(const RnnParams& p) { return RnnParams(p.input_dim(), p.hidden_dim()); }
inline void init_uniform(RnnParams& p, SeededRng& rng) { init_uniform(p.cell, rng); }

struct RnnCache {
  Vector concat;
  Vector h_new;
  bool valid() const { return !h_new.empty(); }
  std::size_t stored_floats() const { return concat.size() + h_new.size(); }
};

inline Vector rnn_cell_forward(const RnnParams& p, std::span<const double> x, std::span<const double> h,
                               RnnCache& cache) {
  require(x.size() == p.input_dim() && h.size() == p.hidden_dim(), "rnn_cell_forward: shape mismatch");
  cache.concat = concat(x, h);
  Vector z = linear_forward(p.cell, cache.concat);
  for (double& v : z) v = std::tanh(v);
  cache.h_new = z;
  return z;
}

struct RnnGrads {
  Vector x_grad;
  Vector h_prev_grad;
};

inline RnnGrads rnn_cell_backward(const RnnParams& p, const RnnCache& cache, std::span<const double> h_grad,
                                  RnnParams& grads) {
  require(cache.valid() && cache.h_new.size() == p.hidden_dim() &&
              cache.concat.size() == p.input_dim() + p.hidden_dim(),
          "rnn_cell_backward: cache does not match cell dims");
  require(h_grad.size() == p.hidden_dim(), "rnn_cell_backward: cotangent length mismatch");
  Vector d(h_grad.begin(), h_grad.end());
  for (std::size_t j = 0; j < d.size(); ++j) d[j] *= 1.0 - cache.h_new[j] * cache.h_new[j];
  Vector dz = linear_backward(p.cell, cache.concat, d, grads.cell, true);
  const auto split = static_cast<std::ptrdiff_t>(p.input_dim());
  return {Vector(dz.begin(), dz.begin() + split), Vector(dz.begin() + split, dz.end())};
}

}  // namespace odernn
