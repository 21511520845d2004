#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "odernn/numerics/matrix.hpp"
#include "odernn/numerics/rng.hpp"

namespace odernn {

// Named view of one parameter tensor. Biases are reported as (n x 1).
template <class T>
struct BasicBlockRef {
  std::string name;
  std::span<T> values;
  std::size_t rows;
  std::size_t cols;
};
using BlockRef = BasicBlockRef<double>;
using ConstBlockRef = BasicBlockRef<const double>;

template <class P>
using block_ref_for = BasicBlockRef<std::conditional_t<std::is_const_v<P>, const double, double>>;

// ---------------------------------------------------------------------------
// Linear layer

struct LinearParams {
  Matrix weight;  // out x in
  Vector bias;    // out

  LinearParams() = default;
  LinearParams(std::size_t in, std::size_t out) : weight(out, in), bias(out, 0.0) {}

  std::size_t in_dim() const { return weight.cols; }
  std::size_t out_dim() const { return weight.rows; }

  friend bool operator==(const LinearParams&, const LinearParams&) = default;
};

template <class P, class Fn>
  requires std::same_as<std::remove_const_t<P>, LinearParams>
void visit_blocks(P& p, const std::string& prefix, Fn&& fn) {
  fn(block_ref_for<P>{prefix + ".weight", std::span(p.weight.data), p.weight.rows, p.weight.cols});
  fn(block_ref_for<P>{prefix + ".bias", std::span(p.bias), p.bias.size(), 1});
}

// uniform(-s, s), s = 1/sqrt(fan_in), weights first then bias.
inline void init_uniform(LinearParams& p, SeededRng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(p.in_dim()));
  for (double& w : p.weight.data) w = rng.uniform(-s, s);
  for (double& b : p.bias) b = rng.uniform(-s, s);
}

inline Vector linear_forward(const LinearParams& p, std::span<const double> x) {
  return affine(p.weight, x, p.bias);
}

// Accumulates parameter gradients into `grads` and returns the input gradient.
inline Vector linear_backward(const LinearParams& p, std::span<const double> x, std::span<const double> out_grad,
                              LinearParams& grads, bool need_input_grad = true) {
  require(out_grad.size() == p.out_dim(), "linear_backward: cotangent length mismatch");
  add_outer(grads.weight, out_grad, x);
  for (std::size_t i = 0; i < out_grad.size(); ++i) grads.bias[i] += out_grad[i];
  Vector x_grad;
  if (need_input_grad) {
    x_grad.assign(p.in_dim(), 0.0);
    add_transposed_product(p.weight, out_grad, x_grad);
  }
  return x_grad;
}

// ---------------------------------------------------------------------------
// Tanh MLP: tanh on hidden layers, identity on the output layer.

struct MlpParams {
  std::vector<LinearParams> layers;

  MlpParams() = default;
  explicit MlpParams(const std::vector<std::size_t>& dims) {
    require(dims.size() >= 2, "MlpParams: need at least input and output dims");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) layers.emplace_back(dims[i], dims[i + 1]);
  }

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> d{in_dim()};
    for (const auto& l : layers) d.push_back(l.out_dim());
    return d;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

template <class P, class Fn>
  requires std::same_as<std::remove_const_t<P>, MlpParams>
void visit_blocks(P& p, const std::string& prefix, Fn&& fn) {
  for (std::size_t i = 0; i < p.layers.size(); ++i) visit_blocks(p.layers[i], prefix + "." + std::to_string(i), fn);
}

inline void init_uniform(MlpParams& p, SeededRng& rng) {
  for (auto& l : p.layers) init_uniform(l, rng);
}

// inputs[i] is the input of layer i (inputs[0] = x); output is the final layer's value.
struct MlpCache {
  std::vector<Vector> inputs;
  Vector output;

  std::size_t stored_floats() const {
    std::size_t n = output.size();
    for (const auto& v : inputs) n += v.size();
    return n;
  }
};

inline void check_input(const MlpParams& p, std::span<const double> x) {
  require(!p.layers.empty(), "mlp: no layers");
  require(x.size() == p.in_dim(), [&] { return "mlp: input length " + std::to_string(x.size()) + " does not match input dim " +
                                      std::to_string(p.in_dim()); });
}

inline MlpCache mlp_forward_cached(const MlpParams& p, std::span<const double> x) {
  check_input(p, x);
  MlpCache cache;
  cache.inputs.reserve(p.layers.size());
  cache.inputs.emplace_back(x.begin(), x.end());
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    Vector z = linear_forward(p.layers[i], cache.inputs.back());
    if (i + 1 == p.layers.size()) {
      cache.output = std::move(z);
    } else {
      for (double& v : z) v = std::tanh(v);
      cache.inputs.push_back(std::move(z));
    }
  }
  return cache;
}

inline Vector mlp_forward(const MlpParams& p, std::span<const double> x) {
  check_input(p, x);
  Vector a(x.begin(), x.end());
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    Vector z = linear_forward(p.layers[i], a);
    if (i + 1 < p.layers.size())
      for (double& v : z) v = std::tanh(v);
    a = std::move(z);
  }
  return a;
}

// Backward through a recorded forward pass. Parameter gradients accumulate.
inline Vector mlp_backward(const MlpParams& p, const MlpCache& cache, std::span<const double> cotangent,
                           MlpParams& grads) {
  require(cotangent.size() == p.out_dim(), [&] { return "mlp_vjp: cotangent length " + std::to_string(cotangent.size()) +
                                               " does not match output dim " + std::to_string(p.out_dim()); });
  require(cache.inputs.size() == p.layers.size(), "mlp_vjp: cache does not match network depth");
  Vector g(cotangent.begin(), cotangent.end());
  for (std::size_t i = p.layers.size(); i-- > 0;) {
    if (i + 1 < p.layers.size()) {
      const Vector& act = cache.inputs[i + 1];
      for (std::size_t k = 0; k < g.size(); ++k) g[k] *= 1.0 - act[k] * act[k];
    }
    g = linear_backward(p.layers[i], cache.inputs[i], g, grads.layers[i], true);
  }
  return g;
}

inline MlpParams zeros_like(const MlpParams& p) { return MlpParams(p.dims()); }
inline LinearParams zeros_like(const LinearParams& p) { return LinearParams(p.in_dim(), p.out_dim()); }

struct MlpVjp {
  Vector x_grad;
  MlpParams param_grads;
};

// Exact vector-Jacobian product of <cotangent, f(x)> w.r.t. x and the parameters.
inline MlpVjp mlp_vjp(const MlpParams& p, std::span<const double> x, std::span<const double> cotangent) {
  MlpCache cache = mlp_forward_cached(p, x);
  MlpVjp out{{}, zeros_like(p)};
  out.x_grad = mlp_backward(p, cache, cotangent, out.param_grads);
  return out;
}

// ---------------------------------------------------------------------------
// Flat views for parameter-sized state (adjoint accumulators, Adam moments).

template <class P>
std::size_t flat_size(const P& p) {
  std::size_t n = 0;
  visit_blocks(p, "", [&](const auto& b) { n += b.values.size(); });
  return n;
}

template <class P>
Vector flatten(const P& p) {
  Vector out;
  visit_blocks(p, "", [&](const auto& b) { out.insert(out.end(), b.values.begin(), b.values.end()); });
  return out;
}

template <class P>
void add_flat(P& p, std::span<const double> flat) {
  require(flat.size() == flat_size(p), "add_flat: length mismatch");
  std::size_t off = 0;
  visit_blocks(p, "", [&](const BlockRef& b) {
    for (std::size_t i = 0; i < b.values.size(); ++i) b.values[i] += flat[off + i];
    off += b.values.size();
  });
}

template <class P>
std::vector<BlockRef> collect_blocks(P& p, const std::string& prefix = "") {
  std::vector<BlockRef> out;
  visit_blocks(p, prefix, [&](const BlockRef& b) { out.push_back(b); });
  return out;
}

template <class P>
std::vector<ConstBlockRef> collect_blocks(const P& p, const std::string& prefix = "") {
  std::vector<ConstBlockRef> out;
  visit_blocks(p, prefix, [&](const ConstBlockRef& b) { out.push_back(b); });
  return out;
}

}  // namespace odernn
