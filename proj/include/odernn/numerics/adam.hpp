#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "odernn/numerics/layers.hpp"

namespace odernn {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Vector> first_moment;   // one entry per parameter block
  std::vector<Vector> second_moment;
};

template <class P>
AdamState make_adam_state(const P& params, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8) {
  AdamState s;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  for (const auto& b : collect_blocks(params)) {
    s.first_moment.emplace_back(b.values.size(), 0.0);
    s.second_moment.emplace_back(b.values.size(), 0.0);
  }
  return s;
}

// One bias-corrected Adam update. Gradients are checked for finiteness before
// anything is modified, so a failed step leaves params and state untouched.
template <class P>
void adam_step(AdamState& state, P& params, const P& grads, double lr) {
  auto p_blocks = collect_blocks(params);
  auto g_blocks = collect_blocks(grads);
  require(p_blocks.size() == g_blocks.size() && p_blocks.size() == state.first_moment.size(),
          "adam_step: parameter/gradient block count mismatch");
  for (std::size_t b = 0; b < p_blocks.size(); ++b) {
    require(p_blocks[b].values.size() == g_blocks[b].values.size() &&
                p_blocks[b].values.size() == state.first_moment[b].size(), [&] { return "adam_step: shape mismatch in block " + p_blocks[b].name; });
    if (!all_finite(g_blocks[b].values)) throw NumericError("adam_step: non-finite gradient in " + p_blocks[b].name);
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < p_blocks.size(); ++b) {
    auto p = p_blocks[b].values;
    auto g = g_blocks[b].values;
    Vector& m = state.first_moment[b];
    Vector& v = state.second_moment[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      const double denom = std::sqrt(v_hat) + state.epsilon;
      if (denom > 0.0) p[i] -= lr * m_hat / denom;
    }
  }
}

}  // namespace odernn
