#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "odernn/channel/channel.hpp"
#include "odernn/numerics/layers.hpp"
#include "odernn/numerics/recurrent.hpp"
#include "odernn/odesolve.hpp"

namespace odernn {

struct CheckResult {
  std::string name;
  bool passed = false;
  double metric = 0.0;     // the quantity compared against `threshold`
  double threshold = 0.0;
  std::string detail;
};

// ||a - b|| / max(||b||, floor)
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12) {
  require(a.size() == b.size(), "relative_error: length mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

/// Central differences of a scalar function of a flat parameter vector.
inline Vector central_gradient(const std::function<double(const Vector&)>& f, Vector x, double h = 1e-6) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

template <class P>
void assign_flat(P& p, std::span<const double> flat) {
  require(flat.size() == flat_size(p), "assign_flat: length mismatch");
  std::size_t off = 0;
  visit_blocks(p, "", [&](const BlockRef& b) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + b.values.size()), b.values.begin());
    off += b.values.size();
  });
}

inline Vector random_vector(std::size_t n, SeededRng& rng, double scale = 1.0) {
  Vector v(n);
  for (double& x : v) x = scale * rng.uniform(-1.0, 1.0);
  return v;
}

// ---------------------------------------------------------------------------
// solver-order: Euler and RK4 on dx/dt = -x over [0, 1], adaptive at rtol 1e-8.

inline std::vector<CheckResult> check_solver_order() {
  auto f = [](const Vector& x, double) { return Vector{-x[0]}; };
  auto exact = [](double t) { return Vector{std::exp(-t)}; };
  std::vector<CheckResult> out;
  const double euler = convergence_order(f, exact, SolverMethod::euler, 0.0, 1.0, 0.1);
  out.push_back({"solver-order.euler", std::abs(euler - 1.0) <= 0.15, std::abs(euler - 1.0), 0.15,
                 "order " + std::to_string(euler)});
  const double rk4 = convergence_order(f, exact, SolverMethod::rk4, 0.0, 1.0, 0.2);
  out.push_back(
      {"solver-order.rk4", std::abs(rk4 - 4.0) <= 0.3, std::abs(rk4 - 4.0), 0.3, "order " + std::to_string(rk4)});
  SolverConfig cfg;
  cfg.method = SolverMethod::rk45_adaptive;
  cfg.rtol = 1e-8;
  cfg.atol = 1e-10;
  const IntegrationResult r = integrate(f, Vector{1.0}, 0.0, 1.0, cfg);
  const double err = std::abs(r.state[0] - std::exp(-1.0));
  out.push_back({"solver-order.rk45", err <= 1e-6, err, 1e-6,
                 std::to_string(r.trajectory.accepted()) + " accepted steps"});
  return out;
}

// ---------------------------------------------------------------------------
// gradcheck: analytic VJPs of the MLP, LSTM cell and linear layers against
// central differences of <cotangent, output> on random tiny instances.

inline double mlp_gradcheck(SeededRng& rng) {
  const std::size_t in = 2 + rng.uniform_index(4);
  const std::size_t hid = 2 + rng.uniform_index(5);
  MlpParams p({in, hid, hid + 1, in});
  init_uniform(p, rng);
  const Vector x = random_vector(in, rng);
  const Vector cot = random_vector(in, rng);
  const MlpVjp vjp = mlp_vjp(p, x, cot);
  auto loss_x = [&](const Vector& xx) { return dot(cot, mlp_forward(p, xx)); };
  auto loss_p = [&](const Vector& flat) {
    MlpParams q = p;
    assign_flat(q, flat);
    return dot(cot, mlp_forward(q, x));
  };
  return std::max(relative_error(vjp.x_grad, central_gradient(loss_x, x)),
                  relative_error(flatten(vjp.param_grads), central_gradient(loss_p, flatten(p))));
}

inline double lstm_gradcheck(SeededRng& rng) {
  const std::size_t in = 2 + rng.uniform_index(4);
  const std::size_t d = 2 + rng.uniform_index(4);
  LstmParams p(in, d);
  init_uniform(p, rng);
  const Vector x = random_vector(in, rng), h = random_vector(d, rng), c = random_vector(d, rng);
  const Vector hg = random_vector(d, rng), cg = random_vector(d, rng);
  auto scalar = [&](const LstmParams& q, const Vector& xx, const Vector& hh, const Vector& cc) {
    const LstmOutput o = lstm_cell_forward(q, xx, hh, cc);
    return dot(hg, o.h) + dot(cg, o.c);
  };
  const LstmOutput o = lstm_cell_forward(p, x, h, c);
  LstmParams grads = zeros_like(p);
  const LstmGrads g = lstm_cell_backward(p, o.cache, hg, cg, grads);
  double worst = relative_error(g.x_grad, central_gradient([&](const Vector& v) { return scalar(p, v, h, c); }, x));
  worst = std::max(worst, relative_error(g.h_prev_grad,
                                         central_gradient([&](const Vector& v) { return scalar(p, x, v, c); }, h)));
  worst = std::max(worst, relative_error(g.c_prev_grad,
                                         central_gradient([&](const Vector& v) { return scalar(p, x, h, v); }, c)));
  auto loss_p = [&](const Vector& flat) {
    LstmParams q = p;
    assign_flat(q, flat);
    return scalar(q, x, h, c);
  };
  return std::max(worst, relative_error(flatten(grads), central_gradient(loss_p, flatten(p))));
}

inline double linear_gradcheck(SeededRng& rng) {
  const std::size_t in = 1 + rng.uniform_index(6);
  const std::size_t out = 1 + rng.uniform_index(6);
  LinearParams p(in, out);
  init_uniform(p, rng);
  const Vector x = random_vector(in, rng), cot = random_vector(out, rng);
  LinearParams grads = zeros_like(p);
  const Vector xg = linear_backward(p, x, cot, grads);
  auto loss_p = [&](const Vector& flat) {
    LinearParams q = p;
    assign_flat(q, flat);
    return dot(cot, linear_forward(q, x));
  };
  return std::max(relative_error(xg, central_gradient([&](const Vector& v) { return dot(cot, linear_forward(p, v)); }, x)),
                  relative_error(flatten(grads), central_gradient(loss_p, flatten(p))));
}

inline std::vector<CheckResult> check_gradients(std::size_t draws = 20, std::uint64_t seed = 2024) {
  SeededRng rng(seed);
  double mlp = 0.0, lstm = 0.0, lin = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    mlp = std::max(mlp, mlp_gradcheck(rng));
    lstm = std::max(lstm, lstm_gradcheck(rng));
    lin = std::max(lin, linear_gradcheck(rng));
  }
  const std::string n = std::to_string(draws) + " draws";
  return {{"gradcheck.mlp", mlp <= 1e-4, mlp, 1e-4, n},
          {"gradcheck.lstm", lstm <= 1e-4, lstm, 1e-4, n},
          {"gradcheck.linear", lin <= 1e-4, lin, 1e-4, n}};
}

// ---------------------------------------------------------------------------
// theorem1: analytic dH/dt against central differences of the simulator.

struct DerivativeCase {
  Scene scene;
  UserState user;
};

// Random scene plus a user well inside it, speed in [1, 40] m/s.
inline DerivativeCase random_derivative_case(SeededRng& rng) {
  SceneConfig sc;
  sc.n_paths = 1 + rng.uniform_index(12);
  sc.line_of_sight = rng.uniform() < 0.7;
  if (!sc.line_of_sight && sc.n_paths == 0) sc.n_paths = 1;
  sc.seed = rng.next_u64();
  DerivativeCase c{make_scene(sc), {}};
  c.user.position = {rng.uniform(sc.area.x_min + 1.0, sc.area.x_max - 1.0),
                     rng.uniform(sc.area.y_min + 1.0, sc.area.y_max - 1.0)};
  c.user.speed = rng.uniform(1.0, 40.0);
  c.user.heading = rng.uniform(0.0, kTwoPi);
  return c;
}

inline double theorem1_error(const DerivativeCase& c, const ArrayConfig& array, const OfdmConfig& ofdm,
                             double h = 1e-7) {
  const CsiMatrix analytic = csi_time_derivative(c.scene, c.user, array, ofdm);
  UserState ahead = c.user, behind = c.user;
  ahead.position = c.user.position + h * c.user.velocity();
  behind.position = c.user.position - h * c.user.velocity();
  const CsiMatrix fd = scaled(csi_at(c.scene, ahead, array, ofdm) - csi_at(c.scene, behind, array, ofdm), 0.5 / h);
  return frobenius(analytic - fd) / std::max(frobenius(fd), 1e-300);
}

inline std::vector<CheckResult> check_theorem1(std::size_t scenes = 100, std::uint64_t seed = 77) {
  SeededRng rng(seed);
  const ArrayConfig array;
  const OfdmConfig ofdm;
  double worst = 0.0;
  for (std::size_t i = 0; i < scenes; ++i) worst = std::max(worst, theorem1_error(random_derivative_case(rng), array, ofdm));
  return {{"theorem1", worst < 1e-3, worst, 1e-3, std::to_string(scenes) + " random scenes"}};
}

inline const std::vector<std::string>& diagnostic_names() {
  static const std::vector<std::string> names{"solver-order", "gradcheck", "theorem1"};
  return names;
}

inline std::vector<CheckResult> run_diagnostic(const std::string& name) {
  if (name == "solver-order") return check_solver_order();
  if (name == "gradcheck") return check_gradients();
  if (name == "theorem1") return check_theorem1();
  if (name == "all") {
    std::vector<CheckResult> all;
    for (const auto& n : diagnostic_names()) {
      auto r = run_diagnostic(n);
      all.insert(all.end(), r.begin(), r.end());
    }
    return all;
  }
  throw InvalidArgument("unknown check '" + name + "' (expected solver-order, gradcheck, theorem1 or all)");
}

}  // namespace odernn
