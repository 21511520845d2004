#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "odernn/errors.hpp"
#include "odernn/numerics/matrix.hpp"

namespace odernn {

enum class SolverMethod { euler, rk4, rk45_adaptive };

inline std::string to_string(SolverMethod m) {
  switch (m) {
    case SolverMethod::euler: return "euler";
    case SolverMethod::rk4: return "rk4";
    case SolverMethod::rk45_adaptive: return "rk45";
  }
  return "?";
}

inline SolverMethod solver_method_from_string(const std::string& s) {
  if (s == "euler") return SolverMethod::euler;
  if (s == "rk4") return SolverMethod::rk4;
  if (s == "rk45" || s == "rk45-adaptive" || s == "dopri5") return SolverMethod::rk45_adaptive;
  throw InvalidArgument("unknown solver method '" + s + "' (expected euler, rk4 or rk45)");
}

struct SolverConfig {
  SolverMethod method = SolverMethod::rk45_adaptive;
  double step = 0.1;  // fixed-step methods
  double rtol = 1e-6;
  double atol = 1e-8;
  std::size_t max_steps = 100000;
  double min_step = 1e-12;

  void validate() const {
    require(step > 0.0 && std::isfinite(step), "solver: step must be > 0");
    require(rtol > 0.0 && atol > 0.0, "solver: rtol and atol must be > 0");
    require(max_steps >= 1, "solver: max_steps must be >= 1");
  }
  bool fixed_step() const { return method != SolverMethod::rk45_adaptive; }

  friend bool operator==(const SolverConfig&, const SolverConfig&) = default;
};

// Explicit Runge-Kutta tableau. `error` holds b - b_hat for embedded pairs.
struct Tableau {
  std::vector<std::vector<double>> a;
  std::vector<double> b;
  std::vector<double> c;
  std::vector<double> error;
  int order = 1;

  std::size_t stages() const { return b.size(); }
};

inline const Tableau& euler_tableau() {
  static const Tableau t{{{}}, {1.0}, {0.0}, {}, 1};
  return t;
}

inline const Tableau& rk4_tableau() {
  static const Tableau t{{{}, {0.5}, {0.0, 0.5}, {0.0, 0.0, 1.0}},
                         {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0},
                         {0.0, 0.5, 0.5, 1.0},
                         {},
                         4};
  return t;
}

// Dormand-Prince 5(4). Propagates the 5th-order solution.
inline const Tableau& dopri5_tableau() {
  static const Tableau t = [] {
    Tableau d;
    d.a = {{},
           {1.0 / 5.0},
           {3.0 / 40.0, 9.0 / 40.0},
           {44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0},
           {19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0},
           {9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0},
           {35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0}};
    d.b = {35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0};
    d.c = {0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0};
    const std::vector<double> b_hat = {5179.0 / 57600.0, 0.0,           7571.0 / 16695.0, 393.0 / 640.0,
                                       -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0};
    for (std::size_t i = 0; i < d.b.size(); ++i) d.error.push_back(d.b[i] - b_hat[i]);
    d.order = 5;
    return d;
  }();
  return t;
}

inline const Tableau& tableau_for(SolverMethod m) {
  switch (m) {
    case SolverMethod::euler: return euler_tableau();
    case SolverMethod::rk4: return rk4_tableau();
    case SolverMethod::rk45_adaptive: return dopri5_tableau();
  }
  return euler_tableau();
}

// Stage input y_i = h + dt * sum_j a_ij k_j. Shared by forward integration and
// by gradient engines that recompute steps, so both see identical values.
inline Vector stage_input(const Tableau& tab, std::size_t i, const Vector& h, double dt,
                          const std::vector<Vector>& k) {
  Vector y = h;
  for (std::size_t j = 0; j < i; ++j) {
    const double aij = tab.a[i][j];
    if (aij == 0.0) continue;
    axpy(dt * aij, k[j].data(), y.data(), y.size());
  }
  return y;
}

inline Vector combine_stages(const Tableau& tab, const Vector& h, double dt, const std::vector<Vector>& k) {
  Vector out = h;
  for (std::size_t i = 0; i < tab.stages(); ++i) {
    if (tab.b[i] == 0.0) continue;
    axpy(dt * tab.b[i], k[i].data(), out.data(), out.size());
  }
  return out;
}

template <class F>
Vector call_dynamics(F& f, const Vector& y, double t) {
  Vector k = f(y, t);
  if (k.size() != y.size()) throw InvalidArgument("dynamics returned wrong state length");
  if (!all_finite(k)) throw NumericError("dynamics produced non-finite values at t=" + std::to_string(t));
  return k;
}

struct StepResult {
  Vector state;
  Vector error;  // empty unless the tableau is embedded
};

// One explicit RK step from (t, h) with size dt.
template <class F>
StepResult rk_step(const Tableau& tab, F& f, const Vector& h, double t, double dt) {
  std::vector<Vector> k;
  k.reserve(tab.stages());
  for (std::size_t i = 0; i < tab.stages(); ++i) {
    Vector y = stage_input(tab, i, h, dt, k);
    k.push_back(call_dynamics(f, y, t + tab.c[i] * dt));
  }
  StepResult r;
  r.state = combine_stages(tab, h, dt, k);
  if (!tab.error.empty()) {
    r.error.assign(h.size(), 0.0);
    for (std::size_t i = 0; i < tab.stages(); ++i) {
      if (tab.error[i] == 0.0) continue;
      axpy(dt * tab.error[i], k[i].data(), r.error.data(), h.size());
    }
  }
  return r;
}

// Eq. h_{t+dt} = h_t + dt * f(h_t, t).
template <class F>
Vector euler_step(F&& f, const Vector& h, double t, double dt) {
  require(dt > 0.0, "euler_step: dt must be > 0");
  Vector k = f(h, t);
  require(k.size() == h.size(), "euler_step: dynamics returned wrong state length");
  if (!all_finite(k)) throw NumericError("euler_step: non-finite dynamics at t=" + std::to_string(t));
  Vector out = h;
  axpy(dt, k.data(), out.data(), out.size());
  return out;
}

struct Trajectory {
  std::vector<double> times;    // visited times, t0 ... t1
  std::vector<Vector> states;   // states at `times`
  std::vector<double> steps;    // accepted step sizes (times.size() - 1 entries)
  std::vector<double> errors;   // normalized local error of each accepted step (adaptive only)
  std::size_t rejected = 0;
  std::size_t evaluations = 0;

  std::size_t accepted() const { return steps.size(); }
};

struct IntegrationResult {
  Vector state;
  Trajectory trajectory;
};

// Number of equal fixed steps covering a span; guards against 3.0000000001-style overshoot.
inline std::size_t fixed_step_count(double span, double step) {
  const double ratio = span / step;
  const double n = std::ceil(ratio * (1.0 - 1e-12));
  return static_cast<std::size_t>(std::max(1.0, n));
}

namespace detail {

inline double error_norm(const Vector& err, const Vector& y0, const Vector& y1, double rtol, double atol) {
  double acc = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    const double sc = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = err[i] / sc;
    acc += r * r;
  }
  return err.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(err.size()));
}

// Starting step heuristic (Hairer, Norsett & Wanner, II.4).
template <class F>
double initial_step(F& f, const Vector& h0, double t0, double span, const SolverConfig& cfg, int order,
                    std::size_t& evals) {
  const Vector f0 = call_dynamics(f, h0, t0);
  ++evals;
  double d0 = 0.0, d1 = 0.0;
  for (std::size_t i = 0; i < h0.size(); ++i) {
    const double sc = cfg.atol + cfg.rtol * std::abs(h0[i]);
    d0 += (h0[i] / sc) * (h0[i] / sc);
    d1 += (f0[i] / sc) * (f0[i] / sc);
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, h0.size()));
  d0 = std::sqrt(d0 / n);
  d1 = std::sqrt(d1 / n);
  double step0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  step0 = std::min(step0, span);
  Vector h1 = h0;
  axpy(step0, f0.data(), h1.data(), h1.size());
  const Vector f1 = call_dynamics(f, h1, t0 + step0);
  ++evals;
  double d2 = 0.0;
  for (std::size_t i = 0; i < h0.size(); ++i) {
    const double sc = cfg.atol + cfg.rtol * std::abs(h0[i]);
    const double r = (f1[i] - f0[i]) / sc;
    d2 += r * r;
  }
  d2 = std::sqrt(d2 / n) / step0;
  const double dmax = std::max(d1, d2);
  const double step1 = dmax <= 1e-15 ? std::max(1e-6, step0 * 1e-3) : std::pow(0.01 / dmax, 1.0 / (order + 1));
  return std::min({100.0 * step0, step1, span});
}

}  // namespace detail

/// Integrates dh/dt = f(h, t) from t0 to t1 (t1 >= t0).
///
/// Fixed-step methods split [t0, t1] into ceil((t1 - t0) / step) equal steps.
/// The adaptive method is Dormand-Prince 5(4) with a PI step controller;
/// a step is accepted when its RMS error, scaled by atol + rtol * |y|, is <= 1.
/// The trajectory records every accepted (t, h) including both endpoints.
template <class F>
IntegrationResult integrate(F&& f, const Vector& h0, double t0, double t1, const SolverConfig& cfg) {
  cfg.validate();
  require(t1 >= t0, "integrate: t1 must be >= t0");
  IntegrationResult r;
  Trajectory& tr = r.trajectory;
  tr.times.push_back(t0);
  tr.states.push_back(h0);
  if (t1 == t0) {
    tr.times.push_back(t1);
    tr.states.push_back(h0);
    r.state = h0;
    return r;
  }
  const Tableau& tab = tableau_for(cfg.method);
  const double span = t1 - t0;

  if (cfg.fixed_step()) {
    const std::size_t n = fixed_step_count(span, cfg.step);
    if (n > cfg.max_steps)
      throw DivergenceError("integrate: " + std::to_string(n) + " fixed steps exceed max_steps=" +
                            std::to_string(cfg.max_steps));
    const double dt = span / static_cast<double>(n);
    Vector h = h0;
    for (std::size_t s = 0; s < n; ++s) {
      const double t = t0 + static_cast<double>(s) * dt;
      h = rk_step(tab, f, h, t, dt).state;
      tr.evaluations += tab.stages();
      if (!all_finite(h)) throw NumericError("integrate: non-finite state at t=" + std::to_string(t + dt));
      tr.times.push_back(s + 1 == n ? t1 : t0 + static_cast<double>(s + 1) * dt);
      tr.states.push_back(h);
      tr.steps.push_back(dt);
    }
    r.state = std::move(h);
    return r;
  }

  constexpr double safety = 0.9, fac_min = 0.2, fac_max = 10.0, beta = 0.04;
  const double alpha = 1.0 / tab.order - 0.75 * beta;
  double dt = detail::initial_step(f, h0, t0, span, cfg, tab.order, tr.evaluations);
  double err_prev = 1e-4;
  bool last_rejected = false;
  double t = t0;
  Vector h = h0;
  std::size_t attempts = 0;
  while (t < t1) {
    if (++attempts > cfg.max_steps)
      throw DivergenceError("integrate: max_steps=" + std::to_string(cfg.max_steps) + " exceeded at t=" +
                            std::to_string(t));
    if (dt < cfg.min_step)
      throw DivergenceError("integrate: step size " + std::to_string(dt) + " below floor at t=" + std::to_string(t));
    const bool final_step = t + dt >= t1;
    const double step = final_step ? t1 - t : dt;
    StepResult sr = rk_step(tab, f, h, t, step);
    tr.evaluations += tab.stages();
    const double err = all_finite(sr.state) ? detail::error_norm(sr.error, h, sr.state, cfg.rtol, cfg.atol)
                                            : std::numeric_limits<double>::infinity();
    if (err <= 1.0) {
      t = final_step ? t1 : t + step;
      h = std::move(sr.state);
      tr.times.push_back(t);
      tr.states.push_back(h);
      tr.steps.push_back(step);
      tr.errors.push_back(err);
      double fac = err == 0.0 ? fac_max : safety * std::pow(err, -alpha) * std::pow(err_prev, beta);
      fac = std::clamp(fac, fac_min, fac_max);
      if (last_rejected) fac = std::min(fac, 1.0);
      dt = step * fac;
      err_prev = std::max(err, 1e-4);
      last_rejected = false;
    } else {
      ++tr.rejected;
      const double fac = std::isfinite(err) ? std::max(fac_min, safety * std::pow(err, -alpha)) : fac_min;
      dt = step * fac;
      last_rejected = true;
    }
  }
  r.state = std::move(h);
  return r;
}

/// Empirical order of a fixed-step method: least-squares slope of
/// log(global error) against log(step) over `halvings + 1` step sizes.
inline double convergence_order(const std::function<Vector(const Vector&, double)>& f,
                                const std::function<Vector(double)>& exact, SolverMethod method, double t0,
                                double t1, double initial_step, std::size_t halvings = 4) {
  require(halvings >= 3, "convergence_order: need at least 4 points");
  require(method != SolverMethod::rk45_adaptive, "convergence_order: fixed-step methods only");
  std::vector<double> xs, ys;
  const Vector h0 = exact(t0);
  const Vector ref = exact(t1);
  double step = initial_step;
  for (std::size_t i = 0; i <= halvings; ++i, step *= 0.5) {
    SolverConfig cfg;
    cfg.method = method;
    cfg.step = step;
    cfg.max_steps = 1u << 30;
    const Vector h = integrate(f, h0, t0, t1, cfg).state;
    double e = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) e += (h[k] - ref[k]) * (h[k] - ref[k]);
    xs.push_back(std::log(step));
    ys.push_back(std::log(std::sqrt(e)));
  }
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace odernn
