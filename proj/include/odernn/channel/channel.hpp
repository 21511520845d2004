#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "odernn/errors.hpp"
#include "odernn/numerics/matrix.hpp"
#include "odernn/numerics/rng.hpp"

namespace odernn {

using Complex = std::complex<double>;
using ComplexVector = std::vector<Complex>;

inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double angle_of(Vec2 v) { return std::atan2(v.y, v.x); }

struct Bounds {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 120.0;
  double y_max = 60.0;

  bool contains(Vec2 p) const { return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max; }
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  friend bool operator==(const Bounds&, const Bounds&) = default;
};

// ---------------------------------------------------------------------------
// Configuration

struct OfdmConfig {
  std::size_t n_c = 16;
  double center_frequency = 3.5e9;
  double bandwidth = 100e6;

  void validate() const {
    require(n_c >= 1, "ofdm.n_c must be >= 1");
    require(center_frequency > 0.0 && bandwidth >= 0.0, "ofdm: frequencies must be positive");
    require(bandwidth < 2.0 * center_frequency, "ofdm: bandwidth too large for center frequency");
  }

  // Subcarrier l is 1-based. Subcarriers are spread evenly over [fc - B/2, fc + B/2].
  double frequency(std::size_t l) const {
    require(l >= 1 && l <= n_c, [&] { return "ofdm: subcarrier index " + std::to_string(l) + " out of range"; });
    if (n_c == 1) return center_frequency;
    return center_frequency - bandwidth / 2.0 +
           static_cast<double>(l - 1) * bandwidth / static_cast<double>(n_c - 1);
  }
  double wavelength(std::size_t l) const { return kSpeedOfLight / frequency(l); }
  double center_wavelength() const { return kSpeedOfLight / center_frequency; }

  friend bool operator==(const OfdmConfig&, const OfdmConfig&) = default;
};

struct ArrayConfig {
  std::size_t n_t = 8;
  std::optional<double> spacing;  // unset: half the center wavelength
  double orientation = 0.0;       // ULA axis angle in the scene frame

  void validate() const {
    require(n_t >= 1, "array.n_t must be >= 1");
    require(!spacing || *spacing > 0.0, "array.spacing must be > 0");
  }
  double spacing_for(const OfdmConfig& ofdm) const { return spacing ? *spacing : ofdm.center_wavelength() / 2.0; }

  friend bool operator==(const ArrayConfig&, const ArrayConfig&) = default;
};

struct Scatterer {
  Vec2 position;
  double reflection = 1.0;  // xi_p
  friend bool operator==(const Scatterer&, const Scatterer&) = default;
};

inline constexpr std::size_t kMaxPaths = 25;

struct Scene {
  Vec2 bs{60.0, -30.0};
  std::vector<Scatterer> scatterers;
  bool line_of_sight = true;
  Bounds area;

  std::size_t path_count() const { return scatterers.size() + (line_of_sight ? 1 : 0); }

  void validate() const {
    if (path_count() > kMaxPaths)
      throw InvalidScene("scene has " + std::to_string(path_count()) + " paths, limit is 25");
    for (const auto& s : scatterers) {
      if (!(s.reflection > 0.0)) throw InvalidScene("scatterer reflection coefficient must be > 0");
      if (norm(s.position - bs) <= 0.0) throw InvalidScene("scatterer coincides with the base station");
    }
    if (!(area.x_max > area.x_min && area.y_max > area.y_min)) throw InvalidScene("scene area is empty");
  }
};

struct SceneConfig {
  Bounds area;
  Vec2 bs{60.0, -30.0};
  std::size_t n_paths = 8;  // including the LoS path when enabled
  bool line_of_sight = true;
  double margin = 30.0;     // scatterers live in a band of this width around the area
  double reflection_min = 0.05;
  double reflection_max = 1.0;
  std::uint64_t seed = 7;

  friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

// Scatterers are drawn uniformly from the band around the user area (outside it),
// with reflection coefficients log-uniform in [reflection_min, reflection_max].
inline Scene make_scene(const SceneConfig& cfg) {
  require(cfg.n_paths <= kMaxPaths, "scene.n_paths must be <= 25");
  require(cfg.margin > 0.0, "scene.margin must be > 0");
  require(cfg.reflection_min > 0.0 && cfg.reflection_max >= cfg.reflection_min, "scene: bad reflection range");
  Scene scene;
  scene.bs = cfg.bs;
  scene.area = cfg.area;
  scene.line_of_sight = cfg.line_of_sight;
  const std::size_t n_scatter = cfg.n_paths - (cfg.line_of_sight && cfg.n_paths > 0 ? 1 : 0);
  SeededRng rng(cfg.seed);
  const Bounds outer{cfg.area.x_min - cfg.margin, cfg.area.y_min - cfg.margin, cfg.area.x_max + cfg.margin,
                     cfg.area.y_max + cfg.margin};
  const double log_lo = std::log(cfg.reflection_min), log_hi = std::log(cfg.reflection_max);
  while (scene.scatterers.size() < n_scatter) {
    const Vec2 p{rng.uniform(outer.x_min, outer.x_max), rng.uniform(outer.y_min, outer.y_max)};
    if (cfg.area.contains(p) || norm(p - cfg.bs) < 1.0) continue;
    scene.scatterers.push_back({p, std::exp(rng.uniform(log_lo, log_hi))});
  }
  scene.validate();
  return scene;
}

struct UserState {
  Vec2 position;
  double speed = 0.0;    // m/s
  double heading = 0.0;  // radians
  friend bool operator==(const UserState&, const UserState&) = default;

  Vec2 velocity() const { return {speed * std::cos(heading), speed * std::sin(heading)}; }
};

struct Path {
  std::size_t index = 0;
  bool line_of_sight = false;
  double reflection = 1.0;  // xi_p
  double amplitude = 0.0;   // alpha_p = xi_p / d_p
  double angle = 0.0;       // theta_p, scene frame
  double length = 0.0;      // d_p
  double delay = 0.0;       // tau_p = d_p / c
  Vec2 bounce;              // scatterer position (BS position for LoS)
  std::vector<double> phase_rate;  // rho_p[l-1]
};

// ---------------------------------------------------------------------------
// Operations

// e(theta): entry k = exp(-j 2 pi k d cos(theta) / lambda).
inline ComplexVector array_response(double theta, const ArrayConfig& cfg, double spacing, double wavelength) {
  require(wavelength > 0.0, "array_response: wavelength must be > 0");
  ComplexVector e(cfg.n_t);
  const double phase = kTwoPi * spacing * std::cos(theta - cfg.orientation) / wavelength;
  for (std::size_t k = 0; k < cfg.n_t; ++k) e[k] = std::polar(1.0, -phase * static_cast<double>(k));
  return e;
}

inline ComplexVector array_response(double theta, const ArrayConfig& cfg, const OfdmConfig& ofdm, double wavelength) {
  return array_response(theta, cfg, cfg.spacing_for(ofdm), wavelength);
}

inline std::vector<double> phase_rates(const UserState& user, double angle, const OfdmConfig& ofdm) {
  std::vector<double> rho(ofdm.n_c);
  const double doppler = 1.0 + user.speed * std::cos(user.heading - angle) / kSpeedOfLight;
  for (std::size_t l = 1; l <= ofdm.n_c; ++l) rho[l - 1] = kTwoPi * doppler / ofdm.wavelength(l);
  return rho;
}

// Single-bounce plus optional LoS paths, sorted by delay.
inline std::vector<Path> paths_from_geometry(const Scene& scene, const UserState& user, const OfdmConfig& ofdm) {
  scene.validate();
  if (!scene.area.contains(user.position)) throw InvalidScene("user is outside the scene area");
  std::vector<Path> paths;
  std::size_t idx = 0;
  if (scene.line_of_sight) {
    const Vec2 r = user.position - scene.bs;
    const double d = norm(r);
    if (!(d > 0.0)) throw InvalidScene("user coincides with the base station");
    Path p;
    p.index = idx++;
    p.line_of_sight = true;
    p.reflection = 1.0;
    p.length = d;
    p.angle = angle_of(r);
    p.bounce = scene.bs;
    paths.push_back(p);
  }
  for (const auto& s : scene.scatterers) {
    const double leg1 = norm(s.position - scene.bs);
    const double leg2 = norm(user.position - s.position);
    if (!(leg1 > 0.0) || !(leg2 > 0.0)) throw InvalidScene("scatterer coincides with the base station or user");
    Path p;
    p.index = idx++;
    p.reflection = s.reflection;
    p.length = leg1 + leg2;
    p.angle = angle_of(s.position - scene.bs);
    p.bounce = s.position;
    paths.push_back(p);
  }
  for (auto& p : paths) {
    p.amplitude = p.reflection / p.length;
    p.delay = p.length / kSpeedOfLight;
    p.phase_rate = phase_rates(user, p.angle, ofdm);
  }
  std::stable_sort(paths.begin(), paths.end(), [](const Path& a, const Path& b) { return a.delay < b.delay; });
  return paths;
}

// h[l] = sum_p alpha_p e(theta_p) exp(-j 2 pi [d_p + v cos(theta_v - theta_p) tau_p] / lambda_l)
inline ComplexVector cfr_subcarrier(const std::vector<Path>& paths, const UserState& user, std::size_t l,
                                    const ArrayConfig& cfg, const OfdmConfig& ofdm) {
  const double lambda = ofdm.wavelength(l);
  const double spacing = cfg.spacing_for(ofdm);
  ComplexVector h(cfg.n_t, Complex{0.0, 0.0});
  for (const auto& p : paths) {
    const double excess = user.speed * std::cos(user.heading - p.angle) * p.delay;
    const Complex rot = std::polar(p.amplitude, -kTwoPi * (p.length + excess) / lambda);
    const ComplexVector e = array_response(p.angle, cfg, spacing, lambda);
    for (std::size_t k = 0; k < cfg.n_t; ++k) h[k] += e[k] * rot;
  }
  return h;
}

// N_t x N_c complex matrix as paired real/imaginary parts.
struct CsiMatrix {
  Matrix re;
  Matrix im;

  CsiMatrix() = default;
  CsiMatrix(std::size_t n_t, std::size_t n_c) : re(n_t, n_c), im(n_t, n_c) {}

  std::size_t n_t() const { return re.rows; }
  std::size_t n_c() const { return re.cols; }
  Complex at(std::size_t k, std::size_t l) const { return {re(k, l), im(k, l)}; }
  void set(std::size_t k, std::size_t l, Complex v) {
    re(k, l) = v.real();
    im(k, l) = v.imag();
  }
  bool same_dims(const CsiMatrix& o) const { return re.same_shape(o.re); }

  friend bool operator==(const CsiMatrix&, const CsiMatrix&) = default;
};

inline double squared_frobenius(const CsiMatrix& h) { return squared_norm(h.re.data) + squared_norm(h.im.data); }
inline double frobenius(const CsiMatrix& h) { return std::sqrt(squared_frobenius(h)); }

inline CsiMatrix operator-(const CsiMatrix& a, const CsiMatrix& b) {
  require(a.same_dims(b), "csi subtract: dims mismatch");
  CsiMatrix out = a;
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    out.re.data[i] -= b.re.data[i];
    out.im.data[i] -= b.im.data[i];
  }
  return out;
}

inline CsiMatrix operator+(const CsiMatrix& a, const CsiMatrix& b) {
  require(a.same_dims(b), "csi add: dims mismatch");
  CsiMatrix out = a;
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    out.re.data[i] += b.re.data[i];
    out.im.data[i] += b.im.data[i];
  }
  return out;
}

inline CsiMatrix scaled(const CsiMatrix& a, Complex s) {
  CsiMatrix out(a.n_t(), a.n_c());
  for (std::size_t k = 0; k < a.n_t(); ++k)
    for (std::size_t l = 0; l < a.n_c(); ++l) out.set(k, l, a.at(k, l) * s);
  return out;
}

inline bool all_finite(const CsiMatrix& h) { return all_finite(h.re.data) && all_finite(h.im.data); }

inline CsiMatrix csi_matrix(const std::vector<Path>& paths, const UserState& user, const ArrayConfig& cfg,
                            const OfdmConfig& ofdm) {
  CsiMatrix h(cfg.n_t, ofdm.n_c);
  for (std::size_t l = 1; l <= ofdm.n_c; ++l) {
    const ComplexVector col = cfr_subcarrier(paths, user, l, cfg, ofdm);
    for (std::size_t k = 0; k < cfg.n_t; ++k) h.set(k, l - 1, col[k]);
  }
  return h;
}

inline CsiMatrix csi_at(const Scene& scene, const UserState& user, const ArrayConfig& cfg, const OfdmConfig& ofdm) {
  return csi_matrix(paths_from_geometry(scene, user, ofdm), user, cfg, ofdm);
}

struct Propagation {
  UserState user;
  bool inside = true;  // false once the user has left the scene area
};

// Uniform linear motion.
inline Propagation propagate_user(const UserState& user, double dt, const Bounds& area) {
  require(dt >= 0.0, "propagate_user: dt must be >= 0");
  Propagation out{user, true};
  if (dt == 0.0) return out;
  out.user.position = user.position + (dt * user.speed) * Vec2{std::cos(user.heading), std::sin(user.heading)};
  out.inside = area.contains(out.user.position);
  return out;
}

/// Analytic dH/dt at the user's current position.
///
/// Per path, H_p = alpha_p e(theta_p) exp(-j rho_p d_p) with alpha_p = xi_p / d_p.
/// Differentiating through d_p gives dH_p/dt = H_p (-1/d_p - j rho_p) dd_p/dt, where
/// dd_p/dt = -v . (s - x_u) / |s - x_u| for a bounce off s and -v . (BS - x_u) / |BS - x_u|
/// for LoS. The LoS departure angle also drifts, d(theta)/dt = (r x v) / |r|^2 with
/// r = x_u - BS; that term enters through e(theta) and through the Doppler factor of rho_p.
inline CsiMatrix csi_time_derivative(const Scene& scene, const UserState& user, const ArrayConfig& cfg,
                                     const OfdmConfig& ofdm) {
  const auto paths = paths_from_geometry(scene, user, ofdm);
  const double spacing = cfg.spacing_for(ofdm);
  const Vec2 v = user.velocity();
  CsiMatrix dh(cfg.n_t, ofdm.n_c);
  for (const auto& p : paths) {
    const Vec2 toward = p.bounce - user.position;
    const double d_rate = -dot(v, toward) / norm(toward);
    double angle_rate = 0.0;
    if (p.line_of_sight) {
      const Vec2 r = user.position - scene.bs;
      angle_rate = (r.x * v.y - r.y * v.x) / dot(r, r);
    }
    for (std::size_t l = 1; l <= ofdm.n_c; ++l) {
      const double lambda = ofdm.wavelength(l);
      const double rho = p.phase_rate[l - 1];
      const Complex rot = std::polar(p.amplitude, -rho * p.length);
      const ComplexVector e = array_response(p.angle, cfg, spacing, lambda);
      const Complex radial{-d_rate / p.length, -rho * d_rate};
      // d(rho d)/dtheta through the Doppler factor.
      const double dphase_dtheta =
          kTwoPi * p.length * user.speed * std::sin(user.heading - p.angle) / (kSpeedOfLight * lambda);
      const double dsteer = kTwoPi * spacing * std::sin(p.angle - cfg.orientation) / lambda;
      for (std::size_t k = 0; k < cfg.n_t; ++k) {
        const Complex hp = e[k] * rot;
        const Complex angular{0.0, angle_rate * (dsteer * static_cast<double>(k) - dphase_dtheta)};
        dh.set(k, l - 1, dh.at(k, l - 1) + hp * (radial + angular));
      }
    }
  }
  return dh;
}

}  // namespace odernn
