#include "support.hpp"

using namespace testing;
using Catch::Approx;

namespace {

Scene open_scene(bool los) {
  Scene s;
  s.bs = {0.0, 0.0};
  s.line_of_sight = los;
  s.area = {-200.0, -200.0, 200.0, 200.0};
  return s;
}

UserState random_user(const Scene& s, SeededRng& rng) {
  UserState u;
  u.position = {rng.uniform(s.area.x_min + 1, s.area.x_max - 1), rng.uniform(s.area.y_min + 1, s.area.y_max - 1)};
  u.speed = rng.uniform(0.0, 40.0);
  u.heading = rng.uniform(0.0, kTwoPi);
  return u;
}

}  // namespace

TEST_CASE("array response", "[channel]") {
  ArrayConfig a;
  a.n_t = 6;
  const auto broadside = array_response(std::numbers::pi / 2, a, 0.05, 0.1);
  for (auto e : broadside) {
    CHECK(e.real() == Approx(1.0).margin(1e-15));
    CHECK(e.imag() == Approx(0.0).margin(1e-15));
  }
  a.n_t = 2;
  const auto endfire = array_response(0.0, a, 0.05, 0.1);
  CHECK(endfire[0] == std::complex<double>(1.0, 0.0));
  CHECK(endfire[1].real() == Approx(-1.0).margin(1e-15));
  CHECK(endfire[1].imag() == Approx(0.0).margin(1e-15));

  SeededRng rng(1);
  a.n_t = 64;
  for (int i = 0; i < 100; ++i) {
    const auto e = array_response(rng.uniform(-10, 10), a, rng.uniform(0.01, 1), rng.uniform(0.01, 1));
    CHECK(e[0] == std::complex<double>(1.0, 0.0));
    for (auto v : e) CHECK(std::abs(std::abs(v) - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(array_response(0.0, a, 0.05, 0.0), InvalidArgument);
}

TEST_CASE("subcarrier wavelengths span the band", "[channel]") {
  OfdmConfig o;
  o.n_c = 5;
  CHECK(o.frequency(1) == Approx(3.5e9 - 50e6));
  CHECK(o.frequency(5) == Approx(3.5e9 + 50e6));
  CHECK(o.wavelength(3) == Approx(kSpeedOfLight / 3.5e9));
  o.n_c = 1;
  CHECK(o.frequency(1) == 3.5e9);
  CHECK_THROWS_AS(o.frequency(2), InvalidArgument);
}

TEST_CASE("paths from geometry", "[channel]") {
  const OfdmConfig ofdm;
  UserState u;
  u.position = {100.0, 0.0};

  SECTION("line of sight only") {
    const auto paths = paths_from_geometry(open_scene(true), u, ofdm);
    REQUIRE(paths.size() == 1);
    CHECK(paths[0].length == 100.0);
    CHECK(paths[0].delay == Approx(100.0 / kSpeedOfLight));
    CHECK(paths[0].angle == 0.0);
    CHECK(paths[0].amplitude == Approx(1.0 / 100.0));
  }

  SECTION("single bounce") {
    Scene s = open_scene(false);
    s.scatterers.push_back({{0.0, 50.0}, 0.5});
    const auto paths = paths_from_geometry(s, u, ofdm);
    REQUIRE(paths.size() == 1);
    const double d = 50.0 + std::sqrt(100.0 * 100.0 + 50.0 * 50.0);
    CHECK(paths[0].length == Approx(d).epsilon(1e-15));
    CHECK(paths[0].angle == Approx(std::numbers::pi / 2));
    CHECK(paths[0].amplitude == Approx(0.5 / d));
  }

  SECTION("phase rates follow the Doppler-scaled wavenumber") {
    u.speed = 30.0;
    u.heading = 0.3;
    const auto paths = paths_from_geometry(open_scene(true), u, ofdm);
    for (std::size_t l = 1; l <= ofdm.n_c; ++l)
      CHECK(paths[0].phase_rate[l - 1] ==
            Approx(kTwoPi * (1 + 30.0 * std::cos(0.3 - paths[0].angle) / kSpeedOfLight) / ofdm.wavelength(l)));
  }

  SECTION("random scenes are sorted by delay") {
    SeededRng rng(2);
    for (int i = 0; i < 50; ++i) {
      SceneConfig sc;
      sc.n_paths = 25;
      sc.seed = rng.next_u64();
      const Scene s = make_scene(sc);
      CHECK(s.path_count() == 25);
      const auto paths = paths_from_geometry(s, random_user(s, rng), ofdm);
      REQUIRE(paths.size() == 25);
      for (std::size_t p = 1; p < paths.size(); ++p) CHECK(paths[p - 1].delay <= paths[p].delay);
      for (const auto& p : paths) {
        CHECK(p.length > 0.0);
        CHECK(p.delay == p.length / kSpeedOfLight);
      }
    }
  }

  SECTION("degenerate geometry is rejected") {
    Scene s = open_scene(true);
    UserState at_bs;
    CHECK_THROWS_AS(paths_from_geometry(s, at_bs, ofdm), InvalidScene);
    s.line_of_sight = false;
    s.scatterers.push_back({{100.0, 0.0}, 1.0});
    CHECK_THROWS_AS(paths_from_geometry(s, u, ofdm), InvalidScene);
    UserState outside;
    outside.position = {1000.0, 0.0};
    CHECK_THROWS_AS(paths_from_geometry(open_scene(true), outside, ofdm), InvalidScene);
    SceneConfig too_many;
    too_many.n_paths = 26;
    CHECK_THROWS_AS(make_scene(too_many), InvalidArgument);
  }
}

TEST_CASE("subcarrier response", "[channel]") {
  ArrayConfig array;
  array.n_t = 4;
  OfdmConfig ofdm;
  ofdm.n_c = 3;

  SECTION("path length of exactly one wavelength has unit phase") {
    Path p;
    p.amplitude = 0.25;
    p.angle = 0.7;
    p.length = ofdm.wavelength(2);
    p.delay = p.length / kSpeedOfLight;
    const auto h = cfr_subcarrier({p}, UserState{}, 2, array, ofdm);
    const auto e = array_response(0.7, array, array.spacing_for(ofdm), ofdm.wavelength(2));
    for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(h[k] - 0.25 * e[k]) < 1e-14);
  }

  SECTION("static user: response is the sum of single-path responses") {
    SceneConfig sc;
    sc.seed = 5;
    const Scene s = make_scene(sc);
    UserState u;
    u.position = {40.0, 20.0};
    const auto paths = paths_from_geometry(s, u, ofdm);
    const auto all = cfr_subcarrier(paths, u, 1, array, ofdm);
    ComplexVector sum(4);
    for (const auto& p : paths) {
      const auto one = cfr_subcarrier({p}, u, 1, array, ofdm);
      for (std::size_t k = 0; k < 4; ++k) sum[k] += one[k];
    }
    for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(all[k] - sum[k]) <= 1e-12 * std::abs(all[k]) + 1e-15);
  }

  SECTION("random instances match a brute-force evaluation") {
    SeededRng rng(6);
    for (int i = 0; i < 30; ++i) {
      SceneConfig sc;
      sc.n_paths = 1 + rng.uniform_index(20);
      sc.line_of_sight = rng.uniform() < 0.5;
      sc.seed = rng.next_u64();
      const Scene s = make_scene(sc);
      const UserState u = random_user(s, rng);
      const CsiMatrix h = csi_at(s, u, array, ofdm);
      double err = 0, ref = 0;
      for (std::size_t k = 0; k < array.n_t; ++k)
        for (std::size_t l = 1; l <= ofdm.n_c; ++l) {
          const auto b = brute_force_entry(s, u, array, ofdm, k, l);
          err += std::norm(h.at(k, l - 1) - b);
          ref += std::norm(b);
        }
      CHECK(std::sqrt(err / ref) < 1e-10);
    }
  }
}

TEST_CASE("csi matrix", "[channel]") {
  ArrayConfig array;
  OfdmConfig ofdm;
  SceneConfig sc;
  const Scene s = make_scene(sc);
  UserState u;
  u.position = {30.0, 30.0};
  u.speed = 12.0;
  const auto paths = paths_from_geometry(s, u, ofdm);

  SECTION("one subcarrier") {
    OfdmConfig one = ofdm;
    one.n_c = 1;
    const CsiMatrix h = csi_matrix(paths_from_geometry(s, u, one), u, array, one);
    const auto col = cfr_subcarrier(paths_from_geometry(s, u, one), u, 1, array, one);
    REQUIRE(h.n_c() == 1);
    for (std::size_t k = 0; k < array.n_t; ++k) CHECK(h.at(k, 0) == col[k]);
  }

  SECTION("empty scene gives the zero matrix") {
    Scene empty = open_scene(false);
    const CsiMatrix h = csi_at(empty, u, array, ofdm);
    CHECK(frobenius(h) == 0.0);
  }

  SECTION("Frobenius norm over columns") {
    const CsiMatrix h = csi_matrix(paths, u, array, ofdm);
    double sum = 0;
    for (std::size_t l = 1; l <= ofdm.n_c; ++l)
      for (auto v : cfr_subcarrier(paths, u, l, array, ofdm)) sum += std::norm(v);
    CHECK(frobenius(h) == Approx(std::sqrt(sum)).epsilon(1e-13));
    CHECK(all_finite(h));
  }

  SECTION("linearity across single-path sub-scenes") {
    const CsiMatrix all = csi_matrix(paths, u, array, ofdm);
    CsiMatrix sum(array.n_t, ofdm.n_c);
    for (const auto& p : paths) sum = sum + csi_matrix({p}, u, array, ofdm);
    CHECK(frobenius(all - sum) <= 1e-10 * frobenius(all));
  }
}

TEST_CASE("user propagation", "[channel]") {
  const Bounds area;
  UserState u;
  u.position = {50.0, 30.0};
  u.speed = 10.0;
  u.heading = 0.0;
  CHECK(propagate_user(u, 0.0, area).user == u);
  const auto moved = propagate_user(u, 0.001, area);
  CHECK(moved.user.position.x == Approx(50.01).epsilon(1e-14));
  CHECK(moved.user.position.y == 30.0);
  CHECK(moved.user.speed == u.speed);
  CHECK(moved.user.heading == u.heading);
  u.heading = 1.1;
  const auto two = propagate_user(propagate_user(u, 0.35, area).user, 0.35, area);
  const auto one = propagate_user(u, 0.7, area);
  CHECK(two.user.position.x == Approx(one.user.position.x).epsilon(1e-14));
  CHECK(two.user.position.y == Approx(one.user.position.y).epsilon(1e-14));
  CHECK_FALSE(propagate_user(u, 100.0, area).inside);
  CHECK_THROWS_AS(propagate_user(u, -1.0, area), InvalidArgument);
}

TEST_CASE("static user has a time-invariant channel", "[channel][property]") {
  SeededRng rng(8);
  const ArrayConfig array;
  const OfdmConfig ofdm;
  for (int i = 0; i < 10; ++i) {
    SceneConfig sc;
    sc.seed = rng.next_u64();
    const Scene s = make_scene(sc);
    UserState u = random_user(s, rng);
    u.speed = 0.0;
    const CsiMatrix a = csi_at(s, u, array, ofdm);
    const CsiMatrix b = csi_at(s, propagate_user(u, rng.uniform(0, 1), s.area).user, array, ofdm);
    CHECK(a == b);
  }
}

TEST_CASE("analytic time derivative", "[channel][derivative]") {
  const ArrayConfig array;
  const OfdmConfig ofdm;

  SECTION("static user has zero derivative") {
    const Scene s = make_scene(SceneConfig{});
    UserState u;
    u.position = {20.0, 40.0};
    CHECK(frobenius(csi_time_derivative(s, u, array, ofdm)) == 0.0);
  }

  SECTION("motion on a circle around a scatterer leaves a bounce path unchanged") {
    Scene s = open_scene(false);
    s.scatterers.push_back({{50.0, 50.0}, 1.0});
    UserState u;
    u.position = {80.0, 50.0};
    u.speed = 20.0;
    u.heading = std::numbers::pi / 2;  // perpendicular to (scatterer - user)
    const CsiMatrix h = csi_at(s, u, array, ofdm);
    CHECK(frobenius(csi_time_derivative(s, u, array, ofdm)) <= 1e-9 * frobenius(h));
  }

  SECTION("random scenes match central differences") {
    SeededRng rng(9);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) worst = std::max(worst, theorem1_error(random_derivative_case(rng), array, ofdm));
    CHECK(worst < 1e-3);
  }

  SECTION("independent central differences on the brute-force response") {
    SeededRng rng(10);
    ArrayConfig a4;
    a4.n_t = 3;
    OfdmConfig o4;
    o4.n_c = 4;
    for (int i = 0; i < 20; ++i) {
      const DerivativeCase c = random_derivative_case(rng);
      const CsiMatrix d = csi_time_derivative(c.scene, c.user, a4, o4);
      const double h = 1e-7;
      UserState ahead = c.user, behind = c.user;
      const double vx = c.user.speed * std::cos(c.user.heading), vy = c.user.speed * std::sin(c.user.heading);
      ahead.position = {c.user.position.x + h * vx, c.user.position.y + h * vy};
      behind.position = {c.user.position.x - h * vx, c.user.position.y - h * vy};
      double err = 0, ref = 0;
      for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t l = 1; l <= 4; ++l) {
          const auto fd = (brute_force_entry(c.scene, ahead, a4, o4, k, l) - brute_force_entry(c.scene, behind, a4, o4, k, l)) / (2 * h);
          err += std::norm(d.at(k, l - 1) - fd);
          ref += std::norm(fd);
        }
      CHECK(std::sqrt(err / ref) < 1e-3);
    }
  }
}

TEST_CASE("noise injection", "[channel][noise]") {
  SeededRng rng(11);
  const Scene s = make_scene(SceneConfig{});
  UserState u;
  u.position = {60.0, 30.0};
  const CsiMatrix h = csi_at(s, u, ArrayConfig{}, OfdmConfig{});

  CHECK(add_noise(h, 0.0, rng) == h);
  CHECK_FALSE(add_noise(h, 0.1, rng) == h);
  CHECK_THROWS_AS(add_noise(CsiMatrix(8, 16), 0.1, rng), InvalidArgument);
  CHECK_THROWS_AS(add_noise(h, -0.1, rng), InvalidArgument);

  for (double target : {0.01, 0.1, 1.0}) {
    double sum = 0;
    for (int i = 0; i < 1000; ++i) sum += relative_error(add_noise(h, target, rng), h);
    CHECK(std::abs(sum / 1000 - target) <= 0.05 * target);
  }
}

TEST_CASE("sequence generation", "[channel][sequence]") {
  const Scene s = make_scene(SceneConfig{});
  const ArrayConfig array;
  const OfdmConfig ofdm;

  SECTION("static user without noise: observation equals target") {
    GenerationConfig g;
    g.n_obs = 1;
    g.speed_min = g.speed_max = 0.0;
    SeededRng rng(1);
    const CsiSequence seq = generate_sequence(s, ofdm, array, g, rng);
    CHECK(seq.observations[0] == seq.target);
  }

  SECTION("uniform policy gives an arithmetic progression") {
    GenerationConfig g;
    g.n_obs = 6;
    g.interval = 2e-3;
    SeededRng rng(2);
    const CsiSequence seq = generate_sequence(s, ofdm, array, g, rng);
    REQUIRE(seq.times.size() == 7);
    for (std::size_t i = 0; i < seq.times.size(); ++i) CHECK(seq.times[i] == Approx(2e-3 * static_cast<double>(i)));
  }

  SECTION("jitter policy keeps timestamps increasing within bounds") {
    GenerationConfig g;
    g.policy = IntervalPolicy::jitter;
    g.jitter = 0.9;
    SeededRng rng(3);
    for (int i = 0; i < 20; ++i) {
      const CsiSequence seq = generate_sequence(s, ofdm, array, g, rng);
      for (std::size_t k = 1; k < seq.times.size(); ++k) {
        const double gap = seq.times[k] - seq.times[k - 1];
        CHECK(gap >= 0.1 * g.interval - 1e-15);
        CHECK(gap <= 1.9 * g.interval + 1e-15);
      }
    }
  }

  SECTION("same seed reproduces the sequence exactly") {
    GenerationConfig g;
    g.noise.level = 0.3;
    SeededRng a(4), b(4);
    CHECK(generate_sequence(s, ofdm, array, g, a) == generate_sequence(s, ofdm, array, g, b));
  }

  SECTION("noise annotations match the injected noise") {
    GenerationConfig g;
    g.n_obs = 5;
    g.noise.level = 0.5;
    g.noise.fraction = 0.2;
    g.noise.low_ratio = 0.1;
    GenerationConfig clean_cfg = g;
    clean_cfg.noise.level = 0.0;
    SeededRng a(5), b(5);
    const CsiSequence noisy = generate_sequence(s, ofdm, array, g, a);
    const CsiSequence clean = generate_sequence(s, ofdm, array, clean_cfg, b);
    CHECK(noisy.times == clean.times);
    CHECK(noisy.target == clean.target);
    std::size_t high = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(noisy.noise_nmse[i] == Approx(relative_error(noisy.observations[i], clean.observations[i])));
      CHECK(noisy.noise_nmse[i] > 0.0);
      if (noisy.noise_nmse[i] > 0.2) ++high;
    }
    CHECK(high >= 1);
  }
}

TEST_CASE("dataset generation", "[channel][dataset]") {
  DatasetConfig cfg = small_dataset_config(10, 3);
  const Dataset ds = generate_dataset(cfg);
  REQUIRE(ds.samples.size() == 10);
  CHECK(ds.train.size() == 8);
  CHECK(ds.test.size() == 2);

  std::vector<std::size_t> all = ds.train;
  all.insert(all.end(), ds.test.begin(), ds.test.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(all[i] == i);

  const Dataset again = generate_dataset(cfg, 3);
  CHECK(again.train == ds.train);
  CHECK(again.test == ds.test);
  for (std::size_t i = 0; i < 10; ++i) CHECK(again.samples[i] == ds.samples[i]);

  cfg.seed = 4;
  const Dataset other = generate_dataset(cfg);
  CHECK_FALSE(other.samples[0] == ds.samples[0]);

  DatasetConfig big = small_dataset_config(1000, 3);
  big.generation.n_obs = 1;
  big.ofdm.n_c = 1;
  big.array.n_t = 1;
  CHECK(generate_dataset(big).train.size() == 800);
}
