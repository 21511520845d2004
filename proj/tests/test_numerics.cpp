#include "support.hpp"

using namespace testing;
using Catch::Approx;

TEST_CASE("splitmix64 matches the published reference stream", "[rng]") {
  // First outputs for state 0 from the reference C implementation.
  std::uint64_t s = 0;
  CHECK(splitmix64(s) == 0xe220a8397b1dcdafull);
  CHECK(splitmix64(s) == 0x6e789e6aa1b965f4ull);
  CHECK(splitmix64(s) == 0x06c45d188009454full);
}

TEST_CASE("xoshiro256** reproduces an independent re-implementation", "[rng]") {
  auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
  std::uint64_t sm = 12345, st[4];
  for (auto& w : st) {
    std::uint64_t z = (sm += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    w = z ^ (z >> 31);
  }
  SeededRng rng(12345);
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t expect = rotl(st[1] * 5, 7) * 9;
    const std::uint64_t t = st[1] << 17;
    st[2] ^= st[0];
    st[3] ^= st[1];
    st[1] ^= st[2];
    st[0] ^= st[3];
    st[2] ^= t;
    st[3] = rotl(st[3], 45);
    REQUIRE(rng.next_u64() == expect);
  }
}

TEST_CASE("rng streams are deterministic and bounded", "[rng]") {
  SeededRng a(99), b(99), c(100);
  bool differs = false;
  for (int i = 0; i < 200; ++i) {
    const double u = a.uniform();
    CHECK(u == b.uniform());
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    differs = differs || u != c.uniform();
    const auto k = a.uniform_index(7);
    CHECK(k == b.uniform_index(7));
    CHECK(k < 7);
  }
  CHECK(differs);
  CHECK(a.child(3).next_u64() == b.child(3).next_u64());
  CHECK(a.child(3).next_u64() != a.child(4).next_u64());
}

TEST_CASE("normal variates have unit moments", "[rng]") {
  SeededRng rng(5);
  const int n = 200000;
  double m = 0, m2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    m += z;
    m2 += z * z;
  }
  m /= n;
  m2 /= n;
  CHECK(std::abs(m) < 0.01);
  CHECK(std::abs(m2 - 1.0) < 0.02);
}

TEST_CASE("dot product is independent of accumulator layout up to rounding", "[matrix]") {
  SeededRng rng(1);
  for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 33u, 257u}) {
    Vector a = random_vector(n, rng), b = random_vector(n, rng);
    long double ref = 0;
    for (std::size_t i = 0; i < n; ++i) ref += static_cast<long double>(a[i]) * b[i];
    CHECK(dot(a, b) == Approx(static_cast<double>(ref)).margin(1e-13));
  }
}

TEST_CASE("affine and transposed products agree with naive loops", "[matrix]") {
  SeededRng rng(2);
  Matrix w(5, 3);
  for (auto& v : w.data) v = rng.uniform(-1, 1);
  const Vector x = random_vector(3, rng), bias = random_vector(5, rng), g = random_vector(5, rng);
  CHECK(max_abs_diff(affine(w, x, bias), naive_affine(w, bias, x)) < 1e-14);
  Vector out(3, 0.0);
  add_transposed_product(w, g, out);
  for (std::size_t c = 0; c < 3; ++c) {
    double ref = 0;
    for (std::size_t r = 0; r < 5; ++r) ref += w(r, c) * g[r];
    CHECK(out[c] == Approx(ref).margin(1e-14));
  }
}

TEST_CASE("mlp forward on degenerate nets", "[mlp]") {
  MlpParams zero({3, 4, 2});
  CHECK(mlp_forward(zero, Vector{1.0, -2.0, 3.0}) == Vector{0.0, 0.0});
  MlpParams unit({1, 1, 1});
  unit.layers[0].weight(0, 0) = 1.0;
  unit.layers[1].weight(0, 0) = 1.0;
  CHECK(mlp_forward(unit, Vector{0.0}) == Vector{0.0});
  CHECK(mlp_forward(unit, Vector{0.5})[0] == Approx(std::tanh(0.5)));
  CHECK_THROWS_AS(mlp_forward(zero, Vector{1.0}), InvalidArgument);
}

TEST_CASE("mlp forward matches a straightforward re-implementation", "[mlp]") {
  SeededRng rng(3);
  for (int draw = 0; draw < 10; ++draw) {
    MlpParams p({4, 8, 6, 4});
    init_uniform(p, rng);
    const Vector x = random_vector(4, rng, 2.0);
    CHECK(max_abs_diff(mlp_forward(p, x), naive_mlp(p, x)) < 1e-13);
    CHECK(bitwise_equal(mlp_forward(p, x), mlp_forward_cached(p, x).output));
  }
}

TEST_CASE("mlp vjp special cases", "[mlp]") {
  SeededRng rng(4);
  MlpParams p({4, 8, 4});
  init_uniform(p, rng);
  const Vector x = random_vector(4, rng);
  const MlpVjp z = mlp_vjp(p, x, Vector(4, 0.0));
  CHECK(z.x_grad == Vector(4, 0.0));
  for (double v : flatten(z.param_grads)) CHECK(v == 0.0);

  MlpParams lin({3, 2});
  init_uniform(lin, rng);
  const Vector cot{0.7, -1.3};
  const MlpVjp l = mlp_vjp(lin, Vector{0.1, 0.2, 0.3}, cot);
  for (std::size_t c = 0; c < 3; ++c)
    CHECK(l.x_grad[c] == Approx(lin.layers[0].weight(0, c) * cot[0] + lin.layers[0].weight(1, c) * cot[1]));
  CHECK_THROWS_AS(mlp_vjp(p, x, Vector(3, 1.0)), InvalidArgument);
}

TEST_CASE("mlp vjp matches central differences on 4-8-4 nets", "[mlp][gradcheck]") {
  SeededRng rng(5);
  for (int draw = 0; draw < 20; ++draw) {
    MlpParams p({4, 8, 4});
    init_uniform(p, rng);
    const Vector x = random_vector(4, rng), cot = random_vector(4, rng);
    const MlpVjp v = mlp_vjp(p, x, cot);
    const Vector fx = central_gradient([&](const Vector& xx) { return dot(cot, naive_mlp(p, xx)); }, x);
    const Vector fp = central_gradient(
        [&](const Vector& flat) {
          MlpParams q = p;
          assign_flat(q, flat);
          return dot(cot, naive_mlp(q, x));
        },
        flatten(p));
    CHECK(relative_error(v.x_grad, fx) < 1e-5);
    CHECK(relative_error(flatten(v.param_grads), fp) < 1e-5);
  }
}

TEST_CASE("mlp vjp is linear in the cotangent", "[mlp][property]") {
  SeededRng rng(6);
  MlpParams p({3, 6, 3});
  init_uniform(p, rng);
  const Vector x = random_vector(3, rng), u = random_vector(3, rng), w = random_vector(3, rng);
  const double a = 0.37, b = -1.9;
  Vector mix(3);
  for (int i = 0; i < 3; ++i) mix[i] = a * u[i] + b * w[i];
  const MlpVjp vu = mlp_vjp(p, x, u), vw = mlp_vjp(p, x, w), vm = mlp_vjp(p, x, mix);
  for (int i = 0; i < 3; ++i) CHECK(vm.x_grad[i] == Approx(a * vu.x_grad[i] + b * vw.x_grad[i]).margin(1e-14));
  const Vector fu = flatten(vu.param_grads), fw = flatten(vw.param_grads), fm = flatten(vm.param_grads);
  for (std::size_t i = 0; i < fm.size(); ++i) CHECK(fm[i] == Approx(a * fu[i] + b * fw[i]).margin(1e-14));
}

TEST_CASE("lstm forward special cases", "[lstm]") {
  LstmParams zero(3, 2);
  const LstmOutput o = lstm_cell_forward(zero, Vector{1, 2, 3}, Vector{0.5, -0.5}, Vector{0.0, 0.0});
  CHECK(o.c == Vector{0.0, 0.0});
  CHECK(o.h == Vector{0.0, 0.0});

  LstmParams keep(3, 2);
  for (double& b : keep.forget_gate.bias) b = 20.0;
  const Vector c{0.3, -0.8};
  const LstmOutput k = lstm_cell_forward(keep, Vector{1, 2, 3}, Vector{0.1, 0.2}, c);
  CHECK(k.c[0] == Approx(c[0]).margin(1e-8));
  CHECK(k.c[1] == Approx(c[1]).margin(1e-8));
  CHECK_THROWS_AS(lstm_cell_forward(zero, Vector{1, 2}, Vector{0, 0}, Vector{0, 0}), InvalidArgument);
}

TEST_CASE("lstm forward matches a straightforward re-implementation", "[lstm]") {
  SeededRng rng(7);
  for (int draw = 0; draw < 10; ++draw) {
    LstmParams p(3, 5);
    init_uniform(p, rng);
    const Vector x = random_vector(3, rng), h = random_vector(5, rng), c = random_vector(5, rng);
    const LstmOutput o = lstm_cell_forward(p, x, h, c);
    const NaiveLstm ref = naive_lstm(p, x, h, c);
    CHECK(max_abs_diff(o.h, ref.h) < 1e-14);
    CHECK(max_abs_diff(o.c, ref.c) < 1e-14);
  }
}

TEST_CASE("lstm backward", "[lstm][gradcheck]") {
  SeededRng rng(8);
  LstmParams p(3, 4);
  init_uniform(p, rng);
  const Vector x = random_vector(3, rng), h = random_vector(4, rng), c = random_vector(4, rng);

  SECTION("zero cotangents give zero gradients") {
    const LstmOutput o = lstm_cell_forward(p, x, h, c);
    LstmParams g = zeros_like(p);
    const LstmGrads r = lstm_cell_backward(p, o.cache, Vector(4, 0.0), Vector(4, 0.0), g);
    CHECK(r.x_grad == Vector(3, 0.0));
    CHECK(r.h_prev_grad == Vector(4, 0.0));
    CHECK(r.c_prev_grad == Vector(4, 0.0));
    for (double v : flatten(g)) CHECK(v == 0.0);
  }

  SECTION("random cells match central differences") {
    for (int draw = 0; draw < 20; ++draw) CHECK(lstm_gradcheck(rng) < 1e-5);
  }

  SECTION("two-step unroll gradients match single-shot differences") {
    const Vector x2 = random_vector(3, rng), hg = random_vector(4, rng);
    auto unrolled = [&](const LstmParams& q, const Vector& x1) {
      const NaiveLstm a = naive_lstm(q, x1, h, c);
      const NaiveLstm b = naive_lstm(q, x2, a.h, a.c);
      return dot(hg, b.h);
    };
    const LstmOutput a = lstm_cell_forward(p, x, h, c);
    const LstmOutput b = lstm_cell_forward(p, x2, a.h, a.c);
    LstmParams g = zeros_like(p);
    const LstmGrads gb = lstm_cell_backward(p, b.cache, hg, Vector(4, 0.0), g);
    const LstmGrads ga = lstm_cell_backward(p, a.cache, gb.h_prev_grad, gb.c_prev_grad, g);
    const Vector fd_params = central_gradient(
        [&](const Vector& flat) {
          LstmParams q = p;
          assign_flat(q, flat);
          return unrolled(q, x);
        },
        flatten(p));
    CHECK(relative_error(flatten(g), fd_params) < 1e-5);
    CHECK(relative_error(ga.x_grad, central_gradient([&](const Vector& v) { return unrolled(p, v); }, x)) < 1e-5);
  }

  SECTION("mismatched caches are rejected") {
    LstmParams other(2, 4);
    const LstmOutput o = lstm_cell_forward(other, Vector{1, 2}, h, c);
    LstmParams g = zeros_like(p);
    CHECK_THROWS_AS(lstm_cell_backward(p, o.cache, Vector(4, 1.0), Vector(4, 1.0), g), InvalidArgument);
    CHECK_THROWS_AS(lstm_cell_backward(p, LstmCache{}, Vector(4, 1.0), Vector(4, 1.0), g), InvalidArgument);
  }
}

TEST_CASE("vanilla rnn cell gradients match central differences", "[rnn][gradcheck]") {
  SeededRng rng(9);
  for (int draw = 0; draw < 10; ++draw) {
    RnnParams p(3, 4);
    init_uniform(p, rng);
    const Vector x = random_vector(3, rng), h = random_vector(4, rng), hg = random_vector(4, rng);
    auto scalar = [&](const RnnParams& q, const Vector& xx, const Vector& hh) {
      RnnCache rc;
      return dot(hg, rnn_cell_forward(q, xx, hh, rc));
    };
    RnnCache cache;
    rnn_cell_forward(p, x, h, cache);
    RnnParams g = zeros_like(p);
    const RnnGrads r = rnn_cell_backward(p, cache, hg, g);
    CHECK(relative_error(r.x_grad, central_gradient([&](const Vector& v) { return scalar(p, v, h); }, x)) < 1e-5);
    CHECK(relative_error(r.h_prev_grad, central_gradient([&](const Vector& v) { return scalar(p, x, v); }, h)) < 1e-5);
    const Vector fp = central_gradient(
        [&](const Vector& flat) {
          RnnParams q = p;
          assign_flat(q, flat);
          return scalar(q, x, h);
        },
        flatten(p));
    CHECK(relative_error(flatten(g), fp) < 1e-5);
  }
}

TEST_CASE("parameter initialization is seeded and bounded", "[init]") {
  SeededRng a(10), b(10);
  MlpParams p({16, 8, 4}), q({16, 8, 4});
  init_uniform(p, a);
  init_uniform(q, b);
  CHECK(bitwise_equal_params(p, q));
  for (double w : p.layers[0].weight.data) CHECK(std::abs(w) <= 1.0 / std::sqrt(16.0));
  for (double w : p.layers[1].weight.data) CHECK(std::abs(w) <= 1.0 / std::sqrt(8.0));
  LstmParams l(3, 4);
  init_uniform(l, a);
  for (double v : l.forget_gate.bias) CHECK(v == 1.0);
}

TEST_CASE("adam", "[adam]") {
  SECTION("zero gradient leaves parameters unchanged and advances the counter") {
    SeededRng rng(11);
    MlpParams p({2, 3, 2});
    init_uniform(p, rng);
    const MlpParams before = p;
    AdamState s = make_adam_state(p);
    adam_step(s, p, zeros_like(p), 1e-3);
    CHECK(s.step == 1);
    CHECK(bitwise_equal_params(p, before));
  }

  SECTION("first step moves each parameter by -lr * sign(g)") {
    LinearParams p(2, 2), g(2, 2);
    g.weight.data = {0.5, -2.0, 1e-3, -7.0};
    g.bias = {3.0, -0.25};
    AdamState s = make_adam_state(p, 0.9, 0.999, 0.0);
    adam_step(s, p, g, 0.01);
    const Vector f = flatten(p), gf = flatten(g);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] == Approx(-0.01 * (gf[i] > 0 ? 1 : -1)).epsilon(1e-12));
  }

  SECTION("quadratic bowl: matches an independent scalar recursion and decreases monotonically") {
    LinearParams p(1, 1);
    p.weight(0, 0) = 1.0;
    p.bias[0] = 0.0;
    AdamState s = make_adam_state(p);
    double w = 1.0, m = 0.0, v = 0.0;
    double prev = 1.0;
    for (int t = 1; t <= 100; ++t) {
      LinearParams g(1, 1);
      g.weight(0, 0) = 2.0 * p.weight(0, 0);
      adam_step(s, p, g, 0.1);
      const double gw = 2.0 * w;
      m = 0.9 * m + 0.1 * gw;
      v = 0.999 * v + 0.001 * gw * gw;
      w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      CHECK(p.weight(0, 0) == Approx(w).margin(1e-12));
      if (t <= 10) {
        CHECK(std::abs(p.weight(0, 0)) < prev);
        prev = std::abs(p.weight(0, 0));
      }
    }
    CHECK(std::abs(p.weight(0, 0)) < 0.5);
  }

  SECTION("non-finite gradients are reported by block name and leave state untouched") {
    MlpParams p({2, 2}), g({2, 2});
    g.layers[0].bias[1] = std::numeric_limits<double>::quiet_NaN();
    AdamState s = make_adam_state(p);
    try {
      adam_step(s, p, g, 0.1);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find(".0.bias") != std::string::npos);
    }
    CHECK(s.step == 0);
  }
}
