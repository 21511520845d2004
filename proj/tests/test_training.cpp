#include "support.hpp"

using namespace testing;
using Catch::Approx;

namespace {

const CsiDims kDims{2, 2};

SolverConfig solver_of(SolverMethod m, double step = 0.5, double tol = 1e-6) {
  SolverConfig c;
  c.method = m;
  c.step = step;
  c.rtol = tol;
  c.atol = tol * 1e-2;
  return c;
}

}  // namespace

TEST_CASE("mse loss", "[training][loss]") {
  const Vector t{0.5, -1.0, 2.0, 0.0};
  CHECK(mse_loss(t, t).loss == 0.0);
  CHECK(mse_loss(Vector(6, 1.0), Vector(6, 0.0)).loss == 1.0);
  CHECK_THROWS_AS(mse_loss(Vector(3), Vector(4)), InvalidArgument);

  SeededRng rng(1);
  const Vector p = random_vector(8, rng), y = random_vector(8, rng);
  const Vector fd = central_gradient([&](const Vector& q) { return mse_loss(q, y).loss; }, p);
  CHECK(relative_error(mse_loss(p, y).cotangent, fd) < 1e-8);

  const CsiSequence s = uniform_sequence(2, 1e-3, kDims, rng);
  const CsiMseResult c = mse_loss(s.observations[0], s.observations[1]);
  CHECK(c.loss == mse_loss(csi_splice(s.observations[0]), csi_splice(s.observations[1])).loss);
  CHECK(csi_splice(c.cotangent) == mse_loss(csi_splice(s.observations[0]), csi_splice(s.observations[1])).cotangent);
}

TEST_CASE("engine names roundtrip", "[training]") {
  for (auto e : {GradientEngine::direct, GradientEngine::adjoint, GradientEngine::checkpoint_adjoint})
    CHECK(gradient_engine_from_string(to_string(e)) == e);
  CHECK(gradient_engine_from_string("checkpoint_adjoint") == GradientEngine::checkpoint_adjoint);
  CHECK_THROWS_AS(gradient_engine_from_string("reverse"), InvalidArgument);
}

TEST_CASE("zero cotangent gives zero gradients for every engine", "[training][engines]") {
  SeededRng rng(2);
  const CsiSequence seq = irregular_sequence(2, rng);
  for (auto k : {ModelKind::ode_rnn, ModelKind::neural_ode, ModelKind::rnn, ModelKind::lstm}) {
    const Model m = make_model(tiny_config(k), kDims, 2);
    for (auto e : {GradientEngine::direct, GradientEngine::adjoint, GradientEngine::checkpoint_adjoint}) {
      Prediction p = forward(m, seq, solver_of(SolverMethod::euler), recording_for(e));
      const GradBundle g = gradients(m, p.cache, CsiMatrix(2, 2), e);
      for (double v : flatten(g.grads)) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("direct gradients match finite differences on tiny models", "[training][engines][gradcheck]") {
  SeededRng rng(3);
  for (auto method : {SolverMethod::euler, SolverMethod::rk4}) {
    for (auto k : {ModelKind::ode_rnn, ModelKind::neural_ode, ModelKind::rnn, ModelKind::lstm}) {
      for (std::size_t n : {2u, 3u}) {
        const Model m = make_model(tiny_config(k), kDims, rng.next_u64());
        const CsiSequence seq = irregular_sequence(n, rng);
        const SolverConfig s = solver_of(method, 0.5);
        const SampleGradient g = sample_gradient(m, seq, s, GradientEngine::direct);
        CHECK(g.loss == loss_at(m, seq, s));
        CHECK(worst_block_error(g.grads, fd_gradient(m, seq, s)) < 1e-4);
      }
    }
  }
}

TEST_CASE("checkpointed adjoint equals direct bitwise on fixed-step solvers", "[training][engines][property]") {
  SeededRng rng(4);
  for (auto method : {SolverMethod::euler, SolverMethod::rk4}) {
    for (auto k : {ModelKind::ode_rnn, ModelKind::neural_ode}) {
      for (int i = 0; i < 5; ++i) {
        ModelConfig cfg = tiny_config(k, 6);
        cfg.normalize = true;
        const Model m = make_model(cfg, kDims, rng.next_u64());
        const CsiSequence seq = irregular_sequence(3, rng);
        const SolverConfig s = solver_of(method, 0.3);
        const SampleGradient a = sample_gradient(m, seq, s, GradientEngine::direct);
        const SampleGradient b = sample_gradient(m, seq, s, GradientEngine::checkpoint_adjoint);
        CHECK(bitwise_equal_params(a.grads, b.grads));
        CHECK(a.loss == b.loss);
      }
    }
  }
}

TEST_CASE("checkpointed adjoint matches finite differences with an adaptive forward", "[training][engines][gradcheck]") {
  SeededRng rng(5);
  for (auto k : {ModelKind::ode_rnn, ModelKind::neural_ode}) {
    for (int i = 0; i < 3; ++i) {
      const Model m = make_model(tiny_config(k), kDims, rng.next_u64());
      const CsiSequence seq = irregular_sequence(3, rng);
      const SolverConfig s = solver_of(SolverMethod::rk45_adaptive, 0.5, 1e-10);
      const SampleGradient g = sample_gradient(m, seq, s, GradientEngine::checkpoint_adjoint);
      CHECK(worst_block_error(g.grads, fd_gradient(m, seq, s)) < 1e-4);
    }
  }
}

TEST_CASE("continuous adjoint", "[training][engines][adjoint]") {
  SECTION("linear dynamics: matrix-exponential contraction") {
    SeededRng rng(6);
    for (int i = 0; i < 10; ++i) {
      MlpParams f({2, 2});
      for (double& w : f.layers[0].weight.data) w = rng.uniform(-1, 1);
      const double t0 = rng.uniform(0, 1), t1 = t0 + rng.uniform(0.2, 2.0);
      const double span = t1 - t0;
      const Vector h0{rng.uniform(-1, 1), rng.uniform(-1, 1)}, g{rng.uniform(-1, 1), rng.uniform(-1, 1)};
      const auto& A = f.layers[0].weight;
      const auto E = expm2({A(0, 0) * span, A(0, 1) * span, A(1, 0) * span, A(1, 1) * span});
      const Vector h_end{static_cast<double>(E[0] * h0[0] + E[1] * h0[1]),
                         static_cast<double>(E[2] * h0[0] + E[3] * h0[1])};
      MlpParams grads = zeros_like(f);
      const Vector a0 = segment_backward_adjoint(f, h_end, t0, t1, solver_of(SolverMethod::rk45_adaptive, 0.5, 1e-10), g, grads);
      // a(t0) = exp(A^T span) g
      const double ex0 = static_cast<double>(E[0] * g[0] + E[2] * g[1]);
      const double ex1 = static_cast<double>(E[1] * g[0] + E[3] * g[1]);
      CHECK(std::abs(a0[0] - ex0) < 1e-6);
      CHECK(std::abs(a0[1] - ex1) < 1e-6);
      // dL/dA for L = g^T exp(A span) h0, by differences of the closed form.
      const Vector fd = central_gradient(
          [&](const Vector& w) {
            const auto Ew = expm2({w[0] * span, w[1] * span, w[2] * span, w[3] * span});
            return static_cast<double>(g[0] * (Ew[0] * h0[0] + Ew[1] * h0[1]) + g[1] * (Ew[2] * h0[0] + Ew[3] * h0[1]));
          },
          A.data);
      CHECK(max_abs_diff(grads.layers[0].weight.data, fd) < 1e-6);
    }
  }

  SECTION("zero-length segments reduce to recurrent backprop bitwise") {
    SeededRng rng(7);
    const Model m = make_model(tiny_config(ModelKind::ode_rnn), kDims, 7);
    CsiSequence seq = uniform_sequence(3, 1e-3, kDims, rng);
    std::fill(seq.times.begin(), seq.times.end(), 0.0);
    const SolverConfig s = solver_of(SolverMethod::rk4, 0.5);
    const SampleGradient a = sample_gradient(m, seq, s, GradientEngine::adjoint);
    const SampleGradient d = sample_gradient(m, seq, s, GradientEngine::direct);
    CHECK(bitwise_equal_params(a.grads, d.grads));
  }

  SECTION("agrees with direct gradients on tiny models") {
    SeededRng rng(8);
    for (auto k : {ModelKind::ode_rnn, ModelKind::neural_ode}) {
      for (int i = 0; i < 5; ++i) {
        const Model m = make_model(tiny_config(k), kDims, rng.next_u64());
        const CsiSequence seq = irregular_sequence(3, rng);
        const SampleGradient a = sample_gradient(m, seq, solver_of(SolverMethod::rk45_adaptive, 0.5, 1e-8), GradientEngine::adjoint);
        const SampleGradient d = sample_gradient(m, seq, solver_of(SolverMethod::rk4, 0.02), GradientEngine::direct);
        CHECK(relative_error(flatten(a.grads), flatten(d.grads)) < 1e-3);
      }
    }
  }

  SECTION("matches finite differences at tight tolerances") {
    SeededRng rng(9);
    for (auto k : {ModelKind::ode_rnn, ModelKind::neural_ode}) {
      const Model m = make_model(tiny_config(k), kDims, rng.next_u64());
      const CsiSequence seq = irregular_sequence(2, rng);
      const SolverConfig s = solver_of(SolverMethod::rk45_adaptive, 0.5, 1e-11);
      const SampleGradient g = sample_gradient(m, seq, s, GradientEngine::adjoint);
      CHECK(worst_block_error(g.grads, fd_gradient(m, seq, s)) < 1e-4);
    }
  }
}

TEST_CASE("engine memory counters", "[training][engines]") {
  SeededRng rng(10);
  const Model m = make_model(tiny_config(ModelKind::ode_rnn, 6), kDims, 10);
  const CsiSequence seq = irregular_sequence(3, rng);
  const std::size_t d = 6;
  for (auto method : {SolverMethod::euler, SolverMethod::rk4}) {
    const SolverConfig s = solver_of(method, 0.2);
    const Prediction direct = forward(m, seq, s, recording_for(GradientEngine::direct));
    const Prediction ckpt = forward(m, seq, s, recording_for(GradientEngine::checkpoint_adjoint));
    const Prediction adj = forward(m, seq, s, recording_for(GradientEngine::adjoint));
    const std::size_t steps = ckpt.cache.accepted_steps();
    CHECK(steps > 0);
    CHECK(ckpt.cache.stored_segment_floats() <= steps * (d + 2));
    CHECK(direct.cache.stored_segment_floats() > ckpt.cache.stored_segment_floats());
    CHECK(adj.cache.stored_segment_floats() == 0);
  }
  const SolverConfig adaptive = solver_of(SolverMethod::rk45_adaptive, 0.5, 1e-8);
  const Prediction ckpt = forward(m, seq, adaptive, StepRecording::checkpoints);
  CHECK(ckpt.cache.stored_segment_floats() <= ckpt.cache.accepted_steps() * (d + 2));
}

TEST_CASE("engine preconditions", "[training][engines]") {
  SeededRng rng(11);
  const Model m = make_model(tiny_config(ModelKind::ode_rnn), kDims, 11);
  const CsiSequence seq = irregular_sequence(2, rng);
  const CsiMatrix cot = uniform_sequence(1, 1e-3, kDims, rng).target;

  Prediction adaptive = forward(m, seq, solver_of(SolverMethod::rk45_adaptive), StepRecording::stages);
  CHECK_THROWS_AS(direct_gradients(m, adaptive.cache, cot), InvalidArgument);

  Prediction bare = forward(m, seq, solver_of(SolverMethod::euler), StepRecording::boundaries);
  CHECK_THROWS_AS(checkpoint_adjoint_gradients(m, bare.cache, cot), InvalidArgument);
  CHECK_THROWS_AS(direct_gradients(m, bare.cache, cot), InvalidArgument);

  Prediction once = forward(m, seq, solver_of(SolverMethod::euler), StepRecording::stages);
  const GradBundle first = direct_gradients(m, once.cache, cot);
  CHECK_THROWS_AS(direct_gradients(m, once.cache, cot), InvalidArgument);

  Prediction again = forward(m, seq, solver_of(SolverMethod::euler), StepRecording::stages);
  CHECK(bitwise_equal_params(direct_gradients(m, again.cache, cot).grads, first.grads));
}

TEST_CASE("adjoint reports backward-integration failures by segment", "[training][engines]") {
  SeededRng rng(12);
  Model m = make_model(tiny_config(ModelKind::ode_rnn), kDims, 12);
  const CsiSequence seq = irregular_sequence(2, rng);
  Prediction p = forward(m, seq, solver_of(SolverMethod::rk45_adaptive), StepRecording::boundaries);
  auto& ode = std::get<OdeRnnModel>(m);
  for (double& w : ode.dynamics.layers[0].weight.data) w *= 1e3;  // stiff backward problem
  p.cache.solver.max_steps = 5;
  try {
    adjoint_gradients(m, p.cache, uniform_sequence(1, 1e-3, kDims, rng).target);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("segment") != std::string::npos);
  }
}

namespace {

Dataset smoke_dataset(std::size_t n, std::uint64_t seed = 21) { return generate_dataset(small_dataset_config(n, seed)); }

TrainConfig quick_config(GradientEngine e, std::size_t steps) {
  TrainConfig c;
  c.steps = steps;
  c.engine = e;
  c.solver = SolverConfig{SolverMethod::euler, 1.0};
  c.eval_every = steps;
  c.eval_samples = 4;
  return c;
}

}  // namespace

TEST_CASE("training loop contracts", "[training][train]") {
  const Dataset ds = smoke_dataset(40);
  ModelConfig mc;
  mc.hidden = 8;
  mc.dynamics_hidden = {8};
  const CsiDims dims{ds.n_t(), ds.n_c()};

  SECTION("zero learning rate leaves parameters unchanged") {
    const Model m = make_model(mc, dims, 1);
    TrainConfig c = quick_config(GradientEngine::checkpoint_adjoint, 10);
    c.lr = 0.0;
    const TrainResult r = train(m, ds, c);
    CHECK(bitwise_equal_params(r.model, m));
    CHECK(r.step_loss.size() == 10);
  }

  SECTION("same seed reproduces the trajectory; thread count does not matter") {
    const Model m = make_model(mc, dims, 2);
    TrainConfig c = quick_config(GradientEngine::checkpoint_adjoint, 12);
    c.eval_every = 4;
    const TrainResult a = train(m, ds, c);
    const TrainResult b = train(m, ds, c);
    c.threads = 3;
    const TrainResult t = train(m, ds, c);
    CHECK(bitwise_equal(a.step_loss, b.step_loss));
    CHECK(bitwise_equal(a.step_loss, t.step_loss));
    CHECK(bitwise_equal_params(a.model, b.model));
    CHECK(bitwise_equal_params(a.model, t.model));
    REQUIRE(a.log.size() == 4);
    for (std::size_t i = 0; i < a.log.size(); ++i) {
      CHECK(a.log[i].step == b.log[i].step);
      CHECK(a.log[i].train_mse == b.log[i].train_mse);
      CHECK(a.log[i].test_nmse == b.log[i].test_nmse);
    }
    CHECK(a.log.back().final);
    CHECK(a.log.back().step == 12);
    c.threads = 1;
    c.seed = 99;
    CHECK_FALSE(bitwise_equal(train(m, ds, c).step_loss, a.step_loss));
  }

  SECTION("batch gradient is the mean over samples") {
    DatasetConfig one = small_dataset_config(1, 5);
    one.train_fraction = 1.0;
    const Dataset single = generate_dataset(one);
    REQUIRE(single.train.size() == 1);
    const Model m = make_model(mc, dims, 3);
    TrainConfig c = quick_config(GradientEngine::direct, 5);
    c.batch = 1;
    const Vector a = flatten(train(m, single, c).model);
    c.batch = 7;
    const Vector b = flatten(train(m, single, c).model);
    CHECK(max_abs_diff(a, b) < 1e-12);
  }

  SECTION("non-finite loss aborts with the step and sample") {
    Model m = make_model(mc, dims, 4);
    std::get<OdeRnnModel>(m).decoder.bias[0] = std::numeric_limits<double>::quiet_NaN();
    try {
      train(m, ds, quick_config(GradientEngine::checkpoint_adjoint, 3));
      FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
      CHECK(e.step() == 1);
      CHECK(std::find(ds.train.begin(), ds.train.end(), e.sample()) != ds.train.end());
    }
  }

  SECTION("configuration and shape validation") {
    TrainConfig bad = quick_config(GradientEngine::direct, 1);
    bad.batch = 0;
    CHECK_THROWS_AS(train(make_model(mc, dims, 1), ds, bad), InvalidArgument);
    CHECK_THROWS_AS(train(make_model(mc, CsiDims{2, 2}, 1), ds, quick_config(GradientEngine::direct, 1)),
                    InvalidArgument);
  }

  SECTION("gradient clipping bounds the update") {
    const Model m = make_model(mc, dims, 6);
    TrainConfig c = quick_config(GradientEngine::direct, 1);
    c.clip = 1e-12;
    c.lr = 1e-3;
    const TrainResult r = train(m, ds, c);
    // Adam normalizes the step, so a clipped step still moves by about lr per parameter.
    CHECK(max_abs_diff(flatten(r.model), flatten(m)) <= 1e-3 * (1 + 1e-9));
  }
}

TEST_CASE("observation thinning keeps an ordered non-empty subset", "[training][train][property]") {
  SeededRng rng(31);
  const CsiSequence seq = irregular_sequence(6, rng);
  std::size_t kept = 0, drawn = 0;
  for (double p : {0.0, 0.3, 0.9}) {
    for (int rep = 0; rep < 400; ++rep) {
      const CsiSequence t = thin_observations(seq, p, rng);
      REQUIRE(t.size() >= 1);
      REQUIRE(t.times.size() == t.size() + 1);
      CHECK(t.times.back() == seq.times.back());
      CHECK(t.target == seq.target);
      std::size_t j = 0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        while (j < seq.size() && seq.times[j] != t.times[i]) ++j;
        REQUIRE(j < seq.size());
        CHECK(t.observations[i] == seq.observations[j]);
        ++j;
      }
      if (p == 0.0) CHECK(t.size() == seq.size());
      if (p == 0.3) {
        kept += t.size();
        drawn += seq.size();
      }
    }
  }
  // Keep rate near 1 - p; the at-least-one rule is negligible at p = 0.3.
  CHECK(static_cast<double>(kept) / static_cast<double>(drawn) == Catch::Approx(0.7).margin(0.03));
}

TEST_CASE("observation dropout training", "[training][train]") {
  const Dataset ds = smoke_dataset(40);
  ModelConfig mc;
  mc.hidden = 8;
  mc.dynamics_hidden = {8};
  const CsiDims dims{ds.n_t(), ds.n_c()};
  const Model m = make_model(mc, dims, 2);
  TrainConfig c = quick_config(GradientEngine::checkpoint_adjoint, 8);
  const TrainResult plain = train(m, ds, c);
  c.obs_dropout = 0.4;
  const TrainResult a = train(m, ds, c);
  c.threads = 3;
  const TrainResult t = train(m, ds, c);
  CHECK(bitwise_equal_params(a.model, t.model));
  CHECK(bitwise_equal(a.step_loss, t.step_loss));
  CHECK_FALSE(bitwise_equal(a.step_loss, plain.step_loss));

  mc.kind = ModelKind::lstm;
  CHECK_THROWS_AS(train(make_model(mc, dims, 2), ds, c), InvalidArgument);
  c.obs_dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("smoothed training loss decreases for every engine", "[training][train][slow]") {
  const Dataset ds = smoke_dataset(200, 31);
  const CsiDims dims{ds.n_t(), ds.n_c()};
  for (auto e : {GradientEngine::direct, GradientEngine::checkpoint_adjoint, GradientEngine::adjoint}) {
    const Model m = make_model(ModelConfig{}, dims, 5);
    TrainConfig c = quick_config(e, 500);
    c.eval_samples = 1;
    const TrainResult r = train(m, ds, c);
    const auto s = smoothed(r.step_loss);
    INFO(to_string(e) << ": smoothed loss " << s[49] << " at step 50, " << s[499] << " at step 500");
    CHECK(s[499] < s[49]);
  }
}
