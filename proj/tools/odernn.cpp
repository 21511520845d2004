// Command-line driver: dataset generation, training, evaluation, sweeps and
// self-diagnostics. Exit codes: 0 ok, 1 usage/config, 2 numeric failure,
// 3 partial sweep failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "odernn/diagnostics.hpp"
#include "odernn/odernn.hpp"

namespace fs = std::filesystem;
using namespace odernn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitPartial = 3;

constexpr const char* kConfigDirEnv = "ODERNN_CONFIG_DIR";

// Relative config paths that do not exist are looked up under $ODERNN_CONFIG_DIR.
std::string resolve_config(const std::string& path) {
  if (path.empty() || fs::exists(path) || fs::path(path).is_absolute()) return path;
  if (const char* dir = std::getenv(kConfigDirEnv)) {
    const fs::path candidate = fs::path(dir) / path;
    if (fs::exists(candidate)) return candidate.string();
  }
  return path;
}

// Explicit path, else $ODERNN_CONFIG_DIR/default.json if present, else built-in defaults.
RunConfig load_run_config(const std::string& path) {
  std::string p = resolve_config(path);
  if (p.empty()) {
    if (const char* dir = std::getenv(kConfigDirEnv)) {
      const fs::path candidate = fs::path(dir) / "default.json";
      if (fs::exists(candidate)) p = candidate.string();
    }
  }
  if (p.empty()) return RunConfig{};
  return parse_run_config(read_json_file(p));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out << text;
}

int cmd_gen(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed,
            std::optional<std::size_t> samples, std::size_t threads) {
  RunConfig cfg = load_run_config(config);
  if (seed) cfg.dataset.seed = *seed;
  if (samples) cfg.dataset.n_samples = *samples;
  cfg.dataset.validate();
  const Dataset ds = generate_dataset(cfg.dataset, threads);
  save_dataset(ds, out);
  std::printf("samples %zu train %zu test %zu\n", ds.samples.size(), ds.train.size(), ds.test.size());
  std::printf("wrote %s and %s\n", out.c_str(), sidecar_path(out).c_str());
  return kExitOk;
}

struct TrainArgs {
  std::string dataset, out, config, log, model, engine, solver;
  std::optional<std::size_t> steps, eval_every, batch, threads;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, step;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (!a.model.empty()) cfg.model.kind = model_kind_from_string(a.model);
  if (!a.engine.empty()) cfg.training.engine = gradient_engine_from_string(a.engine);
  if (!a.solver.empty()) cfg.training.solver.method = solver_method_from_string(a.solver);
  if (a.step) cfg.training.solver.step = *a.step;
  if (a.steps) cfg.training.steps = *a.steps;
  if (a.eval_every) cfg.training.eval_every = *a.eval_every;
  if (a.batch) cfg.training.batch = *a.batch;
  if (a.threads) cfg.training.threads = *a.threads;
  if (a.seed) cfg.training.seed = *a.seed;
  if (a.lr) cfg.training.lr = *a.lr;
  cfg.model.validate();
  cfg.training.validate();

  const Dataset ds = load_dataset(a.dataset);
  Model model = make_model(cfg.model, {ds.n_t(), ds.n_c()}, derive_seed(cfg.training.seed, 0x4D4Fu));
  const std::string log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw InvalidArgument("cannot write '" + log_path + "'");
  TrainResult r = train(std::move(model), ds, cfg.training, [&](const LogRecord& rec) {
    log << to_json(rec).dump() << "\n";
    log.flush();
    std::printf("step %zu train_mse %.6g test_nmse %.6g\n", rec.step, rec.train_mse, rec.test_nmse);
  });
  const json meta = {{"training", to_json(cfg.training)}, {"dataset", a.dataset}};
  save_checkpoint(r.model, a.out, meta);
  const double final_loss = r.step_loss.empty() ? 0.0 : r.step_loss.back();
  std::printf("wrote %s (%zu parameters), log %s, %.0f ms\n", a.out.c_str(), parameter_count(r.model),
              log_path.c_str(), r.wall_ms);
  if (!std::isfinite(final_loss)) {
    std::fprintf(stderr, "error: final loss is not finite\n");
    return kExitNumeric;
  }
  return kExitOk;
}

struct EvalArgs {
  std::string dataset, checkpoint, out, solver;
  std::optional<double> drop_threshold, step;
};

int cmd_eval(const EvalArgs& a) {
  const Dataset ds = load_dataset(a.dataset);
  const Checkpoint cp = load_checkpoint(a.checkpoint);
  const CsiDims want = shape_of(cp.model).dims;
  if (want != CsiDims{ds.n_t(), ds.n_c()})
    throw InvalidArgument("checkpoint expects CSI " + shape_str(want.n_t, want.n_c) + " but dataset holds " +
                          shape_str(ds.n_t(), ds.n_c()));
  SolverConfig solver;
  if (cp.meta.contains("training") && cp.meta["training"].contains("solver")) {
    ObjectReader r(cp.meta["training"]["solver"], "checkpoint.meta.training.solver");
    read_into(r, solver);
    r.finish();
  }
  if (!a.solver.empty()) solver.method = solver_method_from_string(a.solver);
  if (a.step) solver.step = *a.step;
  solver.validate();
  std::optional<double> threshold = a.drop_threshold;
  if (threshold && std::isnan(*threshold)) throw InvalidArgument("--drop-threshold must be a number or inf");
  if (threshold && std::isfinite(*threshold) && !uses_timestamps(kind_of(cp.model)))
    throw InvalidArgument("--drop-threshold needs an irregular-capable model (ode-rnn or neural-ode); " +
                          to_string(kind_of(cp.model)) + " must retain every observation");
  const double value = dataset_nmse(cp.model, ds, ds.test, solver, threshold);
  std::printf("test_nmse %.17g\n", value);
  if (!a.out.empty()) {
    json report = {{"test_nmse", value},
                   {"model", to_string(kind_of(cp.model))},
                   {"test_samples", ds.test.size()},
                   {"dataset", a.dataset},
                   {"checkpoint", a.checkpoint}};
    report["drop_threshold"] = threshold && std::isfinite(*threshold) ? json(*threshold) : json(nullptr);
    write_text(a.out, report.dump(2) + "\n");
  }
  return std::isfinite(value) ? kExitOk : kExitNumeric;
}

int cmd_sweep(const std::string& spec_path, const std::string& out_dir, std::size_t jobs, bool resume) {
  const SweepSpec spec = parse_sweep_spec(read_json_file(resolve_config(spec_path)));
  const std::string hash = spec_hash(spec);
  fs::create_directories(out_dir);
  const std::string stem = (fs::path(out_dir) / ("sweep_" + to_string(spec.variable) + "_" + hash)).string();
  const std::string cells_path = stem + ".cells.jsonl";

  SweepOptions opts;
  opts.jobs = jobs;
  if (resume && fs::exists(cells_path)) {
    std::ifstream in(cells_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        opts.completed.push_back(sweep_record_from_json(json::parse(line)));
      } catch (const std::exception&) {
        // A torn last line from an interrupted run is recomputed.
      }
    }
    std::printf("resuming: %zu completed cells\n", opts.completed.size());
  }
  std::ofstream cells(cells_path, resume ? std::ios::app : std::ios::trunc);
  opts.on_record = [&](const SweepRecord& r) {
    cells << to_json(r).dump() << "\n";
    cells.flush();
    std::printf("%s=%g model=%s seed=%llu nmse=%.6g%s\n", to_string(spec.variable).c_str(), r.value,
                to_string(r.model).c_str(), static_cast<unsigned long long>(r.seed), r.nmse,
                r.ok ? "" : (" FAILED: " + r.error).c_str());
    std::fflush(stdout);
  };
  const SweepResult res = run_any_sweep(spec, opts);
  write_text(stem + ".csv", sweep_csv(res));
  write_text(stem + ".json", sweep_json(res, spec).dump(2) + "\n");
  for (const auto& a : res.aggregates())
    std::printf("%-10s %-12g median %.6g min %.6g max %.6g (n=%zu)\n", to_string(a.model).c_str(), a.value, a.median,
                a.min, a.max, a.count);
  std::printf("wrote %s.csv and %s.json\n", stem.c_str(), stem.c_str());
  if (res.failures() > 0) {
    std::fprintf(stderr, "%zu of %zu cells failed\n", res.failures(), res.records.size());
    return kExitPartial;
  }
  return kExitOk;
}

int cmd_diag(const std::string& check) {
  const auto results = run_diagnostic(check);
  bool ok = true;
  std::printf("check,status,metric,threshold,detail\n");
  for (const auto& r : results) {
    std::printf("%s,%s,%.6g,%.6g,%s\n", r.name.c_str(), r.passed ? "pass" : "fail", r.metric, r.threshold,
                r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time MIMO channel prediction: data generation, training and evaluation"};
  app.require_subcommand(1);
  app.footer(std::string("Relative config paths are also looked up in $") + kConfigDirEnv + ".");

  // gen
  std::string gen_config, gen_out;
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> gen_samples;
  std::size_t gen_threads = 1;
  auto* gen = app.add_subcommand("gen", "Generate a CSI1 dataset and its JSON sidecar");
  gen->add_option("config", gen_config, "Run config JSON (defaults if omitted)");
  gen->add_option("--out,-o", gen_out, "Output dataset path")->required();
  gen->add_option("--seed", gen_seed, "Dataset seed (overrides config)");
  gen->add_option("--samples", gen_samples, "Number of sequences (overrides config)");
  gen->add_option("--threads", gen_threads, "Generation threads")->check(CLI::PositiveNumber);

  // train
  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  tr->add_option("dataset", ta.dataset, "CSI1 dataset path")->required();
  tr->add_option("--out,-o", ta.out, "Checkpoint output path")->required();
  tr->add_option("--config,-c", ta.config, "Run config JSON");
  tr->add_option("--model", ta.model, "ode-rnn | neural-ode | rnn | lstm");
  tr->add_option("--engine", ta.engine, "direct | adjoint | checkpoint-adjoint");
  tr->add_option("--solver", ta.solver, "euler | rk4 | rk45");
  tr->add_option("--step", ta.step, "Fixed solver step, in model time units");
  tr->add_option("--steps", ta.steps, "Optimizer steps");
  tr->add_option("--eval-every", ta.eval_every, "Log interval in steps");
  tr->add_option("--batch", ta.batch, "Batch size");
  tr->add_option("--lr", ta.lr, "Learning rate");
  tr->add_option("--seed", ta.seed, "Training seed");
  tr->add_option("--threads", ta.threads, "Per-sample worker threads");
  tr->add_option("--log", ta.log, "JSON-lines log path (default <out>.log.jsonl)");

  // eval
  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Report test NMSE of a checkpoint");
  ev->add_option("dataset", ea.dataset, "CSI1 dataset path")->required();
  ev->add_option("checkpoint", ea.checkpoint, "Checkpoint path")->required();
  ev->add_option("--drop-threshold", ea.drop_threshold, "Drop observations with annotated NMSE above this");
  ev->add_option("--solver", ea.solver, "Override the solver stored in the checkpoint");
  ev->add_option("--step", ea.step, "Override the fixed solver step");
  ev->add_option("--out,-o", ea.out, "Write a JSON report here");

  // sweep
  std::string sweep_spec, sweep_out = "sweeps";
  std::size_t sweep_jobs = 1;
  bool no_resume = false;
  auto* sw = app.add_subcommand("sweep", "Run a parameter sweep");
  sw->add_option("spec", sweep_spec, "Sweep spec JSON")->required();
  sw->add_option("--jobs,-j", sweep_jobs, "Parallel cells")->check(CLI::PositiveNumber);
  sw->add_option("--out-dir", sweep_out, "Output directory");
  sw->add_flag("--no-resume", no_resume, "Recompute cells already recorded for this spec");

  // diag
  std::string diag_check = "all";
  auto* dg = app.add_subcommand("diag", "Run numerical self-checks");
  dg->add_option("--check", diag_check, "solver-order | gradcheck | theorem1 | all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_config, gen_out, gen_seed, gen_samples, gen_threads);
    if (tr->parsed()) return cmd_train(ta);
    if (ev->parsed()) return cmd_eval(ea);
    if (sw->parsed()) return cmd_sweep(sweep_spec, sweep_out, sweep_jobs, !no_resume);
    if (dg->parsed()) return cmd_diag(diag_check);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  }
  return kExitUsage;
}
