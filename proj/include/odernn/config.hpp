#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "odernn/eval/sweep.hpp"

namespace odernn {

using json = nlohmann::json;

class ConfigError : public InvalidArgument {
 public:
  ConfigError(const std::string& path, const std::string& msg) : InvalidArgument(path + ": " + msg), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Reads fields of one JSON object; finish() rejects any key nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }
  ~ObjectReader() = default;
  ObjectReader(const ObjectReader&) = delete;
  ObjectReader& operator=(const ObjectReader&) = delete;

  std::string path_of(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(path_of(key), "expected a number");
      out = v->get<double>();
    }
  }
  template <class T>
    requires(std::is_unsigned_v<T> && !std::is_same_v<T, bool>)
  void read(const std::string& key, T& out) {
    if (const json* v = find(key)) out = static_cast<T>(as_count(*v, path_of(key)));
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(path_of(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(path_of(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void read(const std::string& key, std::optional<double>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
      } else {
        if (!v->is_number()) throw ConfigError(path_of(key), "expected a number or null");
        out = v->get<double>();
      }
    }
  }
  void read(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(path_of(key), "expected an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number()) throw ConfigError(path_of(key) + "[" + std::to_string(i) + "]", "expected a number");
        out.push_back((*v)[i].get<double>());
      }
    }
  }
  template <class T>
    requires std::is_integral_v<T>
  void read(const std::string& key, std::vector<T>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(path_of(key), "expected an array of counts");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i)
        out.push_back(static_cast<T>(as_count((*v)[i], path_of(key) + "[" + std::to_string(i) + "]")));
    }
  }

  // Applies `fn(ObjectReader&)` to a nested object when present.
  template <class Fn>
  void nested(const std::string& key, Fn&& fn) {
    if (const json* v = find(key)) {
      ObjectReader r(*v, path_of(key));
      fn(r);
      r.finish();
    }
  }

  // Parses a string field through `parse`, reporting failures at the field path.
  template <class T, class Parse>
  void read_enum(const std::string& key, T& out, Parse&& parse) {
    std::string s;
    read(key, s);
    if (s.empty()) return;
    try {
      out = parse(s);
    } catch (const InvalidArgument& e) {
      throw ConfigError(path_of(key), e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path_of(it.key()), "unknown key");
  }

 private:
  static std::uint64_t as_count(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (d >= 0.0 && d == std::floor(d) && d < 1.8e19) return static_cast<std::uint64_t>(d);
    }
    throw ConfigError(path, "expected a non-negative integer");
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// ---------------------------------------------------------------------------
// Readers

inline void read_into(ObjectReader& r, Bounds& b) {
  r.read("x_min", b.x_min);
  r.read("y_min", b.y_min);
  r.read("x_max", b.x_max);
  r.read("y_max", b.y_max);
}

inline void read_into(ObjectReader& r, SceneConfig& s) {
  r.nested("area", [&](ObjectReader& a) { read_into(a, s.area); });
  if (const json* v = r.find("bs")) {
    if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number())
      throw ConfigError(r.path_of("bs"), "expected [x, y]");
    s.bs = {(*v)[0].get<double>(), (*v)[1].get<double>()};
  }
  r.read("n_paths", s.n_paths);
  r.read("line_of_sight", s.line_of_sight);
  r.read("margin", s.margin);
  r.read("reflection_min", s.reflection_min);
  r.read("reflection_max", s.reflection_max);
  r.read("seed", s.seed);
}

inline void read_into(ObjectReader& r, OfdmConfig& o) {
  r.read("n_c", o.n_c);
  r.read("center_frequency", o.center_frequency);
  r.read("bandwidth", o.bandwidth);
}

inline void read_into(ObjectReader& r, ArrayConfig& a) {
  r.read("n_t", a.n_t);
  r.read("spacing", a.spacing);
  r.read("orientation", a.orientation);
}

inline void read_into(ObjectReader& r, NoisePolicy& n) {
  r.read("level", n.level);
  r.read("fraction", n.fraction);
  r.read("low_ratio", n.low_ratio);
}

inline void read_into(ObjectReader& r, GenerationConfig& g) {
  r.read("n_obs", g.n_obs);
  r.read("interval", g.interval);
  r.read_enum("policy", g.policy, [](const std::string& s) {
    if (s == "uniform") return IntervalPolicy::uniform;
    if (s == "jitter") return IntervalPolicy::jitter;
    throw InvalidArgument("expected uniform or jitter, got '" + s + "'");
  });
  r.read("jitter", g.jitter);
  r.read("speed_min", g.speed_min);
  r.read("speed_max", g.speed_max);
  r.nested("noise", [&](ObjectReader& n) { read_into(n, g.noise); });
  r.read("max_retries", g.max_retries);
}

inline void read_into(ObjectReader& r, SolverConfig& s) {
  r.read_enum("method", s.method, solver_method_from_string);
  r.read("step", s.step);
  r.read("rtol", s.rtol);
  r.read("atol", s.atol);
  r.read("max_steps", s.max_steps);
  r.read("min_step", s.min_step);
}

inline void read_into(ObjectReader& r, ModelConfig& m) {
  r.read_enum("kind", m.kind, model_kind_from_string);
  r.read("hidden", m.hidden);
  r.read("dynamics_hidden", m.dynamics_hidden);
  r.read("time_scale", m.time_scale);
  r.read("normalize", m.normalize);
}

inline void read_into(ObjectReader& r, TrainConfig& t) {
  r.read("steps", t.steps);
  r.read("batch", t.batch);
  r.read("lr", t.lr);
  r.read_enum("engine", t.engine, gradient_engine_from_string);
  r.nested("solver", [&](ObjectReader& s) { read_into(s, t.solver); });
  r.read("seed", t.seed);
  r.read("eval_every", t.eval_every);
  r.read("clip", t.clip);
  r.read("threads", t.threads);
  r.read("eval_samples", t.eval_samples);
  r.read("obs_dropout", t.obs_dropout);
}

// Dataset sections: scene, ofdm, array, generation and the dataset block itself.
inline void read_dataset_sections(ObjectReader& r, DatasetConfig& d) {
  r.nested("scene", [&](ObjectReader& s) { read_into(s, d.scene); });
  r.nested("ofdm", [&](ObjectReader& s) { read_into(s, d.ofdm); });
  r.nested("array", [&](ObjectReader& s) { read_into(s, d.array); });
  r.nested("generation", [&](ObjectReader& s) { read_into(s, d.generation); });
  r.nested("dataset", [&](ObjectReader& s) {
    s.read("n_samples", d.n_samples);
    s.read("seed", d.seed);
    s.read("train_fraction", d.train_fraction);
  });
}

inline void read_into(ObjectReader& r, SweepSpec& s) {
  r.read_enum("variable", s.variable, sweep_variable_from_string);
  s = default_sweep_spec(s.variable);
  r.read("grid", s.grid);
  if (const json* v = r.find("models")) {
    if (!v->is_array()) throw ConfigError(r.path_of("models"), "expected an array of model names");
    s.models.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string p = r.path_of("models") + "[" + std::to_string(i) + "]";
      if (!(*v)[i].is_string()) throw ConfigError(p, "expected a model name");
      try {
        s.models.push_back(model_kind_from_string((*v)[i].get<std::string>()));
      } catch (const InvalidArgument& e) {
        throw ConfigError(p, e.what());
      }
    }
  }
  r.read("seeds", s.seeds);
  r.nested("solver", [&](ObjectReader& x) { read_into(x, s.solver); });
  r.read("drop_threshold", s.drop_threshold);
  read_dataset_sections(r, s.dataset);
  r.nested("model", [&](ObjectReader& x) { read_into(x, s.model); });
  r.nested("training", [&](ObjectReader& x) { read_into(x, s.training); });
}

struct RunConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig training;
  std::optional<SweepSpec> sweep;

  void validate() const {
    dataset.validate();
    model.validate();
    training.validate();
    if (sweep) sweep->validate();
  }
};

template <class Fn>
auto with_config_path(const std::string& root, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(root, e.what());
  }
}

inline RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  ObjectReader r(j, "");
  read_dataset_sections(r, cfg.dataset);
  r.nested("model", [&](ObjectReader& x) { read_into(x, cfg.model); });
  r.nested("training", [&](ObjectReader& x) { read_into(x, cfg.training); });
  r.nested("sweep", [&](ObjectReader& x) {
    SweepSpec s;
    read_into(x, s);
    cfg.sweep = std::move(s);
  });
  r.finish();
  with_config_path("dataset", [&] { cfg.dataset.validate(); });
  with_config_path("model", [&] { cfg.model.validate(); });
  with_config_path("training", [&] { cfg.training.validate(); });
  if (cfg.sweep) with_config_path("sweep", [&] { cfg.sweep->validate(); });
  return cfg;
}

inline SweepSpec parse_sweep_spec(const json& j) {
  SweepSpec s;
  ObjectReader r(j, "");
  read_into(r, s);
  r.finish();
  with_config_path("sweep", [&] { s.validate(); });
  return s;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("'" + path + "' is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Writers (full trees, every field explicit)

inline json to_json(const SceneConfig& s) {
  return {{"area", {{"x_min", s.area.x_min}, {"y_min", s.area.y_min}, {"x_max", s.area.x_max}, {"y_max", s.area.y_max}}},
          {"bs", {s.bs.x, s.bs.y}},
          {"n_paths", s.n_paths},
          {"line_of_sight", s.line_of_sight},
          {"margin", s.margin},
          {"reflection_min", s.reflection_min},
          {"reflection_max", s.reflection_max},
          {"seed", s.seed}};
}

inline json to_json(const OfdmConfig& o) {
  return {{"n_c", o.n_c}, {"center_frequency", o.center_frequency}, {"bandwidth", o.bandwidth}};
}

inline json to_json(const ArrayConfig& a) {
  return {{"n_t", a.n_t}, {"spacing", a.spacing ? json(*a.spacing) : json(nullptr)}, {"orientation", a.orientation}};
}

inline json to_json(const GenerationConfig& g) {
  return {{"n_obs", g.n_obs},
          {"interval", g.interval},
          {"policy", g.policy == IntervalPolicy::uniform ? "uniform" : "jitter"},
          {"jitter", g.jitter},
          {"speed_min", g.speed_min},
          {"speed_max", g.speed_max},
          {"noise", {{"level", g.noise.level}, {"fraction", g.noise.fraction}, {"low_ratio", g.noise.low_ratio}}},
          {"max_retries", g.max_retries}};
}

inline json to_json(const SolverConfig& s) {
  return {{"method", to_string(s.method)}, {"step", s.step},           {"rtol", s.rtol},
          {"atol", s.atol},                {"max_steps", s.max_steps}, {"min_step", s.min_step}};
}

inline json to_json(const ModelConfig& m) {
  return {{"kind", to_string(m.kind)},
          {"hidden", m.hidden},
          {"dynamics_hidden", m.dynamics_hidden},
          {"time_scale", m.time_scale},
          {"normalize", m.normalize}};
}

inline json to_json(const TrainConfig& t) {
  return {{"steps", t.steps},   {"batch", t.batch},           {"lr", t.lr},
          {"engine", to_string(t.engine)},
          {"solver", to_json(t.solver)},
          {"seed", t.seed},     {"eval_every", t.eval_every}, {"clip", t.clip},
          {"threads", t.threads}, {"eval_samples", t.eval_samples},
          {"obs_dropout", t.obs_dropout}};
}

inline void write_dataset_sections(json& j, const DatasetConfig& d) {
  j["scene"] = to_json(d.scene);
  j["ofdm"] = to_json(d.ofdm);
  j["array"] = to_json(d.array);
  j["generation"] = to_json(d.generation);
  j["dataset"] = {{"n_samples", d.n_samples}, {"seed", d.seed}, {"train_fraction", d.train_fraction}};
}

inline json to_json(const DatasetConfig& d) {
  json j = json::object();
  write_dataset_sections(j, d);
  return j;
}

inline json to_json(const SweepSpec& s) {
  json models = json::array();
  for (auto m : s.models) models.push_back(to_string(m));
  json j = {{"variable", to_string(s.variable)},
            {"grid", s.grid},
            {"models", models},
            {"seeds", s.seeds},
            {"solver", to_json(s.solver)},
            {"drop_threshold", s.drop_threshold ? json(*s.drop_threshold) : json(nullptr)},
            {"model", to_json(s.model)},
            {"training", to_json(s.training)}};
  write_dataset_sections(j, s.dataset);
  return j;
}

inline json to_json(const RunConfig& c) {
  json j = to_json(c.dataset);
  j["model"] = to_json(c.model);
  j["training"] = to_json(c.training);
  if (c.sweep) j["sweep"] = to_json(*c.sweep);
  return j;
}

// FNV-1a 64 over the canonical (sorted-key) dump.
inline std::string spec_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string spec_hash(const SweepSpec& s) { return spec_hash(to_json(s)); }

}  // namespace odernn
