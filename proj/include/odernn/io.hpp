#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "odernn/config.hpp"

namespace odernn {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

// Little-endian byte sink/source over std::string buffers.
class ByteWriter {
 public:
  template <class T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    buf_.append(reinterpret_cast<const char*>(b), sizeof(T));
  }
  void bytes(const std::string& s) { buf_ += s; }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& buf, std::string what) : buf_(buf), what_(std::move(what)) {}
  template <class T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    unsigned char b[sizeof(T)];
    std::memcpy(b, buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n)
      throw InvalidArgument(what_ + ": truncated at byte " + std::to_string(pos_) + " (need " + std::to_string(n) +
                            " more)");
  }
  const std::string& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidArgument("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// CSI1 dataset: magic, u16 version, u16 flags, u32 n_samples, u16 n_obs,
// u16 n_t, u16 n_c; per sample f64 times[n_obs + 1], f32 noise[n_obs], then
// n_obs + 1 matrices as f32 (re, im) pairs, antenna-major. The target is last.

inline constexpr char kCsiMagic[4] = {'C', 'S', 'I', '1'};
inline constexpr std::uint16_t kCsiVersion = 1;

inline std::string encode_dataset(const Dataset& ds) {
  require(!ds.samples.empty(), "encode_dataset: empty dataset");
  const std::size_t n_obs = ds.samples.front().size();
  const std::size_t n_t = ds.samples.front().target.n_t();
  const std::size_t n_c = ds.samples.front().target.n_c();
  require(n_obs <= 0xFFFF && n_t <= 0xFFFF && n_c <= 0xFFFF && ds.samples.size() <= 0xFFFFFFFFu,
          "encode_dataset: dimensions exceed the CSI1 header range");
  ByteWriter w;
  w.bytes(std::string(kCsiMagic, 4));
  w.put<std::uint16_t>(kCsiVersion);
  w.put<std::uint16_t>(0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.samples.size()));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(n_obs));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(n_t));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(n_c));
  for (std::size_t s = 0; s < ds.samples.size(); ++s) {
    const CsiSequence& seq = ds.samples[s];
    require(seq.size() == n_obs && seq.target.n_t() == n_t && seq.target.n_c() == n_c, [&] { return "encode_dataset: sample " + std::to_string(s) + " has different dimensions"; });
    for (double t : seq.times) w.put<double>(t);
    for (double e : seq.noise_nmse) w.put<float>(static_cast<float>(e));
    auto put_matrix = [&](const CsiMatrix& h) {
      for (std::size_t k = 0; k < n_t; ++k)
        for (std::size_t l = 0; l < n_c; ++l) {
          w.put<float>(static_cast<float>(h.re(k, l)));
          w.put<float>(static_cast<float>(h.im(k, l)));
        }
    };
    for (const auto& h : seq.observations) put_matrix(h);
    put_matrix(seq.target);
  }
  return w.str();
}

struct CsiHeader {
  std::uint16_t version = 0;
  std::uint16_t flags = 0;
  std::uint32_t n_samples = 0;
  std::uint16_t n_obs = 0;
  std::uint16_t n_t = 0;
  std::uint16_t n_c = 0;
};

inline CsiHeader decode_csi_header(ByteReader& r) {
  if (r.bytes(4) != std::string(kCsiMagic, 4)) throw InvalidArgument("dataset: bad magic (expected CSI1)");
  CsiHeader h;
  h.version = r.get<std::uint16_t>();
  if (h.version != kCsiVersion) throw InvalidArgument("dataset: unsupported CSI1 version " + std::to_string(h.version));
  h.flags = r.get<std::uint16_t>();
  h.n_samples = r.get<std::uint32_t>();
  h.n_obs = r.get<std::uint16_t>();
  h.n_t = r.get<std::uint16_t>();
  h.n_c = r.get<std::uint16_t>();
  return h;
}

inline std::vector<CsiSequence> decode_samples(const std::string& bytes, CsiHeader* header_out = nullptr) {
  ByteReader r(bytes, "dataset");
  const CsiHeader h = decode_csi_header(r);
  if (header_out) *header_out = h;
  std::vector<CsiSequence> out(h.n_samples);
  for (auto& seq : out) {
    seq.times.resize(h.n_obs + 1u);
    for (double& t : seq.times) t = r.get<double>();
    seq.noise_nmse.resize(h.n_obs);
    for (double& e : seq.noise_nmse) e = r.get<float>();
    auto get_matrix = [&] {
      CsiMatrix m(h.n_t, h.n_c);
      for (std::size_t k = 0; k < h.n_t; ++k)
        for (std::size_t l = 0; l < h.n_c; ++l) {
          m.re(k, l) = r.get<float>();
          m.im(k, l) = r.get<float>();
        }
      return m;
    };
    for (std::size_t i = 0; i < h.n_obs; ++i) seq.observations.push_back(get_matrix());
    seq.target = get_matrix();
  }
  if (!r.done()) throw InvalidArgument("dataset: trailing bytes after " + std::to_string(h.n_samples) + " samples");
  return out;
}

inline json dataset_sidecar(const Dataset& ds) {
  json j;
  j["format"] = "CSI1";
  j["version"] = kCsiVersion;
  j["seed"] = ds.config.seed;
  j["n_samples"] = ds.samples.size();
  j["n_obs"] = ds.samples.empty() ? 0 : ds.samples.front().size();
  j["n_t"] = ds.n_t();
  j["n_c"] = ds.n_c();
  j["split"] = {{"train", ds.train.size()}, {"test", ds.test.size()}};
  j["config"] = to_json(ds.config);
  return j;
}

inline std::string sidecar_path(const std::string& dataset_path) { return dataset_path + ".json"; }

inline void save_dataset(const Dataset& ds, const std::string& path) {
  write_file_bytes(path, encode_dataset(ds));
  write_file_bytes(sidecar_path(path), dataset_sidecar(ds).dump(2) + "\n");
}

// Samples from the binary file; config and split from the sidecar.
inline Dataset load_dataset(const std::string& path) {
  CsiHeader h;
  Dataset ds;
  ds.samples = decode_samples(read_file_bytes(path), &h);
  const json side = read_json_file(sidecar_path(path));
  if (!side.contains("config")) throw InvalidArgument(sidecar_path(path) + ": missing config");
  ObjectReader r(side.at("config"), "config");
  read_dataset_sections(r, ds.config);
  r.finish();
  require(ds.config.array.n_t == h.n_t && ds.config.ofdm.n_c == h.n_c, [&] { return "dataset: sidecar dims " + shape_str(ds.config.array.n_t, ds.config.ofdm.n_c) + " disagree with file dims " +
              shape_str(h.n_t, h.n_c); });
  require(ds.config.n_samples == h.n_samples, "dataset: sidecar sample count disagrees with file");
  assign_split(ds, ds.config.seed);
  return ds;
}

// ---------------------------------------------------------------------------
// Checkpoint: magic "OCKP", u16 version, u16 reserved, u32 header length,
// JSON header, u32 block count, then per block u16 name length, name,
// u32 rows, u32 cols, f64 values (row-major).

inline constexpr char kCheckpointMagic[4] = {'O', 'C', 'K', 'P'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline ModelConfig model_config_of(const Model& m) {
  ModelConfig c;
  c.kind = kind_of(m);
  const ModelShape& s = shape_of(m);
  c.hidden = s.hidden;
  c.time_scale = s.time_scale;
  c.normalize = s.normalize;
  c.dynamics_hidden.clear();
  const MlpParams* dyn = nullptr;
  if (auto* o = std::get_if<OdeRnnModel>(&m)) dyn = &o->dynamics;
  if (auto* n = std::get_if<NeuralOdeModel>(&m)) dyn = &n->dynamics;
  if (dyn) {
    const auto dims = dyn->dims();
    c.dynamics_hidden.assign(dims.begin() + 1, dims.end() - 1);
  }
  return c;
}

inline std::string encode_checkpoint(const Model& m, const json& extra = json::object()) {
  json header;
  header["model"] = to_json(model_config_of(m));
  header["n_t"] = shape_of(m).dims.n_t;
  header["n_c"] = shape_of(m).dims.n_c;
  header["parameters"] = parameter_count(m);
  header["meta"] = extra;
  const std::string hdr = header.dump();
  ByteWriter w;
  w.bytes(std::string(kCheckpointMagic, 4));
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint16_t>(0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(hdr.size()));
  w.bytes(hdr);
  const auto blocks = collect_blocks(m);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(b.name.size()));
    w.bytes(b.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(b.rows));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(b.cols));
    for (double v : b.values) w.put<double>(v);
  }
  return w.str();
}

struct Checkpoint {
  Model model;
  json meta;
};

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.bytes(4) != std::string(kCheckpointMagic, 4)) throw InvalidArgument("checkpoint: bad magic (expected OCKP)");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) throw InvalidArgument("checkpoint: unsupported version " + std::to_string(version));
  r.get<std::uint16_t>();
  const auto hdr_len = r.get<std::uint32_t>();
  json header;
  try {
    header = json::parse(r.bytes(hdr_len));
  } catch (const json::parse_error& e) {
    throw InvalidArgument(std::string("checkpoint: bad header: ") + e.what());
  }
  ModelConfig cfg;
  {
    ObjectReader mr(header.at("model"), "checkpoint.model");
    read_into(mr, cfg);
    mr.finish();
  }
  const CsiDims dims{header.at("n_t").get<std::size_t>(), header.at("n_c").get<std::size_t>()};
  Checkpoint cp{make_model_zero(cfg, dims), header.value("meta", json::object())};
  auto blocks = collect_blocks(cp.model);
  const auto n_blocks = r.get<std::uint32_t>();
  require(n_blocks == blocks.size(), [&] { return "checkpoint: expected " + std::to_string(blocks.size()) + " blocks, file has " +
                                         std::to_string(n_blocks); });
  for (auto& b : blocks) {
    const auto name_len = r.get<std::uint16_t>();
    const std::string name = r.bytes(name_len);
    require(name == b.name, [&] { return "checkpoint: expected block '" + b.name + "', found '" + name + "'"; });
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    require(rows == b.rows && cols == b.cols, [&] { return "checkpoint: block '" + name + "' is " + shape_str(rows, cols) +
                                                  ", architecture expects " + shape_str(b.rows, b.cols); });
    for (double& v : b.values) v = r.get<double>();
  }
  if (!r.done()) throw InvalidArgument("checkpoint: trailing bytes");
  return cp;
}

inline void save_checkpoint(const Model& m, const std::string& path, const json& meta = json::object()) {
  write_file_bytes(path, encode_checkpoint(m, meta));
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

// ---------------------------------------------------------------------------
// Training log and sweep outputs

inline json to_json(const LogRecord& r) {
  json j = {{"step", r.step}, {"train_mse", r.train_mse}, {"wall_ms", r.wall_ms}};
  j["test_nmse"] = std::isfinite(r.test_nmse) ? json(r.test_nmse) : json(nullptr);
  if (!std::isfinite(r.train_mse)) j["train_mse"] = nullptr;
  if (r.final) j["final"] = true;
  return j;
}

inline json to_json(const SweepRecord& r) {
  json j = {{"model", to_string(r.model)}, {"value", r.value}, {"seed", r.seed}, {"train_ms", r.train_ms}, {"ok", r.ok}};
  j["nmse"] = std::isfinite(r.nmse) ? json(r.nmse) : json(nullptr);
  if (!r.ok) j["error"] = r.error;
  return j;
}

inline SweepRecord sweep_record_from_json(const json& j) {
  SweepRecord r;
  r.model = model_kind_from_string(j.at("model").get<std::string>());
  r.value = j.at("value").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.nmse = j.at("nmse").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("nmse").get<double>();
  r.train_ms = j.value("train_ms", 0.0);
  r.ok = j.value("ok", false);
  r.error = j.value("error", std::string());
  return r;
}

inline std::string format_double(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string sweep_csv(const SweepResult& res) {
  std::string out = "sweep_var,value,model,seed,nmse,train_ms\n";
  for (const auto& r : res.records) {
    out += to_string(res.variable) + "," + format_double(r.value) + "," + to_string(r.model) + "," +
           std::to_string(r.seed) + "," + format_double(r.nmse) + "," + format_double(r.train_ms) + "\n";
  }
  return out;
}

inline json sweep_json(const SweepResult& res, const SweepSpec& spec) {
  json j;
  j["spec_hash"] = spec_hash(spec);
  j["spec"] = to_json(spec);
  j["sweep_var"] = to_string(res.variable);
  json recs = json::array();
  for (const auto& r : res.records) recs.push_back(to_json(r));
  j["records"] = recs;
  json aggs = json::array();
  for (const auto& a : res.aggregates()) {
    json x = {{"model", to_string(a.model)}, {"value", a.value}, {"count", a.count}};
    x["median"] = std::isfinite(a.median) ? json(a.median) : json(nullptr);
    x["min"] = std::isfinite(a.min) ? json(a.min) : json(nullptr);
    x["max"] = std::isfinite(a.max) ? json(a.max) : json(nullptr);
    aggs.push_back(x);
  }
  j["aggregates"] = aggs;
  j["failures"] = res.failures();
  return j;
}

}  // namespace odernn
