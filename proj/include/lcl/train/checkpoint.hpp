#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lcl/core/binary_io.hpp"
#include "lcl/objective/report.hpp"
#include "lcl/train/model.hpp"
#include "lcl/train/optimizer.hpp"

namespace lcl {

inline constexpr char kCheckpointMagic[9] = "LCLCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

inline std::string to_string(DType d) { return d == DType::F32 ? "f32" : "f64"; }

/// A checkpoint's manifest disagrees with the configuration loading it.
class CheckpointMismatchError : public std::runtime_error {
 public:
  CheckpointMismatchError(std::vector<std::string> fields, const std::string& detail)
      : std::runtime_error("checkpoint does not match the current configuration: " + detail), fields_(std::move(fields)) {}
  const std::vector<std::string>& fields() const noexcept { return fields_; }

 private:
  std::vector<std::string> fields_;
};

/// Array stored at its file precision; values are held in double, which is
/// exact for both f32 and f64 payloads.
struct StoredArray {
  std::string name;
  DType dtype = DType::F32;
  NDArray<double> values;
};

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> manifest;
  std::vector<StoredArray> parameters;
  std::uint64_t optimizer_steps = 0;
  std::vector<StoredArray> first_moments, second_moments;  // empty when saved without optimizer state

  std::optional<std::string> find(const std::string& key) const {
    for (const auto& [k, v] : manifest)
      if (k == key) return v;
    return std::nullopt;
  }

  std::string get(const std::string& key) const {
    auto v = find(key);
    if (!v) throw CorruptFileError("manifest", "missing key '" + key + "'");
    return *v;
  }

  std::uint64_t step() const { return std::stoull(get("step")); }
  DType dtype() const { return get("dtype") == "f64" ? DType::F64 : DType::F32; }

  /// Lines under the `config.` prefix, in parseable key=value form.
  std::string config_text() const {
    std::string out;
    for (const auto& [k, v] : manifest)
      if (k.rfind("config.", 0) == 0) out += k.substr(7) + "=" + v + "\n";
    return out;
  }

  TrainConfig train_config() const { return TrainConfig::parse(config_text(), "checkpoint config echo"); }
};

namespace detail {

inline void write_array(ByteWriter& w, const std::string& name, DType dtype, const Shape& shape, const double* data,
                        std::size_t n) {
  w.put_string(name);
  w.put(static_cast<std::uint8_t>(dtype));
  w.put(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.put(static_cast<std::uint64_t>(d));
  for (std::size_t i = 0; i < n; ++i) {
    if (dtype == DType::F32) {
      w.put(static_cast<float>(data[i]));
    } else {
      w.put(data[i]);
    }
  }
}

template <typename T>
void write_array(ByteWriter& w, const std::string& name, const NDArray<T>& a) {
  const NDArray<double> d = a.template cast<double>();
  write_array(w, name, dtype_of<T>(), a.shape(), d.ptr(), d.numel());
}

inline StoredArray read_array(ByteReader& r) {
  StoredArray a;
  a.name = r.get_string(4096);
  const auto dt = r.get<std::uint8_t>();
  if (dt > 1) r.fail("array '" + a.name + "' has unknown dtype " + std::to_string(dt));
  a.dtype = static_cast<DType>(dt);
  const auto rank = r.get<std::uint32_t>();
  if (rank > 8) r.fail("array '" + a.name + "' has rank " + std::to_string(rank));
  Shape s(rank);
  std::size_t n = 1;
  for (auto& d : s) {
    d = static_cast<std::size_t>(r.get<std::uint64_t>());
    n *= d;
  }
  const std::size_t width = a.dtype == DType::F32 ? 4 : 8;
  if (n > r.remaining() / width) r.fail("array '" + a.name + "' of shape " + shape_str(s) + " runs past end of file");
  std::vector<double> v(n);
  for (auto& x : v) x = a.dtype == DType::F32 ? static_cast<double>(r.get<float>()) : r.get<double>();
  a.values = NDArray<double>(std::move(s), std::move(v));
  return a;
}

inline std::string format_metric(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

}  // namespace detail

/// Serializes model parameters, optional optimizer state and a manifest
/// holding the model fields, step, last metrics and the config echo.
template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const LCLModel<T>& model, const AdamW<T>* opt, std::uint64_t step,
                                               const TrainConfig* cfg = nullptr, const LossReport* metrics = nullptr) {
  ByteWriter w;
  w.put_bytes(kCheckpointMagic, 8);
  w.put(kCheckpointVersion);
  std::string m = "dtype=" + to_string(dtype_of<T>()) + "\nstep=" + std::to_string(step) + "\n";
  for (const auto& [k, v] : model.config().fields()) m += "model." + k + "=" + v + "\n";
  if (metrics) {
    m += "metric.L_total=" + detail::format_metric(metrics->total) + "\n";
    m += "metric.L_con=" + detail::format_metric(metrics->contrastive) + "\n";
    m += "metric.L_gen=" + detail::format_metric(metrics->generation) + "\n";
    m += "metric.tau=" + detail::format_metric(metrics->tau) + "\n";
    m += "metric.variance=" + detail::format_metric(metrics->collapse.variance) + "\n";
  }
  if (cfg) {
    for (const auto& line : split(cfg->to_text(), '\n')) {
      if (!line.empty()) m += "config." + line + "\n";
    }
  }
  w.put_text(m);
  const auto& params = model.parameters().all();
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) detail::write_array(w, p.name, p.tensor.value());
  const bool with_opt = opt != nullptr && opt->first_moments().size() == params.size();
  w.put(static_cast<std::uint8_t>(with_opt ? 1 : 0));
  if (with_opt) {
    w.put(static_cast<std::uint64_t>(opt->steps()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      detail::write_array(w, params[i].name, opt->first_moments()[i]);
      detail::write_array(w, params[i].name, opt->second_moments()[i]);
    }
  }
  w.put_bytes("LCLEND\0\0", 8);
  return w.bytes();
}

template <typename T>
void save_checkpoint(const std::string& path, const LCLModel<T>& model, const AdamW<T>* opt, std::uint64_t step,
                     const TrainConfig* cfg = nullptr, const LossReport* metrics = nullptr) {
  write_bytes(path, serialize_checkpoint(model, opt, step, cfg, metrics));
}

inline Checkpoint deserialize_checkpoint(ByteReader r) {
  Checkpoint c;
  r.section("header");
  r.expect_magic(kCheckpointMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  r.section("manifest");
  try {
    KeyValues kv = KeyValues::parse(r.get_text(), "checkpoint manifest");
    for (const auto& k : kv.keys()) c.manifest.emplace_back(k, kv.raw(k));
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }
  for (const char* key : {"dtype", "step"})
    if (!c.find(key)) r.fail(std::string("missing key '") + key + "'");
  const std::string dt = c.get("dtype");
  if (dt != "f32" && dt != "f64") r.fail("unknown dtype '" + dt + "'");
  try {
    (void)c.step();
  } catch (const std::exception&) {
    r.fail("step is not an integer");
  }
  r.section("parameters");
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    c.parameters.push_back(detail::read_array(r));
    if (c.parameters.back().dtype != c.dtype()) r.fail("parameter '" + c.parameters.back().name + "' dtype differs from manifest");
  }
  r.section("optimizer");
  const auto has_opt = r.get<std::uint8_t>();
  if (has_opt > 1) r.fail("bad optimizer flag " + std::to_string(has_opt));
  if (has_opt) {
    c.optimizer_steps = r.get<std::uint64_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
      c.first_moments.push_back(detail::read_array(r));
      c.second_moments.push_back(detail::read_array(r));
      const auto& p = c.parameters[i];
      if (c.first_moments.back().name != p.name || c.second_moments.back().name != p.name ||
          c.first_moments.back().values.shape() != p.values.shape() ||
          c.second_moments.back().values.shape() != p.values.shape()) {
        r.fail("moments for parameter '" + p.name + "' do not line up");
      }
    }
  }
  r.section("trailer");
  char end[8];
  r.get_bytes(end, 8);
  if (std::string(end, 6) != "LCLEND") r.fail("bad end marker");
  if (!r.at_end()) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  return c;
}

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(ByteReader::from_file(path)); }

/// Model fields that differ between the checkpoint and `cfg`, as
/// "field (checkpoint X, config Y)".
inline std::vector<std::string> checkpoint_mismatches(const Checkpoint& c, const ModelConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& [k, v] : cfg.fields()) {
    auto have = c.find("model." + k);
    if (!have) {
      out.push_back(k + " (missing from checkpoint)");
    } else if (*have != v) {
      out.push_back(k + " (checkpoint " + *have + ", config " + v + ")");
    }
  }
  return out;
}

/// Model configuration rebuilt from the manifest's config echo.
inline ModelConfig checkpoint_model_config(const Checkpoint& c) {
  ModelConfig m = c.train_config().model;
  auto diff = checkpoint_mismatches(c, m);
  if (!diff.empty()) throw CorruptFileError("manifest", "config echo disagrees with model fields: " + diff.front());
  return m;
}

/// Copies parameters (and moments when `opt` is given) into a model built
/// from a matching configuration. Refuses on any field, name, shape or
/// precision mismatch.
template <typename T>
void restore_checkpoint(const Checkpoint& c, LCLModel<T>& model, AdamW<T>* opt = nullptr) {
  auto diff = checkpoint_mismatches(c, model.config());
  if (c.dtype() != dtype_of<T>()) diff.push_back("dtype (checkpoint " + to_string(c.dtype()) + ", model " + to_string(dtype_of<T>()) + ")");
  if (!diff.empty()) {
    std::string msg;
    for (const auto& d : diff) msg += (msg.empty() ? "" : "; ") + d;
    throw CheckpointMismatchError(diff, msg);
  }
  auto& params = model.parameters().all();
  if (params.size() != c.parameters.size()) {
    throw CheckpointMismatchError({"parameters"}, "checkpoint holds " + std::to_string(c.parameters.size()) +
                                                      " parameters, model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& s = c.parameters[i];
    if (s.name != params[i].name || s.values.shape() != params[i].tensor.shape()) {
      throw CheckpointMismatchError({s.name}, "parameter '" + s.name + "' " + shape_str(s.values.shape()) +
                                                  " does not match model parameter '" + params[i].name + "' " +
                                                  shape_str(params[i].tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.mutable_value() = c.parameters[i].values.template cast<T>();
  if (opt) {
    if (c.first_moments.empty()) throw CheckpointMismatchError({"optimizer"}, "checkpoint has no optimizer state");
    for (std::size_t i = 0; i < params.size(); ++i) {
      opt->first_moments()[i] = c.first_moments[i].values.template cast<T>();
      opt->second_moments()[i] = c.second_moments[i].values.template cast<T>();
    }
    opt->set_steps(c.optimizer_steps);
  }
}

}  // namespace lcl
