#pragma once

#include <json.hpp>

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "msb/amp.hpp"
#include "msb/datasets.hpp"
#include "msb/errors.hpp"
#include "msb/sha256.hpp"

namespace msb {

/// Everything a run needs, serialized as one JSON document.
struct RunConfig {
  AMPConfig amp;
  DatasetSpec dataset;
  std::string output_dir = "runs";
  std::vector<double> eval_sigmas{1.0};
  bool oracle = true;
  std::size_t trials = 5;

  void validate() const {
    try {
      amp.validate();
      dataset.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    if (eval_sigmas.empty()) throw ConfigError("eval_sigmas must not be empty");
    for (double s : eval_sigmas)
      if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("eval_sigmas must be positive and finite");
    if (trials == 0) throw ConfigError("trials must be positive");
  }
};

namespace detail {

/// Reads known keys from one JSON object and rejects everything else.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  template <class T>
  void read(const char* key, T& dst) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_unsigned()) throw ConfigError(where(key) + " must be a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(where(key) + " must be a number");
      }
      dst = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  template <class Fn>
  void read_enum(const char* key, Fn&& parse) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if (!it->is_string()) throw ConfigError(where(key) + " must be a string");
    try {
      parse(it->template get<std::string>());
    } catch (const InvalidArgument& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, v] : obj_.items())
      if (!seen_.count(k)) throw ConfigError("unknown key '" + where(k.c_str()) + "'");
  }

  std::string where(const char* key = nullptr) const {
    if (!key) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const nlohmann::json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline nlohmann::json to_json(const GridSpec& g) {
  return {{"mode", to_string(g.mode)}, {"steps", g.steps}, {"gamma_min", g.gamma_min}, {"gamma_max", g.gamma_max}};
}

inline nlohmann::json to_json(const AMPConfig& c) {
  return {{"outer_iterations", c.outer_iterations},
          {"inner_iterations", c.inner_iterations},
          {"cache_size", c.cache_size},
          {"refresh_period", c.refresh_period},
          {"batch_size", c.batch_size},
          {"grid", to_json(c.grid)},
          {"sigma_min", c.sigma_min},
          {"sigma_max", c.sigma_max},
          {"alpha", c.alpha},
          {"seed", c.seed},
          {"family", to_string(c.family)},
          {"correction", to_string(c.correction)},
          {"correction_time", to_string(c.correction_time)},
          {"weighting", to_string(c.weighting)},
          {"learning_rate", c.learning_rate},
          {"lr_final_fraction", c.lr_final_fraction},
          {"hidden_width", c.hidden_width},
          {"hidden_layers", c.hidden_layers},
          {"time_frequencies", c.time_frequencies},
          {"distill_iterations", c.distill_iterations},
          {"eval_paths", c.eval_paths},
          {"eval_sigma", c.eval_sigma},
          {"blowup_guard", c.blowup_guard}};
}

inline nlohmann::json to_json(const DatasetSpec& d) {
  return {{"kind", to_string(d.kind)}, {"dim", d.dim},       {"r_inner", d.r_inner}, {"r_outer", d.r_outer},
          {"jitter", d.jitter},        {"cells", d.cells},   {"extent", d.extent},   {"count", d.count},
          {"seed", d.seed}};
}

inline nlohmann::json to_json(const RunConfig& r) {
  return {{"amp", to_json(r.amp)},         {"dataset", to_json(r.dataset)}, {"output_dir", r.output_dir},
          {"eval_sigmas", r.eval_sigmas}, {"oracle", r.oracle},            {"trials", r.trials}};
}

inline GridSpec grid_from_json(const nlohmann::json& j, const std::string& path) {
  GridSpec g;
  detail::StrictObject o(j, path);
  o.read_enum("mode", [&](const std::string& s) { g.mode = grid_mode_from_string(s); });
  o.read("steps", g.steps);
  o.read("gamma_min", g.gamma_min);
  o.read("gamma_max", g.gamma_max);
  o.finish();
  return g;
}

inline AMPConfig amp_from_json(const nlohmann::json& j, const std::string& path = "amp") {
  AMPConfig c;
  detail::StrictObject o(j, path);
  o.read("outer_iterations", c.outer_iterations);
  o.read("inner_iterations", c.inner_iterations);
  o.read("cache_size", c.cache_size);
  o.read("refresh_period", c.refresh_period);
  o.read("batch_size", c.batch_size);
  if (const auto* g = o.child("grid")) c.grid = grid_from_json(*g, path + ".grid");
  o.read("sigma_min", c.sigma_min);
  o.read("sigma_max", c.sigma_max);
  o.read("alpha", c.alpha);
  o.read("seed", c.seed);
  o.read_enum("family", [&](const std::string& s) { c.family = drift_family_from_string(s); });
  o.read_enum("correction", [&](const std::string& s) { c.correction = correction_sign_from_string(s); });
  o.read_enum("correction_time", [&](const std::string& s) { c.correction_time = correction_time_from_string(s); });
  o.read_enum("weighting", [&](const std::string& s) { c.weighting = loss_weighting_from_string(s); });
  o.read("learning_rate", c.learning_rate);
  o.read("lr_final_fraction", c.lr_final_fraction);
  o.read("hidden_width", c.hidden_width);
  o.read("hidden_layers", c.hidden_layers);
  o.read("time_frequencies", c.time_frequencies);
  o.read("distill_iterations", c.distill_iterations);
  o.read("eval_paths", c.eval_paths);
  o.read("eval_sigma", c.eval_sigma);
  o.read("blowup_guard", c.blowup_guard);
  o.finish();
  return c;
}

inline DatasetSpec dataset_from_json(const nlohmann::json& j, const std::string& path = "dataset") {
  DatasetSpec d;
  detail::StrictObject o(j, path);
  o.read_enum("kind", [&](const std::string& s) { d.kind = dataset_kind_from_string(s); });
  o.read("dim", d.dim);
  o.read("r_inner", d.r_inner);
  o.read("r_outer", d.r_outer);
  o.read("jitter", d.jitter);
  o.read("cells", d.cells);
  o.read("extent", d.extent);
  o.read("count", d.count);
  o.read("seed", d.seed);
  o.finish();
  return d;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig r;
  detail::StrictObject o(j, "");
  if (const auto* a = o.child("amp")) r.amp = amp_from_json(*a);
  if (const auto* d = o.child("dataset")) r.dataset = dataset_from_json(*d);
  o.read("output_dir", r.output_dir);
  o.read("eval_sigmas", r.eval_sigmas);
  o.read("oracle", r.oracle);
  o.read("trials", r.trials);
  o.finish();
  r.validate();
  return r;
}

/// Parses JSON text; syntax errors become ConfigError naming the byte offset.
inline nlohmann::json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in " + origin + " at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

/// Applies "a.b.c=value" to a JSON document. The value is read as JSON when
/// possible and as a plain string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  if (value.is_object() || value.is_array()) throw ConfigError("overrides must set scalar fields: '" + key + "'");
  nlohmann::json* node = &doc;
  std::size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) throw ConfigError("empty path component in override '" + key + "'");
    if (!node->is_object()) throw ConfigError("override path '" + key + "' crosses a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    pos = dot + 1;
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  nlohmann::json doc = parse_json_text(text, path.string());
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

/// Sorted keys, shortest round-trip numbers, no whitespace. The output
/// directory is left out: it says where a run goes, not what it computes.
inline std::string canonical_json(const RunConfig& cfg) {
  auto doc = to_json(cfg);
  doc.erase("output_dir");
  return doc.dump();
}

inline std::string config_hash(const RunConfig& cfg) { return sha256_hex(canonical_json(cfg)); }

/// <output_dir>/run-<first 16 hex digits of the config hash>
inline std::filesystem::path run_directory(const RunConfig& cfg) {
  return std::filesystem::path(cfg.output_dir) / ("run-" + config_hash(cfg).substr(0, 16));
}

}  // namespace msb
