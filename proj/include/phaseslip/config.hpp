#pragma once

// Run configuration: JSON file merged over built-in defaults, then environment
// overrides, then command-line flags. The effective document is what gets hashed
// and echoed into every output directory.

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "phaseslip/errors.hpp"

#ifndef PHASESLIP_DATA_DIR
#define PHASESLIP_DATA_DIR "data"
#endif

extern char** environ;

namespace phaseslip {

using json = nlohmann::json;

inline constexpr const char* kVersion = "1.0.0";
// PHASESLIP_CFG_GRID__P=8 sets grid.p; "__" separates levels, matching is case-insensitive.
inline constexpr const char* kEnvPrefix = "PHASESLIP_CFG_";

inline json default_config() {
  return json::parse(R"({
    "device": null,
    "params": {"omega0": 8.0, "E_C": 1.6, "gamma_ratio": 0.1, "z": null, "E_J": null},
    "temperature_mK": 0.0,
    "grid": {
      "tau_max_w0": 100.0, "dtau_w0": 0.02, "v_w0": 50.0, "delta": null,
      "p": 6, "window_lo_w0": 0.05, "window_hi_w0": 3.0, "f_max_w0": 2.5,
      "omega_c_frac": 0.75, "M": 5, "method": "iterative", "scheme": "stabilized", "tol": 1e-8
    },
    "probes": {"lo_w0": 0.5, "hi_w0": 1.5, "n": 21},
    "scan": {
      "gamma_ratios": [0.01, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5],
      "omega0": 8.0, "E_C": 1.6, "temperature_mK": 0.0
    },
    "devices": {
      "table": "", "omega0_min": 4.0, "omega0_max": 10.0, "n_omega0": 7,
      "temperature_mK": 40.0, "band": 0.1
    },
    "output_dir": "out",
    "cache": true,
    "workers": 1
  })");
}

namespace detail {

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// `proto` is the default value at this key; null defaults accept numbers and strings.
inline void check_type(const json& proto, const json& v, const std::string& path) {
  auto bad = [&](const char* want) { throw ConfigError("config key '" + path + "': expected " + want); };
  if (proto.is_null()) {
    if (!(v.is_null() || v.is_number() || v.is_string())) bad("number, string or null");
  } else if (proto.is_boolean()) {
    if (!v.is_boolean()) bad("boolean");
  } else if (proto.is_number_integer()) {
    if (!v.is_number_integer()) bad("integer");
  } else if (proto.is_number()) {
    if (!v.is_number()) bad("number");
  } else if (proto.is_string()) {
    if (!v.is_string()) bad("string");
  } else if (proto.is_array()) {
    if (!v.is_array()) bad("array");
    for (const auto& e : v)
      if (!e.is_number()) bad("array of numbers");
  }
}

inline void merge(json& base, const json& over, const std::string& path) {
  if (!over.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (auto it = over.begin(); it != over.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge(slot, it.value(), key);
    } else {
      check_type(slot, it.value(), key);
      slot = it.value();
    }
  }
}

inline json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

}  // namespace detail

// Applies every PHASESLIP_CFG_* variable in `env` (NAME=value strings).
inline void apply_env_overrides(json& cfg, const std::vector<std::string>& env) {
  const std::string prefix = kEnvPrefix;
  for (const auto& kv : env) {
    if (kv.rfind(prefix, 0) != 0) continue;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    const std::string name = kv.substr(prefix.size(), eq - prefix.size());
    std::vector<std::string> parts;
    for (std::size_t pos = 0;;) {
      const auto next = name.find("__", pos);
      parts.push_back(name.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
      if (next == std::string::npos) break;
      pos = next + 2;
    }
    json* node = &cfg;
    std::string path;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const std::string want = detail::lower(parts[i]);
      json* found = nullptr;
      std::string real;
      if (node->is_object())
        for (auto it = node->begin(); it != node->end(); ++it)
          if (detail::lower(it.key()) == want) {
            found = &it.value();
            real = it.key();
          }
      if (!found) throw ConfigError("environment variable " + kv.substr(0, eq) + " names no config key");
      path += (path.empty() ? "" : ".") + real;
      node = found;
      if (i + 1 < parts.size() && !node->is_object())
        throw ConfigError("environment variable " + kv.substr(0, eq) + " descends into a scalar");
    }
    if (node->is_object()) throw ConfigError("environment variable " + kv.substr(0, eq) + " names a section");
    json v = detail::parse_scalar(kv.substr(eq + 1));
    // "8" for a number slot arrives as a number; anything else is type-checked as given
    detail::check_type(*node, v, path);
    *node = v;
  }
}

inline std::vector<std::string> process_environment() {
  std::vector<std::string> out;
  for (char** e = environ; e && *e; ++e) out.emplace_back(*e);
  return out;
}

inline json load_config(const std::optional<std::string>& path, const std::vector<std::string>& env) {
  json cfg = default_config();
  if (path) {
    std::ifstream f(*path);
    if (!f) throw ConfigError("cannot open config " + *path);
    json user;
    try {
      user = json::parse(f, nullptr, true, true);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    detail::merge(cfg, user, "");
  }
  apply_env_overrides(cfg, env);
  if (cfg["devices"]["table"].get<std::string>().empty())
    cfg["devices"]["table"] = std::string(PHASESLIP_DATA_DIR) + "/table1.csv";
  return cfg;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Output location, cache use and worker count do not change any number, so they
// stay out of the hash.
inline std::string config_hash(const json& cfg) {
  json c = cfg;
  c.erase("output_dir");
  c.erase("cache");
  c.erase("workers");
  return hex64(fnv1a(c.dump()));
}

// ---- typed view --------------------------------------------------------------

struct GridSettings {
  double tau_max_w0 = 100.0, dtau_w0 = 0.02, v_w0 = 50.0;
  std::optional<double> delta;
  int p = 6;
  double window_lo_w0 = 0.05, window_hi_w0 = 3.0, f_max_w0 = 2.5;
  double omega_c_frac = 0.75;
  int M = 5;
  std::string method = "iterative", scheme = "stabilized";
  double tol = 1e-8;
};

struct RunConfig {
  std::optional<std::string> device;
  double omega0 = 8.0, E_C = 1.6, gamma_ratio = 0.1;
  std::optional<double> z, E_J;
  double T_mK = 0.0;
  GridSettings grid;
  double probe_lo_w0 = 0.5, probe_hi_w0 = 1.5;
  int probe_n = 21;
  std::vector<double> scan_ratios;
  double scan_omega0 = 8.0, scan_E_C = 1.6, scan_T_mK = 0.0;
  std::string device_table;
  double dev_w_min = 4.0, dev_w_max = 10.0;
  int dev_n = 7;
  double dev_T_mK = 40.0, dev_band = 0.1;
  std::string output_dir = "out";
  bool cache = true;
  int workers = 1;
  json effective;
  std::string hash;
};

namespace detail {
inline std::optional<double> opt_number(const json& j, const std::string& key) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_number()) throw ConfigError("config key '" + key + "' must be a number or null");
  return j.get<double>();
}
}  // namespace detail

inline RunConfig typed_config(const json& cfg) {
  RunConfig r;
  r.effective = cfg;
  r.hash = config_hash(cfg);
  if (!cfg["device"].is_null()) {
    if (!cfg["device"].is_string()) throw ConfigError("config key 'device' must be a string");
    r.device = cfg["device"].get<std::string>();
  }
  const auto& p = cfg["params"];
  r.omega0 = p["omega0"].get<double>();
  r.E_C = p["E_C"].get<double>();
  r.gamma_ratio = p["gamma_ratio"].get<double>();
  r.z = detail::opt_number(p["z"], "params.z");
  r.E_J = detail::opt_number(p["E_J"], "params.E_J");
  r.T_mK = cfg["temperature_mK"].get<double>();
  const auto& g = cfg["grid"];
  r.grid.tau_max_w0 = g["tau_max_w0"].get<double>();
  r.grid.dtau_w0 = g["dtau_w0"].get<double>();
  r.grid.v_w0 = g["v_w0"].get<double>();
  r.grid.delta = detail::opt_number(g["delta"], "grid.delta");
  r.grid.p = g["p"].get<int>();
  r.grid.window_lo_w0 = g["window_lo_w0"].get<double>();
  r.grid.window_hi_w0 = g["window_hi_w0"].get<double>();
  r.grid.f_max_w0 = g["f_max_w0"].get<double>();
  r.grid.omega_c_frac = g["omega_c_frac"].get<double>();
  r.grid.M = g["M"].get<int>();
  r.grid.method = g["method"].get<std::string>();
  r.grid.scheme = g["scheme"].get<std::string>();
  r.grid.tol = g["tol"].get<double>();
  r.probe_lo_w0 = cfg["probes"]["lo_w0"].get<double>();
  r.probe_hi_w0 = cfg["probes"]["hi_w0"].get<double>();
  r.probe_n = cfg["probes"]["n"].get<int>();
  const auto& s = cfg["scan"];
  r.scan_ratios = s["gamma_ratios"].get<std::vector<double>>();
  r.scan_omega0 = s["omega0"].get<double>();
  r.scan_E_C = s["E_C"].get<double>();
  r.scan_T_mK = s["temperature_mK"].get<double>();
  const auto& d = cfg["devices"];
  r.device_table = d["table"].get<std::string>();
  r.dev_w_min = d["omega0_min"].get<double>();
  r.dev_w_max = d["omega0_max"].get<double>();
  r.dev_n = d["n_omega0"].get<int>();
  r.dev_T_mK = d["temperature_mK"].get<double>();
  r.dev_band = d["band"].get<double>();
  r.output_dir = cfg["output_dir"].get<std::string>();
  r.cache = cfg["cache"].get<bool>();
  r.workers = cfg["workers"].get<int>();

  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
  };
  need(r.omega0 > 0 && r.E_C > 0, "params.omega0 and params.E_C must be positive");
  need(r.gamma_ratio >= 0, "params.gamma_ratio must be >= 0");
  need(!r.z || *r.z > 0, "params.z must be positive");
  need(r.T_mK >= 0 && r.scan_T_mK >= 0 && r.dev_T_mK >= 0, "temperatures must be >= 0");
  need(r.grid.tau_max_w0 > 0 && r.grid.dtau_w0 > 0 && r.grid.dtau_w0 < r.grid.tau_max_w0,
       "grid.tau_max_w0 > grid.dtau_w0 > 0 required");
  need(r.grid.v_w0 > 0, "grid.v_w0 must be positive");
  need(!r.grid.delta || *r.grid.delta > 0, "grid.delta must be positive");
  need(r.grid.p >= 2 && r.grid.p % 2 == 0, "grid.p must be an even integer >= 2");
  need(r.grid.window_lo_w0 >= 0 && r.grid.window_hi_w0 > r.grid.window_lo_w0, "grid window must be increasing");
  need(r.grid.f_max_w0 > 0, "grid.f_max_w0 must be positive");
  need(r.grid.M >= 1, "grid.M must be >= 1");
  need(r.grid.method == "iterative" || r.grid.method == "integro_differential",
       "grid.method must be 'iterative' or 'integro_differential'");
  need(r.grid.scheme == "stabilized" || r.grid.scheme == "direct", "grid.scheme must be 'stabilized' or 'direct'");
  need(r.grid.tol > 0, "grid.tol must be positive");
  need(r.probe_n >= 1 && r.probe_lo_w0 > 0 && r.probe_hi_w0 >= r.probe_lo_w0, "probes: need n >= 1, 0 < lo <= hi");
  need(!r.scan_ratios.empty(), "scan.gamma_ratios must not be empty");
  for (double x : r.scan_ratios) need(x > 0 && x <= 0.7, "scan.gamma_ratios entries must lie in (0, 0.7]");
  need(r.scan_omega0 > 0 && r.scan_E_C > 0, "scan.omega0 and scan.E_C must be positive");
  need(r.dev_n >= 1 && r.dev_w_min > 0 && r.dev_w_max >= r.dev_w_min, "devices: need n_omega0 >= 1, 0 < min <= max");
  need(r.dev_band >= 0 && r.dev_band < 1, "devices.band must lie in [0, 1)");
  need(r.workers >= 1 && r.workers <= 256, "workers must lie in [1, 256]");
  need(!r.output_dir.empty(), "output_dir must not be empty");
  return r;
}

}  // namespace phaseslip
