#pragma once

// Flat JSON experiment config. Protocol symbols live at the top level
// (n, m, k, alpha, eta, beta1, beta2, rho_n, rho_b, seed); each subcommand
// may add one object keyed by its name with '-' replaced by '_'.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "blizzard/adversary.hpp"
#include "blizzard/core.hpp"

namespace blizzard {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<ParamIssue> issues)
      : std::runtime_error(describe(issues)), issues_(std::move(issues)) {}
  [[nodiscard]] const std::vector<ParamIssue>& issues() const { return issues_; }

 private:
  static std::string describe(const std::vector<ParamIssue>& issues) {
    std::string s = "invalid parameters:";
    for (const auto& i : issues) s += std::string("\n  ") + to_string(i.code) + ": " + i.detail;
    return s;
  }
  std::vector<ParamIssue> issues_;
};

inline constexpr std::string_view kSubcommands[] = {
    "safety-region", "color-run", "tx-run",  "lncr",     "matching-check",
    "throughput",    "latency",   "messages", "tradeoff", "analyze-d"};

inline std::string section_key(std::string_view subcommand) {
  std::string s(subcommand);
  for (auto& ch : s)
    if (ch == '-') ch = '_';
  return s;
}

struct LabConfig {
  ProtocolParams params;
  double rho_n = 0;
  double rho_b = 0;
  std::uint64_t seed = 1;
  AdversaryConfig adversary;
  nlohmann::json sections = nlohmann::json::object();

  [[nodiscard]] Population population() const { return Population::from_ratios(params, rho_n, rho_b); }

  [[nodiscard]] nlohmann::json section(std::string_view subcommand) const {
    const auto key = section_key(subcommand);
    return sections.contains(key) ? sections.at(key) : nlohmann::json::object();
  }
};

namespace detail {

template <typename T>
T typed(const nlohmann::json& v, std::string_view where) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError("");
    } else if constexpr (std::is_arithmetic_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + std::string(where) + "' has the wrong type (got " +
                      v.dump() + ")");
  }
}

}  // namespace detail

/// Value of `key` in a section object, or `fallback` when absent.
template <typename T>
T get_or(const nlohmann::json& section, std::string_view key, T fallback) {
  if (!section.is_object()) throw ConfigError("config section must be an object");
  const auto it = section.find(std::string(key));
  if (it == section.end() || it->is_null()) return fallback;
  return detail::typed<T>(*it, key);
}

inline void require_keys(const nlohmann::json& section, std::string_view name,
                         const std::vector<std::string_view>& allowed) {
  for (const auto& [key, _] : section.items()) {
    bool ok = false;
    for (auto a : allowed) ok |= key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in section '" + std::string(name) + "'");
  }
}

/// Parses and validates. Unknown top-level keys are errors.
inline LabConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  LabConfig c;
  auto& p = c.params;
  for (const auto& [key, v] : j.items()) {
    if (key == "n") p.n = detail::typed<std::uint32_t>(v, key);
    else if (key == "m") p.m = detail::typed<std::uint32_t>(v, key);
    else if (key == "k") p.k = detail::typed<std::uint32_t>(v, key);
    else if (key == "alpha") p.alpha = detail::typed<double>(v, key);
    else if (key == "eta") p.eta = detail::typed<double>(v, key);
    else if (key == "beta1") p.beta1 = detail::typed<std::uint32_t>(v, key);
    else if (key == "beta2") p.beta2 = detail::typed<std::uint32_t>(v, key);
    else if (key == "rho_n") c.rho_n = detail::typed<double>(v, key);
    else if (key == "rho_b") c.rho_b = detail::typed<double>(v, key);
    else if (key == "seed") c.seed = detail::typed<std::uint64_t>(v, key);
    else if (key == "node_strategy")
      c.adversary.node_strategy = parse_node_strategy(detail::typed<std::string>(v, key));
    else if (key == "broker_strategy")
      c.adversary.broker_strategy = parse_broker_strategy(detail::typed<std::string>(v, key));
    else {
      bool section = false;
      for (auto s : kSubcommands) section |= key == section_key(s);
      if (!section) throw ConfigError("unknown config key '" + key + "'");
      if (!v.is_object()) throw ConfigError("section '" + key + "' must be an object");
      c.sections[key] = v;
    }
  }
  if (c.rho_n < 0 || c.rho_n > 1 || c.rho_b < 0 || c.rho_b > 1)
    throw ConfigError("rho_n and rho_b must lie in [0, 1]");
  auto issues = validate_params(p, c.population());
  if (!issues.empty()) throw ValidationError(std::move(issues));
  return c;
}

inline LabConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

inline nlohmann::json to_json(const LabConfig& c) {
  const auto& p = c.params;
  nlohmann::json j = {{"n", p.n},         {"m", p.m},         {"k", p.k},
                      {"alpha", p.alpha}, {"eta", p.eta},     {"beta1", p.beta1},
                      {"beta2", p.beta2}, {"rho_n", c.rho_n}, {"rho_b", c.rho_b},
                      {"seed", c.seed},
                      {"node_strategy", to_string(c.adversary.node_strategy)},
                      {"broker_strategy", to_string(c.adversary.broker_strategy)}};
  for (const auto& [k, v] : c.sections.items()) j[k] = v;
  return j;
}

/// "100Mbps", "10 Mb/s", "1e6", "2.5Gbps" -> bits per second.
inline double parse_bandwidth(std::string_view text) {
  std::string s;
  for (char ch : text)
    if (ch != ' ') s += ch;
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("bad bandwidth '" + std::string(text) + "'");
  }
  std::string unit = s.substr(used);
  for (auto& ch : unit) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  double scale = 0;
  if (unit.empty() || unit == "bps" || unit == "b/s") scale = 1;
  else if (unit == "kbps" || unit == "kb/s") scale = 1e3;
  else if (unit == "mbps" || unit == "mb/s") scale = 1e6;
  else if (unit == "gbps" || unit == "gb/s") scale = 1e9;
  else throw ConfigError("unknown bandwidth unit '" + unit + "'");
  if (!(v > 0)) throw ConfigError("bandwidth must be positive");
  return v * scale;
}

}  // namespace blizzard
