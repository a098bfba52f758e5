#pragma once

// Shared vocabulary: protocol parameters, populations, identities and the
// four node/broker message kinds.

#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

namespace blizzard {

// ---------------------------------------------------------------------------
// Identities

template <typename Tag, typename Rep>
struct StrongId {
  Rep value{};

  constexpr StrongId() = default;
  constexpr explicit StrongId(Rep v) : value(v) {}

  constexpr auto operator<=>(const StrongId&) const = default;
};

template <typename Tag, typename Rep>
std::ostream& operator<<(std::ostream& os, StrongId<Tag, Rep> id) {
  return os << id.value;
}

using NodeId = StrongId<struct NodeIdTag, std::uint32_t>;
using BrokerId = StrongId<struct BrokerIdTag, std::uint32_t>;
using TxId = StrongId<struct TxIdTag, std::uint64_t>;
using ConflictKey = StrongId<struct ConflictKeyTag, std::uint64_t>;

struct StrongIdHash {
  template <typename Tag, typename Rep>
  std::size_t operator()(StrongId<Tag, Rep> id) const noexcept {
    return std::hash<Rep>{}(id.value);
  }
};

// ---------------------------------------------------------------------------
// Parameters

struct ProtocolParams {
  std::uint32_t n = 100;  // mobile nodes
  std::uint32_t m = 8;    // brokers
  std::uint32_t k = 3;    // brokers sampled per node
  double alpha = 0.8;     // node-side threshold over k broker results
  double eta = 0.8;       // broker-side threshold over connected nodes
  std::uint32_t beta1 = 11;
  std::uint32_t beta2 = 150;
};

struct Population {
  std::uint32_t c = 0;    // correct nodes
  std::uint32_t b = 0;    // Byzantine nodes
  std::uint32_t m_c = 0;  // correct brokers
  std::uint32_t m_b = 0;  // Byzantine brokers

  [[nodiscard]] std::uint32_t n() const { return c + b; }
  [[nodiscard]] std::uint32_t m() const { return m_c + m_b; }
  [[nodiscard]] double rho_n() const { return n() == 0 ? 0.0 : double(b) / n(); }
  [[nodiscard]] double rho_b() const { return m() == 0 ? 0.0 : double(m_b) / m(); }

  static Population honest(const ProtocolParams& p) { return {p.n, 0, p.m, 0}; }

  // Byzantine counts are rounded to the nearest integer.
  static Population from_ratios(const ProtocolParams& p, double rho_n, double rho_b) {
    auto b = static_cast<std::uint32_t>(std::lround(rho_n * p.n));
    auto mb = static_cast<std::uint32_t>(std::lround(rho_b * p.m));
    if (b > p.n) b = p.n;
    if (mb > p.m) mb = p.m;
    return {p.n - b, b, p.m - mb, mb};
  }
};

// Smallest integer count satisfying count >= fraction * population. The
// product is nudged down by a relative epsilon so that e.g. 0.7 * 10 is
// treated as exactly 7 rather than 7.000000000000001.
inline std::uint32_t threshold_count(double fraction, std::uint32_t population) {
  const double x = fraction * static_cast<double>(population);
  const double nudged = x - 1e-9 * std::max(1.0, std::abs(x));
  const double c = std::ceil(nudged);
  return c <= 0.0 ? 0u : static_cast<std::uint32_t>(c);
}

enum class ParamErrc {
  AlphaOutOfRange,
  EtaOutOfRange,
  KBelowOne,
  KExceedsM,
  MExceedsN,
  Beta1BelowOne,
  Beta2BelowOne,
  NodePopulationMismatch,
  BrokerPopulationMismatch,
};

inline const char* to_string(ParamErrc e) {
  switch (e) {
    case ParamErrc::AlphaOutOfRange: return "AlphaOutOfRange";
    case ParamErrc::EtaOutOfRange: return "EtaOutOfRange";
    case ParamErrc::KBelowOne: return "KBelowOne";
    case ParamErrc::KExceedsM: return "KExceedsM";
    case ParamErrc::MExceedsN: return "MExceedsN";
    case ParamErrc::Beta1BelowOne: return "Beta1BelowOne";
    case ParamErrc::Beta2BelowOne: return "Beta2BelowOne";
    case ParamErrc::NodePopulationMismatch: return "NodePopulationMismatch";
    case ParamErrc::BrokerPopulationMismatch: return "BrokerPopulationMismatch";
  }
  return "Unknown";
}

struct ParamIssue {
  ParamErrc code;
  std::string detail;
};

/// Reports every violated bound; an empty result means the pair is valid.
/// eta = 1 is accepted (the color-game analysis allows it).
inline std::vector<ParamIssue> validate_params(const ProtocolParams& p, const Population& pop) {
  std::vector<ParamIssue> issues;
  auto add = [&](ParamErrc c, std::string d) { issues.push_back({c, std::move(d)}); };

  if (!(p.alpha > 0.5 && p.alpha < 1.0))
    add(ParamErrc::AlphaOutOfRange, "alpha must lie in (1/2, 1), got " + std::to_string(p.alpha));
  if (!(p.eta > 0.5 && p.eta <= 1.0))
    add(ParamErrc::EtaOutOfRange, "eta must lie in (1/2, 1], got " + std::to_string(p.eta));
  if (p.k < 1) add(ParamErrc::KBelowOne, "k must be at least 1");
  if (p.k > p.m)
    add(ParamErrc::KExceedsM,
        "k=" + std::to_string(p.k) + " exceeds m=" + std::to_string(p.m));
  if (p.m > p.n)
    add(ParamErrc::MExceedsN,
        "m=" + std::to_string(p.m) + " exceeds n=" + std::to_string(p.n));
  if (p.beta1 < 1) add(ParamErrc::Beta1BelowOne, "beta1 must be at least 1");
  if (p.beta2 < 1) add(ParamErrc::Beta2BelowOne, "beta2 must be at least 1");
  if (pop.n() != p.n)
    add(ParamErrc::NodePopulationMismatch,
        "c + b = " + std::to_string(pop.n()) + " but n = " + std::to_string(p.n));
  if (pop.m() != p.m)
    add(ParamErrc::BrokerPopulationMismatch,
        "m_c + m_b = " + std::to_string(pop.m()) + " but m = " + std::to_string(p.m));
  return issues;
}

// ---------------------------------------------------------------------------
// Messages

enum class Color : std::uint8_t { Red, Blue };

inline Color opposite(Color c) { return c == Color::Red ? Color::Blue : Color::Red; }
inline const char* to_string(Color c) { return c == Color::Red ? "red" : "blue"; }

enum class Vote : std::uint8_t { No, Yes };

using Verdict = std::variant<Vote, Color>;

struct NodeQuery {
  NodeId from;
  BrokerId to;
  TxId tx;
};

struct BrokerQuery {
  BrokerId from;
  NodeId to;
  TxId tx;
};

struct NodeResponse {
  NodeId from;
  BrokerId to;
  TxId tx;
  Verdict verdict;
};

// One BrokerResult is sent to each connected node.
struct BrokerResult {
  BrokerId from;
  NodeId to;
  TxId tx;
  std::optional<Verdict> verdict;  // nullopt: no eta-majority
};

using Message = std::variant<NodeQuery, BrokerQuery, NodeResponse, BrokerResult>;

}  // namespace blizzard
