#pragma once

// Byzantine node and broker behaviours. Brokers can only relay or suppress;
// every filter here returns a subset of its input.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "blizzard/consensus.hpp"
#include "blizzard/core.hpp"
#include "blizzard/random.hpp"

namespace blizzard {

enum class NodeStrategy { Honest, PaperWorstCase, AlwaysOpposite, Crash, AlwaysNo, DoubleSpend };
enum class BrokerStrategy { Honest, PaperSuppression, Crash };

inline const char* to_string(NodeStrategy s) {
  switch (s) {
    case NodeStrategy::Honest: return "honest";
    case NodeStrategy::PaperWorstCase: return "paper-worst-case";
    case NodeStrategy::AlwaysOpposite: return "always-opposite";
    case NodeStrategy::Crash: return "crash";
    case NodeStrategy::AlwaysNo: return "always-no";
    case NodeStrategy::DoubleSpend: return "double-spend";
  }
  return "?";
}

inline const char* to_string(BrokerStrategy s) {
  switch (s) {
    case BrokerStrategy::Honest: return "honest";
    case BrokerStrategy::PaperSuppression: return "paper-suppression";
    case BrokerStrategy::Crash: return "crash";
  }
  return "?";
}

inline NodeStrategy parse_node_strategy(std::string_view s) {
  for (auto v : {NodeStrategy::Honest, NodeStrategy::PaperWorstCase, NodeStrategy::AlwaysOpposite,
                 NodeStrategy::Crash, NodeStrategy::AlwaysNo, NodeStrategy::DoubleSpend})
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown node strategy '" + std::string(s) + "'");
}

inline BrokerStrategy parse_broker_strategy(std::string_view s) {
  for (auto v : {BrokerStrategy::Honest, BrokerStrategy::PaperSuppression, BrokerStrategy::Crash})
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown broker strategy '" + std::string(s) + "'");
}

struct AdversaryConfig {
  NodeStrategy node_strategy = NodeStrategy::PaperWorstCase;
  BrokerStrategy broker_strategy = BrokerStrategy::PaperSuppression;
};

/// Which Byzantine entities exist in one run.
struct Membership {
  std::vector<bool> byzantine_node;
  std::vector<bool> byzantine_broker;

  [[nodiscard]] std::uint32_t byzantine_nodes() const {
    return static_cast<std::uint32_t>(std::count(byzantine_node.begin(), byzantine_node.end(), true));
  }
  [[nodiscard]] std::uint32_t byzantine_brokers() const {
    return static_cast<std::uint32_t>(
        std::count(byzantine_broker.begin(), byzantine_broker.end(), true));
  }
};

/// Uniformly random b-subset of nodes and m_b-subset of brokers.
inline Membership draw_membership(const Population& pop, Rng& rng) {
  Membership out;
  out.byzantine_node.assign(pop.n(), false);
  out.byzantine_broker.assign(pop.m(), false);
  for (auto i : rng.sample_without_replacement(pop.n(), pop.b)) out.byzantine_node[i] = true;
  for (auto i : rng.sample_without_replacement(pop.m(), pop.m_b)) out.byzantine_broker[i] = true;
  return out;
}

/// Color of the correct node that triggered the query: u prefers red,
/// v prefers blue.
enum class QueryClass { U, V };

inline QueryClass class_of(Color c) { return c == Color::Red ? QueryClass::U : QueryClass::V; }

/// Color a Byzantine node reports. nullopt means it stays silent.
///   paper-worst-case: red to u-queries, blue to v-queries
///   always-opposite:  opposite of the current correct-node majority
///   crash / always-no: silent
///   honest / double-spend: its own assigned color
inline std::optional<Color> byzantine_node_color(NodeStrategy s, QueryClass querier,
                                                 Color global_majority, Color own_color) {
  switch (s) {
    case NodeStrategy::PaperWorstCase: return querier == QueryClass::U ? Color::Red : Color::Blue;
    case NodeStrategy::AlwaysOpposite: return opposite(global_majority);
    case NodeStrategy::Crash:
    case NodeStrategy::AlwaysNo: return std::nullopt;
    case NodeStrategy::Honest:
    case NodeStrategy::DoubleSpend: return own_color;
  }
  return std::nullopt;
}

/// Largest response count T whose eta-threshold ceil(eta*T) is met by `blue`.
inline std::uint32_t max_population_for(std::uint32_t blue, double eta) {
  if (blue == 0) return 0;
  auto t = static_cast<std::uint32_t>(static_cast<double>(blue) / eta) + 2;
  while (t > blue && threshold_count(eta, t) > blue) --t;
  return t;
}

/// Response subset a Byzantine broker evaluates.
///   paper-suppression: u-queries pass through untouched. For v-queries the
///     broker drops as few entries as possible (silent ones first, then red
///     ones, highest node id first) so that blue holds an eta-majority of
///     what is left; if blue has no responses at all it passes through.
///   crash: empty (the broker stays silent).
///   honest: unchanged.
inline std::map<NodeId, std::optional<Color>> byzantine_broker_filter(
    BrokerStrategy s, const std::map<NodeId, std::optional<Color>>& colors, QueryClass querier,
    double eta) {
  if (s == BrokerStrategy::Crash) return {};
  if (s == BrokerStrategy::Honest || querier == QueryClass::U) return colors;

  std::uint32_t red = 0, blue = 0, silent = 0;
  for (const auto& [u, c] : colors) {
    if (!c)
      ++silent;
    else
      (*c == Color::Red ? red : blue) += 1;
  }
  const auto total = red + blue + silent;
  const auto keep = max_population_for(blue, eta);
  if (blue == 0 || keep >= total) return colors;

  auto drop_silent = std::min(silent, total - keep);
  auto drop_red = total - keep - drop_silent;
  auto out = colors;
  for (auto it = out.end(); it != out.begin() && (drop_silent > 0 || drop_red > 0);) {
    --it;
    if (!it->second && drop_silent > 0) {
      it = out.erase(it);
      --drop_silent;
    } else if (it->second && *it->second == Color::Red && drop_red > 0) {
      it = out.erase(it);
      --drop_red;
    }
  }
  return out;
}

/// Count-level form of the filter for simulators: returns the (red, blue,
/// population) triple the broker evaluates.
struct ColorTally {
  std::uint32_t red = 0;
  std::uint32_t blue = 0;
  std::uint32_t population = 0;
};

inline ColorTally byzantine_broker_counts(BrokerStrategy s, ColorTally seen, QueryClass querier,
                                          double eta) {
  if (s == BrokerStrategy::Crash) return {};
  if (s == BrokerStrategy::Honest || querier == QueryClass::U || seen.blue == 0) return seen;
  const auto keep = max_population_for(seen.blue, eta);
  if (keep >= seen.population) return seen;
  const auto silent = seen.population - seen.red - seen.blue;
  auto drop = seen.population - keep;
  const auto drop_silent = std::min(silent, drop);
  drop -= drop_silent;
  return {seen.red - drop, seen.blue, keep};
}

enum class TxResponse { Yes, No, Silent, ConflictingIssue };

/// Transaction-mode answer of a Byzantine node given what an honest node
/// would say.
inline TxResponse byzantine_node_tx_response(NodeStrategy s, Vote honest_answer) {
  switch (s) {
    case NodeStrategy::Honest:
    case NodeStrategy::DoubleSpend:
      return honest_answer == Vote::Yes ? TxResponse::Yes : TxResponse::No;
    case NodeStrategy::AlwaysNo: return TxResponse::No;
    case NodeStrategy::PaperWorstCase:
    case NodeStrategy::AlwaysOpposite:
      return honest_answer == Vote::Yes ? TxResponse::No : TxResponse::Yes;
    case NodeStrategy::Crash: return TxResponse::Silent;
  }
  return TxResponse::Silent;
}

/// Two transactions sharing a conflict key, each meant for a disjoint half of
/// the issuer's brokers.
struct DoubleSpend {
  Transaction first;
  Transaction second;
  std::vector<BrokerId> first_brokers;
  std::vector<BrokerId> second_brokers;
};

inline DoubleSpend make_double_spend(NodeId issuer, std::vector<TxId> parents, TxId first_id,
                                     TxId second_id, ConflictKey key,
                                     const std::vector<BrokerId>& issuer_brokers) {
  DoubleSpend ds;
  ds.first = {first_id, parents, issuer, key};
  ds.second = {second_id, std::move(parents), issuer, key};
  const auto half = (issuer_brokers.size() + 1) / 2;
  ds.first_brokers.assign(issuer_brokers.begin(), issuer_brokers.begin() + static_cast<long>(half));
  ds.second_brokers.assign(issuer_brokers.begin() + static_cast<long>(half), issuer_brokers.end());
  return ds;
}

}  // namespace blizzard
