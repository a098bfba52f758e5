#pragma once

// Node and broker state machines for the transaction protocol and for the
// two-color game used by the safety analysis.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "blizzard/core.hpp"
#include "blizzard/dag.hpp"

namespace blizzard {

struct ColorState {
  Color color = Color::Red;
  std::array<std::uint32_t, 2> conf{0, 0};  // indexed by Color
  std::uint32_t c3 = 0;                     // consecutive same-color majorities
  std::optional<Color> locked;

  [[nodiscard]] std::uint32_t confidence(Color c) const { return conf[static_cast<int>(c)]; }
};

struct NodeState {
  NodeId id;
  std::vector<BrokerId> brokers;  // B(u), |B(u)| = k
  NodeDag dag;
  ColorState color;

  NodeState() = default;
  NodeState(NodeId id_, std::vector<BrokerId> brokers_, FinalityParams finality = {})
      : id(id_), brokers(std::move(brokers_)), dag(finality) {}
};

struct BrokerState {
  BrokerId id;
  std::vector<NodeId> nodes;  // N(b), ascending

  [[nodiscard]] bool connected(NodeId u) const {
    return std::binary_search(nodes.begin(), nodes.end(), u);
  }
};

struct QueryOutcome {
  std::uint32_t affirmative_count = 0;
  std::uint32_t threshold = 0;
  Vote result = Vote::No;
};

// ---------------------------------------------------------------------------
// Transaction protocol

/// A queried node answers yes iff `tx` and all its ancestors are preferred
/// in its own DAG. An unseen transaction is stored first. If a parent is
/// missing the answer is no and the transaction is not stored; the caller
/// is responsible for fetching the ancestors.
inline Vote node_respond_tx(NodeState& node, const Transaction& tx) {
  if (!node.dag.contains(tx.id)) {
    if (!node.dag.missing_parents(tx).empty()) return Vote::No;
    node.dag.add_transaction(tx);
  }
  return node.dag.is_strongly_preferred(tx.id) ? Vote::Yes : Vote::No;
}

/// Yes iff at least ceil(eta * |N(b)|) connected nodes answered yes.
/// Missing answers count as no; an empty group always yields no.
inline QueryOutcome broker_query_tx(const BrokerState& broker,
                                    const std::map<NodeId, Vote>& responses, double eta) {
  QueryOutcome out;
  const auto population = static_cast<std::uint32_t>(broker.nodes.size());
  out.threshold = threshold_count(eta, population);
  for (auto u : broker.nodes) {
    auto it = responses.find(u);
    if (it != responses.end() && it->second == Vote::Yes) ++out.affirmative_count;
  }
  out.result = (population > 0 && out.affirmative_count >= out.threshold) ? Vote::Yes : Vote::No;
  return out;
}

/// Counts affirmative broker results over B(u) (missing = 0). At
/// ceil(alpha * k) or more the node records a voucher. The transaction joins
/// the queried set either way, and a second tally is a no-op.
inline Vote node_tally_tx(NodeState& node, TxId tx, const std::map<BrokerId, Vote>& broker_results,
                          double alpha) {
  if (node.dag.is_queried(tx)) return node.dag.voucher(tx) ? Vote::Yes : Vote::No;
  std::uint32_t yes = 0;
  for (auto b : node.brokers) {
    auto it = broker_results.find(b);
    if (it != broker_results.end() && it->second == Vote::Yes) ++yes;
  }
  const auto need = threshold_count(alpha, static_cast<std::uint32_t>(node.brokers.size()));
  const bool win = yes >= need && !node.brokers.empty();
  if (win) node.dag.record_voucher(tx);
  node.dag.mark_queried(tx);
  return win ? Vote::Yes : Vote::No;
}

// ---------------------------------------------------------------------------
// Color game

inline Color color_node_respond(const NodeState& node) {
  return node.color.locked.value_or(node.color.color);
}

/// The color reported by at least ceil(eta * population) responders, if any.
/// With eta > 1/2 at most one color can qualify.
inline std::optional<Color> eta_majority(std::uint32_t red, std::uint32_t blue,
                                         std::uint32_t population, double eta) {
  if (population == 0) return std::nullopt;
  const auto need = threshold_count(eta, population);
  if (red >= need && red > blue) return Color::Red;
  if (blue >= need && blue > red) return Color::Blue;
  return std::nullopt;
}

/// Honest broker: eta-majority over all of N(b); silent nodes count toward
/// the population but not toward either color.
inline std::optional<Color> color_broker_round(const BrokerState& broker,
                                               const std::map<NodeId, std::optional<Color>>& colors,
                                               double eta) {
  std::uint32_t red = 0, blue = 0;
  for (auto u : broker.nodes) {
    auto it = colors.find(u);
    if (it == colors.end() || !it->second) continue;
    (*it->second == Color::Red ? red : blue) += 1;
  }
  return eta_majority(red, blue, static_cast<std::uint32_t>(broker.nodes.size()), eta);
}

/// Majority over exactly the responses supplied (a Byzantine broker's
/// chosen subset).
inline std::optional<Color> color_subset_round(const std::map<NodeId, std::optional<Color>>& colors,
                                               double eta) {
  std::uint32_t red = 0, blue = 0;
  for (const auto& [u, c] : colors) {
    if (!c) continue;
    (*c == Color::Red ? red : blue) += 1;
  }
  return eta_majority(red, blue, static_cast<std::uint32_t>(colors.size()), eta);
}

struct ColorRule {
  std::uint32_t k = 3;
  double alpha = 0.8;
  std::uint32_t beta1 = 11;
  std::uint32_t beta2 = 150;
};

/// One tally from broker report counts. Returns true if any counter moved.
///   alpha-majority for color c  -> conf[c] += 1; c3 += 1 if c is current
///                                  else c3 = 0
///   conf[other] > conf[current] -> flip, c3 = 0
///   c3 >= beta1 or conf[current] >= beta2 -> lock
inline bool color_tally(ColorState& s, std::uint32_t red_reports, std::uint32_t blue_reports,
                        const ColorRule& rule) {
  if (s.locked) return false;
  const auto need = threshold_count(rule.alpha, rule.k);
  std::optional<Color> win;
  if (red_reports >= need && red_reports > blue_reports)
    win = Color::Red;
  else if (blue_reports >= need && blue_reports > red_reports)
    win = Color::Blue;
  if (!win) return false;

  s.conf[static_cast<int>(*win)] += 1;
  if (*win == s.color)
    s.c3 += 1;
  else
    s.c3 = 0;

  const auto other = opposite(s.color);
  if (s.confidence(other) > s.confidence(s.color)) {
    s.color = other;
    s.c3 = 0;
  }
  if (s.c3 >= rule.beta1 || s.confidence(s.color) >= rule.beta2) s.locked = s.color;
  return true;
}

inline bool color_node_tally(NodeState& node,
                             const std::map<BrokerId, std::optional<Color>>& broker_colors,
                             const ColorRule& rule) {
  std::uint32_t red = 0, blue = 0;
  for (auto b : node.brokers) {
    auto it = broker_colors.find(b);
    if (it == broker_colors.end() || !it->second) continue;
    (*it->second == Color::Red ? red : blue) += 1;
  }
  return color_tally(node.color, red, blue, rule);
}

}  // namespace blizzard
