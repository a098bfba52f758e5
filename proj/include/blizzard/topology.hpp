#pragma once

// Bipartite node/broker graph built from the hash matching, the latency
// model, and LNCR measurement.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "blizzard/core.hpp"
#include "blizzard/matching.hpp"
#include "blizzard/random.hpp"

namespace blizzard {

/// One-way delay, uniform with the given mean and standard deviation
/// (half-width sd * sqrt(3)).
struct LatencyModel {
  double mean_s = 0.100;
  double sd_s = 0.025;

  [[nodiscard]] double half_width() const { return sd_s * std::sqrt(3.0); }
  [[nodiscard]] double lo() const { return mean_s - half_width(); }
  [[nodiscard]] double hi() const { return mean_s + half_width(); }
  double sample(Rng& rng) const { return rng.uniform(lo(), hi()); }
};

struct Topology {
  std::uint32_t m = 0;
  std::vector<std::vector<BrokerId>> node_brokers;  // B(u), extraction order
  std::vector<std::vector<NodeId>> broker_nodes;    // N(b), ascending
  std::uint64_t digest_bits = 0;                    // final B used
  std::uint32_t retries = 0;                        // InsufficientOnes retries

  [[nodiscard]] std::uint32_t n() const { return static_cast<std::uint32_t>(node_brokers.size()); }
  [[nodiscard]] std::size_t edges() const {
    std::size_t e = 0;
    for (const auto& bs : node_brokers) e += bs.size();
    return e;
  }
};

inline Topology topology_from_lists(std::vector<std::vector<BrokerId>> node_brokers,
                                    std::uint32_t m) {
  Topology t;
  t.m = m;
  t.node_brokers = std::move(node_brokers);
  t.broker_nodes.assign(m, {});
  for (std::uint32_t u = 0; u < t.node_brokers.size(); ++u)
    for (auto b : t.node_brokers[u]) {
      if (b.value >= m) throw std::out_of_range("broker index exceeds m");
      t.broker_nodes[b.value].push_back(NodeId{u});
    }
  return t;
}

/// Every node draws its k brokers from a seeded beacon. A node whose digest
/// is too sparse is retried with a doubled digest length; `on_retry`
/// receives (node, new_bits).
inline Topology build_topology(
    const ProtocolParams& p, std::uint64_t seed, std::uint64_t round = 0, double delta = 1e-6,
    const std::function<void(NodeId, std::uint64_t)>& on_retry = {}) {
  if (p.k > p.m) throw MatchingError(MatchingErrc::KExceedsM);
  const auto beacon = seeded_beacon(seed, round);
  const auto base_bits = required_bits(p.k, delta);
  std::vector<std::vector<BrokerId>> lists(p.n);
  std::uint32_t retries = 0;
  std::uint64_t max_bits = base_bits;
  for (std::uint32_t u = 0; u < p.n; ++u) {
    auto bits = base_bits;
    const auto relabel = derive_relabel(beacon, NodeId{u}, p.m);
    for (;;) {
      auto got = try_extract_brokers(derive_digest(beacon, NodeId{u}, bits), p.k, p.m, relabel);
      if (got) {
        lists[u] = *std::move(got);
        break;
      }
      bits *= 2;
      ++retries;
      if (on_retry) on_retry(NodeId{u}, bits);
    }
    max_bits = std::max(max_bits, bits);
  }
  auto t = topology_from_lists(std::move(lists), p.m);
  t.digest_bits = max_bits;
  t.retries = retries;
  return t;
}

struct LncrReport {
  /// Largest node-to-node distance, in node<->broker hops, inside each
  /// connected component (components listed by smallest node id).
  std::vector<std::uint32_t> component_lncr;
  std::vector<std::vector<NodeId>> components;
  /// Per-pair distance histogram: histogram[d] = unordered node pairs at d.
  std::vector<std::uint64_t> histogram;

  [[nodiscard]] bool connected() const { return components.size() <= 1; }
  [[nodiscard]] std::uint32_t lncr() const {
    return component_lncr.empty() ? 0
                                  : *std::max_element(component_lncr.begin(), component_lncr.end());
  }
};

class DisconnectedError : public std::runtime_error {
 public:
  explicit DisconnectedError(std::vector<std::vector<NodeId>> comps)
      : std::runtime_error("Disconnected: node/broker graph has " + std::to_string(comps.size()) +
                           " components"),
        components_(std::move(comps)) {}
  [[nodiscard]] const std::vector<std::vector<NodeId>>& components() const { return components_; }

 private:
  std::vector<std::vector<NodeId>> components_;
};

/// Exact all-pairs BFS over the bipartite graph. Vertices 0..n-1 are nodes,
/// n..n+m-1 brokers; every edge is one communication round.
inline LncrReport measure_lncr(const Topology& t) {
  const auto n = t.n();
  const auto total = n + t.m;
  constexpr auto kInf = std::numeric_limits<std::uint32_t>::max();
  LncrReport rep;
  std::vector<std::int64_t> comp_of(n, -1);
  std::vector<std::uint32_t> dist(total);
  std::vector<std::uint32_t> queue;
  queue.reserve(total);

  for (std::uint32_t s = 0; s < n; ++s) {
    std::fill(dist.begin(), dist.end(), kInf);
    queue.clear();
    dist[s] = 0;
    queue.push_back(s);
    for (std::size_t h = 0; h < queue.size(); ++h) {
      const auto v = queue[h];
      auto relax = [&](std::uint32_t w) {
        if (dist[w] == kInf) {
          dist[w] = dist[v] + 1;
          queue.push_back(w);
        }
      };
      if (v < n)
        for (auto b : t.node_brokers[v]) relax(n + b.value);
      else
        for (auto u : t.broker_nodes[v - n]) relax(u.value);
    }
    if (comp_of[s] < 0) {
      const auto id = static_cast<std::int64_t>(rep.components.size());
      rep.components.emplace_back();
      rep.component_lncr.push_back(0);
      for (std::uint32_t u = 0; u < n; ++u)
        if (dist[u] != kInf) {
          comp_of[u] = id;
          rep.components.back().push_back(NodeId{u});
        }
    }
    auto& worst = rep.component_lncr[static_cast<std::size_t>(comp_of[s])];
    for (std::uint32_t u = s + 1; u < n; ++u) {
      if (dist[u] == kInf) continue;
      worst = std::max(worst, dist[u]);
      if (rep.histogram.size() <= dist[u]) rep.histogram.resize(dist[u] + 1, 0);
      ++rep.histogram[dist[u]];
    }
  }
  return rep;
}

/// As measure_lncr but throws DisconnectedError unless the graph is connected.
inline std::uint32_t measure_lncr_connected(const Topology& t) {
  auto rep = measure_lncr(t);
  if (!rep.connected()) throw DisconnectedError(std::move(rep.components));
  return rep.lncr();
}

/// Propagation rounds for the direct-sampling baseline: every node queries q
/// distinct uniform peers, a query carries the transaction one hop, and the
/// result is the largest directed eccentricity. Returns 0 if some node
/// cannot reach every other node.
inline std::uint32_t baseline_lncr(std::uint32_t n, std::uint32_t q, Rng& rng) {
  if (n <= 1) return 0;
  q = std::min(q, n - 1);
  std::vector<std::vector<std::uint32_t>> out(n);
  for (std::uint32_t u = 0; u < n; ++u) {
    out[u] = rng.sample_without_replacement(n - 1, q);
    for (auto& v : out[u])
      if (v >= u) ++v;
  }
  constexpr auto kInf = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> dist(n);
  std::vector<std::uint32_t> queue;
  std::uint32_t worst = 0;
  for (std::uint32_t s = 0; s < n; ++s) {
    std::fill(dist.begin(), dist.end(), kInf);
    queue.assign(1, s);
    dist[s] = 0;
    for (std::size_t h = 0; h < queue.size(); ++h)
      for (auto w : out[queue[h]])
        if (dist[w] == kInf) {
          dist[w] = dist[queue[h]] + 1;
          queue.push_back(w);
        }
    if (queue.size() < n) return 0;
    worst = std::max(worst, dist[queue.back()]);
  }
  return worst;
}

}  // namespace blizzard
