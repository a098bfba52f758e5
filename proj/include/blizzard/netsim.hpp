#pragma once

// Seeded discrete-event simulation of the transaction protocol (brokered
// and the direct-sampling baseline) and the synchronous color game.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "blizzard/adversary.hpp"
#include "blizzard/consensus.hpp"
#include "blizzard/core.hpp"
#include "blizzard/dag.hpp"
#include "blizzard/random.hpp"
#include "blizzard/topology.hpp"

namespace blizzard {

enum class SimMode { Blizzard, AvalancheBaseline, Color };

inline const char* to_string(SimMode m) {
  switch (m) {
    case SimMode::Blizzard: return "blizzard";
    case SimMode::AvalancheBaseline: return "avalanche-baseline";
    case SimMode::Color: return "color";
  }
  return "?";
}

inline SimMode parse_sim_mode(std::string_view s) {
  for (auto v : {SimMode::Blizzard, SimMode::AvalancheBaseline, SimMode::Color})
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown simulation mode '" + std::string(s) + "'");
}

struct SimConfig {
  ProtocolParams params;
  Population pop = Population::honest(params);
  AdversaryConfig adversary;
  LatencyModel latency;
  std::uint32_t tx_count = 100;
  double arrival_rate = 100.0;  // tx/s
  ParentPolicy dag_policy = ParentPolicy::Chain;
  std::uint32_t parent_fanout = 2;  // RandomFrontier only
  // One correct node issues every transaction (so a chain policy yields an
  // actual chain); otherwise each transaction has a uniform correct issuer.
  bool single_issuer = true;
  std::uint64_t seed = 1;
  SimMode mode = SimMode::Blizzard;
  double max_sim_seconds = 600.0;
  double matching_delta = 1e-6;

  // transaction modes
  std::uint32_t double_spends = 0;         // pairs issued by Byzantine nodes
  std::uint32_t avalanche_concurrency = 1; // outstanding queries per node

  // color mode
  std::uint32_t max_rounds = 5000;
  std::optional<std::uint32_t> initial_red;  // default ceil(c/2) + 1
};

enum class SimErrc { NonTermination, MaxRoundsExceeded, InvalidConfig };

class SimulationError : public std::runtime_error {
 public:
  SimulationError(SimErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  [[nodiscard]] SimErrc code() const { return code_; }

 private:
  SimErrc code_;
};

struct TxLatency {
  TxId tx;
  double latency_s = 0;       // issue -> finalized at every correct node
  double mean_node_s = 0;     // issue -> finalized, averaged over correct nodes
};

struct MessageCounts {
  // Query messages under the m + 2kn convention.
  std::uint64_t initiating = 0;  // node->broker, first one to reach each broker
  std::uint64_t responses = 0;   // node->broker answers
  std::uint64_t results = 0;     // broker->node broadcasts
  // Baseline query traffic.
  std::uint64_t peer_queries = 0;
  std::uint64_t peer_responses = 0;
  // Outside the convention.
  std::uint64_t redundant_queries = 0;  // node->broker after the broker was active
  std::uint64_t fanout = 0;             // broker->node query, rides the broadcast
  std::uint64_t fetch = 0;              // ancestor request + reply
  // Conservation.
  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;

  [[nodiscard]] std::uint64_t query_messages() const {
    return initiating + responses + results + peer_queries + peer_responses;
  }
  [[nodiscard]] std::uint64_t total() const {
    return query_messages() + redundant_queries + fanout + fetch;
  }
};

struct ColorOutcome {
  bool converged = false;   // every correct node locked, all on one color
  bool violation = false;   // two correct nodes locked on different colors
  bool stalled = false;     // a full round changed nothing
  bool max_rounds_exceeded = false;
  std::optional<Color> color;
  std::uint32_t locked_red = 0;
  std::uint32_t locked_blue = 0;
  std::uint32_t unlocked = 0;
};

struct SimMetrics {
  SimMode mode = SimMode::Blizzard;
  std::uint64_t seed = 0;
  std::vector<TxLatency> latencies;               // finalized transactions only
  std::vector<std::uint64_t> per_tx_query_messages;  // index = tx id - 1
  std::vector<TxId> unfinalized;
  MessageCounts messages;
  std::uint32_t lncr = 0;
  std::vector<std::uint64_t> lncr_histogram;
  bool agreement = true;
  ColorOutcome color;
  std::uint32_t rounds = 0;
  double sim_end_s = 0;
  std::uint32_t topology_retries = 0;
};

namespace detail {

struct Event {
  double time;
  std::uint64_t seq;
  std::uint8_t kind;
  std::uint32_t a;
  std::uint32_t b;
  std::uint32_t tx;
  std::uint8_t flag;
};

struct EventLater {
  bool operator()(const Event& x, const Event& y) const {
    return x.time != y.time ? x.time > y.time : x.seq > y.seq;
  }
};

class EventQueue {
 public:
  void push(double time, std::uint8_t kind, std::uint32_t a, std::uint32_t b, std::uint32_t tx,
            std::uint8_t flag = 0) {
    q_.push(Event{time, seq_++, kind, a, b, tx, flag});
  }
  [[nodiscard]] bool empty() const { return q_.empty(); }
  Event pop() {
    auto e = q_.top();
    q_.pop();
    return e;
  }

 private:
  std::priority_queue<Event, std::vector<Event>, EventLater> q_;
  std::uint64_t seq_ = 0;
};

inline void check_config(const SimConfig& cfg) {
  const auto issues = validate_params(cfg.params, cfg.pop);
  if (!issues.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& i : issues) msg += std::string(" ") + to_string(i.code) + " (" + i.detail + ")";
    throw SimulationError(SimErrc::InvalidConfig, msg);
  }
  if (cfg.arrival_rate <= 0) throw SimulationError(SimErrc::InvalidConfig, "arrival_rate must be > 0");
  if (cfg.latency.lo() < 0) throw SimulationError(SimErrc::InvalidConfig, "latency support below 0");
}

// State shared by the two transaction simulators: per-node DAGs, the global
// transaction store, fetch handling, finalization bookkeeping.
class TxSimBase {
 public:
  static constexpr std::uint8_t kIssue = 0;
  static constexpr std::uint8_t kFetchDone = 1;

  explicit TxSimBase(const SimConfig& cfg)
      : cfg_(cfg),
        root_(cfg.seed),
        lat_rng_(root_.split(2)),
        issue_rng_(root_.split(3)),
        parent_rng_(root_.split(4)) {
    check_config(cfg);
    auto mem_rng = root_.split(1);
    membership_ = draw_membership(cfg.pop, mem_rng);
    const auto n = cfg.params.n;
    for (std::uint32_t u = 0; u < n; ++u)
      nodes_.emplace_back(NodeId{u}, std::vector<BrokerId>{},
                          FinalityParams{cfg.params.beta1, cfg.params.beta2});
    for (std::uint32_t u = 0; u < n; ++u)
      if (!membership_.byzantine_node[u]) correct_.push_back(u);
    // Genesis, known to everyone.
    txs_.push_back(Transaction{TxId{0}, {}, NodeId{0}, ConflictKey{0}});
    issue_time_.push_back(0.0);
    for (auto& s : nodes_) s.dag.add_transaction(txs_[0]);
    metrics_.mode = cfg.mode;
    metrics_.seed = cfg.seed;
  }

 protected:
  [[nodiscard]] bool byzantine(std::uint32_t u) const { return membership_.byzantine_node[u]; }
  [[nodiscard]] bool crashed_node(std::uint32_t u) const {
    return byzantine(u) && cfg_.adversary.node_strategy == NodeStrategy::Crash;
  }
  double hop() { return cfg_.latency.sample(lat_rng_); }

  // Links are FIFO: a message never overtakes an earlier one on the same
  // directed link. Each message still gets its own latency draw.
  double arrival(std::vector<double>& last, std::size_t link) {
    const auto t = std::max(now_ + hop(), last[link]);
    last[link] = t;
    return t;
  }

  // Issuance plan: slot j at time j / zeta. Double-spend pairs take evenly
  // spaced slots and need at least one Byzantine node.
  void plan_issuance() {
    const auto slots = cfg_.tx_count;
    std::vector<bool> ds(slots, false);
    const auto pairs = correct_.size() == cfg_.params.n ? 0u : std::min(cfg_.double_spends, slots);
    for (std::uint32_t i = 0; i < pairs; ++i) ds[(static_cast<std::uint64_t>(i) * slots) / pairs] = true;
    for (std::uint32_t j = 0; j < slots; ++j)
      queue_.push(static_cast<double>(j) / cfg_.arrival_rate, kIssue, ds[j] ? 1 : 0, 0, j);
  }

  // Returns ids of the new transactions (one, or two for a double spend).
  std::vector<std::uint32_t> create_transactions(bool double_spend, std::uint32_t& issuer) {
    std::vector<std::uint32_t> out;
    if (double_spend) {
      std::vector<std::uint32_t> byz;
      for (std::uint32_t u = 0; u < cfg_.params.n; ++u)
        if (byzantine(u)) byz.push_back(u);
      issuer = byz[issue_rng_.below(byz.size())];
    } else if (cfg_.single_issuer) {
      issuer = correct_.front();
    } else {
      issuer = correct_[issue_rng_.below(correct_.size())];
    }
    auto& dag = nodes_[issuer].dag;
    auto parents = dag.select_parents(cfg_.dag_policy, cfg_.parent_fanout, parent_rng_);
    const auto first = static_cast<std::uint32_t>(txs_.size());
    const auto copies = double_spend ? 2u : 1u;
    for (std::uint32_t c = 0; c < copies; ++c) {
      const auto id = static_cast<std::uint32_t>(txs_.size());
      txs_.push_back(Transaction{TxId{id}, parents, NodeId{issuer}, ConflictKey{first}});
      issue_time_.push_back(now_);
      on_new_tx(id);
      out.push_back(id);
    }
    // The issuer stores only the first of a pair; the second enters its
    // DAG through the network like anywhere else.
    dag.add_transaction(txs_[first]);
    return out;
  }

  virtual void on_new_tx(std::uint32_t id) = 0;
  virtual void on_added(std::uint32_t u, std::uint32_t id) = 0;

  // Adds tx to u's DAG if its parents are known; otherwise starts a fetch.
  // Returns true if tx is in the DAG afterwards.
  bool ensure_known(std::uint32_t u, std::uint32_t id) {
    auto& dag = nodes_[u].dag;
    if (dag.contains(TxId{id})) return true;
    if (dag.missing_parents(txs_[id]).empty()) {
      dag.add_transaction(txs_[id]);
      on_added(u, id);
      return true;
    }
    if (fetching_[u].insert(id).second) {
      // request to a peer/broker and the reply carrying the ancestors
      metrics_.messages.fetch += 2;
      metrics_.messages.sent += 2;
      queue_.push(now_ + hop() + hop(), kFetchDone, u, 0, id);
    }
    return false;
  }

  void fetch_done(std::uint32_t u, std::uint32_t id) {
    fetching_[u].erase(id);
    metrics_.messages.delivered += 2;
    adopt_with_ancestors(u, id);
  }

  // Adds tx and whatever part of its ancestry u lacks.
  void adopt_with_ancestors(std::uint32_t u, std::uint32_t id) {
    auto& dag = nodes_[u].dag;
    if (dag.contains(TxId{id})) return;
    // Every missing ancestor, oldest first (ids are topological).
    std::vector<std::uint32_t> need;
    std::vector<std::uint32_t> stack{id};
    std::vector<bool> seen(txs_.size(), false);
    seen[id] = true;
    while (!stack.empty()) {
      const auto t = stack.back();
      stack.pop_back();
      need.push_back(t);
      for (auto p : txs_[t].parents)
        if (!seen[p.value] && !dag.contains(p)) {
          seen[p.value] = true;
          stack.push_back(p.value);
        }
    }
    std::sort(need.begin(), need.end());
    for (auto t : need) {
      dag.add_transaction(txs_[t]);
      on_added(u, t);
    }
  }

  void record_tally(std::uint32_t u, std::uint32_t id, bool win) {
    auto& dag = nodes_[u].dag;
    if (dag.is_queried(TxId{id})) return;
    if (win) dag.record_voucher(TxId{id});
    dag.mark_queried(TxId{id});
    if (!win || byzantine(u)) return;
    // Without conflicts only the voucher's ancestors can change state; a
    // pref flip in a conflict set can also release transactions elsewhere.
    const auto candidates = cfg_.double_spends == 0 ? dag.ancestors(TxId{id}) : dag.ids();
    for (auto a : candidates) {
      if (a.value == 0) continue;
      auto& at = finalized_at_[a.value][u];
      if (at < 0 && dag.is_finalized(a)) at = now_;
    }
  }

  void grow_tracking(std::uint32_t id) {
    if (finalized_at_.size() <= id) finalized_at_.resize(id + 1, std::vector<double>(cfg_.params.n, -1.0));
    if (fetching_.size() < cfg_.params.n) fetching_.resize(cfg_.params.n);
  }

  void run_loop() {
    while (!queue_.empty()) {
      const auto e = queue_.pop();
      if (e.time > cfg_.max_sim_seconds)
        throw SimulationError(SimErrc::NonTermination,
                              "NonTermination: events pending past " +
                                  std::to_string(cfg_.max_sim_seconds) + " simulated seconds");
      now_ = e.time;
      if (e.kind == kIssue)
        handle_issue(e);
      else if (e.kind == kFetchDone)
        fetch_done(e.a, e.tx);
      else
        handle(e);
    }
  }

  virtual void handle_issue(const Event& e) = 0;
  virtual void handle(const Event& e) = 0;

  void finish() {
    metrics_.sim_end_s = now_;
    for (std::uint32_t id = 1; id < txs_.size(); ++id) {
      bool all = !correct_.empty();
      double worst = 0, sum = 0;
      for (auto u : correct_) {
        const auto at = finalized_at_[id][u];
        if (at < 0) {
          all = false;
          break;
        }
        worst = std::max(worst, at);
        sum += at;
      }
      if (all)
        metrics_.latencies.push_back({TxId{id}, worst - issue_time_[id],
                                      sum / static_cast<double>(correct_.size()) - issue_time_[id]});
      else
        metrics_.unfinalized.push_back(TxId{id});
    }
    metrics_.agreement = check_agreement();
  }

  // Per conflict set, every correct node finalizes at most one member and
  // all correct nodes that finalized something agree.
  bool check_agreement() const {
    std::vector<std::int64_t> chosen(txs_.size(), -1);  // by conflict key
    for (auto u : correct_) {
      const auto& dag = nodes_[u].dag;
      std::vector<std::int64_t> mine(txs_.size(), -1);
      for (std::uint32_t id = 1; id < txs_.size(); ++id) {
        if (!dag.contains(TxId{id}) || finalized_at_[id][u] < 0) continue;
        const auto key = txs_[id].conflict_key.value;
        if (mine[key] >= 0 && mine[key] != id) return false;
        mine[key] = id;
        if (chosen[key] >= 0 && chosen[key] != id) return false;
        chosen[key] = id;
      }
    }
    return true;
  }

  SimConfig cfg_;
  Rng root_;
  Rng lat_rng_;
  Rng issue_rng_;
  Rng parent_rng_;
  Membership membership_;
  std::vector<NodeState> nodes_;
  std::vector<std::uint32_t> correct_;
  std::vector<Transaction> txs_;
  std::vector<double> issue_time_;
  std::vector<std::vector<double>> finalized_at_;
  std::vector<std::set<std::uint32_t>> fetching_;
  EventQueue queue_;
  double now_ = 0;
  SimMetrics metrics_;
};

class BlizzardSim : public TxSimBase {
 public:
  explicit BlizzardSim(const SimConfig& cfg) : TxSimBase(cfg) {
    topo_ = build_topology(cfg.params, cfg.seed, 0, cfg.matching_delta);
    for (std::uint32_t u = 0; u < cfg.params.n; ++u) nodes_[u].brokers = topo_.node_brokers[u];
    for (std::uint32_t b = 0; b < cfg.params.m; ++b)
      brokers_.push_back(BrokerState{BrokerId{b}, topo_.broker_nodes[b]});
    metrics_.topology_retries = topo_.retries;
    const auto rep = measure_lncr(topo_);
    metrics_.lncr = rep.lncr();
    metrics_.lncr_histogram = rep.histogram;
    broker_wait_ = 2 * cfg.latency.hi() + 1e-6;
    node_wait_ = 8 * cfg.latency.hi();
    up_.assign(static_cast<std::size_t>(cfg.params.n) * cfg.params.m, 0.0);
    down_.assign(up_.size(), 0.0);
  }

  SimMetrics run() {
    fetching_.resize(cfg_.params.n);
    plan_issuance();
    run_loop();
    finish();
    metrics_.per_tx_query_messages.clear();
    for (std::size_t id = 1; id < txs_.size(); ++id)
      metrics_.per_tx_query_messages.push_back(rt_[id].query_messages);
    return metrics_;
  }

 private:
  enum : std::uint8_t {
    kNodeQuery = 10,   // a=broker b=node
    kBrokerQuery,      // a=node b=broker
    kResponse,         // a=broker b=node flag=vote
    kBrokerTimeout,    // a=broker
    kResult,           // a=node b=broker flag=vote
    kNodeDeadline,     // a=node
  };

  struct Session {
    bool active = false;
    bool finished = false;
    std::uint32_t responses = 0;
    std::uint32_t yes = 0;
  };

  struct TxRuntime {
    std::vector<Session> sessions;
    std::vector<std::int8_t> results;   // n*k, -1 = none yet
    std::vector<std::uint8_t> sent_to;  // n*k, NodeQuery already sent
    std::vector<std::uint8_t> learned;  // n
    std::vector<std::uint8_t> deadline; // n, tally deadline passed
    std::uint64_t query_messages = 0;
  };

  [[nodiscard]] bool byz_broker(std::uint32_t b) const { return membership_.byzantine_broker[b]; }
  [[nodiscard]] bool crashed_broker(std::uint32_t b) const {
    return byz_broker(b) && cfg_.adversary.broker_strategy == BrokerStrategy::Crash;
  }

  std::uint32_t slot_of(std::uint32_t u, std::uint32_t b) const {
    const auto& bs = topo_.node_brokers[u];
    for (std::uint32_t i = 0; i < bs.size(); ++i)
      if (bs[i].value == b) return i;
    throw std::logic_error("broker not connected to node");
  }

  void on_new_tx(std::uint32_t id) override {
    grow_tracking(id);
    if (rt_.size() <= id) rt_.resize(id + 1);
    auto& r = rt_[id];
    const auto n = cfg_.params.n, k = cfg_.params.k;
    r.sessions.assign(cfg_.params.m, {});
    r.results.assign(static_cast<std::size_t>(n) * k, -1);
    r.sent_to.assign(static_cast<std::size_t>(n) * k, 0);
    r.learned.assign(n, 0);
    r.deadline.assign(n, 0);
  }

  void on_added(std::uint32_t u, std::uint32_t id) override { try_tally(u, id); }

  void send_node_query(std::uint32_t u, std::uint32_t b, std::uint32_t id) {
    auto& flag = rt_[id].sent_to[static_cast<std::size_t>(u) * cfg_.params.k + slot_of(u, b)];
    if (flag) return;
    flag = 1;
    ++metrics_.messages.sent;
    queue_.push(arrival(up_, link(u, b)), kNodeQuery, b, u, id);
  }

  // Node u has seen tx for the first time (from `via`, or as issuer).
  void learn(std::uint32_t u, std::uint32_t id, std::optional<std::uint32_t> via) {
    auto& r = rt_[id];
    if (r.learned[u]) return;
    r.learned[u] = 1;
    queue_.push(now_ + node_wait_, kNodeDeadline, u, 0, id);
    if (byzantine(u) && cfg_.adversary.node_strategy != NodeStrategy::Honest) return;
    for (auto b : topo_.node_brokers[u])
      if (!via || b.value != *via) send_node_query(u, b.value, id);
  }

  void handle_issue(const Event& e) override {
    std::uint32_t issuer = 0;
    const auto ids = create_transactions(e.a == 1, issuer);
    if (ids.size() == 1) {
      rt_[ids[0]].learned[issuer] = 0;
      learn(issuer, ids[0], std::nullopt);
      return;
    }
    // Double spend: each copy goes to its own half of the issuer's brokers.
    const auto ds = make_double_spend(NodeId{issuer}, txs_[ids[0]].parents, TxId{ids[0]},
                                      TxId{ids[1]}, txs_[ids[0]].conflict_key,
                                      topo_.node_brokers[issuer]);
    rt_[ids[0]].learned[issuer] = 1;
    rt_[ids[1]].learned[issuer] = 1;
    queue_.push(now_ + node_wait_, kNodeDeadline, issuer, 0, ids[0]);
    for (auto b : ds.first_brokers) send_node_query(issuer, b.value, ids[0]);
    for (auto b : ds.second_brokers) send_node_query(issuer, b.value, ids[1]);
  }

  void handle(const Event& e) override {
    switch (e.kind) {
      case kNodeQuery: on_node_query(e.a, e.b, e.tx); break;
      case kBrokerQuery: on_broker_query(e.a, e.b, e.tx); break;
      case kResponse: on_response(e.a, e.tx, e.flag); break;
      case kBrokerTimeout: finish_session(e.a, e.tx); break;
      case kResult: on_result(e.a, e.b, e.tx, e.flag); break;
      case kNodeDeadline:
        rt_[e.tx].deadline[e.a] = 1;
        try_tally(e.a, e.tx);
        break;
      default: throw std::logic_error("unknown event");
    }
  }

  void on_node_query(std::uint32_t b, std::uint32_t /*from*/, std::uint32_t id) {
    if (crashed_broker(b)) {
      ++metrics_.messages.dropped;
      return;
    }
    ++metrics_.messages.delivered;
    auto& s = rt_[id].sessions[b];
    if (s.active) {
      ++metrics_.messages.redundant_queries;
      return;
    }
    s.active = true;
    ++metrics_.messages.initiating;
    ++rt_[id].query_messages;
    for (auto u : brokers_[b].nodes) {
      ++metrics_.messages.fanout;
      ++metrics_.messages.sent;
      queue_.push(arrival(down_, link(u.value, b)), kBrokerQuery, u.value, b, id);
    }
    queue_.push(now_ + broker_wait_, kBrokerTimeout, b, 0, id);
  }

  void on_broker_query(std::uint32_t u, std::uint32_t b, std::uint32_t id) {
    if (crashed_node(u)) {
      ++metrics_.messages.dropped;
      return;
    }
    ++metrics_.messages.delivered;
    learn(u, id, b);
    const bool known = ensure_known(u, id);
    const Vote honest = known && nodes_[u].dag.is_strongly_preferred(TxId{id}) ? Vote::Yes : Vote::No;
    Vote answer = honest;
    if (byzantine(u)) {
      const auto r = byzantine_node_tx_response(cfg_.adversary.node_strategy, honest);
      if (r == TxResponse::Silent) return;
      answer = r == TxResponse::Yes ? Vote::Yes : Vote::No;
    }
    ++metrics_.messages.responses;
    ++metrics_.messages.sent;
    ++rt_[id].query_messages;
    queue_.push(arrival(up_, link(u, b)), kResponse, b, u, id, answer == Vote::Yes ? 1 : 0);
  }

  void on_response(std::uint32_t b, std::uint32_t id, std::uint8_t vote) {
    if (crashed_broker(b)) {
      ++metrics_.messages.dropped;
      return;
    }
    ++metrics_.messages.delivered;
    auto& s = rt_[id].sessions[b];
    if (s.finished) return;  // late: the result is already out
    ++s.responses;
    if (vote) ++s.yes;
    if (s.responses == brokers_[b].nodes.size()) finish_session(b, id);
  }

  void finish_session(std::uint32_t b, std::uint32_t id) {
    auto& s = rt_[id].sessions[b];
    if (s.finished) return;
    s.finished = true;
    const auto& nodes = brokers_[b].nodes;
    const auto need = threshold_count(cfg_.params.eta, static_cast<std::uint32_t>(nodes.size()));
    bool yes = !nodes.empty() && s.yes >= need;
    // A suppressing broker evaluates the empty subset of responses.
    if (byz_broker(b) && cfg_.adversary.broker_strategy == BrokerStrategy::PaperSuppression) yes = false;
    for (auto u : nodes) {
      ++metrics_.messages.results;
      ++metrics_.messages.sent;
      ++rt_[id].query_messages;
      queue_.push(arrival(down_, link(u.value, b)), kResult, u.value, b, id, yes ? 1 : 0);
    }
  }

  void on_result(std::uint32_t u, std::uint32_t b, std::uint32_t id, std::uint8_t vote) {
    if (crashed_node(u)) {
      ++metrics_.messages.dropped;
      return;
    }
    ++metrics_.messages.delivered;
    rt_[id].results[static_cast<std::size_t>(u) * cfg_.params.k + slot_of(u, b)] =
        static_cast<std::int8_t>(vote);
    try_tally(u, id);
  }

  // Tally once all k results are in, or at the deadline with what arrived.
  void try_tally(std::uint32_t u, std::uint32_t id) {
    if (id >= rt_.size() || rt_[id].sessions.empty()) return;
    auto& r = rt_[id];
    auto& dag = nodes_[u].dag;
    if (!dag.contains(TxId{id}) || dag.is_queried(TxId{id})) return;
    const auto k = cfg_.params.k;
    std::uint32_t got = 0, yes = 0;
    for (std::uint32_t i = 0; i < k; ++i) {
      const auto v = r.results[static_cast<std::size_t>(u) * k + i];
      if (v >= 0) ++got;
      if (v == 1) ++yes;
    }
    if (got < k && !r.deadline[u]) return;
    record_tally(u, id, yes >= threshold_count(cfg_.params.alpha, k));
  }

  [[nodiscard]] std::size_t link(std::uint32_t u, std::uint32_t b) const {
    return static_cast<std::size_t>(u) * cfg_.params.m + b;
  }

  Topology topo_;
  std::vector<BrokerState> brokers_;
  std::vector<double> up_;    // node -> broker
  std::vector<double> down_;  // broker -> node
  std::vector<TxRuntime> rt_;
  double broker_wait_ = 0;
  double node_wait_ = 0;
};

class AvalancheSim : public TxSimBase {
 public:
  explicit AvalancheSim(const SimConfig& cfg) : TxSimBase(cfg), sample_rng_(root_.split(5)) {
    const auto& p = cfg.params;
    q_ = static_cast<std::uint32_t>(
        std::lround(static_cast<double>(p.n) * p.k / static_cast<double>(p.m)));
    q_ = std::clamp<std::uint32_t>(q_, 1, std::max<std::uint32_t>(1, p.n - 1));
    fifo_.resize(p.n);
    inflight_.assign(p.n, 0);
    wait_ = 2 * cfg.latency.hi() + 1e-6;
    peer_.assign(static_cast<std::size_t>(p.n) * p.n, 0.0);
  }

  [[nodiscard]] std::uint32_t sample_size() const { return q_; }

  SimMetrics run() {
    fetching_.resize(cfg_.params.n);
    plan_issuance();
    run_loop();
    finish();
    metrics_.per_tx_query_messages.clear();
    for (std::size_t id = 1; id < txs_.size(); ++id)
      metrics_.per_tx_query_messages.push_back(rt_[id].query_messages);
    return metrics_;
  }

 private:
  enum : std::uint8_t {
    kQuery = 20,   // a=peer b=querier
    kAnswer,       // a=querier b=peer flag=vote
    kDeadline,     // a=querier
  };

  struct Session {
    bool open = false;
    std::uint32_t got = 0;
    std::uint32_t yes = 0;
  };

  struct TxRuntime {
    std::vector<Session> sessions;  // per node
    std::uint64_t query_messages = 0;
  };

  void on_new_tx(std::uint32_t id) override {
    grow_tracking(id);
    if (rt_.size() <= id) rt_.resize(id + 1);
    rt_[id].sessions.assign(cfg_.params.n, {});
  }

  void on_added(std::uint32_t u, std::uint32_t id) override {
    if (crashed_node(u)) return;
    fifo_[u].push_back(id);
    pump(u);
  }

  void handle_issue(const Event& e) override {
    std::uint32_t issuer = 0;
    const auto ids = create_transactions(e.a == 1, issuer);
    on_added(issuer, ids[0]);
    if (ids.size() == 2) {
      // The second copy is pushed straight to a handful of peers.
      for (std::uint32_t i = 0; i < q_; ++i) {
        auto v = static_cast<std::uint32_t>(sample_rng_.below(cfg_.params.n - 1));
        if (v >= issuer) ++v;
        ++metrics_.messages.peer_queries;
        ++metrics_.messages.sent;
        ++rt_[ids[1]].query_messages;
        queue_.push(arrival(peer_, link(issuer, v)), kQuery, v, issuer, ids[1]);
      }
    }
  }

  // Sequential main loop per node: up to `avalanche_concurrency` queries
  // outstanding, transactions taken in arrival order.
  void pump(std::uint32_t u) {
    while (inflight_[u] < cfg_.avalanche_concurrency && !fifo_[u].empty()) {
      const auto id = fifo_[u].front();
      fifo_[u].pop_front();
      if (nodes_[u].dag.is_queried(TxId{id})) continue;
      ++inflight_[u];
      auto& s = rt_[id].sessions[u];
      s.open = true;
      const auto n = cfg_.params.n;
      for (auto v : sample_peers(u, n)) {
        ++metrics_.messages.peer_queries;
        ++metrics_.messages.sent;
        ++rt_[id].query_messages;
        queue_.push(arrival(peer_, link(u, v)), kQuery, v, u, id);
      }
      queue_.push(now_ + wait_, kDeadline, u, 0, id);
    }
  }

  std::vector<std::uint32_t> sample_peers(std::uint32_t u, std::uint32_t n) {
    auto picks = sample_rng_.sample_without_replacement(n - 1, std::min(q_, n - 1));
    for (auto& v : picks)
      if (v >= u) ++v;
    return picks;
  }

  void handle(const Event& e) override {
    switch (e.kind) {
      case kQuery: on_query(e.a, e.b, e.tx); break;
      case kAnswer: on_answer(e.a, e.tx, e.flag); break;
      case kDeadline: close(e.a, e.tx); break;
      default: throw std::logic_error("unknown event");
    }
  }

  void on_query(std::uint32_t v, std::uint32_t from, std::uint32_t id) {
    if (crashed_node(v)) {
      ++metrics_.messages.dropped;
      return;
    }
    ++metrics_.messages.delivered;
    // Peers talk directly, so the query carries the ancestry the peer lacks.
    adopt_with_ancestors(v, id);
    const Vote honest = nodes_[v].dag.is_strongly_preferred(TxId{id}) ? Vote::Yes : Vote::No;
    Vote answer = honest;
    if (byzantine(v)) {
      const auto r = byzantine_node_tx_response(cfg_.adversary.node_strategy, honest);
      if (r == TxResponse::Silent) return;
      answer = r == TxResponse::Yes ? Vote::Yes : Vote::No;
    }
    ++metrics_.messages.peer_responses;
    ++metrics_.messages.sent;
    ++rt_[id].query_messages;
    queue_.push(arrival(peer_, link(v, from)), kAnswer, from, v, id, answer == Vote::Yes ? 1 : 0);
  }

  void on_answer(std::uint32_t u, std::uint32_t id, std::uint8_t vote) {
    ++metrics_.messages.delivered;
    auto& s = rt_[id].sessions[u];
    if (!s.open) return;
    ++s.got;
    if (vote) ++s.yes;
    if (s.got == std::min(q_, cfg_.params.n - 1)) close(u, id);
  }

  void close(std::uint32_t u, std::uint32_t id) {
    auto& s = rt_[id].sessions[u];
    if (!s.open) return;
    s.open = false;
    --inflight_[u];
    record_tally(u, id, s.yes >= threshold_count(cfg_.params.alpha, q_));
    pump(u);
  }

  [[nodiscard]] std::size_t link(std::uint32_t from, std::uint32_t to) const {
    return static_cast<std::size_t>(from) * cfg_.params.n + to;
  }

  Rng sample_rng_;
  std::vector<double> peer_;  // directed node -> node
  std::uint32_t q_ = 1;
  std::vector<std::deque<std::uint32_t>> fifo_;
  std::vector<std::uint32_t> inflight_;
  std::vector<TxRuntime> rt_;
  double wait_ = 0;
};

}  // namespace detail

inline SimMetrics run_blizzard(const SimConfig& cfg) {
  if (cfg.mode != SimMode::Blizzard)
    throw SimulationError(SimErrc::InvalidConfig, "run_blizzard needs mode = blizzard");
  return detail::BlizzardSim(cfg).run();
}

inline SimMetrics run_avalanche_baseline(const SimConfig& cfg) {
  if (cfg.mode != SimMode::AvalancheBaseline)
    throw SimulationError(SimErrc::InvalidConfig,
                          "run_avalanche_baseline needs mode = avalanche-baseline");
  return detail::AvalancheSim(cfg).run();
}

/// Synchronous color game. Every round each broker evaluates the current
/// colors once per querying class, then every unlocked correct node tallies
/// the results of its k brokers for its own class. Stops on a violation,
/// when all correct nodes are locked, when a round changes nothing (the
/// state would repeat forever), or after max_rounds.
inline SimMetrics run_color(const SimConfig& cfg, const Topology* fixed = nullptr) {
  if (cfg.mode != SimMode::Color)
    throw SimulationError(SimErrc::InvalidConfig, "run_color needs mode = color");
  detail::check_config(cfg);
  const auto& p = cfg.params;
  Topology built;
  if (fixed == nullptr) built = build_topology(p, cfg.seed, 0, cfg.matching_delta);
  const Topology& topo = fixed != nullptr ? *fixed : built;

  Rng root(cfg.seed);
  auto mem_rng = root.split(1);
  const auto membership = draw_membership(cfg.pop, mem_rng);
  auto color_rng = root.split(2);

  std::vector<std::uint32_t> correct;
  for (std::uint32_t u = 0; u < p.n; ++u)
    if (!membership.byzantine_node[u]) correct.push_back(u);
  const auto c = static_cast<std::uint32_t>(correct.size());
  const auto red0 = std::min(c, cfg.initial_red.value_or((c + 1) / 2 + 1));

  std::vector<ColorState> st(p.n);
  for (auto& s : st) s.color = Color::Blue;
  for (auto i : color_rng.sample_without_replacement(c, red0)) st[correct[i]].color = Color::Red;
  // Byzantine nodes following the honest strategy keep a fixed coin-flip color.
  for (std::uint32_t u = 0; u < p.n; ++u)
    if (membership.byzantine_node[u]) st[u].color = color_rng.bernoulli(0.5) ? Color::Red : Color::Blue;

  const ColorRule rule{p.k, p.alpha, p.beta1, p.beta2};
  const auto& adv = cfg.adversary;
  SimMetrics out;
  out.mode = SimMode::Color;
  out.seed = cfg.seed;
  out.topology_retries = topo.retries;

  std::vector<std::array<std::optional<Color>, 2>> result(p.m);
  std::vector<std::optional<Color>> reply(p.n);
  auto& oc = out.color;
  for (;;) {
    std::uint32_t red_now = 0;
    for (auto u : correct) {
      reply[u] = st[u].locked.value_or(st[u].color);
      if (*reply[u] == Color::Red) ++red_now;
    }
    const auto majority = 2 * red_now >= c ? Color::Red : Color::Blue;

    for (std::uint32_t b = 0; b < p.m; ++b) {
      const auto& members = topo.broker_nodes[b];
      const auto deg = static_cast<std::uint32_t>(members.size());
      for (auto cls : {QueryClass::U, QueryClass::V}) {
        ColorTally t{0, 0, deg};
        for (auto u : members) {
          std::optional<Color> col = reply[u.value];
          if (membership.byzantine_node[u.value])
            col = byzantine_node_color(adv.node_strategy, cls, majority, st[u.value].color);
          if (!col) continue;
          (*col == Color::Red ? t.red : t.blue) += 1;
        }
        if (membership.byzantine_broker[b]) t = byzantine_broker_counts(adv.broker_strategy, t, cls, p.eta);
        result[b][cls == QueryClass::U ? 0 : 1] = eta_majority(t.red, t.blue, t.population, p.eta);
      }
    }

    bool changed = false;
    for (auto u : correct) {
      auto& s = st[u];
      if (s.locked) continue;
      const auto slot = class_of(s.color) == QueryClass::U ? 0 : 1;
      std::uint32_t red = 0, blue = 0;
      for (auto b : topo.node_brokers[u]) {
        const auto& r = result[b.value][slot];
        if (!r) continue;
        (*r == Color::Red ? red : blue) += 1;
      }
      changed |= color_tally(s, red, blue, rule);
    }
    ++out.rounds;

    oc.locked_red = oc.locked_blue = oc.unlocked = 0;
    for (auto u : correct) {
      if (!st[u].locked)
        ++oc.unlocked;
      else
        (*st[u].locked == Color::Red ? oc.locked_red : oc.locked_blue) += 1;
    }
    if (oc.locked_red > 0 && oc.locked_blue > 0) {
      oc.violation = true;
      break;
    }
    if (oc.unlocked == 0) {
      oc.converged = true;
      oc.color = oc.locked_red > 0 ? Color::Red : Color::Blue;
      break;
    }
    if (!changed) {
      oc.stalled = true;
      break;
    }
    if (out.rounds >= cfg.max_rounds) {
      oc.max_rounds_exceeded = true;
      break;
    }
  }
  return out;
}

inline SimMetrics run_simulation(const SimConfig& cfg) {
  switch (cfg.mode) {
    case SimMode::Blizzard: return run_blizzard(cfg);
    case SimMode::AvalancheBaseline: return run_avalanche_baseline(cfg);
    case SimMode::Color: return run_color(cfg);
  }
  throw SimulationError(SimErrc::InvalidConfig, "unknown mode");
}

}  // namespace blizzard
