#pragma once

// Experiment drivers shared by the lab CLI and the acceptance suite, plus
// the CSV/JSON writers. Every sweep derives its run seeds from one base
// seed with mix_seed and merges results by run index, so the output does
// not depend on the worker count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <json.hpp>

#include "blizzard/analysis.hpp"
#include "blizzard/config.hpp"
#include "blizzard/matching.hpp"
#include "blizzard/netsim.hpp"
#include "blizzard/topology.hpp"

namespace blizzard {

/// Runs fn(i) for i in [0, count) on `jobs` threads. The first exception
/// thrown by any worker is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t count, unsigned jobs, Fn&& fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const auto i = next.fetch_add(1);
        if (i >= count || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) return std::nan("");
  std::sort(xs.begin(), xs.end());
  const auto h = xs.size() / 2;
  return xs.size() % 2 == 1 ? xs[h] : 0.5 * (xs[h - 1] + xs[h]);
}

inline double median_latency(const SimMetrics& m) {
  std::vector<double> xs;
  for (const auto& l : m.latencies) xs.push_back(l.latency_s);
  return median(std::move(xs));
}

// Fixed-precision number formatting keeps CSV output byte-stable.
inline std::string fmt(double v, int digits = 6) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Safety region

struct EmpiricalCell {
  double rho_n = 0;
  double rho_b = 0;
  std::uint32_t runs = 0;
  std::uint32_t violations = 0;
  std::uint32_t converged = 0;  // all correct nodes locked on one color
  std::uint32_t stalled = 0;
  std::uint32_t max_rounds = 0;

  [[nodiscard]] double violation_free() const {
    return runs == 0 ? 0.0 : 1.0 - static_cast<double>(violations) / runs;
  }
  [[nodiscard]] double converged_fraction() const {
    return runs == 0 ? 0.0 : static_cast<double>(converged) / runs;
  }
};

struct SafetyReport {
  SafetyGrid analytic;
  std::vector<EmpiricalCell> empirical;  // same order as analytic.cells; empty if skipped
  double threshold = 0.95;               // empirical cell is safe at violation-free >= this

  [[nodiscard]] bool empirical_safe(std::size_t cell) const {
    return empirical[cell].violation_free() >= threshold;
  }
  /// Fraction of cells where the two classifications coincide.
  [[nodiscard]] double agreement() const {
    if (empirical.empty()) return std::nan("");
    std::size_t same = 0;
    for (std::size_t i = 0; i < empirical.size(); ++i)
      same += analytic.cells[i].safe == empirical_safe(i);
    return static_cast<double>(same) / static_cast<double>(empirical.size());
  }
};

struct ColorSweep {
  ProtocolParams params;
  AdversaryConfig adversary;
  std::uint32_t iterations = 100;
  std::uint64_t seed = 1;
  std::uint32_t max_rounds = 5000;
  unsigned jobs = 1;
};

/// One matching per iteration, shared by every cell (common random numbers).
inline std::vector<Topology> sweep_topologies(const ColorSweep& s) {
  std::vector<Topology> topo(s.iterations);
  parallel_for(s.iterations, s.jobs,
               [&](std::size_t it) { topo[it] = build_topology(s.params, mix_seed(s.seed, it)); });
  return topo;
}

inline EmpiricalCell empirical_cell(const ColorSweep& s, double rho_n, double rho_b,
                                    const std::vector<Topology>& topo) {
  EmpiricalCell cell{rho_n, rho_b};
  for (std::uint32_t it = 0; it < s.iterations; ++it) {
    SimConfig cfg;
    cfg.params = s.params;
    cfg.pop = Population::from_ratios(s.params, rho_n, rho_b);
    cfg.adversary = s.adversary;
    cfg.mode = SimMode::Color;
    cfg.seed = mix_seed(s.seed, it);
    cfg.max_rounds = s.max_rounds;
    const auto m = run_color(cfg, &topo[it]);
    ++cell.runs;
    cell.violations += m.color.violation;
    cell.converged += m.color.converged;
    cell.stalled += m.color.stalled;
    cell.max_rounds += m.color.max_rounds_exceeded;
  }
  return cell;
}

inline EmpiricalCell empirical_cell(const ColorSweep& s, double rho_n, double rho_b) {
  return empirical_cell(s, rho_n, rho_b, sweep_topologies(s));
}

/// Analytic grid, plus the empirical grid when iterations > 0.
inline SafetyReport safety_report(const ColorSweep& s, double step, ScanLimit limit,
                                  double threshold = 0.95) {
  SafetyReport r;
  r.threshold = threshold;
  r.analytic = safety_region(s.params, step, limit);
  if (s.iterations == 0) return r;
  const auto topo = sweep_topologies(s);
  r.empirical.resize(r.analytic.cells.size());
  parallel_for(r.analytic.cells.size(), s.jobs, [&](std::size_t i) {
    const auto& a = r.analytic.cells[i];
    r.empirical[i] = empirical_cell(s, a.rho_n, a.rho_b, topo);
  });
  return r;
}

inline void write_safety_csv(std::ostream& os, const SafetyReport& r) {
  os << "rho_n,rho_b,analytic_safe,empirical_fraction,converged_fraction\n";
  for (std::size_t i = 0; i < r.analytic.cells.size(); ++i) {
    const auto& a = r.analytic.cells[i];
    os << fmt(a.rho_n, 2) << ',' << fmt(a.rho_b, 2) << ',' << (a.safe ? 1 : 0) << ',';
    if (r.empirical.empty())
      os << "nan,nan\n";
    else
      os << fmt(r.empirical[i].violation_free(), 4) << ',' << fmt(r.empirical[i].converged_fraction(), 4)
         << '\n';
  }
}

/// Largest safe rho_n at the given rho_b column and vice versa (-1 if none).
inline double max_safe_rho_n(const SafetyGrid& g, std::size_t ib) {
  double best = -1;
  for (std::size_t in = 0; in < g.axis.size(); ++in)
    if (g.at(in, ib).safe) best = std::max(best, g.axis[in]);
  return best;
}

inline double max_safe_rho_b(const SafetyGrid& g, std::size_t in) {
  double best = -1;
  for (std::size_t ib = 0; ib < g.axis.size(); ++ib)
    if (g.at(in, ib).safe) best = std::max(best, g.axis[ib]);
  return best;
}

// ---------------------------------------------------------------------------
// Transaction runs

struct TxRunOptions {
  std::uint32_t tx_count = 100;
  double arrival_rate = 100;
  ParentPolicy dag_policy = ParentPolicy::Chain;
  std::uint32_t parent_fanout = 2;
  bool single_issuer = true;
  std::uint32_t double_spends = 0;
  std::uint32_t avalanche_concurrency = 1;
  double max_sim_seconds = 600;
  LatencyModel latency;
};

inline ParentPolicy parse_parent_policy(std::string_view s) {
  if (s == "chain") return ParentPolicy::Chain;
  if (s == "random-frontier") return ParentPolicy::RandomFrontier;
  throw ConfigError("unknown dag_policy '" + std::string(s) + "'");
}

inline TxRunOptions tx_options_from(const nlohmann::json& sec) {
  TxRunOptions o;
  o.tx_count = get_or<std::uint32_t>(sec, "tx_count", o.tx_count);
  o.arrival_rate = get_or<double>(sec, "arrival_rate", o.arrival_rate);
  o.dag_policy = parse_parent_policy(get_or<std::string>(sec, "dag_policy", "chain"));
  o.parent_fanout = get_or<std::uint32_t>(sec, "parent_fanout", o.parent_fanout);
  o.single_issuer = get_or<bool>(sec, "single_issuer", o.single_issuer);
  o.double_spends = get_or<std::uint32_t>(sec, "double_spends", o.double_spends);
  o.avalanche_concurrency = get_or<std::uint32_t>(sec, "avalanche_concurrency", o.avalanche_concurrency);
  o.max_sim_seconds = get_or<double>(sec, "max_sim_seconds", o.max_sim_seconds);
  o.latency.mean_s = get_or<double>(sec, "latency_mean_s", o.latency.mean_s);
  o.latency.sd_s = get_or<double>(sec, "latency_sd_s", o.latency.sd_s);
  return o;
}

inline SimConfig make_sim_config(const LabConfig& lab, const TxRunOptions& o, SimMode mode) {
  SimConfig cfg;
  cfg.params = lab.params;
  cfg.pop = lab.population();
  cfg.adversary = lab.adversary;
  cfg.latency = o.latency;
  cfg.tx_count = o.tx_count;
  cfg.arrival_rate = o.arrival_rate;
  cfg.dag_policy = o.dag_policy;
  cfg.parent_fanout = o.parent_fanout;
  cfg.single_issuer = o.single_issuer;
  cfg.double_spends = o.double_spends;
  cfg.avalanche_concurrency = o.avalanche_concurrency;
  cfg.max_sim_seconds = o.max_sim_seconds;
  cfg.seed = lab.seed;
  cfg.mode = mode;
  return cfg;
}

inline void write_latency_csv(std::ostream& os, const std::vector<const SimMetrics*>& runs) {
  os << "tx_id,latency_s,mode\n";
  for (const auto* m : runs)
    for (const auto& l : m->latencies)
      os << l.tx.value << ',' << fmt(l.latency_s, 6) << ',' << to_string(m->mode) << '\n';
}

inline nlohmann::json to_json(const MessageCounts& c) {
  return {{"initiating", c.initiating},
          {"responses", c.responses},
          {"results", c.results},
          {"peer_queries", c.peer_queries},
          {"peer_responses", c.peer_responses},
          {"redundant_queries", c.redundant_queries},
          {"fanout", c.fanout},
          {"fetch", c.fetch},
          {"sent", c.sent},
          {"delivered", c.delivered},
          {"dropped", c.dropped},
          {"query_messages", c.query_messages()},
          {"total", c.total()}};
}

inline nlohmann::json to_json(const SimMetrics& m) {
  nlohmann::json j = {{"mode", to_string(m.mode)},
                      {"seed", m.seed},
                      {"messages", to_json(m.messages)},
                      {"rounds", m.rounds},
                      {"topology_retries", m.topology_retries}};
  if (m.mode == SimMode::Color) {
    const auto& c = m.color;
    j["color"] = {{"converged", c.converged},
                  {"violation", c.violation},
                  {"stalled", c.stalled},
                  {"max_rounds_exceeded", c.max_rounds_exceeded},
                  {"color", c.color ? to_string(*c.color) : "none"},
                  {"locked_red", c.locked_red},
                  {"locked_blue", c.locked_blue},
                  {"unlocked", c.unlocked}};
    return j;
  }
  j["finalized"] = m.latencies.size();
  j["unfinalized"] = m.unfinalized.size();
  j["median_latency_s"] = m.latencies.empty() ? nlohmann::json(nullptr) : nlohmann::json(median_latency(m));
  j["agreement"] = m.agreement;
  j["sim_end_s"] = m.sim_end_s;
  j["per_tx_query_messages"] = m.per_tx_query_messages;
  if (m.mode == SimMode::Blizzard) {
    j["lncr"] = m.lncr;
    j["lncr_histogram"] = m.lncr_histogram;
  }
  return j;
}

struct LatencyComparison {
  SimMetrics blizzard;
  SimMetrics baseline;
  double blizzard_median = 0;
  double baseline_median = 0;
  LatencyBound bound;

  [[nodiscard]] double ratio() const { return blizzard_median / baseline_median; }
};

inline LatencyComparison compare_latency(const LabConfig& lab, const TxRunOptions& o,
                                         double t_validation_s) {
  LatencyComparison r;
  r.blizzard = run_blizzard(make_sim_config(lab, o, SimMode::Blizzard));
  r.baseline = run_avalanche_baseline(make_sim_config(lab, o, SimMode::AvalancheBaseline));
  r.blizzard_median = median_latency(r.blizzard);
  r.baseline_median = median_latency(r.baseline);
  r.bound = latency_bound(LatencyTerms::chain(lab.params, o.latency.mean_s, t_validation_s, o.arrival_rate));
  return r;
}

// ---------------------------------------------------------------------------
// LNCR and the message/LNCR trade-off

struct LncrSweep {
  std::uint32_t seeds = 0;
  std::uint32_t disconnected = 0;
  std::vector<std::uint32_t> values;  // per seed; 0 when disconnected
  [[nodiscard]] std::uint32_t count_equal(std::uint32_t v) const {
    return static_cast<std::uint32_t>(std::count(values.begin(), values.end(), v));
  }
};

inline LncrSweep lncr_sweep(const ProtocolParams& p, std::uint32_t seeds, std::uint64_t seed,
                            unsigned jobs) {
  LncrSweep out;
  out.seeds = seeds;
  out.values.assign(seeds, 0);
  std::vector<char> disc(seeds, 0);
  parallel_for(seeds, jobs, [&](std::size_t s) {
    const auto rep = measure_lncr(build_topology(p, mix_seed(seed, s)));
    if (rep.connected())
      out.values[s] = rep.lncr();
    else
      disc[s] = 1;
  });
  out.disconnected = static_cast<std::uint32_t>(std::count(disc.begin(), disc.end(), 1));
  return out;
}

struct TradeoffRow {
  std::uint32_t m = 0;
  std::string mode;
  std::uint64_t messages = 0;
  std::int64_t lncr = 0;  // worst over the seeds; -1 if some matching was disconnected
};

inline std::vector<TradeoffRow> tradeoff(ProtocolParams p, std::uint32_t m_min, std::uint32_t m_max,
                                         std::uint32_t seeds, std::uint64_t seed, unsigned jobs) {
  if (m_min < p.k || m_max < m_min) throw ConfigError("tradeoff needs k <= m_min <= m_max");
  const auto count = m_max - m_min + 1;
  std::vector<TradeoffRow> rows(2 * count);
  parallel_for(count, jobs, [&](std::size_t idx) {
    auto q = p;
    q.m = m_min + static_cast<std::uint32_t>(idx);
    std::int64_t worst = 0, worst_base = 0;
    for (std::uint32_t s = 0; s < seeds; ++s) {
      const auto run_seed = mix_seed(seed, q.m * 1000003ull + s);
      const auto rep = measure_lncr(build_topology(q, run_seed));
      worst = (!rep.connected() || worst < 0) ? -1 : std::max<std::int64_t>(worst, rep.lncr());
      Rng rng(run_seed);
      const auto base = baseline_lncr(q.n, baseline_sample_size(q.n, q.m, q.k), rng);
      worst_base = (base == 0 || worst_base < 0) ? -1 : std::max<std::int64_t>(worst_base, base);
    }
    rows[2 * idx] = {q.m, "blizzard", message_complexity(q.n, q.m, q.k), worst};
    rows[2 * idx + 1] = {q.m, "avalanche-baseline", baseline_message_complexity(q.n, q.m, q.k),
                         worst_base};
  });
  return rows;
}

inline void write_tradeoff_csv(std::ostream& os, const std::vector<TradeoffRow>& rows) {
  os << "m,messages,lncr,mode\n";
  for (const auto& r : rows) os << r.m << ',' << r.messages << ',' << r.lncr << ',' << r.mode << '\n';
}

// ---------------------------------------------------------------------------
// Matching statistics

struct ChiSquare {
  double statistic = 0;
  std::uint32_t dof = 0;
  double p_value = 1;
};

/// Pearson test that each broker is picked with frequency k/m. Each draw is
/// a k-subset, so the raw statistic has mean m-k instead of m-1; it is
/// rescaled by (m-1)/(m-k) before comparing with chi-square(m-1).
inline ChiSquare broker_uniformity(const std::vector<std::uint64_t>& counts, std::uint64_t draws,
                                   std::uint32_t k) {
  ChiSquare out;
  const auto m = static_cast<std::uint32_t>(counts.size());
  if (m < 2 || k >= m || draws == 0) return out;
  const double expected = static_cast<double>(draws) * k / m;
  double x2 = 0;
  for (auto c : counts) x2 += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  out.statistic = x2 * (m - 1.0) / (m - static_cast<double>(k));
  out.dof = m - 1;
  boost::math::chi_squared_distribution<double> dist(out.dof);
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
  return out;
}

/// Plain goodness-of-fit p-value against equal expected counts.
inline ChiSquare equal_frequency(const std::vector<std::uint64_t>& counts) {
  ChiSquare out;
  if (counts.size() < 2) return out;
  double total = 0;
  for (auto c : counts) total += static_cast<double>(c);
  const double e = total / static_cast<double>(counts.size());
  for (auto c : counts) out.statistic += (static_cast<double>(c) - e) * (static_cast<double>(c) - e) / e;
  out.dof = static_cast<std::uint32_t>(counts.size() - 1);
  boost::math::chi_squared_distribution<double> dist(out.dof);
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
  return out;
}

struct MatchingCheck {
  std::uint32_t k = 0, m = 0;
  double delta = 0;
  std::uint64_t bits = 0;
  std::uint64_t trials = 0;
  std::uint64_t failures = 0;
  std::vector<std::uint64_t> broker_counts;
  ChiSquare uniformity;
  std::uint64_t tampers = 0;
  std::uint64_t tampers_rejected = 0;
};

/// Extraction failures and broker frequencies over `trials` (beacon, node)
/// pairs at B = required_bits(k, delta), then every single-bit tamper of
/// `proofs` honest proofs (digest, node id, round and broker id bits).
inline MatchingCheck matching_check(std::uint32_t k, std::uint32_t m, double delta,
                                    std::uint64_t trials, std::uint32_t proofs, std::uint64_t seed,
                                    unsigned jobs) {
  MatchingCheck out;
  out.k = k;
  out.m = m;
  out.delta = delta;
  out.bits = required_bits(k, delta);
  out.trials = trials;
  out.broker_counts.assign(m, 0);

  constexpr std::uint64_t kChunk = 4096;
  const auto chunks = (trials + kChunk - 1) / kChunk;
  std::vector<std::vector<std::uint64_t>> counts(chunks, std::vector<std::uint64_t>(m, 0));
  std::vector<std::uint64_t> fails(chunks, 0);
  parallel_for(chunks, jobs, [&](std::size_t c) {
    const auto lo = c * kChunk, hi = std::min(trials, lo + kChunk);
    for (auto t = lo; t < hi; ++t) {
      // 1024 nodes per beacon round
      const auto beacon = seeded_beacon(seed, t / 1024);
      const NodeId node{static_cast<std::uint32_t>(t % 1024)};
      const auto got = try_extract_brokers(derive_digest(beacon, node, out.bits), k, m,
                                           derive_relabel(beacon, node, m));
      if (!got) {
        ++fails[c];
        continue;
      }
      for (auto b : *got) ++counts[c][b.value];
    }
  });
  std::uint64_t ok = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    out.failures += fails[c];
    for (std::uint32_t b = 0; b < m; ++b) out.broker_counts[b] += counts[c][b];
  }
  ok = trials - out.failures;
  out.uniformity = broker_uniformity(out.broker_counts, ok, k);

  for (std::uint32_t i = 0; i < proofs; ++i) {
    const auto beacon = seeded_beacon(mix_seed(seed, 77), i);
    const auto proof = make_matching_proof(beacon, NodeId{i}, k, m, out.bits);
    auto check = [&](const MatchingProof& t) {
      ++out.tampers;
      if (verify_matching(t, beacon, k, m) != VerifyReason::Accepted) ++out.tampers_rejected;
    };
    for (std::size_t bit = 0; bit < proof.digest.size(); ++bit) {
      auto t = proof;
      t.digest.set(bit, !t.digest.test(bit));
      check(t);
    }
    for (int bit = 0; bit < 32; ++bit) {
      auto t = proof;
      t.node.value ^= 1u << bit;
      check(t);
    }
    for (int bit = 0; bit < 64; ++bit) {
      auto t = proof;
      t.round ^= 1ull << bit;
      check(t);
    }
    for (std::size_t j = 0; j < proof.brokers.size(); ++j)
      for (int bit = 0; bit < 32; ++bit) {
        auto t = proof;
        t.brokers[j].value ^= 1u << bit;
        check(t);
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// D exact vs approximated

struct DRow {
  std::uint32_t k = 0, m = 0;
  double alpha = 0, rho_b = 0, p = 0;
  double exact = 0, approx = 0;
  [[nodiscard]] bool sign_agrees() const {
    auto sgn = [](double x) { return (x > 0) - (x < 0); };
    return sgn(exact) == sgn(approx);
  }
};

inline std::vector<DRow> analyze_d(std::uint32_t k, std::uint32_t m, double alpha,
                                   const std::vector<double>& ps, const std::vector<double>& rho_bs) {
  std::vector<DRow> rows;
  for (auto rb : rho_bs)
    for (auto p : ps)
      rows.push_back({k, m, alpha, rb, p, delta_D_exact_at(k, m, alpha, rb, p),
                      delta_D_approx(k, m, alpha, rb, p)});
  return rows;
}

/// lo, lo + step, ..., hi (inclusive, rounded to the step grid).
inline std::vector<double> steps(double lo, double hi, double step) {
  std::vector<double> out;
  const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  for (long i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
  return out;
}

inline void write_d_csv(std::ostream& os, const std::vector<DRow>& rows) {
  os << "k,m,alpha,rho_b,p,D_exact,D_approx,sign_agrees\n";
  for (const auto& r : rows)
    os << r.k << ',' << r.m << ',' << fmt(r.alpha, 4) << ',' << fmt(r.rho_b, 4) << ',' << fmt(r.p, 4)
       << ',' << std::scientific << std::setprecision(9) << r.exact << ',' << r.approx
       << std::defaultfloat << ',' << (r.sign_agrees() ? 1 : 0) << '\n';
}

}  // namespace blizzard
