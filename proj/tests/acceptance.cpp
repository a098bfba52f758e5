// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned
// below. Exit status is the number of failed criteria.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <set>
#include <thread>

#include <unistd.h>

#include "blizzard/experiments.hpp"
#include "oracles.hpp"

using namespace blizzard;

namespace {

// Pinned tolerances and seeds.
constexpr double kLatencyLo = 0.4, kLatencyHi = 0.9;
constexpr double kLatencyRatioMax = 0.55;
constexpr std::uint32_t kLncrSeeds = 100, kLncrNeeded = 99;
constexpr double kCellConverged = 0.95;
constexpr double kGridAgreement = 0.90;
constexpr double kPaperRhoNLo = 0.45, kPaperRhoNHi = 0.55;
constexpr double kPaperRhoBLo = 0.50, kPaperRhoBHi = 0.65;
constexpr double kSigmas = 3.0;
constexpr double kSignAgreement = 0.95;
constexpr std::uint64_t kMatchingTrials = 100'000;
constexpr double kUniformityP = 0.01;
constexpr int kRandomDags = 1000;

const unsigned kJobs = std::max(1u, std::thread::hardware_concurrency());

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << id << ": " << detail << std::endl;
  failures += !ok;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ProtocolParams paper_network() { return {100, 8, 3, 0.8, 0.8, 11, 150}; }

// ---------------------------------------------------------------------------

void throughput_table() {
  const std::uint64_t want[] = {10000, 4166, 416};
  const double bw[] = {100e6, 10e6, 1e6};
  bool ok = true;
  std::string got;
  for (int i = 0; i < 3; ++i) {
    const auto tps = throughput_tps(PipelineTimes::with_t4(bw[i], 1e-4));
    ok &= tps == want[i];
    got += (i ? " / " : "") + std::to_string(tps);
  }
  report(1, ok, "throughput at 100/10/1 Mb/s, t4 = 100 us: " + got + " tx/s (want 10000 / 4166 / 416)");
}

// Criteria 2 and 4 share one run of each protocol on the paper network.
const LatencyComparison& paper_runs() {
  static const LatencyComparison cmp = [] {
    LabConfig lab;
    lab.params = paper_network();
    lab.seed = 7;
    const TxRunOptions opts;  // 100 tx at 100 tx/s, chain, uniform 100 +- 25 ms
    return compare_latency(lab, opts, pipeline_validation_time(PipelineTimes::with_t4(100e6, 1e-4)));
  }();
  return cmp;
}

void messages() {
  const auto& cmp = paper_runs();
  const auto want = message_complexity(100, 8, 3);
  std::size_t exact = 0;
  for (auto q : cmp.blizzard.per_tx_query_messages) exact += q == want;
  const auto total = cmp.blizzard.per_tx_query_messages.size();
  report(2, total > 0 && exact == total,
         std::to_string(exact) + "/" + std::to_string(total) + " transactions counted exactly " +
             std::to_string(want) + " query messages (m + 2kn)");
}

void latency() {
  const auto& cmp = paper_runs();
  const double med = cmp.blizzard_median;
  const bool in_band = med >= kLatencyLo && med <= kLatencyHi;
  const bool ratio_ok = cmp.ratio() <= kLatencyRatioMax;
  report(4, in_band && ratio_ok,
         "median confirmation " + fmt(med, 3) + " s (band [0.4, 0.9]); baseline median " +
             fmt(cmp.baseline_median, 3) + " s; ratio " + fmt(cmp.ratio(), 3) + " (max 0.55); finalized " +
             std::to_string(cmp.blizzard.latencies.size()) + "/" +
             std::to_string(cmp.blizzard.per_tx_query_messages.size()));
}

void lncr() {
  const ProtocolParams p{500, 10, 3, 0.8, 0.8, 11, 150};
  const auto s = lncr_sweep(p, kLncrSeeds, 500, kJobs);
  const auto fours = s.count_equal(4);
  report(3, fours >= kLncrNeeded,
         "n=500 m=10 k=3: LNCR = 4 in " + std::to_string(fours) + "/" + std::to_string(kLncrSeeds) +
             " matchings (need >= 99; disconnected " + std::to_string(s.disconnected) + ")");
}

void safety() {
  ColorSweep sw;
  sw.params = {200, 10, 5, 0.8, 0.8, 11, 150};
  sw.iterations = 100;
  sw.seed = 2024;
  sw.jobs = kJobs;
  const auto rep = safety_report(sw, 0.05, ScanLimit::Population);
  auto cell = [&](double rn, double rb) -> const EmpiricalCell& {
    const auto in = static_cast<std::size_t>(std::lround(rn / 0.05));
    const auto ib = static_cast<std::size_t>(std::lround(rb / 0.05));
    return rep.empirical[in * rep.analytic.axis.size() + ib];
  };
  const auto& a = cell(0.4, 0.05);
  const auto& b = cell(0.05, 0.5);
  const bool cells_ok = a.converged_fraction() >= kCellConverged && b.converged_fraction() >= kCellConverged;
  const double agree = rep.agreement();
  const bool agree_ok = agree >= kGridAgreement;

  ProtocolParams paper{2000, 10, 5, 0.8, 0.8, 11, 150};
  const auto g = safety_region(paper, 0.05, ScanLimit::Population);
  const double rn_max = max_safe_rho_n(g, 0);
  const double rb_max = max_safe_rho_b(g, 0);
  bool monotone = true;
  double prev = 2, last_safe = -1;
  std::size_t last_col = 0;
  for (std::size_t ib = 0; ib < g.axis.size(); ++ib) {
    const auto f = max_safe_rho_n(g, ib);
    if (f < 0) continue;
    monotone &= f <= prev + 1e-12;
    prev = f;
    last_safe = f;
    last_col = ib;
  }
  const bool tradeoff = monotone && last_col > 0 && last_safe < rn_max;
  const bool paper_ok = rn_max >= kPaperRhoNLo && rn_max <= kPaperRhoNHi && rb_max >= kPaperRhoBLo &&
                        rb_max <= kPaperRhoBHi && tradeoff;

  std::ostringstream d;
  d << "n=200 cells (0.4,0.05) converged " << fmt(a.converged_fraction(), 2) << " violation-free "
    << fmt(a.violation_free(), 2) << ", (0.05,0.5) converged " << fmt(b.converged_fraction(), 2)
    << " violation-free " << fmt(b.violation_free(), 2) << " (need converged >= 0.95)"
    << (cells_ok ? "" : " [fails]") << "; analytic/empirical agreement " << fmt(agree, 3)
    << " (need >= 0.90)" << (agree_ok ? "" : " [fails]") << "; n=2000 analytic max rho_n at rho_b=0: "
    << (rn_max < 0 ? std::string("none") : fmt(rn_max, 2)) << ", max rho_b at rho_n=0: "
    << (rb_max < 0 ? std::string("none") : fmt(rb_max, 2)) << ", frontier "
    << (tradeoff ? "trades off" : (monotone ? "flat (no trade-off)" : "not monotone"))
    << (paper_ok ? "" : " [fails]");
  report(5, cells_ok && agree_ok && paper_ok, d.str());
}

void closed_forms() {
  Rng rng(606);
  std::ostringstream d;
  bool ok = true;

  const double pr = p_red_broker(5, 10, 2, 0.8);
  const auto pr_mc = oracle::p_red_mc(5, 10, 2, 0.8, 1'000'000, rng);
  ok &= pr_mc.within(pr, kSigmas);
  d << "p_red " << fmt(pr, 5) << " vs MC " << fmt(pr_mc.mean, 5);

  const ColorModelParams cmp{50, 8, 4, 0.75, 0.8, 0.1, 30, 40};
  const auto inc = confidence_increments(cmp);
  const auto inc_mc = oracle::increments_mc(cmp, 100'000, rng);
  const bool inc_ok = inc_mc.du_R.within(inc.du_R, kSigmas) && inc_mc.du_B.within(inc.du_B, kSigmas) &&
                      inc_mc.dv_R.within(inc.dv_R, kSigmas) && inc_mc.dv_B.within(inc.dv_B, kSigmas);
  ok &= inc_ok;
  d << "; increments " << (inc_ok ? "within" : "outside") << " 3 se";

  const double dx = delta_D_exact_at(4, 8, 0.75, 0.1, 0.7);
  const auto d_mc = oracle::d_at_p_mc(4, 8, 0.75, 0.1, 0.7, 200'000, rng);
  const bool d_whole = inc_mc.D.within(inc.D(), kSigmas);
  ok &= d_mc.within(dx, kSigmas) && d_whole;
  d << "; D(p=0.7) " << fmt(dx, 4) << " vs MC " << fmt(d_mc.mean, 4);

  bool cap_ok = true;
  for (auto [mb, ell, theta] : {std::tuple{2u, 10u, 5.0}, std::tuple{3u, 6u, 1.0}, std::tuple{5u, 8u, 2.0}}) {
    const auto cap = byzantine_broker_cap(mb / 10.0, ell, theta);
    const auto mc = oracle::broker_cap_mc(10, mb, ell, theta, 100'000, rng);
    cap_ok &= mc.count.within(cap.expected, kSigmas) && mc.exceed.mean <= cap.bound;
  }
  ok &= cap_ok;
  d << "; broker cap " << (cap_ok ? "holds" : "violated");

  const auto rows = analyze_d(50, 100, 0.8, steps(0.55, 0.95, 0.05), steps(0.0, 0.3, 0.05));
  std::size_t agree = 0;
  for (const auto& r : rows) agree += r.sign_agrees();
  const double frac = static_cast<double>(agree) / static_cast<double>(rows.size());
  ok &= frac >= kSignAgreement;
  d << "; sign(D~) = sign(D) on " << agree << "/" << rows.size() << " cells at k=50";
  report(6, ok, d.str());
}

void matching() {
  const auto r = matching_check(3, 8, 1e-6, kMatchingTrials, 100, 31337, kJobs);
  const bool ok = r.failures == 0 && r.uniformity.p_value > kUniformityP && r.tampers_rejected == r.tampers;
  report(7, ok,
         "B=" + std::to_string(r.bits) + ": " + std::to_string(r.failures) + " extraction failures in " +
             std::to_string(r.trials) + "; uniformity p=" + fmt(r.uniformity.p_value, 3) + "; " +
             std::to_string(r.tampers_rejected) + "/" + std::to_string(r.tampers) + " tampers rejected");
}

void dag_oracle() {
  Rng rng(8088);
  std::uint64_t checks = 0, mismatches = 0, double_spend_dags = 0;
  for (int i = 0; i < kRandomDags; ++i) {
    const auto size = 2 + static_cast<std::uint32_t>(rng.below(29));
    const auto txs = oracle::random_dag(rng, size);
    std::set<std::uint64_t> keys;
    for (const auto& t : txs) keys.insert(t.conflict_key.value);
    double_spend_dags += keys.size() < txs.size();
    NodeDag d({3, 6});
    oracle::BruteDag o(3, 6);
    for (const auto& t : txs) {
      d.add_transaction(t);
      o.add(t);
    }
    const auto votes = 1 + rng.below(2 * size);
    for (std::uint64_t v = 0; v < votes; ++v) {
      const auto id = rng.below(size);
      d.record_voucher(TxId{id});
      o.voucher(id);
      for (std::uint64_t x = 0; x < size; ++x) {
        ++checks;
        mismatches += d.confidence(TxId{x}) != o.confidence(x) ||
                      d.is_strongly_preferred(TxId{x}) != o.strongly_preferred(x) ||
                      d.is_finalized(TxId{x}) != o.finalized(x);
      }
    }
  }
  report(8, mismatches == 0,
         std::to_string(kRandomDags) + " random DAGs (" + std::to_string(double_spend_dags) +
             " with double spends), " + std::to_string(checks) + " state checks, " +
             std::to_string(mismatches) + " mismatches");
}

void determinism() {
  std::vector<std::string> broken;
  auto same = [&](const std::string& what, auto&& produce) {
    std::ostringstream a, b;
    produce(a);
    produce(b);
    if (a.str() != b.str() || a.str().empty()) broken.push_back(what);
  };

  same("safety csv", [](std::ostream& os) {
    ColorSweep s;
    s.params = {60, 6, 3, 0.8, 0.8, 11, 150};
    s.iterations = 4;
    s.seed = 5;
    s.jobs = kJobs;
    write_safety_csv(os, safety_report(s, 0.25, ScanLimit::Population));
  });
  same("latency csv", [](std::ostream& os) {
    LabConfig lab;
    lab.params = {40, 6, 3, 0.8, 0.8, 11, 150};
    TxRunOptions o;
    o.tx_count = 20;
    const auto b = run_blizzard(make_sim_config(lab, o, SimMode::Blizzard));
    const auto a = run_avalanche_baseline(make_sim_config(lab, o, SimMode::AvalancheBaseline));
    write_latency_csv(os, {&b, &a});
  });
  same("tradeoff csv", [](std::ostream& os) {
    write_tradeoff_csv(os, tradeoff({200, 4, 3, 0.8, 0.8, 11, 150}, 4, 8, 3, 9, kJobs));
  });
  same("matching json", [](std::ostream& os) {
    const auto r = matching_check(3, 8, 1e-6, 5000, 3, 1, kJobs);
    os << r.failures << ' ' << r.uniformity.statistic << ' ' << r.tampers_rejected;
    for (auto c : r.broker_counts) os << ' ' << c;
  });

#ifdef BLIZZARD_LAB_PATH
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / ("blizzard-acceptance-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "config.json");
    cfg << R"({"n":40,"m":6,"k":3,"rho_n":0.1,"rho_b":0.1,"seed":3,
      "safety_region":{"iterations":3},"tx_run":{"tx_count":15},
      "tradeoff":{"seeds":2},"matching_check":{"trials":2000,"proofs":2}})";
  }
  const std::string lab = BLIZZARD_LAB_PATH;
  const std::vector<std::pair<std::string, std::string>> runs = {
      {"safety-region", "safety-region --step 0.25"},
      {"tx-run", "tx-run"},
      {"tradeoff", "tradeoff --m-min 3 --m-max 6"},
      {"matching-check", "matching-check"},
      {"color-run", "color-run"}};
  for (const auto& [name, args] : runs) {
    std::string out[2];
    for (int rep = 0; rep < 2; ++rep) {
      const auto path = dir / (name + "-" + std::to_string(rep) + ".out");
      const std::string cmd = "\"" + lab + "\" -q -j 2 -c \"" + (dir / "config.json").string() +
                              "\" --seed 5 -o \"" + path.string() + "\" " + args;
      if (std::system(cmd.c_str()) != 0) {
        broken.push_back("cli " + name + " (exit status)");
        break;
      }
      out[rep] = slurp(path.string());
    }
    if (out[0].empty() || out[0] != out[1]) broken.push_back("cli " + name);
  }
  fs::remove_all(dir);
#endif

  std::string detail = broken.empty() ? "all reruns byte-identical" : "differs:";
  for (const auto& b : broken) detail += " " + b;
  report(9, broken.empty(), detail);
}

}  // namespace

int main() {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  throughput_table();
  messages();
  lncr();
  latency();
  safety();
  closed_forms();
  matching();
  dag_oracle();
  determinism();
  const auto secs = std::chrono::duration<double>(clock::now() - t0).count();
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << " (" << fmt(secs, 1) << " s)" << std::endl;
  return failures;
}
