// blizzard-lab: every experiment as a subcommand. Data goes to --out (or
// stdout); progress goes to stderr.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "blizzard/config.hpp"
#include "blizzard/experiments.hpp"

using namespace blizzard;
using nlohmann::json;

namespace {

struct Global {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  bool quiet = false;
};

Global g;

void log(const std::string& msg) {
  if (!g.quiet) std::cerr << "[blizzard-lab] " << msg << '\n';
}

LabConfig load(bool required = true) {
  LabConfig c;
  if (!g.config_path.empty())
    c = load_config(g.config_path);
  else if (required)
    throw ConfigError("--config is required for this subcommand");
  if (g.seed) c.seed = *g.seed;
  return c;
}

void emit(const std::string& data, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << data;
    std::cout.flush();
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  f << data;
  log("wrote " + path);
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json header(const LabConfig& c, const std::string& cmd) {
  return {{"experiment", cmd}, {"config", to_json(c)}, {"seed", c.seed}};
}

// ---------------------------------------------------------------------------

struct SafetyOpts {
  std::optional<double> step;
  std::optional<std::uint32_t> iterations;
  std::optional<std::string> scan;
  std::string summary;
};

void cmd_safety_region(const SafetyOpts& o) {
  const auto c = load();
  const auto sec = c.section("safety-region");
  require_keys(sec, "safety_region", {"step", "iterations", "scan", "max_rounds", "threshold"});
  ColorSweep s;
  s.params = c.params;
  s.adversary = c.adversary;
  s.seed = c.seed;
  s.jobs = g.jobs;
  s.iterations = o.iterations.value_or(get_or<std::uint32_t>(sec, "iterations", 100));
  s.max_rounds = get_or<std::uint32_t>(sec, "max_rounds", 5000);
  const double step = o.step.value_or(get_or<double>(sec, "step", 0.05));
  const auto scan = o.scan.value_or(get_or<std::string>(sec, "scan", "n"));
  if (scan != "n" && scan != "c") throw ConfigError("scan must be 'n' or 'c'");
  if (!(step > 0 && step <= 1)) throw ConfigError("step must lie in (0, 1]");
  log("safety grid: step " + fmt(step, 3) + ", " + std::to_string(s.iterations) + " runs per cell, " +
      std::to_string(g.jobs) + " jobs");
  const auto r = safety_report(s, step, scan == "n" ? ScanLimit::Population : ScanLimit::Correct,
                               get_or<double>(sec, "threshold", 0.95));
  std::ostringstream os;
  write_safety_csv(os, r);
  emit(os.str(), g.out);
  if (!r.empirical.empty()) log("analytic/empirical agreement " + fmt(r.agreement(), 4));
  if (!o.summary.empty()) {
    auto j = header(c, "safety-region");
    j["cells"] = r.analytic.cells.size();
    j["analytic_safe_cells"] = std::count_if(r.analytic.cells.begin(), r.analytic.cells.end(),
                                             [](const SafetyCell& x) { return x.safe; });
    j["agreement"] = r.empirical.empty() ? json(nullptr) : json(r.agreement());
    j["max_safe_rho_n_at_rho_b_0"] = max_safe_rho_n(r.analytic, 0);
    j["max_safe_rho_b_at_rho_n_0"] = max_safe_rho_b(r.analytic, 0);
    emit(dump(j), o.summary);
  }
}

void cmd_color_run() {
  const auto c = load();
  const auto sec = c.section("color-run");
  require_keys(sec, "color_run", {"max_rounds", "initial_red"});
  SimConfig cfg;
  cfg.params = c.params;
  cfg.pop = c.population();
  cfg.adversary = c.adversary;
  cfg.mode = SimMode::Color;
  cfg.seed = c.seed;
  cfg.max_rounds = get_or<std::uint32_t>(sec, "max_rounds", cfg.max_rounds);
  if (sec.contains("initial_red")) cfg.initial_red = get_or<std::uint32_t>(sec, "initial_red", 0);
  const auto m = run_color(cfg);
  auto j = header(c, "color-run");
  j["metrics"] = to_json(m);
  emit(dump(j), g.out);
}

const std::vector<std::string_view> kTxKeys = {
    "mode", "tx_count", "arrival_rate", "dag_policy", "parent_fanout", "single_issuer",
    "double_spends", "avalanche_concurrency", "max_sim_seconds", "latency_mean_s", "latency_sd_s",
    "t_validation_s"};

void cmd_tx_run(const std::optional<std::string>& mode_flag, const std::string& latency_csv) {
  const auto c = load();
  const auto sec = c.section("tx-run");
  require_keys(sec, "tx_run", kTxKeys);
  const auto mode = parse_sim_mode(mode_flag.value_or(get_or<std::string>(sec, "mode", "blizzard")));
  if (mode == SimMode::Color) throw ConfigError("tx-run needs mode blizzard or avalanche-baseline");
  const auto opts = tx_options_from(sec);
  const auto m = run_simulation(make_sim_config(c, opts, mode));
  auto j = header(c, "tx-run");
  j["metrics"] = to_json(m);
  emit(dump(j), g.out);
  if (!latency_csv.empty()) {
    std::ostringstream os;
    write_latency_csv(os, {&m});
    emit(os.str(), latency_csv);
  }
}

void cmd_lncr(std::optional<std::uint32_t> seeds_flag) {
  const auto c = load();
  const auto sec = c.section("lncr");
  require_keys(sec, "lncr", {"seeds", "mc_trials"});
  const auto seeds = seeds_flag.value_or(get_or<std::uint32_t>(sec, "seeds", 100));
  const auto trials = get_or<std::uint64_t>(sec, "mc_trials", 20000);
  const auto& p = c.params;
  const auto sweep = lncr_sweep(p, seeds, c.seed, g.jobs);
  auto j = header(c, "lncr");
  j["measured"] = {{"seeds", seeds},
                   {"values", sweep.values},
                   {"count_equal_4", sweep.count_equal(4)},
                   {"disconnected", sweep.disconnected}};
  if (p.m >= 2) {
    const auto lp = lncr_probability(p.n, p.m, p.k);
    Rng rng(mix_seed(c.seed, 0x4c4e4352));
    const auto mc = lncr_share_probability_mc(p.n, p.m, p.k, trials, rng);
    j["share_probability"] = {{"r", lp.r},
                              {"as_written", lp.as_written},
                              {"complement", lp.complement},
                              {"exp_approx", lp.exp_approx},
                              {"monte_carlo", mc.mean},
                              {"monte_carlo_stderr", mc.stderr_},
                              {"monte_carlo_trials", mc.trials}};
  }
  emit(dump(j), g.out);
}

void cmd_matching_check() {
  const auto c = load();
  const auto sec = c.section("matching-check");
  require_keys(sec, "matching_check", {"trials", "delta", "proofs"});
  const auto mc = matching_check(c.params.k, c.params.m, get_or<double>(sec, "delta", 1e-6),
                                 get_or<std::uint64_t>(sec, "trials", 100000),
                                 get_or<std::uint32_t>(sec, "proofs", 50), c.seed, g.jobs);
  auto j = header(c, "matching-check");
  j["bits"] = mc.bits;
  j["trials"] = mc.trials;
  j["failures"] = mc.failures;
  j["broker_counts"] = mc.broker_counts;
  j["chi_square"] = {{"statistic", mc.uniformity.statistic},
                     {"dof", mc.uniformity.dof},
                     {"p_value", mc.uniformity.p_value}};
  j["tampers"] = mc.tampers;
  j["tampers_rejected"] = mc.tampers_rejected;
  emit(dump(j), g.out);
}

void cmd_throughput(const std::optional<std::string>& bw_flag, std::optional<double> t4_flag) {
  const auto c = load(false);
  const auto sec = c.section("throughput");
  require_keys(sec, "throughput", {"bw", "t4_s"});
  const auto bw = parse_bandwidth(bw_flag.value_or(get_or<std::string>(sec, "bw", "100Mbps")));
  const auto t4 = t4_flag.value_or(get_or<double>(sec, "t4_s", 100e-6));
  emit(std::to_string(throughput_tps(PipelineTimes::with_t4(bw, t4))) + "\n", g.out);
}

void cmd_latency(const std::string& summary, std::optional<double> tval_flag) {
  const auto c = load();
  const auto sec = c.section("latency");
  require_keys(sec, "latency", kTxKeys);
  const auto opts = tx_options_from(sec);
  const auto tval = tval_flag.value_or(get_or<double>(
      sec, "t_validation_s", pipeline_validation_time(PipelineTimes::with_t4(100e6, 100e-6))));
  log("running brokered and baseline transaction simulations");
  const auto r = compare_latency(c, opts, tval);
  std::ostringstream os;
  write_latency_csv(os, {&r.blizzard, &r.baseline});
  emit(os.str(), g.out);
  log("median latency: blizzard " + fmt(r.blizzard_median, 4) + " s, baseline " +
      fmt(r.baseline_median, 4) + " s, ratio " + fmt(r.ratio(), 4));
  if (!summary.empty()) {
    auto j = header(c, "latency");
    j["blizzard"] = to_json(r.blizzard);
    j["baseline"] = to_json(r.baseline);
    j["blizzard_median_s"] = r.blizzard_median;
    j["baseline_median_s"] = r.baseline_median;
    j["ratio"] = r.ratio();
    j["bound"] = {{"propagation", r.bound.propagation},
                  {"validation", r.bound.validation},
                  {"confidence", r.bound.confidence},
                  {"total", r.bound.total()}};
    emit(dump(j), summary);
  }
}

void cmd_messages() {
  const auto c = load();
  const auto sec = c.section("messages");
  require_keys(sec, "messages", kTxKeys);
  auto opts = tx_options_from(sec);
  if (!sec.contains("tx_count")) opts.tx_count = 20;
  const auto m = run_blizzard(make_sim_config(c, opts, SimMode::Blizzard));
  const auto& p = c.params;
  const auto expected = message_complexity(p.n, p.m, p.k);
  std::uint64_t matching = 0;
  for (auto x : m.per_tx_query_messages) matching += x == expected;
  auto j = header(c, "messages");
  j["formula"] = expected;
  j["baseline_formula"] = baseline_message_complexity(p.n, p.m, p.k);
  j["per_tx_query_messages"] = m.per_tx_query_messages;
  j["transactions_matching_formula"] = matching;
  j["counts"] = to_json(m.messages);
  emit(dump(j), g.out);
}

void cmd_tradeoff(std::optional<std::uint32_t> mlo, std::optional<std::uint32_t> mhi) {
  const auto c = load();
  const auto sec = c.section("tradeoff");
  require_keys(sec, "tradeoff", {"m_min", "m_max", "seeds"});
  const auto rows = tradeoff(c.params, mlo.value_or(get_or<std::uint32_t>(sec, "m_min", 4)),
                             mhi.value_or(get_or<std::uint32_t>(sec, "m_max", 19)),
                             get_or<std::uint32_t>(sec, "seeds", 5), c.seed, g.jobs);
  std::ostringstream os;
  write_tradeoff_csv(os, rows);
  emit(os.str(), g.out);
}

void cmd_analyze_d() {
  const auto c = load();
  const auto sec = c.section("analyze-d");
  require_keys(sec, "analyze_d", {"k", "m", "p_min", "p_max", "p_step", "rho_b_min", "rho_b_max",
                                  "rho_b_step"});
  const auto rows = analyze_d(
      get_or<std::uint32_t>(sec, "k", c.params.k), get_or<std::uint32_t>(sec, "m", c.params.m),
      c.params.alpha,
      steps(get_or<double>(sec, "p_min", 0.55), get_or<double>(sec, "p_max", 0.95),
            get_or<double>(sec, "p_step", 0.05)),
      steps(get_or<double>(sec, "rho_b_min", 0.0), get_or<double>(sec, "rho_b_max", 0.3),
            get_or<double>(sec, "rho_b_step", 0.05)));
  std::ostringstream os;
  write_d_csv(os, rows);
  emit(os.str(), g.out);
  std::size_t agree = 0;
  for (const auto& r : rows) agree += r.sign_agrees();
  log("sign agreement " + std::to_string(agree) + "/" + std::to_string(rows.size()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blizzard-lab: broker-mediated consensus experiments"};
  app.require_subcommand(1);
  app.add_option("-c,--config", g.config_path, "JSON config (see README for keys)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("-o,--out", g.out, "output file (default stdout)");
  app.add_option("-j,--jobs", g.jobs, "worker threads for sweeps")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", g.quiet, "no progress on stderr");
  app.fallthrough();

  SafetyOpts so;
  auto* sr = app.add_subcommand("safety-region", "analytic (and empirical) safety grid");
  sr->add_option("--step", so.step, "grid step (default 0.05)");
  sr->add_option("--iterations", so.iterations, "color runs per cell; 0 = analytic only");
  sr->add_option("--scan", so.scan, "i* scan limit: n (default) or c");
  sr->add_option("--summary", so.summary, "also write a JSON summary here");
  sr->footer(
      "Output CSV: rho_n,rho_b,analytic_safe,empirical_fraction,converged_fraction\n"
      "  analytic_safe       1 if some i in [ceil(c/2), limit] has D(i) < 0\n"
      "  empirical_fraction  share of color runs without a safety violation (nan if skipped)\n"
      "  converged_fraction  share of runs where every correct node locked on one color\n"
      "Config section safety_region: step, iterations, scan, max_rounds, threshold");

  auto* cr = app.add_subcommand("color-run", "one color-game run");
  cr->footer(
      "Output JSON: {experiment, config, seed, metrics{mode, seed, rounds, messages{...},\n"
      "  color{converged, violation, stalled, max_rounds_exceeded, color, locked_red,\n"
      "  locked_blue, unlocked}}}\n"
      "Config section color_run: max_rounds, initial_red");

  std::optional<std::string> tx_mode;
  std::string tx_csv;
  auto* tr = app.add_subcommand("tx-run", "one transaction simulation");
  tr->add_option("--mode", tx_mode, "blizzard | avalanche-baseline");
  tr->add_option("--latency-csv", tx_csv, "also write tx_id,latency_s,mode rows here");
  tr->footer(
      "Output JSON: {experiment, config, seed, metrics{mode, seed, finalized, unfinalized,\n"
      "  median_latency_s, agreement, sim_end_s, per_tx_query_messages[], messages{...},\n"
      "  lncr, lncr_histogram[]}}\n"
      "Config section tx_run: mode, tx_count, arrival_rate, dag_policy (chain|random-frontier),\n"
      "  parent_fanout, single_issuer, double_spends, avalanche_concurrency, max_sim_seconds,\n"
      "  latency_mean_s, latency_sd_s");

  std::optional<std::uint32_t> lncr_seeds;
  auto* lc = app.add_subcommand("lncr", "measured LNCR over seeded matchings and the closed forms");
  lc->add_option("--seeds", lncr_seeds, "matchings to measure (default 100)");
  lc->footer(
      "Output JSON: {experiment, config, seed, measured{seeds, values[], count_equal_4,\n"
      "  disconnected}, share_probability{r, as_written, complement, exp_approx, monte_carlo,\n"
      "  monte_carlo_stderr, monte_carlo_trials}}\n"
      "Config section lncr: seeds, mc_trials");

  auto* mcmd = app.add_subcommand("matching-check", "extraction failures, uniformity, tamper rejection");
  mcmd->footer(
      "Output JSON: {experiment, config, seed, bits, trials, failures, broker_counts[],\n"
      "  chi_square{statistic, dof, p_value}, tampers, tampers_rejected}\n"
      "Config section matching_check: trials, delta, proofs");

  std::optional<std::string> bw;
  std::optional<double> t4;
  auto* tp = app.add_subcommand("throughput", "pipeline throughput in whole tx/s");
  tp->add_option("--bw", bw, "bandwidth, e.g. 100Mbps, 10Mb/s, 1e6");
  tp->add_option("--t4", t4, "validation time t4 in seconds (default 1e-4)");
  tp->footer("Output: one integer line (tx/s). Config optional; section throughput: bw, t4_s");

  std::string lat_summary;
  std::optional<double> tval;
  auto* lt = app.add_subcommand("latency", "brokered vs baseline confirmation latency");
  lt->add_option("--summary", lat_summary, "also write a JSON summary here");
  lt->add_option("--t-validation", tval, "t_validation term of the bound, seconds");
  lt->footer(
      "Output CSV: tx_id,latency_s,mode (finalized transactions only)\n"
      "Summary JSON: {blizzard, baseline, blizzard_median_s, baseline_median_s, ratio,\n"
      "  bound{propagation, validation, confidence, total}}\n"
      "Config section latency: as tx_run plus t_validation_s");

  auto* ms = app.add_subcommand("messages", "per-transaction query messages vs m + 2kn");
  ms->footer(
      "Output JSON: {experiment, config, seed, formula, baseline_formula,\n"
      "  per_tx_query_messages[], transactions_matching_formula, counts{...}}\n"
      "Config section messages: as tx_run (tx_count defaults to 20)");

  std::optional<std::uint32_t> mlo, mhi;
  auto* to = app.add_subcommand("tradeoff", "messages and LNCR against m, both protocols");
  to->add_option("--m-min", mlo, "smallest m (default 4)");
  to->add_option("--m-max", mhi, "largest m (default 19)");
  to->footer(
      "Output CSV: m,messages,lncr,mode  (lncr = worst over seeds, -1 if a graph was disconnected)\n"
      "Config section tradeoff: m_min, m_max, seeds");

  auto* ad = app.add_subcommand("analyze-d", "exact D against its logistic approximation");
  ad->footer(
      "Output CSV: k,m,alpha,rho_b,p,D_exact,D_approx,sign_agrees\n"
      "Config section analyze_d: k, m, p_min, p_max, p_step, rho_b_min, rho_b_max, rho_b_step");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sr) cmd_safety_region(so);
    else if (*cr) cmd_color_run();
    else if (*tr) cmd_tx_run(tx_mode, tx_csv);
    else if (*lc) cmd_lncr(lncr_seeds);
    else if (*mcmd) cmd_matching_check();
    else if (*tp) cmd_throughput(bw, t4);
    else if (*lt) cmd_latency(lat_summary, tval);
    else if (*ms) cmd_messages();
    else if (*to) cmd_tradeoff(mlo, mhi);
    else if (*ad) cmd_analyze_d();
  } catch (const ValidationError& e) {
    std::cerr << "ValidationError: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "ConfigError: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "ConfigError: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const SimulationError& e) {
    std::cerr << "SimulationAbort: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
