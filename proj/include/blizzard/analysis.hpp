#pragma once

// Closed-form side of the lab: broker-red probability, expected confidence
// increments and their difference D, its logistic approximation, the i*
// scan and safety grid, LNCR probability, pipeline throughput, latency
// bound, message counts, the Byzantine-broker tail cap and energy.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "blizzard/core.hpp"
#include "blizzard/random.hpp"

namespace blizzard {

namespace detail {

// Neumaier compensated sum.
template <typename Real>
class CompensatedSum {
 public:
  void add(Real x) {
    const Real t = sum_ + x;
    using std::abs;
    if (abs(sum_) >= abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  [[nodiscard]] Real value() const { return sum_ + comp_; }

 private:
  Real sum_ = 0;
  Real comp_ = 0;
};

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log C(n, k); -inf for any out-of-range argument (negative n, k < 0, k > n).
inline double log_choose(std::int64_t n, std::int64_t k) {
  if (n < 0 || k < 0 || k > n) return kNegInf;
  return std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(k) + 1) -
         std::lgamma(static_cast<double>(n - k) + 1);
}

inline double choose(std::int64_t n, std::int64_t k) {
  const auto l = log_choose(n, k);
  return l == kNegInf ? 0.0 : std::exp(l);
}

// Sum over j' in [ceil(alpha k), k] of C(a, j') C(m - a, k - j') / C(m, k):
// the chance that at least ceil(alpha k) of k brokers drawn without
// replacement are among `a` marked ones. Out-of-range a gives 0 terms.
inline double hyper_upper_tail(std::int64_t m, std::int64_t k, std::int64_t a, std::int64_t j_min) {
  CompensatedSum<double> s;
  const auto denom = log_choose(m, k);
  for (auto j = std::max<std::int64_t>(j_min, 0); j <= k; ++j) {
    const auto l = log_choose(a, j) + log_choose(m - a, k - j);
    if (l == kNegInf) continue;
    s.add(std::exp(l - denom));
  }
  return s.value();
}

inline double log_binom_pmf(std::int64_t n, std::int64_t r, double p) {
  if (r < 0 || r > n) return kNegInf;
  if (p <= 0) return r == 0 ? 0.0 : kNegInf;
  if (p >= 1) return r == n ? 0.0 : kNegInf;
  return log_choose(n, r) + static_cast<double>(r) * std::log(p) +
         static_cast<double>(n - r) * std::log1p(-p);
}

}  // namespace detail

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Broker-red probability

namespace detail {

// ln(j!) for j = 0..N, accumulated with std::lgamma at each entry.
class LogFactorials {
 public:
  explicit LogFactorials(std::uint32_t top) : lf_(top + 1) {
    for (std::uint32_t j = 0; j <= top; ++j) lf_[j] = std::lgamma(static_cast<double>(j) + 1);
  }
  [[nodiscard]] double log_choose(std::int64_t n, std::int64_t k) const {
    if (n < 0 || k < 0 || k > n) return kNegInf;
    return lf_[static_cast<std::size_t>(n)] - lf_[static_cast<std::size_t>(k)] -
           lf_[static_cast<std::size_t>(n - k)];
  }

 private:
  std::vector<double> lf_;
};

inline double p_red_broker_impl(std::uint32_t i, std::uint32_t n, std::uint32_t m, double eta,
                                const LogFactorials& lf) {
  if (i == 0) return 0.0;
  const double lp = -std::log(static_cast<double>(m));
  const double lq = m == 1 ? kNegInf : std::log1p(-1.0 / m);
  // (1/m)^l (1-1/m)^(n-l), without C(n, l): it cancels against the
  // hypergeometric denominator.
  auto log_weight = [&](std::int64_t l) {
    if (m == 1) return l == n ? 0.0 : kNegInf;
    return static_cast<double>(l) * lp + static_cast<double>(n - l) * lq;
  };
  // Degrees in decreasing order of C(n, l) * weight, an upper bound on their
  // contribution. Once that bound falls e^-60 below the largest term found,
  // the rest cannot matter.
  std::vector<std::pair<double, std::int64_t>> order;
  order.reserve(n);
  for (std::int64_t l = 1; l <= n; ++l) order.emplace_back(lf.log_choose(n, l) + log_weight(l), l);
  std::sort(order.begin(), order.end(), std::greater<>());

  std::vector<double> terms;
  double best = kNegInf;
  for (const auto& [bound, l] : order) {
    if (bound == kNegInf || bound < best - 60.0) break;
    const auto lw = log_weight(l);
    const auto j0 = static_cast<std::int64_t>(threshold_count(eta, static_cast<std::uint32_t>(l)));
    for (auto j = j0; j <= std::min<std::int64_t>(i, l); ++j) {
      const auto t = lf.log_choose(i, j) + lf.log_choose(n - i, l - j) + lw;
      if (t == kNegInf) continue;
      terms.push_back(t);
      best = std::max(best, t);
    }
  }
  if (terms.empty()) return 0.0;
  CompensatedSum<double> s;
  for (auto t : terms) s.add(std::exp(t - best));
  return std::clamp(std::exp(best + std::log(s.value())), 0.0, 1.0);
}

}  // namespace detail

/// p_i: chance that a broker holds an eta-majority of red among its
/// connections when i of n nodes are red and each node connects to it
/// independently with probability 1/m. Summed in log space relative to the
/// largest term; degrees that cannot come within e^-60 of it are skipped.
inline double p_red_broker(std::uint32_t i, std::uint32_t n, std::uint32_t m, double eta) {
  if (i > n) throw std::invalid_argument("p_red_broker: i exceeds n");
  if (m == 0) throw std::invalid_argument("p_red_broker: m must be positive");
  return detail::p_red_broker_impl(i, n, m, eta, detail::LogFactorials(n));
}

/// Same sum with exact binomials and powers carried in `Real` (meant for an
/// extended-precision type). No terms are skipped.
template <typename Real>
Real p_red_broker_direct(std::uint32_t i, std::uint32_t n, std::uint32_t m, double eta) {
  if (i == 0) return Real(0);
  auto row = [](std::uint32_t top) {
    std::vector<Real> c(top + 1);
    c[0] = Real(1);
    for (std::uint32_t j = 1; j <= top; ++j) c[j] = c[j - 1] * Real(top - j + 1) / Real(j);
    return c;
  };
  const auto ci = row(i);
  const auto cni = row(n - i);
  const Real p = Real(1) / Real(m);
  const Real q = Real(1) - p;
  std::vector<Real> qpow(n + 1);
  qpow[0] = Real(1);
  for (std::uint32_t t = 1; t <= n; ++t) qpow[t] = qpow[t - 1] * q;
  Real ppow = Real(1);
  Real total = Real(0);
  for (std::uint32_t l = 1; l <= n; ++l) {
    ppow *= p;
    const auto j0 = threshold_count(eta, l);
    Real tail = Real(0);
    for (std::uint32_t j = j0; j <= std::min(i, l); ++j) {
      if (l - j > n - i) continue;
      tail += ci[j] * cni[l - j];
    }
    total += tail * ppow * qpow[n - l];
  }
  return total;
}

/// Memoized p_i for one (n, m, eta).
class PRedTable {
 public:
  PRedTable(std::uint32_t n, std::uint32_t m, double eta)
      : n_(n), m_(m), eta_(eta), lf_(n), cache_(n + 1, -1.0) {
    if (m == 0) throw std::invalid_argument("PRedTable: m must be positive");
  }
  double operator()(std::uint32_t i) {
    if (i > n_) i = n_;
    auto& v = cache_[i];
    if (v < 0) v = detail::p_red_broker_impl(i, n_, m_, eta_, lf_);
    return v;
  }
  [[nodiscard]] std::uint32_t n() const { return n_; }
  [[nodiscard]] std::uint32_t m() const { return m_; }
  [[nodiscard]] double eta() const { return eta_; }

 private:
  std::uint32_t n_, m_;
  double eta_;
  detail::LogFactorials lf_;
  std::vector<double> cache_;
};

// ---------------------------------------------------------------------------
// Confidence recursions

struct ColorModelParams {
  std::uint32_t n = 100;
  std::uint32_t m = 8;
  std::uint32_t k = 3;
  double alpha = 0.8;
  double eta = 0.8;
  double rho_b = 0.0;
  std::uint32_t i = 0;  // red correct nodes
  std::uint32_t c = 0;  // correct nodes

  [[nodiscard]] std::uint32_t b() const { return n - c; }
};

struct ConfidenceDeltas {
  double du_R = 0, du_B = 0, dv_R = 0, dv_B = 0;
  [[nodiscard]] double D() const { return dv_B - dv_R; }
};

/// The four expected per-round increments, given p_i and p_{i+b}:
///   du_R: sum_r H(r)   Bin(m, p_{i+b})(r)
///   du_B: sum_r H(r)   Bin(m, 1-p_i)(r)
///   dv_R: sum_r H(r-f) Bin(m, p_i)(r)
///   dv_B: sum_r H(r+f) Bin(m, 1-p_i)(r)
/// with r from ceil(alpha k) to m, f = round(rho_b r), and H(a) the chance
/// that at least ceil(alpha k) of k brokers fall in a marked set of size a.
inline ConfidenceDeltas confidence_increments(const ColorModelParams& cmp, double p_i,
                                             double p_ib) {
  const std::int64_t m = cmp.m, k = cmp.k;
  const std::int64_t j_min = threshold_count(cmp.alpha, cmp.k);
  detail::CompensatedSum<double> ur, ub, vr, vb;
  for (auto r = j_min; r <= m; ++r) {
    const auto f = static_cast<std::int64_t>(std::lround(cmp.rho_b * static_cast<double>(r)));
    const auto h = detail::hyper_upper_tail(m, k, r, j_min);
    const auto w_red_ib = std::exp(detail::log_binom_pmf(m, r, p_ib));
    const auto w_red = std::exp(detail::log_binom_pmf(m, r, p_i));
    const auto w_blue = std::exp(detail::log_binom_pmf(m, r, 1.0 - p_i));
    ur.add(h * w_red_ib);
    ub.add(h * w_blue);
    vr.add(detail::hyper_upper_tail(m, k, r - f, j_min) * w_red);
    vb.add(detail::hyper_upper_tail(m, k, r + f, j_min) * w_blue);
  }
  return {ur.value(), ub.value(), vr.value(), vb.value()};
}

inline ConfidenceDeltas confidence_increments(const ColorModelParams& cmp, PRedTable& table) {
  if (cmp.i > cmp.n) throw std::invalid_argument("i exceeds n");
  return confidence_increments(cmp, table(cmp.i), table(std::min(cmp.n, cmp.i + cmp.b())));
}

inline ConfidenceDeltas confidence_increments(const ColorModelParams& cmp) {
  PRedTable t(cmp.n, cmp.m, cmp.eta);
  return confidence_increments(cmp, t);
}

/// D = dv_B - dv_R for a given broker-red probability.
inline double delta_D_exact_at(std::uint32_t k, std::uint32_t m, double alpha, double rho_b,
                               double p_i) {
  ColorModelParams cmp;
  cmp.m = m;
  cmp.k = k;
  cmp.alpha = alpha;
  cmp.rho_b = rho_b;
  return confidence_increments(cmp, p_i, p_i).D();
}

inline double delta_D_exact(const ColorModelParams& cmp) { return confidence_increments(cmp).D(); }

/// G(k, m, lambda, alpha, p): normal(m p, m p (1-p)) density over r = 0..m
/// weighted by the logistic stand-in 1/(1+exp(-1.702 x)) for the normal CDF.
/// A non-positive variance under the root makes the logistic a step.
inline double G(std::uint32_t k, std::uint32_t m, double lambda, double alpha, double p) {
  const double kd = k, md = m;
  const double var = md * p * (1.0 - p);
  detail::CompensatedSum<double> s;
  for (std::uint32_t r = 0; r <= m; ++r) {
    const double rd = r;
    double density;
    if (var <= 0) {
      density = std::abs(rd - md * p) < 0.5 ? 1.0 : 0.0;
    } else {
      density = std::exp(-(rd - md * p) * (rd - md * p) / (2 * var)) / std::sqrt(2 * M_PI * var);
    }
    if (density == 0) continue;
    const double num = kd / md * lambda * rd - alpha * kd;
    const double v = kd / md * lambda * rd * (1.0 - lambda * rd / md);
    double logistic;
    if (v > 0)
      logistic = 1.0 / (1.0 + std::exp(-1.702 * num / std::sqrt(v)));
    else
      logistic = num > 0 ? 1.0 : (num < 0 ? 0.0 : 0.5);
    s.add(logistic * density);
  }
  return s.value();
}

/// D~ = G(k,m,1+rho_b,alpha,1-p) - G(k,m,1-rho_b,alpha,p).
inline double delta_D_approx(std::uint32_t k, std::uint32_t m, double alpha, double rho_b,
                             double p_i) {
  return G(k, m, 1.0 + rho_b, alpha, 1.0 - p_i) - G(k, m, 1.0 - rho_b, alpha, p_i);
}

// ---------------------------------------------------------------------------
// i* and the safety grid

enum class ScanLimit {
  Population,  // i runs up to n
  Correct,     // i runs up to c
};

struct IStar {
  std::uint32_t i_star = 0;
  std::uint32_t half = 0;  // ceil(c/2)
  std::uint32_t delta = 0; // i* - ceil(c/2)
};

class NoSafePoint : public AnalysisError {
 public:
  NoSafePoint() : AnalysisError("NoSafePoint: D >= 0 for every scanned i") {}
};

/// First i >= ceil(c/2) with D(i) < 0.
inline IStar find_i_star(const ProtocolParams& p, std::uint32_t c, double rho_b, PRedTable& table,
                         ScanLimit limit = ScanLimit::Population) {
  if (c > p.n) throw std::invalid_argument("c exceeds n");
  IStar out;
  out.half = (c + 1) / 2;
  const auto top = limit == ScanLimit::Population ? p.n : c;
  ColorModelParams cmp{p.n, p.m, p.k, p.alpha, p.eta, rho_b, 0, c};
  for (auto i = out.half; i <= top; ++i) {
    cmp.i = i;
    const auto pi = table(i);
    if (confidence_increments(cmp, pi, pi).D() < 0) {
      out.i_star = i;
      out.delta = i - out.half;
      return out;
    }
  }
  throw NoSafePoint();
}

inline IStar find_i_star(const ProtocolParams& p, const Population& pop,
                         ScanLimit limit = ScanLimit::Population) {
  PRedTable table(p.n, p.m, p.eta);
  return find_i_star(p, pop.c, pop.rho_b(), table, limit);
}

struct SafetyCell {
  double rho_n = 0;
  double rho_b = 0;
  bool safe = false;
  std::optional<IStar> i_star;
};

struct SafetyGrid {
  std::vector<double> axis;        // shared by rho_n and rho_b
  std::vector<SafetyCell> cells;   // rho_n-major

  [[nodiscard]] const SafetyCell& at(std::size_t in, std::size_t ib) const {
    return cells[in * axis.size() + ib];
  }
};

inline std::vector<double> grid_axis(double step) {
  std::vector<double> axis;
  const auto count = static_cast<std::size_t>(std::lround(1.0 / step));
  for (std::size_t i = 0; i <= count; ++i) axis.push_back(static_cast<double>(i) * step);
  return axis;
}

/// Analytic grid: a cell is safe iff find_i_star succeeds. c is n minus the
/// rounded Byzantine count; f uses the grid value of rho_b directly.
inline SafetyGrid safety_region(const ProtocolParams& p, double step = 0.05,
                                ScanLimit limit = ScanLimit::Population) {
  SafetyGrid g;
  g.axis = grid_axis(step);
  PRedTable table(p.n, p.m, p.eta);
  for (auto rn : g.axis)
    for (auto rb : g.axis) {
      SafetyCell cell{rn, rb, false, std::nullopt};
      const auto b = std::min<std::uint32_t>(
          p.n, static_cast<std::uint32_t>(std::lround(rn * static_cast<double>(p.n))));
      try {
        cell.i_star = find_i_star(p, p.n - b, rb, table, limit);
        cell.safe = true;
      } catch (const NoSafePoint&) {
      }
      g.cells.push_back(cell);
    }
  return g;
}

// ---------------------------------------------------------------------------
// LNCR probability

struct LncrProbability {
  double r = 0;            // (m-k) n / ((m-1) m)
  double as_written = 0;   // 1 - (1 - (m-k)/(m-1))^(n/m)
  double complement = 0;   // 1 - ((m-k)/(m-1))^(n/m)
  double exp_approx = 0;   // 1 - e^-r
};

inline LncrProbability lncr_probability(std::uint32_t n, std::uint32_t m, std::uint32_t k) {
  if (m < 2) throw std::invalid_argument("lncr_probability needs m >= 2");
  const double nd = n, md = m, kd = k;
  const double frac = (md - kd) / (md - 1);
  LncrProbability out;
  out.r = (md - kd) * nd / ((md - 1) * md);
  out.as_written = 1.0 - std::pow(1.0 - frac, nd / md);
  out.complement = 1.0 - std::pow(frac, nd / md);
  out.exp_approx = 1.0 - std::exp(-out.r);
  return out;
}

struct McEstimate {
  double mean = 0;
  double stderr_ = 0;
  std::uint64_t trials = 0;
};

/// Monte Carlo P(two distinct random brokers share a node) under uniform
/// k-subset matching; one fresh matching per trial.
inline McEstimate lncr_share_probability_mc(std::uint32_t n, std::uint32_t m, std::uint32_t k,
                                            std::uint64_t trials, Rng& rng) {
  if (m < 2) throw std::invalid_argument("need m >= 2");
  std::uint64_t hits = 0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    const auto pair = rng.sample_without_replacement(m, 2);
    bool shared = false;
    for (std::uint32_t u = 0; u < n && !shared; ++u) {
      const auto picks = rng.sample_without_replacement(m, k);
      const bool a = std::find(picks.begin(), picks.end(), pair[0]) != picks.end();
      const bool b = std::find(picks.begin(), picks.end(), pair[1]) != picks.end();
      shared = a && b;
    }
    if (shared) ++hits;
  }
  McEstimate e;
  e.trials = trials;
  e.mean = static_cast<double>(hits) / static_cast<double>(trials);
  e.stderr_ = std::sqrt(e.mean * (1 - e.mean) / static_cast<double>(trials));
  return e;
}

// ---------------------------------------------------------------------------
// Throughput, latency, messages, Byzantine cap, energy

/// Eight pipeline stages. Stages 2, 3, 5, 7 are communication and run at
/// BW / (8 * tx_size); stages 1, 4, 6, 8 are computation with measured
/// times, where 0 means negligible.
struct PipelineTimes {
  std::array<double, 8> compute{};  // seconds; only indices 0, 3, 5, 7 are used
  double bw_bps = 100e6;
  double tx_size_bytes = 300;

  static constexpr std::array<int, 4> kCommunication{1, 2, 4, 6};
  static constexpr std::array<int, 4> kComputation{0, 3, 5, 7};

  static PipelineTimes with_t4(double bw_bps, double t4_s) {
    PipelineTimes pt;
    pt.bw_bps = bw_bps;
    pt.compute[3] = t4_s;
    return pt;
  }

  [[nodiscard]] double communication_time() const { return 8.0 * tx_size_bytes / bw_bps; }

  /// t_i for stage i (0-based).
  [[nodiscard]] double time(int stage) const {
    if (std::find(kCommunication.begin(), kCommunication.end(), stage) != kCommunication.end())
      return communication_time();
    return compute[static_cast<std::size_t>(stage)];
  }
};

/// min over stages of 1 / t_i.
inline double throughput(const PipelineTimes& pt) {
  if (pt.bw_bps <= 0 || pt.tx_size_bytes <= 0)
    throw std::invalid_argument("bandwidth and transaction size must be positive");
  double best = std::numeric_limits<double>::infinity();
  for (int s = 0; s < 8; ++s) {
    const auto t = pt.time(s);
    if (t < 0) throw std::invalid_argument("negative stage time");
    if (t > 0) best = std::min(best, 1.0 / t);
  }
  return best;
}

/// Whole transactions per second, truncated.
inline std::uint64_t throughput_tps(const PipelineTimes& pt) {
  // A hair of slack so that e.g. 1/1e-4 = 9999.999999999998 truncates to 10000.
  return static_cast<std::uint64_t>(std::floor(throughput(pt) * (1 + 1e-12)));
}

struct LatencyTerms {
  double hop_mean_s = 0.1;
  double t_validation_s = 0;
  std::uint32_t L = 11;     // successors to finality; min(beta1, beta2) on a chain
  double zeta = 100;        // tx/s

  static LatencyTerms chain(const ProtocolParams& p, double hop_mean_s, double t_validation_s,
                            double zeta) {
    return {hop_mean_s, t_validation_s, std::min(p.beta1, p.beta2), zeta};
  }
};

struct LatencyBound {
  double propagation = 0;
  double validation = 0;
  double confidence = 0;
  [[nodiscard]] double total() const { return propagation + validation + confidence; }
};

inline LatencyBound latency_bound(const LatencyTerms& lt) {
  if (lt.zeta <= 0) throw std::invalid_argument("arrival rate must be positive");
  return {4.0 * lt.hop_mean_s, lt.t_validation_s, static_cast<double>(lt.L) / lt.zeta};
}

/// Sum of all eight stage times.
inline double pipeline_validation_time(const PipelineTimes& pt) {
  double s = 0;
  for (int i = 0; i < 8; ++i) s += pt.time(i);
  return s;
}

inline std::uint64_t message_complexity(std::uint64_t n, std::uint64_t m, std::uint64_t k) {
  return m + 2 * k * n;
}

/// Baseline sample size q = round(nk/m).
inline std::uint32_t baseline_sample_size(std::uint32_t n, std::uint32_t m, std::uint32_t k) {
  return static_cast<std::uint32_t>(std::lround(static_cast<double>(n) * k / m));
}

/// Baseline: every node sends q queries and gets q answers.
inline std::uint64_t baseline_message_complexity(std::uint32_t n, std::uint32_t m, std::uint32_t k) {
  return 2ull * baseline_sample_size(n, m, k) * n;
}

struct BrokerCap {
  double expected = 0;  // rho_b * ell
  double bound = 1;     // exp(-2 theta^2 / ell^2)
};

inline BrokerCap byzantine_broker_cap(double rho_b, std::uint32_t ell, double theta) {
  if (ell < 1) throw std::invalid_argument("ell must be >= 1");
  if (theta < 0) throw std::invalid_argument("theta must be >= 0");
  const double l = ell;
  return {rho_b * l, std::exp(-2.0 * theta * theta / (l * l))};
}

inline double energy_per_tx(double cpu_power_w, double t4_s) {
  if (cpu_power_w < 0 || t4_s < 0) throw std::invalid_argument("inputs must be non-negative");
  return cpu_power_w * t4_s;
}

}  // namespace blizzard
