#pragma once

// Distributed random matching. Every node hashes (beacon randomness, node id)
// into a B-bit digest; the positions of its one-bits name the brokers it must
// connect to. Brokers recompute the digest to verify the claim.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "blizzard/core.hpp"

namespace blizzard {

using Sha256Digest = std::array<std::uint8_t, 32>;

inline Sha256Digest sha256(std::span<const std::uint8_t> data) {
  Sha256Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size())
    throw std::runtime_error("SHA-256 evaluation failed");
  return out;
}

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) buf.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void put_be64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) buf.push_back(static_cast<std::uint8_t>(v >> s));
}

// SHA-256 in counter mode over a domain-separated prefix.
class HashStream {
 public:
  HashStream(std::string_view domain, std::span<const std::uint8_t> key, std::uint32_t node) {
    prefix_.assign(domain.begin(), domain.end());
    prefix_.push_back(0);
    put_be32(prefix_, static_cast<std::uint32_t>(key.size()));
    prefix_.insert(prefix_.end(), key.begin(), key.end());
    put_be32(prefix_, node);
  }

  std::uint8_t next_byte() {
    if (pos_ == block_.size()) refill();
    return block_[pos_++];
  }

  std::uint32_t next_u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | next_byte();
    return v;
  }

  /// Unbiased value in [0, bound) by rejection.
  std::uint32_t below(std::uint32_t bound) {
    if (bound <= 1) return 0;
    const std::uint32_t limit = UINT32_MAX - (UINT32_MAX % bound);
    for (;;) {
      const auto v = next_u32();
      if (v < limit) return v % bound;
    }
  }

 private:
  void refill() {
    auto buf = prefix_;
    put_be32(buf, counter_++);
    block_ = sha256(buf);
    pos_ = 0;
  }

  std::vector<std::uint8_t> prefix_;
  Sha256Digest block_{};
  std::size_t pos_ = 32;
  std::uint32_t counter_ = 0;
};

}  // namespace detail

/// Fixed-length bit string; bit 0 is the most significant bit of byte 0.
class BitString {
 public:
  BitString() = default;
  explicit BitString(std::size_t bits) : bits_(bits), bytes_((bits + 7) / 8, 0) {}

  static BitString from_string(std::string_view s) {
    BitString b(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '1')
        b.set(i, true);
      else if (s[i] != '0')
        throw std::invalid_argument("bit string may only contain 0 and 1");
    }
    return b;
  }

  static BitString from_hex(std::string_view hex, std::size_t bits) {
    if (hex.size() != 2 * ((bits + 7) / 8))
      throw std::invalid_argument("hex length does not match bit count");
    BitString b(bits);
    auto nib = [](char c) -> std::uint8_t {
      if (c >= '0' && c <= '9') return static_cast<std::uint8_t>(c - '0');
      if (c >= 'a' && c <= 'f') return static_cast<std::uint8_t>(c - 'a' + 10);
      if (c >= 'A' && c <= 'F') return static_cast<std::uint8_t>(c - 'A' + 10);
      throw std::invalid_argument("invalid hex digit");
    };
    for (std::size_t i = 0; i < b.bytes_.size(); ++i)
      b.bytes_[i] = static_cast<std::uint8_t>((nib(hex[2 * i]) << 4) | nib(hex[2 * i + 1]));
    b.clear_tail();
    return b;
  }

  [[nodiscard]] std::size_t size() const { return bits_; }

  [[nodiscard]] bool test(std::size_t p) const {
    return (bytes_[p / 8] >> (7 - p % 8)) & 1u;
  }

  void set(std::size_t p, bool v) {
    const auto mask = static_cast<std::uint8_t>(1u << (7 - p % 8));
    if (v)
      bytes_[p / 8] |= mask;
    else
      bytes_[p / 8] &= static_cast<std::uint8_t>(~mask);
  }

  void flip(std::size_t p) { set(p, !test(p)); }

  [[nodiscard]] std::size_t popcount() const {
    std::size_t c = 0;
    for (auto byte : bytes_) c += static_cast<std::size_t>(__builtin_popcount(byte));
    return c;
  }

  [[nodiscard]] std::string hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(bytes_.size() * 2);
    for (auto byte : bytes_) {
      s.push_back(digits[byte >> 4]);
      s.push_back(digits[byte & 0xF]);
    }
    return s;
  }

  [[nodiscard]] std::string to_string() const {
    std::string s(bits_, '0');
    for (std::size_t i = 0; i < bits_; ++i)
      if (test(i)) s[i] = '1';
    return s;
  }

  [[nodiscard]] std::span<std::uint8_t> bytes() { return bytes_; }

  bool operator==(const BitString&) const = default;

 private:
  void clear_tail() {
    if (bits_ % 8 != 0 && !bytes_.empty())
      bytes_.back() &= static_cast<std::uint8_t>(0xFF << (8 - bits_ % 8));
  }

  std::size_t bits_ = 0;
  std::vector<std::uint8_t> bytes_;
};

struct BeaconRound {
  std::uint64_t round = 0;
  std::vector<std::uint8_t> randomness;

  bool operator==(const BeaconRound&) const = default;
};

/// Stand-in for an external beacon: randomness = SHA-256(seed || round).
inline BeaconRound seeded_beacon(std::uint64_t seed, std::uint64_t round) {
  std::vector<std::uint8_t> buf{'b', 'e', 'a', 'c', 'o', 'n', 0};
  detail::put_be64(buf, seed);
  detail::put_be64(buf, round);
  const auto h = sha256(buf);
  return {round, {h.begin(), h.end()}};
}

/// `bits`-long digest of (randomness || node), extended by counter-mode
/// rehashing and truncated to length.
inline BitString derive_digest(const BeaconRound& beacon, NodeId node, std::size_t bits) {
  if (bits < 1) throw std::invalid_argument("digest length must be at least 1 bit");
  detail::HashStream stream("blizzard/digest", beacon.randomness, node.value);
  BitString out(bits);
  auto bytes = out.bytes();
  for (auto& b : bytes) b = stream.next_byte();
  if (bits % 8 != 0) bytes.back() &= static_cast<std::uint8_t>(0xFF << (8 - bits % 8));
  return out;
}

/// Uniformly random relabeling of broker indices, keyed like the digest but
/// in its own hash domain. Composing position->index with this permutation
/// makes each broker equally likely to be chosen; reading one-bit positions
/// straight off as indices favours low indices, since the first one-bit is
/// at position 0 half the time.
inline std::vector<std::uint32_t> derive_relabel(const BeaconRound& beacon, NodeId node,
                                                 std::uint32_t m) {
  detail::HashStream stream("blizzard/relabel", beacon.randomness, node.value);
  std::vector<std::uint32_t> perm(m);
  for (std::uint32_t i = 0; i < m; ++i) perm[i] = i;
  for (std::uint32_t i = m; i > 1; --i) std::swap(perm[i - 1], perm[stream.below(i)]);
  return perm;
}

enum class MatchingErrc { InsufficientOnes, KExceedsM };

class MatchingError : public std::runtime_error {
 public:
  explicit MatchingError(MatchingErrc code)
      : std::runtime_error(code == MatchingErrc::InsufficientOnes
                               ? "InsufficientOnes: digest yields fewer than k distinct brokers"
                               : "KExceedsM: cannot select k distinct brokers out of m"),
        code_(code) {}
  [[nodiscard]] MatchingErrc code() const { return code_; }

 private:
  MatchingErrc code_;
};

/// Scans one-bits in position order; a one at position p names broker
/// relabel[p mod m] (identity when `relabel` is empty). Duplicates are
/// skipped. Returns nullopt if the digest runs out before k brokers.
inline std::optional<std::vector<BrokerId>> try_extract_brokers(
    const BitString& digest, std::uint32_t k, std::uint32_t m,
    std::span<const std::uint32_t> relabel = {}) {
  if (k > m) throw MatchingError(MatchingErrc::KExceedsM);
  if (!relabel.empty() && relabel.size() != m)
    throw std::invalid_argument("relabel permutation must have m entries");
  std::vector<BrokerId> out;
  out.reserve(k);
  std::vector<bool> taken(m, false);
  for (std::size_t p = 0; p < digest.size() && out.size() < k; ++p) {
    if (!digest.test(p)) continue;
    auto idx = static_cast<std::uint32_t>(p % m);
    if (!relabel.empty()) idx = relabel[idx];
    if (taken[idx]) continue;
    taken[idx] = true;
    out.emplace_back(idx);
  }
  if (out.size() < k) return std::nullopt;
  return out;
}

inline std::vector<BrokerId> extract_brokers(const BitString& digest, std::uint32_t k,
                                             std::uint32_t m,
                                             std::span<const std::uint32_t> relabel = {}) {
  auto r = try_extract_brokers(digest, k, m, relabel);
  if (!r) throw MatchingError(MatchingErrc::InsufficientOnes);
  return *std::move(r);
}

/// Smallest B > 2(k-1) with (1/2) ln(1/delta) <= (1/2 - (k-1)/B)^2 B.
/// The right-hand side is increasing in B on that domain, so an integer
/// bisection applies.
inline std::uint64_t required_bits(std::uint32_t k, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  const double target = 0.5 * std::log(1.0 / delta);
  const double km1 = static_cast<double>(k - 1);
  auto holds = [&](std::uint64_t b) {
    const double bd = static_cast<double>(b);
    const double eps = 0.5 - km1 / bd;
    return eps * eps * bd >= target * (1.0 - 1e-12);
  };
  std::uint64_t lo = 2ull * (k - 1) + 1;  // smallest admissible B
  if (holds(lo)) return lo;
  std::uint64_t hi = lo;
  while (!holds(hi)) hi *= 2;
  // invariant: !holds(lo), holds(hi)
  while (hi - lo > 1) {
    const auto mid = lo + (hi - lo) / 2;
    (holds(mid) ? hi : lo) = mid;
  }
  return hi;
}

struct MatchingProof {
  NodeId node;
  std::uint64_t round = 0;
  BitString digest;
  std::vector<BrokerId> brokers;

  bool operator==(const MatchingProof&) const = default;
};

inline MatchingProof make_matching_proof(const BeaconRound& beacon, NodeId node, std::uint32_t k,
                                         std::uint32_t m, std::size_t bits) {
  MatchingProof proof;
  proof.node = node;
  proof.round = beacon.round;
  proof.digest = derive_digest(beacon, node, bits);
  const auto relabel = derive_relabel(beacon, node, m);
  proof.brokers = extract_brokers(proof.digest, k, m, relabel);
  return proof;
}

enum class VerifyReason { Accepted, DigestMismatch, BrokerListMismatch };

inline const char* to_string(VerifyReason r) {
  switch (r) {
    case VerifyReason::Accepted: return "accept";
    case VerifyReason::DigestMismatch: return "DigestMismatch";
    case VerifyReason::BrokerListMismatch: return "BrokerListMismatch";
  }
  return "unknown";
}

/// Broker-side check: recompute the digest and the broker list.
inline VerifyReason verify_matching(const MatchingProof& proof, const BeaconRound& beacon,
                                    std::uint32_t k, std::uint32_t m) {
  // A proof for another beacon round was hashed from other randomness.
  if (proof.digest.size() == 0 || proof.round != beacon.round) return VerifyReason::DigestMismatch;
  const auto expected = derive_digest(beacon, proof.node, proof.digest.size());
  if (!(expected == proof.digest)) return VerifyReason::DigestMismatch;
  const auto relabel = derive_relabel(beacon, proof.node, m);
  const auto brokers = try_extract_brokers(expected, k, m, relabel);
  if (!brokers || *brokers != proof.brokers) return VerifyReason::BrokerListMismatch;
  return VerifyReason::Accepted;
}

// {"node", "round", "bits", "digest" (hex), "brokers"}
inline nlohmann::json to_json(const MatchingProof& p) {
  nlohmann::json brokers = nlohmann::json::array();
  for (auto b : p.brokers) brokers.push_back(b.value);
  return {{"node", p.node.value},
          {"round", p.round},
          {"bits", p.digest.size()},
          {"digest", p.digest.hex()},
          {"brokers", brokers}};
}

inline MatchingProof matching_proof_from_json(const nlohmann::json& j) {
  MatchingProof p;
  p.node = NodeId{j.at("node").get<std::uint32_t>()};
  p.round = j.at("round").get<std::uint64_t>();
  p.digest = BitString::from_hex(j.at("digest").get<std::string>(), j.at("bits").get<std::size_t>());
  for (const auto& b : j.at("brokers")) p.brokers.emplace_back(b.get<std::uint32_t>());
  return p;
}

}  // namespace blizzard
