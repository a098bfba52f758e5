#pragma once

// Per-node transaction DAG: conflict sets with pref/last/counter, vouchers,
// confidence, strong preference and finalization.

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "blizzard/core.hpp"
#include "blizzard/random.hpp"

namespace blizzard {

struct Transaction {
  TxId id;
  std::vector<TxId> parents;
  NodeId issuer;
  ConflictKey conflict_key;  // equal keys, distinct ids => conflicting
};

struct ConflictSet {
  std::vector<TxId> members;  // insertion order
  TxId pref;
  TxId last;
  std::uint32_t counter = 0;
};

enum class DagErrc { UnknownParent, DuplicateTx, UnknownTx, EmptyDag };

inline const char* to_string(DagErrc e) {
  switch (e) {
    case DagErrc::UnknownParent: return "UnknownParent";
    case DagErrc::DuplicateTx: return "DuplicateTx";
    case DagErrc::UnknownTx: return "UnknownTx";
    case DagErrc::EmptyDag: return "EmptyDag";
  }
  return "Unknown";
}

class DagError : public std::runtime_error {
 public:
  DagError(DagErrc code, TxId tx)
      : std::runtime_error(std::string(to_string(code)) + " (tx " + std::to_string(tx.value) + ")"),
        code_(code),
        tx_(tx) {}

  [[nodiscard]] DagErrc code() const { return code_; }
  [[nodiscard]] TxId tx() const { return tx_; }

 private:
  DagErrc code_;
  TxId tx_;
};

struct FinalityParams {
  std::uint32_t beta1 = 11;  // consecutive-counter threshold (singleton sets)
  std::uint32_t beta2 = 150; // confidence threshold
};

enum class ParentPolicy { Chain, RandomFrontier };

class NodeDag {
 public:
  explicit NodeDag(FinalityParams finality = {}) : finality_(finality) {}

  [[nodiscard]] const FinalityParams& finality() const { return finality_; }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] bool empty() const { return entries_.empty(); }
  [[nodiscard]] bool contains(TxId id) const { return index_.count(id) != 0; }

  [[nodiscard]] const Transaction& transaction(TxId id) const { return entries_[at(id)].tx; }

  /// Parents of `tx` this DAG does not know yet.
  [[nodiscard]] std::vector<TxId> missing_parents(const Transaction& tx) const {
    std::vector<TxId> out;
    for (auto p : tx.parents)
      if (!contains(p)) out.push_back(p);
    return out;
  }

  /// Appends `tx` with voucher 0. A fresh conflict set starts with
  /// pref = last = tx and counter 0; joining an existing set leaves pref alone.
  void add_transaction(const Transaction& tx) {
    if (contains(tx.id)) throw DagError(DagErrc::DuplicateTx, tx.id);
    for (auto p : tx.parents)
      if (!contains(p)) throw DagError(DagErrc::UnknownParent, p);

    Entry e;
    e.tx = tx;
    e.parents.reserve(tx.parents.size());
    std::uint32_t depth = 0;
    for (auto p : tx.parents) {
      const auto pi = index_.at(p);
      if (std::find(e.parents.begin(), e.parents.end(), pi) != e.parents.end()) continue;
      e.parents.push_back(pi);
      depth = std::max(depth, entries_[pi].depth + 1);
    }
    e.depth = depth;

    auto [it, fresh] = set_index_.try_emplace(tx.conflict_key, sets_.size());
    if (fresh) {
      ConflictSet cs;
      cs.members.push_back(tx.id);
      cs.pref = tx.id;
      cs.last = tx.id;
      sets_.push_back(std::move(cs));
    } else {
      sets_[it->second].members.push_back(tx.id);
    }
    e.set = it->second;

    const auto self = entries_.size();
    for (auto pi : e.parents) entries_[pi].children.push_back(self);
    index_.emplace(tx.id, self);
    entries_.push_back(std::move(e));
    mark_.push_back(0);
  }

  /// True iff `id` and every ancestor is the pref of its conflict set.
  [[nodiscard]] bool is_strongly_preferred(TxId id) const {
    bool ok = true;
    walk_ancestors(at(id), [&](std::size_t i) {
      const auto& e = entries_[i];
      if (sets_[e.set].pref != e.tx.id) {
        ok = false;
        return false;
      }
      return true;
    });
    return ok;
  }

  /// Sum of vouchers over `id` and all its descendants.
  [[nodiscard]] std::uint64_t confidence(TxId id) const { return entries_[at(id)].confidence; }

  [[nodiscard]] bool voucher(TxId id) const { return entries_[at(id)].voucher; }

  // Queried set: a transaction is tallied at most once.
  [[nodiscard]] bool is_queried(TxId id) const { return entries_[at(id)].queried; }
  void mark_queried(TxId id) { entries_[at(id)].queried = true; }

  [[nodiscard]] const ConflictSet& conflict_set_of(TxId id) const {
    return sets_[entries_[at(id)].set];
  }

  [[nodiscard]] const std::vector<ConflictSet>& conflict_sets() const { return sets_; }

  /// Sets v(id) = 1, then for every conflict set met on the ancestor closure
  /// of `id` (itself included) re-elects pref by confidence, keeping the
  /// incumbent on ties, and advances the last/counter pair.
  void record_voucher(TxId id) {
    const auto idx = at(id);
    closure_.clear();
    walk_ancestors(idx, [&](std::size_t i) {
      closure_.push_back(i);
      return true;
    });
    std::sort(closure_.begin(), closure_.end());

    if (!entries_[idx].voucher) {
      entries_[idx].voucher = true;
      for (auto i : closure_) ++entries_[i].confidence;
    }

    for (auto i : closure_) {
      auto& cs = sets_[entries_[i].set];
      const auto member = entries_[i].tx.id;
      auto best = cs.pref;
      auto best_conf = confidence(best);
      for (auto other : cs.members) {
        const auto c = confidence(other);
        if (c > best_conf) {
          best = other;
          best_conf = c;
        }
      }
      cs.pref = best;
      if (member == cs.last) {
        ++cs.counter;
      } else {
        cs.last = member;
        cs.counter = 1;
      }
    }
  }

  /// Strongly preferred and either (sole member of its set with
  /// counter >= beta1) or confidence >= beta2.
  [[nodiscard]] bool is_finalized(TxId id) const {
    const auto& e = entries_[at(id)];
    const auto& cs = sets_[e.set];
    const bool counter_rule = cs.members.size() == 1 && cs.counter >= finality_.beta1;
    const bool confidence_rule = e.confidence >= finality_.beta2;
    if (!counter_rule && !confidence_rule) return false;
    return is_strongly_preferred(id);
  }

  /// Parent choice for a new transaction.
  ///   Chain: the most recently added strongly preferred transaction.
  ///   RandomFrontier: up to `fanout` distinct strongly preferred childless
  ///   transactions, sampled uniformly.
  /// When nothing qualifies the deepest finalized transaction is returned,
  /// and failing that the oldest root.
  [[nodiscard]] std::vector<TxId> select_parents(ParentPolicy policy, std::size_t fanout,
                                                 Rng& rng) const {
    if (entries_.empty()) throw DagError(DagErrc::EmptyDag, TxId{});

    if (policy == ParentPolicy::Chain) {
      for (auto i = entries_.size(); i-- > 0;)
        if (is_strongly_preferred(entries_[i].tx.id)) return {entries_[i].tx.id};
    } else {
      std::vector<TxId> frontier;
      for (const auto& e : entries_)
        if (e.children.empty() && is_strongly_preferred(e.tx.id)) frontier.push_back(e.tx.id);
      if (!frontier.empty()) {
        const auto take = static_cast<std::uint32_t>(std::min(fanout, frontier.size()));
        auto picks = rng.sample_without_replacement(static_cast<std::uint32_t>(frontier.size()), take);
        std::vector<TxId> out;
        out.reserve(picks.size());
        for (auto p : picks) out.push_back(frontier[p]);
        return out;
      }
    }
    return {fallback_parent()};
  }

  /// Closure of `id` (itself included), ascending by insertion order.
  [[nodiscard]] std::vector<TxId> ancestors(TxId id) const {
    std::vector<std::size_t> idx;
    walk_ancestors(at(id), [&](std::size_t i) {
      idx.push_back(i);
      return true;
    });
    std::sort(idx.begin(), idx.end());
    std::vector<TxId> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(entries_[i].tx.id);
    return out;
  }

  /// Transactions in insertion order.
  [[nodiscard]] std::vector<TxId> ids() const {
    std::vector<TxId> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.tx.id);
    return out;
  }

  [[nodiscard]] std::uint32_t depth(TxId id) const { return entries_[at(id)].depth; }

  /// One JSON object per line:
  /// {"id","parents","conflict_key","voucher","pref","confidence"}
  void dump(std::ostream& os) const {
    for (const auto& e : entries_) {
      nlohmann::json parents = nlohmann::json::array();
      for (auto p : e.tx.parents) parents.push_back(p.value);
      nlohmann::json rec = {
          {"id", e.tx.id.value},
          {"parents", parents},
          {"conflict_key", e.tx.conflict_key.value},
          {"voucher", e.voucher ? 1 : 0},
          {"pref", sets_[e.set].pref == e.tx.id},
          {"confidence", e.confidence},
      };
      os << rec.dump() << '\n';
    }
  }

 private:
  struct Entry {
    Transaction tx;
    std::vector<std::size_t> parents;
    std::vector<std::size_t> children;
    std::size_t set = 0;
    std::uint64_t confidence = 0;
    std::uint32_t depth = 0;
    bool voucher = false;
    bool queried = false;
  };

  std::size_t at(TxId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw DagError(DagErrc::UnknownTx, id);
    return it->second;
  }

  // Depth-first over `start` and its ancestors; `visit` returns false to stop.
  template <typename Visit>
  void walk_ancestors(std::size_t start, Visit&& visit) const {
    if (++epoch_ == 0) {
      std::fill(mark_.begin(), mark_.end(), 0);
      epoch_ = 1;
    }
    stack_.clear();
    stack_.push_back(start);
    mark_[start] = epoch_;
    while (!stack_.empty()) {
      const auto i = stack_.back();
      stack_.pop_back();
      if (!visit(i)) return;
      for (auto p : entries_[i].parents) {
        if (mark_[p] != epoch_) {
          mark_[p] = epoch_;
          stack_.push_back(p);
        }
      }
    }
  }

  TxId fallback_parent() const {
    const Entry* best = nullptr;
    for (const auto& e : entries_) {
      if (!is_finalized(e.tx.id)) continue;
      if (best == nullptr || e.depth >= best->depth) best = &e;
    }
    if (best != nullptr) return best->tx.id;
    for (const auto& e : entries_)
      if (e.parents.empty()) return e.tx.id;
    return entries_.front().tx.id;
  }

  FinalityParams finality_;
  std::vector<Entry> entries_;
  std::unordered_map<TxId, std::size_t, StrongIdHash> index_;
  std::vector<ConflictSet> sets_;
  std::unordered_map<ConflictKey, std::size_t, StrongIdHash> set_index_;

  // Scratch for traversals; a NodeDag belongs to one state machine.
  mutable std::vector<std::uint32_t> mark_;
  mutable std::uint32_t epoch_ = 0;
  mutable std::vector<std::size_t> stack_;
  std::vector<std::size_t> closure_;
};

}  // namespace blizzard
