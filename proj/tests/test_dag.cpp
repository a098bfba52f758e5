#include <gtest/gtest.h>

#include <sstream>

#include "blizzard/dag.hpp"
#include "oracles.hpp"

using namespace blizzard;

namespace {

Transaction tx(std::uint64_t id, std::vector<std::uint64_t> parents, std::uint64_t key) {
  std::vector<TxId> ps;
  for (auto p : parents) ps.emplace_back(p);
  return {TxId{id}, ps, NodeId{0}, ConflictKey{key}};
}

// g <- a, g <- a' (conflicting with a), a <- c, a' <- d
NodeDag double_spend_fixture() {
  NodeDag d({3, 5});
  d.add_transaction(tx(0, {}, 0));
  d.add_transaction(tx(1, {0}, 1));
  d.add_transaction(tx(2, {0}, 1));
  d.add_transaction(tx(3, {1}, 3));
  d.add_transaction(tx(4, {2}, 4));
  return d;
}

}  // namespace

TEST(Dag, GenesisIntoEmpty) {
  NodeDag d;
  d.add_transaction(tx(0, {}, 0));
  EXPECT_EQ(d.size(), 1u);
  ASSERT_EQ(d.conflict_sets().size(), 1u);
  EXPECT_EQ(d.conflict_sets()[0].members.size(), 1u);
  EXPECT_TRUE(d.is_strongly_preferred(TxId{0}));
}

TEST(Dag, SecondMemberKeepsPref) {
  NodeDag d;
  d.add_transaction(tx(0, {}, 0));
  d.add_transaction(tx(1, {0}, 7));
  d.add_transaction(tx(2, {0}, 7));
  const auto& cs = d.conflict_set_of(TxId{2});
  EXPECT_EQ(cs.members.size(), 2u);
  EXPECT_EQ(cs.pref, TxId{1});
}

TEST(Dag, Errors) {
  NodeDag d;
  Rng rng(1);
  try {
    (void)d.select_parents(ParentPolicy::Chain, 1, rng);
    FAIL();
  } catch (const DagError& e) {
    EXPECT_EQ(e.code(), DagErrc::EmptyDag);
  }
  d.add_transaction(tx(0, {}, 0));
  try {
    d.add_transaction(tx(1, {9}, 1));
    FAIL();
  } catch (const DagError& e) {
    EXPECT_EQ(e.code(), DagErrc::UnknownParent);
    EXPECT_EQ(e.tx(), TxId{9});
  }
  try {
    d.add_transaction(tx(0, {}, 0));
    FAIL();
  } catch (const DagError& e) {
    EXPECT_EQ(e.code(), DagErrc::DuplicateTx);
  }
  EXPECT_THROW((void)d.confidence(TxId{42}), DagError);
}

TEST(Dag, ChainHeadStronglyPreferred) {
  NodeDag d;
  d.add_transaction(tx(0, {}, 0));
  d.add_transaction(tx(1, {0}, 1));
  d.add_transaction(tx(2, {1}, 2));
  EXPECT_TRUE(d.is_strongly_preferred(TxId{2}));
}

TEST(Dag, LosingParentBreaksStrongPreference) {
  auto d = double_spend_fixture();
  oracle::BruteDag o(3, 5);
  for (auto id : d.ids()) o.add(d.transaction(id));
  // Two vouchers under a' against one under a.
  for (auto id : {4, 2, 3}) {
    d.record_voucher(TxId{static_cast<std::uint64_t>(id)});
    o.voucher(id);
  }
  EXPECT_EQ(d.conflict_set_of(TxId{1}).pref, TxId{2});
  EXPECT_FALSE(d.is_strongly_preferred(TxId{3}));
  EXPECT_TRUE(d.is_strongly_preferred(TxId{4}));
  for (std::uint64_t id = 0; id < 5; ++id)
    EXPECT_EQ(d.is_strongly_preferred(TxId{id}), o.strongly_preferred(id)) << id;
}

TEST(Dag, ConfidenceExamples) {
  NodeDag d;
  d.add_transaction(tx(0, {}, 0));
  d.add_transaction(tx(1, {0}, 1));
  d.add_transaction(tx(2, {1}, 2));
  EXPECT_EQ(d.confidence(TxId{2}), 0u);
  d.record_voucher(TxId{2});
  EXPECT_EQ(d.confidence(TxId{2}), 1u);
  d.record_voucher(TxId{1});
  d.record_voucher(TxId{0});
  EXPECT_EQ(d.confidence(TxId{0}), 3u);
  // Vouching twice does not double count.
  d.record_voucher(TxId{2});
  EXPECT_EQ(d.confidence(TxId{0}), 3u);
}

TEST(Dag, CounterRules) {
  NodeDag d;
  d.add_transaction(tx(0, {}, 0));
  d.record_voucher(TxId{0});
  EXPECT_EQ(d.conflict_set_of(TxId{0}).counter, 1u);
  EXPECT_EQ(d.conflict_set_of(TxId{0}).pref, TxId{0});
  for (std::uint32_t i = 2; i <= 5; ++i) {
    d.record_voucher(TxId{0});
    EXPECT_EQ(d.conflict_set_of(TxId{0}).counter, i);
  }
}

TEST(Dag, ChallengerOvertakes) {
  NodeDag d;
  d.add_transaction(tx(0, {}, 0));
  d.add_transaction(tx(1, {0}, 5));
  d.add_transaction(tx(2, {0}, 5));
  d.add_transaction(tx(3, {1}, 3));
  d.add_transaction(tx(4, {2}, 4));
  d.add_transaction(tx(5, {2}, 6));
  d.record_voucher(TxId{3});
  EXPECT_EQ(d.conflict_set_of(TxId{1}).pref, TxId{1});
  d.record_voucher(TxId{4});
  EXPECT_EQ(d.conflict_set_of(TxId{1}).pref, TxId{1});  // tie keeps incumbent
  d.record_voucher(TxId{5});
  EXPECT_EQ(d.confidence(TxId{2}), 2u);
  EXPECT_EQ(d.confidence(TxId{1}), 1u);
  EXPECT_EQ(d.conflict_set_of(TxId{1}).pref, TxId{2});
}

TEST(Dag, FinalityThresholds) {
  NodeDag d({3, 4});
  d.add_transaction(tx(0, {}, 0));
  for (int i = 0; i < 2; ++i) d.record_voucher(TxId{0});
  EXPECT_FALSE(d.is_finalized(TxId{0}));
  d.record_voucher(TxId{0});
  EXPECT_TRUE(d.is_finalized(TxId{0}));

  // Two-member set: only the confidence rule applies.
  NodeDag e({1, 3});
  e.add_transaction(tx(0, {}, 0));
  e.add_transaction(tx(1, {0}, 1));
  e.add_transaction(tx(2, {0}, 1));
  e.add_transaction(tx(3, {1}, 3));
  e.add_transaction(tx(4, {3}, 4));
  e.record_voucher(TxId{1});
  e.record_voucher(TxId{3});
  EXPECT_FALSE(e.is_finalized(TxId{1}));
  e.record_voucher(TxId{4});
  EXPECT_EQ(e.confidence(TxId{1}), 3u);
  EXPECT_TRUE(e.is_finalized(TxId{1}));
}

TEST(Dag, ChainFinalizesAfterMinBeta) {
  for (auto [b1, b2] : {std::pair{11u, 150u}, std::pair{20u, 6u}}) {
    NodeDag d({b1, b2});
    d.add_transaction(tx(0, {}, 0));
    d.record_voucher(TxId{0});
    std::uint64_t successors = 0;
    while (!d.is_finalized(TxId{0})) {
      ++successors;
      d.add_transaction(tx(successors, {successors - 1}, successors));
      d.record_voucher(TxId{successors});
    }
    // The genesis' own voucher counts as the first.
    EXPECT_EQ(successors + 1, std::min(b1, b2));
  }
}

TEST(Dag, SelectParents) {
  NodeDag d;
  Rng rng(3);
  d.add_transaction(tx(0, {}, 0));
  for (std::uint64_t i = 1; i <= 5; ++i) d.add_transaction(tx(i, {0}, i));
  d.add_transaction(tx(6, {5}, 6));
  EXPECT_EQ(d.select_parents(ParentPolicy::Chain, 1, rng), std::vector<TxId>{TxId{6}});
  // Tips: 1, 2, 3, 4, 6.
  auto picks = d.select_parents(ParentPolicy::RandomFrontier, 2, rng);
  ASSERT_EQ(picks.size(), 2u);
  EXPECT_NE(picks[0], picks[1]);
  for (auto p : picks) EXPECT_NE(p, TxId{5});
}

TEST(Dag, FrontierFallsBackToDeepestFinalized) {
  NodeDag d({1, 100});
  Rng rng(5);
  d.add_transaction(tx(0, {}, 0));
  d.add_transaction(tx(1, {0}, 1));
  d.record_voucher(TxId{1});
  // Two double spends stacked so that each tip loses one of them.
  d.add_transaction(tx(2, {1}, 9));
  d.add_transaction(tx(3, {1}, 9));
  d.add_transaction(tx(4, {2}, 4));
  d.add_transaction(tx(5, {3}, 4));
  d.record_voucher(TxId{4});
  d.record_voucher(TxId{3});
  d.record_voucher(TxId{5});
  ASSERT_EQ(d.conflict_set_of(TxId{2}).pref, TxId{3});
  ASSERT_EQ(d.conflict_set_of(TxId{4}).pref, TxId{4});  // tie keeps the incumbent
  EXPECT_FALSE(d.is_strongly_preferred(TxId{4}));
  EXPECT_FALSE(d.is_strongly_preferred(TxId{5}));
  EXPECT_TRUE(d.is_finalized(TxId{1}));
  EXPECT_EQ(d.select_parents(ParentPolicy::RandomFrontier, 2, rng), std::vector<TxId>{TxId{1}});
}

TEST(Dag, DumpIsOneLinePerTx) {
  auto d = double_spend_fixture();
  std::ostringstream os;
  d.dump(os);
  std::size_t lines = 0;
  for (char ch : os.str()) lines += ch == '\n';
  EXPECT_EQ(lines, d.size());
}

TEST(DagOracle, RandomDagsMatchBruteForce) {
  Rng rng(20240607);
  std::size_t checks = 0;
  for (int dag = 0; dag < 1000; ++dag) {
    const auto size = 2 + static_cast<std::uint32_t>(rng.below(29));
    const auto txs = oracle::random_dag(rng, size);
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
        ASSERT_EQ(d.confidence(TxId{x}), o.confidence(x)) << "dag " << dag << " tx " << x;
        ASSERT_EQ(d.is_strongly_preferred(TxId{x}), o.strongly_preferred(x)) << "dag " << dag;
        ASSERT_EQ(d.is_finalized(TxId{x}), o.finalized(x)) << "dag " << dag << " tx " << x;
        ++checks;
      }
    }
  }
  EXPECT_GT(checks, 100000u);
}
