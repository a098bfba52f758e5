#include <gtest/gtest.h>

#include "blizzard/adversary.hpp"
#include "blizzard/analysis.hpp"
#include "blizzard/consensus.hpp"
#include "oracles.hpp"

using namespace blizzard;

namespace {

Transaction tx(std::uint64_t id, std::vector<std::uint64_t> parents, std::uint64_t key) {
  std::vector<TxId> ps;
  for (auto p : parents) ps.emplace_back(p);
  return {TxId{id}, ps, NodeId{0}, ConflictKey{key}};
}

BrokerState broker_with(std::uint32_t count) {
  BrokerState b{BrokerId{0}, {}};
  for (std::uint32_t u = 0; u < count; ++u) b.nodes.emplace_back(u);
  return b;
}

std::map<NodeId, std::optional<Color>> colors(std::uint32_t red, std::uint32_t blue,
                                              std::uint32_t silent = 0) {
  std::map<NodeId, std::optional<Color>> out;
  std::uint32_t u = 0;
  for (std::uint32_t i = 0; i < red; ++i) out[NodeId{u++}] = Color::Red;
  for (std::uint32_t i = 0; i < blue; ++i) out[NodeId{u++}] = Color::Blue;
  for (std::uint32_t i = 0; i < silent; ++i) out[NodeId{u++}] = std::nullopt;
  return out;
}

}  // namespace

TEST(RespondTx, Examples) {
  NodeState node(NodeId{0}, {BrokerId{0}});
  node.dag.add_transaction(tx(0, {}, 0));
  EXPECT_EQ(node_respond_tx(node, tx(1, {0}, 1)), Vote::Yes);
  EXPECT_TRUE(node.dag.contains(TxId{1}));

  // Ancestor lost its conflict set.
  node.dag.add_transaction(tx(2, {0}, 1));
  node.dag.add_transaction(tx(3, {2}, 3));
  node.dag.record_voucher(TxId{3});
  node.dag.record_voucher(TxId{2});
  ASSERT_EQ(node.dag.conflict_set_of(TxId{1}).pref, TxId{2});
  EXPECT_EQ(node_respond_tx(node, tx(4, {1}, 4)), Vote::No);

  // Missing parent: no, and nothing stored.
  EXPECT_EQ(node_respond_tx(node, tx(9, {8}, 9)), Vote::No);
  EXPECT_FALSE(node.dag.contains(TxId{9}));
}

TEST(BrokerQueryTx, Threshold) {
  auto b = broker_with(10);
  std::map<NodeId, Vote> r;
  for (std::uint32_t u = 0; u < 10; ++u) r[NodeId{u}] = u < 8 ? Vote::Yes : Vote::No;
  EXPECT_EQ(broker_query_tx(b, r, 0.8).result, Vote::Yes);
  r[NodeId{7}] = Vote::No;
  const auto out = broker_query_tx(b, r, 0.8);
  EXPECT_EQ(out.result, Vote::No);
  EXPECT_EQ(out.affirmative_count, 7u);
  EXPECT_EQ(out.threshold, 8u);
  EXPECT_EQ(broker_query_tx(broker_with(0), {}, 0.8).result, Vote::No);
  // Missing answers count as no.
  std::map<NodeId, Vote> few{{NodeId{0}, Vote::Yes}};
  EXPECT_EQ(broker_query_tx(broker_with(2), few, 0.8).result, Vote::No);
}

TEST(NodeTallyTx, Examples) {
  NodeState node(NodeId{0}, {BrokerId{0}, BrokerId{1}, BrokerId{2}});
  node.dag.add_transaction(tx(0, {}, 0));
  node.dag.add_transaction(tx(1, {0}, 1));
  std::map<BrokerId, Vote> all{{BrokerId{0}, Vote::Yes}, {BrokerId{1}, Vote::Yes}, {BrokerId{2}, Vote::Yes}};
  EXPECT_EQ(node_tally_tx(node, TxId{1}, all, 0.8), Vote::Yes);
  EXPECT_TRUE(node.dag.voucher(TxId{1}));

  auto two = all;
  two[BrokerId{2}] = Vote::No;
  EXPECT_EQ(node_tally_tx(node, TxId{0}, two, 0.8), Vote::No);
  EXPECT_TRUE(node.dag.is_queried(TxId{0}));
  EXPECT_FALSE(node.dag.voucher(TxId{0}));
  // Second tally is a no-op.
  EXPECT_EQ(node_tally_tx(node, TxId{0}, all, 0.8), Vote::No);

  NodeState solo(NodeId{0}, {BrokerId{0}});
  solo.dag.add_transaction(tx(0, {}, 0));
  EXPECT_EQ(node_tally_tx(solo, TxId{0}, {{BrokerId{0}, Vote::Yes}}, 0.8), Vote::Yes);
}

TEST(ColorGame, RespondAndBroker) {
  NodeState n;
  n.color.color = Color::Red;
  EXPECT_EQ(color_node_respond(n), Color::Red);
  n.color.color = Color::Blue;
  EXPECT_EQ(color_node_respond(n), Color::Blue);
  n.color.locked = Color::Red;
  EXPECT_EQ(color_node_respond(n), Color::Red);

  auto b = broker_with(10);
  EXPECT_EQ(color_broker_round(b, colors(8, 2), 0.8), Color::Red);
  EXPECT_EQ(color_broker_round(b, colors(6, 4), 0.8), std::nullopt);
  // Silent nodes count toward the population.
  EXPECT_EQ(color_broker_round(b, colors(7, 0, 3), 0.8), std::nullopt);
  // A Byzantine broker's subset is evaluated on its own.
  EXPECT_EQ(color_subset_round(colors(0, 3), 0.8), Color::Blue);
}

TEST(ColorGame, TallyFlipAndLock) {
  ColorRule rule{3, 0.8, 11, 150};
  ColorState s;
  s.color = Color::Blue;
  s.conf = {3, 2};
  s.c3 = 2;
  EXPECT_TRUE(color_tally(s, 3, 0, rule));
  EXPECT_EQ(s.color, Color::Red);
  EXPECT_EQ(s.confidence(Color::Red), 4u);
  EXPECT_EQ(s.c3, 0u);

  const auto before = s;
  EXPECT_FALSE(color_tally(s, 2, 1, rule));
  EXPECT_EQ(s.conf, before.conf);
  EXPECT_EQ(s.c3, before.c3);

  for (int i = 0; i < 11; ++i) color_tally(s, 3, 0, rule);
  ASSERT_TRUE(s.locked);
  EXPECT_EQ(*s.locked, Color::Red);
  const auto locked = s;
  EXPECT_FALSE(color_tally(s, 0, 3, rule));
  EXPECT_EQ(s.conf, locked.conf);
}

TEST(ColorGame, ConfidenceLock) {
  ColorRule rule{1, 0.8, 1000, 5};
  ColorState s;
  s.color = Color::Red;
  // Alternate so c3 never builds; conf[red] reaches beta2 first.
  for (int i = 0; i < 4; ++i) {
    color_tally(s, 1, 0, rule);
    color_tally(s, 0, 1, rule);
  }
  EXPECT_FALSE(s.locked);
  color_tally(s, 1, 0, rule);
  ASSERT_TRUE(s.locked);
  EXPECT_EQ(*s.locked, Color::Red);
}

// ---------------------------------------------------------------------------
// Adversary

TEST(Adversary, NodeColors) {
  EXPECT_EQ(byzantine_node_color(NodeStrategy::PaperWorstCase, QueryClass::U, Color::Blue, Color::Blue),
            Color::Red);
  EXPECT_EQ(byzantine_node_color(NodeStrategy::PaperWorstCase, QueryClass::V, Color::Red, Color::Red),
            Color::Blue);
  EXPECT_EQ(byzantine_node_color(NodeStrategy::Crash, QueryClass::U, Color::Red, Color::Red), std::nullopt);
  EXPECT_EQ(byzantine_node_color(NodeStrategy::AlwaysOpposite, QueryClass::U, Color::Red, Color::Red),
            Color::Blue);
  EXPECT_EQ(byzantine_node_color(NodeStrategy::Honest, QueryClass::U, Color::Red, Color::Blue), Color::Blue);
}

TEST(Adversary, SuppressionExample) {
  const auto in = colors(7, 3);
  const auto out = byzantine_broker_filter(BrokerStrategy::PaperSuppression, in, QueryClass::V, 0.8);
  // Blue stays; exactly enough red is dropped for 3 >= ceil(0.8 * remaining).
  std::uint32_t red = 0, blue = 0;
  for (const auto& [u, c] : out) (*c == Color::Red ? red : blue) += 1;
  EXPECT_EQ(blue, 3u);
  EXPECT_EQ(red, 0u);
  EXPECT_EQ(color_subset_round(out, 0.8), Color::Blue);

  EXPECT_EQ(byzantine_broker_filter(BrokerStrategy::PaperSuppression, in, QueryClass::U, 0.8), in);
  EXPECT_EQ(color_subset_round(in, 0.8), std::nullopt);
  EXPECT_TRUE(byzantine_broker_filter(BrokerStrategy::Crash, in, QueryClass::U, 0.8).empty());
  const auto all_red = colors(5, 0);
  EXPECT_EQ(byzantine_broker_filter(BrokerStrategy::PaperSuppression, all_red, QueryClass::V, 0.8), all_red);
}

TEST(Adversary, FilterIsMinimalSubsetAndMatchesCounts) {
  Rng rng(17);
  for (int t = 0; t < 2000; ++t) {
    const auto red = static_cast<std::uint32_t>(rng.below(20));
    const auto blue = static_cast<std::uint32_t>(rng.below(20));
    const auto silent = static_cast<std::uint32_t>(rng.below(5));
    const double eta = rng.uniform(0.51, 1.0);
    const auto in = colors(red, blue, silent);
    const auto out = byzantine_broker_filter(BrokerStrategy::PaperSuppression, in, QueryClass::V, eta);
    for (const auto& [u, c] : out) {
      ASSERT_TRUE(in.count(u));
      ASSERT_EQ(in.at(u), c);
    }
    std::uint32_t r = 0, b = 0;
    for (const auto& [u, c] : out)
      if (c) (*c == Color::Red ? r : b) += 1;
    EXPECT_EQ(b, blue);
    const auto counted = byzantine_broker_counts(BrokerStrategy::PaperSuppression,
                                                 {red, blue, red + blue + silent}, QueryClass::V, eta);
    EXPECT_EQ(counted.red, r);
    EXPECT_EQ(counted.population, out.size());
    if (blue > 0 && out.size() < in.size()) {
      // Blue wins the subset, and keeping one more entry would break that.
      EXPECT_GE(b, threshold_count(eta, static_cast<std::uint32_t>(out.size())));
      EXPECT_LT(b, threshold_count(eta, static_cast<std::uint32_t>(out.size()) + 1));
    }
  }
}

TEST(Adversary, TxResponses) {
  EXPECT_EQ(byzantine_node_tx_response(NodeStrategy::AlwaysNo, Vote::Yes), TxResponse::No);
  EXPECT_EQ(byzantine_node_tx_response(NodeStrategy::Honest, Vote::Yes), TxResponse::Yes);
  EXPECT_EQ(byzantine_node_tx_response(NodeStrategy::Honest, Vote::No), TxResponse::No);
  EXPECT_EQ(byzantine_node_tx_response(NodeStrategy::Crash, Vote::Yes), TxResponse::Silent);
  const auto ds = make_double_spend(NodeId{1}, {TxId{0}}, TxId{5}, TxId{6}, ConflictKey{5},
                                    {BrokerId{0}, BrokerId{1}, BrokerId{2}});
  EXPECT_EQ(ds.first.conflict_key, ds.second.conflict_key);
  EXPECT_NE(ds.first.id, ds.second.id);
  EXPECT_EQ(ds.first_brokers.size() + ds.second_brokers.size(), 3u);
}

TEST(Adversary, MembershipCounts) {
  ProtocolParams p;
  p.n = 200;
  p.m = 10;
  Rng rng(1);
  const auto mem = draw_membership(Population::from_ratios(p, 0.25, 0.3), rng);
  EXPECT_EQ(mem.byzantine_nodes(), 50u);
  EXPECT_EQ(mem.byzantine_brokers(), 3u);
}

TEST(Adversary, HoeffdingCapHolds) {
  Rng rng(4);
  for (auto [mb, ell, theta] : {std::tuple{2u, 10u, 5.0}, std::tuple{3u, 6u, 1.0}, std::tuple{5u, 8u, 2.0}}) {
    const std::uint32_t m = 10;
    const auto cap = byzantine_broker_cap(static_cast<double>(mb) / m, ell, theta);
    const auto mc = oracle::broker_cap_mc(m, mb, ell, theta, 100'000, rng);
    EXPECT_LE(mc.exceed.mean, cap.bound);
    EXPECT_TRUE(mc.count.within(cap.expected)) << mc.count.mean << " vs " << cap.expected;
  }
}
