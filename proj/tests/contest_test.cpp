#include "cim/contest.hpp"

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace cim {
namespace {

const ContestParams kParams{1.0, 0.1};

TaskSample manual(const OrderTree& t, std::vector<std::pair<NodeId, double>> contributions) {
  TaskSample s;
  s.ability.assign(t.node_count(), 0.0);
  s.contributed.assign(t.node_count(), 0);
  for (auto [v, q] : contributions) {
    s.ability[v] = q;
    s.contributed[v] = 1;
  }
  return s;
}

TEST(RunAward, ChainExample) {
  auto t = testing::all_invite_tree(load_edge_list("0 1\n1 2\n2 3\n"));
  auto out = run_award(t, manual(t, {{1, 0.5}, {2, 0.4}, {3, 0.6}}));
  EXPECT_EQ(out.winners, (std::vector<NodeId>{1, 3}));
  EXPECT_EQ(out.top, 3u);
  EXPECT_EQ(out.n_contributors, 3u);
  EXPECT_DOUBLE_EQ(out.payout(2.0), 4.0);
}

TEST(RunAward, NobodyAndSingleContributor) {
  auto t = testing::all_invite_tree(testing::Fig3::graph());
  auto none = run_award(t, manual(t, {}));
  EXPECT_TRUE(none.winners.empty());
  EXPECT_FALSE(none.best_quality.has_value());
  auto one = run_award(t, manual(t, {{testing::Fig3::k, 0.01}}));
  EXPECT_EQ(one.winners, (std::vector<NodeId>{testing::Fig3::k}));
}

TEST(RunAward, TiesLoseAndAreCounted) {
  auto t = testing::all_invite_tree(load_edge_list("0 1\n0 2\n"));
  auto out = run_award(t, manual(t, {{1, 0.5}, {2, 0.5}}));
  EXPECT_TRUE(out.winners.empty());
  EXPECT_EQ(out.ties, 2u);
}

TEST(RunAward, MatchesDirectRuleOnSmallTrees) {
  CounterRng rng(41, 0);
  ExponentialAbility e(1.0);
  for (int round = 0; round < 20; ++round) {
    auto t = testing::all_invite_tree(testing::random_connected(2 + rng.below(11), rng.below(5), rng, rng.uniform()));
    auto prof = solve_equilibrium(t, kParams, e);
    CounterRng draws(43, static_cast<std::uint64_t>(round));
    for (int k = 0; k < 10'000 / 20; ++k) {
      auto s = sample_task(t, prof, e, draws);
      auto out = run_award(t, s);
      ASSERT_EQ(out.winners, testing::winners_direct(t, s));
    }
  }
}

TEST(RunAward, WinnersOtherThanTopLeadTheTop) {
  CounterRng rng(47, 0);
  UniformAbility u(0.0, 1.0);
  for (int round = 0; round < 50; ++round) {
    auto t = testing::all_invite_tree(testing::random_connected(2 + rng.below(60), rng.below(15), rng, rng.uniform()));
    auto prof = solve_equilibrium(t, kParams, u);
    for (int k = 0; k < 200; ++k) {
      auto s = sample_task(t, prof, u, rng);
      auto out = run_award(t, s);
      if (out.n_contributors == 0) {
        EXPECT_TRUE(out.winners.empty());
        continue;
      }
      EXPECT_TRUE(std::ranges::binary_search(out.winners, out.top));
      for (NodeId w : out.winners) {
        EXPECT_TRUE(s.contributed[w]);
        if (w != out.top) EXPECT_TRUE(t.is_ancestor(w, out.top));
      }
    }
  }
}

TEST(SimulateBatch, DeterministicAndThreadIndependent) {
  auto t = testing::all_invite_tree(testing::Fig5::graph());
  ExponentialAbility e(1.0);
  auto prof = solve_equilibrium(t, kParams, e);
  auto a = simulate_batch(t, prof, kParams, e, 3000, 99, 1);
  auto b = simulate_batch(t, prof, kParams, e, 3000, 99, 4);
  std::ostringstream ca, cb;
  write_tasks_csv(ca, a);
  write_tasks_csv(cb, b);
  EXPECT_EQ(ca.str(), cb.str());
  EXPECT_EQ(batch_summary_json(a), batch_summary_json(b));
  auto c = simulate_batch(t, prof, kParams, e, 3000, 100, 1);
  std::ostringstream cc;
  write_tasks_csv(cc, c);
  EXPECT_NE(ca.str(), cc.str());
}

TEST(SimulateBatch, AggregatesAreConsistent) {
  auto t = testing::all_invite_tree(testing::Fig5::graph());
  ExponentialAbility e(1.0);
  auto prof = solve_equilibrium(t, kParams, e);
  ASSERT_TRUE(prof.unconditional.has_value());
  auto st = simulate_batch(t, prof, kParams, e, 5000, 7, 2);
  EXPECT_EQ(st.quality.mass(), 5000u);
  EXPECT_EQ(st.no_contributor_count, 0u);
  std::size_t total = 0;
  for (auto c : st.winner_histogram) total += c;
  EXPECT_EQ(total, 5000u);
  EXPECT_LE(st.max_winners(), t.agent_count());
  EXPECT_GE(st.mean_payout, 1.0);

  auto empty = simulate_batch(t, prof, kParams, e, 0, 7, 2);
  EXPECT_EQ(empty.task_count(), 0u);
  EXPECT_EQ(empty.quality.mass(), 0u);
  EXPECT_FALSE(empty.median_best_quality().has_value());
  EXPECT_EQ(empty.mean_payout, 0.0);
}

TEST(MnBaseline, SingleAgentAlwaysWins) {
  auto st = mn_baseline(1, kParams, ExponentialAbility(1.0), 1000, 3);
  EXPECT_EQ(st.no_contributor_count, 0u);
  ASSERT_GE(st.winner_histogram.size(), 2u);
  EXPECT_EQ(st.winner_histogram[1], 1000u);
}

TEST(MnBaseline, NoContributorRateMatchesClosedForm) {
  UniformAbility u(0.0, 1.0);
  for (std::size_t d : {2u, 5u, 20u}) {
    const std::size_t n = 40'000;
    auto st = mn_baseline(d, kParams, u, n, 5, 2);
    double p = std::pow(0.1, static_cast<double>(d) / static_cast<double>(d - 1));
    double se = std::sqrt(p * (1 - p) / static_cast<double>(n));
    EXPECT_NEAR(static_cast<double>(st.no_contributor_count) / n, p, 4 * se) << "d=" << d;
    EXPECT_LE(st.max_winners(), 1u);
  }
}

TEST(Dynamics, StarMatchesRunningMaxOracle) {
  auto t = testing::all_invite_tree(load_edge_list("0 1\n0 2\n0 3\n0 4\n"));
  ExponentialAbility e(1.0);
  auto prof = solve_equilibrium(t, kParams, e);
  auto order = invitation_waves(derive_invitation_graph(load_edge_list("0 1\n0 2\n0 3\n0 4\n"),
                                                        InvitationProfile(load_edge_list("0 1\n0 2\n0 3\n0 4\n"))));
  const std::size_t reps = 2000;
  auto c = population_dynamics(t, prof, kParams, e, order, reps, 11, 3);
  ASSERT_EQ(c.mean_best.size(), 4u);
  // Independent replay of the same draws.
  std::vector<double> expect(4, 0.0);
  for (std::size_t rep = 0; rep < reps; ++rep) {
    CounterRng rng(11, rep);
    std::vector<double> q(t.node_count());
    for (NodeId v : t.agents()) q[v] = e.sample(rng);
    double best = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      if (q[order[k]] > prof.r(order[k])) best = std::max(best, q[order[k]]);
      expect[k] += best / reps;
    }
  }
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(c.mean_best[k], expect[k], 1e-12);
  for (std::size_t k = 1; k < 4; ++k) EXPECT_GE(c.mean_best[k], c.mean_best[k - 1]);
  EXPECT_NEAR(c.reference, 1.0 + 0.5 + 1.0 / 3 + 0.25, 1e-9);
  EXPECT_LT(c.mean_best.back(), c.reference);
}

TEST(Dynamics, SingleRepetitionReplays) {
  auto g = testing::Fig5::graph();
  auto t = testing::all_invite_tree(g);
  ExponentialAbility e(1.0);
  auto prof = solve_equilibrium(t, kParams, e);
  auto order = invitation_waves(derive_invitation_graph(g, InvitationProfile(g)));
  auto a = population_dynamics(t, prof, kParams, e, order, 1, 5);
  auto b = population_dynamics(t, prof, kParams, e, order, 1, 5);
  EXPECT_EQ(a.mean_best, b.mean_best);
  EXPECT_EQ(a.sd_best, std::vector<double>(a.sd_best.size(), 0.0));
  std::vector<NodeId> short_order(order.begin(), order.end() - 1);
  EXPECT_THROW(population_dynamics(t, prof, kParams, e, short_order, 1, 5), std::invalid_argument);
}

}  // namespace
}  // namespace cim
