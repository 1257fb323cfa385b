// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cim/contest.hpp"
#include "cim/deviation.hpp"
#include "cim/distribution.hpp"
#include "cim/equilibrium.hpp"
#include "cim/graph.hpp"
#include "cim/order_tree.hpp"
#include "support/facebook_like.hpp"
#include "support/fixtures.hpp"
#include "support/invariants.hpp"
#include "support/oracles.hpp"

namespace {

using namespace cim;
using Clock = std::chrono::steady_clock;

const std::size_t kThreads = std::max(1u, std::thread::hardware_concurrency());

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Collects the first few failure messages of one criterion.
struct Check {
  std::vector<std::string> failures;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    if (!ok && failures.size() < 5) failures.push_back(what);
    else if (!ok) failures.back() = "... and more";
  }
};

int g_failed = 0;

void criterion(int id, const std::string& title, double budget_s, const std::function<void(Check&)>& body) {
  Check c;
  auto t0 = Clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.failures.push_back(std::string("exception: ") + e.what());
  }
  double took = seconds_since(t0);
  if (took > budget_s) {
    std::ostringstream os;
    os << "took " << took << " s, budget " << budget_s << " s";
    c.failures.push_back(os.str());
  }
  bool pass = c.failures.empty();
  g_failed += !pass;
  std::printf("[%s] C%d %s (%.3f s)%s%s\n", pass ? "PASS" : "FAIL", id, title.c_str(), took,
              c.detail.str().empty() ? "" : " : ", c.detail.str().c_str());
  for (auto& f : c.failures) std::printf("       - %s\n", f.c_str());
  std::fflush(stdout);
}

std::string str(double x) {
  std::ostringstream os;
  os.precision(10);
  os << x;
  return os.str();
}

struct Network {
  SocialGraph graph;
  std::string source;
};

/// The real edge list when available, otherwise the seeded stand-in.
Network facebook_network() {
  std::vector<std::filesystem::path> candidates;
  if (const char* env = std::getenv("CIM_FACEBOOK_EDGES")) candidates.emplace_back(env);
  candidates.emplace_back(std::filesystem::path(CIM_DATA_DIR) / "facebook_combined.txt");
  for (auto& p : candidates) {
    std::ifstream in(p);
    if (!in) continue;
    auto g = load_edge_list(in);
    for (NodeId v = 0; v < g.node_count(); ++v)
      if (g.degree(v) == 5) return {g.with_requester(v), p.string()};
    throw std::runtime_error(p.string() + " has no node of degree 5");
  }
  auto fb = testing::facebook_like();
  return {fb.graph, "seeded stand-in"};
}

}  // namespace

int main() {
  const ContestParams base{1.0, 0.1};
  ExponentialAbility exp1(1.0);
  UniformAbility unif(0.0, 1.0);

  criterion(1, "order tree of the worked invitation graph", 0.001 + 0.05, [](Check& c) {
    using testing::Fig2;
    auto g = Fig2::graph();
    auto t0 = Clock::now();
    auto t = build_order_tree(derive_invitation_graph(g, Fig2::profile(g)));
    double took = seconds_since(t0);
    std::vector<NodeId> want(g.node_count(), kNoNode);
    want[Fig2::a] = want[Fig2::b] = Fig2::p;
    want[Fig2::c] = want[Fig2::d] = want[Fig2::e] = Fig2::b;
    want[Fig2::f] = Fig2::e;
    for (NodeId v = 1; v < g.node_count(); ++v) {
      NodeId got = t.contains(v) ? t.parent(v) : kNoNode;
      c.expect(got == want[v], "parent of node " + std::to_string(v));
    }
    c.expect(took < 0.001, "construction took " + str(took) + " s");
    c.detail << "build " << took * 1e3 << " ms";
  });

  criterion(2, "constructive solver matches brute-force best response", 60, [&](Check& c) {
    CounterRng rng(101, 0);
    const double ratios[] = {0.01, 0.1, 0.5};
    double worst = 0;
    for (int round = 0; round < 200; ++round) {
      auto g = testing::random_tree(3 + rng.below(198), rng, rng.uniform());
      auto t = testing::all_invite_tree(g);
      ContestParams params{1.0, ratios[round % 3]};
      const AbilityDistribution& d = (round / 3) % 2 ? static_cast<const AbilityDistribution&>(exp1) : unif;
      auto fast = solve_equilibrium(t, params, d);
      auto slow = brute_force_equilibrium(t, params, d);
      for (NodeId v : t.agents()) {
        double gap = std::abs(fast.r(v) - slow.r(v));
        worst = std::max(worst, gap);
        c.expect(gap <= 1e-6, "round " + std::to_string(round) + " agent " + std::to_string(v) + " gap " + str(gap));
      }
    }
    c.detail << "max gap " << worst;
  });

  criterion(3, "block-cut leading relation matches cut-vertex removal", 30, [](Check& c) {
    CounterRng rng(103, 0);
    std::size_t pairs = 0;
    for (int round = 0; round < 100; ++round) {
      std::size_t n = 2 + rng.below(199);
      auto g = testing::random_connected(n, rng.below(n), rng, rng.uniform());
      InvitationProfile prof(g);
      if (round % 2)
        for (NodeId u = 0; u < g.node_count(); ++u)
          for (NodeId v : g.neighbors(u))
            if (rng.uniform() < 0.3) prof.set_invite(g, u, v, false);
      auto h = derive_invitation_graph(g, prof);
      auto t = build_order_tree(h);
      auto leads = testing::leads_by_removal(h);
      for (NodeId i : h.invited)
        for (NodeId j : h.invited) {
          ++pairs;
          c.expect(t.is_ancestor(i, j) == (leads[i][j] != 0),
                   "round " + std::to_string(round) + " pair " + std::to_string(i) + "," + std::to_string(j));
        }
    }
    c.detail << pairs << " pairs";
  });

  criterion(4, "equilibrium invariants hold on solved instances", 30, [&](Check& c) {
    CounterRng rng(107, 0);
    std::size_t solved = 0;
    auto check = [&](const OrderTree& t, const ContestParams& params, const AbilityDistribution& d, bool typed) {
      auto prof = solve_equilibrium(t, params, d, nullptr, SolveOptions{.typed = typed});
      for (auto& msg : testing::equilibrium_violations(t, prof, params, d)) c.expect(false, msg);
      ++solved;
    };
    {
      auto g = testing::Fig2::graph();
      check(build_order_tree(derive_invitation_graph(g, testing::Fig2::profile(g))), base, exp1, false);
      check(testing::all_invite_tree(testing::Fig3::graph()), base, unif, false);
      check(testing::all_invite_tree(testing::Fig5::graph()), base, exp1, true);
    }
    UniformAbility wide(0.5, 3.0);
    for (int round = 0; round < 400; ++round) {
      auto g = testing::random_connected(2 + rng.below(300), rng.below(60), rng, rng.uniform());
      ContestParams params{0.5 + 9.5 * rng.uniform(), 0.0};
      params.cost = params.prize * (0.005 + 0.9 * rng.uniform());
      const AbilityDistribution* d = round % 3 == 0 ? static_cast<const AbilityDistribution*>(&exp1)
                                     : round % 3 == 1 ? static_cast<const AbilityDistribution*>(&unif)
                                                      : &wide;
      check(testing::all_invite_tree(g), params, *d, round % 2 == 0);
    }
    c.detail << solved << " instances";
  });

  criterion(5, "worked deviation example", 1, [&](Check& c) {
    using testing::Fig5;
    auto g = Fig5::graph();
    auto b = solve_baseline(g, base, exp1);
    const double ri = b.profile.r(Fig5::i);
    const NodeId higher[] = {Fig5::dj1, Fig5::dj2, Fig5::dj3, Fig5::h};
    for (NodeId v : higher) c.expect(b.profile.r(v) > ri, "baseline r_" + std::to_string(v) + " > r_i");
    for (NodeId v : {Fig5::k, Fig5::j}) c.expect(b.profile.r(v) <= ri, "baseline r_" + std::to_string(v) + " <= r_i");

    auto rep = verify_best_response(Fig5::i, g, b, base, exp1);
    std::size_t deviations = 0;
    for (auto& d : rep.deviations) {
      if (d.deviation.baseline) continue;
      ++deviations;
      c.expect(d.threshold >= ri - 1e-12, "deviator threshold drops");
      for (NodeId v : higher) c.expect(d.profile.r(v) < b.profile.r(v), "competitor " + std::to_string(v) + " not lower");
    }
    c.expect(deviations == 3, "expected 3 deviations, got " + std::to_string(deviations));
    c.expect(rep.no_profitable_deviation, "profitable deviation found");

    InvitationProfile pb(g), pc(g);
    pb.set_invite(g, Fig5::i, Fig5::di1, false);
    pc.set_invite(g, Fig5::j, Fig5::dj1, false);
    auto rb = solve_equilibrium(build_order_tree(derive_invitation_graph(g, pb)), base, exp1);
    auto rc = solve_equilibrium(build_order_tree(derive_invitation_graph(g, pc)), base, exp1);
    double gap = std::abs(rb.r(Fig5::i) - rc.r(Fig5::j));
    c.expect(gap <= 1e-9, "symmetric deviations differ by " + str(gap));
    c.detail << "r_i " << ri << ", symmetric gap " << gap;
  });

  criterion(6, "no profitable deviation on 1000 random graphs", 600, [&](Check& c) {
    CounterRng rng(109, 0);
    const double ratios[] = {0.05, 0.1, 0.3};
    std::size_t checked = 0, trees = 0, violated = 0;
    DeviationOptions opts;
    opts.threads = kThreads;
    for (int round = 0; round < 1000; ++round) {
      std::size_t n = 2 + rng.below(39);
      auto g = testing::random_connected(n, rng.below(n), rng, rng.uniform());
      ContestParams params{1.0, ratios[round % 3]};
      const AbilityDistribution& d = round % 2 ? static_cast<const AbilityDistribution&>(exp1) : unif;
      auto s = verify_all(g, params, d, VerifyMode::typed, opts);
      checked += s.checked;
      trees += s.distinct_trees;
      violated += s.violated;
      for (auto& rep : s.counterexamples)
        c.expect(false, "graph " + std::to_string(round) + " agent " + std::to_string(rep.agent));
    }
    c.detail << checked << " agents checked, " << trees << " trees, " << violated << " violations";
  });

  criterion(7, "expected maximum of i.i.d. abilities", 5, [&](Check& c) {
    double worst_e = 0, worst_u = 0;
    for (std::size_t n : {1u, 10u, 100u, 1000u}) {
      double h = 0;
      for (std::size_t k = 1; k <= n; ++k) h += 1.0 / static_cast<double>(k);
      double ge = std::abs(expected_max(exp1, n) - h);
      double gu = std::abs(expected_max(unif, n) - static_cast<double>(n) / static_cast<double>(n + 1));
      worst_e = std::max(worst_e, ge);
      worst_u = std::max(worst_u, gu);
      c.expect(ge <= 1e-6, "Exp(1) n=" + std::to_string(n) + " off by " + str(ge));
      c.expect(gu <= 1e-8, "U(0,1) n=" + std::to_string(n) + " off by " + str(gu));
    }
    c.detail << "max error exp " << worst_e << ", uniform " << worst_u;
  });

  criterion(8, "no-invitation baseline no-contributor rate", 60, [&](Check& c) {
    const std::size_t n = 100'000;
    for (std::size_t d : {2u, 5u, 20u}) {
      auto st = mn_baseline(d, base, exp1, n, 113 + d, kThreads);
      double p = std::pow(base.cost / base.prize, static_cast<double>(d) / static_cast<double>(d - 1));
      double se = std::sqrt(p * (1 - p) / static_cast<double>(n));
      double freq = static_cast<double>(st.no_contributor_count) / static_cast<double>(n);
      double z = (freq - p) / se;
      c.expect(std::abs(z) <= 3, "d=" + std::to_string(d) + " z=" + str(z));
      c.detail << "d=" << d << " " << freq << " vs " << p << " (z " << z << ") ";
    }
  });

  auto net = facebook_network();
  auto fb_tree = testing::all_invite_tree(net.graph);
  ThresholdProfile fb_prof;

  criterion(9, "desk-scale reproduction on the Facebook network (" + net.source + ")", 10 + 120 + 30, [&](Check& c) {
    const auto& g = net.graph;
    c.detail << g.node_count() << " nodes, " << g.edge_count() << " edges, |U| " << fb_tree.agent_count()
             << ", requester degree " << g.degree(g.requester());
    c.expect(g.degree(g.requester()) == 5, "requester degree is not 5");

    auto t0 = Clock::now();
    fb_prof = solve_equilibrium(fb_tree, base, exp1);
    double solve_s = seconds_since(t0);
    c.expect(solve_s < 10, "solve took " + str(solve_s) + " s");
    for (auto& msg : testing::equilibrium_violations(fb_tree, fb_prof, base, exp1)) c.expect(false, msg);

    t0 = Clock::now();
    auto cim_stats = simulate_batch(fb_tree, fb_prof, base, exp1, 1000, 2024, kThreads);
    double batch_s = seconds_since(t0);
    c.expect(batch_s < 120, "batch took " + str(batch_s) + " s");
    auto mn_stats = mn_baseline(g.degree(g.requester()), base, exp1, 1000, 2024, kThreads);

    c.expect(cim_stats.no_contributor_count == 0,
             "no-contributor tasks: " + std::to_string(cim_stats.no_contributor_count));
    c.expect(cim_stats.max_winners() <= 2, "max winners " + std::to_string(cim_stats.max_winners()));
    double single = cim_stats.single_winner_fraction();
    c.expect(single >= 0.966 && single <= 1.0, "single-winner fraction " + str(single));
    auto cim_med = cim_stats.median_best_quality();
    auto mn_med = mn_stats.median_best_quality();
    c.expect(cim_med.has_value() && (!mn_med || *cim_med > *mn_med), "CIM median does not exceed MN median");
    c.detail << "; solve " << solve_s << " s, batch " << batch_s << " s, single winner " << single
             << ", median CIM " << cim_med.value_or(0.0) << " vs MN " << mn_med.value_or(0.0);
  });

  criterion(10, "population dynamics endpoint sits below the order-statistic bound", 60, [&](Check& c) {
    if (fb_prof.threshold.empty()) fb_prof = solve_equilibrium(fb_tree, base, exp1);
    auto order = invitation_waves(derive_invitation_graph(net.graph, InvitationProfile(net.graph)));
    auto curve = population_dynamics(fb_tree, fb_prof, base, exp1, order, 500, 31, kThreads);
    double end = curve.mean_best.back();
    double gap = (curve.reference - end) / curve.reference;
    c.expect(end < curve.reference, "endpoint " + str(end) + " not below " + str(curve.reference));
    c.expect(gap <= 0.15, "relative gap " + str(gap));
    std::size_t below = 0;
    for (double e : curve.endpoints) below += e < curve.reference;
    c.detail << "endpoint " << end << ", bound " << curve.reference << ", gap " << gap * 100 << "%, "
             << below << "/500 repetitions below the bound";
  });

  std::printf("%s: %d criteria failed\n", g_failed ? "FAILED" : "OK", g_failed);
  return g_failed ? 1 : 0;
}
