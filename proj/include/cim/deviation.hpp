#pragma once

// Checks that inviting every neighbour is a best response when everyone else
// does so.
//
// With all other agents inviting all, an agent's invitation can only drop
// agents from her own subtree: anyone who still gets invited invites her back,
// so the edge survives either way. Only the neighbours she leads therefore
// matter, and every subset of them is re-derived into an order tree. Trees
// that are isomorphic yield the same equilibrium and are solved once.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <nlohmann/json.hpp>

#include "cim/distribution.hpp"
#include "cim/equilibrium.hpp"
#include "cim/graph.hpp"
#include "cim/order_tree.hpp"
#include "cim/parallel.hpp"
#include "cim/rng.hpp"

namespace cim {

struct DeviationOptions {
  std::size_t cap = 12;             ///< exhaustive subsets up to this many led neighbours
  std::size_t sample_size = 256;    ///< random subsets drawn beyond the cap
  std::uint64_t seed = 0x5eed;
  std::size_t grid = 256;
  std::size_t threads = 1;
  bool typed_solver = false;
};

struct Deviation {
  std::vector<NodeId> withheld;     ///< led neighbours left uninvited
  OrderTree tree;
  TreeFingerprint fingerprint;
  bool baseline = false;
};

struct DeviationSet {
  NodeId agent = kNoNode;
  std::vector<Deviation> distinct;  ///< baseline first
  std::size_t subsets_tried = 0;
  bool partial = false;             ///< sampled rather than exhaustive
};

/// Baseline equilibrium of the all-invite profile, shared across agents.
struct Baseline {
  OrderTree tree;
  ThresholdProfile profile;
  TypeSignature types;
};

inline Baseline solve_baseline(const SocialGraph& g, const ContestParams& params, const AbilityDistribution& dist,
                               bool typed = false) {
  Baseline b;
  b.tree = build_order_tree(derive_invitation_graph(g, InvitationProfile(g)));
  b.profile = solve_equilibrium(b.tree, params, dist, nullptr, SolveOptions{.typed = typed});
  b.types = canonical_types(b.tree);
  return b;
}

inline DeviationSet enumerate_deviations(NodeId i, const SocialGraph& g, const OrderTree& baseline,
                                         const DeviationOptions& opts = {}) {
  if (!baseline.is_agent(i)) throw std::invalid_argument("agent is not in the invitation graph");
  DeviationSet out;
  out.agent = i;

  std::vector<NodeId> led;
  for (NodeId v : g.neighbors(i))
    if (baseline.is_ancestor(i, v)) led.push_back(v);

  auto realise = [&](const std::vector<char>& withhold) {
    InvitationProfile prof(g);
    Deviation dev;
    for (std::size_t k = 0; k < led.size(); ++k)
      if (withhold[k]) {
        prof.set_invite(g, i, led[k], false);
        dev.withheld.push_back(led[k]);
      }
    dev.tree = build_order_tree(derive_invitation_graph(g, prof));
    for (NodeId j : baseline.agents())
      if (!baseline.in_subtree(i, j) && !dev.tree.is_agent(j))
        throw std::logic_error("deviation of agent " + std::to_string(i) + " removed competitor " + std::to_string(j));
    dev.fingerprint = tree_fingerprint(dev.tree);
    dev.baseline = dev.withheld.empty();
    return dev;
  };

  auto consider = [&](const std::vector<char>& withhold) {
    ++out.subsets_tried;
    auto dev = realise(withhold);
    for (auto& seen : out.distinct)
      if (seen.fingerprint == dev.fingerprint) return;
    out.distinct.push_back(std::move(dev));
  };

  const std::size_t m = led.size();
  std::vector<char> withhold(m, 0);
  consider(withhold);
  if (m <= opts.cap) {
    for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << m); ++mask) {
      for (std::size_t k = 0; k < m; ++k) withhold[k] = (mask >> k) & 1;
      consider(withhold);
    }
    return out;
  }

  // Too many led neighbours: single exclusions, the empty invitation and a
  // seeded random sample of subsets.
  out.partial = true;
  for (std::size_t k = 0; k < m; ++k) {
    std::fill(withhold.begin(), withhold.end(), 0);
    withhold[k] = 1;
    consider(withhold);
  }
  std::fill(withhold.begin(), withhold.end(), 1);
  consider(withhold);
  CounterRng rng(opts.seed, i);
  for (std::size_t s = 0; s < opts.sample_size; ++s) {
    for (std::size_t k = 0; k < m; ++k) withhold[k] = rng.uniform() < 0.5;
    consider(withhold);
  }
  return out;
}

inline DeviationSet enumerate_deviations(NodeId i, const SocialGraph& g, const DeviationOptions& opts = {}) {
  auto base = build_order_tree(derive_invitation_graph(g, InvitationProfile(g)));
  return enumerate_deviations(i, g, base, opts);
}

struct DeviationOutcome {
  Deviation deviation;
  ThresholdProfile profile;
  double threshold = 0.0;           ///< deviator's new threshold
  double max_gain = 0.0;            ///< max over grid of realised pi' - pi
  double expected_utility = 0.0;    ///< integral of the realised utility against F
  std::vector<std::pair<NodeId, double>> competitor_deltas;   ///< r'_j - r_j for j in P_i
};

struct DeviationReport {
  NodeId agent = kNoNode;
  double baseline_threshold = 0.0;
  double baseline_expected_utility = 0.0;
  std::vector<DeviationOutcome> deviations;   ///< sorted by fingerprint hash
  std::size_t subsets_tried = 0;
  bool partial = false;
  bool no_profitable_deviation = true;
};

namespace detail {

/// E[realised utility] = integral over v in [F(r), 1] of pi(F^-1(v)).
inline double integrate_utility(NodeId i, const UtilityEvaluator& eval, const ThresholdProfile& prof,
                                const AbilityDistribution& dist) {
  const double r = prof.threshold[i];
  const double v0 = prof.is_unconditional(i) ? 0.0 : dist.cdf(r);
  if (v0 >= 1.0) return 0.0;
  auto f = [&](double v) {
    if (v >= 1.0) v = std::nextafter(1.0, 0.0);
    return eval(i, dist.quantile(v));
  };
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, v0, 1.0, 12, 1e-10);
}

}  // namespace detail

inline DeviationReport verify_best_response(NodeId i, const SocialGraph& g, const Baseline& base,
                                            const ContestParams& params, const AbilityDistribution& dist,
                                            const DeviationOptions& opts = {}) {
  auto set = enumerate_deviations(i, g, base.tree, opts);
  DeviationReport rep;
  rep.agent = i;
  rep.partial = set.partial;
  rep.subsets_tried = set.subsets_tried;
  rep.baseline_threshold = base.profile.threshold[i];
  const UtilityEvaluator base_eval(base.tree, base.profile, params, dist);
  rep.baseline_expected_utility = detail::integrate_utility(i, base_eval, base.profile, dist);
  LeadSets lead(base.tree);
  const auto competitors = lead.competitors(i);
  const std::size_t grid = std::max<std::size_t>(opts.grid, 1);

  rep.deviations.resize(set.distinct.size());
  parallel_for(set.distinct.size(), opts.threads, [&](std::size_t k) {
    DeviationOutcome out;
    out.deviation = std::move(set.distinct[k]);
    const OrderTree& t = out.deviation.tree;
    if (out.deviation.baseline) {
      out.profile = base.profile;
    } else {
      out.profile = solve_equilibrium(t, params, dist, nullptr, SolveOptions{.typed = opts.typed_solver});
    }
    out.threshold = out.profile.threshold[i];
    for (NodeId j : competitors) out.competitor_deltas.emplace_back(j, out.profile.threshold[j] - base.profile.threshold[j]);

    const UtilityEvaluator eval(t, out.profile, params, dist);
    const double floor = std::min(rep.baseline_threshold, out.threshold);
    const double f0 = dist.cdf(floor);
    double gain = -kInf;
    for (std::size_t s = 0; s < grid; ++s) {
      double v = f0 + (static_cast<double>(s) + 0.5) / static_cast<double>(grid) * (1.0 - f0);
      double q = dist.quantile(std::min(v, std::nextafter(1.0, 0.0)));
      double now = base_eval.realized(i, q, base.profile);
      double dev = eval.realized(i, q, out.profile);
      gain = std::max(gain, dev - now);
    }
    out.max_gain = gain;
    out.expected_utility = out.deviation.baseline ? rep.baseline_expected_utility
                                                  : detail::integrate_utility(i, eval, out.profile, dist);
    rep.deviations[k] = std::move(out);
  });
  std::sort(rep.deviations.begin(), rep.deviations.end(), [](const DeviationOutcome& a, const DeviationOutcome& b) {
    if (a.deviation.baseline != b.deviation.baseline) return a.deviation.baseline;
    return a.deviation.fingerprint.hash < b.deviation.fingerprint.hash;
  });
  for (auto& d : rep.deviations)
    if (d.max_gain > 1e-9 * params.prize) rep.no_profitable_deviation = false;
  return rep;
}

inline DeviationReport verify_best_response(NodeId i, const SocialGraph& g, const ContestParams& params,
                                            const AbilityDistribution& dist, const DeviationOptions& opts = {}) {
  return verify_best_response(i, g, solve_baseline(g, params, dist, opts.typed_solver), params, dist, opts);
}

enum class VerifyMode { typed, exhaustive };

struct VerifySummary {
  VerifyMode mode = VerifyMode::typed;
  std::size_t agents = 0;          ///< |U|
  std::size_t type_classes = 0;
  std::size_t checked = 0;         ///< agents whose deviations were solved
  std::size_t covered = 0;         ///< agents the verdict applies to
  std::size_t violated = 0;        ///< checked agents with a profitable deviation
  std::size_t distinct_trees = 0;
  bool partial = false;
  std::vector<DeviationReport> counterexamples;

  bool ok() const { return violated == 0; }
};

/// Typed mode checks one representative (smallest id) per agent type, which
/// covers the whole class.
inline VerifySummary verify_all(const SocialGraph& g, const ContestParams& params, const AbilityDistribution& dist,
                                VerifyMode mode, const DeviationOptions& opts = {}) {
  auto base = solve_baseline(g, params, dist, opts.typed_solver);
  VerifySummary sum;
  sum.mode = mode;
  sum.agents = base.tree.agent_count();
  sum.type_classes = base.types.class_count(base.tree);

  std::vector<NodeId> todo;
  if (mode == VerifyMode::exhaustive) {
    todo.assign(base.tree.agents().begin(), base.tree.agents().end());
  } else {
    std::vector<std::uint32_t> seen;
    for (NodeId v : base.tree.agents()) {
      auto lab = base.types.label[v];
      if (std::find(seen.begin(), seen.end(), lab) != seen.end()) continue;
      seen.push_back(lab);
      todo.push_back(v);
    }
  }
  DeviationOptions inner = opts;
  inner.threads = 1;
  std::vector<DeviationReport> reports(todo.size());
  parallel_for(todo.size(), opts.threads, [&](std::size_t k) {
    reports[k] = verify_best_response(todo[k], g, base, params, dist, inner);
  });
  for (auto& rep : reports) {
    ++sum.checked;
    sum.distinct_trees += rep.deviations.size();
    sum.partial = sum.partial || rep.partial;
    if (!rep.no_profitable_deviation) {
      ++sum.violated;
      sum.counterexamples.push_back(std::move(rep));
    }
  }
  sum.covered = sum.agents;
  return sum;
}

inline nlohmann::json report_to_json(const DeviationReport& rep, const SocialGraph& g, double prize) {
  nlohmann::json devs = nlohmann::json::array();
  for (auto& d : rep.deviations) {
    nlohmann::json withheld = nlohmann::json::array();
    for (NodeId v : d.deviation.withheld) withheld.push_back(g.original_id(v));
    nlohmann::json deltas = nlohmann::json::object();
    for (auto& [j, delta] : d.competitor_deltas) deltas[std::to_string(g.original_id(j))] = delta;
    nlohmann::json entry = {{"fingerprint", d.deviation.fingerprint.hex()},
                            {"baseline", d.deviation.baseline},
                            {"withheld", std::move(withheld)},
                            {"agents", d.deviation.tree.agent_count()},
                            {"threshold", d.threshold},
                            {"max_gain", d.max_gain},
                            {"expected_utility", d.expected_utility},
                            {"competitor_deltas", std::move(deltas)}};
    if (d.max_gain > 1e-9 * prize) entry["tree"] = order_tree_to_json(d.deviation.tree, g);
    devs.push_back(std::move(entry));
  }
  return {{"agent", g.original_id(rep.agent)},
          {"baseline_threshold", rep.baseline_threshold},
          {"baseline_expected_utility", rep.baseline_expected_utility},
          {"subsets_tried", rep.subsets_tried},
          {"partial", rep.partial},
          {"no_profitable_deviation", rep.no_profitable_deviation},
          {"deviations", std::move(devs)}};
}

inline nlohmann::json summary_to_json(const VerifySummary& s, const SocialGraph& g, double prize) {
  nlohmann::json cx = nlohmann::json::array();
  for (auto& r : s.counterexamples) cx.push_back(report_to_json(r, g, prize));
  return {{"mode", s.mode == VerifyMode::typed ? "typed" : "exhaustive"},
          {"agents", s.agents},
          {"type_classes", s.type_classes},
          {"checked", s.checked},
          {"covered", s.covered},
          {"violated", s.violated},
          {"distinct_trees", s.distinct_trees},
          {"partial", s.partial},
          {"counterexamples", std::move(cx)}};
}

}  // namespace cim
