#pragma once

// Award phase and Monte Carlo contest batches.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cim/distribution.hpp"
#include "cim/equilibrium.hpp"
#include "cim/order_tree.hpp"
#include "cim/parallel.hpp"
#include "cim/rng.hpp"

namespace cim {

/// Realised abilities of one task, indexed by node id.
struct TaskSample {
  std::vector<double> ability;
  std::vector<char> contributed;
};

/// Draws abilities for the tree's agents in ascending id order.
inline TaskSample sample_task(const OrderTree& t, const ThresholdProfile& prof, const AbilityDistribution& dist,
                              CounterRng& rng) {
  TaskSample s;
  s.ability.assign(t.node_count(), kNaN);
  s.contributed.assign(t.node_count(), 0);
  for (NodeId v : t.agents()) {
    double q = dist.sample(rng);
    s.ability[v] = q;
    s.contributed[v] = prof.contributes(v, q) ? 1 : 0;
  }
  return s;
}

struct ContestOutcome {
  std::vector<NodeId> winners;          ///< ascending
  std::optional<double> best_quality;   ///< best contributed quality
  NodeId top = kNoNode;                 ///< best contributor
  std::size_t n_contributors = 0;
  std::size_t ties = 0;                 ///< exact quality ties that decided a pairwise test

  double payout(double prize) const { return static_cast<double>(winners.size()) * prize; }
};

/// A contributor wins iff she strictly beats every contributing competitor
/// (every agent outside her own subtree). The best competitor quality is the
/// max over the preorder outside i's subtree slice, so one prefix and one
/// suffix maximum per task suffice.
inline ContestOutcome run_award(const OrderTree& t, const TaskSample& s) {
  ContestOutcome out;
  auto pre = t.preorder();
  const std::size_t m = pre.size();
  std::vector<double> val(m, -kInf);
  for (std::size_t k = 0; k < m; ++k) {
    NodeId v = pre[k];
    if (v == t.root() || !s.contributed[v]) continue;
    val[k] = s.ability[v];
    ++out.n_contributors;
    if (!out.best_quality || s.ability[v] > *out.best_quality) {
      out.best_quality = s.ability[v];
      out.top = v;
    }
  }
  std::vector<double> prefix(m + 1, -kInf), suffix(m + 1, -kInf);
  for (std::size_t k = 0; k < m; ++k) prefix[k + 1] = std::max(prefix[k], val[k]);
  for (std::size_t k = m; k-- > 0;) suffix[k] = std::max(suffix[k + 1], val[k]);
  for (std::size_t k = 1; k < m; ++k) {
    NodeId v = pre[k];
    if (!s.contributed[v]) continue;
    double rival = std::max(prefix[k], suffix[k + t.subtree_size(v)]);
    if (s.ability[v] > rival) {
      out.winners.push_back(v);
    } else if (s.ability[v] == rival) {
      ++out.ties;
    }
  }
  std::sort(out.winners.begin(), out.winners.end());
  return out;
}

/// Fixed-width histogram with explicit overflow and "no contribution" cells.
struct QualityHistogram {
  double lo = 0.0, hi = 1.0;
  std::vector<std::size_t> counts;
  std::size_t overflow = 0;
  std::size_t none = 0;

  QualityHistogram() = default;
  QualityHistogram(double lo_, double hi_, std::size_t bins) : lo(lo_), hi(hi_), counts(bins, 0) {}

  void add(std::optional<double> q) {
    if (!q) {
      ++none;
      return;
    }
    if (*q >= hi) {
      ++overflow;
      return;
    }
    auto b = static_cast<std::size_t>((std::max(*q, lo) - lo) / (hi - lo) * static_cast<double>(counts.size()));
    ++counts[std::min(b, counts.size() - 1)];
  }
  std::size_t mass() const {
    std::size_t s = overflow + none;
    for (auto c : counts) s += c;
    return s;
  }
};

struct TaskRecord {
  std::size_t task_id = 0;
  std::optional<double> best_quality;
  std::size_t n_contributors = 0;
  std::size_t n_winners = 0;
};

struct BatchStats {
  std::string mechanism;
  std::vector<TaskRecord> tasks;
  std::size_t no_contributor_count = 0;
  std::vector<std::size_t> winner_histogram;   ///< [k] = tasks with k winners
  QualityHistogram quality;
  double mean_payout = 0.0;
  std::size_t ties = 0;
  std::uint64_t seed = 0;
  std::string rng = std::string(CounterRng::kAlgorithm);

  std::size_t task_count() const { return tasks.size(); }

  /// Median of best quality with "no contribution" ranked lowest; nullopt
  /// when the median task had no contributor.
  std::optional<double> median_best_quality() const {
    if (tasks.empty()) return std::nullopt;
    std::vector<double> q;
    q.reserve(tasks.size());
    for (auto& r : tasks) q.push_back(r.best_quality.value_or(-kInf));
    auto mid = q.begin() + static_cast<std::ptrdiff_t>(q.size() / 2);
    std::nth_element(q.begin(), mid, q.end());
    if (!std::isfinite(*mid)) return std::nullopt;
    return *mid;
  }

  double single_winner_fraction() const {
    if (tasks.empty()) return 0.0;
    return winner_histogram.size() > 1 ? static_cast<double>(winner_histogram[1]) / static_cast<double>(tasks.size())
                                       : 0.0;
  }
  std::size_t max_winners() const {
    for (std::size_t k = winner_histogram.size(); k-- > 0;)
      if (winner_histogram[k] > 0) return k;
    return 0;
  }
};

namespace detail {

inline QualityHistogram default_histogram(const AbilityDistribution& dist) {
  return QualityHistogram(dist.lower(), dist.effective_upper(), 50);
}

inline BatchStats aggregate(std::string mechanism, std::vector<TaskRecord> tasks, std::vector<std::size_t> ties,
                            const ContestParams& params, const AbilityDistribution& dist, std::uint64_t seed) {
  BatchStats st;
  st.mechanism = std::move(mechanism);
  st.seed = seed;
  st.quality = default_histogram(dist);
  double payout = 0.0;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const auto& r = tasks[k];
    if (!r.best_quality) ++st.no_contributor_count;
    if (st.winner_histogram.size() <= r.n_winners) st.winner_histogram.resize(r.n_winners + 1, 0);
    ++st.winner_histogram[r.n_winners];
    st.quality.add(r.best_quality);
    payout += static_cast<double>(r.n_winners) * params.prize;
    st.ties += ties[k];
  }
  if (!tasks.empty()) st.mean_payout = payout / static_cast<double>(tasks.size());
  st.tasks = std::move(tasks);
  return st;
}

}  // namespace detail

/// Independent tasks under the collective invitation contest. Task k draws
/// from substream (master_seed, k), so results do not depend on `threads`.
inline BatchStats simulate_batch(const OrderTree& t, const ThresholdProfile& prof, const ContestParams& params,
                                 const AbilityDistribution& dist, std::size_t n_tasks, std::uint64_t master_seed,
                                 std::size_t threads = 1) {
  std::vector<TaskRecord> tasks(n_tasks);
  std::vector<std::size_t> ties(n_tasks, 0);
  parallel_for(n_tasks, threads, [&](std::size_t k) {
    CounterRng rng(master_seed, k);
    auto sample = sample_task(t, prof, dist, rng);
    auto out = run_award(t, sample);
    tasks[k] = {k, out.best_quality, out.n_contributors, out.winners.size()};
    ties[k] = out.ties;
  });
  return detail::aggregate("CIM", std::move(tasks), std::move(ties), params, dist, master_seed);
}

/// Common threshold of a symmetric contest among d agents.
inline double mn_threshold(std::size_t d, const ContestParams& params, const AbilityDistribution& dist) {
  if (d == 0) throw std::invalid_argument("baseline needs at least one agent");
  return d == 1 ? dist.lower() : leaf_threshold(d, params, dist);
}

/// No-invitation baseline: only the requester's d neighbours compete and the
/// unique best contributor wins.
inline BatchStats mn_baseline(std::size_t d, const ContestParams& params, const AbilityDistribution& dist,
                              std::size_t n_tasks, std::uint64_t master_seed, std::size_t threads = 1) {
  params.validate();
  const double r = mn_threshold(d, params, dist);
  std::vector<TaskRecord> tasks(n_tasks);
  std::vector<std::size_t> ties(n_tasks, 0);
  parallel_for(n_tasks, threads, [&](std::size_t k) {
    CounterRng rng(master_seed, k);
    TaskRecord rec{k, std::nullopt, 0, 0};
    std::size_t at_best = 0;
    for (std::size_t a = 0; a < d; ++a) {
      double q = dist.sample(rng);
      if (!(d == 1 || q > r)) continue;
      ++rec.n_contributors;
      if (!rec.best_quality || q > *rec.best_quality) {
        rec.best_quality = q;
        at_best = 1;
      } else if (q == *rec.best_quality) {
        ++at_best;
      }
    }
    if (rec.best_quality) {
      rec.n_winners = at_best == 1 ? 1 : 0;
      if (at_best > 1) ties[k] = at_best;
    }
    tasks[k] = rec;
  });
  return detail::aggregate("MN", std::move(tasks), std::move(ties), params, dist, master_seed);
}

struct DynamicsCurve {
  std::vector<std::size_t> population;   ///< prefix sizes 1..|U|
  std::vector<double> mean_best;
  std::vector<double> sd_best;
  std::vector<double> endpoints;         ///< per repetition
  double reference = 0.0;                ///< E[max of |U| draws]
};

/// Running best contributed quality as agents join in `order`, averaged over
/// repetitions. Quality is 0 while nobody in the prefix contributes.
inline DynamicsCurve population_dynamics(const OrderTree& t, const ThresholdProfile& prof, const ContestParams& params,
                                         const AbilityDistribution& dist, std::span<const NodeId> order,
                                         std::size_t n_repetitions, std::uint64_t master_seed,
                                         std::size_t threads = 1) {
  (void)params;
  const std::size_t m = order.size();
  if (m != t.agent_count()) throw std::invalid_argument("dynamics order must list every agent exactly once");
  DynamicsCurve c;
  c.reference = expected_max(dist, m);
  c.population.resize(m);
  std::iota(c.population.begin(), c.population.end(), std::size_t{1});
  std::vector<std::vector<double>> runs(n_repetitions);
  parallel_for(n_repetitions, threads, [&](std::size_t rep) {
    CounterRng rng(master_seed, rep);
    auto s = sample_task(t, prof, dist, rng);
    std::vector<double> curve(m);
    double best = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      NodeId v = order[k];
      if (s.contributed[v]) best = std::max(best, s.ability[v]);
      curve[k] = best;
    }
    runs[rep] = std::move(curve);
  });
  c.mean_best.assign(m, 0.0);
  c.sd_best.assign(m, 0.0);
  if (n_repetitions == 0) return c;
  for (std::size_t k = 0; k < m; ++k) {
    double mean = 0.0, m2 = 0.0;
    for (std::size_t rep = 0; rep < n_repetitions; ++rep) {
      double x = runs[rep][k];
      double delta = x - mean;
      mean += delta / static_cast<double>(rep + 1);
      m2 += delta * (x - mean);
    }
    c.mean_best[k] = mean;
    c.sd_best[k] = n_repetitions > 1 ? std::sqrt(m2 / static_cast<double>(n_repetitions - 1)) : 0.0;
  }
  for (auto& r : runs) c.endpoints.push_back(m ? r.back() : 0.0);
  return c;
}

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_tasks_csv(std::ostream& os, const BatchStats& st) {
  os << "task_id,best_quality,n_contributors,n_winners\n";
  for (auto& r : st.tasks)
    os << r.task_id << ',' << (r.best_quality ? format_double(*r.best_quality) : std::string()) << ','
       << r.n_contributors << ',' << r.n_winners << '\n';
}

inline nlohmann::json batch_summary_json(const BatchStats& st) {
  nlohmann::json q = {{"lo", st.quality.lo},
                      {"hi", st.quality.hi},
                      {"counts", st.quality.counts},
                      {"overflow", st.quality.overflow},
                      {"no_contribution", st.quality.none}};
  auto median = st.median_best_quality();
  return {{"mechanism", st.mechanism},
          {"tasks", st.task_count()},
          {"no_contributor_count", st.no_contributor_count},
          {"winner_histogram", st.winner_histogram},
          {"single_winner_fraction", st.single_winner_fraction()},
          {"mean_payout", st.mean_payout},
          {"median_best_quality", median ? nlohmann::json(*median) : nlohmann::json(nullptr)},
          {"best_quality_histogram", std::move(q)},
          {"ties", st.ties},
          {"seed", st.seed},
          {"rng", st.rng}};
}

inline void write_dynamics_csv(std::ostream& os, const DynamicsCurve& c) {
  os << "agents,mean_best_quality,sd_best_quality,reference\n";
  for (std::size_t k = 0; k < c.population.size(); ++k)
    os << c.population[k] << ',' << format_double(c.mean_best[k]) << ',' << format_double(c.sd_best[k]) << ','
       << format_double(c.reference) << '\n';
}

}  // namespace cim
