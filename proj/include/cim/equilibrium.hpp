#pragma once

// Threshold equilibrium of the collective invitation contest on a fixed
// order tree.
//
// Every agent contributes iff her ability exceeds a threshold r_i. Leaves
// share the largest threshold F^-1((c/M)^(1/(|U|-1))). The rest are found in
// descending order: among agents whose whole subtree is solved, the ones with
// the largest probability that nobody below them contributes (p_lom) have the
// next-highest threshold, obtained in closed form from the competitors already
// solved (J_i) and the count of those still open (Q_i):
//
//   F(r_i)^|Q_i| = (c/M) / prod_{j in J_i} F(r_j).
//
// The last agent, when alone with |Q_i| = 0, contributes unconditionally.
// All products are carried as sums of log-cdfs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <queue>
#include <unordered_map>
#include <vector>

#include "cim/distribution.hpp"
#include "cim/errors.hpp"
#include "cim/order_tree.hpp"

namespace cim {

struct ContestParams {
  double prize = 1.0;
  double cost = 0.1;

  void validate() const {
    if (!(prize > 0.0) || !std::isfinite(prize)) throw std::invalid_argument("prize must be positive");
    if (!(cost > 0.0)) throw std::invalid_argument("cost must be positive");
    if (!(cost < prize)) throw std::invalid_argument("cost must be below the prize");
  }
  double log_ratio() const { return std::log(cost / prize); }
};

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct ThresholdProfile {
  std::vector<double> threshold;        ///< by node id; NaN outside U
  std::vector<double> log_lom;          ///< log p_lom by node id; NaN outside U
  std::optional<NodeId> unconditional;

  double r(NodeId i) const { return threshold[i]; }
  double lom(NodeId i) const { return std::exp(log_lom[i]); }
  bool is_unconditional(NodeId i) const { return unconditional && *unconditional == i; }
  bool contributes(NodeId i, double ability) const { return is_unconditional(i) || ability > threshold[i]; }
};

struct SolveBatch {
  std::vector<NodeId> agents;
  double threshold = 0.0;      ///< largest threshold in the batch
  double min_threshold = 0.0;
};

struct SolveTrace {
  std::vector<SolveBatch> batches;
  std::vector<std::size_t> q_size;   ///< |Q_i| at solve time, by node id
  std::vector<std::size_t> j_size;   ///< |J_i| at solve time, by node id
  std::size_t root_solves = 0;       ///< closed-form threshold evaluations
  std::size_t max_solves_per_batch = 0;
};

struct SolveOptions {
  bool typed = false;
  /// Agents whose p_lom agree within this relative tolerance share a batch.
  double batch_rel_tol = 1e-12;
};

/// F^-1((c/M)^(1/(n-1))). Accepts c == M, which yields the upper bound.
inline double leaf_threshold(std::size_t n_agents, const ContestParams& params, const AbilityDistribution& dist) {
  if (n_agents < 2) throw std::invalid_argument("leaf_threshold needs at least two agents");
  if (!(params.cost > 0.0) || params.cost > params.prize) throw std::invalid_argument("need 0 < c <= M");
  double log_p = params.log_ratio() / static_cast<double>(n_agents - 1);
  if (log_p == 0.0) return dist.upper();
  return dist.quantile_log(log_p);
}

/// prod_{k in D_i} F(r_k). Every descendant must already have a threshold.
inline double p_lom(NodeId i, std::span<const double> thresholds, const OrderTree& t, const AbilityDistribution& dist) {
  double log_sum = 0.0;
  for (NodeId k : LeadSets(t).descendants(i)) {
    if (k >= thresholds.size() || std::isnan(thresholds[k]))
      throw std::invalid_argument("p_lom: descendant threshold unknown");
    log_sum += dist.log_cdf(thresholds[k]);
  }
  return std::exp(log_sum);
}

namespace detail {

// Sum of log-cdf contributions of i's children in a fixed (sorted) order so
// that agents of one type get bit-identical p_lom whatever their child order.
inline double subtree_log_lom(NodeId i, const OrderTree& t, std::span<const double> child_term) {
  std::vector<double> terms;
  terms.reserve(t.children(i).size());
  for (NodeId c : t.children(i)) terms.push_back(child_term[c]);
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double x : terms) s += x;
  return s;
}

}  // namespace detail

inline ThresholdProfile solve_equilibrium(const OrderTree& t, const ContestParams& params,
                                          const AbilityDistribution& dist, SolveTrace* trace = nullptr,
                                          const SolveOptions& opts = {}) {
  params.validate();
  const std::size_t n = t.node_count();
  const std::size_t n_agents = t.agent_count();
  if (n_agents == 0) throw std::invalid_argument("equilibrium needs at least one invited agent");

  ThresholdProfile prof;
  prof.threshold.assign(n, kNaN);
  prof.log_lom.assign(n, kNaN);
  SolveTrace local;
  SolveTrace& tr = trace ? *trace : local;
  tr = SolveTrace{};
  tr.q_size.assign(n, 0);
  tr.j_size.assign(n, 0);

  const double l = dist.lower();
  if (n_agents == 1) {
    NodeId only = t.agents().front();
    prof.threshold[only] = l;
    prof.log_lom[only] = 0.0;
    prof.unconditional = only;
    tr.batches.push_back({{only}, l, l});
    return prof;
  }

  std::optional<TypeSignature> types;
  if (opts.typed) types = canonical_types(t);

  const double log_ratio = params.log_ratio();
  // log F(r_c) + log p_lom(c): what a solved child contributes to its parent's p_lom.
  std::vector<double> child_term(n, 0.0);
  std::vector<std::size_t> pending(n, 0);
  for (NodeId v : t.agents()) pending[v] = t.children(v).size();

  double log_solved = 0.0;      // sum of log F(r_j) over the solved set A
  std::size_t solved = 0;       // |A|
  const double tol_scale = std::max(1.0, dist.effective_upper());

  // Ready agents keyed by log p_lom, largest first; ties broken by node id.
  using Entry = std::pair<double, NodeId>;
  auto cmp = [](const Entry& a, const Entry& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second > b.second;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> ready(cmp);

  auto mark_solved = [&](std::span<const NodeId> batch) {
    std::vector<NodeId> sorted(batch.begin(), batch.end());
    std::sort(sorted.begin(), sorted.end());
    for (NodeId v : sorted) {
      double lf = dist.log_cdf(prof.threshold[v]);
      log_solved += lf;
      child_term[v] = lf + prof.log_lom[v];
    }
    solved += sorted.size();
    for (NodeId v : sorted) {
      NodeId par = t.parent(v);
      if (par == t.root()) continue;
      if (--pending[par] == 0) {
        prof.log_lom[par] = detail::subtree_log_lom(par, t, child_term);
        ready.emplace(prof.log_lom[par], par);
      }
    }
  };

  // Leaves.
  std::vector<NodeId> leaves;
  for (NodeId v : t.agents())
    if (t.is_leaf(v)) leaves.push_back(v);
  const double r_leaf = leaf_threshold(n_agents, params, dist);
  for (NodeId v : leaves) {
    prof.threshold[v] = r_leaf;
    prof.log_lom[v] = 0.0;
    tr.q_size[v] = n_agents - 1;
  }
  ++tr.root_solves;
  tr.max_solves_per_batch = 1;
  tr.batches.push_back({leaves, r_leaf, r_leaf});
  mark_solved(leaves);

  const double log_tie = std::log1p(-opts.batch_rel_tol);
  while (solved < n_agents) {
    if (ready.empty()) throw ConsistencyError("no agent ready although thresholds remain open");
    std::vector<NodeId> batch;
    const double top = ready.top().first;
    while (!ready.empty() && ready.top().first >= top + log_tie) {
      batch.push_back(ready.top().second);
      ready.pop();
    }
    if (types) {
      // Same type forces the same batch regardless of float noise.
      std::vector<std::uint32_t> labels;
      for (NodeId v : batch) labels.push_back(types->label[v]);
      std::vector<Entry> keep;
      while (!ready.empty()) {
        auto e = ready.top();
        ready.pop();
        if (std::find(labels.begin(), labels.end(), types->label[e.second]) != labels.end())
          batch.push_back(e.second);
        else
          keep.push_back(e);
      }
      for (auto& e : keep) ready.push(e);
    }
    std::sort(batch.begin(), batch.end());

    // Unsolved competitors of any batch member: everyone open except itself.
    const std::size_t q = n_agents - 1 - solved;
    std::unordered_map<std::uint32_t, double> by_type;
    std::size_t solves_here = 0;
    double bmax = -kInf, bmin = kInf;
    for (NodeId i : batch) {
      const std::size_t d_size = t.subtree_size(i) - 1;
      const double log_j = log_solved - prof.log_lom[i];  // A minus D_i
      tr.q_size[i] = q;
      tr.j_size[i] = solved - d_size;
      double r = 0.0;
      if (q == 0) {
        // Every competitor has a higher threshold: contributing at the
        // bottom of the support is already profitable.
        if (params.prize * std::exp(log_j) - params.cost < -1e-8 * params.prize)
          throw ConsistencyError("last agent has |Q| = 0 but negative utility at the lower bound");
        r = l;
        prof.unconditional = i;
      } else if (auto hit = types ? by_type.find(types->label[i]) : by_type.end(); types && hit != by_type.end()) {
        r = hit->second;
      } else {
        const double log_radicand = (log_ratio - log_j) / static_cast<double>(q);
        if (log_radicand > 1e-12)
          throw ConsistencyError("threshold radicand exceeds one for agent " + std::to_string(i));
        r = log_radicand >= 0.0 ? dist.effective_upper() : dist.quantile_log(log_radicand);
        ++solves_here;
        if (types) by_type.emplace(types->label[i], r);
      }
      prof.threshold[i] = r;
      bmax = std::max(bmax, r);
      bmin = std::min(bmin, r);
    }
    if (batch.size() > 1 && prof.unconditional && std::find(batch.begin(), batch.end(), *prof.unconditional) != batch.end())
      throw ConsistencyError("unconditional contributor shares its batch");

    // New thresholds may not exceed any solved competitor's threshold.
    for (NodeId i : batch) {
      for (auto b = tr.batches.rbegin(); b != tr.batches.rend(); ++b) {
        auto outside = std::find_if(b->agents.begin(), b->agents.end(), [&](NodeId j) { return !t.in_subtree(i, j); });
        if (outside == b->agents.end()) continue;
        double min_j = kInf;
        for (NodeId j : b->agents)
          if (!t.in_subtree(i, j)) min_j = std::min(min_j, prof.threshold[j]);
        if (prof.threshold[i] > min_j + 1e-9 * tol_scale)
          throw ConsistencyError("threshold of agent " + std::to_string(i) + " exceeds a solved competitor's");
        break;
      }
    }
    if (!tr.batches.empty() && !(bmax < tr.batches.back().min_threshold))
      throw ConsistencyError("batch thresholds are not strictly decreasing");

    tr.root_solves += solves_here;
    tr.max_solves_per_batch = std::max(tr.max_solves_per_batch, solves_here);
    tr.batches.push_back({batch, bmax, bmin});
    mark_solved(batch);
  }
  return prof;
}

/// Same thresholds, bit for bit, computing the closed form once per agent
/// type in each batch.
inline ThresholdProfile solve_equilibrium_typed(const OrderTree& t, const ContestParams& params,
                                                const AbilityDistribution& dist, SolveTrace* trace = nullptr) {
  return solve_equilibrium(t, params, dist, trace, SolveOptions{.typed = true});
}

/// pi_i(q) = M * prod_{j in P_i} F(max{q, r_j}) - c, answered in
/// O(log |U| + #{j : r_j > q}) from a global descending threshold order.
class UtilityEvaluator {
 public:
  UtilityEvaluator(const OrderTree& t, const ThresholdProfile& prof, const ContestParams& params,
                   const AbilityDistribution& dist)
      : tree_(&t), dist_(&dist), params_(params) {
    order_.assign(t.agents().begin(), t.agents().end());
    std::sort(order_.begin(), order_.end(), [&](NodeId a, NodeId b) {
      if (prof.threshold[a] != prof.threshold[b]) return prof.threshold[a] > prof.threshold[b];
      return a < b;
    });
    sorted_r_.reserve(order_.size());
    log_f_.reserve(order_.size());
    for (NodeId v : order_) {
      sorted_r_.push_back(prof.threshold[v]);
      log_f_.push_back(dist.log_cdf(prof.threshold[v]));
    }
  }

  double operator()(NodeId i, double q) const {
    // Agents with r_j > q form a prefix of the descending order.
    auto above = static_cast<std::size_t>(
        std::upper_bound(sorted_r_.begin(), sorted_r_.end(), q, [](double x, double r) { return x > r; }) -
        sorted_r_.begin());
    double log_prod = 0.0;
    std::size_t in_subtree_above = 0;
    for (std::size_t k = 0; k < above; ++k) {
      if (tree_->in_subtree(i, order_[k])) {
        ++in_subtree_above;
        continue;
      }
      log_prod += log_f_[k];
    }
    const std::size_t below_total = order_.size() - above;
    const std::size_t below_in_subtree = tree_->subtree_size(i) - in_subtree_above;
    const std::size_t below_competitors = below_total - below_in_subtree;
    if (below_competitors > 0) log_prod += static_cast<double>(below_competitors) * dist_->log_cdf(q);
    return params_.prize * std::exp(log_prod) - params_.cost;
  }

  /// Realised utility of the threshold strategy: pi_i(q) if i contributes, else 0.
  double realized(NodeId i, double q, const ThresholdProfile& prof) const {
    return prof.contributes(i, q) ? (*this)(i, q) : 0.0;
  }

 private:
  const OrderTree* tree_;
  const AbilityDistribution* dist_;
  ContestParams params_;
  std::vector<NodeId> order_;
  std::vector<double> sorted_r_;
  std::vector<double> log_f_;
};

inline double expected_utility(NodeId i, double q, const ThresholdProfile& prof, const OrderTree& t,
                               const ContestParams& params, const AbilityDistribution& dist) {
  return UtilityEvaluator(t, prof, params, dist)(i, q);
}

/// How the best-response oracle updates. Plain Jacobi can fall into a
/// two-cycle; Gauss-Seidel can settle on the low end of a zero-utility plateau.
enum class BestResponseMode { jacobi, gauss_seidel, damped };

/// Test oracle: synchronous best-response iteration from the upper bounds
/// F^-1((c/M)^(1/|P_i|)), each response found by bisection. The damped mode
/// moves halfway toward the response each round.

inline ThresholdProfile brute_force_equilibrium(const OrderTree& t, const ContestParams& params,
                                                const AbilityDistribution& dist, std::size_t max_rounds = 10000,
                                                double tol = 1e-10, BestResponseMode mode = BestResponseMode::damped) {
  params.validate();
  const std::size_t n = t.node_count();
  const auto agents = t.agents();
  if (agents.empty()) throw std::invalid_argument("equilibrium needs at least one invited agent");
  LeadSets lead(t);
  const double l = dist.lower();
  const double log_ratio = params.log_ratio();
  const double scale = std::max(1.0, dist.effective_upper());

  std::vector<std::vector<NodeId>> comp(n);
  std::vector<double> bound(n, l);
  std::vector<double> r(n, kNaN);
  for (NodeId i : agents) {
    comp[i] = lead.competitors(i);
    if (!comp[i].empty()) bound[i] = dist.quantile_log(log_ratio / static_cast<double>(comp[i].size()));
    r[i] = bound[i];
  }

  // Competitor thresholds of the agent being updated, sorted, with suffix
  // sums of log F so that log P(win at x) = k log F(x) + tail[k].
  std::vector<double> sorted, tail;
  auto load = [&](NodeId i, const std::vector<double>& cur) {
    sorted.clear();
    for (NodeId j : comp[i]) sorted.push_back(cur[j]);
    std::sort(sorted.begin(), sorted.end());
    tail.assign(sorted.size() + 1, 0.0);
    for (std::size_t k = sorted.size(); k-- > 0;) tail[k] = tail[k + 1] + dist.log_cdf(sorted[k]);
  };
  auto log_win = [&](double x) {
    auto k = static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), x) - sorted.begin());
    return (k ? static_cast<double>(k) * dist.log_cdf(x) : 0.0) + tail[k];
  };

  double change = kInf;
  std::vector<double> next(n, kNaN);
  for (std::size_t round = 0; round < max_rounds; ++round) {
    change = 0.0;
    for (NodeId i : agents) {
      double resp;
      load(i, r);
      if (comp[i].empty() || log_win(l) > log_ratio) {
        resp = l;
      } else {
        double lo = l, hi = bound[i];
        while (hi - lo > 1e-13 * scale) {
          double mid = 0.5 * (lo + hi);
          if (mid == lo || mid == hi) break;
          (log_win(mid) < log_ratio ? lo : hi) = mid;
        }
        resp = 0.5 * (lo + hi);
      }
      change = std::max(change, std::abs(resp - r[i]));
      next[i] = resp;
      if (mode == BestResponseMode::gauss_seidel) r[i] = resp;
    }
    if (mode == BestResponseMode::damped)
      for (NodeId i : agents) r[i] = 0.5 * (r[i] + next[i]);
    else
      std::swap(r, next);
    if (change < tol) break;
  }
  if (!(change < tol)) throw ConvergenceError("best-response iteration did not converge", change);

  ThresholdProfile prof;
  prof.threshold = std::move(r);
  prof.log_lom.assign(n, kNaN);
  for (NodeId i : agents) {
    double s = 0.0;
    for (NodeId k : lead.descendants(i)) s += dist.log_cdf(prof.threshold[k]);
    prof.log_lom[i] = s;
  }
  // The unique agent at the bottom of the support, if any.
  std::size_t at_floor = 0;
  NodeId floor_agent = kNoNode;
  for (NodeId i : agents)
    if (prof.threshold[i] <= l + 1e-9 * scale) {
      prof.threshold[i] = l;
      ++at_floor;
      floor_agent = i;
    }
  if (at_floor == 1) prof.unconditional = floor_agent;
  return prof;
}

/// node_id, threshold, p_lom, type_id, is_unconditional. Node ids are the
/// original dataset ids.
inline void write_threshold_csv(std::ostream& os, const OrderTree& t, const ThresholdProfile& prof,
                                const TypeSignature& types, const SocialGraph& g) {
  os << "node_id,threshold,p_lom,type_id,is_unconditional\n";
  char buf[64];
  for (NodeId v : t.agents()) {
    os << g.original_id(v) << ',';
    std::snprintf(buf, sizeof buf, "%.17g", prof.threshold[v]);
    os << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", prof.lom(v));
    os << buf << ',' << types.label[v] << ',' << (prof.is_unconditional(v) ? 1 : 0) << '\n';
  }
}

}  // namespace cim
