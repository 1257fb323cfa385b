#pragma once

// Social graphs, invitation profiles and the invitation graph they induce.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cim/errors.hpp"

namespace cim {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

/// Undirected simple graph in CSR form. Node ids are dense; the ids that
/// appeared in the source file are kept so reports can use them.
class SocialGraph {
 public:
  SocialGraph() = default;

  /// Builds from an arbitrary edge list. Self-loops are dropped and
  /// duplicates (in either orientation) are merged.
  SocialGraph(std::size_t node_count, std::vector<std::pair<NodeId, NodeId>> edges,
              std::vector<std::int64_t> original_ids = {}, NodeId requester = 0)
      : requester_(requester) {
    if (original_ids.empty()) {
      original_ids.resize(node_count);
      for (std::size_t i = 0; i < node_count; ++i) original_ids[i] = static_cast<std::int64_t>(i);
    }
    if (original_ids.size() != node_count)
      throw std::invalid_argument("original id table does not match node count");
    original_ids_ = std::move(original_ids);
    for (std::size_t i = 0; i < node_count; ++i) dense_of_.emplace(original_ids_[i], static_cast<NodeId>(i));

    std::vector<std::pair<NodeId, NodeId>> arcs;
    arcs.reserve(edges.size() * 2);
    for (auto [u, v] : edges) {
      if (u >= node_count || v >= node_count) throw std::out_of_range("edge endpoint out of range");
      if (u == v) continue;
      arcs.emplace_back(u, v);
      arcs.emplace_back(v, u);
    }
    std::sort(arcs.begin(), arcs.end());
    arcs.erase(std::unique(arcs.begin(), arcs.end()), arcs.end());

    offsets_.assign(node_count + 1, 0);
    for (auto [u, v] : arcs) ++offsets_[u + 1];
    for (std::size_t i = 0; i < node_count; ++i) offsets_[i + 1] += offsets_[i];
    targets_.resize(arcs.size());
    for (std::size_t k = 0; k < arcs.size(); ++k) targets_[k] = arcs[k].second;

    // Slot of the reverse arc, so per-arc flags can be mirrored in O(1).
    mirror_.resize(arcs.size());
    for (NodeId u = 0; u < node_count; ++u)
      for (std::size_t s = offsets_[u]; s < offsets_[u + 1]; ++s) mirror_[s] = slot(targets_[s], u);

    if (node_count > 0 && requester_ >= node_count) throw std::out_of_range("requester out of range");
  }

  std::size_t node_count() const noexcept { return original_ids_.size(); }
  std::size_t edge_count() const noexcept { return targets_.size() / 2; }
  NodeId requester() const noexcept { return requester_; }

  std::span<const NodeId> neighbors(NodeId u) const {
    return {targets_.data() + offsets_[u], targets_.data() + offsets_[u + 1]};
  }
  std::size_t degree(NodeId u) const { return offsets_[u + 1] - offsets_[u]; }

  /// Arc slots index per-(u,v) data; slot(u, v) is kNoSlot when there is no edge.
  static constexpr std::size_t kNoSlot = std::numeric_limits<std::size_t>::max();
  std::size_t arc_count() const noexcept { return targets_.size(); }
  std::size_t first_slot(NodeId u) const { return offsets_[u]; }
  std::size_t slot(NodeId u, NodeId v) const {
    auto nb = neighbors(u);
    auto it = std::lower_bound(nb.begin(), nb.end(), v);
    if (it == nb.end() || *it != v) return kNoSlot;
    return offsets_[u] + static_cast<std::size_t>(it - nb.begin());
  }
  std::size_t mirror(std::size_t s) const { return mirror_[s]; }
  bool has_edge(NodeId u, NodeId v) const { return slot(u, v) != kNoSlot; }

  std::int64_t original_id(NodeId u) const { return original_ids_[u]; }
  std::span<const std::int64_t> original_ids() const noexcept { return original_ids_; }
  NodeId dense_id(std::int64_t original) const {
    auto it = dense_of_.find(original);
    if (it == dense_of_.end()) throw std::out_of_range("unknown node id " + std::to_string(original));
    return it->second;
  }
  bool contains_original(std::int64_t original) const { return dense_of_.contains(original); }

  SocialGraph with_requester(NodeId p) const {
    if (p >= node_count()) throw std::out_of_range("requester out of range");
    SocialGraph g = *this;
    g.requester_ = p;
    return g;
  }

 private:
  std::vector<std::size_t> offsets_{0};
  std::vector<NodeId> targets_;
  std::vector<std::size_t> mirror_;
  std::vector<std::int64_t> original_ids_;
  std::unordered_map<std::int64_t, NodeId> dense_of_;
  NodeId requester_ = 0;
};

/// Parses whitespace-separated integer pairs, one edge per line. Blank lines
/// and lines starting with '#' are skipped. Original ids are remapped to dense
/// ids in ascending order of the original value.
inline SocialGraph load_edge_list(std::istream& in) {
  std::vector<std::pair<std::int64_t, std::int64_t>> raw;
  std::string line;
  std::size_t lineno = 0;
  auto parse_int = [&](std::string_view tok) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size())
      throw ParseError("malformed node id '" + std::string(tok) + "'", lineno);
    if (v < 0) throw ParseError("negative node id", lineno);
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t b = 0;
    while (b < line.size() && std::isspace(static_cast<unsigned char>(line[b]))) ++b;
    if (b == line.size() || line[b] == '#') continue;
    std::vector<std::string_view> tokens;
    std::string_view rest(line);
    std::size_t i = b;
    while (i < rest.size()) {
      while (i < rest.size() && std::isspace(static_cast<unsigned char>(rest[i]))) ++i;
      std::size_t j = i;
      while (j < rest.size() && !std::isspace(static_cast<unsigned char>(rest[j]))) ++j;
      if (j > i) tokens.push_back(rest.substr(i, j - i));
      i = j;
    }
    if (tokens.size() != 2) throw ParseError("expected two node ids", lineno);
    raw.emplace_back(parse_int(tokens[0]), parse_int(tokens[1]));
  }
  if (raw.empty()) throw ParseError("edge list is empty");

  std::vector<std::int64_t> ids;
  ids.reserve(raw.size() * 2);
  for (auto [u, v] : raw) {
    ids.push_back(u);
    ids.push_back(v);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  auto dense = [&](std::int64_t v) {
    return static_cast<NodeId>(std::lower_bound(ids.begin(), ids.end(), v) - ids.begin());
  };
  std::vector<std::pair<NodeId, NodeId>> edges;
  edges.reserve(raw.size());
  for (auto [u, v] : raw) edges.emplace_back(dense(u), dense(v));
  std::size_t n = ids.size();
  return SocialGraph(n, std::move(edges), std::move(ids));
}

inline SocialGraph load_edge_list(std::string_view text) {
  std::istringstream in{std::string(text)};
  return load_edge_list(in);
}

/// Per-arc invitation choices. The requester always invites every neighbour.
class InvitationProfile {
 public:
  /// Everyone invites everyone.
  explicit InvitationProfile(const SocialGraph& g) : invites_(g.arc_count(), 1), requester_(g.requester()) {}

  bool invites(const SocialGraph& g, NodeId from, NodeId to) const {
    if (from == requester_) return g.has_edge(from, to);
    auto s = g.slot(from, to);
    return s != SocialGraph::kNoSlot && invites_[s] != 0;
  }
  bool invites_slot(std::size_t s) const { return invites_[s] != 0; }

  /// Replaces agent `who`'s invitation set. Non-neighbours are rejected.
  void set_invites(const SocialGraph& g, NodeId who, std::span<const NodeId> invited) {
    if (who == requester_) return;
    for (std::size_t s = g.first_slot(who); s < g.first_slot(who) + g.degree(who); ++s) invites_[s] = 0;
    for (NodeId v : invited) {
      auto s = g.slot(who, v);
      if (s == SocialGraph::kNoSlot)
        throw std::invalid_argument("agent " + std::to_string(g.original_id(who)) + " cannot invite non-neighbour " +
                                    std::to_string(g.original_id(v)));
      invites_[s] = 1;
    }
  }
  void set_invite(const SocialGraph& g, NodeId who, NodeId to, bool on) {
    if (who == requester_) return;
    auto s = g.slot(who, to);
    if (s == SocialGraph::kNoSlot) throw std::invalid_argument("not a neighbour");
    invites_[s] = on ? 1 : 0;
  }
  void invite_nobody(const SocialGraph& g, NodeId who) { set_invites(g, who, {}); }

  std::vector<NodeId> invited_by(const SocialGraph& g, NodeId who) const {
    std::vector<NodeId> out;
    for (NodeId v : g.neighbors(who))
      if (invites(g, who, v)) out.push_back(v);
    return out;
  }

 private:
  std::vector<char> invites_;
  NodeId requester_;
};

/// Parses {"node": [invited neighbour ids...]} keyed by original ids.
/// Omitted nodes invite all their neighbours.
inline InvitationProfile profile_from_json(const SocialGraph& g, const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("invitation profile must be a JSON object");
  InvitationProfile profile(g);
  for (auto& [key, value] : j.items()) {
    std::int64_t who = 0;
    auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), who);
    if (ec != std::errc{} || ptr != key.data() + key.size()) throw ParseError("bad node key '" + key + "'");
    if (!value.is_array()) throw ParseError("invitation list for " + key + " must be an array");
    std::vector<NodeId> invited;
    for (auto& v : value) invited.push_back(g.dense_id(v.get<std::int64_t>()));
    profile.set_invites(g, g.dense_id(who), invited);
  }
  return profile;
}

inline nlohmann::json profile_to_json(const SocialGraph& g, const InvitationProfile& profile) {
  nlohmann::json j = nlohmann::json::object();
  for (NodeId u = 0; u < g.node_count(); ++u) {
    if (u == g.requester()) continue;
    auto inv = profile.invited_by(g, u);
    if (inv.size() == g.degree(u)) continue;
    nlohmann::json arr = nlohmann::json::array();
    for (NodeId v : inv) arr.push_back(g.original_id(v));
    j[std::to_string(g.original_id(u))] = std::move(arr);
  }
  return j;
}

/// The subgraph formed by the agents who received an invitation.
/// Indexed by the social graph's node ids; non-members have no edges.
struct InvitationGraph {
  NodeId requester = kNoNode;
  std::vector<NodeId> invited;            ///< U, ascending
  std::vector<char> member;               ///< member[v]: v in U or v == requester
  std::vector<std::vector<NodeId>> adj;   ///< E', sorted

  std::size_t node_count() const noexcept { return member.size(); }
  bool contains(NodeId v) const { return v < member.size() && member[v]; }
  std::size_t edge_count() const {
    std::size_t twice = 0;
    for (auto& a : adj) twice += a.size();
    return twice / 2;
  }
};

/// Fixpoint of "j joins U when some member of U or the requester invites j".
/// An edge survives when at least one endpoint invited the other.
inline InvitationGraph derive_invitation_graph(const SocialGraph& g, const InvitationProfile& profile) {
  const std::size_t n = g.node_count();
  const NodeId p = g.requester();
  InvitationGraph h;
  h.requester = p;
  h.member.assign(n, 0);
  h.adj.assign(n, {});
  if (n == 0) return h;

  std::vector<NodeId> queue{p};
  h.member[p] = 1;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    NodeId u = queue[head];
    for (std::size_t s = g.first_slot(u); s < g.first_slot(u) + g.degree(u); ++s) {
      if (u != p && !profile.invites_slot(s)) continue;
      NodeId v = g.neighbors(u)[s - g.first_slot(u)];
      if (!h.member[v]) {
        h.member[v] = 1;
        queue.push_back(v);
      }
    }
  }
  for (NodeId u = 0; u < n; ++u) {
    if (!h.member[u]) continue;
    if (u != p) h.invited.push_back(u);
    auto nb = g.neighbors(u);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      NodeId v = nb[k];
      if (!h.member[v]) continue;
      std::size_t s = g.first_slot(u) + k;
      bool u_invites = (u == p) || profile.invites_slot(s);
      bool v_invites = (v == p) || profile.invites_slot(g.mirror(s));
      if (u_invites || v_invites) h.adj[u].push_back(v);
    }
  }
  return h;
}

/// Agents in the order they hear about the task: breadth-first from the
/// requester over the invitation graph, ties broken by node id.
inline std::vector<NodeId> invitation_waves(const InvitationGraph& h) {
  std::vector<NodeId> order;
  if (h.requester == kNoNode || h.node_count() == 0) return order;
  std::vector<char> seen(h.node_count(), 0);
  std::vector<NodeId> queue{h.requester};
  seen[h.requester] = 1;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    for (NodeId v : h.adj[queue[head]]) {
      if (seen[v]) continue;
      seen[v] = 1;
      queue.push_back(v);
      order.push_back(v);
    }
  }
  return order;
}

}  // namespace cim
