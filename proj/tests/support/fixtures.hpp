#pragma once

// Hand-built graphs from the worked examples plus random generators.

#include <algorithm>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "cim/graph.hpp"
#include "cim/order_tree.hpp"
#include "cim/rng.hpp"

namespace cim::testing {

// Social network of the invitation example: requester p = 0,
// a=1 b=2 c=3 d=4 e=5 f=6 g=7 h=8.
struct Fig2 {
  enum : NodeId { p = 0, a, b, c, d, e, f, g, h };
  static constexpr const char* kEdges =
      "# p a b c d e f g h = 0..8\n"
      "0 1\n0 2\n2 3\n2 4\n3 5\n4 5\n5 6\n1 7\n4 8\n";

  static SocialGraph graph() { return load_edge_list(kEdges); }
  /// a and d invite nobody, everyone else invites all.
  static InvitationProfile profile(const SocialGraph& g) {
    InvitationProfile prof(g);
    prof.invite_nobody(g, a);
    prof.invite_nobody(g, d);
    return prof;
  }
};

// Order tree used to illustrate agent types (as a social graph it is a tree,
// so it is its own order tree).
// p=0 a=1 b=2 c=3 d=4 e=5 f=6 g=7 h=8 i=9 j=10 k=11.
struct Fig3 {
  enum : NodeId { p = 0, a, b, c, d, e, f, g, h, i, j, k };
  static constexpr const char* kEdges = "0 1\n0 2\n0 3\n0 4\n1 5\n1 6\n2 7\n3 8\n3 9\n5 10\n9 11\n";
  static SocialGraph graph() { return load_edge_list(kEdges); }
};

// Symmetric tree of the deviation example.
// p=0 k=1 h=2 i=3 di1=4 di2=5 di3=6 j=7 dj1=8 dj2=9 dj3=10.
struct Fig5 {
  enum : NodeId { p = 0, k, h, i, di1, di2, di3, j, dj1, dj2, dj3 };
  static constexpr const char* kEdges = "0 1\n0 7\n1 2\n1 3\n3 4\n3 5\n5 6\n7 8\n7 9\n9 10\n";
  static SocialGraph graph() { return load_edge_list(kEdges); }
};

inline OrderTree all_invite_tree(const SocialGraph& g) {
  return build_order_tree(derive_invitation_graph(g, InvitationProfile(g)));
}

/// Random recursive tree on `agents` + 1 nodes with node 0 as requester.
/// `shape` in [0, 1] biases attachment toward recent nodes (deeper trees).
inline SocialGraph random_tree(std::size_t agents, CounterRng& rng, double shape = 0.5) {
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId v = 1; v <= agents; ++v) {
    NodeId par;
    if (rng.uniform() < shape)
      par = static_cast<NodeId>(v - 1 - rng.below(std::min<std::uint64_t>(v, 3)));
    else
      par = static_cast<NodeId>(rng.below(v));
    edges.emplace_back(par, v);
  }
  return SocialGraph(agents + 1, std::move(edges));
}

/// Random connected graph: a random tree plus `extra` random chords.
inline SocialGraph random_connected(std::size_t nodes, std::size_t extra, CounterRng& rng, double shape = 0.5) {
  auto base = random_tree(nodes - 1, rng, shape);
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < base.node_count(); ++u)
    for (NodeId v : base.neighbors(u))
      if (u < v) edges.emplace_back(u, v);
  for (std::size_t k = 0; k < extra; ++k) {
    auto u = static_cast<NodeId>(rng.below(nodes));
    auto v = static_cast<NodeId>(rng.below(nodes));
    if (u != v) edges.emplace_back(u, v);
  }
  return SocialGraph(nodes, std::move(edges));
}

}  // namespace cim::testing
