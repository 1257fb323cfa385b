#pragma once

// Leading relation of an invitation graph and the order tree that encodes it.
//
// On an undirected graph, i leads j exactly when i is a cut vertex separating
// the requester from j. The tree is read off one pass of Tarjan's
// biconnected-component DFS rooted at the requester: every vertex popped with
// a block hangs below that block's entry vertex.

#include <algorithm>
#include <cstdint>
#include <map>
#include <mutex>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cim/errors.hpp"
#include "cim/graph.hpp"

namespace cim {

class OrderTree {
 public:
  OrderTree() = default;

  /// `parent[v]` is kNoNode for the root and for nodes outside the tree.
  OrderTree(NodeId root, std::vector<NodeId> parent) : root_(root), parent_(std::move(parent)) {
    const std::size_t n = parent_.size();
    if (root_ >= n) throw std::invalid_argument("order tree root out of range");
    in_tree_.assign(n, 0);
    children_.assign(n, {});
    in_tree_[root_] = 1;
    for (NodeId v = 0; v < n; ++v) {
      if (v == root_ || parent_[v] == kNoNode) continue;
      if (parent_[v] >= n) throw std::invalid_argument("parent out of range");
      in_tree_[v] = 1;
      children_[parent_[v]].push_back(v);
    }
    depth_.assign(n, 0);
    subtree_size_.assign(n, 0);
    tin_.assign(n, 0);

    // Preorder with children in ascending id order.
    std::vector<std::pair<NodeId, std::size_t>> stack{{root_, 0}};
    preorder_.push_back(root_);
    while (!stack.empty()) {
      auto& [v, k] = stack.back();
      if (k < children_[v].size()) {
        NodeId c = children_[v][k++];
        if (!in_tree_[parent_[c]]) throw std::invalid_argument("dangling parent");
        depth_[c] = depth_[v] + 1;
        tin_[c] = preorder_.size();
        preorder_.push_back(c);
        stack.emplace_back(c, 0);
      } else {
        std::size_t size = 1;
        for (NodeId c : children_[v]) size += subtree_size_[c];
        subtree_size_[v] = size;
        stack.pop_back();
      }
    }
    for (NodeId v = 0; v < n; ++v) {
      if (v == root_ || !in_tree_[v]) continue;
      agents_.push_back(v);
      if (tin_[v] == 0) throw std::invalid_argument("order tree parent map contains a cycle");
    }
  }

  NodeId root() const noexcept { return root_; }
  std::size_t node_count() const noexcept { return parent_.size(); }
  /// |U|: tree members other than the root.
  std::size_t agent_count() const noexcept { return agents_.size(); }
  std::span<const NodeId> agents() const noexcept { return agents_; }
  bool contains(NodeId v) const { return v < in_tree_.size() && in_tree_[v]; }
  bool is_agent(NodeId v) const { return contains(v) && v != root_; }

  NodeId parent(NodeId v) const { return parent_[v]; }
  std::span<const NodeId> parents() const noexcept { return parent_; }
  std::span<const NodeId> children(NodeId v) const { return children_[v]; }
  bool is_leaf(NodeId v) const { return children_[v].empty(); }
  std::size_t depth(NodeId v) const { return depth_[v]; }
  std::size_t subtree_size(NodeId v) const { return subtree_size_[v]; }

  /// Preorder over root then agents; a subtree is a contiguous slice.
  std::span<const NodeId> preorder() const noexcept { return preorder_; }
  std::size_t preorder_index(NodeId v) const { return tin_[v]; }

  /// True when `a` is a proper ancestor of `b` (the root counts).
  bool is_ancestor(NodeId a, NodeId b) const {
    if (a == b || !contains(a) || !contains(b)) return false;
    return tin_[a] < tin_[b] && tin_[b] < tin_[a] + subtree_size_[a];
  }
  bool in_subtree(NodeId top, NodeId v) const { return v == top || is_ancestor(top, v); }

 private:
  NodeId root_ = kNoNode;
  std::vector<NodeId> parent_;
  std::vector<char> in_tree_;
  std::vector<std::vector<NodeId>> children_;
  std::vector<std::size_t> depth_;
  std::vector<std::size_t> subtree_size_;
  std::vector<std::size_t> tin_;
  std::vector<NodeId> preorder_;
  std::vector<NodeId> agents_;
};

/// Linear-time construction via articulation points. Throws if some invited
/// agent is unreachable from the requester.
inline OrderTree build_order_tree(const InvitationGraph& h) {
  const std::size_t n = h.node_count();
  const NodeId p = h.requester;
  if (p == kNoNode || p >= n) throw std::invalid_argument("invitation graph has no requester");

  constexpr std::size_t kUnseen = static_cast<std::size_t>(-1);
  std::vector<std::size_t> disc(n, kUnseen), low(n, 0);
  std::vector<NodeId> dfs_parent(n, kNoNode), tree_parent(n, kNoNode);
  std::vector<NodeId> block_stack;
  std::vector<std::pair<NodeId, std::size_t>> stack;
  std::size_t clock = 0;

  disc[p] = low[p] = clock++;
  stack.emplace_back(p, 0);
  while (!stack.empty()) {
    auto& [v, k] = stack.back();
    if (k < h.adj[v].size()) {
      NodeId w = h.adj[v][k++];
      if (disc[w] == kUnseen) {
        disc[w] = low[w] = clock++;
        dfs_parent[w] = v;
        block_stack.push_back(w);
        stack.emplace_back(w, 0);
      } else if (w != dfs_parent[v]) {
        low[v] = std::min(low[v], disc[w]);
      }
      continue;
    }
    NodeId done = v;
    stack.pop_back();
    if (done == p) break;
    NodeId u = dfs_parent[done];
    low[u] = std::min(low[u], low[done]);
    if (low[done] >= disc[u]) {
      // Block entered through u: everything above `done` on the stack is led by u.
      NodeId x;
      do {
        x = block_stack.back();
        block_stack.pop_back();
        tree_parent[x] = u;
      } while (x != done);
    }
  }
  for (NodeId v : h.invited)
    if (disc[v] == kUnseen)
      throw std::invalid_argument("invitation graph is disconnected: agent " + std::to_string(v) +
                                  " unreachable from requester");
  return OrderTree(p, std::move(tree_parent));
}

/// D_i, C_i and P_i views over an order tree. Nothing quadratic is stored:
/// D_i is a preorder slice, C_i is walked on demand and P_i is the complement
/// of i's subtree.
class LeadSets {
 public:
  explicit LeadSets(const OrderTree& t) : tree_(&t) {}

  std::span<const NodeId> descendants(NodeId i) const {
    auto pre = tree_->preorder();
    std::size_t b = tree_->preorder_index(i) + 1;
    return pre.subspan(b, tree_->subtree_size(i) - 1);
  }

  /// Leaders ordered from the requester's side down to i's parent.
  std::vector<NodeId> leaders(NodeId i) const {
    std::vector<NodeId> out;
    for (NodeId v = tree_->parent(i); v != kNoNode && v != tree_->root(); v = tree_->parent(v)) out.push_back(v);
    std::reverse(out.begin(), out.end());
    return out;
  }

  bool is_competitor(NodeId i, NodeId j) const {
    return tree_->is_agent(j) && !tree_->in_subtree(i, j);
  }
  std::size_t competitor_count(NodeId i) const { return tree_->agent_count() - tree_->subtree_size(i); }

  std::vector<NodeId> competitors(NodeId i) const {
    std::vector<NodeId> out;
    out.reserve(competitor_count(i));
    for (NodeId j : tree_->agents())
      if (!tree_->in_subtree(i, j)) out.push_back(j);
    return out;
  }

  const OrderTree& tree() const noexcept { return *tree_; }

 private:
  const OrderTree* tree_;
};

inline LeadSets lead_sets(const OrderTree& t) { return LeadSets(t); }

/// Process-wide table mapping sorted child-label multisets to small integers.
/// Labels from different trees are directly comparable.
class TypeInterner {
 public:
  static TypeInterner& global() {
    static TypeInterner table;
    return table;
  }

  std::uint32_t intern(const std::vector<std::uint32_t>& sorted_children) {
    std::lock_guard lock(mu_);
    auto [it, fresh] = table_.try_emplace(sorted_children, static_cast<std::uint32_t>(table_.size()));
    return it->second;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return table_.size();
  }

 private:
  TypeInterner() { table_.emplace(std::vector<std::uint32_t>{}, 0u); }

  mutable std::mutex mu_;
  std::map<std::vector<std::uint32_t>, std::uint32_t> table_;
};

inline constexpr std::uint32_t kLeafType = 0;
inline constexpr std::uint32_t kNoType = static_cast<std::uint32_t>(-1);

/// Agent types: equal labels exactly when the rooted subtrees are isomorphic.
struct TypeSignature {
  std::vector<std::uint32_t> label;   ///< indexed by node id; kNoType outside the tree
  std::vector<std::uint64_t> hash;    ///< process-independent structural hash

  std::size_t class_count(const OrderTree& t) const {
    std::vector<std::uint32_t> seen;
    for (NodeId v : t.agents()) seen.push_back(label[v]);
    std::sort(seen.begin(), seen.end());
    return static_cast<std::size_t>(std::unique(seen.begin(), seen.end()) - seen.begin());
  }
};

namespace detail {
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

inline TypeSignature canonical_types(const OrderTree& t, TypeInterner& table = TypeInterner::global()) {
  const std::size_t n = t.node_count();
  TypeSignature sig;
  sig.label.assign(n, kNoType);
  sig.hash.assign(n, 0);
  auto pre = t.preorder();
  std::vector<std::uint32_t> kids;
  std::vector<std::uint64_t> kid_hashes;
  for (auto it = pre.rbegin(); it != pre.rend(); ++it) {
    NodeId v = *it;
    kids.clear();
    kid_hashes.clear();
    for (NodeId c : t.children(v)) {
      kids.push_back(sig.label[c]);
      kid_hashes.push_back(sig.hash[c]);
    }
    std::sort(kids.begin(), kids.end());
    std::sort(kid_hashes.begin(), kid_hashes.end());
    sig.label[v] = kids.empty() ? kLeafType : table.intern(kids);
    std::uint64_t h = 0x6a09e667f3bcc909ULL ^ kid_hashes.size();
    for (auto kh : kid_hashes) h = detail::mix64(h ^ kh) + 0x3c6ef372fe94f82bULL;
    sig.hash[v] = detail::mix64(h);
  }
  return sig;
}

/// Whole-tree identity up to isomorphism. `label` is exact within one
/// process; `hash` is stable across processes and used in reports.
struct TreeFingerprint {
  std::uint32_t label = kNoType;
  std::uint64_t hash = 0;

  friend bool operator==(const TreeFingerprint& a, const TreeFingerprint& b) { return a.label == b.label; }
  std::string hex() const {
    std::ostringstream os;
    os << std::hex << hash;
    return os.str();
  }
};

inline TreeFingerprint tree_fingerprint(const OrderTree& t, TypeInterner& table = TypeInterner::global()) {
  auto sig = canonical_types(t, table);
  return {sig.label[t.root()], sig.hash[t.root()]};
}

/// {"parent": {"node": parent}} keyed by original ids; the root maps to null.
inline nlohmann::json order_tree_to_json(const OrderTree& t, const SocialGraph& g) {
  nlohmann::json parent = nlohmann::json::object();
  parent[std::to_string(g.original_id(t.root()))] = nullptr;
  for (NodeId v : t.agents()) parent[std::to_string(g.original_id(v))] = g.original_id(t.parent(v));
  return {{"root", g.original_id(t.root())}, {"agents", t.agent_count()}, {"parent", std::move(parent)}};
}

inline OrderTree order_tree_from_json(const nlohmann::json& j, const SocialGraph& g) {
  std::vector<NodeId> parent(g.node_count(), kNoNode);
  NodeId root = g.dense_id(j.at("root").get<std::int64_t>());
  for (auto& [key, value] : j.at("parent").items()) {
    NodeId v = g.dense_id(std::stoll(key));
    if (value.is_null()) continue;
    parent[v] = g.dense_id(value.get<std::int64_t>());
  }
  return OrderTree(root, std::move(parent));
}

inline void write_dot(std::ostream& os, const OrderTree& t, const SocialGraph& g) {
  os << "digraph order_tree {\n";
  os << "  \"" << g.original_id(t.root()) << "\" [shape=doublecircle];\n";
  for (NodeId v : t.agents())
    os << "  \"" << g.original_id(t.parent(v)) << "\" -> \"" << g.original_id(v) << "\";\n";
  os << "}\n";
}

}  // namespace cim
