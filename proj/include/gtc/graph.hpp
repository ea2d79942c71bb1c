#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gtc/error.hpp"

namespace gtc {

/// Directed attention pattern. Edge (i, j) means node i attends to node j,
/// i.e. j ∈ N(i). Neighbor lists are stored in CSR form, sorted per node.
class AttentionGraph {
 public:
  using Edge = std::pair<std::size_t, std::size_t>;

  AttentionGraph() = default;

  /// Rejects out-of-range indices and duplicate edges. Nodes that would have
  /// an empty neighborhood receive a self-loop; see self_loops_added().
  AttentionGraph(std::size_t n, std::vector<Edge> edges) : n_(n) {
    for (const auto& [i, j] : edges) {
      if (i >= n || j >= n) {
        throw ValidationError("edge (" + std::to_string(i) + ", " + std::to_string(j) +
                              ") out of range for n = " + std::to_string(n));
      }
    }
    std::sort(edges.begin(), edges.end());
    const auto dup = std::adjacent_find(edges.begin(), edges.end());
    if (dup != edges.end()) {
      throw ValidationError("duplicate edge (" + std::to_string(dup->first) + ", " +
                            std::to_string(dup->second) + ")");
    }
    std::vector<std::size_t> degree(n, 0);
    for (const auto& e : edges) ++degree[e.first];
    for (std::size_t i = 0; i < n; ++i) {
      if (degree[i] == 0) {
        self_loops_.push_back(i);
        edges.emplace_back(i, i);
      }
    }
    if (!self_loops_.empty()) std::sort(edges.begin(), edges.end());

    offsets_.assign(n + 1, 0);
    for (const auto& e : edges) ++offsets_[e.first + 1];
    for (std::size_t i = 0; i < n; ++i) offsets_[i + 1] += offsets_[i];
    targets_.reserve(edges.size());
    for (const auto& e : edges) targets_.push_back(e.second);
  }

  /// Full attention: every node attends to every node, itself included.
  static AttentionGraph full(std::size_t n) {
    std::vector<Edge> edges;
    edges.reserve(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) edges.emplace_back(i, j);
    return AttentionGraph(n, std::move(edges));
  }

  std::size_t n() const noexcept { return n_; }
  std::size_t edge_count() const noexcept { return targets_.size(); }

  std::span<const std::size_t> neighbors(std::size_t i) const noexcept {
    return {targets_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }

  /// Position of node i's first edge in CSR order (edge-indexed arrays use it).
  std::size_t offset(std::size_t i) const noexcept { return offsets_[i]; }
  const std::vector<std::size_t>& targets() const noexcept { return targets_; }

  /// Edges in CSR order: by source, then target.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    out.reserve(targets_.size());
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j : neighbors(i)) out.emplace_back(i, j);
    return out;
  }

  const std::vector<std::size_t>& self_loops_added() const noexcept { return self_loops_; }

  friend bool operator==(const AttentionGraph& a, const AttentionGraph& b) {
    return a.n_ == b.n_ && a.offsets_ == b.offsets_ && a.targets_ == b.targets_;
  }

 private:
  std::size_t n_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::size_t> targets_;
  std::vector<std::size_t> self_loops_;
};

}  // namespace gtc
