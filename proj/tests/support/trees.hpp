#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "star/rng.hpp"
#include "star/skeleton.hpp"

namespace star::testing {

// Random labelled tree: node k attaches to a uniform earlier node, then
// labels are shuffled so the root is not always joint 0.
inline SkeletonGraph random_tree(std::size_t n, Rng& rng) {
  std::vector<std::size_t> label(n);
  std::iota(label.begin(), label.end(), 0);
  for (std::size_t i = n; i-- > 1;) std::swap(label[i], label[rng.uniform_index(i + 1)]);
  std::vector<JointPair> edges;
  for (std::size_t k = 1; k < n; ++k) edges.emplace_back(label[k], label[rng.uniform_index(k)]);
  return SkeletonGraph(n, std::move(edges));
}

// All-pairs hop distances by Floyd-Warshall on the edge list.
inline std::vector<std::vector<std::size_t>> floyd_distances(const SkeletonGraph& g) {
  const std::size_t n = g.num_joints();
  const std::size_t inf = n + 1;
  std::vector<std::vector<std::size_t>> d(n, std::vector<std::size_t>(n, inf));
  for (std::size_t i = 0; i < n; ++i) d[i][i] = 0;
  for (auto [a, b] : g.edges()) d[a][b] = d[b][a] = 1;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  return d;
}

}  // namespace star::testing
