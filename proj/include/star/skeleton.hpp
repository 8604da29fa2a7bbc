#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "star/tensor.hpp"

namespace star {

using JointPair = std::pair<std::size_t, std::size_t>;

// Joint tree of a skeleton. Construction validates: V-1 distinct
// undirected edges, no self loops, connected.
class SkeletonGraph {
 public:
  SkeletonGraph(std::size_t num_joints, std::vector<JointPair> edges, std::vector<std::string> names = {});

  std::size_t num_joints() const { return num_joints_; }
  const std::vector<JointPair>& edges() const { return edges_; }
  const std::vector<std::string>& names() const { return names_; }

  // Hop distances from `source` to every joint.
  std::vector<std::size_t> distances_from(std::size_t source) const;

  // Canonical text form (the topology file layout) and its FNV-1a hash.
  std::string to_text() const;
  std::uint64_t hash() const;

 private:
  std::size_t num_joints_;
  std::vector<JointPair> edges_;
  std::vector<std::string> names_;
  std::vector<std::vector<std::size_t>> adjacency_;
};

// Topology text: "V <count>" header, then "E <i> <j>" per bone (0-indexed),
// optional "N <i> <label>" lines; '#' starts a comment.
SkeletonGraph parse_skeleton(std::string_view text);
SkeletonGraph load_skeleton(const std::filesystem::path& path);

// The 25-joint NTU RGB+D (Kinect v2) skeleton, 24 bones.
SkeletonGraph ntu25_skeleton();

// Ordered (query, key) joint pairs allowed in spatial attention.
struct AttentionSupport {
  std::vector<JointPair> edge_index;  // sorted by (i, j), deduplicated
  std::size_t num_joints = 0;

  std::size_t num_entries() const { return edge_index.size(); }
  double fraction() const {
    return static_cast<double>(num_entries()) / static_cast<double>(num_joints * num_joints);
  }
};

// All pairs within `max_hops` graph distance, diagonal included. For a
// tree without self loops this is exactly the boolean support of
// A + A^2 + ... + A^max_hops once max_hops >= 2.
AttentionSupport build_support(const SkeletonGraph& graph, std::size_t max_hops = 3);

// 1.0 on support entries, 0.0 elsewhere.
Tensor dense_mask(const AttentionSupport& support, std::size_t num_joints);

}  // namespace star
