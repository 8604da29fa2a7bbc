#include "star/skeleton.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <queue>
#include <set>
#include <sstream>

#include "star/errors.hpp"

namespace star {

namespace {
constexpr std::size_t kUnreached = std::numeric_limits<std::size_t>::max();
}

SkeletonGraph::SkeletonGraph(std::size_t num_joints, std::vector<JointPair> edges, std::vector<std::string> names)
    : num_joints_(num_joints), edges_(std::move(edges)), names_(std::move(names)) {
  if (num_joints_ == 0) throw FormatError("skeleton: at least one joint required");
  if (edges_.size() != num_joints_ - 1) {
    throw FormatError("skeleton: a tree over " + std::to_string(num_joints_) + " joints needs " +
                      std::to_string(num_joints_ - 1) + " edges, got " + std::to_string(edges_.size()));
  }
  if (!names_.empty() && names_.size() != num_joints_) {
    throw FormatError("skeleton: " + std::to_string(names_.size()) + " names for " + std::to_string(num_joints_) +
                      " joints");
  }
  std::set<JointPair> seen;
  adjacency_.assign(num_joints_, {});
  for (const auto& [a, b] : edges_) {
    if (a >= num_joints_ || b >= num_joints_) {
      throw FormatError("skeleton: edge (" + std::to_string(a) + "," + std::to_string(b) + ") out of range");
    }
    if (a == b) throw FormatError("skeleton: self loop on joint " + std::to_string(a));
    if (!seen.insert(std::minmax(a, b)).second) {
      throw FormatError("skeleton: duplicate edge (" + std::to_string(a) + "," + std::to_string(b) + ")");
    }
    adjacency_[a].push_back(b);
    adjacency_[b].push_back(a);
  }
  for (auto& nbrs : adjacency_) std::sort(nbrs.begin(), nbrs.end());
  auto dist = distances_from(0);
  for (std::size_t j = 0; j < num_joints_; ++j) {
    // V-1 edges and connected <=> tree; a cycle leaves some joint unreached
    if (dist[j] == kUnreached) throw FormatError("skeleton: not a tree (joint " + std::to_string(j) + " unreachable)");
  }
}

std::vector<std::size_t> SkeletonGraph::distances_from(std::size_t source) const {
  std::vector<std::size_t> dist(num_joints_, kUnreached);
  std::queue<std::size_t> frontier;
  dist.at(source) = 0;
  frontier.push(source);
  while (!frontier.empty()) {
    std::size_t u = frontier.front();
    frontier.pop();
    for (std::size_t v : adjacency_[u]) {
      if (dist[v] != kUnreached) continue;
      dist[v] = dist[u] + 1;
      frontier.push(v);
    }
  }
  return dist;
}

std::string SkeletonGraph::to_text() const {
  std::ostringstream os;
  os << "V " << num_joints_ << '\n';
  for (std::size_t i = 0; i < names_.size(); ++i) os << "N " << i << ' ' << names_[i] << '\n';
  for (const auto& [a, b] : edges_) os << "E " << a << ' ' << b << '\n';
  return os.str();
}

std::uint64_t SkeletonGraph::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_text()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

SkeletonGraph parse_skeleton(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::size_t num_joints = 0;
  bool have_header = false;
  std::vector<JointPair> edges;
  std::vector<std::pair<std::size_t, std::string>> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    auto fail = [&](const std::string& why) {
      return FormatError("skeleton line " + std::to_string(line_no) + ": " + why);
    };
    if (tag == "V") {
      if (have_header) throw fail("duplicate V header");
      if (!(ls >> num_joints)) throw fail("expected joint count");
      have_header = true;
    } else if (tag == "E") {
      if (!have_header) throw fail("E before V header");
      std::size_t a = 0, b = 0;
      if (!(ls >> a >> b)) throw fail("expected two joint indices");
      edges.emplace_back(a, b);
    } else if (tag == "N") {
      std::size_t i = 0;
      std::string label;
      if (!(ls >> i >> label)) throw fail("expected joint index and label");
      labels.emplace_back(i, label);
    } else {
      throw fail("unknown record '" + tag + "'");
    }
    std::string extra;
    if (ls >> extra) throw fail("trailing token '" + extra + "'");
  }
  if (!have_header) throw FormatError("skeleton: missing V header");
  std::vector<std::string> names;
  if (!labels.empty()) {
    names.resize(num_joints);
    for (auto& [i, label] : labels) {
      if (i >= num_joints) throw FormatError("skeleton: label for joint " + std::to_string(i) + " out of range");
      names[i] = std::move(label);
    }
  }
  return SkeletonGraph(num_joints, std::move(edges), std::move(names));
}

SkeletonGraph load_skeleton(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("skeleton: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_skeleton(buf.str());
}

SkeletonGraph ntu25_skeleton() {
  // 1-based bone list of the Kinect v2 layout, shifted to 0-based
  static constexpr std::pair<int, int> kBones[] = {
      {1, 2},   {2, 21},  {3, 21},  {4, 3},   {5, 21},  {6, 5},   {7, 6},   {8, 7},
      {9, 21},  {10, 9},  {11, 10}, {12, 11}, {13, 1},  {14, 13}, {15, 14}, {16, 15},
      {17, 1},  {18, 17}, {19, 18}, {20, 19}, {22, 23}, {23, 8},  {24, 25}, {25, 12}};
  static const std::vector<std::string> kNames = {
      "spine_base",   "spine_mid",   "neck",        "head",       "shoulder_left", "elbow_left",
      "wrist_left",   "hand_left",   "shoulder_right", "elbow_right", "wrist_right", "hand_right",
      "hip_left",     "knee_left",   "ankle_left",  "foot_left",  "hip_right",     "knee_right",
      "ankle_right",  "foot_right",  "spine_shoulder", "hand_tip_left", "thumb_left", "hand_tip_right",
      "thumb_right"};
  std::vector<JointPair> edges;
  for (auto [a, b] : kBones) edges.emplace_back(a - 1, b - 1);
  return SkeletonGraph(25, std::move(edges), kNames);
}

AttentionSupport build_support(const SkeletonGraph& graph, std::size_t max_hops) {
  if (max_hops < 1) throw InvalidArgument("build_support: max_hops must be >= 1");
  AttentionSupport s;
  s.num_joints = graph.num_joints();
  for (std::size_t i = 0; i < graph.num_joints(); ++i) {
    auto dist = graph.distances_from(i);
    for (std::size_t j = 0; j < graph.num_joints(); ++j)
      if (dist[j] <= max_hops) s.edge_index.emplace_back(i, j);
  }
  return s;
}

Tensor dense_mask(const AttentionSupport& support, std::size_t num_joints) {
  std::vector<double> m(num_joints * num_joints, 0.0);
  for (const auto& [i, j] : support.edge_index) {
    if (i >= num_joints || j >= num_joints) {
      throw IndexError("dense_mask: pair (" + std::to_string(i) + "," + std::to_string(j) + ") exceeds V=" +
                       std::to_string(num_joints));
    }
    m[i * num_joints + j] = 1.0;
  }
  return Tensor({num_joints, num_joints}, std::move(m));
}

}  // namespace star
