#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "star/attention.hpp"

namespace star {

enum class KernelKind { kElu, kFavor };
enum class FeatureMap { kExp, kRelu };

KernelKind parse_kernel_kind(const std::string& s);
FeatureMap parse_feature_map(const std::string& s);
std::string to_string(KernelKind k);
std::string to_string(FeatureMap f);

// Feature map phi used by linearized attention.
//   elu:   phi(x) = elu(x) + 1, feature_dim = head_dim
//   favor: phi(x) = c / sqrt(M) * f(W x' + b [- |x'|^2 / 2 when f = exp])
//          with x' = x * head_dim^(-1/4), feature_dim = M
// The exp branch carries the norm correction so that
// E[phi(q).phi(k)] = exp(q.k / sqrt(head_dim)); relu has no such target.
struct KernelSpec {
  KernelKind kind = KernelKind::kElu;
  std::size_t num_features = 256;
  Tensor projection;  // [M, head_dim], N(0, 1) entries
  Tensor bias;        // [M]
  double c = 1.0;
  FeatureMap map = FeatureMap::kExp;
  std::uint64_t seed = 0;
  double denominator_eps = 1e-12;

  static KernelSpec elu();
  static KernelSpec favor(std::size_t head_dim, std::size_t num_features, FeatureMap map, std::uint64_t seed);

  std::size_t feature_dim(std::size_t head_dim) const;
  void validate(std::size_t head_dim) const;
};

// x: [rows, head_dim] -> [rows, feature_dim].
Var kernel_map(Var x, const KernelSpec& spec);
// Tape-free loop version of the same map (oracle side).
Tensor kernel_features(const Tensor& x, const KernelSpec& spec);

// Segment ids of each of n rows from first-row offsets. Offsets must start
// at 0 and increase strictly below n.
Index segment_ids(std::span<const std::size_t> segment_offsets, std::size_t n);

// Linear attention along frames, separately per joint, head and segment.
// q, k, v: [N * V, d_model] with rows ordered (frame, joint).
// Row i of segment m: phi(q_i)^T U_m / phi(q_i)^T Z_m with
// U_m = sum_j phi(k_j) v_j^T and Z_m = sum_j phi(k_j) over j in m,
// accumulated in ascending frame order.
Var segmented_linear_attention_core(Var q, Var k, Var v, std::size_t num_joints,
                                    std::span<const std::size_t> segment_offsets, const MhsaConfig& cfg,
                                    const KernelSpec& spec);

// x: [N, V, d_model] -> [N, V, d_model].
Var segmented_linear_mhsa(Var x, std::span<const std::size_t> segment_offsets, const MhsaVars& params,
                          const MhsaConfig& cfg, const KernelSpec& spec);

enum class OracleScores { kKernel, kSoftmax };

// Explicit per-segment attention matrices, plain loops, no tape. Includes
// the projections. kKernel uses <phi(q_i), phi(k_j)>, kSoftmax uses
// exp(q_i.k_j / sqrt(head_dim)). MACs are reported to the active profiler
// ("linear" for projections, "quadratic_attention" inside scope "attention").
Tensor quadratic_segment_oracle(const Tensor& x, std::span<const std::size_t> segment_offsets,
                                const MhsaWeights& params, const MhsaConfig& cfg, const KernelSpec& spec,
                                OracleScores scores = OracleScores::kKernel);

// Exact MACs of segmented_linear_mhsa for N total frames.
std::uint64_t count_temporal_macs(const MhsaConfig& cfg, const KernelSpec& spec, std::size_t num_joints,
                                  std::size_t frames);

}  // namespace star
