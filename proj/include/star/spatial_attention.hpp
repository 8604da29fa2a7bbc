#pragma once

#include <cstddef>
#include <cstdint>

#include "star/attention.hpp"
#include "star/skeleton.hpp"

namespace star {

// Per-head attention coefficients aligned with the gathered pair rows.
// Row m corresponds to frame n, support entry e, head h with
// m = (n * num_entries + e) * num_heads + h.
struct SparseAttentionWeights {
  Tensor alpha;       // [M, 1]
  IndexPtr query_row; // (frame, joint, head) row of the query per pair
};

// Sparse multi-head attention over joints of each frame. q, k, v are
// projected features [frames * V, d_model]; scores exist only on support
// pairs: alpha(i, j) = exp(q_i.k_j / sqrt(head_dim)) normalized over
// the support neighbourhood of i, then v'_i = sum_j alpha(i, j) v_j.
Var sparse_attention_core(Var q, Var k, Var v, std::size_t frames, const AttentionSupport& support,
                          const MhsaConfig& cfg, SparseAttentionWeights* weights = nullptr);

// x: [N, V, d_model] -> [N, V, d_model], frames as the batch axis.
Var sparse_mhsa(Var x, const AttentionSupport& support, const MhsaVars& params, const MhsaConfig& cfg,
                SparseAttentionWeights* weights = nullptr);

// Dense per-frame attention with a masked softmax. With the support mask
// it reproduces sparse_mhsa; with an all-ones mask it is full attention.
Var dense_attention_core(Var q, Var k, Var v, std::size_t frames, const Tensor& mask, const MhsaConfig& cfg);
Var dense_masked_mhsa(Var x, const Tensor& mask, const MhsaVars& params, const MhsaConfig& cfg);

// Exact MACs of sparse_mhsa:
//   3 N V d^2 (q, k, v) + 2 N H E head_dim (scores, aggregation) + N V d^2 (output)
std::uint64_t count_spatial_macs(const MhsaConfig& cfg, std::size_t num_joints, std::size_t num_entries,
                                 std::size_t frames);
inline std::uint64_t count_spatial_macs(const MhsaConfig& cfg, std::size_t num_joints,
                                        const AttentionSupport& support, std::size_t frames) {
  return count_spatial_macs(cfg, num_joints, support.num_entries(), frames);
}
// The score/aggregation share only: 2 N H E head_dim.
std::uint64_t count_spatial_score_macs(const MhsaConfig& cfg, std::size_t num_entries, std::size_t frames);

}  // namespace star
