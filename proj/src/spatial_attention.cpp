#include "star/spatial_attention.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "star/errors.hpp"
#include "star/profiler.hpp"

namespace star {

namespace {

void check_projected(Var q, Var k, Var v, std::size_t rows, std::size_t d, const char* op) {
  for (Var t : {q, k, v}) {
    if (t.shape() != Shape{rows, d}) {
      throw DimensionError(std::string(op) + ": expected projected features " + shape_str({rows, d}) + ", got " +
                           shape_str(t.shape()));
    }
  }
}

// Overflow report: largest finite |score| and how many pairs blew up.
std::string overflow_report(const Tensor& q, const Tensor& k, const Index& qi, const Index& ki, std::size_t hd) {
  double worst = 0.0;
  std::size_t bad = 0;
  const double inv = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t m = 0; m < qi.size(); ++m) {
    double s = 0.0;
    for (std::size_t c = 0; c < hd; ++c) s += q[qi[m] * hd + c] * k[ki[m] * hd + c];
    s *= inv;
    if (std::isfinite(s)) worst = std::max(worst, std::abs(s));
    else ++bad;
  }
  std::ostringstream os;
  os << "sparse_attention: score overflow in " << bad << " of " << qi.size() << " pairs (max finite |score| "
     << worst << ")";
  return os.str();
}

Var project(Var x2, Var w, Var b) { return linear(x2, w, b); }

}  // namespace

Var sparse_attention_core(Var q, Var k, Var v, std::size_t frames, const AttentionSupport& support,
                          const MhsaConfig& cfg, SparseAttentionWeights* weights) {
  cfg.validate();
  const std::size_t joints = support.num_joints;
  const std::size_t heads = cfg.num_heads, hd = cfg.head_dim();
  check_projected(q, k, v, frames * joints, cfg.d_model, "sparse_attention");
  for (const auto& [i, j] : support.edge_index) {
    if (i >= joints || j >= joints) throw IndexError("sparse_attention: support pair beyond joint count");
  }
  profiling::Scope scope("attention");

  const std::size_t rows = frames * joints * heads;
  const std::size_t entries = support.num_entries();
  Index qi, ki;
  qi.reserve(frames * entries * heads);
  ki.reserve(frames * entries * heads);
  for (std::size_t n = 0; n < frames; ++n)
    for (const auto& [i, j] : support.edge_index)
      for (std::size_t h = 0; h < heads; ++h) {
        qi.push_back((n * joints + i) * heads + h);
        ki.push_back((n * joints + j) * heads + h);
      }
  IndexPtr query_rows = make_index(std::move(qi));
  IndexPtr key_rows = make_index(std::move(ki));

  Var qh = reshape(q, {rows, hd});
  Var kh = reshape(k, {rows, hd});
  Var vh = reshape(v, {rows, hd});

  Var scores;
  try {
    scores = scale(rowwise_dot(gather(qh, query_rows), gather(kh, key_rows)), 1.0 / std::sqrt(double(hd)));
  } catch (const NumericError&) {
    throw NumericError(overflow_report(qh.value(), kh.value(), *query_rows, *key_rows, hd));
  }
  // Shift by the per-query maximum; the shift cancels in the ratio, so it
  // is taken off the gradient path.
  Var shift = scatter_max(detach(scores), query_rows, rows).values;
  Var expo = exp(sub(scores, gather(shift, query_rows)));
  Var denom = scatter_sum(expo, query_rows, rows);
  Var alpha = div(expo, gather(denom, query_rows));
  Var out = scatter_sum(mul(gather(vh, key_rows), alpha), query_rows, rows);
  if (weights) *weights = {alpha.value(), query_rows};
  return reshape(out, {frames * joints, cfg.d_model});
}

Var sparse_mhsa(Var x, const AttentionSupport& support, const MhsaVars& p, const MhsaConfig& cfg,
                SparseAttentionWeights* weights) {
  const Shape s = x.shape();
  if (s.size() != 3 || s[1] != support.num_joints || s[2] != cfg.d_model) {
    throw DimensionError("sparse_mhsa: input " + shape_str(s) + " for V=" + std::to_string(support.num_joints) +
                         ", d_model=" + std::to_string(cfg.d_model));
  }
  Var x2 = reshape(x, {s[0] * s[1], s[2]});
  Var q = project(x2, p.wq, p.bq);
  Var k = project(x2, p.wk, p.bk);
  Var v = project(x2, p.wv, p.bv);
  Var att = sparse_attention_core(q, k, v, s[0], support, cfg, weights);
  return reshape(project(att, p.wo, p.bo), s);
}

Var dense_attention_core(Var q, Var k, Var v, std::size_t frames, const Tensor& mask, const MhsaConfig& cfg) {
  cfg.validate();
  if (mask.rank() != 2 || mask.dim(0) != mask.dim(1)) throw DimensionError("dense_attention: mask must be [V, V]");
  const std::size_t joints = mask.dim(0);
  const std::size_t heads = cfg.num_heads, hd = cfg.head_dim();
  check_projected(q, k, v, frames * joints, cfg.d_model, "dense_attention");
  profiling::Scope scope("attention");

  static constexpr std::size_t kHeadsFirst[] = {0, 2, 1, 3};  // [N,V,H,hd] -> [N,H,V,hd]
  static constexpr std::size_t kKeysT[] = {0, 2, 3, 1};       // [N,V,H,hd] -> [N,H,hd,V]
  const Shape split = {frames, joints, heads, hd};
  Var qh = reshape(permute(reshape(q, split), kHeadsFirst), {frames * heads, joints, hd});
  Var kt = reshape(permute(reshape(k, split), kKeysT), {frames * heads, hd, joints});
  Var vh = reshape(permute(reshape(v, split), kHeadsFirst), {frames * heads, joints, hd});
  Var scores = scale(bmm(qh, kt), 1.0 / std::sqrt(double(hd)));
  Var alpha = masked_softmax(scores, mask);
  Var agg = reshape(bmm(alpha, vh), {frames, heads, joints, hd});
  return reshape(permute(agg, kHeadsFirst), {frames * joints, cfg.d_model});
}

Var dense_masked_mhsa(Var x, const Tensor& mask, const MhsaVars& p, const MhsaConfig& cfg) {
  const Shape s = x.shape();
  if (s.size() != 3 || mask.rank() != 2 || s[1] != mask.dim(0) || s[2] != cfg.d_model) {
    throw DimensionError("dense_masked_mhsa: input " + shape_str(s) + " with mask " + shape_str(mask.shape()));
  }
  Var x2 = reshape(x, {s[0] * s[1], s[2]});
  Var q = project(x2, p.wq, p.bq);
  Var k = project(x2, p.wk, p.bk);
  Var v = project(x2, p.wv, p.bv);
  Var att = dense_attention_core(q, k, v, s[0], mask, cfg);
  return reshape(project(att, p.wo, p.bo), s);
}

std::uint64_t count_spatial_score_macs(const MhsaConfig& cfg, std::size_t num_entries, std::size_t frames) {
  return 2ULL * frames * cfg.num_heads * num_entries * cfg.head_dim();
}

std::uint64_t count_spatial_macs(const MhsaConfig& cfg, std::size_t num_joints, std::size_t num_entries,
                                 std::size_t frames) {
  const std::uint64_t proj = static_cast<std::uint64_t>(frames) * num_joints * cfg.d_model * cfg.d_model;
  return 3 * proj + count_spatial_score_macs(cfg, num_entries, frames) + proj;
}

}  // namespace star
