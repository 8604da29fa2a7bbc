#include "star/temporal_attention.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "star/errors.hpp"
#include "star/profiler.hpp"
#include "star/rng.hpp"

namespace star {

KernelKind parse_kernel_kind(const std::string& s) {
  if (s == "elu") return KernelKind::kElu;
  if (s == "favor") return KernelKind::kFavor;
  throw ConfigError("model.kernel: expected elu or favor, got '" + s + "'");
}

FeatureMap parse_feature_map(const std::string& s) {
  if (s == "exp") return FeatureMap::kExp;
  if (s == "relu") return FeatureMap::kRelu;
  throw ConfigError("model.favor_map: expected exp or relu, got '" + s + "'");
}

std::string to_string(KernelKind k) { return k == KernelKind::kElu ? "elu" : "favor"; }
std::string to_string(FeatureMap f) { return f == FeatureMap::kExp ? "exp" : "relu"; }

KernelSpec KernelSpec::elu() { return KernelSpec{}; }

KernelSpec KernelSpec::favor(std::size_t head_dim, std::size_t num_features, FeatureMap map, std::uint64_t seed) {
  if (num_features == 0) throw ConfigError("model.favor_features: must be positive");
  KernelSpec s;
  s.kind = KernelKind::kFavor;
  s.num_features = num_features;
  s.map = map;
  s.seed = seed;
  Rng rng(seed, 0x6661766f72ULL);
  std::vector<double> w(num_features * head_dim);
  for (double& x : w) x = rng.normal();
  s.projection = Tensor({num_features, head_dim}, std::move(w));
  s.bias = Tensor::zeros({num_features});
  return s;
}

std::size_t KernelSpec::feature_dim(std::size_t head_dim) const {
  return kind == KernelKind::kElu ? head_dim : num_features;
}

void KernelSpec::validate(std::size_t head_dim) const {
  if (kind == KernelKind::kElu) return;
  if (projection.shape() != Shape{num_features, head_dim} || bias.shape() != Shape{num_features}) {
    throw ConfigError("favor kernel: projection " + shape_str(projection.shape()) + " / bias " +
                      shape_str(bias.shape()) + " do not match M=" + std::to_string(num_features) +
                      ", head_dim=" + std::to_string(head_dim));
  }
  if (!(c > 0.0) || !std::isfinite(c)) throw ConfigError("favor kernel: c must be positive");
}

namespace {

Tensor transpose(const Tensor& m) {
  const std::size_t r = m.dim(0), c = m.dim(1);
  std::vector<double> t(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = m.at(i, j);
  return Tensor({c, r}, std::move(t));
}

}  // namespace

Var kernel_map(Var x, const KernelSpec& spec) {
  if (x.shape().size() != 2) throw DimensionError("kernel_map: expected [rows, head_dim], got " + shape_str(x.shape()));
  const std::size_t hd = x.shape()[1];
  spec.validate(hd);
  if (spec.kind == KernelKind::kElu) return add_scalar(elu(x), 1.0);

  Tape& tape = *x.tape;
  Var xs = scale(x, std::pow(static_cast<double>(hd), -0.25));
  Var proj = linear(xs, tape.constant(transpose(spec.projection)), tape.constant(spec.bias));
  const double amp = spec.c / std::sqrt(static_cast<double>(spec.num_features));
  if (spec.map == FeatureMap::kRelu) return scale(relu(proj), amp);
  Var half_norm = scale(rowwise_dot(xs, xs), -0.5);
  return scale(exp(add(proj, half_norm)), amp);
}

Tensor kernel_features(const Tensor& x, const KernelSpec& spec) {
  const std::size_t rows = x.dim(0), hd = x.dim(1);
  spec.validate(hd);
  const std::size_t f = spec.feature_dim(hd);
  std::vector<double> out(rows * f);
  if (spec.kind == KernelKind::kElu) {
    for (std::size_t i = 0; i < rows * hd; ++i) out[i] = (x[i] > 0 ? x[i] : std::expm1(x[i])) + 1.0;
    return Tensor({rows, f}, std::move(out));
  }
  const double s = std::pow(static_cast<double>(hd), -0.25);
  const double amp = spec.c / std::sqrt(static_cast<double>(f));
  std::vector<double> xs(hd);
  for (std::size_t r = 0; r < rows; ++r) {
    double norm = 0.0;
    for (std::size_t c = 0; c < hd; ++c) {
      xs[c] = x.at(r, c) * s;
      norm += xs[c] * xs[c];
    }
    for (std::size_t m = 0; m < f; ++m) {
      double z = spec.bias[m];
      for (std::size_t c = 0; c < hd; ++c) z += spec.projection.at(m, c) * xs[c];
      out[r * f + m] = spec.map == FeatureMap::kRelu ? amp * std::max(z, 0.0) : amp * std::exp(z - 0.5 * norm);
    }
  }
  return Tensor({rows, f}, std::move(out));
}

Index segment_ids(std::span<const std::size_t> offsets, std::size_t n) {
  if (offsets.empty() || offsets[0] != 0) throw InvalidArgument("segments: offsets must start at 0");
  for (std::size_t s = 1; s < offsets.size(); ++s) {
    if (offsets[s] <= offsets[s - 1]) throw InvalidArgument("segments: offsets must increase strictly");
  }
  if (offsets.back() >= n) throw InvalidArgument("segments: offset beyond the frame count");
  Index ids(n);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (seg + 1 < offsets.size() && offsets[seg + 1] == i) ++seg;
    ids[i] = seg;
  }
  return ids;
}

Var segmented_linear_attention_core(Var q, Var k, Var v, std::size_t joints, std::span<const std::size_t> offsets,
                                    const MhsaConfig& cfg, const KernelSpec& spec) {
  cfg.validate();
  const std::size_t d = cfg.d_model, heads = cfg.num_heads, hd = cfg.head_dim();
  if (joints == 0 || q.shape().size() != 2 || q.shape()[0] % joints != 0 || q.shape()[1] != d)
    throw DimensionError("temporal_attention: expected [N * V, d_model], got " + shape_str(q.shape()));
  if (k.shape() != q.shape() || v.shape() != q.shape())
    throw DimensionError("temporal_attention: q, k, v shapes differ");
  const std::size_t frames = q.shape()[0] / joints;
  const Index seg = segment_ids(offsets, frames);
  const std::size_t fdim = spec.feature_dim(hd);
  profiling::Scope scope("attention");

  // Row r = (n * V + v) * H + h; its group is (segment(n) * V + v) * H + h.
  const std::size_t rows = frames * joints * heads;
  const std::size_t groups = offsets.size() * joints * heads;
  Index g(rows);
  for (std::size_t n = 0; n < frames; ++n)
    for (std::size_t j = 0; j < joints; ++j)
      for (std::size_t h = 0; h < heads; ++h) g[(n * joints + j) * heads + h] = (seg[n] * joints + j) * heads + h;
  IndexPtr group = make_index(std::move(g));

  Var pq = kernel_map(reshape(q, {rows, hd}), spec);
  Var pk = kernel_map(reshape(k, {rows, hd}), spec);
  Var vh = reshape(v, {rows, 1, hd});

  Var outer = reshape(bmm(reshape(pk, {rows, fdim, 1}), vh), {rows, fdim * hd});
  Var u = scatter_sum(outer, group, groups);  // [G, F*hd]
  Var z = scatter_sum(pk, group, groups);     // [G, F]

  Var num = reshape(bmm(reshape(pq, {rows, 1, fdim}), reshape(gather(u, group), {rows, fdim, hd})), {rows, hd});
  Var den = rowwise_dot(pq, gather(z, group));
  const auto dv = den.value().data();
  const auto low = std::min_element(dv.begin(), dv.end());
  if (low != dv.end() && !(*low >= spec.denominator_eps)) {
    std::ostringstream os;
    os << "temporal_attention: kernel denominator " << *low << " below eps " << spec.denominator_eps << " at row "
       << (low - dv.begin());
    throw NumericError(os.str());
  }
  return reshape(div(num, den), {frames * joints, d});
}

Var segmented_linear_mhsa(Var x, std::span<const std::size_t> offsets, const MhsaVars& p, const MhsaConfig& cfg,
                          const KernelSpec& spec) {
  const Shape s = x.shape();
  if (s.size() != 3 || s[2] != cfg.d_model)
    throw DimensionError("segmented_linear_mhsa: input " + shape_str(s) + " for d_model=" +
                         std::to_string(cfg.d_model));
  Var x2 = reshape(x, {s[0] * s[1], s[2]});
  Var q = linear(x2, p.wq, p.bq);
  Var k = linear(x2, p.wk, p.bk);
  Var v = linear(x2, p.wv, p.bv);
  Var att = segmented_linear_attention_core(q, k, v, s[1], offsets, cfg, spec);
  return reshape(linear(att, p.wo, p.bo), s);
}

namespace {

Tensor affine_loop(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t r = x.dim(0), in = x.dim(1), out = w.dim(1);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> y(r * out);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t o = 0; o < out; ++o) {
      double s = 0.0;
      for (std::size_t c = 0; c < in; ++c) s += x.at(i, c) * w.at(c, o);
      y[i * out + o] = s + b[o];
    }
  profiling::record("linear", static_cast<std::uint64_t>(r) * in * out,
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return Tensor({r, out}, std::move(y));
}

}  // namespace

Tensor quadratic_segment_oracle(const Tensor& x, std::span<const std::size_t> offsets, const MhsaWeights& p,
                                const MhsaConfig& cfg, const KernelSpec& spec, OracleScores mode) {
  cfg.validate();
  if (x.rank() != 3 || x.dim(2) != cfg.d_model) throw DimensionError("quadratic_segment_oracle: bad input shape");
  const std::size_t N = x.dim(0), V = x.dim(1), d = cfg.d_model, H = cfg.num_heads, hd = cfg.head_dim();
  const Index seg = segment_ids(offsets, N);
  const Tensor x2 = x.reshaped({N * V, d});
  const Tensor q = affine_loop(x2, p.wq, p.bq), k = affine_loop(x2, p.wk, p.bk), v = affine_loop(x2, p.wv, p.bv);

  std::vector<double> att(N * V * d, 0.0);
  {
    profiling::Scope scope("attention");
    const auto t0 = std::chrono::steady_clock::now();
    Tensor fq, fk;
    std::size_t fdim = hd;
    if (mode == OracleScores::kKernel) {
      fq = kernel_features(q.reshaped({N * V * H, hd}), spec);
      fk = kernel_features(k.reshaped({N * V * H, hd}), spec);
      fdim = spec.feature_dim(hd);
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    std::uint64_t macs = 0;
    std::vector<double> w;
    for (std::size_t m = 0; m < offsets.size(); ++m) {
      const std::size_t lo = offsets[m], hi = m + 1 < offsets.size() ? offsets[m + 1] : N;
      for (std::size_t j = 0; j < V; ++j)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t i = lo; i < hi; ++i) {
            const std::size_t ri = (i * V + j) * H + h;
            w.assign(hi - lo, 0.0);
            for (std::size_t t = lo; t < hi; ++t) {
              const std::size_t rt = (t * V + j) * H + h;
              double s = 0.0;
              if (mode == OracleScores::kKernel) {
                for (std::size_t f = 0; f < fdim; ++f) s += fq[ri * fdim + f] * fk[rt * fdim + f];
              } else {
                for (std::size_t c = 0; c < hd; ++c) s += q[ri * hd + c] * k[rt * hd + c];
                s *= inv_sqrt;
              }
              w[t - lo] = s;
            }
            if (mode == OracleScores::kSoftmax) {
              const double top = *std::max_element(w.begin(), w.end());
              for (double& s : w) s = std::exp(s - top);
            }
            double total = 0.0;
            for (double s : w) total += s;
            if (!(total >= spec.denominator_eps)) throw NumericError("quadratic_segment_oracle: denominator below eps");
            for (std::size_t t = lo; t < hi; ++t) {
              const std::size_t rt = (t * V + j) * H + h;
              for (std::size_t c = 0; c < hd; ++c) att[ri * hd + c] += w[t - lo] * v[rt * hd + c] / total;
            }
            macs += (hi - lo) * (fdim + hd);
          }
    }
    profiling::record("quadratic_attention", macs,
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return affine_loop(Tensor({N * V, d}, std::move(att)), p.wo, p.bo).reshaped({N, V, d});
}

std::uint64_t count_temporal_macs(const MhsaConfig& cfg, const KernelSpec& spec, std::size_t joints,
                                  std::size_t frames) {
  const std::uint64_t d = cfg.d_model, hd = cfg.head_dim();
  const std::uint64_t rows = static_cast<std::uint64_t>(frames) * joints * cfg.num_heads;
  const std::uint64_t f = spec.feature_dim(hd);
  std::uint64_t core = 2 * rows * f * hd + rows * f;
  if (spec.kind == KernelKind::kFavor) {
    core += 2 * rows * hd * f;
    if (spec.map == FeatureMap::kExp) core += 2 * rows * hd;
  }
  return 4 * static_cast<std::uint64_t>(frames) * joints * d * d + core;
}

}  // namespace star
