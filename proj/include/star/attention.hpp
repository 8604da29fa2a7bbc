#pragma once

#include <cstddef>

#include "star/autodiff.hpp"
#include "star/rng.hpp"
#include "star/tensor.hpp"

namespace star {

struct MhsaConfig {
  std::size_t d_model = 64;
  std::size_t num_heads = 8;

  std::size_t head_dim() const { return d_model / num_heads; }
  void validate() const;  // heads divide d_model, head_dim >= 1
};

// Projection weights of one multi-head attention block. Weights are
// stored [in, out] so that y = x W + b.
struct MhsaWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;

  static MhsaWeights xavier(std::size_t d_model, Rng& rng);
};

struct MhsaVars {
  Var wq, bq, wk, bk, wv, bv, wo, bo;

  static MhsaVars bind(Tape& tape, const MhsaWeights& w, bool requires_grad);
};

// Xavier-uniform [in, out] matrix.
Tensor xavier_uniform(std::size_t in, std::size_t out, Rng& rng);

}  // namespace star
