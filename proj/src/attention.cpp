#include "star/attention.hpp"

#include <cmath>

#include "star/errors.hpp"

namespace star {

void MhsaConfig::validate() const {
  if (num_heads == 0 || d_model == 0 || d_model % num_heads != 0) {
    throw ConfigError("model.num_heads: " + std::to_string(num_heads) + " heads must divide d_model " +
                      std::to_string(d_model));
  }
}

Tensor xavier_uniform(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  return Tensor({in, out}, std::move(w));
}

MhsaWeights MhsaWeights::xavier(std::size_t d, Rng& rng) {
  MhsaWeights w;
  w.wq = xavier_uniform(d, d, rng);
  w.wk = xavier_uniform(d, d, rng);
  w.wv = xavier_uniform(d, d, rng);
  w.wo = xavier_uniform(d, d, rng);
  w.bq = w.bk = w.bv = w.bo = Tensor::zeros({d});
  return w;
}

MhsaVars MhsaVars::bind(Tape& tape, const MhsaWeights& w, bool rg) {
  return {tape.leaf(w.wq, rg), tape.leaf(w.bq, rg), tape.leaf(w.wk, rg), tape.leaf(w.bk, rg),
          tape.leaf(w.wv, rg), tape.leaf(w.bv, rg), tape.leaf(w.wo, rg), tape.leaf(w.bo, rg)};
}

}  // namespace star
