#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "star/model.hpp"

namespace star {

// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

struct GradcheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> worst_per_param;  // model order
  std::size_t entries_checked = 0;
  double max_rel_error = 0.0;

  bool passed(double tol) const { return max_rel_error < tol; }
  std::vector<GradcheckEntry> worst(std::size_t k) const;  // sorted by rel_error, descending
};

// Central differences of the mean cross-entropy on `batch`, dropout off,
// against the tape gradient, for every scalar of every parameter.
// Adds U(-amplitude, amplitude) noise to every scalar. Moves a freshly
// initialised model off exact zeros so every parameter's gradient is
// exercised.
void perturb_parameters(StarModel& model, double amplitude, std::uint64_t seed);

GradcheckReport gradcheck_model(const StarModel& model, const RaggedBatch& batch, double h = 1e-5);

}  // namespace star
