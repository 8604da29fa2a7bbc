#include "star/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace star {

void perturb_parameters(StarModel& model, double amplitude, std::uint64_t seed) {
  Rng rng(seed, 0x9e7b);
  for (std::size_t i = 0; i < model.num_params(); ++i) {
    const Tensor& t = model.values()[i];
    std::vector<double> v = t.to_vector();
    for (double& x : v) x += rng.uniform(-amplitude, amplitude);
    model.mutable_values()[i] = Tensor(t.shape(), std::move(v));
  }
}

double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

std::vector<GradcheckEntry> GradcheckReport::worst(std::size_t k) const {
  std::vector<GradcheckEntry> v = worst_per_param;
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.rel_error > b.rel_error; });
  if (v.size() > k) v.resize(k);
  return v;
}

GradcheckReport gradcheck_model(const StarModel& model, const RaggedBatch& batch, double h) {
  Rng unused(0);
  std::vector<Tensor> analytic;
  {
    Tape tape;
    const auto vars = model.bind(tape, true);
    Var loss = cross_entropy(model.forward(tape, vars, batch, false, unused), batch.labels);
    tape.backward(loss);
    for (Var v : vars) analytic.push_back(tape.grad(v));
  }
  std::vector<Tensor> values = model.values();
  auto eval = [&] {
    Tape tape(false);
    std::vector<Var> vars;
    vars.reserve(values.size());
    for (const Tensor& t : values) vars.push_back(tape.leaf(t, false));
    return cross_entropy(model.forward(tape, vars, batch, false, unused), batch.labels).value().item();
  };

  GradcheckReport report;
  for (std::size_t p = 0; p < values.size(); ++p) {
    const Tensor original = values[p];
    GradcheckEntry worst{model.names()[p], 0, 0.0, 0.0, -1.0};
    std::vector<double> buf = original.to_vector();
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const double x0 = buf[i];
      buf[i] = x0 + h;
      values[p] = Tensor(original.shape(), buf);
      const double up = eval();
      buf[i] = x0 - h;
      values[p] = Tensor(original.shape(), buf);
      const double down = eval();
      buf[i] = x0;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p][i];
      const double rel = relative_error(a, numeric);
      if (rel > worst.rel_error) worst = {model.names()[p], i, a, numeric, rel};
      ++report.entries_checked;
    }
    values[p] = original;
    report.max_rel_error = std::max(report.max_rel_error, worst.rel_error);
    report.worst_per_param.push_back(worst);
  }
  return report;
}

}  // namespace star
