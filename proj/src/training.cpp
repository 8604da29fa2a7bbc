#include "star/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "star/errors.hpp"
#include "star/rng.hpp"

namespace star {

double lr_schedule(std::size_t d_model, std::uint64_t t, std::uint64_t warmup) {
  if (t == 0) throw InvalidArgument("lr_schedule: step t must be >= 1");
  if (warmup == 0) throw InvalidArgument("lr_schedule: warmup must be >= 1");
  if (d_model == 0) throw InvalidArgument("lr_schedule: d_model must be >= 1");
  const double td = static_cast<double>(t), w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(td, -0.5), td * std::pow(w, -1.5));
}

void AdamConfig::validate() const {
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1: must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2: must lie in (0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.adam_eps: must be positive");
}

void TrainConfig::validate() const {
  adam.validate();
  if (max_epochs == 0) throw ConfigError("train.max_epochs: must be positive");
  if (batch_clips == 0) throw ConfigError("train.batch_clips: must be positive");
  if (warmup_steps == 0) throw ConfigError("train.warmup_steps: must be >= 1");
  if (!(lr_scale > 0.0)) throw ConfigError("train.lr_scale: must be positive");
  if (eval_every == 0) throw ConfigError("train.eval_every: must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip: must be >= 0");
}

void Adam::step(std::vector<Tensor>& params, std::span<const Tensor> grads, double lr) {
  if (grads.size() != params.size()) throw InvalidArgument("adam: gradient count differs from parameter count");
  if (m_.empty()) {
    for (const Tensor& p : params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& g = grads[k];
    if (g.shape() != params[k].shape()) throw DimensionError("adam: gradient shape differs from parameter");
    std::vector<double> p = params[k].to_vector();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mh = m[i] / c1, vh = v[i] / c2;
      p[i] -= lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
    params[k] = Tensor(params[k].shape(), std::move(p));
  }
}

namespace {

double norm2(const Tensor& t) {
  double s = 0.0;
  for (double x : t.data()) s += x * x;
  return std::sqrt(s);
}

std::string grad_norm_report(const std::vector<std::string>& names, const std::vector<Tensor>& grads) {
  std::vector<std::pair<double, std::size_t>> norms;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const double n = norm2(grads[i]);
    norms.emplace_back(std::isfinite(n) ? n : INFINITY, i);
  }
  std::stable_sort(norms.begin(), norms.end(), [](auto& a, auto& b) { return a.first > b.first; });
  std::ostringstream os;
  os << "largest gradient norms:";
  for (std::size_t k = 0; k < std::min<std::size_t>(5, norms.size()); ++k)
    os << ' ' << names[norms[k].second] << '=' << norms[k].first;
  return os.str();
}

}  // namespace

StepResult train_step(StarModel& model, TrainState& state, const RaggedBatch& batch, double lr,
                      const TrainConfig& cfg) {
  const std::uint64_t t = state.step + 1;
  auto fail = [&](const std::string& what) {
    return NumericError("train step " + std::to_string(t) + ": " + what);
  };
  Tape tape;
  const auto vars = model.bind(tape, true);
  Rng drop_rng = Rng(cfg.seed, 0xd409).fork(state.step);
  Var logits;
  try {
    logits = model.forward(tape, vars, batch, true, drop_rng);
  } catch (const NumericError& e) {
    throw fail(std::string("non-finite activation in forward (") + e.what() + ")");
  }
  double max_logit = 0.0;
  for (double x : logits.value().data()) max_logit = std::max(max_logit, std::abs(x));
  Var loss;
  try {
    loss = cross_entropy(logits, batch.labels);
  } catch (const NumericError& e) {
    std::ostringstream os;
    os << "non-finite loss, max |logit| " << max_logit << " (" << e.what() << ")";
    throw fail(os.str());
  }
  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(vars.size());
  double total = 0.0;
  for (Var v : vars) {
    grads.push_back(tape.grad(v));
    for (double g : grads.back().data()) total += g * g;
  }
  const double gnorm = std::sqrt(total);
  if (!std::isfinite(gnorm)) {
    std::ostringstream os;
    os << "non-finite gradient, loss " << loss.value().item() << ", max |logit| " << max_logit << "; "
       << grad_norm_report(model.names(), grads);
    throw fail(os.str());
  }
  if (cfg.grad_clip > 0.0 && gnorm > cfg.grad_clip) {
    const double s = cfg.grad_clip / gnorm;
    for (Tensor& g : grads) {
      std::vector<double> v = g.to_vector();
      for (double& x : v) x *= s;
      g = Tensor(g.shape(), std::move(v));
    }
  }
  state.optimizer.step(model.mutable_values(), grads, lr);
  state.step = t;
  return {loss.value().item(), lr, gnorm};
}

EvalResult evaluate(const StarModel& model, std::span<const ClipRecord> clips, std::size_t batch_clips,
                    SegmentPer per) {
  if (clips.empty()) throw InvalidArgument("empty dataset");
  if (batch_clips == 0) throw InvalidArgument("evaluate: batch_clips must be positive");
  const std::size_t K = model.config().num_classes;
  EvalResult r;
  r.confusion.assign(K, std::vector<std::size_t>(K, 0));
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t lo = 0; lo < clips.size(); lo += batch_clips) {
    const auto part = clips.subspan(lo, std::min(batch_clips, clips.size() - lo));
    const RaggedBatch batch = collate(part, per);
    Tape tape(false);
    Rng unused(0);
    const auto vars = model.bind(tape, false);
    Var logits = model.forward(tape, vars, batch, false, unused);
    loss_sum += cross_entropy(logits, batch.labels).value().item() * static_cast<double>(part.size());
    const Tensor& l = logits.value();
    for (std::size_t c = 0; c < part.size(); ++c) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < K; ++k)
        if (l.at(c, k) > l.at(c, best)) best = k;
      ++r.confusion[batch.labels[c]][best];
      if (best == batch.labels[c]) ++correct;
    }
  }
  r.clips = clips.size();
  r.top1 = static_cast<double>(correct) / static_cast<double>(clips.size());
  r.loss = loss_sum / static_cast<double>(clips.size());
  return r;
}

std::string metrics_csv_header() { return "epoch,step,lr,train_loss,eval_acc"; }

std::string metrics_csv_row(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%llu,%.17g,%.17g,", r.epoch, static_cast<unsigned long long>(r.step), r.lr,
                r.train_loss);
  std::string row = buf;
  if (r.eval_acc) {
    std::snprintf(buf, sizeof buf, "%.17g", *r.eval_acc);
    row += buf;
  }
  return row;
}

TrainResult train(StarModel& model, std::span<const ClipRecord> train_clips, std::span<const ClipRecord> eval_clips,
                  const TrainConfig& cfg, const std::optional<std::filesystem::path>& run_dir,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train_clips.empty()) throw InvalidArgument("empty dataset");
  const auto eval_set = eval_clips.empty() ? train_clips : eval_clips;
  std::ofstream csv;
  if (run_dir) {
    std::filesystem::create_directories(*run_dir);
    csv.open(*run_dir / "metrics.csv");
    if (!csv) throw FormatError("cannot write " + (*run_dir / "metrics.csv").string());
    csv << metrics_csv_header() << '\n' << std::flush;
  }

  TrainState state{Adam(cfg.adam)};
  TrainResult result;
  std::vector<std::size_t> order(train_clips.size());
  const Rng shuffle_root(cfg.seed, 0x5f1e);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = shuffle_root.fork(epoch);
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng.uniform_index(i + 1)]);

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    std::vector<ClipRecord> chunk;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_clips) {
      chunk.clear();
      for (std::size_t k = lo; k < std::min(order.size(), lo + cfg.batch_clips); ++k)
        chunk.push_back(train_clips[order[k]]);
      const double lr = cfg.lr_scale * lr_schedule(model.config().d_model, state.step + 1, cfg.warmup_steps);
      const StepResult s = train_step(model, state, collate(chunk, cfg.segment_per), lr, cfg);
      loss_sum += s.loss * static_cast<double>(chunk.size());
      rec.lr = s.lr;
    }
    rec.step = state.step;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    if (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs) {
      const EvalResult ev = evaluate(model, eval_set, cfg.batch_clips, cfg.segment_per);
      rec.eval_acc = ev.top1;
      if (ev.top1 > state.best_eval_acc) {
        state.best_eval_acc = ev.top1;
        state.best_epoch = epoch;
        if (run_dir) save_checkpoint(model, *run_dir / "checkpoint_best.json");
      }
    }
    result.history.push_back(rec);
    if (run_dir) csv << metrics_csv_row(rec) << '\n' << std::flush;
    if (on_epoch) on_epoch(rec);
  }
  if (run_dir) save_checkpoint(model, *run_dir / "checkpoint_last.json");
  result.final_train = evaluate(model, train_clips, cfg.batch_clips, cfg.segment_per);
  return result;
}

}  // namespace star
