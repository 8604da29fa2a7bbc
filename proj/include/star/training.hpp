#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "star/model.hpp"
#include "star/ragged.hpp"

namespace star {

// d^-0.5 * min(t^-0.5, t * w^-1.5). Throws InvalidArgument for t = 0 or w = 0.
double lr_schedule(std::size_t d_model, std::uint64_t t, std::uint64_t warmup);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  void validate() const;
};

struct TrainConfig {
  std::size_t max_epochs = 100;
  std::size_t batch_clips = 16;
  std::uint64_t warmup_steps = 4000;
  double lr_scale = 1.0;  // multiplies the schedule; 1 keeps the plain formula
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  double grad_clip = 0.0;  // global max-norm, 0 = off
  AdamConfig adam;
  SegmentPer segment_per = SegmentPer::kPerson;
  void validate() const;
};

// Bias-corrected Adam over a list of tensors.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  // One update with step size `lr`; increments the step counter.
  void step(std::vector<Tensor>& params, std::span<const Tensor> grads, double lr);
  std::uint64_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainState {
  Adam optimizer;
  std::uint64_t step = 0;  // completed updates
  double best_eval_acc = -1.0;
  std::size_t best_epoch = 0;
};

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

// Forward (training mode), mean cross-entropy, backward, Adam. Dropout
// masks come from a stream keyed by (seed, step), so the step is a pure
// function of its inputs. A non-finite loss or gradient throws
// NumericError carrying max |logit| and per-parameter gradient norms.
StepResult train_step(StarModel& model, TrainState& state, const RaggedBatch& batch, double lr,
                      const TrainConfig& cfg);

struct EvalResult {
  double top1 = 0.0;
  double loss = 0.0;
  std::size_t clips = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

// Eval mode. Throws InvalidArgument("empty dataset") on no clips.
EvalResult evaluate(const StarModel& model, std::span<const ClipRecord> clips, std::size_t batch_clips = 16,
                    SegmentPer per = SegmentPer::kPerson);

struct EpochRecord {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> eval_acc;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochRecord& r);

struct TrainResult {
  std::vector<EpochRecord> history;
  EvalResult final_train;
};

// Full loop. Epoch e shuffles clips with a stream keyed by (seed, e).
// When `run_dir` is set it receives metrics.csv (flushed per epoch),
// checkpoint_last.json and checkpoint_best.json. Evaluation uses
// `eval_clips`, or the training clips when that is empty.
TrainResult train(StarModel& model, std::span<const ClipRecord> train_clips, std::span<const ClipRecord> eval_clips,
                  const TrainConfig& cfg, const std::optional<std::filesystem::path>& run_dir = std::nullopt,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace star
