#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "star/autodiff.hpp"
#include "star/ragged.hpp"
#include "star/skeleton.hpp"
#include "star/temporal_attention.hpp"

namespace star {

struct StarConfig {
  std::size_t d_model = 64;
  std::size_t num_layers = 5;
  std::size_t num_heads = 8;
  std::size_t ffn_hidden = 128;
  std::size_t mlp_hidden = 128;
  std::size_t num_classes = 60;
  std::size_t in_channels = 3;
  double dropout = 0.5;
  std::size_t max_hops = 3;
  bool final_norm = false;  // LayerNorm before context attention
  // Parameter-free LayerNorm on the pooled clip vector. The context sum
  // grows with frame count; this keeps the head's input scale fixed.
  bool head_norm = true;
  // Gate logits <x_i, c> sum d*V terms; dividing by sqrt(d*V) keeps the
  // sigmoid out of saturation as the context weight grows.
  bool context_scale = true;

  KernelKind kernel = KernelKind::kElu;
  std::size_t favor_features = 256;
  FeatureMap favor_map = FeatureMap::kExp;
  std::uint64_t kernel_seed = 0;

  std::uint64_t init_seed = 0;

  // tiny, star64, star128. Throws ConfigError for unknown names.
  static StarConfig preset(const std::string& name);
  void validate() const;  // ConfigError with the offending key
  KernelSpec kernel_spec() const;
  MhsaConfig mhsa() const { return {d_model, num_heads}; }
};

// Trainable scalars by module kind.
struct ParamBreakdown {
  std::size_t linear = 0;      // embedding, attention projections, FFNs
  std::size_t layer_norm = 0;
  std::size_t context = 0;
  std::size_t head = 0;
  std::size_t total() const { return linear + layer_norm + context + head; }
};

// Named parameter tensors in a fixed creation order. Parameters are plain
// values; each forward binds them as leaves of a fresh tape.
class StarModel {
 public:
  StarModel(StarConfig cfg, SkeletonGraph skeleton);

  const StarConfig& config() const { return cfg_; }
  const SkeletonGraph& skeleton() const { return skeleton_; }
  const AttentionSupport& support() const { return support_; }
  const KernelSpec& kernel() const { return kernel_; }

  std::size_t num_params() const { return values_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor>& values() const { return values_; }
  std::vector<Tensor>& mutable_values() { return values_; }
  const Tensor& param(const std::string& name) const;
  void set_param(const std::string& name, Tensor value);  // shape must match

  std::size_t param_count() const;
  ParamBreakdown param_breakdown() const;

  std::vector<Var> bind(Tape& tape, bool requires_grad) const;

  // Logits [num_clips, num_classes]. `rng` drives dropout when training.
  Var forward(Tape& tape, std::span<const Var> params, const RaggedBatch& batch, bool training, Rng& rng) const;
  // Eval-mode convenience: fresh tape, no gradients.
  Tensor logits(const RaggedBatch& batch) const;

 private:
  void add_param(const std::string& name, Tensor value);
  std::size_t index(const std::string& name) const;

  StarConfig cfg_;
  SkeletonGraph skeleton_;
  AttentionSupport support_;
  KernelSpec kernel_;
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

// Context-aware summary of each clip's rows. x: [N, V, d] with rows of clip
// c listed by `clip_index`; w: [d, d].
//   c = tanh(mean_rows(x) W), a_i = sigmoid(s <x_i, c>_F), v' = sum_i a_i x_i
// with s = gate_scale. Returns [num_clips, V, d]; per-row weights in
// `weights` if given.
Var context_attention(Var x, Var w, const IndexPtr& clip_index, std::size_t num_clips, Tensor* weights = nullptr,
                      double gate_scale = 1.0);

// Checkpoint as JSON: config, skeleton hash, named tensors in model order.
void save_checkpoint(const StarModel& model, const std::filesystem::path& path);
StarModel load_checkpoint(const std::filesystem::path& path, const SkeletonGraph& skeleton);
std::string config_to_json(const StarConfig& cfg);

}  // namespace star
