#include "star/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "star/attention.hpp"
#include "star/errors.hpp"
#include "star/profiler.hpp"
#include "star/spatial_attention.hpp"

namespace star {

using json = nlohmann::json;

StarConfig StarConfig::preset(const std::string& name) {
  StarConfig c;
  if (name == "tiny") {
    c.d_model = 8;
    c.num_heads = 2;
    c.num_layers = 2;
    c.ffn_hidden = 16;
    c.mlp_hidden = 16;
    c.num_classes = 3;
    c.dropout = 0.1;
  } else if (name == "star64") {
    // defaults
  } else if (name == "star128") {
    c.d_model = 128;
    c.ffn_hidden = 256;
    c.mlp_hidden = 256;
  } else {
    throw ConfigError("model.preset: unknown preset '" + name + "' (tiny, star64, star128)");
  }
  return c;
}

void StarConfig::validate() const {
  auto need = [](bool ok, const char* key, const std::string& why) {
    if (!ok) throw ConfigError(std::string(key) + ": " + why);
  };
  need(d_model > 0, "model.d_model", "must be positive");
  need(d_model % 2 == 0, "model.d_model", "must be even for the sinusoidal encoding");
  need(num_layers > 0, "model.num_layers", "must be positive");
  need(num_heads > 0 && d_model % num_heads == 0, "model.num_heads", "must divide model.d_model");
  need(ffn_hidden > 0, "model.ffn_hidden", "must be positive");
  need(mlp_hidden > 0, "model.mlp_hidden", "must be positive");
  need(num_classes > 0, "model.num_classes", "must be positive");
  need(in_channels > 0, "model.in_channels", "must be positive");
  need(dropout >= 0.0 && dropout < 1.0, "model.dropout", "must lie in [0, 1)");
  need(max_hops > 0, "model.max_hops", "must be positive");
  need(kernel == KernelKind::kElu || favor_features > 0, "model.favor_features", "must be positive");
}

KernelSpec StarConfig::kernel_spec() const {
  if (kernel == KernelKind::kElu) return KernelSpec::elu();
  return KernelSpec::favor(d_model / num_heads, favor_features, favor_map, kernel_seed);
}

StarModel::StarModel(StarConfig cfg, SkeletonGraph skeleton)
    : cfg_(std::move(cfg)), skeleton_(std::move(skeleton)) {
  cfg_.validate();
  support_ = build_support(skeleton_, cfg_.max_hops);
  kernel_ = cfg_.kernel_spec();

  const std::size_t d = cfg_.d_model;
  Rng root(cfg_.init_seed, 0x57a2);
  std::uint64_t stream = 0;
  auto weight = [&](std::size_t in, std::size_t out) {
    Rng r = root.fork(stream++);
    return xavier_uniform(in, out, r);
  };
  auto affine = [&](const std::string& name, std::size_t in, std::size_t out) {
    add_param(name + ".weight", weight(in, out));
    add_param(name + ".bias", Tensor::zeros({out}));
  };
  auto norm = [&](const std::string& name) {
    add_param(name + ".gamma", Tensor::ones({d}));
    add_param(name + ".beta", Tensor::zeros({d}));
  };

  affine("embed", cfg_.in_channels, d);
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    for (const char* kind : {"spatial", "temporal"}) {
      const std::string p = "layers." + std::to_string(l) + "." + kind;
      for (const char* proj : {"q", "k", "v", "o"}) affine(p + ".attn." + proj, d, d);
      affine(p + ".ffn.fc1", d, cfg_.ffn_hidden);
      affine(p + ".ffn.fc2", cfg_.ffn_hidden, d);
      norm(p + ".norm1");
      norm(p + ".norm2");
    }
  }
  if (cfg_.final_norm) norm("final_norm");
  // Zero start: every gate opens at 0.5. A random W saturates the
  // d*V-term gate logits and whole clips can pool to nothing.
  add_param("context.weight", Tensor::zeros({d, d}));
  affine("head.fc1", d, cfg_.mlp_hidden);
  // Zero output layer: uniform logits at step 0.
  add_param("head.fc2.weight", Tensor::zeros({cfg_.mlp_hidden, cfg_.num_classes}));
  add_param("head.fc2.bias", Tensor::zeros({cfg_.num_classes}));
}

void StarModel::add_param(const std::string& name, Tensor value) {
  lookup_.emplace(name, names_.size());
  names_.push_back(name);
  values_.push_back(std::move(value));
}

std::size_t StarModel::index(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw InvalidArgument("model has no parameter '" + name + "'");
  return it->second;
}

const Tensor& StarModel::param(const std::string& name) const { return values_[index(name)]; }

void StarModel::set_param(const std::string& name, Tensor value) {
  const std::size_t i = index(name);
  if (value.shape() != values_[i].shape()) {
    throw DimensionError("parameter '" + name + "' expects " + shape_str(values_[i].shape()) + ", got " +
                         shape_str(value.shape()));
  }
  values_[i] = std::move(value);
}

std::size_t StarModel::param_count() const { return param_breakdown().total(); }

ParamBreakdown StarModel::param_breakdown() const {
  ParamBreakdown b;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const std::string& n = names_[i];
    const std::size_t k = values_[i].numel();
    if (n.find("norm") != std::string::npos) b.layer_norm += k;
    else if (n.rfind("context.", 0) == 0) b.context += k;
    else if (n.rfind("head.", 0) == 0) b.head += k;
    else b.linear += k;
  }
  return b;
}

std::vector<Var> StarModel::bind(Tape& tape, bool requires_grad) const {
  std::vector<Var> out;
  out.reserve(values_.size());
  for (const Tensor& t : values_) out.push_back(tape.leaf(t, requires_grad));
  return out;
}

Var context_attention(Var x, Var w, const IndexPtr& clip_index, std::size_t num_clips, Tensor* weights,
                      double gate_scale) {
  const Shape s = x.shape();
  if (s.size() != 3) throw DimensionError("context_attention: expected [N, V, d], got " + shape_str(s));
  const std::size_t rows = s[0], V = s[1], d = s[2];
  if (clip_index->size() != rows) throw DimensionError("context_attention: clip index size differs from rows");
  std::vector<double> inv(num_clips, 0.0);
  for (std::size_t c : *clip_index) {
    if (c >= num_clips) throw IndexError("context_attention: clip id out of range");
    inv[c] += 1.0;
  }
  for (std::size_t c = 0; c < num_clips; ++c) {
    if (inv[c] == 0.0) throw InvalidArgument("context_attention: clip " + std::to_string(c) + " has no frames");
    inv[c] = 1.0 / inv[c];
  }
  Tape& tape = *x.tape;
  Var flat = reshape(x, {rows, V * d});
  Var mean = mul(scatter_sum(flat, clip_index, num_clips), tape.constant(Tensor({num_clips, 1}, inv)));
  Var ctx = reshape(tanh(matmul(reshape(mean, {num_clips * V, d}), w)), {num_clips, V * d});
  Var dot = rowwise_dot(flat, gather(ctx, clip_index));  // [N, 1]
  if (gate_scale != 1.0) dot = scale(dot, gate_scale);
  Var a = sigmoid(dot);
  if (weights) *weights = a.value();
  return reshape(scatter_sum(mul(flat, a), clip_index, num_clips), {num_clips, V, d});
}

Var StarModel::forward(Tape& tape, std::span<const Var> params, const RaggedBatch& batch, bool training,
                       Rng& rng) const {
  if (params.size() != values_.size()) throw InvalidArgument("forward: parameter list does not match the model");
  if (batch.frames.rank() != 3 || batch.num_joints() != skeleton_.num_joints() ||
      batch.frames.dim(2) != cfg_.in_channels) {
    throw DimensionError("forward: batch frames " + shape_str(batch.frames.shape()) + " do not fit V=" +
                         std::to_string(skeleton_.num_joints()) + ", channels=" + std::to_string(cfg_.in_channels));
  }
  for (std::size_t y : batch.labels) {
    if (y >= cfg_.num_classes) throw IndexError("forward: label " + std::to_string(y) + " >= num_classes");
  }
  const std::size_t N = batch.num_frames(), V = batch.num_joints(), d = cfg_.d_model;
  const MhsaConfig mh = cfg_.mhsa();
  const double p = cfg_.dropout;
  auto P = [&](const std::string& name) { return params[index(name)]; };
  auto drop = [&](Var v) { return dropout(v, p, training, rng); };
  auto affine = [&](Var x2, const std::string& name) { return linear(x2, P(name + ".weight"), P(name + ".bias")); };

  Var x;
  {
    profiling::Scope scope("embed");
    x = reshape(affine(tape.constant(batch.frames.reshaped({N * V, cfg_.in_channels})), "embed"), {N, V, d});
    const Tensor pe = segmented_positional_encoding(batch, d);
    std::vector<double> rep(N * V * d);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < V; ++j)
        for (std::size_t c = 0; c < d; ++c) rep[(n * V + j) * d + c] = pe.at(n, c);
    x = add(x, tape.constant(Tensor({N, V, d}, std::move(rep))));
  }

  auto encoder = [&](Var in, const std::string& pre, bool spatial) {
    profiling::Scope scope(spatial ? "spatial" : "temporal");
    MhsaVars m{P(pre + ".attn.q.weight"), P(pre + ".attn.q.bias"), P(pre + ".attn.k.weight"),
               P(pre + ".attn.k.bias"),   P(pre + ".attn.v.weight"), P(pre + ".attn.v.bias"),
               P(pre + ".attn.o.weight"), P(pre + ".attn.o.bias")};
    Var a = spatial ? sparse_mhsa(in, support_, m, mh)
                    : segmented_linear_mhsa(in, batch.segment_offsets, m, mh, kernel_);
    Var y = layer_norm(add(in, drop(a)), P(pre + ".norm1.gamma"), P(pre + ".norm1.beta"));
    Var h = affine(reshape(y, {N * V, d}), pre + ".ffn.fc1");
    h = affine(drop(silu(h)), pre + ".ffn.fc2");
    return layer_norm(add(y, drop(reshape(h, {N, V, d}))), P(pre + ".norm2.gamma"), P(pre + ".norm2.beta"));
  };

  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    profiling::Scope scope("layer" + std::to_string(l));
    const std::string pre = "layers." + std::to_string(l);
    x = add(encoder(x, pre + ".spatial", true), encoder(x, pre + ".temporal", false));
  }
  if (cfg_.final_norm) x = layer_norm(x, P("final_norm.gamma"), P("final_norm.beta"));

  profiling::Scope scope("head");
  const std::size_t C = batch.num_clips();
  const double gate = cfg_.context_scale ? 1.0 / std::sqrt(static_cast<double>(V * d)) : 1.0;
  Var summary = context_attention(x, P("context.weight"), make_index(batch.clip_index), C, nullptr, gate);
  Index joint_owner(C * V);
  for (std::size_t r = 0; r < C * V; ++r) joint_owner[r] = r / V;
  Var pooled = scale(scatter_sum(reshape(summary, {C * V, d}), make_index(std::move(joint_owner)), C),
                     1.0 / static_cast<double>(V));
  if (cfg_.head_norm)
    pooled = layer_norm(pooled, tape.constant(Tensor::ones({d})), tape.constant(Tensor::zeros({d})));
  Var h = drop(silu(affine(pooled, "head.fc1")));
  return affine(h, "head.fc2");
}

Tensor StarModel::logits(const RaggedBatch& batch) const {
  Tape tape(false);
  Rng unused(0);
  const auto vars = bind(tape, false);
  return forward(tape, vars, batch, false, unused).value();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json config_json(const StarConfig& c) {
  return json{{"d_model", c.d_model},
              {"num_layers", c.num_layers},
              {"num_heads", c.num_heads},
              {"ffn_hidden", c.ffn_hidden},
              {"mlp_hidden", c.mlp_hidden},
              {"num_classes", c.num_classes},
              {"in_channels", c.in_channels},
              {"dropout", c.dropout},
              {"max_hops", c.max_hops},
              {"final_norm", c.final_norm},
              {"head_norm", c.head_norm},
              {"context_scale", c.context_scale},
              {"kernel", to_string(c.kernel)},
              {"favor_features", c.favor_features},
              {"favor_map", to_string(c.favor_map)},
              {"kernel_seed", c.kernel_seed},
              {"init_seed", c.init_seed}};
}

StarConfig config_from_json(const json& j) {
  StarConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.in_channels = j.at("in_channels").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.max_hops = j.at("max_hops").get<std::size_t>();
  c.final_norm = j.at("final_norm").get<bool>();
  c.head_norm = j.at("head_norm").get<bool>();
  c.context_scale = j.at("context_scale").get<bool>();
  c.kernel = parse_kernel_kind(j.at("kernel").get<std::string>());
  c.favor_features = j.at("favor_features").get<std::size_t>();
  c.favor_map = parse_feature_map(j.at("favor_map").get<std::string>());
  c.kernel_seed = j.at("kernel_seed").get<std::uint64_t>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string config_to_json(const StarConfig& cfg) { return config_json(cfg).dump(2); }

void save_checkpoint(const StarModel& model, const std::filesystem::path& path) {
  json params = json::array();
  for (std::size_t i = 0; i < model.num_params(); ++i) {
    const Tensor& t = model.values()[i];
    params.push_back({{"name", model.names()[i]}, {"shape", t.shape()}, {"data", t.to_vector()}});
  }
  json doc{{"format", "star-checkpoint"},
           {"version", 1},
           {"config", config_json(model.config())},
           {"skeleton_hash", hex64(model.skeleton().hash())},
           {"num_joints", model.skeleton().num_joints()},
           {"params", std::move(params)}};
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out << doc.dump() << '\n';
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

StarModel load_checkpoint(const std::filesystem::path& path, const SkeletonGraph& skeleton) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path.string() + ": " + e.what());
  }
  try {
    if (doc.at("format") != "star-checkpoint" || doc.at("version") != 1)
      throw FormatError("checkpoint " + path.string() + ": unsupported format or version");
    if (doc.at("skeleton_hash").get<std::string>() != hex64(skeleton.hash()))
      throw FormatError("checkpoint " + path.string() + ": skeleton hash differs from the loaded topology");
    StarModel model(config_from_json(doc.at("config")), skeleton);
    const json& params = doc.at("params");
    if (params.size() != model.num_params())
      throw FormatError("checkpoint " + path.string() + ": parameter count differs from the config");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const json& p = params[i];
      const auto name = p.at("name").get<std::string>();
      if (name != model.names()[i]) throw FormatError("checkpoint: unexpected parameter '" + name + "'");
      model.set_param(name, Tensor(p.at("shape").get<Shape>(), p.at("data").get<std::vector<double>>()));
    }
    return model;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace star
