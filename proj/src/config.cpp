#include "star/config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "star/errors.hpp"

namespace star {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad(const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); }

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) { return static_cast<std::size_t>(to_u64(key, v)); }

double to_double(const std::string& key, const std::string& v) {
  if (v.empty()) bad(key, "expected a number");
  char* end = nullptr;
  errno = 0;
  const double out = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || errno == ERANGE) bad(key, "expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  bad(key, "expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
  if (out.empty()) bad(key, "expected a comma-separated list of integers");
  return out;
}

template <class F>
auto keyed(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind(key, 0) == 0) throw;
    bad(key, msg);
  }
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    // model
    t["model.d_model"] = [](RunConfig& c, auto& k, auto& v) { c.model.d_model = to_size(k, v); };
    t["model.num_layers"] = [](RunConfig& c, auto& k, auto& v) { c.model.num_layers = to_size(k, v); };
    t["model.num_heads"] = [](RunConfig& c, auto& k, auto& v) { c.model.num_heads = to_size(k, v); };
    t["model.ffn_hidden"] = [](RunConfig& c, auto& k, auto& v) { c.model.ffn_hidden = to_size(k, v); };
    t["model.mlp_hidden"] = [](RunConfig& c, auto& k, auto& v) { c.model.mlp_hidden = to_size(k, v); };
    t["model.num_classes"] = [](RunConfig& c, auto& k, auto& v) { c.model.num_classes = to_size(k, v); };
    t["model.in_channels"] = [](RunConfig& c, auto& k, auto& v) { c.model.in_channels = to_size(k, v); };
    t["model.dropout"] = [](RunConfig& c, auto& k, auto& v) { c.model.dropout = to_double(k, v); };
    t["model.max_hops"] = [](RunConfig& c, auto& k, auto& v) { c.model.max_hops = to_size(k, v); };
    t["model.final_norm"] = [](RunConfig& c, auto& k, auto& v) { c.model.final_norm = to_bool(k, v); };
    t["model.head_norm"] = [](RunConfig& c, auto& k, auto& v) { c.model.head_norm = to_bool(k, v); };
    t["model.context_scale"] = [](RunConfig& c, auto& k, auto& v) { c.model.context_scale = to_bool(k, v); };
    t["model.kernel"] = [](RunConfig& c, auto& k, auto& v) {
      c.model.kernel = keyed(k, [&] { return parse_kernel_kind(v); });
    };
    t["model.favor_features"] = [](RunConfig& c, auto& k, auto& v) { c.model.favor_features = to_size(k, v); };
    t["model.favor_map"] = [](RunConfig& c, auto& k, auto& v) {
      c.model.favor_map = keyed(k, [&] { return parse_feature_map(v); });
    };
    t["model.kernel_seed"] = [](RunConfig& c, auto& k, auto& v) { c.model.kernel_seed = to_u64(k, v); };
    t["model.init_seed"] = [](RunConfig& c, auto& k, auto& v) { c.model.init_seed = to_u64(k, v); };
    // train
    t["train.max_epochs"] = [](RunConfig& c, auto& k, auto& v) { c.train.max_epochs = to_size(k, v); };
    t["train.batch_clips"] = [](RunConfig& c, auto& k, auto& v) { c.train.batch_clips = to_size(k, v); };
    t["train.warmup_steps"] = [](RunConfig& c, auto& k, auto& v) { c.train.warmup_steps = to_u64(k, v); };
    t["train.lr_scale"] = [](RunConfig& c, auto& k, auto& v) { c.train.lr_scale = to_double(k, v); };
    t["train.seed"] = [](RunConfig& c, auto& k, auto& v) { c.train.seed = to_u64(k, v); };
    t["train.eval_every"] = [](RunConfig& c, auto& k, auto& v) { c.train.eval_every = to_size(k, v); };
    t["train.grad_clip"] = [](RunConfig& c, auto& k, auto& v) { c.train.grad_clip = to_double(k, v); };
    t["train.beta1"] = [](RunConfig& c, auto& k, auto& v) { c.train.adam.beta1 = to_double(k, v); };
    t["train.beta2"] = [](RunConfig& c, auto& k, auto& v) { c.train.adam.beta2 = to_double(k, v); };
    t["train.adam_eps"] = [](RunConfig& c, auto& k, auto& v) { c.train.adam.eps = to_double(k, v); };
    t["train.segment_per"] = [](RunConfig& c, auto& k, auto& v) {
      c.train.segment_per = keyed(k, [&] { return parse_segment_per(v); });
    };
    // data
    t["data.train"] = [](RunConfig& c, auto&, auto& v) { c.data.train_manifest = v; };
    t["data.eval"] = [](RunConfig& c, auto&, auto& v) { c.data.eval_manifest = v; };
    t["data.skeleton"] = [](RunConfig& c, auto&, auto& v) { c.data.skeleton = v; };
    t["data.synth_classes"] = [](RunConfig& c, auto& k, auto& v) { c.data.synth.classes = to_size(k, v); };
    t["data.synth_clips_per_class"] = [](RunConfig& c, auto& k, auto& v) {
      c.data.synth.clips_per_class = to_size(k, v);
    };
    t["data.synth_len_min"] = [](RunConfig& c, auto& k, auto& v) { c.data.synth.len_min = to_size(k, v); };
    t["data.synth_len_max"] = [](RunConfig& c, auto& k, auto& v) { c.data.synth.len_max = to_size(k, v); };
    t["data.synth_noise"] = [](RunConfig& c, auto& k, auto& v) { c.data.synth.noise_sigma = to_double(k, v); };
    t["data.synth_two_person"] = [](RunConfig& c, auto& k, auto& v) {
      c.data.synth.two_person_fraction = to_double(k, v);
    };
    t["data.synth_seed"] = [](RunConfig& c, auto& k, auto& v) { c.data.synth.seed = to_u64(k, v); };
    // profile
    t["profile.frames"] = [](RunConfig& c, auto& k, auto& v) { c.profile.frames = to_size(k, v); };
    t["profile.persons"] = [](RunConfig& c, auto& k, auto& v) { c.profile.persons = to_size(k, v); };
    t["profile.warmup"] = [](RunConfig& c, auto& k, auto& v) { c.profile.warmup = to_size(k, v); };
    t["profile.iters"] = [](RunConfig& c, auto& k, auto& v) { c.profile.iters = to_size(k, v); };
    t["profile.lengths"] = [](RunConfig& c, auto& k, auto& v) { c.profile.lengths = to_list(k, v); };
    return t;
  }();
  return table;
}

void set_preset(RunConfig& cfg, const std::string& name) {
  cfg.model = keyed(std::string("model.preset"), [&] { return StarConfig::preset(name); });
  cfg.preset = name;
}

void check(const RunConfig& cfg) {
  cfg.model.validate();
  cfg.train.validate();
  if (cfg.profile.persons < 1 || cfg.profile.persons > 2) bad("profile.persons", "must be 1 or 2");
  if (cfg.profile.frames == 0) bad("profile.frames", "must be positive");
  if (cfg.profile.iters == 0) bad("profile.iters", "must be positive");
}

std::pair<std::string, std::string> split_assignment(const std::string& line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
  std::string key = trim(std::string_view(line).substr(0, eq));
  std::string value = trim(std::string_view(line).substr(eq + 1));
  if (key.empty()) throw ConfigError(where + ": empty key");
  return {std::move(key), std::move(value)};
}

void apply_pairs(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& pairs) {
  for (const auto& [k, v] : pairs)
    if (k == "model.preset") set_preset(cfg, v);
  for (const auto& [k, v] : pairs) {
    if (k == "model.preset") continue;
    auto it = setters().find(k);
    if (it == setters().end()) bad(k, "unknown key");
    it->second(cfg, k, v);
  }
  check(cfg);
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    pairs.push_back(split_assignment(line, "line " + std::to_string(lineno)));
  }
  apply_pairs(base, pairs);
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& a : assignments) pairs.push_back(split_assignment(a, "override"));
  apply_pairs(cfg, pairs);
}

std::string format_config(const RunConfig& c) {
  std::map<std::string, std::string> kv;
  const StarConfig& m = c.model;
  kv["model.preset"] = c.preset;
  kv["model.d_model"] = std::to_string(m.d_model);
  kv["model.num_layers"] = std::to_string(m.num_layers);
  kv["model.num_heads"] = std::to_string(m.num_heads);
  kv["model.ffn_hidden"] = std::to_string(m.ffn_hidden);
  kv["model.mlp_hidden"] = std::to_string(m.mlp_hidden);
  kv["model.num_classes"] = std::to_string(m.num_classes);
  kv["model.in_channels"] = std::to_string(m.in_channels);
  kv["model.dropout"] = num(m.dropout);
  kv["model.max_hops"] = std::to_string(m.max_hops);
  kv["model.final_norm"] = m.final_norm ? "true" : "false";
  kv["model.head_norm"] = m.head_norm ? "true" : "false";
  kv["model.context_scale"] = m.context_scale ? "true" : "false";
  kv["model.kernel"] = to_string(m.kernel);
  kv["model.favor_features"] = std::to_string(m.favor_features);
  kv["model.favor_map"] = to_string(m.favor_map);
  kv["model.kernel_seed"] = std::to_string(m.kernel_seed);
  kv["model.init_seed"] = std::to_string(m.init_seed);
  const TrainConfig& t = c.train;
  kv["train.max_epochs"] = std::to_string(t.max_epochs);
  kv["train.batch_clips"] = std::to_string(t.batch_clips);
  kv["train.warmup_steps"] = std::to_string(t.warmup_steps);
  kv["train.lr_scale"] = num(t.lr_scale);
  kv["train.seed"] = std::to_string(t.seed);
  kv["train.eval_every"] = std::to_string(t.eval_every);
  kv["train.grad_clip"] = num(t.grad_clip);
  kv["train.beta1"] = num(t.adam.beta1);
  kv["train.beta2"] = num(t.adam.beta2);
  kv["train.adam_eps"] = num(t.adam.eps);
  kv["train.segment_per"] = to_string(t.segment_per);
  kv["data.train"] = c.data.train_manifest;
  kv["data.eval"] = c.data.eval_manifest;
  kv["data.skeleton"] = c.data.skeleton;
  kv["data.synth_classes"] = std::to_string(c.data.synth.classes);
  kv["data.synth_clips_per_class"] = std::to_string(c.data.synth.clips_per_class);
  kv["data.synth_len_min"] = std::to_string(c.data.synth.len_min);
  kv["data.synth_len_max"] = std::to_string(c.data.synth.len_max);
  kv["data.synth_noise"] = num(c.data.synth.noise_sigma);
  kv["data.synth_two_person"] = num(c.data.synth.two_person_fraction);
  kv["data.synth_seed"] = std::to_string(c.data.synth.seed);
  kv["profile.frames"] = std::to_string(c.profile.frames);
  kv["profile.persons"] = std::to_string(c.profile.persons);
  kv["profile.warmup"] = std::to_string(c.profile.warmup);
  kv["profile.iters"] = std::to_string(c.profile.iters);
  std::string lens;
  for (std::size_t i = 0; i < c.profile.lengths.size(); ++i)
    lens += (i ? "," : "") + std::to_string(c.profile.lengths[i]);
  kv["profile.lengths"] = lens;
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace star
