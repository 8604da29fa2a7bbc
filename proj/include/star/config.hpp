#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "star/model.hpp"
#include "star/synth.hpp"
#include "star/training.hpp"

namespace star {

struct DataConfig {
  std::string train_manifest;  // empty: generate from the synth.* keys
  std::string eval_manifest;   // empty: evaluate on the training clips
  std::string skeleton;        // topology file; empty: built-in NTU-25
  SynthSpec synth{};
};

struct ProfileConfig {
  std::size_t frames = 300;    // frames per person in the profiled clip
  std::size_t persons = 1;
  std::size_t warmup = 3;
  std::size_t iters = 10;
  std::vector<std::size_t> lengths = {64, 128, 256, 512};
};

struct RunConfig {
  std::string preset = "tiny";
  StarConfig model = StarConfig::preset("tiny");
  TrainConfig train{};
  DataConfig data{};
  ProfileConfig profile{};
};

// Flat "key = value" lines; '#' starts a comment. model.preset is applied
// before any other model.* key regardless of its position. Unknown keys and
// bad values throw ConfigError naming the key.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

// Applies "key=value" overrides in order on top of `cfg`.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments);

// Every key with its current value, sorted, one "key = value" per line.
// Parsing the result reproduces the configuration.
std::string format_config(const RunConfig& cfg);

}  // namespace star
