#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "star/ragged.hpp"

namespace star {

struct SynthSpec {
  std::size_t classes = 3;
  std::size_t clips_per_class = 10;
  std::size_t len_min = 20;
  std::size_t len_max = 60;
  double noise_sigma = 0.01;        // metres
  double two_person_fraction = 0.3; // probability a clip gets a partner
  std::uint64_t seed = 0;
};

// Motion families cycled over class ids (class c uses family c % 6, with
// frequency scaled for c >= 6).
const std::vector<std::string>& synth_motion_names();

// Procedurally animated 25-joint skeletons. Each clip is drawn from its
// own RNG stream, so a clip depends only on (seed, class, repetition).
std::vector<ClipRecord> synth_dataset(const SynthSpec& spec);

}  // namespace star
