#include "star/synth.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "star/dataset.hpp"
#include "star/errors.hpp"
#include "star/rng.hpp"

namespace star {

namespace {

using Vec3 = std::array<double, 3>;

// Standing rest pose, metres, camera ~3 m away.
const std::array<Vec3, kNtuJoints> kRestPose = {{
    {0.00, 0.00, 3.00},   {0.00, 0.30, 3.00},   {0.00, 0.62, 3.00},   {0.00, 0.75, 3.00},
    {-0.18, 0.52, 3.00},  {-0.20, 0.25, 3.00},  {-0.20, 0.02, 3.00},  {-0.20, -0.05, 3.00},
    {0.18, 0.52, 3.00},   {0.20, 0.25, 3.00},   {0.20, 0.02, 3.00},   {0.20, -0.05, 3.00},
    {-0.10, -0.02, 3.00}, {-0.10, -0.45, 3.00}, {-0.10, -0.85, 3.00}, {-0.10, -0.90, 2.90},
    {0.10, -0.02, 3.00},  {0.10, -0.45, 3.00},  {0.10, -0.85, 3.00},  {0.10, -0.90, 2.90},
    {0.00, 0.55, 3.00},   {-0.20, -0.12, 3.00}, {-0.17, -0.07, 3.00}, {0.20, -0.12, 3.00},
    {0.17, -0.07, 3.00},
}};

constexpr std::size_t kLeftShoulder = 4, kRightShoulder = 8, kRightHip = 16, kSpineBase = 0;
const std::vector<std::size_t> kLeftArm = {5, 6, 7, 21, 22};
const std::vector<std::size_t> kRightArm = {9, 10, 11, 23, 24};
const std::vector<std::size_t> kRightLeg = {17, 18, 19};
const std::vector<std::size_t> kUpperBody = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 20, 21, 22, 23, 24};

// Rotate joints about a pivot in the plane of axes (u, v).
void rotate(std::array<Vec3, kNtuJoints>& pose, const std::vector<std::size_t>& joints, std::size_t pivot,
            int u, int v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const Vec3 p = pose[pivot];
  for (std::size_t j : joints) {
    const double du = pose[j][u] - p[u], dv = pose[j][v] - p[v];
    pose[j][u] = p[u] + c * du - s * dv;
    pose[j][v] = p[v] + s * du + c * dv;
  }
}

struct MotionParams {
  std::size_t family = 0;
  double omega = 0.0;
  double phase = 0.0;
  double amplitude = 1.0;
};

std::array<Vec3, kNtuJoints> pose_at(const MotionParams& m, double t) {
  auto pose = kRestPose;
  const double s = std::sin(m.omega * t + m.phase);
  switch (m.family) {
    case 0:  // left arm wave: raise and swing about the shoulder
      rotate(pose, kLeftArm, kLeftShoulder, 0, 1, -m.amplitude * 2.4 * (0.6 + 0.4 * s));
      break;
    case 1:  // whole-body vertical bounce
      for (auto& j : pose) j[1] += m.amplitude * 0.3 * std::abs(s);
      break;
    case 2:  // lateral sway, growing with height above the feet
      for (auto& j : pose) j[0] += m.amplitude * 0.25 * s * (j[1] + 0.9) / 1.65;
      break;
    case 3:  // right arm wave
      rotate(pose, kRightArm, kRightShoulder, 0, 1, m.amplitude * 2.4 * (0.6 + 0.4 * s));
      break;
    case 4:  // right leg kick forward
      rotate(pose, kRightLeg, kRightHip, 2, 1, m.amplitude * 1.2 * std::max(0.0, s));
      break;
    default:  // bow: upper body pitches toward the camera
      rotate(pose, kUpperBody, kSpineBase, 2, 1, m.amplitude * 0.8 * (0.5 + 0.5 * s));
      break;
  }
  return pose;
}

Tensor animate(const MotionParams& m, std::size_t frames, const Vec3& offset, double noise, Rng& rng) {
  std::vector<double> data;
  data.reserve(frames * kNtuJoints * 3);
  for (std::size_t f = 0; f < frames; ++f) {
    auto pose = pose_at(m, static_cast<double>(f));
    for (const Vec3& j : pose)
      for (int a = 0; a < 3; ++a) data.push_back(j[a] + offset[a] + (noise > 0 ? noise * rng.normal() : 0.0));
  }
  return Tensor({frames, kNtuJoints, 3}, std::move(data));
}

}  // namespace

const std::vector<std::string>& synth_motion_names() {
  static const std::vector<std::string> kNames = {"wave_left", "bounce", "sway", "wave_right", "kick_right", "bow"};
  return kNames;
}

std::vector<ClipRecord> synth_dataset(const SynthSpec& spec) {
  if (spec.classes == 0) throw InvalidArgument("synth: empty class list");
  if (spec.len_min < 8 || spec.len_max > 512 || spec.len_min > spec.len_max) {
    throw InvalidArgument("synth: length range must satisfy 8 <= min <= max <= 512");
  }
  if (spec.noise_sigma < 0 || spec.two_person_fraction < 0 || spec.two_person_fraction > 1) {
    throw InvalidArgument("synth: noise_sigma >= 0 and two_person_fraction in [0, 1] required");
  }
  const Rng root(spec.seed, 0x5717);
  std::vector<ClipRecord> clips;
  for (std::size_t rep = 0; rep < spec.clips_per_class; ++rep) {
    for (std::size_t c = 0; c < spec.classes; ++c) {
      Rng rng = root.fork(c * 1000003ULL + rep);
      const std::size_t frames = spec.len_min + rng.uniform_index(spec.len_max - spec.len_min + 1);
      const double period = 24.0 * rng.uniform(0.8, 1.25) / (1.0 + 0.5 * static_cast<double>(c / 6));
      MotionParams m{c % 6, 2.0 * std::numbers::pi / period, rng.uniform(0.0, 2.0 * std::numbers::pi),
                     rng.uniform(0.8, 1.2)};
      Vec3 offset = {rng.uniform(-0.3, 0.3), rng.uniform(-0.05, 0.05), rng.uniform(-0.3, 0.3)};

      ClipRecord clip;
      clip.label = c;
      char name[64];
      std::snprintf(name, sizeof name, "S001C001P001R%03zuA%03zu", rep + 1, c + 1);
      clip.source_id = name;
      const bool partner = rng.uniform() < spec.two_person_fraction;
      clip.persons.push_back(animate(m, frames, offset, spec.noise_sigma, rng));
      if (partner) {
        MotionParams m2 = m;
        m2.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        Vec3 offset2 = offset;
        offset2[0] += 0.9;
        clip.persons.push_back(animate(m2, frames, offset2, spec.noise_sigma, rng));
      }
      clips.push_back(std::move(clip));
    }
  }
  return clips;
}

}  // namespace star
