#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "star/ragged.hpp"

namespace star {

inline constexpr std::size_t kNtuJoints = 25;

// Reads the NTU RGB+D `.skeleton` text layout. Only x, y, z of each joint
// are kept; bodies are grouped into persons by body id, and ids past the
// second are dropped (one warning each). Without `label`, the label comes
// from the `A###` action code in the file name (code - 1).
ClipRecord parse_ntu_skeleton(const std::filesystem::path& path, std::optional<std::size_t> label = std::nullopt,
                              std::vector<std::string>* warnings = nullptr);
ClipRecord parse_ntu_skeleton_text(std::string_view text, std::string source_id, std::size_t label,
                                   std::vector<std::string>* warnings = nullptr);

// Emits the same layout. Frame f lists every person with more than f
// frames; coordinates are written with round-trip precision.
std::string format_ntu_skeleton(const ClipRecord& clip);
void write_ntu_skeleton(const std::filesystem::path& path, const ClipRecord& clip);

std::optional<std::size_t> action_label_from_name(std::string_view filename);

struct ManifestEntry {
  std::filesystem::path path;
  std::size_t label = 0;
};

// One "<path> <label>" per line; relative paths resolve against the
// manifest's directory. Blank lines and '#' comments are skipped.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestEntry>& entries);

std::vector<ClipRecord> load_dataset(const std::filesystem::path& manifest, std::vector<std::string>* warnings = nullptr);

// Writes every clip as `<dir>/<name>.skeleton` plus `<dir>/manifest.txt`;
// returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<ClipRecord>& clips);

}  // namespace star
