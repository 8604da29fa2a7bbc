#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "star/autodiff.hpp"
#include "star/tensor.hpp"

namespace star {

// One action sample: 1 or 2 persons, each a [T_p, V, 3] coordinate array.
struct ClipRecord {
  std::vector<Tensor> persons;
  std::size_t label = 0;
  std::string source_id;

  std::size_t num_frames() const;  // summed over persons
};

// Unit within which temporal attention and positional encoding run.
enum class SegmentPer { kPerson, kClip };

SegmentPer parse_segment_per(const std::string& value);
const char* to_string(SegmentPer per);

// Clips concatenated along the frame axis with no padding. Rows of one
// segment are contiguous; segments of one clip are adjacent.
struct RaggedBatch {
  Tensor frames;            // [N, V, C]
  Index clip_index;         // [N], non-decreasing
  Index segment_index;      // [N], non-decreasing
  Index segment_offsets;    // first row of each segment
  Index segment_clip;       // owning clip of each segment
  std::vector<std::size_t> labels;  // one per clip

  std::size_t num_frames() const { return clip_index.size(); }
  std::size_t num_clips() const { return labels.size(); }
  std::size_t num_segments() const { return segment_offsets.size(); }
  std::size_t num_joints() const { return frames.dim(1); }
  std::size_t segment_length(std::size_t s) const;

  // Throws InvalidArgument on any broken invariant.
  void validate() const;
};

RaggedBatch collate(std::span<const ClipRecord> clips, SegmentPer per = SegmentPer::kPerson);

// Sinusoidal encoding whose position restarts at 0 on every segment:
// PE(p, 2i) = sin(p / 10000^(2i/d)), PE(p, 2i+1) = cos(p / 10000^(2i/d)).
Tensor segmented_positional_encoding(const RaggedBatch& batch, std::size_t d_model);

// Same encoding for explicit segment offsets over `num_rows` rows.
Tensor segmented_positional_encoding(std::span<const std::size_t> segment_offsets, std::size_t num_rows,
                                     std::size_t d_model);

}  // namespace star
