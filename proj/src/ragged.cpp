#include "star/ragged.hpp"

#include <cmath>

#include "star/errors.hpp"

namespace star {

std::size_t ClipRecord::num_frames() const {
  std::size_t n = 0;
  for (const Tensor& p : persons) n += p.dim(0);
  return n;
}

SegmentPer parse_segment_per(const std::string& value) {
  if (value == "person") return SegmentPer::kPerson;
  if (value == "clip") return SegmentPer::kClip;
  throw ConfigError("segment_per: expected 'person' or 'clip', got '" + value + "'");
}

const char* to_string(SegmentPer per) { return per == SegmentPer::kPerson ? "person" : "clip"; }

std::size_t RaggedBatch::segment_length(std::size_t s) const {
  const std::size_t end = s + 1 < segment_offsets.size() ? segment_offsets[s + 1] : num_frames();
  return end - segment_offsets.at(s);
}

void RaggedBatch::validate() const {
  const std::size_t n = num_frames();
  auto fail = [](const std::string& why) { return InvalidArgument("ragged batch: " + why); };
  if (frames.rank() != 3 || frames.dim(0) != n) throw fail("frames must be [N, V, C] with N = clip_index size");
  if (segment_index.size() != n) throw fail("segment_index size differs from N");
  if (segment_clip.size() != segment_offsets.size()) throw fail("segment_clip size differs from segment count");
  if (n == 0 || segment_offsets.empty() || segment_offsets[0] != 0) throw fail("first segment must start at row 0");
  for (std::size_t s = 1; s < segment_offsets.size(); ++s) {
    if (segment_offsets[s] <= segment_offsets[s - 1]) throw fail("zero-length or unordered segment");
  }
  if (segment_offsets.back() >= n) throw fail("last segment is empty");
  std::vector<bool> clip_seen(num_clips(), false);
  for (std::size_t r = 0; r < n; ++r) {
    if (r > 0 && (clip_index[r] < clip_index[r - 1] || segment_index[r] < segment_index[r - 1])) {
      throw fail("indices must be non-decreasing");
    }
    const std::size_t s = segment_index[r];
    if (s >= num_segments()) throw fail("segment index out of range");
    const std::size_t begin = segment_offsets[s];
    if (r < begin || r >= begin + segment_length(s)) throw fail("segment_index disagrees with segment_offsets");
    if (clip_index[r] != segment_clip[s]) throw fail("segment spans more than one clip");
    if (clip_index[r] >= num_clips()) throw fail("clip index out of range");
    clip_seen[clip_index[r]] = true;
  }
  for (bool seen : clip_seen) {
    if (!seen) throw fail("clip without frames");
  }
}

RaggedBatch collate(std::span<const ClipRecord> clips, SegmentPer per) {
  if (clips.empty()) throw InvalidArgument("collate: empty clip list");
  const std::size_t joints = clips[0].persons.at(0).dim(1);
  const std::size_t channels = clips[0].persons.at(0).dim(2);
  RaggedBatch b;
  std::vector<double> data;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    const ClipRecord& clip = clips[c];
    if (clip.persons.empty() || clip.persons.size() > 2) {
      throw InvalidArgument("collate: clip '" + clip.source_id + "' must have 1 or 2 persons");
    }
    for (std::size_t p = 0; p < clip.persons.size(); ++p) {
      const Tensor& person = clip.persons[p];
      if (person.rank() != 3 || person.dim(1) != joints || person.dim(2) != channels) {
        throw DimensionError("collate: clip '" + clip.source_id + "' person shape " + shape_str(person.shape()));
      }
      if (person.dim(0) == 0) throw InvalidArgument("collate: clip '" + clip.source_id + "' has zero frames");
      if (per == SegmentPer::kPerson || p == 0) {
        b.segment_offsets.push_back(b.clip_index.size());
        b.segment_clip.push_back(c);
      }
      for (std::size_t t = 0; t < person.dim(0); ++t) {
        b.clip_index.push_back(c);
        b.segment_index.push_back(b.segment_offsets.size() - 1);
      }
      data.insert(data.end(), person.data().begin(), person.data().end());
    }
    b.labels.push_back(clip.label);
  }
  b.frames = Tensor({b.clip_index.size(), joints, channels}, std::move(data));
  return b;
}

Tensor segmented_positional_encoding(std::span<const std::size_t> segment_offsets, std::size_t num_rows,
                                     std::size_t d_model) {
  if (d_model == 0 || d_model % 2 != 0) {
    throw InvalidArgument("positional encoding: d_model must be even and positive, got " + std::to_string(d_model));
  }
  std::vector<double> pe(num_rows * d_model);
  std::size_t seg = 0;
  for (std::size_t r = 0; r < num_rows; ++r) {
    while (seg + 1 < segment_offsets.size() && segment_offsets[seg + 1] <= r) ++seg;
    const double pos = static_cast<double>(r - segment_offsets[seg]);
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double freq = std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe[r * d_model + 2 * i] = std::sin(pos / freq);
      pe[r * d_model + 2 * i + 1] = std::cos(pos / freq);
    }
  }
  return Tensor({num_rows, d_model}, std::move(pe));
}

Tensor segmented_positional_encoding(const RaggedBatch& batch, std::size_t d_model) {
  return segmented_positional_encoding(batch.segment_offsets, batch.num_frames(), d_model);
}

}  // namespace star
