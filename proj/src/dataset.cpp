#include "star/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "star/errors.hpp"

namespace star {

namespace {

class LineReader {
 public:
  LineReader(std::string_view text, std::string source) : in_(std::string(text)), source_(std::move(source)) {}

  std::vector<std::string> fields(const char* what) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      std::istringstream ls(line);
      std::vector<std::string> out;
      for (std::string tok; ls >> tok;) out.push_back(tok);
      if (!out.empty()) return out;
    }
    throw FormatError(source_ + ": truncated file, expected " + what + " after line " + std::to_string(line_no_));
  }

  std::size_t count(const char* what) {
    auto f = fields(what);
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(f[0].data(), f[0].data() + f[0].size(), v);
    if (ec != std::errc() || p != f[0].data() + f[0].size() || f.size() != 1) {
      throw error(std::string("bad ") + what + " '" + f[0] + "'");
    }
    return v;
  }

  double number(const std::string& tok) {
    char* end = nullptr;
    double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw error("unparseable number '" + tok + "'");
    return v;
  }

  FormatError error(const std::string& why) const {
    return FormatError(source_ + " line " + std::to_string(line_no_) + ": " + why);
  }

 private:
  std::istringstream in_;
  std::string source_;
  std::size_t line_no_ = 0;
};

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::optional<std::size_t> action_label_from_name(std::string_view filename) {
  static const std::regex kCode("A(\\d{3})");
  std::smatch m;
  std::string name(filename);
  if (!std::regex_search(name, m, kCode)) return std::nullopt;
  const std::size_t code = static_cast<std::size_t>(std::stoul(m[1].str()));
  if (code == 0) return std::nullopt;
  return code - 1;
}

ClipRecord parse_ntu_skeleton_text(std::string_view text, std::string source_id, std::size_t label,
                                   std::vector<std::string>* warnings) {
  LineReader reader(text, source_id);
  const std::size_t frame_count = reader.count("frame count");
  std::map<std::string, std::size_t> person_of_body;
  std::vector<std::vector<double>> coords(2);
  std::vector<std::size_t> frames_of(2, 0);
  std::vector<std::string> dropped;

  for (std::size_t f = 0; f < frame_count; ++f) {
    const std::size_t bodies = reader.count("body count");
    for (std::size_t b = 0; b < bodies; ++b) {
      auto meta = reader.fields("body metadata");
      const std::string& body_id = meta[0];
      const std::size_t joints = reader.count("joint count");
      if (joints != kNtuJoints) {
        throw reader.error("joint count " + std::to_string(joints) + ", expected " + std::to_string(kNtuJoints));
      }
      std::optional<std::size_t> person;
      if (auto it = person_of_body.find(body_id); it != person_of_body.end()) {
        person = it->second;
      } else if (person_of_body.size() < 2) {
        person = person_of_body.size();
        person_of_body.emplace(body_id, *person);
      } else if (std::find(dropped.begin(), dropped.end(), body_id) == dropped.end()) {
        dropped.push_back(body_id);
        if (warnings) warnings->push_back(source_id + ": dropping body '" + body_id + "' beyond the second person");
      }
      for (std::size_t j = 0; j < kNtuJoints; ++j) {
        auto fields = reader.fields("joint line");
        if (fields.size() < 3) throw reader.error("joint line needs at least x y z");
        const double x = reader.number(fields[0]);
        const double y = reader.number(fields[1]);
        const double z = reader.number(fields[2]);
        if (person) coords[*person].insert(coords[*person].end(), {x, y, z});
      }
      if (person) ++frames_of[*person];
    }
  }

  ClipRecord clip;
  clip.label = label;
  clip.source_id = std::move(source_id);
  for (std::size_t p = 0; p < 2; ++p) {
    if (frames_of[p] == 0) continue;
    clip.persons.emplace_back(Shape{frames_of[p], kNtuJoints, 3}, std::move(coords[p]));
  }
  if (clip.persons.empty()) throw FormatError(clip.source_id + ": no bodies in any frame");
  return clip;
}

ClipRecord parse_ntu_skeleton(const std::filesystem::path& path, std::optional<std::size_t> label,
                              std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open skeleton file " + path.string());
  if (!label) label = action_label_from_name(path.filename().string());
  if (!label) throw FormatError(path.string() + ": no A### action code in file name and no label given");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_ntu_skeleton_text(buf.str(), path.stem().string(), *label, warnings);
}

std::string format_ntu_skeleton(const ClipRecord& clip) {
  std::size_t frames = 0;
  for (const Tensor& p : clip.persons) {
    if (p.rank() != 3 || p.dim(1) != kNtuJoints || p.dim(2) != 3) {
      throw DimensionError("format_ntu_skeleton: person shape " + shape_str(p.shape()));
    }
    frames = std::max(frames, p.dim(0));
  }
  std::ostringstream os;
  os << frames << '\n';
  for (std::size_t f = 0; f < frames; ++f) {
    std::size_t bodies = 0;
    for (const Tensor& p : clip.persons) bodies += p.dim(0) > f;
    os << bodies << '\n';
    for (std::size_t b = 0; b < clip.persons.size(); ++b) {
      const Tensor& p = clip.persons[b];
      if (p.dim(0) <= f) continue;
      // bodyID clippedEdges handConfidence/state x4 restricted lean(x,y) trackingState
      os << (b + 1) << " 0 1 1 1 1 0 0 0 2\n" << kNtuJoints << '\n';
      for (std::size_t j = 0; j < kNtuJoints; ++j) {
        const std::size_t base = (f * kNtuJoints + j) * 3;
        os << format_double(p[base]) << ' ' << format_double(p[base + 1]) << ' ' << format_double(p[base + 2])
           << " 0 0 0 0 0 0 0 0 2\n";
      }
    }
  }
  return os.str();
}

void write_ntu_skeleton(const std::filesystem::path& path, const ClipRecord& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << format_ntu_skeleton(clip);
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw FormatError("cannot open manifest " + manifest.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string path;
    if (!(ls >> path)) continue;
    long long label = -1;
    std::string extra;
    if (!(ls >> label) || label < 0 || (ls >> extra)) {
      throw FormatError(manifest.string() + " line " + std::to_string(line_no) + ": expected '<path> <label>'");
    }
    std::filesystem::path p(path);
    if (p.is_relative()) p = manifest.parent_path() / p;
    entries.push_back({p, static_cast<std::size_t>(label)});
  }
  return entries;
}

void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(manifest, std::ios::binary);
  if (!out) throw FormatError("cannot write manifest " + manifest.string());
  for (const auto& e : entries) out << e.path.generic_string() << ' ' << e.label << '\n';
}

std::vector<ClipRecord> load_dataset(const std::filesystem::path& manifest, std::vector<std::string>* warnings) {
  std::vector<ClipRecord> clips;
  for (const auto& e : read_manifest(manifest)) clips.push_back(parse_ntu_skeleton(e.path, e.label, warnings));
  return clips;
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<ClipRecord>& clips) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (const ClipRecord& clip : clips) {
    const std::string name = clip.source_id + ".skeleton";
    write_ntu_skeleton(dir / name, clip);
    entries.push_back({name, clip.label});
  }
  const auto manifest = dir / "manifest.txt";
  write_manifest(manifest, entries);
  return manifest;
}

}  // namespace star
