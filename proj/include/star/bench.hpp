#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "star/model.hpp"
#include "star/profiler.hpp"

namespace star {

// A clip of random coordinates: `persons` people, `frames` frames each.
ClipRecord random_clip(std::size_t frames, std::size_t persons, std::size_t num_joints, std::uint64_t seed);

struct ProfileReport {
  std::vector<OpProfile> kinds;  // per op kind, MACs descending
  ParamBreakdown params;
  std::size_t param_count = 0;
  std::size_t frames = 0;
  std::size_t iterations = 0;
  std::uint64_t total_macs = 0;  // one forward pass
  double median_ms = 0.0;        // forward latency
  std::uint64_t spatial_macs = 0;
  std::uint64_t temporal_macs = 0;
  std::uint64_t spatial_score_macs = 0;  // score + aggregation, sparse support
  std::uint64_t dense_score_macs = 0;    // same with the full V x V support
  double support_fraction = 0.0;

  double score_ratio() const { return double(spatial_score_macs) / double(dense_score_macs); }
  // Whole forward with dense spatial attention in place of the sparse one.
  std::uint64_t dense_total_macs() const { return total_macs - spatial_score_macs + dense_score_macs; }
};

// Eval-mode forward passes under a profiler. MACs and per-kind records are
// those of a single pass; latency is the median over `iters` timed passes
// after `warmup` untimed ones.
ProfileReport profile_model(const StarModel& model, const RaggedBatch& batch, std::size_t warmup = 0,
                            std::size_t iters = 1);

// Per-kind table sorted by MACs, top three marked with '*', then totals.
std::string format_profile(const ProfileReport& report);
// Trainable scalars by module kind, counts in K, with the total.
std::string format_param_table(const ParamBreakdown& params);
std::string profile_json(const ProfileReport& report);

struct BenchSweep {
  std::vector<std::size_t> lengths = {64, 128, 256, 512};
  std::vector<std::size_t> segments = {1};  // equal-length segments per row
  std::size_t d_model = 64;
  std::size_t num_heads = 8;
  std::size_t warmup = 3;
  std::size_t iters = 10;
  std::uint64_t seed = 0;
  bool parallel = false;  // one thread per sweep point, each with its own profiler
};

// wall_ms covers the whole block (projections included); core_* cover the
// attention itself, read from the profiler's "attention" scope.
struct BenchRow {
  std::string variant;  // sparse-spatial, dense-spatial, segmented-linear, quadratic-oracle
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::size_t segments = 0;
  std::uint64_t macs = 0;
  double wall_ms = 0.0;
  std::uint64_t core_macs = 0;
  double core_ms = 0.0;
};

std::vector<BenchRow> bench_attention(const BenchSweep& sweep);

std::string bench_csv_header();
std::string bench_csv(const std::vector<BenchRow>& rows);
std::vector<BenchRow> parse_bench_csv(const std::string& text);

// Least-squares slope of log(y) against log(x).
double fit_exponent(const std::vector<double>& x, const std::vector<double>& y);

struct BenchFit {
  std::string variant;
  std::size_t segments = 0;
  double core_ms_exponent = 0.0;
  double core_macs_exponent = 0.0;
};
std::vector<BenchFit> fit_bench(const std::vector<BenchRow>& rows);

}  // namespace star
