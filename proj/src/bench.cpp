#include "star/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "star/errors.hpp"
#include "star/spatial_attention.hpp"
#include "star/temporal_attention.hpp"

namespace star {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

Tensor random_tensor(const Shape& shape, Rng& rng) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(shape, std::move(v));
}

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

ClipRecord random_clip(std::size_t frames, std::size_t persons, std::size_t joints, std::uint64_t seed) {
  if (frames == 0 || persons == 0 || persons > 2) throw InvalidArgument("random_clip: need frames >= 1, 1-2 persons");
  Rng rng(seed, 0xc11b);
  ClipRecord c;
  for (std::size_t p = 0; p < persons; ++p) c.persons.push_back(random_tensor({frames, joints, 3}, rng));
  c.source_id = "random";
  return c;
}

ProfileReport profile_model(const StarModel& model, const RaggedBatch& batch, std::size_t warmup, std::size_t iters) {
  const StarConfig& cfg = model.config();
  for (std::size_t i = 0; i < warmup; ++i) model.logits(batch);
  std::vector<double> times;
  for (std::size_t i = 0; i < std::max<std::size_t>(iters, 1); ++i) {
    const auto t0 = Clock::now();
    model.logits(batch);
    times.push_back(ms_since(t0));
  }

  Profiler prof;
  {
    profiling::Session session(prof);
    model.logits(batch);
  }
  ProfileReport r;
  r.kinds = prof.by_kind();
  std::stable_sort(r.kinds.begin(), r.kinds.end(),
                   [](const OpProfile& a, const OpProfile& b) { return a.macs > b.macs; });
  r.params = model.param_breakdown();
  r.param_count = model.param_count();
  r.frames = batch.num_frames();
  r.iterations = times.size();
  r.total_macs = prof.total_macs();
  r.median_ms = median(times);
  r.spatial_macs = prof.macs_where("spatial");
  r.temporal_macs = prof.macs_where("temporal");
  r.spatial_score_macs = prof.macs_where("spatial/attention");
  const std::size_t V = model.support().num_joints;
  r.dense_score_macs = cfg.num_layers * count_spatial_score_macs(cfg.mhsa(), V * V, batch.num_frames());
  r.support_fraction = model.support().fraction();
  return r;
}

std::string format_profile(const ProfileReport& r) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "  %-20s %16s %8s %12s %8s\n", "op kind", "MACs", "share", "ms", "calls");
  os << line;
  for (std::size_t i = 0; i < r.kinds.size(); ++i) {
    const OpProfile& k = r.kinds[i];
    const double share = r.total_macs ? 100.0 * double(k.macs) / double(r.total_macs) : 0.0;
    std::snprintf(line, sizeof line, "%c %-20s %16llu %7.2f%% %12.3f %8llu\n", i < 3 && k.macs ? '*' : ' ',
                  k.kind.c_str(), static_cast<unsigned long long>(k.macs), share, 1e3 * k.seconds,
                  static_cast<unsigned long long>(k.calls));
    os << line;
  }
  std::snprintf(line, sizeof line, "  %-20s %16llu %8s %12.3f   (median of %zu, unprofiled)\n", "total",
                static_cast<unsigned long long>(r.total_macs), "", r.median_ms, r.iterations);
  os << line;
  std::snprintf(line, sizeof line, "  frames %zu, GMACs %.4f, spatial %llu, temporal %llu\n", r.frames,
                double(r.total_macs) * 1e-9, static_cast<unsigned long long>(r.spatial_macs),
                static_cast<unsigned long long>(r.temporal_macs));
  os << line;
  std::snprintf(line, sizeof line,
                "  spatial score MACs sparse %llu / dense %llu = %.6f (support fraction %.6f)\n"
                "  whole forward sparse %llu / dense %llu = %.4f\n",
                static_cast<unsigned long long>(r.spatial_score_macs),
                static_cast<unsigned long long>(r.dense_score_macs), r.score_ratio(), r.support_fraction,
                static_cast<unsigned long long>(r.total_macs), static_cast<unsigned long long>(r.dense_total_macs()),
                double(r.total_macs) / double(r.dense_total_macs()));
  os << line;
  os << format_param_table(r.params);
  return os.str();
}

std::string format_param_table(const ParamBreakdown& p) {
  std::ostringstream os;
  char line[96];
  const std::pair<const char*, std::size_t> rows[] = {
      {"Linear", p.linear}, {"LayerNorm", p.layer_norm}, {"Context", p.context}, {"Head", p.head}};
  std::snprintf(line, sizeof line, "  %-10s %10s %9s\n", "module", "params", "K");
  os << line;
  for (const auto& [name, n] : rows) {
    std::snprintf(line, sizeof line, "  %-10s %10zu %8.1fK\n", name, n, double(n) / 1e3);
    os << line;
  }
  std::snprintf(line, sizeof line, "  %-10s %10zu %8.1fK\n", "Total", p.total(), double(p.total()) / 1e3);
  os << line;
  return os.str();
}

std::string profile_json(const ProfileReport& r) {
  nlohmann::ordered_json j;
  j["frames"] = r.frames;
  j["iterations"] = r.iterations;
  j["median_ms"] = r.median_ms;
  j["total_macs"] = r.total_macs;
  j["dense_total_macs"] = r.dense_total_macs();
  j["spatial_macs"] = r.spatial_macs;
  j["temporal_macs"] = r.temporal_macs;
  j["spatial_score_macs"] = r.spatial_score_macs;
  j["dense_score_macs"] = r.dense_score_macs;
  j["support_fraction"] = r.support_fraction;
  j["param_count"] = r.param_count;
  j["params"] = {{"linear", r.params.linear},
                 {"layer_norm", r.params.layer_norm},
                 {"context", r.params.context},
                 {"head", r.params.head}};
  auto& ops = j["ops"] = nlohmann::ordered_json::array();
  for (const OpProfile& k : r.kinds)
    ops.push_back({{"kind", k.kind}, {"macs", k.macs}, {"seconds", k.seconds}, {"calls", k.calls}});
  return j.dump(2) + "\n";
}

namespace {

struct Point {
  std::size_t frames, segments;
};

// One timed call under a fresh profiler.
struct Sample {
  double wall_ms = 0.0, core_ms = 0.0;
  std::uint64_t macs = 0, core_macs = 0;
};

template <class F>
Sample measure(F&& f) {
  Profiler prof;
  Sample s;
  {
    profiling::Session session(prof);
    const auto t0 = Clock::now();
    f();
    s.wall_ms = ms_since(t0);
  }
  s.macs = prof.total_macs();
  for (const OpProfile& r : prof.records()) {
    if (r.scope.find("attention") == std::string::npos) continue;
    s.core_macs += r.macs;
    s.core_ms += 1e3 * r.seconds;
  }
  return s;
}

template <class F>
BenchRow bench_one(const std::string& variant, const Point& pt, std::size_t V, const BenchSweep& sw, F&& f) {
  for (std::size_t i = 0; i < sw.warmup; ++i) f();
  std::vector<double> wall, core;
  Sample s;
  for (std::size_t i = 0; i < std::max<std::size_t>(sw.iters, 1); ++i) {
    s = measure(f);
    wall.push_back(s.wall_ms);
    core.push_back(s.core_ms);
  }
  return {variant, pt.frames, V, pt.segments, s.macs, median(wall), s.core_macs, median(core)};
}

std::vector<BenchRow> bench_point(const Point& pt, const BenchSweep& sw, const AttentionSupport& support) {
  const std::size_t V = support.num_joints, N = pt.frames;
  const MhsaConfig cfg{sw.d_model, sw.num_heads};
  Rng rng(sw.seed, 0xbe4c);
  const Tensor x = random_tensor({N, V, cfg.d_model}, rng);
  const MhsaWeights w = MhsaWeights::xavier(cfg.d_model, rng);
  const Tensor full = Tensor::ones({V, V});
  const KernelSpec spec = KernelSpec::elu();
  std::vector<std::size_t> offsets;
  for (std::size_t s = 0; s < pt.segments; ++s) offsets.push_back(s * N / pt.segments);

  auto on_tape = [&](auto&& body) {
    return [&, body] {
      Tape tape(false);
      const MhsaVars p = MhsaVars::bind(tape, w, false);
      body(tape, tape.constant(x), p);
    };
  };
  std::vector<BenchRow> rows;
  rows.push_back(bench_one("sparse-spatial", pt, V, sw,
                           on_tape([&](Tape&, Var in, const MhsaVars& p) { sparse_mhsa(in, support, p, cfg); })));
  rows.push_back(bench_one("dense-spatial", pt, V, sw,
                           on_tape([&](Tape&, Var in, const MhsaVars& p) { dense_masked_mhsa(in, full, p, cfg); })));
  rows.push_back(bench_one("segmented-linear", pt, V, sw, on_tape([&](Tape&, Var in, const MhsaVars& p) {
                             segmented_linear_mhsa(in, offsets, p, cfg, spec);
                           })));
  rows.push_back(
      bench_one("quadratic-oracle", pt, V, sw, [&] { quadratic_segment_oracle(x, offsets, w, cfg, spec); }));
  return rows;
}

}  // namespace

std::vector<BenchRow> bench_attention(const BenchSweep& sw) {
  if (sw.lengths.empty() || sw.segments.empty()) throw InvalidArgument("bench_attention: empty sweep");
  MhsaConfig{sw.d_model, sw.num_heads}.validate();
  const AttentionSupport support = build_support(ntu25_skeleton(), 3);
  std::vector<Point> points;
  for (std::size_t n : sw.lengths)
    for (std::size_t s : sw.segments) {
      if (n == 0 || s == 0 || s > n) throw InvalidArgument("bench_attention: need 1 <= segments <= frames");
      points.push_back({n, s});
    }

  std::vector<std::vector<BenchRow>> out(points.size());
  if (sw.parallel) {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < points.size(); ++i)
      pool.emplace_back([&, i] { out[i] = bench_point(points[i], sw, support); });
    for (auto& t : pool) t.join();
  } else {
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = bench_point(points[i], sw, support);
  }
  std::vector<BenchRow> rows;
  for (auto& v : out) rows.insert(rows.end(), v.begin(), v.end());
  return rows;
}

std::string bench_csv_header() { return "variant,frames,joints,segments,macs,wall_ms,core_macs,core_ms"; }

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string s = bench_csv_header() + "\n";
  for (const BenchRow& r : rows) {
    s += r.variant + "," + std::to_string(r.frames) + "," + std::to_string(r.joints) + "," +
         std::to_string(r.segments) + "," + std::to_string(r.macs) + "," + g17(r.wall_ms) + "," +
         std::to_string(r.core_macs) + "," + g17(r.core_ms) + "\n";
  }
  return s;
}

std::vector<BenchRow> parse_bench_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != bench_csv_header()) throw FormatError("bench csv: bad header");
  std::vector<BenchRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 8) throw FormatError("bench csv line " + std::to_string(lineno) + ": expected 8 fields");
    try {
      rows.push_back({f[0], std::stoul(f[1]), std::stoul(f[2]), std::stoul(f[3]), std::stoull(f[4]),
                      std::stod(f[5]), std::stoull(f[6]), std::stod(f[7])});
    } catch (const std::logic_error&) {
      throw FormatError("bench csv line " + std::to_string(lineno) + ": bad number");
    }
  }
  return rows;
}

double fit_exponent(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("fit_exponent: need >= 2 paired points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw InvalidArgument("fit_exponent: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= double(x.size());
  my /= double(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0) throw InvalidArgument("fit_exponent: x values all equal");
  return sxy / sxx;
}

std::vector<BenchFit> fit_bench(const std::vector<BenchRow>& rows) {
  std::map<std::pair<std::string, std::size_t>, std::vector<const BenchRow*>> groups;
  std::vector<std::pair<std::string, std::size_t>> order;
  for (const BenchRow& r : rows) {
    auto key = std::make_pair(r.variant, r.segments);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  std::vector<BenchFit> fits;
  for (const auto& key : order) {
    const auto& g = groups[key];
    if (g.size() < 2) continue;
    std::vector<double> n, ms, macs;
    for (const BenchRow* r : g) {
      n.push_back(double(r->frames));
      ms.push_back(std::max(r->core_ms, 1e-9));
      macs.push_back(double(std::max<std::uint64_t>(r->core_macs, 1)));
    }
    fits.push_back({key.first, key.second, fit_exponent(n, ms), fit_exponent(n, macs)});
  }
  return fits;
}

}  // namespace star
