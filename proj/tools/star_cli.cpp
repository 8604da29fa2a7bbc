// star: command-line front end (synth, train, eval, gradcheck, bench, profile).

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "star/bench.hpp"
#include "star/config.hpp"
#include "star/dataset.hpp"
#include "star/errors.hpp"
#include "star/gradcheck.hpp"
#include "star/training.hpp"

namespace fs = std::filesystem;
using namespace star;
using json = nlohmann::ordered_json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string run_dir;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", c.sets, "override, key=value (repeatable)");
  cmd->add_option("-o,--run-dir", c.run_dir, "output directory (default $STAR_RUN_ROOT/<command>)");
}

RunConfig resolve(const Common& c, std::vector<std::string> extra = {}) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  extra.insert(extra.begin(), c.sets.begin(), c.sets.end());
  apply_overrides(cfg, extra);
  return cfg;
}

fs::path run_dir(const Common& c, const std::string& command) {
  fs::path dir;
  if (!c.run_dir.empty()) {
    dir = c.run_dir;
  } else {
    const char* root = std::getenv("STAR_RUN_ROOT");
    dir = fs::path(root && *root ? root : "runs") / command;
  }
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + p.string());
}

void snapshot(const fs::path& dir, const RunConfig& cfg) { write_text(dir / "config.txt", format_config(cfg)); }

SkeletonGraph skeleton_of(const RunConfig& cfg) {
  return cfg.data.skeleton.empty() ? ntu25_skeleton() : load_skeleton(cfg.data.skeleton);
}

std::vector<ClipRecord> load_or_synth(const std::string& manifest, const RunConfig& cfg) {
  if (manifest.empty()) return synth_dataset(cfg.data.synth);
  std::vector<std::string> warnings;
  auto clips = load_dataset(manifest, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  return clips;
}

json confusion_json(const EvalResult& r) {
  json m = json::array();
  for (const auto& row : r.confusion) m.push_back(row);
  return m;
}

int cmd_synth(const Common& c, std::size_t classes, std::size_t clips, std::uint64_t seed, bool have_classes,
              bool have_clips, bool have_seed) {
  std::vector<std::string> extra;
  if (have_classes) extra.push_back("data.synth_classes=" + std::to_string(classes));
  if (have_seed) extra.push_back("data.synth_seed=" + std::to_string(seed));
  RunConfig cfg = resolve(c, extra);
  if (have_clips) {
    const std::size_t k = cfg.data.synth.classes;
    if (clips == 0 || clips % k) throw ConfigError("--clips: must be a positive multiple of the class count");
    cfg.data.synth.clips_per_class = clips / k;
  }
  const fs::path dir = run_dir(c, "synth");
  const auto data = synth_dataset(cfg.data.synth);
  const fs::path manifest = write_dataset(dir, data);
  snapshot(dir, cfg);
  std::size_t frames = 0, two = 0;
  for (const auto& clip : data) {
    frames += clip.num_frames();
    two += clip.persons.size() == 2;
  }
  std::printf("synth: %zu clips (%zu two-person), %zu frames, %zu classes\n", data.size(), two, frames,
              cfg.data.synth.classes);
  std::printf("manifest: %s\n", manifest.string().c_str());
  return 0;
}

int cmd_train(const Common& c) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = run_dir(c, "train");
  snapshot(dir, cfg);
  const auto train_clips = load_or_synth(cfg.data.train_manifest, cfg);
  const std::vector<ClipRecord> eval_clips =
      cfg.data.eval_manifest.empty() ? std::vector<ClipRecord>{} : load_dataset(cfg.data.eval_manifest);
  StarModel model(cfg.model, skeleton_of(cfg));
  std::printf("train: %zu clips, %zu parameters, run dir %s\n", train_clips.size(), model.param_count(),
              dir.string().c_str());
  const TrainResult r = train(model, train_clips, eval_clips, cfg.train, dir, [](const EpochRecord& e) {
    std::printf("epoch %4zu  step %6llu  lr %.3e  loss %.6f", e.epoch, static_cast<unsigned long long>(e.step), e.lr,
                e.train_loss);
    if (e.eval_acc) std::printf("  acc %.4f", *e.eval_acc);
    std::printf("\n");
    std::fflush(stdout);
  });
  json s;
  s["epochs"] = r.history.size();
  s["steps"] = r.history.empty() ? 0 : r.history.back().step;
  s["final_train_top1"] = r.final_train.top1;
  s["final_train_loss"] = r.final_train.loss;
  s["confusion"] = confusion_json(r.final_train);
  write_text(dir / "summary.json", s.dump(2) + "\n");
  std::printf("final training accuracy %.4f, loss %.6f\n", r.final_train.top1, r.final_train.loss);
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& manifest) {
  const RunConfig cfg = resolve(c);
  std::string m = manifest.empty() ? cfg.data.eval_manifest : manifest;
  if (m.empty()) m = cfg.data.train_manifest;
  const auto clips = load_or_synth(m, cfg);
  if (clips.empty()) throw InvalidArgument("empty dataset");
  const StarModel model = load_checkpoint(checkpoint, skeleton_of(cfg));
  const EvalResult r = evaluate(model, clips, cfg.train.batch_clips, cfg.train.segment_per);
  const fs::path dir = run_dir(c, "eval");
  snapshot(dir, cfg);
  json j;
  j["checkpoint"] = checkpoint;
  j["clips"] = r.clips;
  j["top1"] = r.top1;
  j["loss"] = r.loss;
  j["confusion"] = confusion_json(r);
  write_text(dir / "eval.json", j.dump(2) + "\n");
  std::printf("eval: %zu clips, top-1 %.4f, loss %.6f\n", r.clips, r.top1, r.loss);
  std::printf("confusion (rows true, columns predicted):\n");
  for (const auto& row : r.confusion) {
    for (std::size_t v : row) std::printf(" %5zu", v);
    std::printf("\n");
  }
  return 0;
}

int cmd_gradcheck(const Common& c, const std::string& preset, bool no_perturb, double tol, std::size_t top) {
  std::vector<std::string> extra;
  if (!preset.empty()) extra.push_back("model.preset=" + preset);
  const RunConfig cfg = resolve(c, extra);
  StarModel model(cfg.model, skeleton_of(cfg));
  if (!no_perturb) perturb_parameters(model, 0.1, cfg.model.init_seed);
  const std::size_t V = model.support().num_joints;
  std::vector<ClipRecord> clips = {random_clip(4, 1, V, 1), random_clip(3, 2, V, 2)};
  clips[1].label = 1 % cfg.model.num_classes;
  const GradcheckReport r = gradcheck_model(model, collate(clips, cfg.train.segment_per));
  const fs::path dir = run_dir(c, "gradcheck");
  snapshot(dir, cfg);

  std::printf("gradcheck: %zu scalars, max relative error %.3e (tolerance %.0e)\n", r.entries_checked,
              r.max_rel_error, tol);
  std::printf("  %-40s %6s %14s %14s %10s\n", "parameter", "index", "analytic", "numeric", "rel err");
  json worst = json::array();
  for (const auto& e : r.worst(top)) {
    std::printf("  %-40s %6zu %14.6e %14.6e %10.3e\n", e.param.c_str(), e.index, e.analytic, e.numeric, e.rel_error);
  }
  for (const auto& e : r.worst_per_param)
    worst.push_back({{"param", e.param},
                     {"index", e.index},
                     {"analytic", e.analytic},
                     {"numeric", e.numeric},
                     {"rel_error", e.rel_error}});
  json j;
  j["entries_checked"] = r.entries_checked;
  j["max_rel_error"] = r.max_rel_error;
  j["tolerance"] = tol;
  j["passed"] = r.passed(tol);
  j["worst_per_param"] = worst;
  write_text(dir / "gradcheck.json", j.dump(2) + "\n");
  std::printf("%s\n", r.passed(tol) ? "PASS" : "FAIL");
  return r.passed(tol) ? 0 : 1;
}

int cmd_bench(const Common& c, const std::vector<std::size_t>& segments, bool parallel) {
  const RunConfig cfg = resolve(c);
  BenchSweep sw;
  sw.lengths = cfg.profile.lengths;
  sw.segments = segments.empty() ? std::vector<std::size_t>{1} : segments;
  sw.d_model = cfg.model.d_model;
  sw.num_heads = cfg.model.num_heads;
  sw.warmup = cfg.profile.warmup;
  sw.iters = cfg.profile.iters;
  sw.seed = cfg.model.init_seed;
  sw.parallel = parallel;
  const auto rows = bench_attention(sw);
  const fs::path dir = run_dir(c, "bench");
  snapshot(dir, cfg);
  write_text(dir / "bench.csv", bench_csv(rows));

  std::printf("  %-18s %5s %4s %4s %14s %10s %10s\n", "variant", "N", "V", "seg", "MACs", "wall ms", "core ms");
  for (const auto& r : rows)
    std::printf("  %-18s %5zu %4zu %4zu %14llu %10.3f %10.3f\n", r.variant.c_str(), r.frames, r.joints, r.segments,
                static_cast<unsigned long long>(r.macs), r.wall_ms, r.core_ms);
  json fits = json::array();
  for (const auto& f : fit_bench(rows)) {
    std::printf("  fit %-18s seg %zu: time exponent %.3f, MAC exponent %.3f\n", f.variant.c_str(), f.segments,
                f.core_ms_exponent, f.core_macs_exponent);
    fits.push_back({{"variant", f.variant},
                    {"segments", f.segments},
                    {"core_ms_exponent", f.core_ms_exponent},
                    {"core_macs_exponent", f.core_macs_exponent}});
  }
  write_text(dir / "bench_fit.json", fits.dump(2) + "\n");
  return 0;
}

int cmd_profile(const Common& c, const std::string& checkpoint, bool doubling) {
  const RunConfig cfg = resolve(c);
  const SkeletonGraph skel = skeleton_of(cfg);
  const StarModel model = checkpoint.empty() ? StarModel(cfg.model, skel) : load_checkpoint(checkpoint, skel);
  const std::size_t V = model.support().num_joints;
  const auto batch_for = [&](std::size_t frames) {
    return collate(std::vector<ClipRecord>{random_clip(frames, cfg.profile.persons, V, cfg.model.init_seed)},
                   cfg.train.segment_per);
  };
  const ProfileReport r = profile_model(model, batch_for(cfg.profile.frames), cfg.profile.warmup, cfg.profile.iters);
  const fs::path dir = run_dir(c, "profile");
  snapshot(dir, cfg);
  std::string js = profile_json(r);
  std::printf("profile: preset %s, %zu frames x %zu person(s)\n", cfg.preset.c_str(), cfg.profile.frames,
              cfg.profile.persons);
  std::fputs(format_profile(r).c_str(), stdout);
  if (doubling) {
    const ProfileReport r2 = profile_model(model, batch_for(2 * cfg.profile.frames), 0, 1);
    const double ratio = double(r2.temporal_macs) / double(r.temporal_macs);
    std::printf("  temporal MACs at 2N / N = %.6f\n", ratio);
    json j = json::parse(js);
    j["temporal_doubling_ratio"] = ratio;
    js = j.dump(2) + "\n";
  }
  write_text(dir / "profile.json", js);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"STAR skeleton action recognition: data, training, checks and profiling"};
  app.require_subcommand(1);

  Common synth_c, train_c, eval_c, grad_c, bench_c, prof_c;
  std::size_t classes = 3, clips = 30;
  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset and manifest");
  add_common(synth, synth_c);
  auto* o_classes = synth->add_option("--classes", classes, "number of classes");
  auto* o_clips = synth->add_option("--clips", clips, "total clips (multiple of --classes)");
  auto* o_seed = synth->add_option("--seed", seed, "generator seed");

  auto* trn = app.add_subcommand("train", "train a model; metrics and checkpoints go to the run dir");
  add_common(trn, train_c);

  std::string eval_ckpt, eval_manifest;
  auto* ev = app.add_subcommand("eval", "top-1 accuracy and confusion of a checkpoint");
  add_common(ev, eval_c);
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--manifest", eval_manifest, "dataset manifest (default data.eval, then data.train)");

  std::string gc_preset;
  bool gc_no_perturb = false;
  double gc_tol = 1e-4;
  std::size_t gc_top = 10;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every parameter");
  add_common(gc, grad_c);
  gc->add_option("--preset", gc_preset, "model preset (tiny, star64, star128)");
  gc->add_flag("--no-perturb", gc_no_perturb, "check the raw initialisation instead of perturbed weights");
  gc->add_option("--tol", gc_tol, "relative error tolerance");
  gc->add_option("--top", gc_top, "rows in the worst-offender table");

  std::vector<std::size_t> bench_segments;
  bool bench_parallel = false;
  auto* bn = app.add_subcommand("bench", "attention variants over profile.lengths");
  add_common(bn, bench_c);
  bn->add_option("--segments", bench_segments, "equal segments per sweep point (repeatable)")->delimiter(',');
  bn->add_flag("--parallel", bench_parallel, "run sweep points on separate threads");

  std::string prof_ckpt;
  bool prof_doubling = false;
  auto* pr = app.add_subcommand("profile", "per-op MACs, latency and parameter breakdown");
  add_common(pr, prof_c);
  pr->add_option("--checkpoint", prof_ckpt, "profile trained weights instead of a fresh init");
  pr->add_flag("--doubling", prof_doubling, "also profile 2x frames and report the temporal MAC ratio");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth)
      return cmd_synth(synth_c, classes, clips, seed, o_classes->count() > 0, o_clips->count() > 0,
                       o_seed->count() > 0);
    if (*trn) return cmd_train(train_c);
    if (*ev) return cmd_eval(eval_c, eval_ckpt, eval_manifest);
    if (*gc) return cmd_gradcheck(grad_c, gc_preset, gc_no_perturb, gc_tol, gc_top);
    if (*bn) return cmd_bench(bench_c, bench_segments, bench_parallel);
    if (*pr) return cmd_profile(prof_c, prof_ckpt, prof_doubling);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
