#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "star/errors.hpp"
#include "star/synth.hpp"
#include "star/training.hpp"

using namespace star;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("star_test_training_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::vector<ClipRecord> few_clips(std::size_t per_class, std::uint64_t seed) {
  SynthSpec s;
  s.clips_per_class = per_class;
  s.len_min = 8;
  s.len_max = 14;
  s.seed = seed;
  return synth_dataset(s);
}

StarModel tiny_model(std::uint64_t seed = 1) {
  StarConfig c = StarConfig::preset("tiny");
  c.init_seed = seed;
  return StarModel(c, ntu25_skeleton());
}

}  // namespace

TEST_CASE("lr schedule closed form") {
  const double d = 64, w = 4000;
  CHECK(std::abs(lr_schedule(64, 4000, 4000) - std::pow(d, -0.5) * std::pow(w, -0.5)) < 1e-15);
  CHECK(std::abs(lr_schedule(64, 1, 4000) - 0.125 * std::pow(4000.0, -1.5)) < 1e-15);
  CHECK(std::abs(lr_schedule(64, 1, 4000) - 4.941e-7) < 1e-10);
  for (std::uint64_t t : {2u, 17u, 1999u, 3999u})
    CHECK(lr_schedule(64, t, 4000) / lr_schedule(64, 1, 4000) == doctest::Approx(double(t)).epsilon(1e-12));
  // continuity and maximum at t = w
  const std::uint64_t W = 50;
  double best = 0;
  std::uint64_t arg = 0;
  for (std::uint64_t t = 1; t <= 10 * W; ++t) {
    const double lr = lr_schedule(8, t, W);
    if (lr > best) best = lr, arg = t;
  }
  CHECK(arg == W);
  CHECK(std::abs(lr_schedule(8, W, W) - std::pow(8.0, -0.5) * std::pow(double(W), -0.5)) < 1e-15);
  CHECK_THROWS_AS(lr_schedule(64, 0, 4000), InvalidArgument);
  CHECK_THROWS_AS(lr_schedule(64, 1, 0), InvalidArgument);
}

TEST_CASE("train config validation is keyed") {
  TrainConfig t;
  t.adam.beta1 = 1.0;
  CHECK_THROWS_WITH_AS(t.validate(), doctest::Contains("train.beta1"), ConfigError);
  t = TrainConfig{};
  t.warmup_steps = 0;
  CHECK_THROWS_WITH_AS(t.validate(), doctest::Contains("train.warmup_steps"), ConfigError);
  t = TrainConfig{};
  t.lr_scale = 0;
  CHECK_THROWS_WITH_AS(t.validate(), doctest::Contains("train.lr_scale"), ConfigError);
}

TEST_CASE("adam converges on a quadratic") {
  // f(p) = sum (p_i - target_i)^2, gradient 2 (p - target)
  const std::vector<double> target = {3.0, -1.5, 0.25, 7.0};
  std::vector<Tensor> params = {Tensor::zeros({4})};
  Adam adam({0.9, 0.98, 1e-9});
  for (int step = 0; step < 2000; ++step) {
    std::vector<double> g(4);
    for (std::size_t i = 0; i < 4; ++i) g[i] = 2.0 * (params[0][i] - target[i]);
    const double lr = 0.05 * (step < 1500 ? 1.0 : 0.1);
    adam.step(params, std::vector<Tensor>{Tensor({4}, g)}, lr);
  }
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(params[0][i] - target[i]) < 1e-3);
  CHECK(adam.steps() == 2000);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  StarModel m = tiny_model();
  const auto before = m.values();
  TrainConfig cfg;
  TrainState st{Adam(cfg.adam)};
  const auto clips = few_clips(1, 3);
  train_step(m, st, collate(clips), 0.0, cfg);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(m.values()[i].same_values(before[i]));
  CHECK(st.step == 1);
  // moments still tracked, shaped like their parameters
  REQUIRE(st.optimizer.first_moments().size() == before.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(st.optimizer.first_moments()[i].size() == before[i].numel());
}

TEST_CASE("first step loss is near ln C") {
  StarModel m = tiny_model();
  TrainConfig cfg;
  TrainState st{Adam(cfg.adam)};
  const auto r = train_step(m, st, collate(few_clips(2, 5)), 1e-4, cfg);
  CHECK(std::abs(r.loss - std::log(3.0)) < 0.5);
  CHECK(r.grad_norm > 0);
}

TEST_CASE("evaluate examples") {
  StarModel m = tiny_model();
  const auto clips = few_clips(3, 11);

  SUBCASE("one clip labelled with its own argmax") {
    ClipRecord c = clips[0];
    const Tensor l = m.logits(collate(std::vector<ClipRecord>{c}));
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (l.at(0, k) > l.at(0, best)) best = k;
    c.label = best;
    CHECK(evaluate(m, std::vector<ClipRecord>{c}).top1 == 1.0);
  }
  SUBCASE("grouping invariance and confusion trace") {
    const EvalResult a = evaluate(m, clips, 1);
    const EvalResult b = evaluate(m, clips, 8);
    CHECK(a.top1 == b.top1);
    CHECK(a.confusion == b.confusion);
    CHECK(std::abs(a.loss - b.loss) < 1e-12);
    std::size_t trace = 0, total = 0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        total += a.confusion[i][j];
        if (i == j) trace += a.confusion[i][j];
      }
    CHECK(total == clips.size());
    CHECK(double(trace) / double(total) == a.top1);
  }
  SUBCASE("empty dataset") {
    CHECK_THROWS_WITH_AS(evaluate(m, std::vector<ClipRecord>{}), "empty dataset", InvalidArgument);
  }
}

TEST_CASE("metrics csv rows") {
  CHECK(metrics_csv_header() == "epoch,step,lr,train_loss,eval_acc");
  EpochRecord r;
  r.epoch = 3;
  r.step = 12;
  r.lr = 0.1;
  r.train_loss = 1.0 / 3.0;
  const std::string row = metrics_csv_row(r);
  CHECK(row.back() == ',');
  r.eval_acc = 0.5;
  const std::string full = metrics_csv_row(r);
  CHECK(full.substr(full.rfind(',') + 1) == "0.5");
  // %.17g round-trips
  const auto first = full.find(',', full.find(',') + 1);
  const auto second = full.find(',', first + 1);
  CHECK(std::stod(full.substr(first + 1, second - first - 1)) == 0.1);
  CHECK(std::stod(full.substr(second + 1)) == 1.0 / 3.0);
}

TEST_CASE("training run is bit-reproducible and writes its run directory") {
  const auto clips = few_clips(2, 21);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_clips = 4;
  cfg.warmup_steps = 20;
  cfg.seed = 9;
  std::string csv[2];
  for (int k = 0; k < 2; ++k) {
    StarModel m = tiny_model(4);
    const auto dir = scratch("det" + std::to_string(k));
    const TrainResult r = train(m, clips, {}, cfg, dir);
    CHECK(r.history.size() == 3);
    CHECK(r.history.back().step == 3 * 2);
    CHECK(std::filesystem::exists(dir / "checkpoint_last.json"));
    CHECK(std::filesystem::exists(dir / "checkpoint_best.json"));
    csv[k] = slurp(dir / "metrics.csv");
    std::filesystem::remove_all(dir);
  }
  CHECK(csv[0] == csv[1]);
  CHECK(csv[0].rfind("epoch,step,lr,train_loss,eval_acc\n", 0) == 0);
  std::size_t lines = 0;
  for (char ch : csv[0]) lines += ch == '\n';
  CHECK(lines == 4);

  SUBCASE("a different seed changes the trajectory") {
    cfg.seed = 10;
    StarModel m = tiny_model(4);
    const auto dir = scratch("det_other");
    train(m, clips, {}, cfg, dir);
    CHECK(slurp(dir / "metrics.csv") != csv[0]);
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("eval_every leaves gaps in the metrics") {
  const auto clips = few_clips(1, 2);
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.batch_clips = 3;
  cfg.eval_every = 3;
  StarModel m = tiny_model();
  const TrainResult r = train(m, clips, {}, cfg);
  CHECK(!r.history[0].eval_acc);
  CHECK(!r.history[1].eval_acc);
  CHECK(r.history[2].eval_acc);
  CHECK(r.history[3].eval_acc);  // last epoch always evaluated
}

TEST_CASE("non-finite state raises a diagnostic") {
  StarModel m = tiny_model();
  std::vector<double> w = m.param("head.fc2.bias").to_vector();
  w[0] = NAN;
  m.set_param("head.fc2.bias", Tensor({w.size()}, w));
  TrainConfig cfg;
  TrainState st{Adam(cfg.adam)};
  CHECK_THROWS_WITH_AS(train_step(m, st, collate(few_clips(1, 1)), 1e-3, cfg), doctest::Contains("train step 1"),
                       NumericError);
}

TEST_CASE("empty training set") {
  StarModel m = tiny_model();
  CHECK_THROWS_WITH_AS(train(m, std::vector<ClipRecord>{}, {}, TrainConfig{}), "empty dataset", InvalidArgument);
}
