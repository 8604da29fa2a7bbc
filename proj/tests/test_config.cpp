#include "doctest.h"

#include "star/config.hpp"
#include "star/errors.hpp"

using namespace star;

TEST_CASE("preset applies before other model keys") {
  const RunConfig c = parse_config("model.num_layers = 3\nmodel.preset = star64\n");
  CHECK(c.preset == "star64");
  CHECK(c.model.d_model == 64);
  CHECK(c.model.num_layers == 3);
}

TEST_CASE("all sections parse") {
  const RunConfig c = parse_config(R"(# comment
model.preset = tiny
model.kernel = favor      # trailing comment
model.favor_features = 32
model.final_norm = true
train.max_epochs = 7
train.batch_clips = 4
train.lr_scale = 0.5
train.segment_per = clip
data.train = a/manifest.txt
data.synth_seed = 7
profile.lengths = 16, 32,64
)");
  CHECK(c.model.kernel == KernelKind::kFavor);
  CHECK(c.model.favor_features == 32);
  CHECK(c.model.final_norm);
  CHECK(c.train.max_epochs == 7);
  CHECK(c.train.lr_scale == 0.5);
  CHECK(c.train.segment_per == SegmentPer::kClip);
  CHECK(c.data.train_manifest == "a/manifest.txt");
  CHECK(c.data.synth.seed == 7);
  CHECK(c.profile.lengths == std::vector<std::size_t>{16, 32, 64});
}

TEST_CASE("errors name the key") {
  CHECK_THROWS_WITH_AS(parse_config("model.bogus = 1"), doctest::Contains("model.bogus"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("train.max_epochs = -3"), doctest::Contains("train.max_epochs"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("model.dropout = 1.5"), doctest::Contains("model.dropout"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("model.kernel = rbf"), doctest::Contains("model.kernel"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("model.preset = huge"), doctest::Contains("model.preset"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("model.num_heads = 3"), doctest::Contains("model.num_heads"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("model.final_norm = maybe"), doctest::Contains("model.final_norm"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("just words"), doctest::Contains("line 1"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("train.beta2 = 1"), doctest::Contains("train.beta2"), ConfigError);
}

TEST_CASE("format round-trips") {
  RunConfig c = parse_config("model.preset = star128\ntrain.grad_clip = 0.3\nprofile.lengths = 8,9\n");
  apply_overrides(c, {"model.dropout=0.25", "train.seed = 42"});
  CHECK(c.model.dropout == 0.25);
  CHECK(c.train.seed == 42);
  const std::string text = format_config(c);
  const RunConfig back = parse_config(text);
  CHECK(format_config(back) == text);
  CHECK(back.model.d_model == 128);
  CHECK(back.train.grad_clip == 0.3);
}
