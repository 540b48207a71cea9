// Whole-model behavior: construction determinism, the residual identity of a
// fresh network, U-net shape bookkeeping, checkpoints, and config text.
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "elm/network.hpp"
#include "elm/rng.hpp"
#include "elm/tensor.hpp"
#include "helpers.hpp"

using elm::ElmformerConfig;
using elm::ElmformerWeights;
using elm::Tensor;
using testutil::TempDir;
using testutil::random_tensor;

namespace {

ElmformerConfig tiny_config(uint64_t seed = 1) {
  ElmformerConfig c;
  c.base_channels = 8;
  c.depth = 1;
  c.window = 4;
  c.bottleneck_window = 2;
  c.head_dim = 4;
  c.seed = seed;
  return c;
}

std::vector<double> flatten(ElmformerWeights& w) {
  std::vector<double> out;
  w.visit([&](Tensor& t) { out.insert(out.end(), t.vec().begin(), t.vec().end()); });
  return out;
}

}  // namespace

TEST_CASE("config validation names the failing quantity") {
  ElmformerConfig c = tiny_config();
  c.base_channels = 7;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("channels"), std::invalid_argument);

  c = tiny_config();
  c.head_dim = 3;  // does not divide stage channels
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  c = tiny_config();
  c.window = 3;  // sub-tiles need even windows
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  c = tiny_config();
  c.heads_per_stage = {1, 2, 4};  // depth+1 == 2 entries expected
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  c = tiny_config();
  CHECK_NOTHROW(c.validate());
  CHECK_NOTHROW(c.validate_input(16, 32));
  // 20/2 = 10 is not divisible by the stage-0 window of 4.
  CHECK_THROWS_WITH_AS(c.validate_input(20, 16), doctest::Contains("stage"),
                       std::invalid_argument);
  CHECK_THROWS_AS(c.validate_input(15, 16), std::invalid_argument);  // odd mosaic
}

TEST_CASE("default config resolves one head per 16 channels") {
  ElmformerConfig c;  // defaults: C=32, depth=4, head_dim=16
  CHECK(c.stage_channels(0) == 32);
  CHECK(c.stage_channels(4) == 512);
  CHECK(c.heads_at(0) == 2);
  CHECK(c.heads_at(4) == 32);
  c.heads_per_stage = {1, 2, 4, 8, 16};
  CHECK(c.heads_at(3) == 8);
}

TEST_CASE("building is deterministic in the seed") {
  ElmformerWeights a = elm::build(tiny_config(3));
  ElmformerWeights b = elm::build(tiny_config(3));
  ElmformerWeights c = elm::build(tiny_config(4));
  CHECK(flatten(a) == flatten(b));
  CHECK(flatten(a) != flatten(c));
  CHECK(a.parameter_count() == static_cast<int64_t>(flatten(a).size()));
  CHECK(a.parameter_count() > 0);
}

TEST_CASE("fresh network is the identity map") {
  ElmformerWeights w = elm::build(tiny_config(7));
  elm::Rng rng(71);
  Tensor x = random_tensor({1, 16, 32}, rng, 0.0, 1.0);
  elm::NoGradGuard ng;
  Tensor y = elm::forward(x, w);
  REQUIRE(y.shape == x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.ptr()[i] == x.ptr()[i]);
}

TEST_CASE("forward changes the input once the output conv is nonzero") {
  ElmformerWeights w = elm::build(tiny_config(8));
  elm::Rng rng(72);
  for (double& v : w.final_conv.k.vec()) v = rng.uniform(-0.1, 0.1);
  Tensor x = random_tensor({1, 16, 16}, rng, 0.2, 0.8);
  elm::NoGradGuard ng;
  Tensor y = elm::forward(x, w);
  double diff = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) diff = std::max(diff, std::abs(y.ptr()[i] - x.ptr()[i]));
  CHECK(diff > 0.0);

  CHECK_THROWS(elm::forward(Tensor::zeros({1, 20, 16}), w));  // misaligned extents
  CHECK_THROWS(elm::forward(Tensor::zeros({2, 16, 16}), w));  // not a mosaic
}

TEST_CASE("raw-image forward clamps to the unit range") {
  ElmformerWeights w = elm::build(tiny_config(9));
  // A large output bias pushes the residual far outside [0,1].
  for (double& v : w.final_conv.b.vec()) v = 10.0;
  elm::RawImage raw = elm::RawImage::zeros(16, 16);
  for (double& v : raw.data) v = 0.5;
  elm::RawImage up = elm::forward(raw, w);
  for (double v : up.data) CHECK(v == 1.0);

  for (double& v : w.final_conv.b.vec()) v = -10.0;
  elm::RawImage down = elm::forward(raw, w);
  for (double v : down.data) CHECK(v == 0.0);
}

TEST_CASE("checkpoint snapshot and load restore every parameter") {
  ElmformerWeights w = elm::build(tiny_config(10));
  const std::vector<double> before = flatten(w);
  elm::Checkpoint ck = elm::snapshot(w);
  CHECK(ck.params == before);
  CHECK_FALSE(ck.has_optimizer);

  // Scramble, then restore.
  w.visit([](Tensor& t) {
    for (double& v : t.vec()) v += 1.0;
  });
  CHECK(flatten(w) != before);
  elm::load_into(w, ck);
  CHECK(flatten(w) == before);

  // A checkpoint from a different layout is rejected.
  ElmformerConfig other = tiny_config(10);
  other.base_channels = 16;
  ElmformerWeights w2 = elm::build(other);
  CHECK_THROWS(elm::load_into(w2, ck));
}

TEST_CASE("checkpoint files round-trip bit-exactly, optimizer state included") {
  TempDir dir("ckpt");
  ElmformerWeights w = elm::build(tiny_config(11));
  elm::Checkpoint ck = elm::snapshot(w);
  ck.has_optimizer = true;
  ck.step = 77;
  ck.m.assign(ck.params.size(), 0.25);
  ck.v.assign(ck.params.size(), 0.125);
  ck.m[3] = -1.5e-9;

  const std::string path = dir.file("model.elmc");
  elm::save_checkpoint(path, ck);
  elm::Checkpoint back = elm::load_checkpoint(path);
  CHECK(back.params == ck.params);
  CHECK(back.has_optimizer);
  CHECK(back.step == 77);
  CHECK(back.m == ck.m);
  CHECK(back.v == ck.v);
  CHECK(back.config.base_channels == 8);
  CHECK(back.config.seed == 11);

  // Corrupt the magic.
  {
    std::string bytes = testutil::read_text_file(path);
    bytes[0] = 'X';
    std::ofstream out(dir.file("bad.elmc"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS(elm::load_checkpoint(dir.file("bad.elmc")));

  // Trailing garbage is rejected.
  {
    std::string bytes = testutil::read_text_file(path);
    bytes += "zz";
    std::ofstream out(dir.file("long.elmc"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS(elm::load_checkpoint(dir.file("long.elmc")));
}

TEST_CASE("config text round-trips and rejects bad keys") {
  ElmformerConfig c = tiny_config(13);
  c.heads_per_stage = {2, 4};
  const std::string text = elm::config_to_text(c);

  TempDir dir("cfg");
  {
    std::ofstream out(dir.file("model.cfg"));
    out << "# model under test\n" << text << "\n   \n";
  }
  const auto kv = elm::read_config_file(dir.file("model.cfg"));
  ElmformerConfig back = elm::model_config_from(kv);
  CHECK(back.base_channels == 8);
  CHECK(back.depth == 1);
  CHECK(back.window == 4);
  CHECK(back.bottleneck_window == 2);
  CHECK(back.heads_per_stage == std::vector<int>({2, 4}));
  CHECK(back.seed == 13);

  {
    std::ofstream out(dir.file("dup.cfg"));
    out << "depth = 1\ndepth = 2\n";
  }
  CHECK_THROWS(elm::read_config_file(dir.file("dup.cfg")));

  {
    std::ofstream out(dir.file("noeq.cfg"));
    out << "depth\n";
  }
  CHECK_THROWS(elm::read_config_file(dir.file("noeq.cfg")));

  std::map<std::string, std::string> bad = {{"depth", "three"}};
  CHECK_THROWS(elm::model_config_from(bad));

  // Spaces around '=' are part of the documented format.
  {
    std::ofstream out(dir.file("spaced.cfg"));
    out << "base_channels = 8\ndepth=1\n  window =4\n";
  }
  const auto spaced = elm::read_config_file(dir.file("spaced.cfg"));
  CHECK(spaced.at("base_channels") == "8");
  CHECK(spaced.at("depth") == "1");
  CHECK(spaced.at("window") == "4");

  const auto& keys = elm::model_config_keys();
  CHECK(std::find(keys.begin(), keys.end(), "base_channels") != keys.end());
  CHECK(std::find(keys.begin(), keys.end(), "seed") != keys.end());
}

TEST_CASE("skip merge halves the doubled channel count") {
  elm::Rng rng(73);
  ElmformerWeights w = elm::build(tiny_config(14));
  Tensor dec = random_tensor({8, 4, 4}, rng);
  Tensor enc = random_tensor({8, 4, 4}, rng);
  Tensor merged = elm::skip_merge_step(dec, enc, w.skip_merge[0]);
  CHECK(merged.shape == std::vector<int>({8, 4, 4}));
}

TEST_CASE("deeper configs still produce exact identity and right shapes") {
  ElmformerConfig c;
  c.base_channels = 8;
  c.depth = 2;
  c.window = 4;
  c.bottleneck_window = 2;
  c.head_dim = 4;
  c.seed = 15;
  ElmformerWeights w = elm::build(c);
  elm::Rng rng(74);
  Tensor x = random_tensor({1, 32, 48}, rng, 0.0, 1.0);  // 16-aligned, non-square
  elm::NoGradGuard ng;
  Tensor y = elm::forward(x, w);
  REQUIRE(y.shape == x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.ptr()[i] == x.ptr()[i]);
}
