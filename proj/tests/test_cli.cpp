// Drives the installed binary end to end through std::system and checks its
// files and output against the library run in-process.
#include <doctest.h>
#include <sys/wait.h>

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "elm/bayer.hpp"
#include "elm/data.hpp"
#include "elm/evaluation.hpp"
#include "elm/flops.hpp"
#include "elm/network.hpp"
#include "helpers.hpp"

using testutil::TempDir;

namespace {

struct RunResult {
  int status = -1;
  std::string out, err;
};

TempDir& capture_dir() {
  static TempDir d("cli_io");
  return d;
}

RunResult run_cli(const std::string& args) {
  static int n = 0;
  const std::string out_path = capture_dir().file("out_" + std::to_string(n));
  const std::string err_path = capture_dir().file("err_" + std::to_string(n));
  ++n;
  const std::string cmd = std::string("\"") + ELM_CLI_PATH + "\" " + args + " > \"" + out_path +
                          "\" 2> \"" + err_path + "\"";
  const int rc = std::system(cmd.c_str());
  RunResult r;
  r.status = rc == -1 ? -1 : WEXITSTATUS(rc);
  r.out = testutil::read_text_file(out_path);
  r.err = testutil::read_text_file(err_path);
  return r;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) lines.push_back(line);
  return lines;
}

// First line whose first token equals key; empty if absent.
std::string table_line(const std::string& text, const std::string& key) {
  for (const std::string& line : lines_of(text)) {
    std::istringstream ls(line);
    std::string first;
    if (ls >> first && first == key) return line;
  }
  return "";
}

const std::string kTinyModelText =
    "base_channels=8\ndepth=1\nwindow=4\nbottleneck_window=2\nhead_dim=4\n";
const std::string kTinyTrainText = kTinyModelText +
                                   "batch=2\npatch=16\nlr0=0.001\nlr_min=0.00001\n"
                                   "loss=l2\nval_interval=2\n";

elm::ElmformerConfig tiny_cli_config(uint64_t seed) {
  elm::ElmformerConfig c;
  c.base_channels = 8;
  c.depth = 1;
  c.window = 4;
  c.bottleneck_window = 2;
  c.head_dim = 4;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("gen-data writes deterministic loadable datasets") {
  TempDir dir("cli_gen");
  const std::string a = dir.file("a");
  RunResult r = run_cli("gen-data --out " + a + " --count 4 --size 32 --noise awgn "
                        "--params sigma=0.1 --seed 9");
  CHECK(r.status == 0);
  CHECK(r.out.find("wrote 4 pairs") != std::string::npos);

  const elm::Dataset ds = elm::load_dataset(a);
  CHECK(ds.train_pairs.size() == 3);
  CHECK(ds.val_pairs.size() == 1);
  const elm::RawImage img = elm::read_raw(a + "/clean_0000.elmr");
  CHECK(img.height == 32);
  CHECK(img.width == 32);

  const std::string b = dir.file("b");
  CHECK(run_cli("gen-data --out " + b + " --count 4 --size 32 --noise awgn "
                "--params sigma=0.1 --seed 9")
            .status == 0);
  CHECK(testutil::files_identical(a + "/clean_0002.elmr", b + "/clean_0002.elmr"));
  CHECK(testutil::files_identical(a + "/noisy_0002.elmr", b + "/noisy_0002.elmr"));

  const std::string c = dir.file("c");
  CHECK(run_cli("gen-data --out " + c + " --count 4 --size 32 --noise awgn "
                "--params sigma=0.1 --seed 10")
            .status == 0);
  CHECK(!testutil::files_identical(a + "/noisy_0000.elmr", c + "/noisy_0000.elmr"));

  // Zero-width noise and the explicit none kind both reproduce the source.
  const std::string quiet = dir.file("quiet");
  CHECK(run_cli("gen-data --out " + quiet + " --count 1 --size 16 --noise awgn "
                "--params sigma=0 --seed 3")
            .status == 0);
  CHECK(testutil::files_identical(quiet + "/clean_0000.elmr", quiet + "/noisy_0000.elmr"));
  const std::string none = dir.file("none");
  CHECK(run_cli("gen-data --out " + none + " --count 1 --size 16 --noise none --seed 3").status ==
        0);
  CHECK(testutil::files_identical(none + "/clean_0000.elmr", none + "/noisy_0000.elmr"));

  r = run_cli("gen-data --out " + dir.file("x") + " --count 1 --size 16 --noise speckle");
  CHECK(r.status == 1);
  CHECK(r.err.find("error: ") == 0);
  CHECK(r.err.find("unknown noise kind") != std::string::npos);

  r = run_cli("gen-data --out " + dir.file("y") + " --count 1 --size 16 --noise awgn "
              "--params amplitude=0.5");
  CHECK(r.status == 1);
  CHECK(r.err.find("unknown awgn parameter") != std::string::npos);

  CHECK(run_cli("gen-data --out " + dir.file("z") + " --count 0 --size 16").status == 1);
  CHECK(run_cli("gen-data --out " + dir.file("w") + " --count 1 --size 33").status == 1);
}

TEST_CASE("train restore eval round-trip matches the library") {
  TempDir dir("cli_train");
  const std::string data = dir.file("data");
  REQUIRE(run_cli("gen-data --out " + data + " --count 3 --size 32 --noise awgn "
                  "--params sigma=0.05 --seed 2")
              .status == 0);
  const std::string cfg = dir.file("tiny.cfg");
  write_file(cfg, kTinyTrainText);

  const std::string ckpt = dir.file("model.elmc");
  RunResult r = run_cli("train --data " + data + " --config " + cfg + " --steps 3 --out " + ckpt +
                        " --seed 4");
  CHECK(r.status == 0);
  CHECK(r.out.find("steps=3 val_psnr_rr=") != std::string::npos);
  CHECK(r.out.find("checkpoint: " + ckpt) != std::string::npos);
  CHECK(r.out.find("metrics: " + ckpt + ".metrics.csv") != std::string::npos);

  const std::vector<std::string> csv = lines_of(testutil::read_text_file(ckpt + ".metrics.csv"));
  REQUIRE(csv.size() == 4);
  CHECK(csv[0] == "step,lr,loss,val_psnr_rr,val_psnr_rs");
  CHECK(csv[1].rfind("1,", 0) == 0);

  const elm::Checkpoint loaded = elm::load_checkpoint(ckpt);
  CHECK(loaded.step == 3);
  CHECK(loaded.has_optimizer);
  CHECK(loaded.config.base_channels == 8);
  CHECK(loaded.config.seed == 4);

  // Same seed, same bytes; training is fully deterministic.
  const std::string ckpt2 = dir.file("model2.elmc");
  REQUIRE(run_cli("train --data " + data + " --config " + cfg + " --steps 3 --out " + ckpt2 +
                  " --seed 4")
              .status == 0);
  CHECK(testutil::files_identical(ckpt, ckpt2));
  CHECK(testutil::files_identical(ckpt + ".metrics.csv", ckpt2 + ".metrics.csv"));

  // Zero steps stores exactly the seeded initialization.
  const std::string ckpt0 = dir.file("model0.elmc");
  REQUIRE(run_cli("train --data " + data + " --config " + cfg + " --steps 0 --out " + ckpt0 +
                  " --seed 4")
              .status == 0);
  elm::ElmformerWeights fresh = elm::build(tiny_cli_config(4));
  std::vector<double> flat;
  fresh.visit([&](elm::Tensor& t) { flat.insert(flat.end(), t.vec().begin(), t.vec().end()); });
  CHECK(elm::load_checkpoint(ckpt0).params == flat);

  const std::string noisy = data + "/noisy_0000.elmr";
  const std::string restored = dir.file("restored.elmr");
  const std::string preview = dir.file("preview.ppm");
  r = run_cli("restore --ckpt " + ckpt + " --in " + noisy + " --out " + restored + " --render " +
              preview);
  CHECK(r.status == 0);

  elm::ElmformerWeights w = elm::build(loaded.config);
  elm::load_into(w, loaded);
  elm::NoGradGuard ng;
  const elm::RawImage local = elm::forward(elm::read_raw(noisy), w);
  const std::string local_raw = dir.file("local.elmr");
  elm::write_raw(local_raw, local);
  CHECK(testutil::files_identical(restored, local_raw));

  const std::string ppm = testutil::read_text_file(preview);
  CHECK(ppm.rfind("P6\n32 32\n255\n", 0) == 0);
  const std::string local_ppm = dir.file("local.ppm");
  elm::write_ppm(local_ppm, elm::simple_isp(local, elm::IspParams{}));
  CHECK(testutil::files_identical(preview, local_ppm));

  const std::string clean = data + "/clean_0000.elmr";
  r = run_cli("eval --pred " + restored + " --gt " + clean);
  CHECK(r.status == 0);
  const elm::MetricReport rep =
      elm::eval_pair(elm::read_raw(restored), elm::read_raw(clean), elm::IspParams{});
  CHECK(r.out == elm::metric_report_markdown(rep));

  r = run_cli("eval --pred " + clean + " --gt " + clean +
              " --isp-params r_gain=1.5,b_gain=0.8,gamma=2");
  CHECK(r.status == 0);
  CHECK(r.out.find("| r/r   | 100.0000 | 1.000000 |") != std::string::npos);

  const std::string small = dir.file("small.elmr");
  elm::write_raw(small, elm::RawImage::zeros(16, 16));
  r = run_cli("eval --pred " + small + " --gt " + clean);
  CHECK(r.status == 1);
  CHECK(r.err.find("error: ") == 0);

  CHECK(run_cli("restore --ckpt " + dir.file("absent.elmc") + " --in " + noisy + " --out " +
                dir.file("x.elmr"))
            .status == 1);

  const std::string bad_cfg = dir.file("bad.cfg");
  write_file(bad_cfg, kTinyTrainText + "bananas=1\n");
  r = run_cli("train --data " + data + " --config " + bad_cfg + " --steps 1 --out " +
              dir.file("nope.elmc"));
  CHECK(r.status == 1);
  CHECK(r.err.find("unknown key 'bananas'") != std::string::npos);
}

TEST_CASE("flops prints the cost table and the window sweep") {
  TempDir dir("cli_flops");
  const std::string cfg = dir.file("tiny.cfg");
  // The full training config must be accepted here too.
  write_file(cfg, kTinyTrainText);

  RunResult r = run_cli("flops --config " + cfg + " --input 32x32 --sweep M=2,4,8");
  CHECK(r.status == 0);

  const elm::FlopsReport rep = elm::flops_model(tiny_cli_config(0), 32, 32);
  const std::string total_line = table_line(r.out, "total");
  REQUIRE(!total_line.empty());
  {
    std::istringstream ls(total_line);
    std::string name;
    unsigned long long units = 0;
    ls >> name >> units;
    CHECK(units == rep.total_units());
  }
  const std::string bfp_line = table_line(r.out, "bfp");
  REQUIRE(!bfp_line.empty());
  {
    std::istringstream ls(bfp_line);
    std::string name;
    unsigned long long units = 0;
    ls >> name >> units;
    CHECK(units == rep.entries[0].units);
  }
  const std::string gline = table_line(r.out, "GFLOPs");
  REQUIRE(!gline.empty());
  {
    std::istringstream ls(gline);
    std::string name;
    double printed = 0.0;
    ls >> name >> printed;
    CHECK(std::abs(printed - rep.gflops()) < 5.1e-5);
  }

  for (int m : {2, 4, 8}) {
    const std::string row = table_line(r.out, std::to_string(m));
    REQUIRE(!row.empty());
    std::istringstream ls(row);
    unsigned long long mv = 0, le = 0, lm = 0;
    double ratio = 0.0;
    ls >> mv >> le >> lm >> ratio;
    const double m4 = static_cast<double>(m) * m * m * m;
    CHECK(ratio == doctest::Approx(4.0 / (1.0 + 4.0 / m4)).epsilon(1e-5));
    const int grid = 4 * m;
    CHECK(le == elm::flops_attention(elm::AttentionVariant::kLewin, m, 32, 1, grid, grid).total);
    CHECK(lm == elm::flops_attention(elm::AttentionVariant::kLmwin, m, 32, 1, grid, grid).total);
  }

  // 60 packs to 30, which breaks the stage-0 window grid of 4.
  CHECK(run_cli("flops --config " + cfg + " --input 60x60").status == 1);
  CHECK(run_cli("flops --config " + cfg + " --input abc").status == 1);

  const std::string bad = dir.file("bad.cfg");
  write_file(bad, kTinyModelText + "bananas=1\n");
  r = run_cli("flops --config " + bad + " --input 32x32");
  CHECK(r.status == 1);
  CHECK(r.err.find("unknown key 'bananas'") != std::string::npos);
}

TEST_CASE("usage errors exit nonzero and help exits zero") {
  RunResult r = run_cli("train");
  CHECK(r.status == 1);
  CHECK(r.err.find("error: ") == 0);

  CHECK(run_cli("").status == 1);
  CHECK(run_cli("frobnicate").status == 1);

  r = run_cli("--help");
  CHECK(r.status == 0);
  for (const char* name : {"gen-data", "train", "restore", "eval", "flops"})
    CHECK(r.out.find(name) != std::string::npos);
}
