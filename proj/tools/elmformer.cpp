// Command-line front end: synthetic raw data generation, training,
// restoration, evaluation, and cost profiling. Every command is
// deterministic given its flags; all randomness derives from --seed.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "elm/bayer.hpp"
#include "elm/data.hpp"
#include "elm/evaluation.hpp"
#include "elm/flops.hpp"
#include "elm/network.hpp"
#include "elm/training.hpp"

namespace {

// "k=v,k=v" lists used by --params and --isp-params.
std::map<std::string, double> parse_kv_doubles(const std::string& text) {
  std::map<std::string, double> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const size_t eq = item.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("expected key=value in parameter list, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    const std::string val = item.substr(eq + 1);
    size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(val, &used);
    } catch (const std::exception&) {
      used = std::string::npos;
    }
    if (used != val.size())
      throw std::runtime_error("parameter '" + key + "' has a non-numeric value '" + val + "'");
    if (out.count(key)) throw std::runtime_error("duplicate parameter '" + key + "'");
    out[key] = v;
  }
  return out;
}

void reject_unknown(const std::map<std::string, double>& kv, const std::set<std::string>& known,
                    const std::string& what) {
  for (const auto& [k, v] : kv) {
    if (!known.count(k)) throw std::runtime_error("unknown " + what + " parameter '" + k + "'");
  }
}

struct TrainFileConfig {
  elm::ElmformerConfig model;
  elm::TrainOptions options;
};

// One config file serves train and flops alike, so both accept the union of
// model and training keys.
std::set<std::string> config_file_keys() {
  std::set<std::string> known(elm::model_config_keys().begin(), elm::model_config_keys().end());
  for (const char* k : {"batch", "patch", "lr0", "lr_min", "weight_decay", "loss",
                        "charbonnier_eps", "val_interval", "isp_r_gain", "isp_b_gain", "isp_gamma"})
    known.insert(k);
  return known;
}

TrainFileConfig load_train_config(const std::string& path, uint64_t seed, int64_t steps) {
  const auto kv = elm::read_config_file(path);
  const std::set<std::string> known = config_file_keys();
  for (const auto& [k, v] : kv) {
    if (!known.count(k)) throw std::runtime_error("config: unknown key '" + k + "' in " + path);
  }

  TrainFileConfig c;
  c.model = elm::model_config_from(kv);
  c.model.seed = seed;
  c.options.seed = seed;
  c.options.steps = steps;

  auto get_int = [&kv](const char* key, int64_t fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    size_t used = 0;
    const int64_t v = std::stoll(it->second, &used);
    if (used != it->second.size())
      throw std::runtime_error(std::string("config: '") + key + "' is not an integer");
    return v;
  };
  auto get_double = [&kv](const char* key, double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size())
      throw std::runtime_error(std::string("config: '") + key + "' is not a number");
    return v;
  };

  c.options.batch = static_cast<int>(get_int("batch", c.options.batch));
  c.options.patch = static_cast<int>(get_int("patch", c.options.patch));
  c.options.lr0 = get_double("lr0", c.options.lr0);
  c.options.lr_min = get_double("lr_min", c.options.lr_min);
  c.options.weight_decay = get_double("weight_decay", c.options.weight_decay);
  c.options.val_interval = get_int("val_interval", c.options.val_interval);
  auto it = kv.find("loss");
  if (it != kv.end()) c.options.loss.kind = elm::loss_kind_from_string(it->second);
  c.options.loss.eps = get_double("charbonnier_eps", c.options.loss.eps);
  c.options.isp.r_gain = get_double("isp_r_gain", c.options.isp.r_gain);
  c.options.isp.b_gain = get_double("isp_b_gain", c.options.isp.b_gain);
  c.options.isp.gamma = get_double("isp_gamma", c.options.isp.gamma);
  return c;
}

int cmd_gen_data(const std::string& out_dir, int count, int size, const std::string& noise_kind,
                 const std::string& params, uint64_t seed) {
  elm::NoiseSpec spec;
  spec.kind = noise_kind == "shotread" ? "shot_read" : noise_kind;
  const auto kv = parse_kv_doubles(params);
  if (spec.kind == "awgn") {
    reject_unknown(kv, {"sigma"}, "awgn");
    if (kv.count("sigma")) spec.sigma = kv.at("sigma");
  } else if (spec.kind == "uniform") {
    reject_unknown(kv, {"amplitude"}, "uniform");
    if (kv.count("amplitude")) spec.amplitude = kv.at("amplitude");
  } else if (spec.kind == "shot_read") {
    reject_unknown(kv, {"shot", "read"}, "shot-read");
    if (kv.count("shot")) spec.shot = kv.at("shot");
    if (kv.count("read")) spec.read = kv.at("read");
  } else if (spec.kind == "none") {
    reject_unknown(kv, {}, "noise");
  } else {
    throw std::runtime_error("unknown noise kind '" + noise_kind +
                             "' (expected awgn, uniform, shotread, or none)");
  }
  elm::generate_dataset(out_dir, count, size, spec, seed);
  std::cout << "wrote " << count << " pairs to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path, int64_t steps,
              const std::string& out_path, uint64_t seed) {
  TrainFileConfig cfg = load_train_config(config_path, seed, steps);
  const elm::Dataset data = elm::load_dataset(data_dir);
  const std::string metrics_path = out_path + ".metrics.csv";
  const elm::TrainResult result = elm::train(cfg.model, data, cfg.options, metrics_path);
  elm::save_checkpoint(out_path, result.checkpoint);
  std::printf("steps=%lld val_psnr_rr=%.4f val_psnr_rs=%.4f noisy_psnr_rr=%.4f\n",
              static_cast<long long>(steps), result.final_val_psnr_rr, result.final_val_psnr_rs,
              result.noisy_val_psnr_rr);
  std::cout << "checkpoint: " << out_path << "\nmetrics: " << metrics_path << "\n";
  return 0;
}

int cmd_restore(const std::string& ckpt_path, const std::string& in_path,
                const std::string& out_path, const std::string& render_path) {
  const elm::Checkpoint ckpt = elm::load_checkpoint(ckpt_path);
  elm::ElmformerWeights weights = elm::build(ckpt.config);
  elm::load_into(weights, ckpt);
  const elm::RawImage degraded = elm::read_raw(in_path);
  elm::NoGradGuard ng;
  const elm::RawImage restored = elm::forward(degraded, weights);
  elm::write_raw(out_path, restored);
  if (!render_path.empty()) {
    elm::write_ppm(render_path, elm::simple_isp(restored, elm::IspParams{}));
  }
  std::cout << "restored " << in_path << " -> " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path, const std::string& isp_params) {
  const auto kv = parse_kv_doubles(isp_params);
  reject_unknown(kv, {"r_gain", "b_gain", "gamma"}, "isp");
  elm::IspParams isp;
  if (kv.count("r_gain")) isp.r_gain = kv.at("r_gain");
  if (kv.count("b_gain")) isp.b_gain = kv.at("b_gain");
  if (kv.count("gamma")) isp.gamma = kv.at("gamma");
  const elm::RawImage pred = elm::read_raw(pred_path);
  const elm::RawImage gt = elm::read_raw(gt_path);
  const elm::MetricReport report = elm::eval_pair(pred, gt, isp);
  std::cout << elm::metric_report_markdown(report);
  return 0;
}

int cmd_flops(const std::string& config_path, const std::string& input_spec,
              const std::string& sweep) {
  const auto kv = elm::read_config_file(config_path);
  const std::set<std::string> known = config_file_keys();
  for (const auto& [k, v] : kv) {
    if (!known.count(k)) throw std::runtime_error("config: unknown key '" + k + "' in " + config_path);
  }
  const elm::ElmformerConfig config = elm::model_config_from(kv);

  const size_t x = input_spec.find('x');
  if (x == std::string::npos)
    throw std::runtime_error("--input expects HxW, got '" + input_spec + "'");
  const int h = std::stoi(input_spec.substr(0, x));
  const int w = std::stoi(input_spec.substr(x + 1));

  const elm::FlopsReport report = elm::flops_model(config, h, w);
  std::printf("%-16s %20s\n", "module", "multiply-units");
  for (const auto& e : report.entries) std::printf("%-16s %20llu\n", e.name.c_str(),
                                                   static_cast<unsigned long long>(e.units));
  std::printf("%-16s %20llu\n", "total", static_cast<unsigned long long>(report.total_units()));
  std::printf("GFLOPs %.4f (each unit counted as one multiply plus one add)\n", report.gflops());

  if (!sweep.empty()) {
    std::string list = sweep;
    if (list.rfind("M=", 0) == 0) list = list.substr(2);
    std::stringstream ss(list);
    std::string item;
    std::printf("%-4s %14s %14s %10s\n", "M", "lewin-units", "lmwin-units", "ratio");
    while (std::getline(ss, item, ',')) {
      const int m = std::stoi(item);
      // Any window-aligned grid gives the same ratio; use a small one.
      const int grid = 4 * m;
      const int dk = 32, heads = 1;
      const elm::AttentionFlops le =
          elm::flops_attention(elm::AttentionVariant::kLewin, m, dk, heads, grid, grid);
      const elm::AttentionFlops lm =
          elm::flops_attention(elm::AttentionVariant::kLmwin, m, dk, heads, grid, grid);
      std::printf("%-4d %14llu %14llu %10.6f\n", m, static_cast<unsigned long long>(le.total),
                  static_cast<unsigned long long>(lm.total),
                  static_cast<double>(le.total) / static_cast<double>(lm.total));
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"raw image restoration toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate synthetic clean/degraded raw pairs");
  std::string gen_out, gen_noise = "awgn", gen_params;
  int gen_count = 8, gen_size = 128;
  uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of pairs");
  gen->add_option("--size", gen_size, "image extent (even)");
  gen->add_option("--noise", gen_noise, "awgn | uniform | shotread | none");
  gen->add_option("--params", gen_params, "noise parameters, e.g. sigma=0.1");
  gen->add_option("--seed", gen_seed, "master seed");

  auto* train = app.add_subcommand("train", "train a restorer on a dataset directory");
  std::string train_data, train_config, train_out;
  int64_t train_steps = 2000;
  uint64_t train_seed = 0;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--config", train_config, "key=value config file")->required();
  train->add_option("--steps", train_steps, "optimizer steps");
  train->add_option("--out", train_out, "checkpoint path (metrics: <out>.metrics.csv)")->required();
  train->add_option("--seed", train_seed, "master seed");

  auto* restore = app.add_subcommand("restore", "run a checkpoint on a degraded raw file");
  std::string res_ckpt, res_in, res_out, res_render;
  restore->add_option("--ckpt", res_ckpt, "checkpoint file")->required();
  restore->add_option("--in", res_in, "degraded raw container")->required();
  restore->add_option("--out", res_out, "restored raw container")->required();
  restore->add_option("--render", res_render, "optional sRGB preview (PPM)");

  auto* eval = app.add_subcommand("eval", "compare a restored raw against a reference");
  std::string eval_pred, eval_gt, eval_isp;
  eval->add_option("--pred", eval_pred, "restored raw container")->required();
  eval->add_option("--gt", eval_gt, "reference raw container")->required();
  eval->add_option("--isp-params", eval_isp, "render parameters, e.g. r_gain=1.2,gamma=2.2");

  auto* flops = app.add_subcommand("flops", "print the analytic cost table for a config");
  std::string flops_config, flops_input = "128x128", flops_sweep;
  flops->add_option("--config", flops_config, "key=value config file")->required();
  flops->add_option("--input", flops_input, "mosaic extents HxW");
  flops->add_option("--sweep", flops_sweep, "window sizes for the attention ratio, e.g. M=2,4,8");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_count, gen_size, gen_noise, gen_params, gen_seed);
    if (train->parsed()) return cmd_train(train_data, train_config, train_steps, train_out, train_seed);
    if (restore->parsed()) return cmd_restore(res_ckpt, res_in, res_out, res_render);
    if (eval->parsed()) return cmd_eval(eval_pred, eval_gt, eval_isp);
    if (flops->parsed()) return cmd_flops(flops_config, flops_input, flops_sweep);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no command given\n";
  return 1;
}
