#include "elm/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "elm/evaluation.hpp"
#include "elm/rng.hpp"

namespace elm {

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "l1") return LossKind::kL1;
  if (name == "l2") return LossKind::kL2;
  if (name == "charbonnier") return LossKind::kCharbonnier;
  throw std::invalid_argument("loss: unknown kind '" + name +
                              "' (expected l1, l2, or charbonnier)");
}

Tensor loss_op(const Tensor& pred, const Tensor& target, const LossSpec& spec) {
  if (pred.shape != target.shape)
    throw std::invalid_argument("loss: shape mismatch " + shape_str(pred.shape) + " vs " +
                                shape_str(target.shape));
  if (spec.kind == LossKind::kCharbonnier && !(spec.eps > 0.0))
    throw std::invalid_argument("loss: charbonnier eps must be positive");
  const int64_t n = pred.numel();
  const double* pp = pred.ptr();
  const double* pt = target.ptr();
  double acc = 0.0;
  switch (spec.kind) {
    case LossKind::kL1:
      for (int64_t i = 0; i < n; ++i) acc += std::abs(pp[i] - pt[i]);
      break;
    case LossKind::kL2:
      for (int64_t i = 0; i < n; ++i) {
        const double d = pp[i] - pt[i];
        acc += d * d;
      }
      break;
    case LossKind::kCharbonnier:
      for (int64_t i = 0; i < n; ++i) {
        const double d = pp[i] - pt[i];
        acc += std::sqrt(d * d + spec.eps * spec.eps);
      }
      break;
  }
  Tensor out = Tensor::zeros({1});
  out.ptr()[0] = acc / static_cast<double>(n);

  LossSpec sp = spec;
  attach(out, {pred, target}, [n, sp](Tensor& o) {
    Tensor& p = o.node->parents[0];
    const Tensor& t = o.node->parents[1];
    if (!p.requires_grad) return;
    const double g = o.grad->data()[0] / static_cast<double>(n);
    const double* pp = p.ptr();
    const double* pt = t.ptr();
    double* pg = p.grad_ptr();
    switch (sp.kind) {
      case LossKind::kL1:
        for (int64_t i = 0; i < n; ++i) {
          const double d = pp[i] - pt[i];
          pg[i] += g * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        }
        break;
      case LossKind::kL2:
        for (int64_t i = 0; i < n; ++i) pg[i] += g * 2.0 * (pp[i] - pt[i]);
        break;
      case LossKind::kCharbonnier:
        for (int64_t i = 0; i < n; ++i) {
          const double d = pp[i] - pt[i];
          pg[i] += g * d / std::sqrt(d * d + sp.eps * sp.eps);
        }
        break;
    }
  });
  return out;
}

double cosine_lr(int64_t step, int64_t total, double lr0, double lr_min) {
  if (total <= 0) throw std::invalid_argument("cosine_lr: total steps must be positive");
  if (step < 0 || step > total)
    throw std::invalid_argument("cosine_lr: step " + std::to_string(step) + " outside [0," +
                                std::to_string(total) + "]");
  if (!(lr0 >= lr_min)) throw std::invalid_argument("cosine_lr: lr0 must be at least lr_min");
  const double phase = 3.14159265358979323846 * static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(phase));
}

void adamw_update(std::vector<double>& params, const std::vector<double>& grads,
                  std::vector<double>& m, std::vector<double>& v, uint64_t t,
                  const AdamWParams& p) {
  if (params.size() != grads.size() || params.size() != m.size() || params.size() != v.size())
    throw std::invalid_argument("adamw: parameter/gradient/moment sizes differ");
  if (t == 0) throw std::invalid_argument("adamw: step index is 1-based");
  const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g;
    v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    const double old = params[i];
    params[i] = old - p.lr * (mhat / (std::sqrt(vhat) + p.eps) + p.weight_decay * old);
  }
}

void adamw_step(ElmformerWeights& w, TrainState& state, const AdamWParams& p) {
  const size_t count = static_cast<size_t>(w.parameter_count());
  if (state.m.empty()) {
    state.m.assign(count, 0.0);
    state.v.assign(count, 0.0);
  }
  if (state.m.size() != count || state.v.size() != count)
    throw std::invalid_argument("adamw: optimizer state does not match network layout");

  const uint64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(t));
  size_t off = 0;
  w.visit([&](Tensor& ten) {
    const size_t n = ten.vec().size();
    double* pv = ten.ptr();
    const double* gv = ten.has_grad() ? ten.grad->data() : nullptr;
    for (size_t i = 0; i < n; ++i) {
      const double g = gv ? gv[i] : 0.0;
      double& mi = state.m[off + i];
      double& vi = state.v[off + i];
      mi = p.beta1 * mi + (1.0 - p.beta1) * g;
      vi = p.beta2 * vi + (1.0 - p.beta2) * g * g;
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      const double old = pv[i];
      pv[i] = old - p.lr * (mhat / (std::sqrt(vhat) + p.eps) + p.weight_decay * old);
    }
    off += n;
  });
  state.step = t;
}

namespace {

struct ValScores {
  double psnr_rr = 0.0;
  double psnr_rs = 0.0;
};

ValScores validate_model(ElmformerWeights& w, const std::vector<RawPair>& pairs,
                         const IspParams& isp) {
  NoGradGuard ng;
  ValScores s;
  for (const RawPair& pair : pairs) {
    const RawImage restored = forward(pair.degraded, w);
    s.psnr_rr += psnr(restored, pair.clean);
    s.psnr_rs += psnr(simple_isp(restored, isp), simple_isp(pair.clean, isp));
  }
  s.psnr_rr /= static_cast<double>(pairs.size());
  s.psnr_rs /= static_cast<double>(pairs.size());
  return s;
}

RawPair sample_patch(const Dataset& data, const TrainOptions& opt, Rng& rng) {
  const int idx = rng.uniform_int(0, static_cast<int>(data.train_pairs.size()) - 1);
  const RawPair& src = data.train_pairs[static_cast<size_t>(idx)];
  const uint64_t crop_seed = rng.next_u64();
  auto [clean_crop, noisy_crop] =
      random_crop_pair(src.clean, src.degraded, opt.patch, crop_seed);
  const int transform = rng.uniform_int(0, kNumAugmentTransforms - 1);
  RawPair out;
  out.clean = unpack(augment(pack(clean_crop), transform));
  out.degraded = unpack(augment(pack(noisy_crop), transform));
  return out;
}

}  // namespace

TrainResult train(const ElmformerConfig& config, const Dataset& data, const TrainOptions& opt,
                  const std::string& metrics_csv_path) {
  if (data.train_pairs.empty() || data.val_pairs.empty())
    throw std::invalid_argument("train: dataset has no training or validation pairs");
  if (opt.steps < 0 || opt.batch < 1) throw std::invalid_argument("train: bad steps/batch");
  config.validate_input(opt.patch, opt.patch);
  for (const RawPair& p : data.val_pairs) config.validate_input(p.clean.height, p.clean.width);

  ElmformerWeights w = build(config);
  TrainState state;
  state.m.assign(static_cast<size_t>(w.parameter_count()), 0.0);
  state.v.assign(static_cast<size_t>(w.parameter_count()), 0.0);
  Rng rng(mix_seed(opt.seed, 0x747261696eull));

  std::ofstream metrics;
  if (!metrics_csv_path.empty()) {
    metrics.open(metrics_csv_path, std::ios::trunc);
    if (!metrics) throw std::runtime_error("train: cannot open metrics file " + metrics_csv_path);
    metrics << "step,lr,loss,val_psnr_rr,val_psnr_rs\n";
  }

  TrainResult result;
  {
    NoGradGuard ng;
    double base = 0.0;
    for (const RawPair& p : data.val_pairs) base += psnr(p.degraded, p.clean);
    result.noisy_val_psnr_rr = base / static_cast<double>(data.val_pairs.size());
  }

  ValScores last_val = validate_model(w, data.val_pairs, opt.isp);
  AdamWParams ap;
  ap.weight_decay = opt.weight_decay;

  for (int64_t step = 0; step < opt.steps; ++step) {
    w.zero_grads();
    Tensor total;
    for (int b = 0; b < opt.batch; ++b) {
      const RawPair patch = sample_patch(data, opt, rng);
      Tensor input = Tensor::from({1, opt.patch, opt.patch}, patch.degraded.data);
      Tensor target = Tensor::from({1, opt.patch, opt.patch}, patch.clean.data);
      Tensor item = loss_op(forward(input, w), target, opt.loss);
      total = (b == 0) ? item : add(total, item);
    }
    total = scale(total, 1.0 / static_cast<double>(opt.batch));
    backward(total);

    ap.lr = cosine_lr(step, opt.steps, opt.lr0, opt.lr_min);
    adamw_step(w, state, ap);

    const int64_t done = step + 1;
    const bool validate_now = (opt.val_interval > 0 && done % opt.val_interval == 0) || done == opt.steps;
    if (validate_now) last_val = validate_model(w, data.val_pairs, opt.isp);
    if (metrics.is_open()) {
      char row[160];
      if (validate_now) {
        std::snprintf(row, sizeof(row), "%lld,%.10g,%.10g,%.6f,%.6f\n",
                      static_cast<long long>(done), ap.lr, total.ptr()[0], last_val.psnr_rr,
                      last_val.psnr_rs);
      } else {
        std::snprintf(row, sizeof(row), "%lld,%.10g,%.10g,,\n", static_cast<long long>(done),
                      ap.lr, total.ptr()[0]);
      }
      metrics << row;
    }
  }

  result.final_val_psnr_rr = last_val.psnr_rr;
  result.final_val_psnr_rs = last_val.psnr_rs;
  result.checkpoint = snapshot(w);
  result.checkpoint.has_optimizer = true;
  result.checkpoint.step = state.step;
  result.checkpoint.m = state.m;
  result.checkpoint.v = state.v;
  return result;
}

}  // namespace elm
