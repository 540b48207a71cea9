#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elm/data.hpp"
#include "elm/network.hpp"
#include "elm/tensor.hpp"

namespace elm {

enum class LossKind { kL1, kL2, kCharbonnier };

struct LossSpec {
  LossKind kind = LossKind::kL1;
  double eps = 1e-3;  // Charbonnier knee
};

LossKind loss_kind_from_string(const std::string& name);

// Mean over elements; pred and target must share a shape. Only pred receives
// gradients.
Tensor loss_op(const Tensor& pred, const Tensor& target, const LossSpec& spec);

// lr(step) = lr_min + 0.5*(lr0 - lr_min)*(1 + cos(pi * step / total)).
// Valid for 0 <= step <= total; lr(0) = lr0, lr(total) = lr_min.
double cosine_lr(int64_t step, int64_t total, double lr0, double lr_min);

struct AdamWParams {
  double lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.02;  // decoupled, applied to the pre-update value
};

// One update on flat arrays; t is the 1-based step used for bias correction.
void adamw_update(std::vector<double>& params, const std::vector<double>& grads,
                  std::vector<double>& m, std::vector<double>& v, uint64_t t,
                  const AdamWParams& p);

struct TrainState {
  uint64_t step = 0;  // completed updates
  std::vector<double> m, v;
};

// Applies one AdamW step to all network parameters from their accumulated
// gradients (missing gradients count as zero).
void adamw_step(ElmformerWeights& w, TrainState& state, const AdamWParams& p);

struct TrainOptions {
  int64_t steps = 2000;
  int batch = 4;
  int patch = 64;
  double lr0 = 4e-4;
  double lr_min = 1e-6;
  double weight_decay = 0.02;
  LossSpec loss;
  int64_t val_interval = 100;
  uint64_t seed = 0;
  IspParams isp;
};

struct TrainResult {
  Checkpoint checkpoint;        // includes optimizer state
  double noisy_val_psnr_rr = 0; // degraded-input baseline on the validation set
  double final_val_psnr_rr = 0;
  double final_val_psnr_rs = 0;
};

// Random even-aligned crops with dihedral augmentation, batch-mean loss,
// AdamW with the cosine schedule. Writes one CSV row per step
// (step,lr,loss,val_psnr_rr,val_psnr_rs) to metrics_csv_path unless empty.
TrainResult train(const ElmformerConfig& config, const Dataset& data, const TrainOptions& opt,
                  const std::string& metrics_csv_path);

}  // namespace elm
