#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elm/bayer.hpp"

namespace elm {

struct RawPair {
  RawImage clean;
  RawImage degraded;
};

// Pairs listed by a plain-text manifest ("<clean> <degraded>" per line,
// paths relative to the dataset directory; # lines carry the generation
// seeds and noise parameters). The last eighth of the list (at least one
// pair) is held out for validation.
struct Dataset {
  std::vector<RawPair> train_pairs;
  std::vector<RawPair> val_pairs;
};

Dataset load_dataset(const std::string& dir);

struct NoiseSpec {
  std::string kind = "awgn";  // awgn | uniform | shot_read | none
  double sigma = 25.0 / 255.0;
  double amplitude = 0.1;
  double shot = 0.01;
  double read = 0.01;
};

RawImage apply_noise(const RawImage& clean, const NoiseSpec& noise, uint64_t seed);

// Smooth band-limited synthetic scene, mosaicked to RGGB.
RawImage synth_clean_raw(int h, int w, uint64_t seed);

// Writes count clean/degraded pairs plus manifest.txt into dir.
void generate_dataset(const std::string& dir, int count, int size, const NoiseSpec& noise,
                      uint64_t seed);

}  // namespace elm
