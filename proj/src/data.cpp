#include "elm/data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "elm/rng.hpp"

namespace elm {

RawImage synth_clean_raw(int h, int w, uint64_t seed) {
  if (h <= 0 || w <= 0 || h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("synth: extents must be positive and even");
  Rng rng(seed);

  struct Wave {
    double amp, fy, fx, phase;
  };
  auto draw_waves = [&rng](int count, double amp_lo, double amp_hi, double f_lo, double f_hi) {
    std::vector<Wave> waves(static_cast<size_t>(count));
    for (Wave& wv : waves) {
      wv.amp = rng.uniform(amp_lo, amp_hi);
      wv.fy = rng.uniform(f_lo, f_hi) * (rng.uniform01() < 0.5 ? -1.0 : 1.0);
      wv.fx = rng.uniform(f_lo, f_hi) * (rng.uniform01() < 0.5 ? -1.0 : 1.0);
      wv.phase = rng.uniform(0.0, 6.283185307179586);
    }
    return waves;
  };
  const std::vector<Wave> lum = draw_waves(6, 0.04, 0.16, 0.5, 8.0);
  const std::vector<Wave> chroma_r = draw_waves(2, 0.03, 0.10, 0.3, 2.0);
  const std::vector<Wave> chroma_b = draw_waves(2, 0.03, 0.10, 0.3, 2.0);

  auto field = [h, w](const std::vector<Wave>& waves, int r, int c) {
    const double y = static_cast<double>(r) / h;
    const double x = static_cast<double>(c) / w;
    double v = 0.0;
    for (const Wave& wv : waves)
      v += wv.amp * std::cos(6.283185307179586 * (wv.fy * y + wv.fx * x) + wv.phase);
    return v;
  };

  RawImage img = RawImage::zeros(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double l = 0.5 + field(lum, r, c);
      double v;
      if (r % 2 == 0 && c % 2 == 0) {
        v = l + field(chroma_r, r, c);  // R site
      } else if (r % 2 == 1 && c % 2 == 1) {
        v = l + field(chroma_b, r, c);  // B site
      } else {
        v = l;  // G sites
      }
      img.at(r, c) = std::min(1.0, std::max(0.0, v));
    }
  }
  return img;
}

RawImage apply_noise(const RawImage& clean, const NoiseSpec& noise, uint64_t seed) {
  if (noise.kind == "awgn") return add_awgn(clean, noise.sigma, seed);
  if (noise.kind == "uniform") return add_uniform(clean, noise.amplitude, seed);
  if (noise.kind == "shot_read") return add_shot_read(clean, noise.shot, noise.read, seed);
  if (noise.kind == "none") return clean;
  throw std::invalid_argument("noise: unknown kind '" + noise.kind +
                              "' (expected awgn, uniform, shot_read, or none)");
}

void generate_dataset(const std::string& dir, int count, int size, const NoiseSpec& noise,
                      uint64_t seed) {
  if (count <= 0) throw std::invalid_argument("dataset: count must be positive");
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  manifest << "# seed=" << seed << " count=" << count << " size=" << size << "\n";
  manifest << "# noise=" << noise.kind;
  if (noise.kind == "awgn") manifest << " sigma=" << noise.sigma;
  if (noise.kind == "uniform") manifest << " amplitude=" << noise.amplitude;
  if (noise.kind == "shot_read") manifest << " shot=" << noise.shot << " read=" << noise.read;
  manifest << "\n";
  for (int i = 0; i < count; ++i) {
    char clean_name[32], noisy_name[32];
    std::snprintf(clean_name, sizeof(clean_name), "clean_%04d.elmr", i);
    std::snprintf(noisy_name, sizeof(noisy_name), "noisy_%04d.elmr", i);
    const uint64_t clean_seed = mix_seed(seed, 2 * static_cast<uint64_t>(i));
    const uint64_t noise_seed = mix_seed(seed, 2 * static_cast<uint64_t>(i) + 1);
    const RawImage clean = synth_clean_raw(size, size, clean_seed);
    const RawImage noisy = apply_noise(clean, noise, noise_seed);
    write_raw(dir + "/" + clean_name, clean);
    write_raw(dir + "/" + noisy_name, noisy);
    manifest << "# pair " << i << ": clean_seed=" << clean_seed << " noise_seed=" << noise_seed
             << "\n";
    manifest << clean_name << " " << noisy_name << "\n";
  }
  std::ofstream out(dir + "/manifest.txt", std::ios::trunc);
  if (!out) throw std::runtime_error("dataset: cannot write manifest in " + dir);
  out << manifest.str();
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream in(dir + "/manifest.txt");
  if (!in) throw std::runtime_error("dataset: cannot open " + dir + "/manifest.txt");
  std::vector<RawPair> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::string clean_name, noisy_name, extra;
    if (!(ls >> clean_name >> noisy_name) || (ls >> extra))
      throw std::runtime_error("dataset: malformed manifest line " + std::to_string(lineno) +
                               " in " + dir);
    RawPair p;
    p.clean = read_raw(dir + "/" + clean_name);
    p.degraded = read_raw(dir + "/" + noisy_name);
    if (p.clean.height != p.degraded.height || p.clean.width != p.degraded.width)
      throw std::runtime_error("dataset: pair extents differ on manifest line " +
                               std::to_string(lineno));
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw std::runtime_error("dataset: manifest in " + dir + " lists no pairs");

  Dataset ds;
  const size_t val_count = std::max<size_t>(1, pairs.size() / 8);
  if (pairs.size() == 1) {
    // A single pair serves both roles rather than leaving training empty.
    ds.train_pairs = pairs;
    ds.val_pairs = pairs;
    return ds;
  }
  const size_t train_count = pairs.size() - val_count;
  ds.train_pairs.assign(pairs.begin(), pairs.begin() + static_cast<long>(train_count));
  ds.val_pairs.assign(pairs.begin() + static_cast<long>(train_count), pairs.end());
  return ds;
}

}  // namespace elm
