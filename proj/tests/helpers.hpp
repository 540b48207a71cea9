#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "elm/rng.hpp"
#include "elm/tensor.hpp"

namespace testutil {

inline elm::Tensor random_tensor(const std::vector<int>& shape, elm::Rng& rng, double lo = -1.0,
                                 double hi = 1.0, bool requires_grad = false) {
  elm::Tensor t = elm::Tensor::zeros(shape, requires_grad);
  for (double& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const elm::Tensor& a, const elm::Tensor& b) {
  if (a.numel() != b.numel()) return 1e300;
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.ptr()[i] - b.ptr()[i]));
  return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return 1e300;
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Fresh directory under the system temp root; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("elm_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline bool files_identical(const std::string& a, const std::string& b) {
  return read_text_file(a) == read_text_file(b);
}

}  // namespace testutil
