#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dycon/fields.hpp"

namespace testutil {

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("dycon_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Random probability field, every entry at least `margin`.
inline dycon::ProbabilityField random_field(std::mt19937_64& rng, dycon::Shape shape,
                                            double margin = 0.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = shape.voxels_per_item();
  std::vector<double> p(shape.size());
  std::vector<double> col(shape.channels);
  for (std::size_t b = 0; b < shape.batch; ++b)
    for (std::size_t v = 0; v < n; ++v) {
      double sum = 0.0;
      for (auto& x : col) sum += (x = u(rng) + 1e-3);
      const double room = 1.0 - margin * static_cast<double>(shape.channels);
      for (std::size_t c = 0; c < shape.channels; ++c)
        p[(b * shape.channels + c) * n + v] = margin + room * col[c] / sum;
    }
  return dycon::ProbabilityField(shape, std::move(p));
}

// Two-class field from foreground probabilities.
inline dycon::ProbabilityField binary_field(const std::vector<double>& fg, std::size_t batch,
                                            dycon::Dims3 spatial) {
  const std::size_t n = spatial.count();
  std::vector<double> p(batch * 2 * n);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t v = 0; v < n; ++v) {
      p[(b * 2 + 1) * n + v] = fg[b * n + v];
      p[(b * 2) * n + v] = 1.0 - fg[b * n + v];
    }
  return dycon::ProbabilityField({batch, 2, spatial}, std::move(p));
}

}  // namespace testutil
