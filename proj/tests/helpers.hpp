#pragma once

#include <filesystem>
#include <string>

#include "focal/random.hpp"
#include "focal/tensor.hpp"

namespace testing_support {

template <typename T = float>
focal::BasicFeatureMap<T> random_map(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed,
                                     double scale = 1.0) {
  focal::Rng rng(seed);
  focal::BasicFeatureMap<T> f(h, w, c);
  for (auto& v : f.values()) v = static_cast<T>(rng.normal(0.0, scale));
  return f;
}

template <typename T = float>
focal::Matrix<T> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  focal::Rng rng(seed);
  focal::Matrix<T> m(rows, cols);
  for (auto& v : m.values()) v = static_cast<T>(rng.normal(0.0, scale));
  return m;
}

inline focal::ForgeryMask random_mask(std::size_t h, std::size_t w, std::uint64_t seed, double p = 0.3) {
  focal::Rng rng(seed);
  focal::ForgeryMask m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) m.set(y, x, rng.uniform() < p);
  return m;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(std::filesystem::temp_directory_path() / ("focal_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
