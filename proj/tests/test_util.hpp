#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "msp/cloud.hpp"
#include "msp/rng.hpp"

namespace msp::test {

inline PointCloud random_cloud(size_t n, double extent, uint64_t seed, bool colored = false) {
  Rng rng(seed);
  PointCloud cloud;
  cloud.positions.reserve(n);
  for (size_t i = 0; i < n; ++i)
    cloud.positions.push_back(
        {rng.uniform(0, extent), rng.uniform(0, extent), rng.uniform(0, extent)});
  if (colored)
    for (size_t i = 0; i < n; ++i)
      cloud.colors.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
  return cloud;
}

// Fresh directory under the system temp root, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    dir_ = std::filesystem::temp_directory_path() /
           ("msp-test-" + tag + "-" + std::to_string(counter++));
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  const std::filesystem::path& path() const { return dir_; }
  std::filesystem::path operator/(const std::string& name) const { return dir_ / name; }

private:
  std::filesystem::path dir_;
};

}  // namespace msp::test
