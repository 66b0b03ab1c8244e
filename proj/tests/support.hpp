#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "contood/dataset.hpp"

namespace contood::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("contood_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

inline std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
          static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

inline void append(std::vector<std::uint8_t>& out, const std::vector<std::uint8_t>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

// Well-separated clusters on coordinate axes.
inline std::pair<LabeledDataset, LabeledDataset> axis_clusters(int n_classes, int dim, double separation,
                                                               double std_dev, int per_class,
                                                               std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_classes = n_classes;
  spec.dim = dim;
  spec.cluster_means = axis_cluster_means(n_classes, dim, separation);
  spec.cluster_std = std_dev;
  spec.samples_per_class = per_class;
  spec.seed = seed;
  return make_synthetic(spec);
}

}  // namespace contood::testing
