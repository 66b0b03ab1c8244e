#pragma once

#include <cstdint>
#include <random>

namespace contood {

using Rng = std::mt19937_64;

// Independent sub-streams keyed by role. Keeping every consumer on its own
// stream means that, e.g., skipping LOOCV never shifts the main model's init.
enum class SeedStream : std::uint64_t {
  synthetic = 1,
  class_split = 2,
  network_init = 3,
  train_shuffle = 4,
  head_column = 5,
  loocv = 6,
  accommodation = 7,
  subsample = 8,
  search_check = 9,
  grad_check = 10,
};

// splitmix64 finalizer over (base, stream, index).
inline std::uint64_t derive_seed(std::uint64_t base, SeedStream stream,
                                 std::uint64_t index = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ static_cast<std::uint64_t>(stream)) ^ index);
}

}  // namespace contood
