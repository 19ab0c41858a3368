#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <initializer_list>
#include <mutex>
#include <random>
#include <vector>

namespace hetseg {

/// Single-threaded intra-op execution and deterministic kernels when `on`.
void configure_determinism(bool on);

/// SplitMix64 mixing of a base seed with salts; used to give every stream its own seed.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> salts);

/// Guards libtorch's global generator, which module constructors draw their initial weights from.
std::mutex& init_mutex();

/// Builds a module with its weights drawn from `seed`, independent of other threads.
template <class Make>
auto seeded_init(std::uint64_t seed, Make&& make) {
  std::lock_guard<std::mutex> lock(init_mutex());
  torch::manual_seed(seed);
  return make();
}

/// Epoch-wise shuffled index stream over [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t batch);

 private:
  void reshuffle();

  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

}  // namespace hetseg
