#include "hetseg/runtime.hpp"

#include <algorithm>
#include <numeric>

namespace hetseg {

void configure_determinism(bool on) {
  if (on) {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/true);
  } else {
    at::globalContext().setDeterministicAlgorithms(false, false);
  }
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> salts) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  for (auto s : salts) h = mix(h ^ mix(s));
  // libtorch seeds are used as signed in places; keep them positive.
  return h >> 1;
}

std::mutex& init_mutex() {
  static std::mutex m;
  return m;
}

BatchSampler::BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch) {
  std::vector<std::size_t> out;
  if (order_.empty()) return out;
  out.reserve(batch);
  while (out.size() < batch) {
    if (cursor_ == order_.size()) reshuffle();
    out.push_back(order_[cursor_++]);
  }
  return out;
}

}  // namespace hetseg
