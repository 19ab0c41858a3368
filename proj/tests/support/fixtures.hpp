#pragma once

#include <filesystem>
#include <string>

#include "hetseg/config.hpp"
#include "hetseg/domain.hpp"

namespace fixtures {

/// Fresh empty directory below the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Small task and short stages, for end-to-end tests that must finish in seconds.
hetseg::RunConfig tiny_config();

/// One-hot [2,H,W] mask from a 0/1 lesion map.
torch::Tensor one_hot_mask(const torch::Tensor& lesion);

/// Random probability simplex [K,H,W] (softmax of scaled normal logits).
torch::Tensor random_soft(std::int64_t k, std::int64_t h, std::int64_t w, torch::Generator& gen, double scale = 3.0);

}  // namespace fixtures
