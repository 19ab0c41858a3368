#include "fixtures.hpp"

#include <atomic>
#include <chrono>
#include <unistd.h>

namespace fixtures {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  path_ = std::filesystem::temp_directory_path() /
          ("hetseg-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(stamp) + "-" +
           std::to_string(counter++));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

hetseg::RunConfig tiny_config() {
  auto cfg = hetseg::desk_preset();
  cfg.task.source_spec.height = cfg.task.source_spec.width = 16;
  cfg.task.target_spec.height = cfg.task.target_spec.width = 16;
  cfg.task.lesion_radius_min = 2.0;
  cfg.task.lesion_radius_max = 3.5;
  cfg.task.lesion_count_min = 1;
  cfg.task.num_patients_source = 5;
  cfg.task.num_patients_target = 3;
  cfg.task.num_patients_heldout = 4;
  cfg.task.slices_per_patient = 2;
  cfg.segmenter.base_width = 4;
  cfg.translation_net = {4, 2, 1, 4, 8, 4, 3};
  cfg.source_training.iterations = 4;
  cfg.source_training.eval_every = 2;
  cfg.source_training.batch_size = 4;
  cfg.translation_training.iterations = 3;
  cfg.translation_training.batch_size = 2;
  cfg.target_training.iterations = 4;
  cfg.target_training.batch_size = 2;
  cfg.experiment.folds = 2;
  cfg.experiment.seeds = {3};
  cfg.experiment.fractions = {0.0, 0.5, 1.0};
  return cfg;
}

torch::Tensor one_hot_mask(const torch::Tensor& lesion) {
  auto l = lesion.to(torch::kFloat32);
  return torch::stack({1.0 - l, l});
}

torch::Tensor random_soft(std::int64_t k, std::int64_t h, std::int64_t w, torch::Generator& gen, double scale) {
  return torch::softmax(torch::randn({k, h, w}, gen, torch::kFloat64) * scale, 0);
}

}  // namespace fixtures
